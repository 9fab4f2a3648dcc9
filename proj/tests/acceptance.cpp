// Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <optional>
#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ranktower/cascade.hpp"
#include "ranktower/checks.hpp"
#include "ranktower/config.hpp"
#include "ranktower/diff/ops.hpp"
#include "ranktower/losses.hpp"
#include "ranktower/serving.hpp"
#include "ranktower/trainer.hpp"

using namespace ranktower;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
std::map<int, std::string> results;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
    char head[64];
    std::snprintf(head, sizeof head, "%s  [%d] ", pass ? "PASS" : "FAIL", id);
    results[id] = head + title + ": " + detail;
    std::printf("%s\n", results[id].c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Seed-fixed noise-free world with teacher probabilities, as produced by gen-data.
struct World {
    RunConfig config;
    cascade::SyntheticWorld world;
    trainer::TrainingData data;
    features::FeatureEncoder encoder;
};

World make_world(const RunConfig& cfg) {
    World w{cfg, cascade::generate_synthetic_world(cfg.world, derive_seed(cfg.seed, SeedStream::world)), {}, {}};
    auto teacher = cascade::Teacher::train(w.world.schema, w.world.train, cfg.teacher, derive_seed(cfg.seed, SeedStream::teacher));
    cascade::attach_teacher(teacher, w.world.train);
    cascade::attach_teacher(teacher, w.world.valid);
    cascade::attach_teacher(teacher, w.world.test);
    w.data = {w.world.train, w.world.valid, w.world.users, w.world.items};
    std::vector<features::FeatureMap> users, items;
    for (const auto& u : w.world.users) users.push_back(u.features);
    for (const auto& i : w.world.items) items.push_back(i.features);
    w.encoder = features::FeatureEncoder::fit(w.world.schema, users, items);
    return w;
}

// Compact model used for the end-to-end runs. The sorting weight was picked on validation
// NDCG from {0, 0.1, 1}; at 1 the summed-over-rows sorting term swamps the other two.
RunConfig experiment_config() {
    RunConfig c;
    c.seed = 2024;
    c.set("loss.sorting=0.1");
    c.set("model.subspace=16");
    c.set("model.user_hidden=32");
    c.set("model.item_hidden=32");
    c.set("train.max_steps=3000");
    c.set("train.eval_interval=500");
    return c;
}

metrics::EvalReport test_report(const World& w, const RankTower& model) {
    const auto& t = w.config.train;
    return trainer::evaluate(model, w.world.test, w.world.users, w.world.items, t.cascade.labels, t.k, t.eval_batch);
}

metrics::EvalReport train_and_test(const World& w, const RunConfig& cfg) {
    trainer::Trainer t(cfg, w.encoder, w.data);
    t.train();
    return test_report(w, t.best_model());
}

void gradient_suite() {
    const auto t0 = Clock::now();
    const auto rows = checks::gradient_suite(20, 1e-4);
    const double elapsed = seconds_since(t0);
    double worst = 0;
    std::string worst_name, failed;
    bool all = true;
    for (const auto& r : rows) {
        if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = r.name;
        if (!r.pass) all = false, failed += " " + r.name;
    }
    report(1, all && elapsed < 60.0, "gradient suite",
           fmt("%zu rows x 20 seeds, worst rel err %.3g (%s), %.1f s%s", rows.size(), worst, worst_name.c_str(),
               elapsed, failed.empty() ? "" : (", failing:" + failed).c_str()));
}

void softsort_checks() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    double row_err = 0, shift_err = 0;
    std::size_t perm_ok = 0;
    double weakest = 1.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
        std::vector<double> s(n);
        for (auto& v : s) v = u(rng);
        const double tau = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        const auto p = losses::softsort(s, tau, 1.0);
        for (std::size_t r = 0; r < n; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < n; ++c) sum += p.at(r, c);
            row_err = std::max(row_err, std::abs(sum - 1.0));
        }
        const double shift = u(rng);
        std::vector<double> shifted(s);
        for (auto& v : shifted) v += shift;
        const auto q = losses::softsort(shifted, tau, 1.0);
        for (std::size_t i = 0; i < p.values.size(); ++i) shift_err = std::max(shift_err, std::abs(p.values[i] - q.values[i]));

        const auto hard = losses::softsort(s, 1e-3, 1.0);
        const auto order = losses::descending_order(s);
        bool ok = true;
        for (std::size_t r = 0; r < n; ++r) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < n; ++c)
                if (hard.at(r, c) > hard.at(r, arg)) arg = c;
            ok = ok && arg == order[r];
            weakest = std::min(weakest, hard.at(r, arg));
        }
        perm_ok += ok;
    }
    report(2, row_err <= 1e-9 && perm_ok == 100 && shift_err <= 1e-12, "softsort",
           fmt("row-sum err %.2g, %zu/100 argmax permutations at tau 1e-3 (min peak %.6f), shift err %.2g", row_err,
               perm_ok, weakest, shift_err));
}

void loss_pins() {
    const auto rows = checks::loss_pins(1e-9);
    double worst = 0;
    bool all = true;
    for (const auto& r : rows) {
        worst = std::max(worst, std::abs(r.value - r.expected));
        all = all && r.pass;
    }
    report(3, all, "loss oracles", fmt("%zu pinned instances, max abs deviation %.3g", rows.size(), worst));
}

void stop_gradient() {
    std::mt19937_64 rng(31);
    auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    std::size_t configs = 0, nonzero = 0, mismatched = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto in = dim(2, 12);
        std::vector<std::size_t> hidden(dim(1, 3));
        for (auto& h : hidden) h = dim(2, 12);
        const towers::TowerConfig cfg{dim(1, 4), dim(1, 6), hidden, dim(1, 3)};
        ParameterSet params;
        auto tower = towers::GatedTower::create(params, "t", in, cfg, rng);
        std::normal_distribution<double> z;
        std::vector<double> xv(3 * in), w(3 * cfg.heads * cfg.subspace);
        for (auto& v : xv) v = z(rng);
        for (auto& v : w) v = z(rng);
        const diff::Tensor x_value({3, in}, xv);
        const diff::Tensor weights({3, cfg.heads, cfg.subspace}, w);
        auto probe = [&](diff::Var y) { return diff::sum(diff::mul(y, y.graph().constant(weights))); };

        // Gate branch alone: a zeroed first main layer cuts the main path off from x.
        {
            ParameterSet gate_only = params;
            for (auto& v : gate_only[tower.main_layers()[0].weight].values) v = 0.0;
            diff::Graph g;
            Binding bind(g, gate_only);
            auto x = g.variable(x_value);
            g.backward(probe(tower.forward(bind, x)));
            for (double v : g.grad(x)) nonzero += v != 0.0;
        }
        // Whole tower against a gate fed by a constant copy: gradients must agree bit for bit.
        {
            diff::Graph g1, g2;
            Binding b1(g1, params), b2(g2, params);
            auto x1 = g1.variable(x_value), x2 = g2.variable(x_value);
            g1.backward(probe(tower.forward(b1, x1)));
            g2.backward(probe(tower.forward_with_gate_input(b2, x2, g2.constant(x_value))));
            const auto a = g1.grad(x1), b = g2.grad(x2);
            mismatched += std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0;
        }
        ++configs;
    }
    report(4, nonzero == 0 && mismatched == 0, "stop-gradient",
           fmt("%zu random tower configs, %zu nonzero gate-path entries, %zu inexact tower gradients", configs, nonzero,
               mismatched));
}

void serving_parity(const World& w, const RankTower& model) {
    using serving::EmbeddingStore;
    const auto users = serving::export_embeddings(model, w.world.users, features::Side::user);
    const auto items = serving::export_embeddings(model, w.world.items, features::Side::item);
    const auto dir = std::filesystem::temp_directory_path() / "ranktower_acceptance";
    std::filesystem::create_directories(dir);
    users.save(dir / "users.emb");
    items.save(dir / "items.emb");
    const auto users_back = EmbeddingStore::load(dir / "users.emb");
    const auto items_back = EmbeddingStore::load(dir / "items.emb");
    std::size_t differing = 0;
    for (const auto* pair : {&users, &items}) {
        const auto& back = pair == &users ? users_back : items_back;
        differing += back.ids() != pair->ids();
        for (auto id : pair->ids()) {
            auto a = pair->find(id), b = back.find(id);
            differing += std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0;
        }
    }
    const serving::OnlineScorer scorer(InteractionModel::from(model.config(), model.params().entries()), users_back,
                                       items_back);

    std::mt19937_64 rng(55);
    std::size_t probes = 0;
    double worst = 0;
    for (int u = 0; u < 50; ++u) {
        const auto& user = w.world.users[rng() % w.world.users.size()];
        std::vector<features::FeatureMap> maps;
        std::vector<std::uint64_t> ids;
        for (int i = 0; i < 200; ++i) {
            const auto& item = w.world.items[rng() % w.world.items.size()];
            maps.push_back(item.features);
            ids.push_back(item.id);
        }
        diff::Graph g(false);
        Binding bind(g, model.params());
        const auto expected = model.forward(bind, user.features, maps).values();
        const auto got = scorer.score(user.id, ids);
        for (std::size_t i = 0; i < ids.size(); ++i) worst = std::max(worst, std::abs(got[i] - expected[i]));
        probes += ids.size();
    }
    report(5, worst <= 1e-9 && probes >= 10000 && differing == 0, "serving parity",
           fmt("%zu probes, max |online - training| %.3g; store round trip %s", probes, worst,
               differing ? "differs" : "bit-exact"));
}

std::optional<RankTower> end_to_end(const World& w, double world_seconds) {
    const auto t0 = Clock::now();
    const auto& cfg = w.config;
    const auto oracle = trainer::evaluate_oracle(w.world.test, w.world.users, w.world.items, cfg.train.cascade.labels,
                                                 cfg.world.latent_dim, cfg.train.k);
    const auto untrained = test_report(w, RankTower::create(w.encoder, cfg.model, derive_seed(cfg.seed, SeedStream::model)));
    trainer::Trainer t(cfg, w.encoder, w.data);
    t.train([](const trainer::HistoryEntry& h) {
        std::printf("      step %5zu  loss %.4f  valid Recall@100 %.4f  NDCG@100 %.4f\n", h.step, h.train_loss, h.recall,
                    h.ndcg);
        std::fflush(stdout);
    });
    auto model = t.best_model();
    const auto trained = test_report(w, model);
    const double elapsed = world_seconds + seconds_since(t0);
    const bool pass = trained.recall >= 0.9 * oracle.recall && trained.recall > untrained.recall && elapsed < 900 &&
                      t.steps() <= 20000;
    report(6, pass, "end-to-end synthetic",
           fmt("test Recall@100 %.4f vs oracle %.4f (ratio %.3f), untrained %.4f; NDCG@100 %.4f; %zu steps, %.0f s "
               "including world generation",
               trained.recall, oracle.recall, trained.recall / oracle.recall, untrained.recall, trained.ndcg, t.steps(),
               elapsed));
    return model;
}

void ablations(const World& w) {
    const auto t0 = Clock::now();
    struct Variant {
        const char* name;
        std::vector<std::string> overrides;
        double recall = 0, ndcg = 0;
    };
    std::vector<Variant> v{
        {"full", {}},
        {"impressions-only", {"cascade.candidates=0", "cascade.randoms=0"}},
        {"sorting-only", {"loss.distillation=0", "loss.sorting=1", "loss.am_rankmax=0"}},
        {"am-rankmax-only", {"loss.distillation=0", "loss.sorting=0"}},
    };
    const std::vector<std::uint64_t> seeds{11, 12, 13};
    for (auto& variant : v) {
        for (auto seed : seeds) {
            auto cfg = w.config;
            cfg.seed = seed;
            cfg.set("train.max_steps=1500");
            for (const auto& o : variant.overrides) cfg.set(o);
            const auto r = train_and_test(w, cfg);
            std::printf("      %-17s seed %llu  Recall@100 %.4f  NDCG@100 %.4f\n", variant.name,
                        static_cast<unsigned long long>(seed), r.recall, r.ndcg);
            std::fflush(stdout);
            variant.recall += r.recall / seeds.size();
            variant.ndcg += r.ndcg / seeds.size();
        }
    }
    const bool sampling = v[0].recall >= v[1].recall;
    const bool vs_sort = v[0].ndcg >= v[2].ndcg;
    const bool vs_am = v[0].ndcg >= v[3].ndcg;
    report(7, sampling && vs_sort && vs_am, "directional ablations",
           fmt("Recall@100 full %.4f %s impressions-only %.4f; NDCG@100 hybrid %.4f %s sorting-only %.4f, %s "
               "AM-Rankmax-only %.4f; 3 seeds, %.0f s",
               v[0].recall, sampling ? ">=" : "<", v[1].recall, v[0].ndcg, vs_sort ? ">=" : "<", v[2].ndcg,
               vs_am ? ">=" : "<", v[3].ndcg, seconds_since(t0)));
}

void determinism() {
    auto run = [] {
        RunConfig cfg;
        cfg.seed = 5;
        for (const char* o : {"world.n_users=40", "world.n_items=400", "world.recall_size=200", "world.prerank_size=60",
                              "model.subspace=8", "model.user_hidden=16", "model.item_hidden=16", "train.max_steps=60",
                              "train.eval_interval=30", "teacher.steps=200"})
            cfg.set(o);
        const auto w = make_world(cfg);
        trainer::Trainer t(cfg, w.encoder, w.data);
        t.train();
        return test_report(w, t.best_model());
    };
    const auto a = run(), b = run();
    report(8, a.checksum() == b.checksum() && a.to_json() == b.to_json(), "determinism",
           fmt("report checksums %016llx and %016llx", static_cast<unsigned long long>(a.checksum()),
               static_cast<unsigned long long>(b.checksum())));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Run only these criteria (1-8)")->delimiter(',')->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);
    auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    if (want(1)) gradient_suite();
    if (want(2)) softsort_checks();
    if (want(3)) loss_pins();
    if (want(4)) stop_gradient();
    if (want(5) || want(6) || want(7)) {
        const auto t0 = Clock::now();
        const auto w = make_world(experiment_config());
        const double world_seconds = seconds_since(t0);
        std::optional<RankTower> trained;
        if (want(6)) trained = end_to_end(w, world_seconds);
        if (want(5)) serving_parity(w, trained ? *trained : RankTower::create(w.encoder, w.config.model, 1));
        if (want(7)) ablations(w);
    }
    if (want(8)) determinism();
    std::printf("\nsummary\n");
    for (const auto& [id, line] : results) std::printf("%s\n", line.c_str());
    std::printf("%d of %zu criteria failed\n", failures, results.size());
    return failures == 0 ? 0 : 1;
}
