#include <cstring>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "ranktower/errors.hpp"
#include "ranktower/optim.hpp"
#include "ranktower/trainer.hpp"
#include "test_util.hpp"

using namespace ranktower;
using namespace ranktower::trainer;

namespace {

bool same_params(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.entries()[i].value.values;
        const auto& y = b.entries()[i].value.values;
        if (a.entries()[i].name != b.entries()[i].name || x.size() != y.size() ||
            std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

double fixed_batch_loss(const Trainer& t, std::span<const cascade::ListGroup> groups) {
    diff::Graph g(false);
    Binding bind(g, t.model().params());
    return t.batch_loss(bind, groups).item();
}

} // namespace

TEST_CASE("loss falls over ten updates on a fixed batch") {
    const auto data = testutil::small_training_data();
    Trainer t(testutil::tiny_run_config(), testutil::small_encoder(), data);
    const auto groups = t.sample_batch();
    REQUIRE(!groups.empty());
    AdamConfig ac;
    ac.learning_rate = 0.01;
    Adam adam(t.model().params(), ac);
    const double before = fixed_batch_loss(t, groups);
    for (int i = 0; i < 10; ++i) {
        diff::Graph g;
        Binding bind(g, t.model().params());
        g.backward(t.batch_loss(bind, groups));
        std::vector<std::vector<double>> grads;
        for (std::size_t p = 0; p < t.model().params().size(); ++p) grads.push_back(bind.grad(ParamId{p}));
        adam.step(t.model().params(), grads);
    }
    CHECK(fixed_batch_loss(t, groups) < before);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    const auto data = testutil::small_training_data();
    auto cfg = testutil::tiny_run_config();
    cfg.train.learning_rate = 0.0;
    Trainer t(cfg, testutil::small_encoder(), data);
    const auto start = t.model().params();
    for (int i = 0; i < 3; ++i) t.step();
    CHECK(same_params(start, t.model().params()));
}

// Embedding tables feed the gates through a stop-gradient, so their finite differences
// include a path the analytic gradient drops by design; they are left out here.
TEST_CASE("composite loss gradient matches finite differences") {
    const auto data = testutil::small_training_data();
    auto cfg = testutil::tiny_run_config();
    cfg.model.user_tower.heads = cfg.model.item_tower.heads = 2;
    cfg.model.user_tower.subspace = cfg.model.item_tower.subspace = 3;
    cfg.model.user_tower.hidden = cfg.model.item_tower.hidden = {4};
    cfg.train.batch_size = 2;
    Trainer t(cfg, testutil::small_encoder(), data);
    const auto groups = t.sample_batch();
    const double err = testutil::params_gradcheck(t.model().params(), {}, [&](Binding& bind, auto) {
        return t.batch_loss(bind, groups);
    }, [](const std::string& name) { return name.rfind("embedding/", 0) != 0; });
    CHECK(err < 1e-3);
}

TEST_CASE("resuming from a checkpoint continues bit for bit") {
    const auto data = testutil::small_training_data();
    auto cfg = testutil::tiny_run_config();
    cfg.train.eval_interval = 3;
    Trainer straight(cfg, testutil::small_encoder(), data);
    for (int i = 0; i < 8; ++i) straight.step();

    Trainer first(cfg, testutil::small_encoder(), data);
    for (int i = 0; i < 4; ++i) first.step();
    const auto path = testutil::temp_path("resume.ckpt");
    first.checkpoint().save(path);
    auto resumed = Trainer::resume(Checkpoint::load(path), data);
    CHECK(resumed.steps() == 4);
    for (int i = 0; i < 4; ++i) resumed.step();

    CHECK(same_params(straight.model().params(), resumed.model().params()));
    CHECK(straight.step() == resumed.step());
}

TEST_CASE("train records history and keeps the best snapshot") {
    const auto data = testutil::small_training_data();
    auto cfg = testutil::tiny_run_config();
    cfg.train.eval_interval = 4;
    cfg.train.max_steps = 18;
    cfg.train.patience = 100;
    Trainer t(cfg, testutil::small_encoder(), data);
    std::size_t callbacks = 0;
    t.train([&](const HistoryEntry&) { ++callbacks; });
    REQUIRE(t.history().size() == 5);  // steps 4, 8, 12, 16 and the final 18
    CHECK(callbacks == 5);
    CHECK(t.history().back().step == 18);
    double best = -1;
    std::size_t best_step = 0;
    for (const auto& h : t.history())
        if (h.ndcg > best) best = h.ndcg, best_step = h.step;
    CHECK(t.best_ndcg() == best);
    CHECK(t.best_step() == best_step);

    const auto ckpt = t.checkpoint();
    const auto restored = model_from_checkpoint(ckpt);
    CHECK(same_params(restored.params(), t.best_model().params()));
    const auto report = evaluate(restored, data.valid, data.users, data.items, cfg.train.cascade.labels, cfg.train.k);
    CHECK(report.ndcg == best);
}

TEST_CASE("early stopping after patience evaluations without improvement") {
    const auto data = testutil::small_training_data();
    auto cfg = testutil::tiny_run_config();
    cfg.train.learning_rate = 0.0;
    cfg.train.eval_interval = 2;
    cfg.train.max_steps = 100;
    cfg.train.patience = 2;
    Trainer t(cfg, testutil::small_encoder(), data);
    t.train();
    CHECK(t.stopped());
    CHECK(t.steps() == 6);
    CHECK(t.history().size() == 3);
    CHECK(t.best_step() == 2);
}

TEST_CASE("checkpoints round trip and reject corruption") {
    const auto data = testutil::small_training_data();
    Trainer t(testutil::tiny_run_config(), testutil::small_encoder(), data);
    t.step();
    const auto path = testutil::temp_path("rt.ckpt");
    const auto c = t.checkpoint();
    c.save(path);
    const auto back = Checkpoint::load(path);
    REQUIRE(back.tensors.size() == c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        CHECK(back.tensors[i].name == c.tensors[i].name);
        CHECK(back.tensors[i].value.values == c.tensors[i].value.values);
    }
    CHECK(back.meta == c.meta);
    CHECK(back.config().to_ini() == t.config().to_ini());
    CHECK_THROWS_AS(back.get("no such key"), NotFoundError);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(Checkpoint::load(path), IoError);
}

TEST_CASE("adam matches a hand-rolled update") {
    ParameterSet ps;
    ps.add("w", diff::Tensor({2}, {1.0, -2.0}));
    AdamConfig ac;
    ac.learning_rate = 0.1;
    Adam adam(ps, ac);
    const std::vector<std::vector<double>> g{{0.5, -4.0}};
    adam.step(ps, g);
    // After one step the bias-corrected ratio is sign(g) up to eps.
    CHECK(ps.entries()[0].value.values[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(ps.entries()[0].value.values[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK_THROWS_AS(adam.step(ps, {}), DimensionError);
}
