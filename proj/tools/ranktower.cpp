#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ranktower/cascade.hpp"
#include "ranktower/checks.hpp"
#include "ranktower/config.hpp"
#include "ranktower/errors.hpp"
#include "ranktower/metrics.hpp"
#include "ranktower/serving.hpp"
#include "ranktower/trainer.hpp"

namespace fs = std::filesystem;
using namespace ranktower;

namespace {

enum Exit : int {
    ok = 0,
    failure = 1,
    usage = 2,
    config_error = 3,
    io_error = 4,
    not_found = 5,
    dimension_error = 6,
    evaluation_error = 7,
    check_failed = 8,
};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k;
    std::vector<std::string> overrides;
    std::string out_dir;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
    for (const auto& o : c.overrides) cfg.set(o);
    if (c.seed) cfg.seed = *c.seed;
    if (c.k) cfg.train.k = *c.k;
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

fs::path require_out_dir(const Common& c) {
    if (c.out_dir.empty()) throw ConfigError("--out-dir is required for this command");
    fs::create_directories(c.out_dir);
    return c.out_dir;
}

trainer::TrainingData load_training_data(const cascade::DatasetFiles& d) {
    return {d.train, d.valid, d.users, d.items};
}

features::FeatureEncoder fit_encoder(const cascade::DatasetFiles& d) {
    std::vector<features::FeatureMap> users, items;
    for (const auto& u : d.users) users.push_back(u.features);
    for (const auto& i : d.items) items.push_back(i.features);
    return features::FeatureEncoder::fit(d.schema, users, items);
}

double teacher_auc(const cascade::Teacher& teacher, const std::vector<features::Record>& records,
                   const std::string& target) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : records) {
        if (r.stage != features::Stage::impression) continue;
        scores.push_back(teacher.predict(r));
        auto it = r.labels.find(target);
        labels.push_back(it != r.labels.end() && it->second ? 1 : 0);
    }
    return metrics::auc(scores, labels);
}

int gen_data(const Common& c) {
    auto cfg = resolve(c);
    const auto out = require_out_dir(c);
    auto world = cascade::generate_synthetic_world(cfg.world, derive_seed(cfg.seed, SeedStream::world));
    auto teacher = cascade::Teacher::train(world.schema, world.train, cfg.teacher, derive_seed(cfg.seed, SeedStream::teacher));
    cascade::attach_teacher(teacher, world.train);
    cascade::attach_teacher(teacher, world.valid);
    cascade::attach_teacher(teacher, world.test);
    cascade::save_world(world, out);
    write_text(out / "config.ini", cfg.to_ini());
    const double auc_train = teacher_auc(teacher, world.train, cfg.teacher.target);
    const double auc_test = teacher_auc(teacher, world.test, cfg.teacher.target);
    nlohmann::ordered_json summary;
    summary["users"] = world.users.size();
    summary["items"] = world.items.size();
    summary["train_rows"] = world.train.size();
    summary["valid_rows"] = world.valid.size();
    summary["test_rows"] = world.test.size();
    summary["teacher_auc_train"] = auc_train;
    summary["teacher_auc_test"] = auc_test;
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return ok;
}

int train(const Common& c, const std::string& data_dir, const std::string& resume_from) {
    const auto out = require_out_dir(c);
    if (data_dir.empty()) throw ConfigError("--data is required");
    const auto files = cascade::DatasetFiles::load(data_dir);
    const auto data = load_training_data(files);
    auto t = resume_from.empty() ? trainer::Trainer(resolve(c), fit_encoder(files), data)
                                 : trainer::Trainer::resume(trainer::Checkpoint::load(resume_from), data);
    write_text(out / "config.ini", t.config().to_ini());
    t.train([](const trainer::HistoryEntry& h) {
        std::printf("step %7zu  loss %.6f  valid Recall@K %.4f  NDCG@K %.4f\n", h.step, h.train_loss, h.recall, h.ndcg);
        std::fflush(stdout);
    });
    t.checkpoint().save(out / "checkpoint.bin");
    nlohmann::ordered_json hist = nlohmann::ordered_json::array();
    for (const auto& h : t.history())
        hist.push_back({{"step", h.step}, {"train_loss", h.train_loss}, {"recall", h.recall}, {"ndcg", h.ndcg}});
    write_text(out / "history.json", hist.dump(2) + "\n");
    std::printf("best validation NDCG@%zu %.6f at step %zu%s\n", t.config().train.k, t.best_ndcg(), t.best_step(),
                t.stopped() ? " (early stop)" : "");
    return ok;
}

const std::vector<features::Record>& split_of(const cascade::DatasetFiles& d, const std::string& split) {
    if (split == "train") return d.train;
    if (split == "valid") return d.valid;
    if (split == "test") return d.test;
    throw ConfigError("--split must be train, valid or test");
}

int eval(const Common& c, const std::string& data_dir, const std::string& checkpoint, const std::string& split,
         bool oracle) {
    if (data_dir.empty()) throw ConfigError("--data is required");
    if (oracle == !checkpoint.empty()) throw ConfigError("pass exactly one of --checkpoint or --oracle");
    const auto files = cascade::DatasetFiles::load(data_dir);
    const auto& records = split_of(files, split);
    RunConfig cfg;
    metrics::EvalReport report;
    if (oracle) {
        cfg = resolve(c);
        std::size_t latent = 0;
        while (!files.users.empty() && files.users.front().features.count(cascade::user_latent_feature(latent))) ++latent;
        if (latent == 0) throw NotFoundError("user corpus has no latent features for the oracle scorer");
        report = trainer::evaluate_oracle(records, files.users, files.items, cfg.train.cascade.labels, latent, cfg.train.k);
    } else {
        const auto ckpt = trainer::Checkpoint::load(checkpoint);
        cfg = ckpt.config();
        if (c.k) cfg.train.k = *c.k;
        if (!(features::FeatureSchema::parse(ckpt.get("schema")) == files.schema))
            throw ConfigError("dataset schema does not match the checkpoint schema");
        report = trainer::evaluate(trainer::model_from_checkpoint(ckpt), records, files.users, files.items,
                                   cfg.train.cascade.labels, cfg.train.k, cfg.train.eval_batch);
    }
    std::cout << report.to_table();
    if (!c.out_dir.empty()) {
        const auto out = require_out_dir(c);
        write_text(out / "report.json", report.to_json() + "\n");
        write_text(out / "config.ini", cfg.to_ini());
    }
    return ok;
}

int export_embeddings(const Common& c, const std::string& data_dir, const std::string& checkpoint) {
    if (data_dir.empty() || checkpoint.empty()) throw ConfigError("--data and --checkpoint are required");
    const auto out = require_out_dir(c);
    const auto files = cascade::DatasetFiles::load(data_dir);
    const auto model = trainer::model_from_checkpoint(trainer::Checkpoint::load(checkpoint));
    serving::export_embeddings(model, files.users, features::Side::user).save(out / "user_embeddings.bin");
    serving::export_embeddings(model, files.items, features::Side::item).save(out / "item_embeddings.bin");
    std::printf("wrote %zu user and %zu item embeddings to %s\n", files.users.size(), files.items.size(),
                out.string().c_str());
    return ok;
}

std::vector<std::uint64_t> parse_ids(const std::string& text) {
    std::vector<std::uint64_t> ids;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part.empty()) continue;
        try {
            std::size_t used = 0;
            ids.push_back(std::stoull(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ConfigError("bad item id '" + part + "'");
        }
    }
    return ids;
}

int score(const std::string& checkpoint, const std::string& user_store, const std::string& item_store,
          std::uint64_t user, const std::string& items, const std::string& items_file, const std::string& output) {
    if (checkpoint.empty() || user_store.empty() || item_store.empty())
        throw ConfigError("--checkpoint, --user-store and --item-store are required");
    const auto ckpt = trainer::Checkpoint::load(checkpoint);
    auto best = ckpt.group("best");
    serving::OnlineScorer scorer(InteractionModel::from(ckpt.config().model, best.empty() ? ckpt.group("param") : best),
                                 serving::EmbeddingStore::load(user_store), serving::EmbeddingStore::load(item_store));
    std::vector<std::uint64_t> ids;
    if (!items.empty()) ids = parse_ids(items);
    if (!items_file.empty()) {
        std::ifstream in(items_file);
        if (!in) throw IoError("cannot read " + items_file);
        std::string line;
        while (std::getline(in, line)) {
            auto more = parse_ids(line);
            ids.insert(ids.end(), more.begin(), more.end());
        }
    }
    if (items.empty() && items_file.empty()) ids = scorer.items().ids();
    const auto logits = scorer.score(user, ids);
    std::ofstream file;
    if (!output.empty()) {
        file.open(output, std::ios::trunc);
        if (!file) throw IoError("cannot write " + output);
    }
    std::ostream& out = output.empty() ? std::cout : file;
    for (std::size_t i = 0; i < ids.size(); ++i) out << serving::score_json_line(user, ids[i], logits[i]) << "\n";
    return ok;
}

int gradcheck(std::size_t seeds) {
    const auto rows = checks::gradient_suite(seeds);
    std::cout << checks::format_grad_table(rows);
    for (const auto& r : rows)
        if (!r.pass) return check_failed;
    return ok;
}

int losscheck() {
    const auto rows = checks::loss_pins();
    std::cout << checks::format_pin_table(rows);
    for (const auto& r : rows)
        if (!r.pass) return check_failed;
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RankTower pre-ranking: synthetic data, training, evaluation and serving"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "INI run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Run seed; every random stream derives from it");
        sub->add_option("--k", common.k, "Cutoff for Recall@K and NDCG@K (default 100)");
        sub->add_option("--set", common.overrides, "Config override section.key=value (repeatable)");
        sub->add_option("--out-dir", common.out_dir, "Output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic cascade world with teacher labels");
    add_common(gen);

    std::string data_dir, checkpoint, resume_from, split = "test";
    bool oracle = false;
    auto* tr = app.add_subcommand("train", "Train RankTower with the configured loss");
    add_common(tr);
    tr->add_option("--data", data_dir, "Dataset directory from gen-data")->required();
    tr->add_option("--resume", resume_from, "Continue from a checkpoint")->check(CLI::ExistingFile);

    auto* ev = app.add_subcommand("eval", "Recall@K and NDCG@K over the full item corpus");
    add_common(ev);
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->check(CLI::ExistingFile);
    ev->add_option("--split", split, "train, valid or test");
    ev->add_flag("--oracle", oracle, "Score with the generator's true utility");

    auto* ex = app.add_subcommand("export-embeddings", "Write user and item tower outputs to embedding stores");
    add_common(ex);
    ex->add_option("--data", data_dir, "Dataset directory")->required();
    ex->add_option("--checkpoint", checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);

    std::string user_store, item_store, items, items_file, output;
    std::uint64_t user = 0;
    auto* sc = app.add_subcommand("score", "Score items for a user from embedding stores");
    add_common(sc);
    sc->add_option("--checkpoint", checkpoint, "Checkpoint with cross-attention and MaxSim parameters")
        ->required()
        ->check(CLI::ExistingFile);
    sc->add_option("--user-store", user_store, "User embedding store")->required()->check(CLI::ExistingFile);
    sc->add_option("--item-store", item_store, "Item embedding store")->required()->check(CLI::ExistingFile);
    sc->add_option("--user", user, "User id")->required();
    sc->add_option("--items", items, "Comma-separated item ids (default: every stored item)");
    sc->add_option("--items-file", items_file, "File of item ids, one or more per line")->check(CLI::ExistingFile);
    sc->add_option("--output", output, "JSON-lines output file (default: stdout)");

    std::size_t seeds = 20;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op, loss and model block");
    add_common(gc);
    gc->add_option("--seeds", seeds, "Random instances per row");

    auto* lc = app.add_subcommand("losscheck", "Evaluate losses on hand-computed instances");
    add_common(lc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*gen) return gen_data(common);
        if (*tr) return train(common, data_dir, resume_from);
        if (*ev) return eval(common, data_dir, checkpoint, split, oracle);
        if (*ex) return export_embeddings(common, data_dir, checkpoint);
        if (*sc) return score(checkpoint, user_store, item_store, user, items, items_file, output);
        if (*gc) return gradcheck(seeds);
        if (*lc) return losscheck();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const NotFoundError& e) {
        std::cerr << "not found: " << e.what() << "\n";
        return not_found;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return io_error;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return dimension_error;
    } catch (const EvaluationError& e) {
        std::cerr << "evaluation error: " << e.what() << "\n";
        return evaluation_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
    return usage;
}
