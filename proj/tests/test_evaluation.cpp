#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "seqfuse/errors.hpp"
#include "seqfuse/evaluation.hpp"

using namespace seqfuse;

TEST_SUITE_BEGIN("evaluation");

namespace {

PreparedData tiny_prepared(std::uint64_t seed, std::size_t users, SynthConfig* keep_cfg) {
    SynthRecipe recipe = default_synth_recipe();
    recipe.seed = seed;
    recipe.n_users = users;
    recipe.numeric_dim = 2;
    recipe.topic_strength = 2.0;
    recipe.spaces = {{"s0", 8, 6.0, 0.3}};
    recipe.targets = {{"u", {"a", "b"}, {0.6, 0.4}}, {"v", {"x", "y", "z"}, {0.4, 0.3, 0.3}}};
    const SynthConfig cfg = materialize_synth(recipe);
    if (keep_cfg) *keep_cfg = cfg;
    return prepare_dataset(synth_generate(cfg), cfg.schema(), 0.7, 0.15, 0.15, 1, seed);
}

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.embedding_dims = {4};
    cfg.trunk_depth = 1;
    cfg.trunk_width = 8;
    return cfg;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.max_epochs = 12;
    cfg.batch_size = 64;
    cfg.patience = 12;
    cfg.fine_tune.max_epochs = 4;
    cfg.fine_tune.patience = 4;
    return cfg;
}

}  // namespace

TEST_CASE("accuracy is the exact-match fraction") {
    const std::vector<std::uint32_t> pred = {1, 0, 2, 1};
    const std::vector<std::uint32_t> gold = {1, 0, 1, 1};
    CHECK(accuracy(pred, gold) == 0.75);
    CHECK_THROWS_AS(accuracy(pred, std::vector<std::uint32_t>{1}), ConfigError);
    CHECK_THROWS_AS(accuracy({}, {}), ConfigError);
}

TEST_CASE("report serialization carries rows, targets, and provenance") {
    EvalReport report;
    report.target_names = {"u", "v"};
    report.rows = {{"argmax", {0.5, 0.25}}, {"model", {0.75, std::nullopt}}};
    report.seed = 9;
    report.dataset_fingerprint = "deadbeef00000000";
    report.config_summary = R"({"kind":"demo"})";
    report.model_param_count = 123;
    report.pca_dims = {7, 9};
    report.note = "dataset-specific numbers";

    REQUIRE(report.find("model") != nullptr);
    CHECK(report.find("model")->accuracy[0] == 0.75);
    CHECK(report.find("nope") == nullptr);

    const auto j = nlohmann::json::parse(report.to_json_string());
    CHECK(j.at("targets").size() == 2);
    CHECK(j.at("rows").size() == 2);
    CHECK(j.at("rows")[0].at("system") == "argmax");
    CHECK(j.at("rows")[1].at("accuracy").at("v").is_null());
    CHECK(j.at("seed") == 9);
    CHECK(j.at("dataset_fingerprint") == "deadbeef00000000");
    CHECK(j.at("param_count") == 123);
    CHECK(j.at("config").at("kind") == "demo");

    const std::string csv = report.to_csv_string();
    CHECK(csv.find("system,u,v\n") == 0);
    CHECK(csv.find("argmax,0.5,0.25\n") != std::string::npos);
    CHECK(csv.find("model,0.75,\n") != std::string::npos);
    CHECK(csv.find("# seed=9\n") != std::string::npos);
    CHECK(csv.find("# dataset_fingerprint=deadbeef00000000\n") != std::string::npos);
    CHECK(csv.find("# param_count=123\n") != std::string::npos);
    CHECK(csv.find("# pca_dims=7;9\n") != std::string::npos);
    CHECK(csv.find("# note=dataset-specific numbers\n") != std::string::npos);
}

TEST_CASE("compare_systems tabulates every requested system") {
    SynthConfig synth_cfg;
    const PreparedData data = tiny_prepared(11, 400, &synth_cfg);

    LogRegConfig lr_cfg;
    lr_cfg.max_epochs = 40;
    const MajorityModel majority = fit_majority(data.train, data.schema);
    const StackingBaseline stacking =
        fit_stacking(data.train, data.val, data.schema, data.vocab, lr_cfg);
    const PcaBaseline pca =
        fit_pca_baseline(data.train, data.val, data.schema, data.vocab, 5, lr_cfg);

    UserModel model = init_model(tiny_model_config(), data.schema, data.vocab, data.normalizer);
    auto [trained, log] = train(std::move(model), data.train, data.val, tiny_train_config());
    (void)log;
    auto [tuned, ft_log] = fine_tune(trained, "u", data.train, data.val, tiny_train_config());
    (void)ft_log;

    SystemSet systems;
    systems.majority = &majority;
    systems.stacking = &stacking;
    systems.pca = &pca;
    systems.model = &trained;
    systems.finetuned = {&tuned};
    systems.oracle = &synth_cfg;

    const EvalReport report = compare_systems(data, systems, 11);
    CHECK(report.target_names == std::vector<std::string>{"u", "v"});
    CHECK(report.seed == 11);
    CHECK(report.dataset_fingerprint == data.fingerprint);
    CHECK(report.model_param_count == param_count(trained));
    CHECK(report.pca_dims == std::vector<std::size_t>{5});

    for (const char* name : {"argmax", "stacking", "pca", "model", "finetuned", "oracle"}) {
        const EvalRow* row = report.find(name);
        REQUIRE_MESSAGE(row != nullptr, name);
        REQUIRE(row->accuracy.size() == 2);
    }

    // Full-width rows have every cell in [0, 1].
    for (const char* name : {"argmax", "stacking", "pca", "model", "oracle"}) {
        for (const auto& cell : report.find(name)->accuracy) {
            REQUIRE(cell.has_value());
            CHECK(*cell >= 0.0);
            CHECK(*cell <= 1.0);
        }
    }

    // The fine-tuned row only fills the tuned targets' columns.
    const EvalRow* ft = report.find("finetuned");
    CHECK(ft->accuracy[0].has_value());
    CHECK(!ft->accuracy[1].has_value());

    // Null systems are simply absent.
    SystemSet partial;
    partial.majority = &majority;
    const EvalReport small = compare_systems(data, partial, 11);
    CHECK(small.rows.size() == 1);
    CHECK(small.find("model") == nullptr);
}

TEST_CASE("compare_systems validates schema agreement") {
    SynthConfig synth_cfg;
    const PreparedData data = tiny_prepared(12, 300, &synth_cfg);
    const PreparedData other = [] {
        SynthRecipe recipe = default_synth_recipe();
        recipe.seed = 5;
        recipe.n_users = 200;
        recipe.numeric_dim = 1;
        recipe.spaces = {{"zz", 5, 4.0, 0.5}};
        recipe.targets = {{"w", {"p", "q"}, {0.5, 0.5}}};
        const SynthConfig cfg = materialize_synth(recipe);
        return prepare_dataset(synth_generate(cfg), cfg.schema(), 0.7, 0.15, 0.15, 1, 5);
    }();

    UserModel model =
        init_model(tiny_model_config(), other.schema, other.vocab, other.normalizer);
    SystemSet systems;
    systems.model = &model;
    CHECK_THROWS_AS(compare_systems(data, systems, 1), ConfigError);
}

TEST_CASE("sweep produces one scored run per grid value and seed") {
    const PreparedData data = tiny_prepared(13, 350, nullptr);
    const std::vector<std::size_t> grid = {3, 5};
    const std::vector<std::uint64_t> seeds = {1, 2};

    const SweepResult result =
        sweep_embedding_size(data, tiny_model_config(), tiny_train_config(), grid, seeds);
    CHECK(result.parameter == "embedding_size");
    CHECK(result.grid == grid);
    CHECK(result.seeds == seeds);
    CHECK(result.target_names == std::vector<std::string>{"u", "v"});
    REQUIRE(result.runs.size() == 4);

    for (const auto& run : result.runs) {
        CHECK((run.value == 3 || run.value == 5));
        CHECK((run.seed == 1 || run.seed == 2));
        REQUIRE(run.accuracy.size() == 2);
        CHECK(run.epochs_run > 0);
        CHECK((run.stop_reason == "early_stop" || run.stop_reason == "max_epochs"));
        CHECK(std::isfinite(run.initial_train_loss));
    }

    // Fresh initialization per run: different seeds start from different
    // parameters, so the first-epoch training loss differs.
    CHECK(result.runs[0].initial_train_loss != result.runs[1].initial_train_loss);

    // mean_accuracy averages across seeds at one grid value.
    const std::vector<double> mean3 = result.mean_accuracy(3);
    double want = 0.0;
    for (const auto& run : result.runs) {
        if (run.value == 3) want += run.accuracy[0];
    }
    want /= 2.0;
    CHECK(mean3[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK_THROWS_AS(result.mean_accuracy(99), ConfigError);
}

TEST_CASE("depth sweep pins embeddings at 50 and varies the trunk") {
    const PreparedData data = tiny_prepared(14, 250, nullptr);
    TrainConfig tcfg = tiny_train_config();
    tcfg.max_epochs = 4;
    tcfg.patience = 4;

    const SweepResult result = sweep_depth(data, tiny_model_config(), tcfg,
                                           std::vector<std::size_t>{0, 1},
                                           std::vector<std::uint64_t>{1});
    CHECK(result.parameter == "trunk_depth");
    REQUIRE(result.runs.size() == 2);
    CHECK(result.runs[0].value == 0);
    CHECK(result.runs[1].value == 1);
}

TEST_CASE("threaded sweep matches the sequential sweep bit for bit") {
    const PreparedData data = tiny_prepared(15, 300, nullptr);
    TrainConfig tcfg = tiny_train_config();
    tcfg.max_epochs = 6;
    tcfg.patience = 6;
    const std::vector<std::size_t> grid = {3, 4};
    const std::vector<std::uint64_t> seeds = {1, 2};

    const SweepResult seq =
        sweep_embedding_size(data, tiny_model_config(), tcfg, grid, seeds, 1);
    const SweepResult par =
        sweep_embedding_size(data, tiny_model_config(), tcfg, grid, seeds, 3);
    REQUIRE(seq.runs.size() == par.runs.size());
    for (std::size_t i = 0; i < seq.runs.size(); ++i) {
        CHECK(seq.runs[i].value == par.runs[i].value);
        CHECK(seq.runs[i].seed == par.runs[i].seed);
        CHECK(seq.runs[i].accuracy == par.runs[i].accuracy);
        CHECK(seq.runs[i].initial_train_loss == par.runs[i].initial_train_loss);
        CHECK(seq.runs[i].epochs_run == par.runs[i].epochs_run);
    }
}

TEST_CASE("sweep serialization round-trips shape") {
    const PreparedData data = tiny_prepared(16, 250, nullptr);
    TrainConfig tcfg = tiny_train_config();
    tcfg.max_epochs = 3;
    tcfg.patience = 3;
    const SweepResult result = sweep_embedding_size(data, tiny_model_config(), tcfg,
                                                    std::vector<std::size_t>{3},
                                                    std::vector<std::uint64_t>{1, 2});

    const auto j = nlohmann::json::parse(result.to_json_string());
    CHECK(j.at("parameter") == "embedding_size");
    CHECK(j.at("runs").size() == 2);
    CHECK(j.at("runs")[0].at("value") == 3);
    CHECK(j.at("runs")[0].contains("initial_train_loss"));
    CHECK(j.at("runs")[0].contains("stop_reason"));

    const std::string csv = result.to_csv_string();
    CHECK(csv.find("parameter,value,seed,target,accuracy\n") == 0);
    CHECK(csv.find("embedding_size,3,1,u,") != std::string::npos);
    CHECK(csv.find("embedding_size,3,2,v,") != std::string::npos);
}

TEST_SUITE_END();
