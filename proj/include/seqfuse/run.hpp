#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seqfuse/baselines.hpp"
#include "seqfuse/data.hpp"
#include "seqfuse/model.hpp"
#include "seqfuse/training.hpp"

namespace seqfuse {

/// Dataset ingestion and split settings shared by train/finetune/eval/sweep.
struct DataConfig {
    std::string path;               // JSONL dataset
    std::string schema_path;        // schema JSON
    std::string ground_truth_path;  // generator sidecar, enables the oracle row
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::size_t min_freq = 1;
    std::uint64_t split_seed = 42;
};

struct BaselineRunConfig {
    LogRegConfig logreg;
    std::size_t pca_components = 50;
};

struct EvalRunConfig {
    std::vector<std::string> systems = {"argmax", "stacking", "pca",
                                        "model",  "finetuned", "oracle"};
    std::string checkpoint;
    std::vector<std::string> finetuned_checkpoints;
};

struct SweepRunConfig {
    std::string parameter = "embedding_size";  // or "trunk_depth"
    std::vector<std::size_t> grid;             // empty = parameter default
    std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct FinetuneRunConfig {
    std::string checkpoint;
    std::vector<std::string> targets;  // empty or {"all"} = every head
};

/// Everything a run needs, resolvable from one JSON document. Module seeds
/// (synth, split, model, train, logreg) default to the top-level seed when
/// their sections do not set one explicitly.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    DataConfig data;
    SynthRecipe synth;
    ModelConfig model;            // embedding_dims empty = embedding_dim per space
    std::size_t embedding_dim = 50;
    TrainConfig train;
    BaselineRunConfig baselines;
    EvalRunConfig eval;
    SweepRunConfig sweep;
    FinetuneRunConfig finetune;

    /// Fully resolved form; re-loading it reproduces this config exactly.
    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    /// Model config with embedding_dims resolved against a schema.
    ModelConfig model_for(const DatasetSchema& schema) const;
};

/// Parses config JSON (pass "{}" for pure defaults), then applies
/// `overrides` of the form "dotted.path=value" in order.
RunConfig load_run_config(const std::string& json_text, std::span<const std::string> overrides);

/// Commands. Each validates its inputs, writes its artifacts plus an
/// effective-config echo under cfg.out_dir, and throws ConfigError /
/// DataError / DivergenceError on failure.
void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_sweep(const RunConfig& cfg, std::size_t jobs = 1);

}  // namespace seqfuse
