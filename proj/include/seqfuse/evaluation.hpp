#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqfuse/baselines.hpp"
#include "seqfuse/data.hpp"
#include "seqfuse/model.hpp"
#include "seqfuse/training.hpp"

namespace seqfuse {

/// Exact-match fraction. Throws on empty or mismatched inputs.
double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels);

struct EvalRow {
    std::string system;
    std::vector<std::optional<double>> accuracy;  // per target; absent = not predicted
};

/// Systems-by-targets accuracy table plus the provenance metadata needed
/// to reproduce every cell.
struct EvalReport {
    std::vector<std::string> target_names;
    std::vector<EvalRow> rows;
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;
    std::string config_summary;
    std::size_t model_param_count = 0;
    std::vector<std::size_t> pca_dims;  // per-space component counts after clamping
    std::string note;

    const EvalRow* find(std::string_view system) const;

    std::string to_json_string() const;
    /// Systems as rows, targets as columns; metadata as a comment footer.
    std::string to_csv_string() const;
    void save_json(const std::filesystem::path& path) const;
    void save_csv(const std::filesystem::path& path) const;
};

/// The trained systems to tabulate. Null entries are skipped. All systems
/// must have been fitted on the same train/val splits.
struct SystemSet {
    const MajorityModel* majority = nullptr;
    const StackingBaseline* stacking = nullptr;
    const PcaBaseline* pca = nullptr;
    const UserModel* model = nullptr;            // multi-task
    std::vector<const UserModel*> finetuned;     // single-head models
    const SynthConfig* oracle = nullptr;         // synthetic ground truth only
};

/// Test-split accuracies per (system, target).
EvalReport compare_systems(const PreparedData& data, const SystemSet& systems, std::uint64_t seed);

struct SweepRun {
    std::size_t value = 0;
    std::uint64_t seed = 0;
    std::vector<double> accuracy;  // per target, test split
    double initial_train_loss = 0.0;
    std::size_t epochs_run = 0;
    std::string stop_reason;
};

struct SweepResult {
    std::string parameter;
    std::vector<std::size_t> grid;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> target_names;
    std::vector<SweepRun> runs;  // grid-major, seeds inner

    /// Seed-averaged per-target accuracy at one grid value.
    std::vector<double> mean_accuracy(std::size_t grid_value) const;

    std::string to_json_string() const;
    /// Long format: one row per (value, seed, target).
    std::string to_csv_string() const;
    void save_json(const std::filesystem::path& path) const;
    void save_csv(const std::filesystem::path& path) const;
};

/// One full training run scored on the test split; the unit both sweep
/// harnesses loop over. Overrides the model and shuffle seeds with `seed`.
SweepRun train_and_score(const PreparedData& data, ModelConfig mcfg, TrainConfig tcfg,
                         std::uint64_t seed, std::size_t grid_value);

/// Trains one model per (grid value, seed) with every sequence embedding
/// size set to the grid value. No fine-tuning. Runs are independent, so
/// `jobs` > 1 trains them on worker threads; results are identical either
/// way.
SweepResult sweep_embedding_size(const PreparedData& data, const ModelConfig& base_model,
                                 const TrainConfig& base_train, std::span<const std::size_t> grid,
                                 std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

/// Varies trunk depth with all embedding sizes fixed at 50.
SweepResult sweep_depth(const PreparedData& data, const ModelConfig& base_model,
                        const TrainConfig& base_train, std::span<const std::size_t> grid,
                        std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

}  // namespace seqfuse
