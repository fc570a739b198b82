#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seqfuse/model.hpp"

namespace seqfuse {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Hyperparameters for the per-target fine-tuning stage: reduced learning
/// rate, shorter budget, all surviving weights trainable.
struct FineTuneConfig {
    double learning_rate = 1e-4;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;

    bool operator==(const FineTuneConfig&) const = default;
};

struct TrainConfig {
    std::size_t max_epochs = 500;
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    AdamConfig adam;
    std::size_t patience = 20;
    double min_delta = 1e-4;
    std::vector<double> loss_weights;  // empty = unit weight per head
    std::uint64_t seed = 42;
    FineTuneConfig fine_tune;

    void validate() const;  // throws ConfigError

    bool operator==(const TrainConfig&) const = default;
};

/// Adam moment accumulators, shaped exactly like the model's weights.
struct OptimizerState {
    Gradients m;
    Gradients v;
    std::uint64_t step = 0;

    static OptimizerState zeros_like(const UserModel& model);
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<double> val_accuracy;  // per head, head order
    double wall_time_sec = 0.0;
};

/// One entry per completed epoch plus the stopping outcome. Serializes to
/// JSON and CSV (one row per epoch). Wall times are informational and vary
/// between runs; every other field is deterministic given the seed.
struct TrainLog {
    std::vector<std::string> target_names;  // head order
    std::vector<EpochStats> epochs;
    std::string stop_reason;  // "early_stop" or "max_epochs"
    std::size_t best_epoch = 0;  // 1-based
    double best_val_loss = std::numeric_limits<double>::infinity();

    std::string to_json_string() const;
    std::string to_csv_string() const;
    void save_json(const std::filesystem::path& path) const;
    void save_csv(const std::filesystem::path& path) const;
};

/// Patience/min-delta bookkeeping shared by the trainers. `observe` returns
/// true when the value is a new exact minimum (time to snapshot); the
/// patience counter resets only on improvements larger than min_delta.
class EarlyStopper {
public:
    EarlyStopper(std::size_t patience, double min_delta)
        : patience_(patience), min_delta_(min_delta) {}

    bool observe(double val_loss) {
        if (val_loss < reference_ - min_delta_) {
            reference_ = val_loss;
            stale_ = 0;
        } else {
            ++stale_;
        }
        if (val_loss < best_) {
            best_ = val_loss;
            return true;
        }
        return false;
    }

    bool should_stop() const { return stale_ >= patience_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    double min_delta_;
    double reference_ = std::numeric_limits<double>::infinity();
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stale_ = 0;
};

/// Sum of per-head weighted cross-entropies.
double multitask_loss(std::span<const std::vector<double>> probs,
                      std::span<const std::uint32_t> labels, std::span<const double> weights);

/// Standard bias-corrected Adam update, applied to every weight array.
void adam_step(UserModel& model, const Gradients& grads, OptimizerState& state, double lr,
               const AdamConfig& cfg);

/// Mini-batch multi-task training with a seeded per-epoch shuffle, Adam,
/// and early stopping on validation total loss. Returns the parameters of
/// the best validation epoch.
std::pair<UserModel, TrainLog> train(UserModel model, std::span<const EncodedRecord> train_set,
                                     std::span<const EncodedRecord> val_set,
                                     const TrainConfig& cfg);

/// Prunes to the named head and continues training every remaining weight
/// on that target's loss alone, using the fine_tune hyperparameters.
std::pair<UserModel, TrainLog> fine_tune(const UserModel& model, std::string_view target,
                                         std::span<const EncodedRecord> train_set,
                                         std::span<const EncodedRecord> val_set,
                                         const TrainConfig& cfg);

}  // namespace seqfuse
