#include "seqfuse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "seqfuse/errors.hpp"

namespace seqfuse {

using nlohmann::json;

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning_rate must be finite and >= 0");
    }
    if (!(min_delta >= 0.0)) throw ConfigError("train: min_delta must be >= 0");
    if (fine_tune.max_epochs < 1 || fine_tune.patience < 1) {
        throw ConfigError("train: fine_tune epochs and patience must be >= 1");
    }
    if (!(fine_tune.learning_rate >= 0.0)) {
        throw ConfigError("train: fine_tune learning_rate must be >= 0");
    }
    for (double w : loss_weights) {
        if (!std::isfinite(w)) throw ConfigError("train: loss weights must be finite");
    }
}

OptimizerState OptimizerState::zeros_like(const UserModel& model) {
    OptimizerState s;
    s.m = Gradients::zeros_like(model);
    s.v = Gradients::zeros_like(model);
    return s;
}

double multitask_loss(std::span<const std::vector<double>> probs,
                      std::span<const std::uint32_t> labels, std::span<const double> weights) {
    if (probs.size() != labels.size() || probs.size() != weights.size()) {
        throw ConfigError("multitask_loss: need one distribution, label, and weight per head");
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        loss += weights[j] * cross_entropy(probs[j], labels[j]);
    }
    return loss;
}

void adam_step(UserModel& model, const Gradients& grads, OptimizerState& state, double lr,
               const AdamConfig& cfg) {
    auto params = weight_spans(model);
    auto g = weight_spans(grads);
    auto m = weight_spans(state.m);
    auto v = weight_spans(state.v);
    if (params.size() != g.size() || params.size() != m.size() || params.size() != v.size()) {
        throw ConfigError("adam_step: gradient/state array count mismatch");
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t a = 0; a < params.size(); ++a) {
        if (params[a].size() != g[a].size()) {
            throw ConfigError("adam_step: gradient shape mismatch");
        }
        double* p = params[a].data();
        const double* gr = g[a].data();
        double* ma = m[a].data();
        double* va = v[a].data();
        for (std::size_t i = 0; i < params[a].size(); ++i) {
            ma[i] = cfg.beta1 * ma[i] + (1.0 - cfg.beta1) * gr[i];
            va[i] = cfg.beta2 * va[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
            p[i] -= lr * (ma[i] / bc1) / (std::sqrt(va[i] / bc2) + cfg.epsilon);
        }
    }
}

namespace {

struct ValStats {
    double loss = 0.0;
    std::vector<double> accuracy;
};

ValStats evaluate_split(const UserModel& model, std::span<const EncodedRecord> records,
                        std::span<const std::size_t> head_idx, std::span<const double> weights) {
    ValStats stats;
    stats.accuracy.assign(head_idx.size(), 0.0);
    std::vector<std::uint32_t> labels(head_idx.size());
    for (const auto& rec : records) {
        const ForwardTrace trace = forward(model, rec);
        for (std::size_t h = 0; h < head_idx.size(); ++h) labels[h] = rec.targets[head_idx[h]];
        stats.loss += multitask_loss(trace.probs, labels, weights);
        for (std::size_t h = 0; h < head_idx.size(); ++h) {
            if (argmax(trace.probs[h]) == labels[h]) stats.accuracy[h] += 1.0;
        }
    }
    const double n = static_cast<double>(records.size());
    stats.loss /= n;
    for (double& a : stats.accuracy) a /= n;
    return stats;
}

std::pair<UserModel, TrainLog> train_loop(UserModel model, std::span<const EncodedRecord> train_set,
                                          std::span<const EncodedRecord> val_set,
                                          const TrainConfig& cfg, double lr,
                                          std::size_t max_epochs, std::size_t patience) {
    if (train_set.empty() || val_set.empty()) {
        throw ConfigError("train: training and validation splits must be non-empty");
    }

    const std::vector<std::size_t> head_idx = model.head_target_indices();
    std::vector<double> weights = cfg.loss_weights;
    if (weights.empty()) weights.assign(model.head_count(), 1.0);
    if (weights.size() != model.head_count()) {
        throw ConfigError("train: " + std::to_string(weights.size()) + " loss weights for " +
                          std::to_string(model.head_count()) + " heads");
    }

    TrainLog log;
    log.target_names = model.head_targets;

    Rng root(cfg.seed);
    OptimizerState state = OptimizerState::zeros_like(model);
    Gradients grads = Gradients::zeros_like(model);
    EarlyStopper stopper(patience, cfg.min_delta);
    UserModel best = model;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::uint32_t> labels(model.head_count());

    for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        root.stream("shuffle", epoch).shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            grads.fill_zero();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const EncodedRecord& rec = train_set[order[i]];
                const ForwardTrace trace = forward(model, rec);
                for (std::size_t h = 0; h < head_idx.size(); ++h) {
                    labels[h] = rec.targets[head_idx[h]];
                }
                batch_loss += multitask_loss(trace.probs, labels, weights);
                backward_accumulate(model, trace, labels, weights, grads);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            grads.scale(inv);
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch starting at record " + std::to_string(start));
            }
            loss_sum += batch_loss * static_cast<double>(end - start);
            adam_step(model, grads, state, lr, cfg.adam);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        const ValStats val = evaluate_split(model, val_set, head_idx, weights);
        if (!std::isfinite(val.loss)) {
            throw DivergenceError("train: non-finite validation loss at epoch " +
                                  std::to_string(epoch));
        }
        stats.val_loss = val.loss;
        stats.val_accuracy = val.accuracy;
        stats.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(stats);

        if (stopper.observe(val.loss)) {
            best = model;
            log.best_epoch = epoch;
            log.best_val_loss = val.loss;
        }
        if (stopper.should_stop()) {
            log.stop_reason = "early_stop";
            break;
        }
    }
    if (log.stop_reason.empty()) log.stop_reason = "max_epochs";
    return {std::move(best), std::move(log)};
}

}  // namespace

std::pair<UserModel, TrainLog> train(UserModel model, std::span<const EncodedRecord> train_set,
                                     std::span<const EncodedRecord> val_set,
                                     const TrainConfig& cfg) {
    cfg.validate();
    return train_loop(std::move(model), train_set, val_set, cfg, cfg.learning_rate,
                      cfg.max_epochs, cfg.patience);
}

std::pair<UserModel, TrainLog> fine_tune(const UserModel& model, std::string_view target,
                                         std::span<const EncodedRecord> train_set,
                                         std::span<const EncodedRecord> val_set,
                                         const TrainConfig& cfg) {
    cfg.validate();
    UserModel pruned = prune_to_single_head(model, target);

    TrainConfig ft = cfg;
    ft.loss_weights = {1.0};
    // Each target gets its own shuffle stream so the six runs differ.
    ft.seed = Rng(cfg.seed).stream(std::string("fine-tune:") + std::string(target)).seed();
    return train_loop(std::move(pruned), train_set, val_set, ft, cfg.fine_tune.learning_rate,
                      cfg.fine_tune.max_epochs, cfg.fine_tune.patience);
}

// ---------------------------------------------------------------------------
// TrainLog serialization

std::string TrainLog::to_json_string() const {
    json j;
    j["targets"] = target_names;
    j["stop_reason"] = stop_reason;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = best_val_loss;
    j["epochs"] = json::array();
    for (const auto& e : epochs) {
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"val_loss", e.val_loss},
                               {"val_accuracy", e.val_accuracy},
                               {"wall_time_sec", e.wall_time_sec}});
    }
    return j.dump(2);
}

std::string TrainLog::to_csv_string() const {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss";
    for (const auto& name : target_names) out << ",acc_" << name;
    out << ",wall_time_sec\n";
    for (const auto& e : epochs) {
        out << e.epoch << ',' << double_repr(e.train_loss) << ',' << double_repr(e.val_loss);
        for (double a : e.val_accuracy) out << ',' << double_repr(a);
        out << ',' << double_repr(e.wall_time_sec) << '\n';
    }
    return out.str();
}

void TrainLog::save_json(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json_string() << '\n';
}

void TrainLog::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_csv_string();
}

}  // namespace seqfuse
