#include "seqfuse/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "seqfuse/errors.hpp"

namespace seqfuse {

using nlohmann::json;

double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels) {
    if (predictions.empty() || predictions.size() != labels.size()) {
        throw ConfigError("accuracy: need equal-length non-empty prediction and label lists");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace {

constexpr const char* kReportNote =
    "Accuracies are specific to this dataset, split, and seed; absolute numbers "
    "from studies on other (e.g. proprietary) data are not comparable.";

std::vector<std::vector<std::uint32_t>> test_labels(const PreparedData& data) {
    std::vector<std::vector<std::uint32_t>> labels(data.schema.targets.size());
    for (auto& l : labels) l.reserve(data.test.size());
    for (const auto& rec : data.test) {
        for (std::size_t t = 0; t < labels.size(); ++t) labels[t].push_back(rec.targets[t]);
    }
    return labels;
}

/// Accuracy cells for a model predicting a subset of targets (head order
/// mapped through head_target_indices).
void score_model_row(const UserModel& model, const PreparedData& data,
                     const std::vector<std::vector<std::uint32_t>>& labels, EvalRow& row) {
    const auto head_idx = model.head_target_indices();
    std::vector<std::vector<std::uint32_t>> preds(head_idx.size());
    for (const auto& rec : data.test) {
        const auto p = predict_classes(model, rec);
        for (std::size_t h = 0; h < head_idx.size(); ++h) preds[h].push_back(p[h]);
    }
    for (std::size_t h = 0; h < head_idx.size(); ++h) {
        row.accuracy[head_idx[h]] = accuracy(preds[h], labels[head_idx[h]]);
    }
}

}  // namespace

const EvalRow* EvalReport::find(std::string_view system) const {
    for (const auto& row : rows) {
        if (row.system == system) return &row;
    }
    return nullptr;
}

EvalReport compare_systems(const PreparedData& data, const SystemSet& systems,
                           std::uint64_t seed) {
    const std::size_t m = data.schema.targets.size();
    EvalReport report;
    report.seed = seed;
    report.dataset_fingerprint = data.fingerprint;
    report.note = kReportNote;
    for (const auto& t : data.schema.targets) report.target_names.push_back(t.name);

    const auto labels = test_labels(data);
    auto new_row = [&](std::string name) {
        EvalRow row;
        row.system = std::move(name);
        row.accuracy.assign(m, std::nullopt);
        return row;
    };

    if (systems.majority != nullptr) {
        EvalRow row = new_row("argmax");
        const auto pred = predict_majority(*systems.majority);
        for (std::size_t t = 0; t < m; ++t) {
            std::vector<std::uint32_t> constant(data.test.size(), pred[t]);
            row.accuracy[t] = accuracy(constant, labels[t]);
        }
        report.rows.push_back(std::move(row));
    }

    if (systems.stacking != nullptr) {
        EvalRow row = new_row("stacking");
        std::vector<std::vector<std::uint32_t>> preds(m);
        for (const auto& rec : data.test) {
            const auto p = systems.stacking->predict(rec);
            for (std::size_t t = 0; t < m; ++t) preds[t].push_back(p[t]);
        }
        for (std::size_t t = 0; t < m; ++t) row.accuracy[t] = accuracy(preds[t], labels[t]);
        report.rows.push_back(std::move(row));
    }

    if (systems.pca != nullptr) {
        EvalRow row = new_row("pca");
        std::vector<std::vector<std::uint32_t>> preds(m);
        for (const auto& rec : data.test) {
            const auto p = systems.pca->predict(rec);
            for (std::size_t t = 0; t < m; ++t) preds[t].push_back(p[t]);
        }
        for (std::size_t t = 0; t < m; ++t) row.accuracy[t] = accuracy(preds[t], labels[t]);
        for (const auto& pca : systems.pca->pca_per_space) {
            report.pca_dims.push_back(pca.component_count());
        }
        report.rows.push_back(std::move(row));
    }

    if (systems.model != nullptr) {
        if (!(systems.model->schema == data.schema)) {
            throw ConfigError("compare_systems: model schema does not match the dataset");
        }
        EvalRow row = new_row("model");
        score_model_row(*systems.model, data, labels, row);
        report.rows.push_back(std::move(row));
        report.model_param_count = param_count(*systems.model);
        json cfg;
        cfg["embedding_dims"] = systems.model->config.embedding_dims;
        cfg["trunk_depth"] = systems.model->config.trunk_depth;
        cfg["trunk_width"] = systems.model->config.trunk_width;
        report.config_summary = cfg.dump();
    }

    if (!systems.finetuned.empty()) {
        EvalRow row = new_row("finetuned");
        for (const UserModel* ft : systems.finetuned) {
            if (ft == nullptr) continue;
            if (!(ft->schema == data.schema)) {
                throw ConfigError("compare_systems: fine-tuned model schema mismatch");
            }
            score_model_row(*ft, data, labels, row);
        }
        report.rows.push_back(std::move(row));
    }

    if (systems.oracle != nullptr) {
        const DatasetSchema oracle_schema = systems.oracle->schema();
        if (!(oracle_schema.targets == data.schema.targets)) {
            throw ConfigError("compare_systems: oracle targets do not match the dataset schema");
        }
        EvalRow row = new_row("oracle");
        const BayesOracle oracle(*systems.oracle);
        std::vector<std::vector<std::uint32_t>> preds(m);
        for (const auto& rec : data.raw.test) {
            const auto p = oracle.predict(rec);
            for (std::size_t t = 0; t < m; ++t) preds[t].push_back(p[t]);
        }
        for (std::size_t t = 0; t < m; ++t) row.accuracy[t] = accuracy(preds[t], labels[t]);
        report.rows.push_back(std::move(row));
    }

    return report;
}

// ---------------------------------------------------------------------------
// Report serialization

std::string EvalReport::to_json_string() const {
    json j;
    j["targets"] = target_names;
    j["rows"] = json::array();
    for (const auto& row : rows) {
        json cells = json::object();
        for (std::size_t t = 0; t < target_names.size(); ++t) {
            cells[target_names[t]] = row.accuracy[t] ? json(*row.accuracy[t]) : json(nullptr);
        }
        j["rows"].push_back({{"system", row.system}, {"accuracy", std::move(cells)}});
    }
    j["seed"] = seed;
    j["dataset_fingerprint"] = dataset_fingerprint;
    if (!config_summary.empty()) j["config"] = json::parse(config_summary);
    if (model_param_count > 0) j["param_count"] = model_param_count;
    if (!pca_dims.empty()) j["pca_dims"] = pca_dims;
    j["note"] = note;
    return j.dump(2);
}

std::string EvalReport::to_csv_string() const {
    std::ostringstream out;
    out << "system";
    for (const auto& name : target_names) out << ',' << name;
    out << '\n';
    for (const auto& row : rows) {
        out << row.system;
        for (const auto& cell : row.accuracy) {
            out << ',';
            if (cell) out << double_repr(*cell);
        }
        out << '\n';
    }
    out << "# seed=" << seed << '\n';
    out << "# dataset_fingerprint=" << dataset_fingerprint << '\n';
    if (model_param_count > 0) out << "# param_count=" << model_param_count << '\n';
    if (!pca_dims.empty()) {
        out << "# pca_dims=";
        for (std::size_t i = 0; i < pca_dims.size(); ++i) {
            if (i > 0) out << ';';
            out << pca_dims[i];
        }
        out << '\n';
    }
    out << "# note=" << note << '\n';
    return out.str();
}

void EvalReport::save_json(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json_string() << '\n';
}

void EvalReport::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_csv_string();
}

// ---------------------------------------------------------------------------
// Sweeps

SweepRun train_and_score(const PreparedData& data, ModelConfig mcfg, TrainConfig tcfg,
                         std::uint64_t seed, std::size_t grid_value) {
    mcfg.seed = seed;
    tcfg.seed = seed;
    UserModel model = init_model(mcfg, data.schema, data.vocab, data.normalizer);
    auto [trained, log] = train(std::move(model), data.train, data.val, tcfg);

    SweepRun run;
    run.value = grid_value;
    run.seed = seed;
    run.initial_train_loss = log.epochs.front().train_loss;
    run.epochs_run = log.epochs.size();
    run.stop_reason = log.stop_reason;

    const auto labels = test_labels(data);
    run.accuracy.assign(data.schema.targets.size(), 0.0);
    std::vector<std::vector<std::uint32_t>> preds(data.schema.targets.size());
    for (const auto& rec : data.test) {
        const auto p = predict_classes(trained, rec);
        for (std::size_t t = 0; t < p.size(); ++t) preds[t].push_back(p[t]);
    }
    for (std::size_t t = 0; t < preds.size(); ++t) {
        run.accuracy[t] = accuracy(preds[t], labels[t]);
    }
    return run;
}

namespace {

SweepResult run_sweep(const PreparedData& data, const ModelConfig& base_model,
                      const TrainConfig& base_train, std::span<const std::size_t> grid,
                      std::span<const std::uint64_t> seeds, std::size_t jobs,
                      const std::string& parameter) {
    if (grid.empty() || seeds.empty()) throw ConfigError("sweep: empty grid or seed list");
    SweepResult result;
    result.parameter = parameter;
    result.grid.assign(grid.begin(), grid.end());
    result.seeds.assign(seeds.begin(), seeds.end());
    for (const auto& t : data.schema.targets) result.target_names.push_back(t.name);

    std::vector<ModelConfig> configs;
    std::vector<std::pair<std::size_t, std::uint64_t>> points;
    for (std::size_t value : grid) {
        ModelConfig mcfg = base_model;
        if (parameter == "embedding_size") {
            mcfg.embedding_dims.assign(data.schema.sequence_names.size(), value);
        } else {
            mcfg.embedding_dims.assign(data.schema.sequence_names.size(), 50);
            mcfg.trunk_depth = value;
        }
        for (std::uint64_t seed : seeds) {
            configs.push_back(mcfg);
            points.emplace_back(value, seed);
        }
    }

    result.runs.resize(points.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            result.runs[i] =
                train_and_score(data, configs[i], base_train, points[i].second, points[i].first);
        }
        return result;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            try {
                result.runs[i] = train_and_score(data, configs[i], base_train, points[i].second,
                                                 points[i].first);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(jobs, points.size()); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return result;
}

}  // namespace

SweepResult sweep_embedding_size(const PreparedData& data, const ModelConfig& base_model,
                                 const TrainConfig& base_train, std::span<const std::size_t> grid,
                                 std::span<const std::uint64_t> seeds, std::size_t jobs) {
    return run_sweep(data, base_model, base_train, grid, seeds, jobs, "embedding_size");
}

SweepResult sweep_depth(const PreparedData& data, const ModelConfig& base_model,
                        const TrainConfig& base_train, std::span<const std::size_t> grid,
                        std::span<const std::uint64_t> seeds, std::size_t jobs) {
    return run_sweep(data, base_model, base_train, grid, seeds, jobs, "trunk_depth");
}

std::vector<double> SweepResult::mean_accuracy(std::size_t grid_value) const {
    std::vector<double> mean(target_names.size(), 0.0);
    std::size_t count = 0;
    for (const auto& run : runs) {
        if (run.value != grid_value) continue;
        for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += run.accuracy[t];
        ++count;
    }
    if (count == 0) throw ConfigError("sweep: no runs at grid value " + std::to_string(grid_value));
    for (double& v : mean) v /= static_cast<double>(count);
    return mean;
}

std::string SweepResult::to_json_string() const {
    json j;
    j["parameter"] = parameter;
    j["grid"] = grid;
    j["seeds"] = seeds;
    j["targets"] = target_names;
    j["runs"] = json::array();
    for (const auto& run : runs) {
        j["runs"].push_back({{"value", run.value},
                             {"seed", run.seed},
                             {"accuracy", run.accuracy},
                             {"initial_train_loss", run.initial_train_loss},
                             {"epochs_run", run.epochs_run},
                             {"stop_reason", run.stop_reason}});
    }
    return j.dump(2);
}

std::string SweepResult::to_csv_string() const {
    std::ostringstream out;
    out << "parameter,value,seed,target,accuracy\n";
    for (const auto& run : runs) {
        for (std::size_t t = 0; t < target_names.size(); ++t) {
            out << parameter << ',' << run.value << ',' << run.seed << ',' << target_names[t]
                << ',' << double_repr(run.accuracy[t]) << '\n';
        }
    }
    return out.str();
}

void SweepResult::save_json(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json_string() << '\n';
}

void SweepResult::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_csv_string();
}

}  // namespace seqfuse
