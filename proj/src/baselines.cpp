#include "seqfuse/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqfuse/errors.hpp"

namespace seqfuse {

MajorityModel fit_majority(std::span<const EncodedRecord> train, const DatasetSchema& schema) {
    if (train.empty()) throw ConfigError("fit_majority: empty training split");
    MajorityModel model;
    model.modal_class.reserve(schema.targets.size());
    std::vector<double> counts;
    for (std::size_t t = 0; t < schema.targets.size(); ++t) {
        counts.assign(schema.targets[t].classes.size(), 0.0);
        for (const auto& rec : train) counts[rec.targets[t]] += 1.0;
        model.modal_class.push_back(static_cast<std::uint32_t>(argmax(counts)));
    }
    return model;
}

std::vector<std::uint32_t> predict_majority(const MajorityModel& model) {
    return model.modal_class;
}

std::vector<double> sequence_to_distribution(std::span<const std::uint32_t> indices,
                                             std::size_t vocab_size) {
    std::vector<double> dist(vocab_size, 0.0);
    if (indices.empty()) return dist;
    for (std::uint32_t idx : indices) {
        if (idx >= vocab_size) {
            throw DataError("sequence_to_distribution: index " + std::to_string(idx) +
                            " out of range for vocabulary of " + std::to_string(vocab_size));
        }
        dist[idx] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (double& v : dist) v *= inv;
    return dist;
}

// ---------------------------------------------------------------------------
// Logistic regression

LogRegModel fit_logreg(const Matrix& features, std::span<const std::uint32_t> labels,
                       std::size_t cardinality, const Matrix& val_features,
                       std::span<const std::uint32_t> val_labels, const LogRegConfig& cfg) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (n == 0 || labels.size() != n) {
        throw ConfigError("fit_logreg: features/labels size mismatch");
    }
    if (val_features.rows == 0 || val_labels.size() != val_features.rows ||
        val_features.cols != d) {
        throw ConfigError("fit_logreg: invalid validation data");
    }
    if (cardinality < 2) throw ConfigError("fit_logreg: cardinality must be >= 2");
    for (std::uint32_t y : labels) {
        if (y >= cardinality) throw DataError("fit_logreg: label out of range");
    }

    LogRegModel model;
    model.weights = Matrix(cardinality, d);
    model.bias.assign(cardinality, 0.0);

    Matrix grad_w(cardinality, d);
    std::vector<double> grad_b(cardinality);
    Matrix m_w(cardinality, d), v_w(cardinality, d);
    std::vector<double> m_b(cardinality, 0.0), v_b(cardinality, 0.0);
    std::uint64_t step = 0;

    auto scores = [&](const LogRegModel& lr, std::span<const double> x) {
        std::vector<double> logits(cardinality);
        matvec(lr.weights, x, logits);
        for (std::size_t c = 0; c < cardinality; ++c) logits[c] += lr.bias[c];
        return softmax(logits);
    };
    auto val_loss = [&](const LogRegModel& lr) {
        double loss = 0.0;
        for (std::size_t i = 0; i < val_features.rows; ++i) {
            loss += cross_entropy(scores(lr, val_features.row(i)), val_labels[i]);
        }
        return loss / static_cast<double>(val_features.rows);
    };

    Rng root(cfg.seed);
    EarlyStopper stopper(cfg.patience, cfg.min_delta);
    LogRegModel best = model;

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        root.stream("shuffle", epoch).shuffle(order);

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            std::fill(grad_w.data.begin(), grad_w.data.end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto x = features.row(order[i]);
                std::vector<double> probs = scores(model, x);
                batch_loss += cross_entropy(probs, labels[order[i]]);
                probs[labels[order[i]]] -= 1.0;
                outer_add(probs, x, grad_w);
                for (std::size_t c = 0; c < cardinality; ++c) grad_b[c] += probs[c];
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("fit_logreg: non-finite loss at epoch " +
                                      std::to_string(epoch));
            }
            for (std::size_t i = 0; i < grad_w.data.size(); ++i) {
                grad_w.data[i] = grad_w.data[i] * inv + cfg.l2 * model.weights.data[i];
            }
            for (double& g : grad_b) g *= inv;

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.adam.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(step));
            auto update = [&](double* p, const double* g, double* m, double* v, std::size_t len) {
                for (std::size_t i = 0; i < len; ++i) {
                    m[i] = cfg.adam.beta1 * m[i] + (1.0 - cfg.adam.beta1) * g[i];
                    v[i] = cfg.adam.beta2 * v[i] + (1.0 - cfg.adam.beta2) * g[i] * g[i];
                    p[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam.epsilon);
                }
            };
            update(model.weights.data.data(), grad_w.data.data(), m_w.data.data(), v_w.data.data(),
                   grad_w.data.size());
            update(model.bias.data(), grad_b.data(), m_b.data(), v_b.data(), grad_b.size());
        }

        const double loss = val_loss(model);
        if (!std::isfinite(loss)) {
            throw DivergenceError("fit_logreg: non-finite validation loss at epoch " +
                                  std::to_string(epoch));
        }
        if (stopper.observe(loss)) best = model;
        if (stopper.should_stop()) break;
    }
    return best;
}

std::uint32_t predict_logreg(const LogRegModel& model, std::span<const double> features) {
    std::vector<double> logits(model.weights.rows);
    matvec(model.weights, features, logits);
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += model.bias[c];
    return static_cast<std::uint32_t>(argmax(logits));
}

// ---------------------------------------------------------------------------
// Feature pipelines

std::vector<double> build_stacking_features(const EncodedRecord& record,
                                            std::span<const std::size_t> vocab_sizes) {
    if (record.sequences.size() != vocab_sizes.size()) {
        throw ConfigError("stacking: record/pipeline space count mismatch");
    }
    std::size_t dim = record.numeric.size();
    for (std::size_t v : vocab_sizes) dim += v;
    std::vector<double> out;
    out.reserve(dim);
    for (std::size_t s = 0; s < vocab_sizes.size(); ++s) {
        const auto dist = sequence_to_distribution(record.sequences[s], vocab_sizes[s]);
        out.insert(out.end(), dist.begin(), dist.end());
    }
    out.insert(out.end(), record.numeric.begin(), record.numeric.end());
    return out;
}

std::vector<double> build_pca_features(const EncodedRecord& record,
                                       std::span<const PcaModel> pca_per_space,
                                       std::span<const std::size_t> vocab_sizes) {
    if (record.sequences.size() != pca_per_space.size()) {
        throw ConfigError("pca features: record/pipeline space count mismatch");
    }
    std::size_t dim = record.numeric.size();
    for (const auto& m : pca_per_space) dim += m.component_count();
    std::vector<double> out(dim, 0.0);
    std::size_t offset = 0;
    for (std::size_t s = 0; s < pca_per_space.size(); ++s) {
        const auto dist = sequence_to_distribution(record.sequences[s], vocab_sizes[s]);
        const std::size_t k = pca_per_space[s].component_count();
        pca_transform_row(pca_per_space[s], dist, std::span<double>(out.data() + offset, k));
        offset += k;
    }
    std::copy(record.numeric.begin(), record.numeric.end(), out.begin() + offset);
    return out;
}

namespace {

std::vector<std::size_t> vocab_sizes_of(const Vocabulary& vocab) {
    std::vector<std::size_t> sizes;
    sizes.reserve(vocab.space_count());
    for (std::size_t s = 0; s < vocab.space_count(); ++s) sizes.push_back(vocab.size(s));
    return sizes;
}

template <class FeatureFn>
Matrix feature_matrix(std::span<const EncodedRecord> records, std::size_t dim, FeatureFn&& fn) {
    Matrix x(records.size(), dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::vector<double> f = fn(records[i]);
        if (f.size() != dim) throw ConfigError("feature pipeline produced inconsistent width");
        std::copy(f.begin(), f.end(), x.row(i).begin());
    }
    return x;
}

std::vector<std::uint32_t> target_labels(std::span<const EncodedRecord> records, std::size_t t) {
    std::vector<std::uint32_t> y;
    y.reserve(records.size());
    for (const auto& rec : records) y.push_back(rec.targets[t]);
    return y;
}

std::vector<LogRegModel> fit_per_target(const Matrix& train_x, const Matrix& val_x,
                                        std::span<const EncodedRecord> train,
                                        std::span<const EncodedRecord> val,
                                        const DatasetSchema& schema, const LogRegConfig& cfg) {
    std::vector<LogRegModel> models;
    models.reserve(schema.targets.size());
    Rng root(cfg.seed);
    for (std::size_t t = 0; t < schema.targets.size(); ++t) {
        LogRegConfig per_target = cfg;
        per_target.seed = root.stream("logreg:" + schema.targets[t].name).seed();
        models.push_back(fit_logreg(train_x, target_labels(train, t),
                                    schema.targets[t].classes.size(), val_x,
                                    target_labels(val, t), per_target));
    }
    return models;
}

}  // namespace

std::size_t StackingBaseline::feature_dim(std::size_t numeric_dim) const {
    std::size_t dim = numeric_dim;
    for (std::size_t v : vocab_sizes) dim += v;
    return dim;
}

std::vector<std::uint32_t> StackingBaseline::predict(const EncodedRecord& record) const {
    const auto f = build_stacking_features(record, vocab_sizes);
    std::vector<std::uint32_t> out;
    out.reserve(per_target.size());
    for (const auto& lr : per_target) out.push_back(predict_logreg(lr, f));
    return out;
}

StackingBaseline fit_stacking(std::span<const EncodedRecord> train,
                              std::span<const EncodedRecord> val, const DatasetSchema& schema,
                              const Vocabulary& vocab, const LogRegConfig& cfg) {
    if (train.empty() || val.empty()) throw ConfigError("fit_stacking: empty split");
    StackingBaseline base;
    base.vocab_sizes = vocab_sizes_of(vocab);
    const std::size_t dim = base.feature_dim(schema.numeric_dim);
    auto features = [&](const EncodedRecord& r) {
        return build_stacking_features(r, base.vocab_sizes);
    };
    const Matrix train_x = feature_matrix(train, dim, features);
    const Matrix val_x = feature_matrix(val, dim, features);
    base.per_target = fit_per_target(train_x, val_x, train, val, schema, cfg);
    return base;
}

std::size_t PcaBaseline::feature_dim(std::size_t numeric_dim) const {
    std::size_t dim = numeric_dim;
    for (const auto& m : pca_per_space) dim += m.component_count();
    return dim;
}

std::vector<std::uint32_t> PcaBaseline::predict(const EncodedRecord& record) const {
    const auto f = build_pca_features(record, pca_per_space, vocab_sizes);
    std::vector<std::uint32_t> out;
    out.reserve(per_target.size());
    for (const auto& lr : per_target) out.push_back(predict_logreg(lr, f));
    return out;
}

PcaBaseline fit_pca_baseline(std::span<const EncodedRecord> train,
                             std::span<const EncodedRecord> val, const DatasetSchema& schema,
                             const Vocabulary& vocab, std::size_t components,
                             const LogRegConfig& cfg) {
    if (train.empty() || val.empty()) throw ConfigError("fit_pca_baseline: empty split");
    PcaBaseline base;
    base.vocab_sizes = vocab_sizes_of(vocab);
    for (std::size_t s = 0; s < base.vocab_sizes.size(); ++s) {
        Matrix dists(train.size(), base.vocab_sizes[s]);
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto d = sequence_to_distribution(train[i].sequences[s], base.vocab_sizes[s]);
            std::copy(d.begin(), d.end(), dists.row(i).begin());
        }
        base.pca_per_space.push_back(pca_fit(dists, components));
    }
    const std::size_t dim = base.feature_dim(schema.numeric_dim);
    auto features = [&](const EncodedRecord& r) {
        return build_pca_features(r, base.pca_per_space, base.vocab_sizes);
    };
    const Matrix train_x = feature_matrix(train, dim, features);
    const Matrix val_x = feature_matrix(val, dim, features);
    base.per_target = fit_per_target(train_x, val_x, train, val, schema, cfg);
    return base;
}

}  // namespace seqfuse
