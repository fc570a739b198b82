#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqfuse/data.hpp"
#include "seqfuse/numerics.hpp"
#include "seqfuse/training.hpp"

namespace seqfuse {

/// Constant predictor: per target, the modal class of the fit split
/// (ties resolve to the lowest class index).
struct MajorityModel {
    std::vector<std::uint32_t> modal_class;  // schema target order
};

MajorityModel fit_majority(std::span<const EncodedRecord> train, const DatasetSchema& schema);
std::vector<std::uint32_t> predict_majority(const MajorityModel& model);

/// Normalized token counts over the vocabulary, UNK slot included.
/// Empty input gives the zero vector.
std::vector<double> sequence_to_distribution(std::span<const std::uint32_t> indices,
                                             std::size_t vocab_size);

struct LogRegConfig {
    double learning_rate = 0.01;
    double l2 = 1e-4;  // penalty 0.5 * l2 * ||W||^2, bias excluded
    std::size_t max_epochs = 200;
    std::size_t batch_size = 256;
    std::size_t patience = 10;
    double min_delta = 1e-4;
    AdamConfig adam;
    std::uint64_t seed = 42;

    bool operator==(const LogRegConfig&) const = default;
};

/// Multinomial softmax regression for one target.
struct LogRegModel {
    Matrix weights;  // |Y| x d
    std::vector<double> bias;
};

/// Mini-batch Adam on cross-entropy with L2, early-stopped on validation
/// loss with best-epoch restore. Rows of `features` are samples.
LogRegModel fit_logreg(const Matrix& features, std::span<const std::uint32_t> labels,
                       std::size_t cardinality, const Matrix& val_features,
                       std::span<const std::uint32_t> val_labels, const LogRegConfig& cfg);

std::uint32_t predict_logreg(const LogRegModel& model, std::span<const double> features);

/// Per-space token distributions concatenated with the (already z-scored)
/// numerics; block layout is schema order, numerics last.
std::vector<double> build_stacking_features(const EncodedRecord& record,
                                            std::span<const std::size_t> vocab_sizes);

/// Stacked-distribution features into one logistic regression per target.
struct StackingBaseline {
    std::vector<std::size_t> vocab_sizes;  // per space, UNK included
    std::vector<LogRegModel> per_target;   // schema target order

    std::size_t feature_dim(std::size_t numeric_dim) const;
    std::vector<std::uint32_t> predict(const EncodedRecord& record) const;
};

StackingBaseline fit_stacking(std::span<const EncodedRecord> train,
                              std::span<const EncodedRecord> val, const DatasetSchema& schema,
                              const Vocabulary& vocab, const LogRegConfig& cfg);

/// Per-space projections of the distribution vectors onto principal
/// components fitted on the training split, concatenated with numerics.
std::vector<double> build_pca_features(const EncodedRecord& record,
                                       std::span<const PcaModel> pca_per_space,
                                       std::span<const std::size_t> vocab_sizes);

struct PcaBaseline {
    std::vector<std::size_t> vocab_sizes;
    std::vector<PcaModel> pca_per_space;  // component counts clamped per space
    std::vector<LogRegModel> per_target;

    std::size_t feature_dim(std::size_t numeric_dim) const;
    std::vector<std::uint32_t> predict(const EncodedRecord& record) const;
};

/// `components` is the requested per-space component count (clamped to
/// min(N-1, |S_i|) by the fit).
PcaBaseline fit_pca_baseline(std::span<const EncodedRecord> train,
                             std::span<const EncodedRecord> val, const DatasetSchema& schema,
                             const Vocabulary& vocab, std::size_t components,
                             const LogRegConfig& cfg);

}  // namespace seqfuse
