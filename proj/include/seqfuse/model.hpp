#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seqfuse/data.hpp"
#include "seqfuse/numerics.hpp"

namespace seqfuse {

/// Architecture hyperparameters. The trunk activation is a fixed rectifier.
struct ModelConfig {
    std::vector<std::size_t> embedding_dims;  // l_i per sequence space, schema order
    std::size_t trunk_depth = 1;
    std::size_t trunk_width = 128;
    std::uint64_t seed = 42;

    void validate(std::size_t space_count) const;  // throws ConfigError

    bool operator==(const ModelConfig&) const = default;
};

/// The full model: per-space embedding matrices, fully-connected trunk,
/// and one softmax head per predicted target. Carries its own schema,
/// vocabulary, and numeric normalizer so a checkpoint is self-contained.
///
/// Embedding matrix G_i has shape l_i x |S_i|; column j holds the vector
/// for token j. The raw representation is the concatenation of the pooled
/// embeddings (schema order) with the normalized numerics, width
/// sum(l_i) + p. Heads read the trunk output, or the raw representation
/// directly when trunk_depth is 0.
struct UserModel {
    DatasetSchema schema;
    Vocabulary vocab;
    Normalizer normalizer;
    ModelConfig config;
    std::vector<std::string> head_targets;  // schema target name per head

    std::vector<Matrix> embeddings;
    std::vector<Matrix> trunk_weights;
    std::vector<std::vector<double>> trunk_biases;
    std::vector<Matrix> head_weights;  // per head: |Y_j| x deep_dim
    std::vector<std::vector<double>> head_biases;

    std::size_t raw_dim() const;
    std::size_t deep_dim() const;
    std::size_t head_count() const { return head_weights.size(); }
    /// Schema target index per head, head order.
    std::vector<std::size_t> head_target_indices() const;
};

/// Mirrors the model's weight shapes (not its metadata).
struct Gradients {
    std::vector<Matrix> embeddings;
    std::vector<Matrix> trunk_weights;
    std::vector<std::vector<double>> trunk_biases;
    std::vector<Matrix> head_weights;
    std::vector<std::vector<double>> head_biases;

    static Gradients zeros_like(const UserModel& model);
    void fill_zero();
    void scale(double factor);
};

/// Every weight array in a fixed order (embeddings, trunk, heads) with a
/// stable name; the names double as checkpoint keys.
std::vector<std::pair<std::string, std::span<double>>> named_weights(UserModel& model);
std::vector<std::pair<std::string, std::span<const double>>> named_weights(const UserModel& model);

/// Flat views over the same arrays, same order as named_weights.
std::vector<std::span<double>> weight_spans(UserModel& model);
std::vector<std::span<double>> weight_spans(Gradients& grads);
std::vector<std::span<const double>> weight_spans(const Gradients& grads);

/// Activations cached by forward for the exact backward pass. Holds a
/// pointer to the forwarded record, which must outlive the trace.
struct ForwardTrace {
    const EncodedRecord* record = nullptr;
    std::vector<double> raw;
    std::vector<std::vector<double>> hidden;  // post-rectifier, per trunk layer
    std::vector<std::vector<double>> probs;   // one distribution per head
};

/// Seed-derived initialization: embeddings ~ Uniform(-0.05, 0.05), trunk
/// and head weights ~ Normal(0, 2/fan_in), biases zero.
UserModel init_model(const ModelConfig& cfg, const DatasetSchema& schema, const Vocabulary& vocab,
                     const Normalizer& normalizer = {});

/// Mean of the selected columns of G; an empty index list gives the zero
/// vector. Duplicates contribute multiply (true multiset mean).
std::vector<double> embed_sequence(const Matrix& g, std::span<const std::uint32_t> indices);

ForwardTrace forward(const UserModel& model, const EncodedRecord& record);

/// Adds the exact gradients of sum_j weights[j] * CE(probs_j, labels[j])
/// into `grads`. Labels and weights are in head order.
void backward_accumulate(const UserModel& model, const ForwardTrace& trace,
                         std::span<const std::uint32_t> labels, std::span<const double> weights,
                         Gradients& grads);

Gradients backward(const UserModel& model, const ForwardTrace& trace,
                   std::span<const std::uint32_t> labels, std::span<const double> weights);

/// Argmax class per head, head order.
std::vector<std::uint32_t> predict_classes(const UserModel& model, const EncodedRecord& record);

std::size_t param_count(const UserModel& model);

/// Deep copy with all heads removed except `target`. Shared trunk and
/// embedding parameters are copied, never aliased.
UserModel prune_to_single_head(const UserModel& model, std::string_view target);

/// Single JSON document with schema, vocab, normalizer, config, and named
/// weight arrays. Round-trips are bit-exact.
void save_checkpoint(const UserModel& model, const std::filesystem::path& path);
UserModel load_checkpoint(const std::filesystem::path& path);

}  // namespace seqfuse
