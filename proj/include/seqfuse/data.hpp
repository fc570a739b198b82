#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqfuse/numerics.hpp"

namespace seqfuse {

struct TargetSpec {
    std::string name;
    std::vector<std::string> classes;

    bool operator==(const TargetSpec&) const = default;
};

/// Names and cardinalities of the sequence spaces and prediction targets.
struct DatasetSchema {
    std::vector<std::string> sequence_names;
    std::size_t numeric_dim = 0;
    std::vector<TargetSpec> targets;

    void validate() const;  // throws ConfigError
    std::size_t sequence_index(std::string_view name) const;
    std::size_t target_index(std::string_view name) const;
    std::size_t class_index(std::size_t target, std::string_view label) const;

    std::string to_json_string() const;
    static DatasetSchema from_json_string(const std::string& text);
    static DatasetSchema load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    bool operator==(const DatasetSchema&) const = default;
};

/// One user's raw observations: token sequences, numerics, target labels.
struct UserRecord {
    std::map<std::string, std::vector<std::string>> sequences;
    std::vector<double> numeric;
    std::map<std::string, std::string> targets;

    bool operator==(const UserRecord&) const = default;
};

/// Token -> index maps per sequence space. Index 0 is reserved for UNK;
/// indices 1.. are assigned in frequency-descending order with lexicographic
/// tie-break, so the mapping is deterministic given the training data.
class Vocabulary {
public:
    static constexpr std::uint32_t kUnk = 0;

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::vector<std::string>> tokens_per_space);

    std::size_t space_count() const { return tokens_.size(); }
    /// |S_i| including the UNK slot.
    std::size_t size(std::size_t space) const { return tokens_[space].size() + 1; }
    std::uint32_t index_of(std::size_t space, std::string_view token) const;
    /// Tokens at indices 1.., in order.
    const std::vector<std::string>& tokens(std::size_t space) const { return tokens_[space]; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::vector<std::string>> tokens_;
    std::vector<std::map<std::string, std::uint32_t, std::less<>>> index_;
};

/// Model-ready record: token indices per space (schema order), numeric
/// vector, class index per target (schema order).
struct EncodedRecord {
    std::vector<std::vector<std::uint32_t>> sequences;
    std::vector<double> numeric;
    std::vector<std::uint32_t> targets;

    bool operator==(const EncodedRecord&) const = default;
};

/// Per-dimension z-score parameters fitted on the training split.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-8

    void apply(std::span<double> numeric) const;

    bool operator==(const Normalizer&) const = default;
};

std::vector<UserRecord> load_jsonl(const std::filesystem::path& path, const DatasetSchema& schema);
void save_jsonl(const std::filesystem::path& path, std::span<const UserRecord> records,
                const DatasetSchema& schema);
/// One record as a single-line JSON document (the JSONL row format).
std::string record_to_json_line(const UserRecord& record, const DatasetSchema& schema);

Vocabulary build_vocab(std::span<const UserRecord> records, const DatasetSchema& schema,
                       std::size_t min_freq);

EncodedRecord encode(const UserRecord& record, const Vocabulary& vocab,
                     const DatasetSchema& schema);

struct SplitRecords {
    std::vector<UserRecord> train, val, test;
};

/// Seeded shuffle then contiguous slicing. Val and test sizes are floored,
/// the remainder goes to train. Throws if any slice is empty or the
/// fractions do not sum to 1.
SplitRecords split(std::vector<UserRecord> records, double train_frac, double val_frac,
                   double test_frac, std::uint64_t seed);

Normalizer fit_normalizer(std::span<const UserRecord> train, std::size_t numeric_dim);

// ---------------------------------------------------------------------------
// Synthetic data with a known generative model.

/// One sequence space of the generator: token universe, Poisson length,
/// and the background mixing weight lambda.
struct SynthSequenceSpec {
    std::string name;
    std::vector<std::string> tokens;
    double mean_length = 40.0;
    double background_mix = 0.5;        // lambda in [0, 1]
    std::vector<double> background;     // distribution over tokens
};

/// One target of the generator: marginal over classes, per-class topic
/// distribution per space, per-class numeric mean vectors.
struct SynthTargetSpec {
    std::string name;
    std::vector<std::string> classes;
    std::vector<double> marginal;
    std::vector<Matrix> topics;  // per space: classes x vocab, rows are distributions
    Matrix numeric_means;        // classes x numeric_dim
};

/// Fully explicit generator parameters. Serializes to JSON; the synth
/// command writes this as the ground-truth sidecar so the oracle can be
/// evaluated later.
struct SynthConfig {
    std::uint64_t seed = 42;
    std::size_t n_users = 20000;
    std::size_t numeric_dim = 8;
    double numeric_noise_sigma = 1.0;
    std::vector<SynthSequenceSpec> sequences;
    std::vector<SynthTargetSpec> targets;

    void validate() const;  // throws ConfigError
    DatasetSchema schema() const;

    std::string to_json_string() const;
    static SynthConfig from_json_string(const std::string& text);
    static SynthConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

/// Compact recipe for building a SynthConfig: topic and numeric-mean
/// distributions are derived deterministically from the seed.
struct SynthRecipe {
    struct Space {
        std::string name;
        std::size_t vocab_size = 50;
        double mean_length = 40.0;
        double background_mix = 0.5;
    };
    struct Target {
        std::string name;
        std::vector<std::string> classes;
        std::vector<double> marginal;
    };

    std::uint64_t seed = 42;
    std::size_t n_users = 20000;
    std::size_t numeric_dim = 8;
    double numeric_noise_sigma = 1.0;
    double topic_strength = 1.0;      // log-normal tilt of the background
    double numeric_mean_scale = 0.35; // stddev of per-class numeric means
    std::vector<Space> spaces;
    std::vector<Target> targets;
};

/// The desk-scale default: two sequence spaces (category 50, merchant 500),
/// eight numeric features, six targets with cardinalities (2,4,4,4,4,4).
SynthRecipe default_synth_recipe();

SynthConfig materialize_synth(const SynthRecipe& recipe);

/// Draw the full dataset. Per-user randomness comes from a substream
/// indexed by user id, so generation order is immaterial.
std::vector<UserRecord> synth_generate(const SynthConfig& cfg);

/// Exact posterior-argmax predictions under the known generative model.
/// Enumerates all target-class tuples (product of cardinalities <= 1e6).
class BayesOracle {
public:
    explicit BayesOracle(const SynthConfig& cfg);

    /// Per-target predicted class indices, schema target order.
    std::vector<std::uint32_t> predict(const UserRecord& record) const;

private:
    const SynthConfig& cfg_;
    std::vector<std::map<std::string, std::uint32_t, std::less<>>> token_ids_;
    std::size_t tuple_count_ = 1;
};

// ---------------------------------------------------------------------------
// Dataset preparation pipeline shared by training, baselines, and reports.

struct PreparedData {
    DatasetSchema schema;
    Vocabulary vocab;
    Normalizer normalizer;
    std::string fingerprint;  // content hash of the canonical JSONL form
    SplitRecords raw;
    std::vector<EncodedRecord> train, val, test;
};

/// Split, build the vocabulary and normalizer on the training slice, and
/// encode all three slices (numerics z-scored in place).
PreparedData prepare_dataset(std::vector<UserRecord> records, const DatasetSchema& schema,
                             double train_frac, double val_frac, double test_frac,
                             std::size_t min_freq, std::uint64_t seed);

/// Hex FNV-1a fingerprint of the canonical JSONL serialization.
std::string dataset_fingerprint(std::span<const UserRecord> records, const DatasetSchema& schema);

}  // namespace seqfuse
