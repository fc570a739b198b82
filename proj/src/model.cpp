#include "seqfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqfuse/errors.hpp"

namespace seqfuse {

using nlohmann::json;

void ModelConfig::validate(std::size_t space_count) const {
    if (embedding_dims.size() != space_count) {
        throw ConfigError("model: embedding_dims has " + std::to_string(embedding_dims.size()) +
                          " entries for " + std::to_string(space_count) + " sequence spaces");
    }
    for (std::size_t l : embedding_dims) {
        if (l < 1) throw ConfigError("model: embedding dims must be >= 1");
    }
    if (trunk_depth >= 1 && trunk_width < 1) {
        throw ConfigError("model: trunk_width must be >= 1 when trunk_depth >= 1");
    }
}

std::size_t UserModel::raw_dim() const {
    std::size_t d = schema.numeric_dim;
    for (std::size_t l : config.embedding_dims) d += l;
    return d;
}

std::size_t UserModel::deep_dim() const {
    return config.trunk_depth > 0 ? config.trunk_width : raw_dim();
}

std::vector<std::size_t> UserModel::head_target_indices() const {
    std::vector<std::size_t> idx;
    idx.reserve(head_targets.size());
    for (const auto& name : head_targets) idx.push_back(schema.target_index(name));
    return idx;
}

namespace {

// Sizes every weight container from schema, vocab, config, head_targets.
void allocate_weights(UserModel& m) {
    m.embeddings.clear();
    for (std::size_t s = 0; s < m.vocab.space_count(); ++s) {
        m.embeddings.emplace_back(m.config.embedding_dims[s], m.vocab.size(s));
    }
    m.trunk_weights.clear();
    m.trunk_biases.clear();
    std::size_t in_dim = m.raw_dim();
    for (std::size_t k = 0; k < m.config.trunk_depth; ++k) {
        m.trunk_weights.emplace_back(m.config.trunk_width, in_dim);
        m.trunk_biases.emplace_back(m.config.trunk_width, 0.0);
        in_dim = m.config.trunk_width;
    }
    m.head_weights.clear();
    m.head_biases.clear();
    const std::size_t h = m.deep_dim();
    for (const auto& name : m.head_targets) {
        const std::size_t card = m.schema.targets[m.schema.target_index(name)].classes.size();
        m.head_weights.emplace_back(card, h);
        m.head_biases.emplace_back(card, 0.0);
    }
}

void embed_into(const Matrix& g, std::span<const std::uint32_t> indices, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (indices.empty()) return;
    for (std::uint32_t idx : indices) {
        if (idx >= g.cols) {
            throw DataError("embed_sequence: token index " + std::to_string(idx) +
                            " out of range for vocabulary of " + std::to_string(g.cols));
        }
        for (std::size_t r = 0; r < g.rows; ++r) out[r] += g.at(r, idx);
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (double& v : out) v *= inv;
}

}  // namespace

UserModel init_model(const ModelConfig& cfg, const DatasetSchema& schema, const Vocabulary& vocab,
                     const Normalizer& normalizer) {
    schema.validate();
    cfg.validate(schema.sequence_names.size());
    if (vocab.space_count() != schema.sequence_names.size()) {
        throw ConfigError("model: vocabulary has " + std::to_string(vocab.space_count()) +
                          " spaces, schema has " + std::to_string(schema.sequence_names.size()));
    }

    UserModel m;
    m.schema = schema;
    m.vocab = vocab;
    m.normalizer = normalizer;
    m.config = cfg;
    for (const auto& t : schema.targets) m.head_targets.push_back(t.name);
    allocate_weights(m);

    Rng root(cfg.seed);
    for (std::size_t s = 0; s < m.embeddings.size(); ++s) {
        Rng rng = root.stream("embedding", s);
        for (double& w : m.embeddings[s].data) w = rng.uniform(-0.05, 0.05);
    }
    for (std::size_t k = 0; k < m.trunk_weights.size(); ++k) {
        Rng rng = root.stream("trunk", k);
        const double sd = std::sqrt(2.0 / static_cast<double>(m.trunk_weights[k].cols));
        for (double& w : m.trunk_weights[k].data) w = rng.normal(0.0, sd);
    }
    for (std::size_t j = 0; j < m.head_weights.size(); ++j) {
        Rng rng = root.stream("head", j);
        const double sd = std::sqrt(2.0 / static_cast<double>(m.head_weights[j].cols));
        for (double& w : m.head_weights[j].data) w = rng.normal(0.0, sd);
    }
    return m;
}

std::vector<double> embed_sequence(const Matrix& g, std::span<const std::uint32_t> indices) {
    std::vector<double> out(g.rows, 0.0);
    embed_into(g, indices, out);
    return out;
}

ForwardTrace forward(const UserModel& model, const EncodedRecord& record) {
    if (record.sequences.size() != model.embeddings.size()) {
        throw ConfigError("forward: record has " + std::to_string(record.sequences.size()) +
                          " sequence spaces, model expects " +
                          std::to_string(model.embeddings.size()));
    }
    if (record.numeric.size() != model.schema.numeric_dim) {
        throw ConfigError("forward: record has " + std::to_string(record.numeric.size()) +
                          " numeric features, model expects " +
                          std::to_string(model.schema.numeric_dim));
    }

    ForwardTrace trace;
    trace.record = &record;
    trace.raw.resize(model.raw_dim());

    std::size_t offset = 0;
    for (std::size_t s = 0; s < model.embeddings.size(); ++s) {
        const std::size_t l = model.embeddings[s].rows;
        embed_into(model.embeddings[s], record.sequences[s],
                   std::span<double>(trace.raw.data() + offset, l));
        offset += l;
    }
    std::copy(record.numeric.begin(), record.numeric.end(), trace.raw.begin() + offset);
    ensure_finite(trace.raw, "forward raw features");

    const std::vector<double>* input = &trace.raw;
    trace.hidden.reserve(model.trunk_weights.size());
    for (std::size_t k = 0; k < model.trunk_weights.size(); ++k) {
        std::vector<double> h(model.trunk_weights[k].rows);
        matvec(model.trunk_weights[k], *input, h);
        for (std::size_t r = 0; r < h.size(); ++r) {
            h[r] = std::max(h[r] + model.trunk_biases[k][r], 0.0);
        }
        trace.hidden.push_back(std::move(h));
        input = &trace.hidden.back();
    }

    const std::vector<double>& deep = *input;
    trace.probs.reserve(model.head_count());
    std::vector<double> logits;
    for (std::size_t j = 0; j < model.head_count(); ++j) {
        logits.assign(model.head_weights[j].rows, 0.0);
        matvec(model.head_weights[j], deep, logits);
        for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += model.head_biases[j][c];
        ensure_finite(logits, "forward head logits");
        trace.probs.push_back(softmax(logits));
    }
    return trace;
}

void backward_accumulate(const UserModel& model, const ForwardTrace& trace,
                         std::span<const std::uint32_t> labels, std::span<const double> weights,
                         Gradients& grads) {
    if (trace.record == nullptr) throw ConfigError("backward: trace has no record");
    if (labels.size() != model.head_count() || weights.size() != model.head_count()) {
        throw ConfigError("backward: need one label and one weight per head");
    }
    if (trace.hidden.size() != model.trunk_weights.size() ||
        trace.probs.size() != model.head_count() || trace.raw.size() != model.raw_dim()) {
        throw ConfigError("backward: trace does not match the model (stale trace?)");
    }

    const std::vector<double>& deep =
        model.config.trunk_depth > 0 ? trace.hidden.back() : trace.raw;

    std::vector<double> d_deep(deep.size(), 0.0);
    std::vector<double> d_logits;
    for (std::size_t j = 0; j < model.head_count(); ++j) {
        if (labels[j] >= trace.probs[j].size()) {
            throw ConfigError("backward: label out of range for head " + std::to_string(j));
        }
        if (weights[j] == 0.0) continue;
        d_logits = trace.probs[j];
        d_logits[labels[j]] -= 1.0;
        for (double& v : d_logits) v *= weights[j];
        outer_add(d_logits, deep, grads.head_weights[j]);
        for (std::size_t c = 0; c < d_logits.size(); ++c) grads.head_biases[j][c] += d_logits[c];
        matvec_transpose_add(model.head_weights[j], d_logits, d_deep);
    }

    std::vector<double> d_cur = std::move(d_deep);
    std::vector<double> d_prev;
    for (std::size_t k = model.trunk_weights.size(); k-- > 0;) {
        const std::vector<double>& act = trace.hidden[k];
        for (std::size_t r = 0; r < d_cur.size(); ++r) {
            if (act[r] <= 0.0) d_cur[r] = 0.0;
        }
        const std::vector<double>& input = k == 0 ? trace.raw : trace.hidden[k - 1];
        outer_add(d_cur, input, grads.trunk_weights[k]);
        for (std::size_t r = 0; r < d_cur.size(); ++r) grads.trunk_biases[k][r] += d_cur[r];
        d_prev.assign(input.size(), 0.0);
        matvec_transpose_add(model.trunk_weights[k], d_cur, d_prev);
        std::swap(d_cur, d_prev);
    }

    // d_cur is now the raw-representation gradient. Embedding columns pick
    // up (1/len) of their slice per occurrence; the numeric tail is input,
    // not parameters, and is dropped.
    std::size_t offset = 0;
    for (std::size_t s = 0; s < model.embeddings.size(); ++s) {
        Matrix& g = grads.embeddings[s];
        const std::size_t l = g.rows;
        const auto& indices = trace.record->sequences[s];
        if (!indices.empty()) {
            const double inv = 1.0 / static_cast<double>(indices.size());
            for (std::uint32_t idx : indices) {
                for (std::size_t r = 0; r < l; ++r) {
                    g.at(r, idx) += d_cur[offset + r] * inv;
                }
            }
        }
        offset += l;
    }
}

Gradients backward(const UserModel& model, const ForwardTrace& trace,
                   std::span<const std::uint32_t> labels, std::span<const double> weights) {
    Gradients grads = Gradients::zeros_like(model);
    backward_accumulate(model, trace, labels, weights, grads);
    return grads;
}

std::vector<std::uint32_t> predict_classes(const UserModel& model, const EncodedRecord& record) {
    const ForwardTrace trace = forward(model, record);
    std::vector<std::uint32_t> out;
    out.reserve(trace.probs.size());
    for (const auto& p : trace.probs) out.push_back(static_cast<std::uint32_t>(argmax(p)));
    return out;
}

// ---------------------------------------------------------------------------
// Gradients and weight enumeration

Gradients Gradients::zeros_like(const UserModel& model) {
    Gradients g;
    for (const auto& e : model.embeddings) g.embeddings.emplace_back(e.rows, e.cols);
    for (const auto& w : model.trunk_weights) g.trunk_weights.emplace_back(w.rows, w.cols);
    for (const auto& b : model.trunk_biases) g.trunk_biases.emplace_back(b.size(), 0.0);
    for (const auto& w : model.head_weights) g.head_weights.emplace_back(w.rows, w.cols);
    for (const auto& b : model.head_biases) g.head_biases.emplace_back(b.size(), 0.0);
    return g;
}

void Gradients::fill_zero() {
    for (auto span : weight_spans(*this)) std::fill(span.begin(), span.end(), 0.0);
}

void Gradients::scale(double factor) {
    for (auto span : weight_spans(*this)) {
        for (double& v : span) v *= factor;
    }
}

namespace {

template <class ModelT, class SpanT>
std::vector<std::pair<std::string, SpanT>> named_weights_impl(ModelT& m) {
    std::vector<std::pair<std::string, SpanT>> out;
    for (std::size_t s = 0; s < m.embeddings.size(); ++s) {
        out.emplace_back("embedding:" + m.schema.sequence_names[s], SpanT(m.embeddings[s].data));
    }
    for (std::size_t k = 0; k < m.trunk_weights.size(); ++k) {
        out.emplace_back("trunk:" + std::to_string(k) + ":weight", SpanT(m.trunk_weights[k].data));
        out.emplace_back("trunk:" + std::to_string(k) + ":bias", SpanT(m.trunk_biases[k]));
    }
    for (std::size_t j = 0; j < m.head_weights.size(); ++j) {
        out.emplace_back("head:" + m.head_targets[j] + ":weight", SpanT(m.head_weights[j].data));
        out.emplace_back("head:" + m.head_targets[j] + ":bias", SpanT(m.head_biases[j]));
    }
    return out;
}

template <class T, class SpanT>
std::vector<SpanT> weight_spans_impl(T& g) {
    std::vector<SpanT> out;
    for (auto& e : g.embeddings) out.emplace_back(e.data);
    for (std::size_t k = 0; k < g.trunk_weights.size(); ++k) {
        out.emplace_back(g.trunk_weights[k].data);
        out.emplace_back(g.trunk_biases[k]);
    }
    for (std::size_t j = 0; j < g.head_weights.size(); ++j) {
        out.emplace_back(g.head_weights[j].data);
        out.emplace_back(g.head_biases[j]);
    }
    return out;
}

}  // namespace

std::vector<std::pair<std::string, std::span<double>>> named_weights(UserModel& model) {
    return named_weights_impl<UserModel, std::span<double>>(model);
}

std::vector<std::pair<std::string, std::span<const double>>> named_weights(const UserModel& model) {
    return named_weights_impl<const UserModel, std::span<const double>>(model);
}

std::vector<std::span<double>> weight_spans(UserModel& model) {
    return weight_spans_impl<UserModel, std::span<double>>(model);
}

std::vector<std::span<double>> weight_spans(Gradients& grads) {
    return weight_spans_impl<Gradients, std::span<double>>(grads);
}

std::vector<std::span<const double>> weight_spans(const Gradients& grads) {
    return weight_spans_impl<const Gradients, std::span<const double>>(grads);
}

std::size_t param_count(const UserModel& model) {
    std::size_t n = 0;
    for (const auto& [name, span] : named_weights(model)) n += span.size();
    return n;
}

UserModel prune_to_single_head(const UserModel& model, std::string_view target) {
    std::size_t keep = model.head_targets.size();
    for (std::size_t j = 0; j < model.head_targets.size(); ++j) {
        if (model.head_targets[j] == target) keep = j;
    }
    if (keep == model.head_targets.size()) {
        std::string valid;
        for (const auto& name : model.head_targets) {
            if (!valid.empty()) valid += ", ";
            valid += name;
        }
        throw ConfigError("prune: unknown target '" + std::string(target) + "' (heads: " + valid +
                          ")");
    }
    UserModel pruned = model;
    pruned.head_targets = {model.head_targets[keep]};
    pruned.head_weights = {model.head_weights[keep]};
    pruned.head_biases = {model.head_biases[keep]};
    return pruned;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const UserModel& model, const std::filesystem::path& path) {
    json j;
    j["format_version"] = 1;
    j["schema"] = json::parse(model.schema.to_json_string());
    json vocab = json::array();
    for (std::size_t s = 0; s < model.vocab.space_count(); ++s) {
        vocab.push_back(model.vocab.tokens(s));
    }
    j["vocab"] = std::move(vocab);
    j["normalizer"] = {{"mean", model.normalizer.mean}, {"stddev", model.normalizer.stddev}};
    j["config"] = {{"embedding_dims", model.config.embedding_dims},
                   {"trunk_depth", model.config.trunk_depth},
                   {"trunk_width", model.config.trunk_width},
                   {"seed", model.config.seed}};
    j["head_targets"] = model.head_targets;
    j["param_count"] = param_count(model);
    json weights = json::object();
    for (const auto& [name, span] : named_weights(model)) {
        weights[name] = std::vector<double>(span.begin(), span.end());
    }
    j["weights"] = std::move(weights);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump() << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

UserModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();

    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + " is corrupt: " + e.what());
    }

    try {
        const auto version = j.at("format_version").get<int>();
        if (version != 1) {
            throw DataError("checkpoint " + path.string() + ": unsupported format_version " +
                            std::to_string(version));
        }
        UserModel m;
        m.schema = DatasetSchema::from_json_string(j.at("schema").dump());
        m.vocab = Vocabulary(j.at("vocab").get<std::vector<std::vector<std::string>>>());
        m.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
        m.normalizer.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
        const json& cfg = j.at("config");
        m.config.embedding_dims = cfg.at("embedding_dims").get<std::vector<std::size_t>>();
        m.config.trunk_depth = cfg.at("trunk_depth").get<std::size_t>();
        m.config.trunk_width = cfg.at("trunk_width").get<std::size_t>();
        m.config.seed = cfg.at("seed").get<std::uint64_t>();
        m.head_targets = j.at("head_targets").get<std::vector<std::string>>();

        m.config.validate(m.schema.sequence_names.size());
        if (m.vocab.space_count() != m.schema.sequence_names.size()) {
            throw DataError("checkpoint: vocabulary/schema space count mismatch");
        }
        allocate_weights(m);

        const json& weights = j.at("weights");
        std::size_t seen = 0;
        for (auto& [name, span] : named_weights(m)) {
            if (!weights.contains(name)) {
                throw DataError("checkpoint: missing weight array '" + name + "'");
            }
            const auto values = weights.at(name).get<std::vector<double>>();
            if (values.size() != span.size()) {
                throw DataError("checkpoint: weight array '" + name + "' has " +
                                std::to_string(values.size()) + " entries, expected " +
                                std::to_string(span.size()));
            }
            std::copy(values.begin(), values.end(), span.begin());
            ++seen;
        }
        if (weights.size() != seen) {
            throw DataError("checkpoint: unexpected extra weight arrays");
        }
        if (j.at("param_count").get<std::size_t>() != param_count(m)) {
            throw DataError("checkpoint: param_count does not match stored weights");
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + " is corrupt: " + e.what());
    }
}

}  // namespace seqfuse
