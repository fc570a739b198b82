#include "seqfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "seqfuse/errors.hpp"

namespace seqfuse {

using nlohmann::json;

namespace {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

std::string zero_pad(std::size_t value, std::size_t width) {
    std::string s = std::to_string(value);
    if (s.size() < width) s.insert(0, width - s.size(), '0');
    return s;
}

void check_distribution(std::span<const double> p, const std::string& what) {
    if (p.empty()) throw ConfigError(what + ": empty distribution");
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(what + ": invalid probability");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError(what + ": probabilities sum to " + std::to_string(total));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// DatasetSchema

void DatasetSchema::validate() const {
    if (sequence_names.empty()) throw ConfigError("schema: need at least one sequence space");
    if (targets.empty()) throw ConfigError("schema: need at least one target");
    std::vector<std::string> names = sequence_names;
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
        throw ConfigError("schema: duplicate sequence name");
    }
    names.clear();
    for (const auto& t : targets) {
        names.push_back(t.name);
        if (t.classes.size() < 2) {
            throw ConfigError("schema: target '" + t.name + "' needs at least 2 classes");
        }
        std::vector<std::string> cls = t.classes;
        std::sort(cls.begin(), cls.end());
        if (std::adjacent_find(cls.begin(), cls.end()) != cls.end()) {
            throw ConfigError("schema: duplicate class label in target '" + t.name + "'");
        }
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
        throw ConfigError("schema: duplicate target name");
    }
}

std::size_t DatasetSchema::sequence_index(std::string_view name) const {
    for (std::size_t i = 0; i < sequence_names.size(); ++i) {
        if (sequence_names[i] == name) return i;
    }
    throw ConfigError("schema: unknown sequence space '" + std::string(name) + "'");
}

std::size_t DatasetSchema::target_index(std::string_view name) const {
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].name == name) return i;
    }
    throw ConfigError("schema: unknown target '" + std::string(name) + "'");
}

std::size_t DatasetSchema::class_index(std::size_t target, std::string_view label) const {
    const auto& cls = targets[target].classes;
    for (std::size_t i = 0; i < cls.size(); ++i) {
        if (cls[i] == label) return i;
    }
    throw ConfigError("schema: unknown class '" + std::string(label) + "' for target '" +
                      targets[target].name + "'");
}

std::string DatasetSchema::to_json_string() const {
    json j;
    j["sequences"] = sequence_names;
    j["numeric_dim"] = numeric_dim;
    j["targets"] = json::array();
    for (const auto& t : targets) {
        j["targets"].push_back({{"name", t.name}, {"classes", t.classes}});
    }
    return j.dump(2);
}

DatasetSchema DatasetSchema::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("schema: parse error: ") + e.what());
    }
    try {
        DatasetSchema s;
        s.sequence_names = j.at("sequences").get<std::vector<std::string>>();
        s.numeric_dim = j.at("numeric_dim").get<std::size_t>();
        for (const auto& t : j.at("targets")) {
            s.targets.push_back(
                {t.at("name").get<std::string>(), t.at("classes").get<std::vector<std::string>>()});
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("schema: ") + e.what());
    }
}

DatasetSchema DatasetSchema::load(const std::filesystem::path& path) {
    return from_json_string(read_text_file(path));
}

void DatasetSchema::save(const std::filesystem::path& path) const {
    write_text_file(path, to_json_string() + "\n");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::vector<std::string>> tokens_per_space)
    : tokens_(std::move(tokens_per_space)) {
    index_.resize(tokens_.size());
    for (std::size_t s = 0; s < tokens_.size(); ++s) {
        for (std::size_t i = 0; i < tokens_[s].size(); ++i) {
            auto [it, inserted] = index_[s].emplace(tokens_[s][i], static_cast<std::uint32_t>(i + 1));
            if (!inserted) throw DataError("vocabulary: duplicate token '" + tokens_[s][i] + "'");
        }
    }
}

std::uint32_t Vocabulary::index_of(std::size_t space, std::string_view token) const {
    const auto& map = index_[space];
    auto it = map.find(token);
    return it == map.end() ? kUnk : it->second;
}

Vocabulary build_vocab(std::span<const UserRecord> records, const DatasetSchema& schema,
                       std::size_t min_freq) {
    const std::size_t cutoff = std::max<std::size_t>(min_freq, 1);
    std::vector<std::vector<std::string>> tokens_per_space;
    tokens_per_space.reserve(schema.sequence_names.size());
    for (const auto& space : schema.sequence_names) {
        std::map<std::string, std::size_t> freq;
        for (const auto& rec : records) {
            auto it = rec.sequences.find(space);
            if (it == rec.sequences.end()) continue;
            for (const auto& tok : it->second) ++freq[tok];
        }
        std::vector<std::pair<std::string, std::size_t>> items;
        items.reserve(freq.size());
        for (auto& [tok, n] : freq) {
            if (n >= cutoff) items.emplace_back(tok, n);
        }
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> ordered;
        ordered.reserve(items.size());
        for (auto& [tok, n] : items) ordered.push_back(tok);
        tokens_per_space.push_back(std::move(ordered));
    }
    return Vocabulary(std::move(tokens_per_space));
}

// ---------------------------------------------------------------------------
// JSONL ingestion

namespace {

UserRecord record_from_json(const json& j, const DatasetSchema& schema, const std::string& where) {
    if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "sequences" && key != "numeric" && key != "targets") {
            throw DataError(where + ": unknown key '" + key + "'");
        }
    }
    UserRecord rec;

    if (!j.contains("sequences")) throw DataError(where + ": missing field 'sequences'");
    const json& seqs = j["sequences"];
    if (!seqs.is_object()) throw DataError(where + ": 'sequences' must be an object");
    for (const auto& [key, value] : seqs.items()) {
        bool known = std::find(schema.sequence_names.begin(), schema.sequence_names.end(), key) !=
                     schema.sequence_names.end();
        if (!known) throw DataError(where + ": unknown sequence space '" + key + "'");
        if (!value.is_array()) throw DataError(where + ": sequence '" + key + "' must be an array");
        std::vector<std::string> toks;
        toks.reserve(value.size());
        for (const auto& t : value) {
            if (!t.is_string()) throw DataError(where + ": sequence '" + key + "' has a non-string token");
            toks.push_back(t.get<std::string>());
        }
        rec.sequences.emplace(key, std::move(toks));
    }
    for (const auto& name : schema.sequence_names) {
        if (!rec.sequences.count(name)) {
            throw DataError(where + ": missing sequence space '" + name + "'");
        }
    }

    if (!j.contains("numeric")) throw DataError(where + ": missing field 'numeric'");
    const json& num = j["numeric"];
    if (!num.is_array()) throw DataError(where + ": 'numeric' must be an array");
    for (const auto& v : num) {
        if (!v.is_number()) throw DataError(where + ": 'numeric' has a non-number entry");
        rec.numeric.push_back(v.get<double>());
    }
    if (rec.numeric.size() != schema.numeric_dim) {
        throw DataError(where + ": 'numeric' has length " + std::to_string(rec.numeric.size()) +
                        ", schema requires " + std::to_string(schema.numeric_dim));
    }

    if (!j.contains("targets")) throw DataError(where + ": missing field 'targets'");
    const json& tgts = j["targets"];
    if (!tgts.is_object()) throw DataError(where + ": 'targets' must be an object");
    for (const auto& [key, value] : tgts.items()) {
        bool known = false;
        for (const auto& t : schema.targets) known = known || t.name == key;
        if (!known) throw DataError(where + ": unknown target '" + key + "'");
        if (!value.is_string()) throw DataError(where + ": target '" + key + "' must be a string");
        rec.targets.emplace(key, value.get<std::string>());
    }
    for (std::size_t ti = 0; ti < schema.targets.size(); ++ti) {
        const auto& t = schema.targets[ti];
        auto it = rec.targets.find(t.name);
        if (it == rec.targets.end()) {
            throw DataError(where + ": missing target '" + t.name + "'");
        }
        schema.class_index(ti, it->second);  // validates the label
    }
    return rec;
}

}  // namespace

std::vector<UserRecord> load_jsonl(const std::filesystem::path& path, const DatasetSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<UserRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(where + ": parse error: " + e.what());
        }
        try {
            records.push_back(record_from_json(j, schema, where));
        } catch (const ConfigError& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    return records;
}

std::string record_to_json_line(const UserRecord& record, const DatasetSchema& schema) {
    json j;
    json seqs = json::object();
    for (const auto& name : schema.sequence_names) {
        auto it = record.sequences.find(name);
        seqs[name] = it == record.sequences.end() ? std::vector<std::string>{} : it->second;
    }
    j["sequences"] = std::move(seqs);
    j["numeric"] = record.numeric;
    json tgts = json::object();
    for (const auto& t : schema.targets) {
        auto it = record.targets.find(t.name);
        tgts[t.name] = it == record.targets.end() ? "" : it->second;
    }
    j["targets"] = std::move(tgts);
    return j.dump();
}

void save_jsonl(const std::filesystem::path& path, std::span<const UserRecord> records,
                const DatasetSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& rec : records) {
        out << record_to_json_line(rec, schema) << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Encoding, splitting, normalization

EncodedRecord encode(const UserRecord& record, const Vocabulary& vocab,
                     const DatasetSchema& schema) {
    EncodedRecord enc;
    enc.sequences.resize(schema.sequence_names.size());
    for (std::size_t s = 0; s < schema.sequence_names.size(); ++s) {
        auto it = record.sequences.find(schema.sequence_names[s]);
        if (it == record.sequences.end()) continue;
        enc.sequences[s].reserve(it->second.size());
        for (const auto& tok : it->second) enc.sequences[s].push_back(vocab.index_of(s, tok));
    }
    enc.numeric = record.numeric;
    enc.targets.resize(schema.targets.size());
    for (std::size_t t = 0; t < schema.targets.size(); ++t) {
        const auto& label = record.targets.at(schema.targets[t].name);
        enc.targets[t] = static_cast<std::uint32_t>(schema.class_index(t, label));
    }
    return enc;
}

SplitRecords split(std::vector<UserRecord> records, double train_frac, double val_frac,
                   double test_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0)) {
        throw ConfigError("split: fractions must be positive");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split: fractions must sum to 1");
    }
    const std::size_t n = records.size();
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
    if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
        throw ConfigError("split: a slice would be empty with " + std::to_string(n) + " records");
    }
    const std::size_t n_train = n - n_val - n_test;

    Rng rng = Rng(seed).stream("split-shuffle");
    rng.shuffle(records);

    SplitRecords out;
    out.train.assign(std::make_move_iterator(records.begin()),
                     std::make_move_iterator(records.begin() + n_train));
    out.val.assign(std::make_move_iterator(records.begin() + n_train),
                   std::make_move_iterator(records.begin() + n_train + n_val));
    out.test.assign(std::make_move_iterator(records.begin() + n_train + n_val),
                    std::make_move_iterator(records.end()));
    return out;
}

Normalizer fit_normalizer(std::span<const UserRecord> train, std::size_t numeric_dim) {
    if (train.empty()) throw ConfigError("fit_normalizer: empty training split");
    Normalizer norm;
    norm.mean.assign(numeric_dim, 0.0);
    norm.stddev.assign(numeric_dim, 1.0);
    if (numeric_dim == 0) return norm;

    const double n = static_cast<double>(train.size());
    for (const auto& rec : train) {
        for (std::size_t d = 0; d < numeric_dim; ++d) norm.mean[d] += rec.numeric[d];
    }
    for (double& m : norm.mean) m /= n;
    std::vector<double> var(numeric_dim, 0.0);
    for (const auto& rec : train) {
        for (std::size_t d = 0; d < numeric_dim; ++d) {
            const double diff = rec.numeric[d] - norm.mean[d];
            var[d] += diff * diff;
        }
    }
    for (std::size_t d = 0; d < numeric_dim; ++d) {
        norm.stddev[d] = std::max(std::sqrt(var[d] / n), 1e-8);
    }
    return norm;
}

void Normalizer::apply(std::span<double> numeric) const {
    if (numeric.size() != mean.size()) {
        throw ConfigError("normalizer: expected " + std::to_string(mean.size()) +
                          " numeric features, got " + std::to_string(numeric.size()));
    }
    for (std::size_t d = 0; d < numeric.size(); ++d) {
        numeric[d] = (numeric[d] - mean[d]) / stddev[d];
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
    if (n_users == 0) throw ConfigError("synth: n_users must be positive");
    if (!(numeric_noise_sigma >= 0.0)) throw ConfigError("synth: sigma must be >= 0");
    if (sequences.empty()) throw ConfigError("synth: need at least one sequence space");
    if (targets.empty()) throw ConfigError("synth: need at least one target");
    for (const auto& s : sequences) {
        if (s.tokens.empty()) throw ConfigError("synth: space '" + s.name + "' has no tokens");
        if (!(s.mean_length > 0.0)) throw ConfigError("synth: space '" + s.name + "' needs mean_length > 0");
        if (!(s.background_mix >= 0.0 && s.background_mix <= 1.0)) {
            throw ConfigError("synth: space '" + s.name + "' background_mix must be in [0,1]");
        }
        if (s.background.size() != s.tokens.size()) {
            throw ConfigError("synth: space '" + s.name + "' background length mismatch");
        }
        check_distribution(s.background, "synth: space '" + s.name + "' background");
    }
    for (const auto& t : targets) {
        if (t.classes.size() < 2) throw ConfigError("synth: target '" + t.name + "' needs >= 2 classes");
        if (t.marginal.size() != t.classes.size()) {
            throw ConfigError("synth: target '" + t.name + "' marginal length mismatch");
        }
        check_distribution(t.marginal, "synth: target '" + t.name + "' marginal");
        if (t.topics.size() != sequences.size()) {
            throw ConfigError("synth: target '" + t.name + "' topic space count mismatch");
        }
        for (std::size_t s = 0; s < sequences.size(); ++s) {
            const Matrix& topic = t.topics[s];
            if (topic.rows != t.classes.size() || topic.cols != sequences[s].tokens.size()) {
                throw ConfigError("synth: target '" + t.name + "' topic shape mismatch for space '" +
                                  sequences[s].name + "'");
            }
            for (std::size_t c = 0; c < topic.rows; ++c) {
                check_distribution(topic.row(c), "synth: topic of '" + t.name + "' class " +
                                                     std::to_string(c) + " in '" + sequences[s].name + "'");
            }
        }
        if (t.numeric_means.rows != t.classes.size() || t.numeric_means.cols != numeric_dim) {
            throw ConfigError("synth: target '" + t.name + "' numeric_means shape mismatch");
        }
    }
}

DatasetSchema SynthConfig::schema() const {
    DatasetSchema s;
    for (const auto& seq : sequences) s.sequence_names.push_back(seq.name);
    s.numeric_dim = numeric_dim;
    for (const auto& t : targets) s.targets.push_back({t.name, t.classes});
    return s;
}

SynthRecipe default_synth_recipe() {
    SynthRecipe r;
    r.seed = 42;
    r.n_users = 20000;
    r.numeric_dim = 8;
    r.numeric_noise_sigma = 1.0;
    r.topic_strength = 1.0;
    r.numeric_mean_scale = 0.35;
    r.spaces = {
        {"category", 50, 40.0, 0.5},
        {"merchant", 500, 40.0, 0.5},
    };
    r.targets = {
        {"gender", {"male", "female"}, {0.68, 0.32}},
        {"marital_status", {"single", "divorced", "partner", "married"}, {0.31, 0.035, 0.20, 0.455}},
        {"household_adults", {"1", "2", "3", "4plus"}, {0.25, 0.576, 0.12, 0.054}},
        {"household_children", {"0", "1", "2", "3plus"}, {0.501, 0.20, 0.20, 0.099}},
        {"education_level", {"high_school", "professional", "college", "post_grad"},
         {0.12, 0.094, 0.686, 0.10}},
        {"residential_status", {"own", "rent", "family", "other"}, {0.428, 0.35, 0.15, 0.072}},
    };
    return r;
}

SynthConfig materialize_synth(const SynthRecipe& recipe) {
    SynthConfig cfg;
    cfg.seed = recipe.seed;
    cfg.n_users = recipe.n_users;
    cfg.numeric_dim = recipe.numeric_dim;
    cfg.numeric_noise_sigma = recipe.numeric_noise_sigma;

    Rng root(recipe.seed);

    for (const auto& sp : recipe.spaces) {
        SynthSequenceSpec spec;
        spec.name = sp.name;
        spec.mean_length = sp.mean_length;
        spec.background_mix = sp.background_mix;
        const std::size_t width = std::max<std::size_t>(3, std::to_string(sp.vocab_size - 1).size());
        spec.tokens.reserve(sp.vocab_size);
        for (std::size_t i = 0; i < sp.vocab_size; ++i) {
            spec.tokens.push_back(sp.name + "_" + zero_pad(i, width));
        }
        // Zipf background: realistic skew, and a deterministic frequency order.
        spec.background.resize(sp.vocab_size);
        double total = 0.0;
        for (std::size_t i = 0; i < sp.vocab_size; ++i) {
            spec.background[i] = 1.0 / static_cast<double>(i + 1);
            total += spec.background[i];
        }
        for (double& b : spec.background) b /= total;
        cfg.sequences.push_back(std::move(spec));
    }

    for (const auto& tg : recipe.targets) {
        SynthTargetSpec spec;
        spec.name = tg.name;
        spec.classes = tg.classes;
        spec.marginal = tg.marginal;
        for (std::size_t s = 0; s < cfg.sequences.size(); ++s) {
            const auto& bg = cfg.sequences[s].background;
            Matrix topic(tg.classes.size(), bg.size());
            for (std::size_t c = 0; c < tg.classes.size(); ++c) {
                Rng rng = root.stream("topic:" + tg.name + ":" + cfg.sequences[s].name, c);
                double total = 0.0;
                for (std::size_t t = 0; t < bg.size(); ++t) {
                    topic.at(c, t) = bg[t] * std::exp(recipe.topic_strength * rng.normal());
                    total += topic.at(c, t);
                }
                for (std::size_t t = 0; t < bg.size(); ++t) topic.at(c, t) /= total;
            }
            spec.topics.push_back(std::move(topic));
        }
        spec.numeric_means = Matrix(tg.classes.size(), recipe.numeric_dim);
        for (std::size_t c = 0; c < tg.classes.size(); ++c) {
            Rng rng = root.stream("numeric-means:" + tg.name, c);
            for (std::size_t d = 0; d < recipe.numeric_dim; ++d) {
                spec.numeric_means.at(c, d) = rng.normal(0.0, recipe.numeric_mean_scale);
            }
        }
        cfg.targets.push_back(std::move(spec));
    }

    cfg.validate();
    return cfg;
}

std::vector<UserRecord> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t m = cfg.targets.size();
    Rng root(cfg.seed);

    std::vector<UserRecord> records(cfg.n_users);
    std::vector<double> mixture;
    std::vector<double> cumulative;
    for (std::size_t u = 0; u < cfg.n_users; ++u) {
        Rng rng = root.stream("user", u);
        UserRecord& rec = records[u];

        std::vector<std::size_t> cls(m);
        for (std::size_t j = 0; j < m; ++j) {
            cls[j] = rng.categorical(cfg.targets[j].marginal);
            rec.targets[cfg.targets[j].name] = cfg.targets[j].classes[cls[j]];
        }

        rec.numeric.assign(cfg.numeric_dim, 0.0);
        for (std::size_t d = 0; d < cfg.numeric_dim; ++d) {
            double mu = 0.0;
            for (std::size_t j = 0; j < m; ++j) mu += cfg.targets[j].numeric_means.at(cls[j], d);
            rec.numeric[d] = mu + cfg.numeric_noise_sigma * rng.normal();
        }

        for (std::size_t s = 0; s < cfg.sequences.size(); ++s) {
            const auto& space = cfg.sequences[s];
            const std::size_t v = space.tokens.size();
            const double lambda = space.background_mix;
            mixture.assign(v, 0.0);
            for (std::size_t t = 0; t < v; ++t) mixture[t] = lambda * space.background[t];
            const double w = (1.0 - lambda) / static_cast<double>(m);
            for (std::size_t j = 0; j < m; ++j) {
                const Matrix& topic = cfg.targets[j].topics[s];
                const double* row = topic.data.data() + cls[j] * v;
                for (std::size_t t = 0; t < v; ++t) mixture[t] += w * row[t];
            }
            cumulative.resize(v);
            double acc = 0.0;
            for (std::size_t t = 0; t < v; ++t) {
                acc += mixture[t];
                cumulative[t] = acc;
            }
            const std::uint64_t len = rng.poisson(space.mean_length);
            auto& seq = rec.sequences[space.name];
            seq.reserve(len);
            for (std::uint64_t l = 0; l < len; ++l) {
                const double u01 = rng.next_double() * acc;
                const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u01);
                const std::size_t idx =
                    std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), v - 1);
                seq.push_back(space.tokens[idx]);
            }
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Bayes oracle

BayesOracle::BayesOracle(const SynthConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    token_ids_.resize(cfg.sequences.size());
    for (std::size_t s = 0; s < cfg.sequences.size(); ++s) {
        for (std::size_t t = 0; t < cfg.sequences[s].tokens.size(); ++t) {
            token_ids_[s].emplace(cfg.sequences[s].tokens[t], static_cast<std::uint32_t>(t));
        }
    }
    tuple_count_ = 1;
    for (const auto& t : cfg.targets) {
        tuple_count_ *= t.classes.size();
        if (tuple_count_ > 1000000) {
            throw ConfigError("bayes oracle: enumeration bound exceeded (more than 1e6 class tuples)");
        }
    }
}

std::vector<std::uint32_t> BayesOracle::predict(const UserRecord& record) const {
    const std::size_t m = cfg_.targets.size();
    const std::size_t p = cfg_.numeric_dim;

    // Unique token ids + counts per space.
    struct TokenCount {
        std::uint32_t id;
        std::uint32_t count;
    };
    std::vector<std::vector<TokenCount>> present(cfg_.sequences.size());
    for (std::size_t s = 0; s < cfg_.sequences.size(); ++s) {
        auto it = record.sequences.find(cfg_.sequences[s].name);
        if (it == record.sequences.end()) continue;
        std::map<std::uint32_t, std::uint32_t> counts;
        for (const auto& tok : it->second) {
            auto tid = token_ids_[s].find(tok);
            if (tid == token_ids_[s].end()) {
                throw DataError("bayes oracle: token '" + tok + "' is not in the generator vocabulary");
            }
            ++counts[tid->second];
        }
        present[s].reserve(counts.size());
        for (auto [id, n] : counts) present[s].push_back({id, n});
    }

    std::vector<std::size_t> cards(m);
    std::vector<std::size_t> strides(m);
    std::size_t stride = 1;
    for (std::size_t j = m; j-- > 0;) {
        cards[j] = cfg_.targets[j].classes.size();
        strides[j] = stride;
        stride *= cards[j];
    }

    std::vector<std::vector<double>> log_marginal(m);
    for (std::size_t j = 0; j < m; ++j) {
        log_marginal[j].resize(cards[j]);
        for (std::size_t c = 0; c < cards[j]; ++c) {
            log_marginal[j][c] = std::log(std::max(cfg_.targets[j].marginal[c], 1e-300));
        }
    }

    const double sigma = std::max(cfg_.numeric_noise_sigma, 1e-9);
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    std::vector<double> scores(tuple_count_);
    std::vector<std::size_t> digits(m, 0);
    std::vector<double> mu(p);

    for (std::size_t tuple = 0; tuple < tuple_count_; ++tuple) {
        double score = 0.0;
        for (std::size_t j = 0; j < m; ++j) score += log_marginal[j][digits[j]];

        if (p > 0) {
            std::fill(mu.begin(), mu.end(), 0.0);
            for (std::size_t j = 0; j < m; ++j) {
                const double* row = cfg_.targets[j].numeric_means.data.data() + digits[j] * p;
                for (std::size_t d = 0; d < p; ++d) mu[d] += row[d];
            }
            double sse = 0.0;
            for (std::size_t d = 0; d < p; ++d) {
                const double diff = record.numeric[d] - mu[d];
                sse += diff * diff;
            }
            score -= sse * inv_two_sigma2;
        }

        // Token likelihood: product over occurrences with exponent tracking,
        // a single log per tuple.
        double prod = 1.0;
        long exp_acc = 0;
        for (std::size_t s = 0; s < cfg_.sequences.size(); ++s) {
            if (present[s].empty()) continue;
            const auto& space = cfg_.sequences[s];
            const double lambda = space.background_mix;
            const double w = (1.0 - lambda) / static_cast<double>(m);
            const std::size_t v = space.tokens.size();
            for (const auto& tc : present[s]) {
                double mix = lambda * space.background[tc.id];
                for (std::size_t j = 0; j < m; ++j) {
                    mix += w * cfg_.targets[j].topics[s].data[digits[j] * v + tc.id];
                }
                mix = std::max(mix, 1e-300);
                for (std::uint32_t rep = 0; rep < tc.count; ++rep) {
                    prod *= mix;
                    if (prod < 1e-280) {
                        int e = 0;
                        prod = std::frexp(prod, &e);
                        exp_acc += e;
                    }
                }
            }
        }
        score += std::log(prod) + static_cast<double>(exp_acc) * std::numbers::ln2;
        scores[tuple] = score;

        for (std::size_t j = m; j-- > 0;) {
            if (++digits[j] < cards[j]) break;
            digits[j] = 0;
        }
    }

    double max_score = scores[0];
    for (double s : scores) max_score = std::max(max_score, s);

    std::vector<std::vector<double>> posterior(m);
    for (std::size_t j = 0; j < m; ++j) posterior[j].assign(cards[j], 0.0);
    for (std::size_t tuple = 0; tuple < tuple_count_; ++tuple) {
        const double w = std::exp(scores[tuple] - max_score);
        for (std::size_t j = 0; j < m; ++j) {
            posterior[j][(tuple / strides[j]) % cards[j]] += w;
        }
    }

    std::vector<std::uint32_t> pred(m);
    for (std::size_t j = 0; j < m; ++j) {
        pred[j] = static_cast<std::uint32_t>(argmax(posterior[j]));
    }
    return pred;
}

// ---------------------------------------------------------------------------
// SynthConfig JSON

std::string SynthConfig::to_json_string() const {
    json j;
    j["seed"] = seed;
    j["n_users"] = n_users;
    j["numeric_dim"] = numeric_dim;
    j["numeric_noise_sigma"] = numeric_noise_sigma;
    j["sequences"] = json::array();
    for (const auto& s : sequences) {
        j["sequences"].push_back({{"name", s.name},
                                  {"tokens", s.tokens},
                                  {"mean_length", s.mean_length},
                                  {"background_mix", s.background_mix},
                                  {"background", s.background}});
    }
    j["targets"] = json::array();
    for (const auto& t : targets) {
        json jt;
        jt["name"] = t.name;
        jt["classes"] = t.classes;
        jt["marginal"] = t.marginal;
        json topics = json::object();
        for (std::size_t s = 0; s < sequences.size(); ++s) {
            json rows = json::array();
            for (std::size_t c = 0; c < t.classes.size(); ++c) {
                rows.push_back(std::vector<double>(t.topics[s].row(c).begin(), t.topics[s].row(c).end()));
            }
            topics[sequences[s].name] = std::move(rows);
        }
        jt["topics"] = std::move(topics);
        json means = json::array();
        for (std::size_t c = 0; c < t.classes.size(); ++c) {
            means.push_back(
                std::vector<double>(t.numeric_means.row(c).begin(), t.numeric_means.row(c).end()));
        }
        jt["numeric_means"] = std::move(means);
        j["targets"].push_back(std::move(jt));
    }
    return j.dump();
}

SynthConfig SynthConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("synth config: parse error: ") + e.what());
    }
    try {
        SynthConfig cfg;
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.n_users = j.at("n_users").get<std::size_t>();
        cfg.numeric_dim = j.at("numeric_dim").get<std::size_t>();
        cfg.numeric_noise_sigma = j.at("numeric_noise_sigma").get<double>();
        for (const auto& js : j.at("sequences")) {
            SynthSequenceSpec s;
            s.name = js.at("name").get<std::string>();
            s.tokens = js.at("tokens").get<std::vector<std::string>>();
            s.mean_length = js.at("mean_length").get<double>();
            s.background_mix = js.at("background_mix").get<double>();
            s.background = js.at("background").get<std::vector<double>>();
            cfg.sequences.push_back(std::move(s));
        }
        for (const auto& jt : j.at("targets")) {
            SynthTargetSpec t;
            t.name = jt.at("name").get<std::string>();
            t.classes = jt.at("classes").get<std::vector<std::string>>();
            t.marginal = jt.at("marginal").get<std::vector<double>>();
            for (const auto& s : cfg.sequences) {
                const auto rows = jt.at("topics").at(s.name).get<std::vector<std::vector<double>>>();
                Matrix topic(rows.size(), s.tokens.size());
                for (std::size_t c = 0; c < rows.size(); ++c) {
                    if (rows[c].size() != s.tokens.size()) {
                        throw DataError("synth config: topic row length mismatch");
                    }
                    std::copy(rows[c].begin(), rows[c].end(), topic.row(c).begin());
                }
                t.topics.push_back(std::move(topic));
            }
            const auto means = jt.at("numeric_means").get<std::vector<std::vector<double>>>();
            t.numeric_means = Matrix(means.size(), cfg.numeric_dim);
            for (std::size_t c = 0; c < means.size(); ++c) {
                if (means[c].size() != cfg.numeric_dim) {
                    throw DataError("synth config: numeric_means row length mismatch");
                }
                std::copy(means[c].begin(), means[c].end(), t.numeric_means.row(c).begin());
            }
            cfg.targets.push_back(std::move(t));
        }
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw DataError(std::string("synth config: ") + e.what());
    }
}

SynthConfig SynthConfig::load(const std::filesystem::path& path) {
    return from_json_string(read_text_file(path));
}

void SynthConfig::save(const std::filesystem::path& path) const {
    write_text_file(path, to_json_string() + "\n");
}

// ---------------------------------------------------------------------------
// Pipeline

std::string dataset_fingerprint(std::span<const UserRecord> records, const DatasetSchema& schema) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix_bytes = [&h](std::string_view bytes) {
        for (char ch : bytes) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001B3ull;
        }
    };
    for (const auto& rec : records) {
        mix_bytes(record_to_json_line(rec, schema));
        mix_bytes("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

PreparedData prepare_dataset(std::vector<UserRecord> records, const DatasetSchema& schema,
                             double train_frac, double val_frac, double test_frac,
                             std::size_t min_freq, std::uint64_t seed) {
    schema.validate();
    PreparedData prep;
    prep.schema = schema;
    prep.fingerprint = dataset_fingerprint(records, schema);
    prep.raw = split(std::move(records), train_frac, val_frac, test_frac, seed);
    prep.vocab = build_vocab(prep.raw.train, schema, min_freq);
    prep.normalizer = fit_normalizer(prep.raw.train, schema.numeric_dim);

    auto encode_all = [&](const std::vector<UserRecord>& recs) {
        std::vector<EncodedRecord> out;
        out.reserve(recs.size());
        for (const auto& r : recs) {
            EncodedRecord enc = encode(r, prep.vocab, schema);
            prep.normalizer.apply(enc.numeric);
            out.push_back(std::move(enc));
        }
        return out;
    };
    prep.train = encode_all(prep.raw.train);
    prep.val = encode_all(prep.raw.val);
    prep.test = encode_all(prep.raw.test);
    return prep;
}

}  // namespace seqfuse
