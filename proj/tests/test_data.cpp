#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "seqfuse/data.hpp"
#include "seqfuse/errors.hpp"

using namespace seqfuse;

TEST_SUITE_BEGIN("data");

namespace {

DatasetSchema tiny_schema() {
    DatasetSchema schema;
    schema.sequence_names = {"category", "merchant"};
    schema.numeric_dim = 2;
    schema.targets = {{"gender", {"F", "M"}}, {"size", {"S", "M", "L"}}};
    return schema;
}

UserRecord sample_record() {
    UserRecord rec;
    rec.sequences["category"] = {"food", "food", "travel"};
    rec.sequences["merchant"] = {"acme"};
    rec.numeric = {1.5, -0.5};
    rec.targets["gender"] = "F";
    rec.targets["size"] = "L";
    return rec;
}

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::path(SEQFUSE_TEST_TMPDIR) / "data";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("schema validates and round-trips through JSON") {
    const DatasetSchema schema = tiny_schema();
    CHECK_NOTHROW(schema.validate());
    const DatasetSchema back = DatasetSchema::from_json_string(schema.to_json_string());
    CHECK(back == schema);
    CHECK(schema.sequence_index("merchant") == 1);
    CHECK(schema.target_index("size") == 1);
    CHECK(schema.class_index(1, "M") == 1);
    CHECK_THROWS_AS(schema.sequence_index("nope"), ConfigError);
    CHECK_THROWS_AS(schema.class_index(0, "X"), ConfigError);
}

TEST_CASE("schema rejects duplicates and degenerate targets") {
    DatasetSchema schema = tiny_schema();
    schema.sequence_names = {"category", "category"};
    CHECK_THROWS_AS(schema.validate(), ConfigError);

    schema = tiny_schema();
    schema.targets.push_back({"gender", {"a", "b"}});
    CHECK_THROWS_AS(schema.validate(), ConfigError);

    schema = tiny_schema();
    schema.targets[0].classes = {"only"};
    CHECK_THROWS_AS(schema.validate(), ConfigError);

    schema = tiny_schema();
    schema.targets[0].classes = {"F", "F"};
    CHECK_THROWS_AS(schema.validate(), ConfigError);
}

TEST_CASE("jsonl round-trip preserves records") {
    const DatasetSchema schema = tiny_schema();
    std::vector<UserRecord> records = {sample_record()};
    UserRecord second;
    second.sequences["category"] = {};
    second.sequences["merchant"] = {"x", "y"};
    second.numeric = {0.0, 0.0};
    second.targets["gender"] = "M";
    second.targets["size"] = "S";
    records.push_back(second);

    const auto path = temp_dir() / "roundtrip.jsonl";
    save_jsonl(path, records, schema);
    const std::vector<UserRecord> back = load_jsonl(path, schema);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == records[0]);
    CHECK(back[1] == records[1]);
}

TEST_CASE("jsonl loader reports the offending line") {
    const DatasetSchema schema = tiny_schema();
    const auto path = temp_dir() / "corrupt.jsonl";
    const std::string good = record_to_json_line(sample_record(), schema);
    write_file(path, good + "\n" + good + "\nthis is not json\n");
    try {
        load_jsonl(path, schema);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("jsonl loader rejects structural problems") {
    const DatasetSchema schema = tiny_schema();
    const auto path = temp_dir() / "bad.jsonl";

    SUBCASE("unknown key") {
        write_file(path, R"({"sequences":{"category":[],"merchant":[]},"numeric":[0,0],)"
                         R"("targets":{"gender":"F","size":"S"},"extra":1})" "\n");
        CHECK_THROWS_AS(load_jsonl(path, schema), DataError);
    }
    SUBCASE("missing numeric entry") {
        write_file(path, R"({"sequences":{"category":[],"merchant":[]},"numeric":[0],)"
                         R"("targets":{"gender":"F","size":"S"}})" "\n");
        CHECK_THROWS_AS(load_jsonl(path, schema), DataError);
    }
    SUBCASE("unknown class label") {
        write_file(path, R"({"sequences":{"category":[],"merchant":[]},"numeric":[0,0],)"
                         R"("targets":{"gender":"Q","size":"S"}})" "\n");
        CHECK_THROWS_AS(load_jsonl(path, schema), DataError);
    }
    SUBCASE("sequence not an array") {
        write_file(path, R"({"sequences":{"category":"food","merchant":[]},"numeric":[0,0],)"
                         R"("targets":{"gender":"F","size":"S"}})" "\n");
        CHECK_THROWS_AS(load_jsonl(path, schema), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_jsonl(temp_dir() / "no_such.jsonl", schema), DataError);
    }
}

TEST_CASE("vocab orders by frequency then lexicographically, UNK at zero") {
    const DatasetSchema schema = tiny_schema();
    std::vector<UserRecord> records(3, sample_record());
    records[0].sequences["category"] = {"b", "b", "b"};
    records[1].sequences["category"] = {"a", "a", "c"};
    records[2].sequences["category"] = {"c", "d"};
    for (auto& r : records) r.sequences["merchant"] = {"m"};

    const Vocabulary vocab = build_vocab(records, schema, 1);
    // Frequencies: b=3, a=2, c=2, d=1. Ties a/c break lexicographically.
    CHECK(vocab.tokens(0) == std::vector<std::string>{"b", "a", "c", "d"});
    CHECK(vocab.index_of(0, "b") == 1);
    CHECK(vocab.index_of(0, "a") == 2);
    CHECK(vocab.index_of(0, "d") == 4);
    CHECK(vocab.index_of(0, "unseen") == Vocabulary::kUnk);
    CHECK(vocab.size(0) == 5);

    const Vocabulary cut = build_vocab(records, schema, 2);
    CHECK(cut.tokens(0) == std::vector<std::string>{"b", "a", "c"});
}

TEST_CASE("vocabulary rejects duplicate tokens") {
    CHECK_THROWS_AS(Vocabulary(std::vector<std::vector<std::string>>{{"a", "a"}}), DataError);
}

TEST_CASE("encode maps tokens and unknowns") {
    const DatasetSchema schema = tiny_schema();
    const std::vector<UserRecord> records = {sample_record()};
    const Vocabulary vocab = build_vocab(records, schema, 1);
    UserRecord rec = sample_record();
    rec.sequences["category"].push_back("never_seen");
    const EncodedRecord enc = encode(rec, vocab, schema);
    REQUIRE(enc.sequences.size() == 2);
    CHECK(enc.sequences[0].back() == Vocabulary::kUnk);
    CHECK(enc.sequences[0][0] == vocab.index_of(0, "food"));
    CHECK(enc.numeric == rec.numeric);
    CHECK(enc.targets == std::vector<std::uint32_t>{0, 2});
}

TEST_CASE("split floors val and test, remainder to train") {
    std::vector<UserRecord> records(103, sample_record());
    const SplitRecords parts = split(std::move(records), 0.8, 0.1, 0.1, 1);
    CHECK(parts.val.size() == 10);
    CHECK(parts.test.size() == 10);
    CHECK(parts.train.size() == 83);
}

TEST_CASE("split is a seed-deterministic partition") {
    std::vector<UserRecord> records;
    for (int i = 0; i < 50; ++i) {
        UserRecord r = sample_record();
        r.numeric[0] = double(i);
        records.push_back(r);
    }
    const SplitRecords a = split(records, 0.6, 0.2, 0.2, 7);
    const SplitRecords b = split(records, 0.6, 0.2, 0.2, 7);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    std::multiset<double> seen;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (const auto& r : *part) seen.insert(r.numeric[0]);
    }
    CHECK(seen.size() == 50);
    CHECK(*seen.begin() == 0.0);
    CHECK(*seen.rbegin() == 49.0);

    const SplitRecords c = split(records, 0.6, 0.2, 0.2, 8);
    CHECK(a.train != c.train);
}

TEST_CASE("split validates fractions and slice sizes") {
    std::vector<UserRecord> records(10, sample_record());
    CHECK_THROWS_AS(split(records, 0.5, 0.2, 0.2, 1), ConfigError);
    CHECK_THROWS_AS(split(records, 1.0, 0.0, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split(std::vector<UserRecord>{}, 0.8, 0.1, 0.1, 1), ConfigError);
    // 10 records at 2% val floors to zero.
    CHECK_THROWS_AS(split(records, 0.96, 0.02, 0.02, 1), ConfigError);
}

TEST_CASE("normalizer fits population moments with a stddev floor") {
    std::vector<UserRecord> recs(2, sample_record());
    recs[0].numeric = {0.0, 5.0};
    recs[1].numeric = {2.0, 5.0};
    const Normalizer norm = fit_normalizer(recs, 2);
    CHECK(norm.mean == std::vector<double>{1.0, 5.0});
    CHECK(norm.stddev[0] == doctest::Approx(1.0));
    CHECK(norm.stddev[1] == doctest::Approx(1e-8));

    std::vector<double> x = {0.0, 5.0};
    norm.apply(x);
    CHECK(x[0] == doctest::Approx(-1.0));
    CHECK(x[1] == doctest::Approx(0.0));
}

TEST_CASE("default recipe marginals are exact distributions") {
    const SynthRecipe recipe = default_synth_recipe();
    REQUIRE(recipe.targets.size() == 6);
    CHECK(recipe.targets[0].name == "gender");
    CHECK(recipe.targets[0].marginal == std::vector<double>{0.68, 0.32});
    for (const auto& t : recipe.targets) {
        double sum = 0.0;
        for (double p : t.marginal) sum += p;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(t.classes.size() == t.marginal.size());
    }
    REQUIRE(recipe.spaces.size() == 2);
    CHECK(recipe.spaces[0].vocab_size == 50);
    CHECK(recipe.spaces[1].vocab_size == 500);
}

TEST_CASE("materialize builds normalized zipf background and topic rows") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 10;
    const SynthConfig cfg = materialize_synth(recipe);
    CHECK_NOTHROW(cfg.validate());

    const auto& bg = cfg.sequences[0].background;
    REQUIRE(bg.size() == 50);
    CHECK(bg[0] == doctest::Approx(2.0 * bg[1]).epsilon(1e-12));
    CHECK(bg[0] == doctest::Approx(3.0 * bg[2]).epsilon(1e-12));
    CHECK(cfg.sequences[0].tokens[0] == "category_000");
    CHECK(cfg.sequences[1].tokens[499] == "merchant_499");

    for (const auto& target : cfg.targets) {
        for (const auto& topics : target.topics) {
            for (std::size_t c = 0; c < topics.rows; ++c) {
                double sum = 0.0;
                for (std::size_t j = 0; j < topics.cols; ++j) sum += topics.at(c, j);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("synth generation is deterministic and seed-sensitive") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 200;
    const SynthConfig cfg = materialize_synth(recipe);
    const std::vector<UserRecord> a = synth_generate(cfg);
    const std::vector<UserRecord> b = synth_generate(cfg);
    REQUIRE(a.size() == 200);
    CHECK(a == b);

    recipe.seed = 43;
    const std::vector<UserRecord> c = synth_generate(materialize_synth(recipe));
    CHECK(a != c);

    const DatasetSchema schema = cfg.schema();
    for (const auto& rec : a) {
        CHECK(rec.numeric.size() == schema.numeric_dim);
        CHECK(rec.targets.size() == schema.targets.size());
    }
}

TEST_CASE("synth config round-trips through JSON") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 50;
    const SynthConfig cfg = materialize_synth(recipe);
    const SynthConfig back = SynthConfig::from_json_string(cfg.to_json_string());
    CHECK(back.seed == cfg.seed);
    CHECK(back.n_users == cfg.n_users);
    CHECK(back.sequences.size() == cfg.sequences.size());
    CHECK(back.targets.size() == cfg.targets.size());
    CHECK(back.targets[2].topics[1] == cfg.targets[2].topics[1]);
    CHECK(back.targets[3].numeric_means == cfg.targets[3].numeric_means);
    CHECK(synth_generate(back) == synth_generate(cfg));
}

TEST_CASE("synth validation rejects non-distributions") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.targets[0].marginal = {0.9, 0.2};
    CHECK_THROWS_AS(materialize_synth(recipe), ConfigError);

    recipe = default_synth_recipe();
    recipe.spaces[0].background_mix = 1.5;
    CHECK_THROWS_AS(materialize_synth(recipe), ConfigError);

    recipe = default_synth_recipe();
    recipe.n_users = 0;
    CHECK_THROWS_AS(materialize_synth(recipe), ConfigError);
}

namespace {

/// Two classes, two tokens, no background, no numerics: the posterior is a
/// product of token likelihoods the test can compute directly.
SynthConfig likelihood_ratio_config() {
    SynthConfig cfg;
    cfg.seed = 1;
    cfg.n_users = 4;
    cfg.numeric_dim = 0;
    cfg.numeric_noise_sigma = 1.0;

    SynthSequenceSpec space;
    space.name = "s";
    space.tokens = {"t0", "t1"};
    space.mean_length = 3.0;
    space.background_mix = 0.0;
    space.background = {0.5, 0.5};
    cfg.sequences = {space};

    SynthTargetSpec target;
    target.name = "y";
    target.classes = {"a", "b"};
    target.marginal = {0.5, 0.5};
    Matrix topics(2, 2);
    topics.at(0, 0) = 0.9;
    topics.at(0, 1) = 0.1;
    topics.at(1, 0) = 0.1;
    topics.at(1, 1) = 0.9;
    target.topics = {topics};
    target.numeric_means = Matrix(2, 0);
    cfg.targets = {target};
    return cfg;
}

}  // namespace

TEST_CASE("oracle matches a hand-computed likelihood ratio") {
    const SynthConfig cfg = likelihood_ratio_config();
    BayesOracle oracle(cfg);

    UserRecord rec;
    rec.targets["y"] = "a";

    rec.sequences["s"] = {"t0", "t0", "t1"};
    // P(x|a) = 0.9^2 * 0.1 vs P(x|b) = 0.1^2 * 0.9: class a wins.
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{0});

    rec.sequences["s"] = {"t1", "t1", "t0"};
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{1});

    rec.sequences["s"] = {"t0", "t1"};
    // Symmetric evidence, equal priors: tie resolves to the lowest class.
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{0});

    rec.sequences["s"] = {};
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{0});
}

TEST_CASE("oracle with skewed prior needs enough evidence to flip") {
    SynthConfig cfg = likelihood_ratio_config();
    cfg.targets[0].marginal = {0.9, 0.1};
    BayesOracle oracle(cfg);

    UserRecord rec;
    rec.targets["y"] = "a";
    rec.sequences["s"] = {"t1"};
    // Prior odds 9:1 against, likelihood ratio 9:1 for: still class a.
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{0});
    rec.sequences["s"] = {"t1", "t1"};
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{1});
}

TEST_CASE("oracle under pure background predicts the prior argmax") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 100;
    recipe.numeric_dim = 0;
    for (auto& space : recipe.spaces) {
        space.background_mix = 1.0;
        space.vocab_size = 20;
    }
    const SynthConfig cfg = materialize_synth(recipe);
    const std::vector<UserRecord> records = synth_generate(cfg);
    BayesOracle oracle(cfg);

    std::vector<std::uint32_t> prior_argmax;
    for (const auto& t : cfg.targets) {
        prior_argmax.push_back(std::uint32_t(
            std::max_element(t.marginal.begin(), t.marginal.end()) - t.marginal.begin()));
    }
    for (const auto& rec : records) CHECK(oracle.predict(rec) == prior_argmax);
}

TEST_CASE("oracle separates classes by numeric means alone") {
    SynthConfig cfg = likelihood_ratio_config();
    cfg.numeric_dim = 1;
    cfg.numeric_noise_sigma = 0.25;
    cfg.sequences[0].background_mix = 1.0;
    Matrix means(2, 1);
    means.at(0, 0) = -1.0;
    means.at(1, 0) = 1.0;
    cfg.targets[0].numeric_means = means;
    BayesOracle oracle(cfg);

    UserRecord rec;
    rec.targets["y"] = "a";
    rec.sequences["s"] = {"t0"};
    rec.numeric = {-0.8};
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{0});
    rec.numeric = {0.8};
    CHECK(oracle.predict(rec) == std::vector<std::uint32_t>{1});
}

TEST_CASE("oracle agrees with brute-force posterior on generated data") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 40;
    recipe.numeric_dim = 2;
    recipe.spaces = {{"s", 6, 5.0, 0.4}};
    recipe.targets = {{"u", {"a", "b"}, {0.6, 0.4}}, {"v", {"x", "y", "z"}, {0.3, 0.3, 0.4}}};
    const SynthConfig cfg = materialize_synth(recipe);
    const std::vector<UserRecord> records = synth_generate(cfg);
    BayesOracle oracle(cfg);

    // Independent posterior: enumerate the 6 class tuples in log space.
    const auto& tu = cfg.targets[0];
    const auto& tv = cfg.targets[1];
    for (const auto& rec : records) {
        const auto& tokens = rec.sequences.at("s");
        double best = -1e300;
        std::size_t best_u = 0, best_v = 0;
        std::vector<std::vector<double>> marg(2);
        marg[0].assign(2, 0.0);
        marg[1].assign(3, 0.0);
        std::vector<double> joint(6);
        for (std::size_t cu = 0; cu < 2; ++cu) {
            for (std::size_t cv = 0; cv < 3; ++cv) {
                double lp = std::log(tu.marginal[cu]) + std::log(tv.marginal[cv]);
                for (const auto& tok : tokens) {
                    const std::size_t j = std::size_t(
                        std::find(cfg.sequences[0].tokens.begin(), cfg.sequences[0].tokens.end(),
                                  tok) -
                        cfg.sequences[0].tokens.begin());
                    const double lam = cfg.sequences[0].background_mix;
                    const double mix = lam * cfg.sequences[0].background[j] +
                                       (1.0 - lam) * 0.5 *
                                           (tu.topics[0].at(cu, j) + tv.topics[0].at(cv, j));
                    lp += std::log(mix);
                }
                for (std::size_t d = 0; d < 2; ++d) {
                    const double mu = tu.numeric_means.at(cu, d) + tv.numeric_means.at(cv, d);
                    const double diff = rec.numeric[d] - mu;
                    lp -= diff * diff / (2.0 * cfg.numeric_noise_sigma * cfg.numeric_noise_sigma);
                }
                joint[cu * 3 + cv] = lp;
                if (lp > best) {
                    best = lp;
                    best_u = cu;
                    best_v = cv;
                }
            }
        }
        // Marginal argmax per target, matching the oracle's definition.
        for (std::size_t cu = 0; cu < 2; ++cu) {
            for (std::size_t cv = 0; cv < 3; ++cv) {
                const double p = std::exp(joint[cu * 3 + cv] - best);
                marg[0][cu] += p;
                marg[1][cv] += p;
            }
        }
        const std::vector<std::uint32_t> got = oracle.predict(rec);
        CHECK(got[0] == std::uint32_t(std::max_element(marg[0].begin(), marg[0].end()) -
                                      marg[0].begin()));
        CHECK(got[1] == std::uint32_t(std::max_element(marg[1].begin(), marg[1].end()) -
                                      marg[1].begin()));
        (void)best_u;
        (void)best_v;
    }
}

TEST_CASE("oracle guards its enumeration size and token universe") {
    SynthConfig cfg = likelihood_ratio_config();
    SynthTargetSpec big;
    big.classes.resize(101);
    big.marginal.assign(101, 1.0 / 101.0);
    for (std::size_t i = 0; i < 101; ++i) big.classes[i] = "c" + std::to_string(i);
    Matrix topics(101, 2);
    for (std::size_t i = 0; i < 101; ++i) {
        topics.at(i, 0) = 0.5;
        topics.at(i, 1) = 0.5;
    }
    big.topics = {topics};
    big.numeric_means = Matrix(101, 0);
    for (int i = 0; i < 3; ++i) {
        SynthTargetSpec t = big;
        t.name = "big" + std::to_string(i);
        cfg.targets.push_back(t);
    }
    // 2 * 101^3 tuples exceed the enumeration budget.
    CHECK_THROWS_AS(BayesOracle{cfg}, ConfigError);

    const SynthConfig small = likelihood_ratio_config();
    BayesOracle oracle(small);
    UserRecord rec;
    rec.sequences["s"] = {"never"};
    rec.targets["y"] = "a";
    CHECK_THROWS_AS(oracle.predict(rec), DataError);
}

TEST_CASE("fingerprint is stable, content-sensitive, and 16 hex chars") {
    const DatasetSchema schema = tiny_schema();
    std::vector<UserRecord> records = {sample_record(), sample_record()};
    records[1].targets["gender"] = "M";

    const std::string a = dataset_fingerprint(records, schema);
    const std::string b = dataset_fingerprint(records, schema);
    CHECK(a == b);
    CHECK(a.size() == 16);
    CHECK(a.find_first_not_of("0123456789abcdef") == std::string::npos);

    records[1].numeric[0] += 1.0;
    CHECK(dataset_fingerprint(records, schema) != a);
}

TEST_CASE("prepare_dataset fingerprints before splitting and encodes all slices") {
    SynthRecipe recipe = default_synth_recipe();
    recipe.n_users = 300;
    const SynthConfig cfg = materialize_synth(recipe);
    const std::vector<UserRecord> records = synth_generate(cfg);
    const DatasetSchema schema = cfg.schema();
    const std::string fp = dataset_fingerprint(records, schema);

    const PreparedData p1 = prepare_dataset(records, schema, 0.8, 0.1, 0.1, 1, 1);
    const PreparedData p2 = prepare_dataset(records, schema, 0.8, 0.1, 0.1, 1, 2);
    CHECK(p1.fingerprint == fp);
    CHECK(p2.fingerprint == fp);
    CHECK(p1.train.size() == 240);
    CHECK(p1.val.size() == 30);
    CHECK(p1.test.size() == 30);
    CHECK(p1.raw.train.size() == 240);
    CHECK(p1.train != p2.train);

    // Vocabulary and normalizer come from the training slice only.
    const Vocabulary train_vocab = build_vocab(p1.raw.train, schema, 1);
    CHECK(p1.vocab == train_vocab);
    const Normalizer train_norm = fit_normalizer(p1.raw.train, schema.numeric_dim);
    CHECK(p1.normalizer == train_norm);

    // Encoded numerics are z-scored: training mean is zero per dimension.
    for (std::size_t d = 0; d < schema.numeric_dim; ++d) {
        double sum = 0.0;
        for (const auto& r : p1.train) sum += r.numeric[d];
        CHECK(std::abs(sum / double(p1.train.size())) < 1e-9);
    }
}

TEST_SUITE_END();
