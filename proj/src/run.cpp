#include "seqfuse/run.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqfuse/errors.hpp"
#include "seqfuse/evaluation.hpp"

namespace seqfuse {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            const std::string where = section.empty() ? key : section + "." + key;
            throw ConfigError("config: unknown key '" + where + "'");
        }
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    // json stores negative literals as signed integers and would wrap them
    // silently when the target is unsigned; reject them instead.
    const bool negative_into_unsigned =
        std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned();
    try {
        if (negative_into_unsigned) throw ConfigError("");
        out = v.get<T>();
    } catch (const std::exception&) {
        const std::string where = section.empty() ? key : section + "." + std::string(key);
        throw ConfigError("config: invalid value for '" + where + "'");
    }
}

std::uint64_t section_seed(const json& j, std::uint64_t fallback, const std::string& section) {
    std::uint64_t seed = fallback;
    read_field(j, "seed", seed, section);
    return seed;
}

void parse_data(const json& j, DataConfig& out, std::uint64_t top_seed) {
    check_keys(j,
               {"path", "schema", "ground_truth", "train_frac", "val_frac", "test_frac",
                "min_freq", "split_seed"},
               "data");
    read_field(j, "path", out.path, "data");
    read_field(j, "schema", out.schema_path, "data");
    read_field(j, "ground_truth", out.ground_truth_path, "data");
    read_field(j, "train_frac", out.train_frac, "data");
    read_field(j, "val_frac", out.val_frac, "data");
    read_field(j, "test_frac", out.test_frac, "data");
    read_field(j, "min_freq", out.min_freq, "data");
    out.split_seed = top_seed;
    read_field(j, "split_seed", out.split_seed, "data");
}

void parse_synth(const json& j, SynthRecipe& out, std::uint64_t top_seed) {
    check_keys(j,
               {"seed", "n_users", "numeric_dim", "numeric_noise_sigma", "topic_strength",
                "numeric_mean_scale", "spaces", "targets"},
               "synth");
    out.seed = section_seed(j, top_seed, "synth");
    read_field(j, "n_users", out.n_users, "synth");
    read_field(j, "numeric_dim", out.numeric_dim, "synth");
    read_field(j, "numeric_noise_sigma", out.numeric_noise_sigma, "synth");
    read_field(j, "topic_strength", out.topic_strength, "synth");
    read_field(j, "numeric_mean_scale", out.numeric_mean_scale, "synth");
    if (j.contains("spaces")) {
        out.spaces.clear();
        for (const auto& js : j.at("spaces")) {
            check_keys(js, {"name", "vocab_size", "mean_length", "background_mix"},
                       "synth.spaces[]");
            SynthRecipe::Space space;
            read_field(js, "name", space.name, "synth.spaces[]");
            read_field(js, "vocab_size", space.vocab_size, "synth.spaces[]");
            read_field(js, "mean_length", space.mean_length, "synth.spaces[]");
            read_field(js, "background_mix", space.background_mix, "synth.spaces[]");
            out.spaces.push_back(std::move(space));
        }
    }
    if (j.contains("targets")) {
        out.targets.clear();
        for (const auto& jt : j.at("targets")) {
            check_keys(jt, {"name", "classes", "marginal"}, "synth.targets[]");
            SynthRecipe::Target target;
            read_field(jt, "name", target.name, "synth.targets[]");
            read_field(jt, "classes", target.classes, "synth.targets[]");
            read_field(jt, "marginal", target.marginal, "synth.targets[]");
            out.targets.push_back(std::move(target));
        }
    }
}

void parse_model(const json& j, ModelConfig& model, std::size_t& embedding_dim,
                 std::uint64_t top_seed) {
    check_keys(j, {"embedding_dim", "embedding_dims", "trunk_depth", "trunk_width", "seed"},
               "model");
    read_field(j, "embedding_dim", embedding_dim, "model");
    read_field(j, "embedding_dims", model.embedding_dims, "model");
    read_field(j, "trunk_depth", model.trunk_depth, "model");
    read_field(j, "trunk_width", model.trunk_width, "model");
    model.seed = section_seed(j, top_seed, "model");
}

void parse_adam(const json& j, AdamConfig& adam, const std::string& section) {
    check_keys(j, {"beta1", "beta2", "epsilon"}, section);
    read_field(j, "beta1", adam.beta1, section);
    read_field(j, "beta2", adam.beta2, section);
    read_field(j, "epsilon", adam.epsilon, section);
}

void parse_train(const json& j, TrainConfig& out, std::uint64_t top_seed) {
    check_keys(j,
               {"max_epochs", "batch_size", "learning_rate", "adam", "patience", "min_delta",
                "loss_weights", "seed", "fine_tune"},
               "train");
    read_field(j, "max_epochs", out.max_epochs, "train");
    read_field(j, "batch_size", out.batch_size, "train");
    read_field(j, "learning_rate", out.learning_rate, "train");
    if (j.contains("adam")) parse_adam(j.at("adam"), out.adam, "train.adam");
    read_field(j, "patience", out.patience, "train");
    read_field(j, "min_delta", out.min_delta, "train");
    read_field(j, "loss_weights", out.loss_weights, "train");
    out.seed = section_seed(j, top_seed, "train");
    if (j.contains("fine_tune")) {
        const json& ft = j.at("fine_tune");
        check_keys(ft, {"learning_rate", "max_epochs", "patience"}, "train.fine_tune");
        read_field(ft, "learning_rate", out.fine_tune.learning_rate, "train.fine_tune");
        read_field(ft, "max_epochs", out.fine_tune.max_epochs, "train.fine_tune");
        read_field(ft, "patience", out.fine_tune.patience, "train.fine_tune");
    }
}

void parse_baselines(const json& j, BaselineRunConfig& out, std::uint64_t top_seed) {
    check_keys(j, {"logreg", "pca_components"}, "baselines");
    if (j.contains("logreg")) {
        const json& lr = j.at("logreg");
        check_keys(lr,
                   {"learning_rate", "l2", "max_epochs", "batch_size", "patience", "min_delta",
                    "adam", "seed"},
                   "baselines.logreg");
        read_field(lr, "learning_rate", out.logreg.learning_rate, "baselines.logreg");
        read_field(lr, "l2", out.logreg.l2, "baselines.logreg");
        read_field(lr, "max_epochs", out.logreg.max_epochs, "baselines.logreg");
        read_field(lr, "batch_size", out.logreg.batch_size, "baselines.logreg");
        read_field(lr, "patience", out.logreg.patience, "baselines.logreg");
        read_field(lr, "min_delta", out.logreg.min_delta, "baselines.logreg");
        if (lr.contains("adam")) parse_adam(lr.at("adam"), out.logreg.adam, "baselines.logreg.adam");
        out.logreg.seed = section_seed(lr, top_seed, "baselines.logreg");
    } else {
        out.logreg.seed = top_seed;
    }
    read_field(j, "pca_components", out.pca_components, "baselines");
}

void parse_eval(const json& j, EvalRunConfig& out) {
    check_keys(j, {"systems", "checkpoint", "finetuned_checkpoints"}, "eval");
    read_field(j, "systems", out.systems, "eval");
    read_field(j, "checkpoint", out.checkpoint, "eval");
    read_field(j, "finetuned_checkpoints", out.finetuned_checkpoints, "eval");
}

void parse_sweep(const json& j, SweepRunConfig& out) {
    check_keys(j, {"parameter", "grid", "seeds"}, "sweep");
    read_field(j, "parameter", out.parameter, "sweep");
    read_field(j, "grid", out.grid, "sweep");
    read_field(j, "seeds", out.seeds, "sweep");
}

void parse_finetune(const json& j, FinetuneRunConfig& out) {
    check_keys(j, {"checkpoint", "targets"}, "finetune");
    read_field(j, "checkpoint", out.checkpoint, "finetune");
    read_field(j, "targets", out.targets, "finetune");
}

json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return json(text);
    }
}

void apply_override(json& root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + spec + "' is not of the form path=value");
    }
    const std::string path = spec.substr(0, eq);
    const json value = parse_override_value(spec.substr(eq + 1));

    json* node = &root;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("override '" + spec + "' has an empty path segment");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        if (node->contains(key) && !(*node)[key].is_object()) {
            throw ConfigError("override '" + spec + "' descends into a non-object");
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

ModelConfig RunConfig::model_for(const DatasetSchema& schema) const {
    ModelConfig mcfg = model;
    if (mcfg.embedding_dims.empty()) {
        mcfg.embedding_dims.assign(schema.sequence_names.size(), embedding_dim);
    }
    mcfg.validate(schema.sequence_names.size());
    return mcfg;
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    check_keys(j,
               {"seed", "out_dir", "data", "synth", "model", "train", "baselines", "eval",
                "sweep", "finetune"},
               "");

    RunConfig cfg;
    cfg.synth = default_synth_recipe();
    read_field(j, "seed", cfg.seed, "");
    read_field(j, "out_dir", cfg.out_dir, "");
    parse_data(j.contains("data") ? j.at("data") : json::object(), cfg.data, cfg.seed);
    parse_synth(j.contains("synth") ? j.at("synth") : json::object(), cfg.synth, cfg.seed);
    parse_model(j.contains("model") ? j.at("model") : json::object(), cfg.model,
                cfg.embedding_dim, cfg.seed);
    parse_train(j.contains("train") ? j.at("train") : json::object(), cfg.train, cfg.seed);
    parse_baselines(j.contains("baselines") ? j.at("baselines") : json::object(), cfg.baselines,
                    cfg.seed);
    parse_eval(j.contains("eval") ? j.at("eval") : json::object(), cfg.eval);
    parse_sweep(j.contains("sweep") ? j.at("sweep") : json::object(), cfg.sweep);
    parse_finetune(j.contains("finetune") ? j.at("finetune") : json::object(), cfg.finetune);
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

std::string RunConfig::to_json_string() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["data"] = {{"path", data.path},
                 {"schema", data.schema_path},
                 {"ground_truth", data.ground_truth_path},
                 {"train_frac", data.train_frac},
                 {"val_frac", data.val_frac},
                 {"test_frac", data.test_frac},
                 {"min_freq", data.min_freq},
                 {"split_seed", data.split_seed}};
    json spaces = json::array();
    for (const auto& s : synth.spaces) {
        spaces.push_back({{"name", s.name},
                          {"vocab_size", s.vocab_size},
                          {"mean_length", s.mean_length},
                          {"background_mix", s.background_mix}});
    }
    json targets = json::array();
    for (const auto& t : synth.targets) {
        targets.push_back({{"name", t.name}, {"classes", t.classes}, {"marginal", t.marginal}});
    }
    j["synth"] = {{"seed", synth.seed},
                  {"n_users", synth.n_users},
                  {"numeric_dim", synth.numeric_dim},
                  {"numeric_noise_sigma", synth.numeric_noise_sigma},
                  {"topic_strength", synth.topic_strength},
                  {"numeric_mean_scale", synth.numeric_mean_scale},
                  {"spaces", std::move(spaces)},
                  {"targets", std::move(targets)}};
    j["model"] = {{"embedding_dim", embedding_dim},
                  {"embedding_dims", model.embedding_dims},
                  {"trunk_depth", model.trunk_depth},
                  {"trunk_width", model.trunk_width},
                  {"seed", model.seed}};
    j["train"] = {{"max_epochs", train.max_epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"adam",
                   {{"beta1", train.adam.beta1},
                    {"beta2", train.adam.beta2},
                    {"epsilon", train.adam.epsilon}}},
                  {"patience", train.patience},
                  {"min_delta", train.min_delta},
                  {"loss_weights", train.loss_weights},
                  {"seed", train.seed},
                  {"fine_tune",
                   {{"learning_rate", train.fine_tune.learning_rate},
                    {"max_epochs", train.fine_tune.max_epochs},
                    {"patience", train.fine_tune.patience}}}};
    j["baselines"] = {{"logreg",
                       {{"learning_rate", baselines.logreg.learning_rate},
                        {"l2", baselines.logreg.l2},
                        {"max_epochs", baselines.logreg.max_epochs},
                        {"batch_size", baselines.logreg.batch_size},
                        {"patience", baselines.logreg.patience},
                        {"min_delta", baselines.logreg.min_delta},
                        {"adam",
                         {{"beta1", baselines.logreg.adam.beta1},
                          {"beta2", baselines.logreg.adam.beta2},
                          {"epsilon", baselines.logreg.adam.epsilon}}},
                        {"seed", baselines.logreg.seed}}},
                      {"pca_components", baselines.pca_components}};
    j["eval"] = {{"systems", eval.systems},
                 {"checkpoint", eval.checkpoint},
                 {"finetuned_checkpoints", eval.finetuned_checkpoints}};
    j["sweep"] = {{"parameter", sweep.parameter}, {"grid", sweep.grid}, {"seeds", sweep.seeds}};
    j["finetune"] = {{"checkpoint", finetune.checkpoint}, {"targets", finetune.targets}};
    return j.dump(2);
}

RunConfig load_run_config(const std::string& json_text, std::span<const std::string> overrides) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    for (const auto& spec : overrides) apply_override(j, spec);
    return RunConfig::from_json_string(j.dump());
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    const std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string());
    return dir;
}

void write_echo(const RunConfig& cfg, const std::filesystem::path& dir, const char* command) {
    write_text_file(dir / (std::string(command) + "_config.json"), cfg.to_json_string() + "\n");
}

PreparedData load_and_prepare(const RunConfig& cfg) {
    if (cfg.data.path.empty() || cfg.data.schema_path.empty()) {
        throw ConfigError("config: data.path and data.schema are required for this command");
    }
    const DatasetSchema schema = DatasetSchema::load(cfg.data.schema_path);
    std::vector<UserRecord> records = load_jsonl(cfg.data.path, schema);
    return prepare_dataset(std::move(records), schema, cfg.data.train_frac, cfg.data.val_frac,
                           cfg.data.test_frac, cfg.data.min_freq, cfg.data.split_seed);
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
    const auto dir = prepare_out_dir(cfg);
    const SynthConfig synth_cfg = materialize_synth(cfg.synth);
    const std::vector<UserRecord> records = synth_generate(synth_cfg);
    const DatasetSchema schema = synth_cfg.schema();

    save_jsonl(dir / "dataset.jsonl", records, schema);
    schema.save(dir / "schema.json");
    synth_cfg.save(dir / "ground_truth.json");
    write_echo(cfg, dir, "synth");

    std::cout << "synth: wrote " << records.size() << " records to "
              << (dir / "dataset.jsonl").string() << "\n"
              << "synth: schema " << (dir / "schema.json").string() << ", ground truth "
              << (dir / "ground_truth.json").string() << "\n";
}

void cmd_train(const RunConfig& cfg) {
    const auto dir = prepare_out_dir(cfg);
    const PreparedData prep = load_and_prepare(cfg);
    const ModelConfig mcfg = cfg.model_for(prep.schema);

    UserModel model = init_model(mcfg, prep.schema, prep.vocab, prep.normalizer);
    auto [trained, log] = train(std::move(model), prep.train, prep.val, cfg.train);

    save_checkpoint(trained, dir / "checkpoint.json");
    log.save_json(dir / "train_log.json");
    log.save_csv(dir / "train_log.csv");
    write_echo(cfg, dir, "train");

    std::cout << "train: " << log.epochs.size() << " epochs (" << log.stop_reason
              << "), best validation loss " << double_repr(log.best_val_loss) << " at epoch "
              << log.best_epoch << "\n"
              << "train: dataset fingerprint " << prep.fingerprint << ", param count "
              << param_count(trained) << "\n"
              << "train: wrote " << (dir / "checkpoint.json").string() << "\n";
}

void cmd_finetune(const RunConfig& cfg) {
    if (cfg.finetune.checkpoint.empty()) {
        throw ConfigError("config: finetune.checkpoint is required");
    }
    const auto dir = prepare_out_dir(cfg);
    const PreparedData prep = load_and_prepare(cfg);
    const UserModel base = load_checkpoint(cfg.finetune.checkpoint);
    if (!(base.vocab == prep.vocab)) {
        throw ConfigError("finetune: checkpoint vocabulary does not match the prepared dataset");
    }

    std::vector<std::string> targets = cfg.finetune.targets;
    if (targets.empty() || (targets.size() == 1 && targets[0] == "all")) {
        targets = base.head_targets;
    }
    for (const auto& t : targets) {
        if (std::find(base.head_targets.begin(), base.head_targets.end(), t) ==
            base.head_targets.end()) {
            std::string valid;
            for (const auto& name : base.head_targets) {
                if (!valid.empty()) valid += ", ";
                valid += name;
            }
            throw ConfigError("finetune: unknown target '" + t + "' (valid: " + valid + ")");
        }
    }

    for (const auto& t : targets) {
        auto [tuned, log] = fine_tune(base, t, prep.train, prep.val, cfg.train);
        save_checkpoint(tuned, dir / ("finetuned_" + t + ".json"));
        log.save_json(dir / ("finetune_" + t + "_log.json"));
        log.save_csv(dir / ("finetune_" + t + "_log.csv"));
        std::cout << "finetune: " << t << " stopped after " << log.epochs.size() << " epochs ("
                  << log.stop_reason << "), best validation loss "
                  << double_repr(log.best_val_loss) << "\n";
    }
    write_echo(cfg, dir, "finetune");
}

void cmd_eval(const RunConfig& cfg) {
    const auto dir = prepare_out_dir(cfg);
    const PreparedData prep = load_and_prepare(cfg);

    const std::set<std::string> valid = {"argmax", "stacking", "pca",
                                         "model",  "finetuned", "oracle"};
    for (const auto& s : cfg.eval.systems) {
        if (!valid.count(s)) {
            throw ConfigError("config: unknown system '" + s +
                              "' (valid: argmax, stacking, pca, model, finetuned, oracle)");
        }
    }
    auto wants = [&](const char* name) {
        return std::find(cfg.eval.systems.begin(), cfg.eval.systems.end(), name) !=
               cfg.eval.systems.end();
    };

    SystemSet systems;
    MajorityModel majority;
    StackingBaseline stacking;
    PcaBaseline pca;
    UserModel model;
    std::vector<UserModel> finetuned;
    SynthConfig oracle_cfg;

    if (wants("argmax")) {
        majority = fit_majority(prep.train, prep.schema);
        systems.majority = &majority;
    }
    if (wants("stacking")) {
        stacking = fit_stacking(prep.train, prep.val, prep.schema, prep.vocab,
                                cfg.baselines.logreg);
        systems.stacking = &stacking;
    }
    if (wants("pca")) {
        pca = fit_pca_baseline(prep.train, prep.val, prep.schema, prep.vocab,
                               cfg.baselines.pca_components, cfg.baselines.logreg);
        systems.pca = &pca;
    }
    if (wants("model")) {
        if (cfg.eval.checkpoint.empty()) {
            throw ConfigError("config: eval.checkpoint is required to evaluate the model");
        }
        model = load_checkpoint(cfg.eval.checkpoint);
        if (!(model.vocab == prep.vocab)) {
            throw ConfigError("eval: checkpoint vocabulary does not match the prepared dataset");
        }
        systems.model = &model;
    }
    if (wants("finetuned")) {
        if (cfg.eval.finetuned_checkpoints.empty()) {
            throw ConfigError("config: eval.finetuned_checkpoints is required to evaluate "
                              "fine-tuned models");
        }
        for (const auto& path : cfg.eval.finetuned_checkpoints) {
            finetuned.push_back(load_checkpoint(path));
        }
        for (const auto& m : finetuned) systems.finetuned.push_back(&m);
    }
    if (wants("oracle")) {
        if (cfg.data.ground_truth_path.empty()) {
            throw ConfigError("config: data.ground_truth is required for the oracle row");
        }
        oracle_cfg = SynthConfig::load(cfg.data.ground_truth_path);
        systems.oracle = &oracle_cfg;
    }

    const EvalReport report = compare_systems(prep, systems, cfg.seed);
    report.save_json(dir / "report.json");
    report.save_csv(dir / "report.csv");
    write_echo(cfg, dir, "eval");

    std::cout << report.to_csv_string();
    std::cout << "eval: wrote " << (dir / "report.csv").string() << "\n";
}

void cmd_sweep(const RunConfig& cfg, std::size_t jobs) {
    const auto dir = prepare_out_dir(cfg);
    const PreparedData prep = load_and_prepare(cfg);
    const ModelConfig mcfg = cfg.model_for(prep.schema);

    std::vector<std::size_t> grid = cfg.sweep.grid;
    SweepResult result;
    if (cfg.sweep.parameter == "embedding_size") {
        if (grid.empty()) grid = {10, 50, 100};
        result = sweep_embedding_size(prep, mcfg, cfg.train, grid, cfg.sweep.seeds, jobs);
    } else if (cfg.sweep.parameter == "trunk_depth") {
        if (grid.empty()) grid = {0, 1, 2};
        result = sweep_depth(prep, mcfg, cfg.train, grid, cfg.sweep.seeds, jobs);
    } else {
        throw ConfigError("config: sweep.parameter must be 'embedding_size' or 'trunk_depth'");
    }

    result.save_json(dir / "sweep.json");
    result.save_csv(dir / "sweep.csv");
    write_echo(cfg, dir, "sweep");

    std::cout << "sweep: " << result.runs.size() << " runs over " << cfg.sweep.parameter << " {";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i > 0) std::cout << ", ";
        std::cout << grid[i];
    }
    std::cout << "}\n" << "sweep: wrote " << (dir / "sweep.csv").string() << "\n";
}

}  // namespace seqfuse
