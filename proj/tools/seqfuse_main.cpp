#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqfuse/errors.hpp"
#include "seqfuse/run.hpp"

namespace {

std::string read_config_text(const std::string& path) {
    if (path.empty()) return "{}";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw seqfuse::ConfigError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seqfuse: multi-task demographic prediction from transaction sequences"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string seed_text;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::size_t jobs = 1;

    app.add_option("--config", config_path, "Run config JSON (defaults apply when omitted)");
    app.add_option("--seed", seed_text, "Top-level seed, overrides the config");
    app.add_option("--out", out_dir, "Output directory, overrides the config");
    app.add_option("--set", overrides, "Config override as dotted.path=value (repeatable)");
    app.add_option("--jobs", jobs, "Worker threads for sweep runs")->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
    auto* train = app.add_subcommand("train", "Train the multi-task model");
    auto* finetune = app.add_subcommand("finetune", "Fine-tune single-head models from a checkpoint");
    auto* eval = app.add_subcommand("eval", "Compare systems on the held-out test split");
    auto* sweep = app.add_subcommand("sweep", "Run an embedding-size or depth sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        std::vector<std::string> effective = overrides;
        if (!seed_text.empty()) effective.push_back("seed=" + seed_text);
        if (!out_dir.empty()) effective.push_back("out_dir=" + nlohmann::json(out_dir).dump());

        const seqfuse::RunConfig cfg =
            seqfuse::load_run_config(read_config_text(config_path), effective);

        if (synth->parsed()) {
            seqfuse::cmd_synth(cfg);
        } else if (train->parsed()) {
            seqfuse::cmd_train(cfg);
        } else if (finetune->parsed()) {
            seqfuse::cmd_finetune(cfg);
        } else if (eval->parsed()) {
            seqfuse::cmd_eval(cfg);
        } else if (sweep->parsed()) {
            seqfuse::cmd_sweep(cfg, jobs);
        }
        return 0;
    } catch (const seqfuse::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const seqfuse::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const seqfuse::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
