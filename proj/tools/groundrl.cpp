// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "groundrl/config.hpp"
#include "groundrl/errors.hpp"
#include "groundrl/pipeline.hpp"

using namespace groundrl;

namespace {

void log_line(const std::string& line) {
    std::cerr << line;
    if (line.empty() || line.back() != '\n') std::cerr << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language-grounded reward shaping on the MiniBuild environment"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> assignments;
    std::string run_dir;
    bool print_config = false;
    app.add_option("--config", config_path, "config file of 'key = value' lines");
    app.add_option("--set", assignments, "override one key, as key=value (repeatable)");
    app.add_option("--run-dir", run_dir, "output root (run_dir)");
    app.add_flag("--print-config", print_config, "print the effective config before running");

    // Shortcut flags, stored as assignments applied after --set.
    std::vector<std::pair<std::string, std::string>> shortcuts;
    auto shortcut = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(
            flag, [&shortcuts, key](const std::string& v) { shortcuts.emplace_back(key, v); }, help);
    };

    auto* gen = app.add_subcommand("gen-data", "roll out random episodes and build the labeled dataset");
    shortcut(gen, "--quota", "data.quota", "matched pairs per goal");
    shortcut(gen, "--seed", "data.seed", "dataset seed");

    auto* w2v = app.add_subcommand("train-w2v", "train word vectors on the paraphrase corpus");
    shortcut(w2v, "--seed", "w2v.seed", "word2vec seed");

    auto* tmem = app.add_subcommand("train-mem", "train the mutual-embedding model");
    shortcut(tmem, "--seed", "mem.seed", "initialization and shuffling seed");
    shortcut(tmem, "--epochs", "mem.epochs", "training epochs");

    auto* emem = app.add_subcommand("eval-mem", "accuracy report for the trained model");

    auto* proj = app.add_subcommand("project", "t-SNE projection of state and command embeddings");
    shortcut(proj, "--seed", "tsne.seed", "t-SNE seed");

    auto* tagent = app.add_subcommand("train-agent", "train an actor-critic agent");
    shortcut(tagent, "--mode", "rl.mode", "baseline, subtask_oracle or mem_shaped");
    shortcut(tagent, "--budget", "rl.budget", "environment steps over all workers");
    shortcut(tagent, "--workers", "rl.workers", "parallel workers");
    shortcut(tagent, "--seed", "rl.seed", "agent seed");
    shortcut(tagent, "--update", "rl.update", "sync or async");
    shortcut(tagent, "--script", "rl.script", "narration script file");

    auto* eagent = app.add_subcommand("eval-agent", "compare every finished train-agent run");

    auto* envr = app.add_subcommand("env-report", "rule table and invariant audit over random episodes");
    int audit_episodes = 100;
    std::string trace_path;
    envr->add_option("--episodes", audit_episodes, "random episodes to audit")->check(CLI::PositiveNumber);
    envr->add_option("--trace", trace_path, "write one random episode as JSON lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage_error: " << e.what() << "\n";
        return 2;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) load_config(config_path, config);
        for (const auto& a : assignments) {
            const auto eq = a.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + a + "'");
            config.set(a.substr(0, eq), a.substr(eq + 1));
        }
        for (const auto& [key, value] : shortcuts) config.set(key, value);
        if (!run_dir.empty()) config.set("run_dir", run_dir);
        config.validate();
        if (print_config) std::cout << config.to_text() << std::flush;

        const pipeline::Log log = log_line;
        if (gen->parsed()) {
            pipeline::gen_data(config, log);
        } else if (w2v->parsed()) {
            pipeline::train_w2v(config, log);
        } else if (tmem->parsed()) {
            pipeline::train_mem(config, log);
        } else if (emem->parsed()) {
            pipeline::eval_mem(config, log);
        } else if (proj->parsed()) {
            pipeline::project(config, log);
        } else if (tagent->parsed()) {
            pipeline::train_agent(config, log);
        } else if (eagent->parsed()) {
            pipeline::eval_agent(config, log);
        } else if (envr->parsed()) {
            const auto r = pipeline::env_report(
                config, audit_episodes, trace_path.empty() ? std::nullopt : std::optional<std::string>(trace_path), log);
            if (r.audit.violations > 0) return 1;
        }
    } catch (const Error& e) {
        std::cerr << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal_error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
