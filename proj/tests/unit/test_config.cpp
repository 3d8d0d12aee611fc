#include <doctest.h>

#include <algorithm>
#include <string>

#include "groundrl/config.hpp"
#include "groundrl/errors.hpp"

using namespace groundrl;

namespace {

std::string error_of(const std::string& text) {
    RunConfig c;
    try {
        parse_config(text, c);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK(c.env.grid_size == 64);
    CHECK(c.env.episode_length == 800);
    CHECK(c.data_quota == 1000);
    CHECK(c.w2v.dim == 128);
    CHECK(c.mem.embed_dim == 256);
    CHECK(c.mem_train.lr == 5e-4);
    CHECK(c.mem_train.batch == 32);
    CHECK(c.mem_train.epochs == 20);
    CHECK(c.mem_train.lambda == 2.5e-3);
    CHECK(c.mem_train.threshold == 0.5);
    CHECK(c.rl.workers == 8);
    CHECK(c.rl.n_step == 16);
    CHECK(c.rl.gamma == 0.99);
    CHECK(c.rl.entropy_beta == 0.01);
    CHECK(c.rl.lr == 1e-4);
    CHECK(c.rl.budget == 200000);
    CHECK(c.rl.mode == shaping::RewardMode::Baseline);
    CHECK(c.rl.update == rl::UpdateMode::Sync);
    CHECK(c.tsne.perplexity == 30.0);
    CHECK(c.tsne_per_class == 500);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("shared settings propagate") {
    RunConfig c;
    c.set("env.grid_size", "8");
    c.set("w2v.dim", "16");
    c.set("mem.embed_dim", "32");
    CHECK(c.mem.state.grid_size == 8);
    CHECK(c.rl.env.grid_size == 8);
    CHECK(c.mem.word_dim == 16);
    CHECK(c.mem.state.embed_dim == 32);
    CHECK(c.rl.encoder.embed_dim == 32);
}

TEST_CASE("parsing") {
    RunConfig c;
    parse_config("# desk\n\nenv.grid_size = 8   # small\n  rl.mode=mem_shaped\nrl.entropy_beta = 2e-2\n", c);
    CHECK(c.env.grid_size == 8);
    CHECK(c.rl.mode == shaping::RewardMode::MemShaped);
    CHECK(c.rl.entropy_beta == 0.02);

    CHECK(error_of("env.grid_size = 8\nenv.bad = 3\n").find("line 2") != std::string::npos);
    CHECK(error_of("env.grid_size = 8\nenv.bad = 3\n").find("env.bad") != std::string::npos);
    CHECK(error_of("data.quota = ten\n").find("line 1") != std::string::npos);
    CHECK(error_of("\n\nrl.mode = fastest\n").find("line 3") != std::string::npos);
    CHECK(error_of("mem.early_stop = maybe\n").find("true or false") != std::string::npos);
    CHECK(error_of("just words\n").find("key = value") != std::string::npos);
    CHECK(error_of("data.seed = -1\n").find("integer") != std::string::npos);

    CHECK_THROWS_AS(load_config("/nonexistent/run.conf", c), MissingArtifactError);
}

TEST_CASE("text round trip") {
    RunConfig a;
    a.set("env.grid_size", "8");
    a.set("mem.lambda", "0.0031");
    a.set("rl.update", "async");
    a.set("rl.gamma", "0.1");
    a.set("run_dir", "out/x");
    RunConfig b;
    parse_config(a.to_text(), b);
    CHECK(b.to_text() == a.to_text());
    CHECK(b.rl.gamma == 0.1);
    const auto text = a.to_text();
    CHECK(RunConfig::keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("validation") {
    RunConfig c;
    c.set("rl.n_step", "32");
    c.set("rl.budget", "10");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    RunConfig d;
    d.set("mem.threshold", "1.5");
    CHECK_THROWS_AS(d.validate(), ConfigError);
}
