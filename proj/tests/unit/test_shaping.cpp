#include <doctest.h>

#include <random>

#include "groundrl/dataset.hpp"
#include "groundrl/errors.hpp"
#include "groundrl/shaping.hpp"

using namespace groundrl;
using namespace groundrl::shaping;

namespace {

const lang::Vocabulary& vocab() {
    static const auto v = lang::standard_vocabulary();
    return v;
}

DistanceFn constant(double d) {
    return [d](const StackView&, const lang::Command&) { return d; };
}

struct Fixture {
    env::Frame frame;
    env::Observation obs;
    StackView view() const { return {frame, frame, obs, obs}; }
};

env::EnvConfig desk() {
    env::EnvConfig cfg;
    cfg.grid_size = 8;
    cfg.episode_length = 120;
    return cfg;
}

struct Step {
    env::Frame prev_frame, cur_frame;
    env::Observation prev, cur;
    double env_reward = 0.0;
};

// Random-agent trajectory as consecutive (stack, env reward) steps.
std::vector<Step> trajectory(std::uint64_t seed) {
    env::MiniBuild game(desk());
    std::mt19937_64 rng(seed);
    env::Observation cur = game.reset(seed), prev = cur;
    env::Frame cur_frame = game.state(), prev_frame = cur_frame;
    std::vector<Step> out;
    while (!game.done()) {
        const auto mask = game.legal_actions();
        std::vector<int> legal;
        for (int a = 0; a < env::kNumActions; ++a)
            if (mask[static_cast<std::size_t>(a)]) legal.push_back(a);
        env::CompoundAction act{static_cast<env::ActionId>(legal[rng() % legal.size()]), static_cast<int>(rng() % 8),
                                static_cast<int>(rng() % 8)};
        auto r = game.step(act);
        env::Frame next = game.state();
        out.push_back({cur_frame, next, cur, r.observation, r.reward});
        prev = cur;
        cur = r.observation;
        prev_frame = cur_frame;
        cur_frame = next;
    }
    return out;
}

}  // namespace

TEST_CASE("shape_reward examples") {
    auto script = default_script(vocab());
    Fixture f;
    auto r = shape_reward(f.view(), script, constant(0.3));
    CHECK(r.reward == 1.0);
    CHECK(r.advanced);
    CHECK(script.pointer == 1);
    r = shape_reward(f.view(), script, constant(0.7));
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.advanced);
    CHECK(script.pointer == 1);
    CHECK_FALSE(shape_reward(f.view(), script, constant(0.5)).advanced);
}

TEST_CASE("pointer wraps to loop_tail after the last command") {
    auto script = default_script(vocab());
    REQUIRE(script.commands.size() == 7u);
    CHECK(script.loop_tail == 5);
    script.pointer = 6;
    Fixture f;
    shape_reward(f.view(), script, constant(0.0));
    CHECK(script.pointer == 5);
    shape_reward(f.view(), script, constant(0.0));
    CHECK(script.pointer == 6);
    for (int i = 0; i < 20; ++i) {
        shape_reward(f.view(), script, constant(0.0));
        CHECK((script.pointer >= 0 && script.pointer <= static_cast<int>(script.commands.size())));
    }
}

TEST_CASE("script parsing") {
    const auto s = parse_script("// comment\nbuild a worker\n\n  train a marine  \ncollect resources\n", vocab());
    REQUIRE(s.commands.size() == 3u);
    CHECK(s.commands[1].text == "train a marine");
    CHECK(s.loop_tail == 1);
    CHECK(parse_script("build a worker\n#loop 0\n", vocab()).loop_tail == 0);
    CHECK(parse_script("build a worker\n", vocab()).loop_tail == 0);
    CHECK_THROWS_AS(parse_script("", vocab()), ConfigError);
    CHECK_THROWS_AS(parse_script("build a worker\n#loop 3\n", vocab()), ConfigError);
    CHECK_THROWS_AS(parse_script("build a worker\n#bogus\n", vocab()), ConfigError);
    try {
        parse_script("build a worker\n#bogus\n", vocab());
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(load_script("no-such-script.txt", vocab()), MissingArtifactError);
}

TEST_CASE("empty script is a configuration error") {
    NarrationScript empty;
    Fixture f;
    CHECK_THROWS_AS(shape_reward(f.view(), empty, constant(0.0)), ConfigError);
    CHECK_THROWS_AS(Shaper(RewardMode::SubtaskOracle, empty), ConfigError);
}

TEST_CASE("combined_reward examples") {
    CHECK(combined_reward(1.0, 1.0, RewardMode::MemShaped) == 2.0);
    CHECK(combined_reward(0.0, 1.0, RewardMode::Baseline) == 0.0);
    CHECK(combined_reward(0.0, 5.0, RewardMode::Baseline) == 0.0);
    CHECK(combined_reward(1.0, 1.0, RewardMode::SubtaskOracle) == 2.0);
    CHECK(parse_mode("mem_shaped") == RewardMode::MemShaped);
    CHECK(mode_name(parse_mode("subtask_oracle")) == "subtask_oracle");
    CHECK_THROWS_AS(parse_mode("dense"), ConfigError);
}

TEST_CASE("subtask oracle pays when the depot detector fires on a depot pointer") {
    auto script = parse_script("build a supply depot\ntrain a marine\n", vocab());
    Shaper shaper(RewardMode::SubtaskOracle, script);
    env::Frame a;
    a.depots = 1;
    env::Frame b = a;
    b.depots = 2;
    env::Observation o;
    const auto r = shaper.observe({a, b, o, o});
    CHECK(r.advanced);
    CHECK(combined_reward(0.0, r.reward, RewardMode::SubtaskOracle) == 1.0);
    CHECK(shaper.script().pointer == 1);
    CHECK_FALSE(shaper.observe({a, b, o, o}).advanced);
    CHECK(Shaper(RewardMode::Baseline, {}).observe({a, b, o, o}).reward == 0.0);
}

TEST_CASE("mem_shaped needs a distance") {
    CHECK_THROWS_AS(Shaper(RewardMode::MemShaped, default_script(vocab())), ConfigError);
}

TEST_CASE("oracle-perfect MEM reproduces the subtask oracle reward stream") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Shaper oracle(RewardMode::SubtaskOracle, default_script(vocab()));
        Shaper perfect(RewardMode::MemShaped, default_script(vocab()), oracle_distance);
        double env_total = 0.0, shaped_total = 0.0;
        int advances = 0;
        for (const auto& s : trajectory(seed)) {
            const StackView view{s.prev_frame, s.cur_frame, s.prev, s.cur};
            const auto a = oracle.observe(view);
            const auto b = perfect.observe(view);
            CHECK(a.reward == b.reward);
            CHECK(a.advanced == b.advanced);
            env_total += s.env_reward;
            shaped_total += combined_reward(s.env_reward, b.reward, RewardMode::MemShaped);
            advances += b.advanced ? 1 : 0;
        }
        CHECK(shaped_total == doctest::Approx(env_total + 1.0 * advances));
    }
}

TEST_CASE("MEM parameters are untouched by a shaped episode") {
    mem::MemConfig cfg;
    cfg.vocab_size = vocab().size();
    cfg.word_dim = 8;
    cfg.embed_dim = 16;
    cfg.state.grid_size = 8;
    cfg.state.conv1_channels = 2;
    cfg.state.conv2_channels = 4;
    cfg.state.nonspatial_hidden = 8;
    mem::MemModel model(cfg, 3);
    const ad::ParamStore before = model.params();
    MemDistance distance(model);
    auto script = default_script(vocab());
    script.threshold = 0.99;
    Shaper shaper(RewardMode::MemShaped, script,
                  [&](const StackView& v, const lang::Command& c) { return distance(v, c); });
    for (const auto& s : trajectory(11)) shaper.observe({s.prev_frame, s.cur_frame, s.prev, s.cur});
    for (int i = 0; i < before.size(); ++i) CHECK(model.params().at(i).value == before.at(i).value);
}
