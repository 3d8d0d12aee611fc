#include <doctest.h>

#include <random>
#include <sstream>

#include "groundrl/env.hpp"
#include "groundrl/errors.hpp"

using namespace groundrl;
using namespace groundrl::env;

namespace {

CompoundAction random_legal(const MiniBuild& env, std::mt19937_64& rng) {
    const auto mask = env.legal_actions();
    std::vector<int> legal;
    for (int i = 0; i < kNumActions; ++i)
        if (mask[i]) legal.push_back(i);
    const int g = env.config().grid_size;
    return {static_cast<ActionId>(legal[rng() % legal.size()]), static_cast<int>(rng() % g),
            static_cast<int>(rng() % g)};
}

bool mask_has(const ActionMask& m, ActionId id) { return m[static_cast<int>(id)]; }

}  // namespace

TEST_CASE("reset with default config exposes starting economy") {
    EnvConfig cfg;
    MiniBuild env(cfg);
    const Observation obs = env.reset(7);
    CHECK(obs.nonspatial[0] == doctest::Approx(50.0 / 1000.0));
    CHECK(env.state().supply_used == 6);
    CHECK(env.state().supply_cap == 15);
    CHECK(obs.nonspatial.size() == 13);
    CHECK(obs.spatial.size() == static_cast<std::size_t>(kSpatialLayers) * 64 * 64);
}

TEST_CASE("small grid yields a 12 x 8 x 8 spatial tensor") {
    EnvConfig cfg;
    cfg.grid_size = 8;
    const Observation obs = reset(cfg, 0);
    CHECK(obs.spatial.size() == 12u * 8u * 8u);
    CHECK(obs.grid_size == 8);
}

TEST_CASE("reset is deterministic per seed") {
    EnvConfig cfg;
    cfg.grid_size = 16;
    CHECK(reset(cfg, 3) == reset(cfg, 3));
}

TEST_CASE("invalid configs are rejected") {
    EnvConfig cfg;
    cfg.grid_size = 7;
    CHECK_THROWS_AS(MiniBuild{cfg}, ConfigError);
    cfg = EnvConfig{};
    cfg.episode_length = 0;
    CHECK_THROWS_AS(MiniBuild{cfg}, ConfigError);
    cfg = EnvConfig{};
    cfg.rules.cost[2] = 0;
    CHECK_THROWS_AS(MiniBuild{cfg}, ConfigError);
    cfg = EnvConfig{};
    cfg.harvest_rate = 0;
    CHECK_THROWS_AS(MiniBuild{cfg}, ConfigError);
}

TEST_CASE("building a depot deducts cost, enqueues, then harvests") {
    EnvConfig cfg;
    cfg.grid_size = 16;
    MiniBuild env(cfg);
    env.reset(1);
    env.mutable_state().minerals = 100;
    const auto result = env.step({ActionId::BuildDepot, 0, 0});
    CHECK(env.state().minerals == 6);
    REQUIRE(env.state().queue.size() == 1);
    CHECK(env.state().queue[0].kind == Buildable::Depot);
    CHECK(env.state().queue[0].remaining == 10);
    CHECK(result.reward == 0.0);
}

TEST_CASE("train_marine without barracks is a no-op") {
    EnvConfig cfg;
    cfg.grid_size = 16;
    MiniBuild env(cfg);
    env.reset(1);
    env.mutable_state().minerals = 500;
    const int before = env.state().minerals;
    const auto result = env.step({ActionId::TrainMarine, 0, 0});
    CHECK(result.reward == 0.0);
    CHECK(env.state().queue.empty());
    CHECK(env.state().minerals == before + 6);
    CHECK(env.state().last_action == ActionId::NoOp);
}

TEST_CASE("completing a marine yields reward 1") {
    EnvConfig cfg;
    cfg.grid_size = 16;
    MiniBuild env(cfg);
    env.reset(2);
    env.mutable_state().minerals = 1000;
    env.step({ActionId::BuildDepot, 1, 1});
    for (int i = 0; i < 10; ++i) env.step({});
    REQUIRE(env.state().depots == 1);
    env.step({ActionId::BuildBarracks, 2, 2});
    for (int i = 0; i < 15; ++i) env.step({});
    REQUIRE(env.state().barracks == 1);
    env.step({ActionId::TrainMarine, 0, 0});
    double total = 0.0;
    double last = 0.0;
    for (int i = 0; i < 5; ++i) total += (last = env.step({}).reward);
    CHECK(last == 1.0);
    CHECK(total == 1.0);
    CHECK(env.state().marines == 1);
}

TEST_CASE("legal action prerequisites") {
    EnvConfig cfg;
    cfg.grid_size = 16;
    MiniBuild env(cfg);
    env.reset(4);
    auto mask = env.legal_actions();
    CHECK(mask_has(mask, ActionId::NoOp));
    CHECK(mask_has(mask, ActionId::BuildWorker));
    CHECK_FALSE(mask_has(mask, ActionId::BuildBarracks));
    CHECK_FALSE(mask_has(mask, ActionId::BuildDepot));
    CHECK_FALSE(mask_has(mask, ActionId::TrainMarine));

    auto& s = env.mutable_state();
    s.barracks = 1;
    s.minerals = 49;
    CHECK_FALSE(mask_has(env.legal_actions(), ActionId::TrainMarine));
    s.minerals = 50;
    CHECK(mask_has(env.legal_actions(), ActionId::TrainMarine));
    s.supply_used = s.supply_cap;
    mask = env.legal_actions();
    CHECK_FALSE(mask_has(mask, ActionId::TrainMarine));
    CHECK_FALSE(mask_has(mask, ActionId::BuildWorker));
}

TEST_CASE("stepping a finished episode is a usage error") {
    EnvConfig cfg;
    cfg.grid_size = 8;
    cfg.episode_length = 3;
    MiniBuild env(cfg);
    env.reset(0);
    env.step({});
    env.step({});
    CHECK(env.step({}).done);
    CHECK_THROWS_AS(env.step({}), UsageError);
}

TEST_CASE("random play preserves economy invariants") {
    EnvConfig cfg;
    cfg.grid_size = 8;
    cfg.episode_length = 200;
    MiniBuild env(cfg);
    std::mt19937_64 rng(11);
    for (int episode = 0; episode < 50; ++episode) {
        env.reset(episode);
        double rewards = 0.0;
        bool saw_barracks = false, saw_depot = false;
        while (!env.done()) {
            const auto mask = env.legal_actions();
            if (mask_has(mask, ActionId::TrainMarine)) REQUIRE(saw_barracks);
            if (mask_has(mask, ActionId::BuildBarracks)) REQUIRE(saw_depot);
            rewards += env.step(random_legal(env, rng)).reward;
            const auto& s = env.state();
            REQUIRE(s.minerals >= 0);
            REQUIRE(s.supply_used <= s.supply_cap);
            saw_depot = saw_depot || s.depots > 0;
            saw_barracks = saw_barracks || s.barracks > 0;
            if (s.barracks > 0) REQUIRE(s.depots > 0);
        }
        CHECK(rewards == env.state().marines);
    }
}

TEST_CASE("observation values stay in range") {
    EnvConfig cfg;
    cfg.grid_size = 8;
    cfg.episode_length = 150;
    MiniBuild env(cfg);
    env.reset(5);
    std::mt19937_64 rng(5);
    while (!env.done()) {
        const auto obs = env.step(random_legal(env, rng)).observation;
        for (double v : obs.spatial) REQUIRE((v >= 0.0 && v <= 1.0));
        CHECK(obs.action_mask[0]);
    }
}

TEST_CASE("replaying a seed and action sequence reproduces observations") {
    EnvConfig cfg;
    cfg.grid_size = 8;
    cfg.episode_length = 120;
    std::vector<CompoundAction> actions;
    std::vector<Observation> first;
    {
        MiniBuild env(cfg);
        env.reset(9);
        std::mt19937_64 rng(9);
        while (!env.done()) {
            actions.push_back(random_legal(env, rng));
            first.push_back(env.step(actions.back()).observation);
        }
    }
    MiniBuild env(cfg);
    env.reset(9);
    for (std::size_t i = 0; i < actions.size(); ++i) REQUIRE(env.step(actions[i]).observation == first[i]);
}

TEST_CASE("rule report and trace export") {
    EnvConfig cfg;
    const std::string report = rule_report(cfg);
    CHECK(report.find("barracks") != std::string::npos);
    CHECK(report.find("150") != std::string::npos);

    cfg.grid_size = 8;
    MiniBuild env(cfg);
    env.reset(0);
    std::ostringstream os;
    TraceWriter trace(os);
    const auto r = env.step({ActionId::BuildWorker, 0, 0});
    trace.write(1, {ActionId::BuildWorker, 0, 0}, r.reward, r.observation);
    CHECK(os.str().find("\"action\":\"build_worker\"") != std::string::npos);
    CHECK(os.str().back() == '\n');
}
