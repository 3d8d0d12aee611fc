#pragma once

// Random-agent rollouts, rule-based goal detectors and the labeled
// (state stack, command, congruence) dataset with its 4:1:1 splits.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "groundrl/env.hpp"
#include "groundrl/lang.hpp"

namespace groundrl::dataset {

using GoalFlags = std::array<bool, lang::kNumGoals>;

// Which detectors fire on the transition prev -> cur.
GoalFlags fired_goals(const env::Frame& prev, const env::Frame& cur);
// The single reported goal; when several fire, marine wins over barracks over
// depot over worker over the harvest milestone.
std::optional<int> detect_goal(const env::Frame& prev, const env::Frame& cur);

struct Transition {
    int episode;
    int step;  // step index of `cur`
    const env::Frame& prev;
    const env::Frame& cur;
};

std::uint64_t episode_seed(std::uint64_t seed, int episode);

// Uniform-random legal actions with uniform placement. Transitions pair
// consecutive pre-action states, so an episode of L steps yields L-1 of them.
void run_random_agent(const env::EnvConfig& config, int first_episode, int episodes, std::uint64_t seed,
                      const std::function<void(const Transition&)>& visit);

enum class PairKind : std::uint8_t { Matched = 0, Mismatched = 1, Null = 2 };
std::string_view kind_name(PairKind kind);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
std::string_view split_name(Split split);

struct LabeledPair {
    int episode = 0;
    int step = 0;
    PairKind kind = PairKind::Matched;
    int detected = -1;  // goal that fired, -1 for null states
    int command_goal = 0;
    int y = 0;  // 0 congruent, 1 incongruent
    Split split = Split::Train;
    std::string text;
    std::vector<int> ids;
    env::Frame prev;
    env::Frame cur;
};

struct DatasetConfig {
    env::EnvConfig env;
    int quota = 1000;  // matched pairs per goal
    std::uint64_t seed = 1;
    int max_episodes = 200000;
    int chunk_episodes = 250;
};

struct Dataset {
    env::EnvConfig env;
    std::vector<LabeledPair> records;
    int episodes_run = 0;
    std::array<std::int64_t, lang::kNumGoals> detections{};
    std::int64_t null_candidates = 0;

    env::Observation observe(const env::Frame& frame) const { return env::render(frame, env, env.episode_length); }
    std::vector<const LabeledPair*> split(Split s) const;
};

// Throws DataScarcityError naming the first goal whose quota cannot be met
// within max_episodes.
Dataset build_dataset(const DatasetConfig& config, const lang::Vocabulary& vocab);

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

// Per (kind, goal) counts in each split, plus split totals.
std::string stats_report(const Dataset& data);

}  // namespace groundrl::dataset
