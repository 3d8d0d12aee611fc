#pragma once

// Narration-driven self-reward: the agent walks an ordered command script and
// pays itself whenever the current state is close enough to the current
// command.

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "groundrl/env.hpp"
#include "groundrl/lang.hpp"
#include "groundrl/mem.hpp"

namespace groundrl::shaping {

struct NarrationScript {
    std::vector<lang::Command> commands;
    int pointer = 0;
    double threshold = 0.5;
    double r_shape = 1.0;
    int loop_tail = 0;

    // Throws ConfigError.
    void validate() const;
    const lang::Command& current() const { return commands.at(static_cast<std::size_t>(pointer)); }
    // Moves to the next command, wrapping to loop_tail after the last one.
    void advance();
    void restart() { pointer = 0; }
};

// One command per line; blank lines and lines starting with "//" are skipped.
// "#loop N" sets loop_tail to the zero-based command index N. Without it the
// script loops over its last two commands.
NarrationScript parse_script(std::string_view text, const lang::Vocabulary& vocab);
NarrationScript load_script(const std::string& path, const lang::Vocabulary& vocab);
std::string default_script_text();
NarrationScript default_script(const lang::Vocabulary& vocab);

// Consecutive pre-action states, both as frames (for rule detectors) and as
// rendered observations (for learned models).
struct StackView {
    const env::Frame& prev_frame;
    const env::Frame& cur_frame;
    const env::Observation& prev;
    const env::Observation& cur;
};

using DistanceFn = std::function<double(const StackView&, const lang::Command&)>;

struct ShapeResult {
    double reward = 0.0;
    bool advanced = false;
};

// At most one advance per call. Throws ConfigError on an empty script.
ShapeResult shape_reward(const StackView& stack, NarrationScript& script, const DistanceFn& distance);

// Distance 0 when the rule detector of the command's goal fired, else 1.
double oracle_distance(const StackView& stack, const lang::Command& command);

// MEM-backed distance. Command embeddings are cached; the model is only read.
class MemDistance {
public:
    explicit MemDistance(mem::MemModel& model) : model_(&model) {}
    double operator()(const StackView& stack, const lang::Command& command);

private:
    mem::MemModel* model_;
    std::map<std::vector<int>, std::vector<double>> cache_;
};

enum class RewardMode { Baseline, SubtaskOracle, MemShaped };
RewardMode parse_mode(std::string_view name);
std::string_view mode_name(RewardMode mode);

double combined_reward(double env_reward, double interim, RewardMode mode);

// Per-worker shaping state for one reward mode.
class Shaper {
public:
    Shaper(RewardMode mode, NarrationScript script, DistanceFn mem_distance = {});

    // Interim reward for the transition; zero in baseline mode.
    ShapeResult observe(const StackView& stack);
    void start_episode() { script_.restart(); }
    RewardMode mode() const { return mode_; }
    const NarrationScript& script() const { return script_; }

private:
    RewardMode mode_;
    NarrationScript script_;
    DistanceFn distance_;
};

}  // namespace groundrl::shaping
