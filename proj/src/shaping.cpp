#include "groundrl/shaping.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "groundrl/dataset.hpp"
#include "groundrl/errors.hpp"

namespace groundrl::shaping {

void NarrationScript::validate() const {
    if (commands.empty()) throw ConfigError("narration script has no commands");
    if (pointer < 0 || pointer > static_cast<int>(commands.size())) throw ConfigError("script pointer out of range");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("script threshold must lie in (0, 1)");
    if (!(r_shape > 0.0)) throw ConfigError("r_shape must be positive");
    if (loop_tail < 0 || loop_tail >= static_cast<int>(commands.size()))
        throw ConfigError("loop index " + std::to_string(loop_tail) + " outside a script of " +
                          std::to_string(commands.size()) + " commands");
}

void NarrationScript::advance() {
    ++pointer;
    if (pointer >= static_cast<int>(commands.size())) pointer = loop_tail;
}

NarrationScript parse_script(std::string_view text, const lang::Vocabulary& vocab) {
    NarrationScript script;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    int loop = -1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
        if (line.starts_with("//")) continue;
        if (line.starts_with("#loop")) {
            std::istringstream arg(line.substr(5));
            if (!(arg >> loop) || loop < 0) throw ConfigError("line " + std::to_string(line_no) + ": bad #loop directive");
            continue;
        }
        if (line.starts_with("#")) throw ConfigError("line " + std::to_string(line_no) + ": unknown directive");
        script.commands.push_back(lang::make_command(line, vocab));
    }
    const int n = static_cast<int>(script.commands.size());
    script.loop_tail = loop >= 0 ? loop : std::max(0, n - 2);
    script.validate();
    return script;
}

NarrationScript load_script(const std::string& path, const lang::Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("script not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_script(buf.str(), vocab);
}

std::string default_script_text() {
    std::string text;
    for (int goal = 0; goal < lang::kNumGoals; ++goal) text += std::string(lang::canonical_command(goal)) + "\n";
    text += std::string(lang::canonical_command(lang::kDepot)) + "\n";
    text += std::string(lang::canonical_command(lang::kMarine)) + "\n";
    text += "#loop 5\n";
    return text;
}

NarrationScript default_script(const lang::Vocabulary& vocab) { return parse_script(default_script_text(), vocab); }

ShapeResult shape_reward(const StackView& stack, NarrationScript& script, const DistanceFn& distance) {
    if (script.commands.empty()) throw ConfigError("narration script has no commands");
    const double d = distance(stack, script.current());
    if (!(d < script.threshold)) return {};
    script.advance();
    return {script.r_shape, true};
}

double oracle_distance(const StackView& stack, const lang::Command& command) {
    if (!command.goal) throw ConfigError("command '" + command.text + "' has no known goal for the rule oracle");
    return dataset::fired_goals(stack.prev_frame, stack.cur_frame)[static_cast<std::size_t>(*command.goal)] ? 0.0 : 1.0;
}

double MemDistance::operator()(const StackView& stack, const lang::Command& command) {
    auto it = cache_.find(command.ids);
    if (it == cache_.end()) {
        ad::Graph g;
        const std::vector<std::vector<int>> one{command.ids};
        const auto v = model_->command_embedding(g, one).value().values();
        it = cache_.emplace(command.ids, std::vector<double>(v.begin(), v.end())).first;
    }
    state_enc::StateBatch batch;
    batch.add(stack.prev, stack.cur);
    ad::Graph g;
    const auto& xs = model_->state_embedding(g, batch).value();
    const auto& xc = it->second;
    if (xs.size() != xc.size()) throw DimensionError("state and command embeddings differ in size");
    double s = 0.0;
    for (std::size_t j = 0; j < xc.size(); ++j) {
        const double diff = xs[j] - xc[j];
        s += diff * diff;
    }
    return std::sqrt(s);
}

RewardMode parse_mode(std::string_view name) {
    if (name == "baseline") return RewardMode::Baseline;
    if (name == "subtask_oracle") return RewardMode::SubtaskOracle;
    if (name == "mem_shaped") return RewardMode::MemShaped;
    throw ConfigError("unknown reward mode '" + std::string(name) + "' (baseline, subtask_oracle, mem_shaped)");
}

std::string_view mode_name(RewardMode mode) {
    switch (mode) {
        case RewardMode::Baseline: return "baseline";
        case RewardMode::SubtaskOracle: return "subtask_oracle";
        case RewardMode::MemShaped: return "mem_shaped";
    }
    return "?";
}

double combined_reward(double env_reward, double interim, RewardMode mode) {
    return mode == RewardMode::Baseline ? env_reward : env_reward + interim;
}

Shaper::Shaper(RewardMode mode, NarrationScript script, DistanceFn mem_distance)
    : mode_(mode), script_(std::move(script)), distance_(std::move(mem_distance)) {
    if (mode_ == RewardMode::Baseline) return;
    script_.validate();
    if (mode_ == RewardMode::SubtaskOracle) {
        for (const auto& c : script_.commands)
            if (!c.goal) throw ConfigError("subtask_oracle needs script commands with known goals: '" + c.text + "'");
        distance_ = oracle_distance;
    } else if (!distance_) {
        throw ConfigError("mem_shaped mode needs a MEM distance");
    }
}

ShapeResult Shaper::observe(const StackView& stack) {
    if (mode_ == RewardMode::Baseline) return {};
    return shape_reward(stack, script_, distance_);
}

}  // namespace groundrl::shaping
