#pragma once

// MiniBuild: a deterministic grid-world stand-in for the BuildMarines task.
// Workers harvest automatically; depots raise the supply cap; barracks unlock
// marines; the only environment reward is +1 per completed marine.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace groundrl::env {

enum class Cell : std::uint8_t {
    Empty = 0,
    Base,
    Worker,
    Depot,
    Barracks,
    Marine,
    Mineral,
    Construction,
};
inline constexpr int kCellKinds = 8;

// 8 one-hot occupancy layers + selection form the "screen" group; three
// coarse density layers form the "minimap" group.
inline constexpr int kScreenLayers = kCellKinds + 1;
inline constexpr int kMinimapLayers = 3;
inline constexpr int kSpatialLayers = kScreenLayers + kMinimapLayers;
inline constexpr int kNonSpatial = 13;
inline constexpr int kHarvestMilestone = 100;

enum class ActionId : std::uint8_t {
    NoOp = 0,
    BuildWorker,
    BuildDepot,
    BuildBarracks,
    TrainMarine,
};
inline constexpr int kNumActions = 5;

std::string_view action_name(ActionId id);
bool takes_placement(ActionId id);

struct CompoundAction {
    ActionId id = ActionId::NoOp;
    int x = 0;
    int y = 0;
};

enum class Buildable : std::uint8_t { Worker = 0, Depot, Barracks, Marine };
inline constexpr int kBuildables = 4;

// Economy constants in one place. Indexed by Buildable.
struct RuleTable {
    std::array<int, kBuildables> cost{50, 100, 150, 50};
    std::array<int, kBuildables> duration{5, 10, 15, 5};
    int base_supply = 15;
    int depot_supply = 8;
    int worker_supply = 1;
    int marine_supply = 1;

    int cost_of(Buildable b) const { return cost[static_cast<int>(b)]; }
    int duration_of(Buildable b) const { return duration[static_cast<int>(b)]; }
};

struct EnvConfig {
    int grid_size = 64;
    int episode_length = 800;
    RuleTable rules;
    int harvest_rate = 1;
    int initial_workers = 6;
    int initial_minerals = 50;
    std::uint64_t rng_seed = 0;

    // Throws ConfigError.
    void validate() const;
    int cells() const { return grid_size * grid_size; }
};

struct BuildOrder {
    Buildable kind;
    int remaining;
    int cell;  // construction site, or the producer cell for units
};

// The fixed-width part of the world: enough to render an observation and to
// evaluate goal detectors. Stored verbatim in dataset records.
struct Frame {
    int grid_size = 0;
    int step = 0;
    int minerals = 0;
    int supply_used = 0;
    int supply_cap = 0;
    int workers = 0;
    int depots = 0;
    int barracks = 0;
    int marines = 0;  // completed marines, equals total env reward so far
    int queue_length = 0;
    std::int64_t cumulative_harvested = 0;
    ActionId last_action = ActionId::NoOp;
    int last_target = -1;  // cell index highlighted by the selection layer
    std::vector<std::uint8_t> cells;

    Cell at(int x, int y) const { return static_cast<Cell>(cells[y * grid_size + x]); }
    bool operator==(const Frame&) const = default;
};

struct WorldState : Frame {
    std::vector<BuildOrder> queue;
    int empty_cells = 0;
    bool done = false;
};

using ActionMask = std::array<bool, kNumActions>;

struct Observation {
    int grid_size = 0;
    std::vector<double> spatial;  // [kSpatialLayers x G x G], row-major
    std::array<double, kNonSpatial> nonspatial{};
    ActionMask action_mask{};

    bool operator==(const Observation&) const = default;
};

ActionMask legal_actions(const Frame& frame, const EnvConfig& config);
Observation render(const Frame& frame, const EnvConfig& config, int episode_length);

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;
};

class MiniBuild {
public:
    explicit MiniBuild(EnvConfig config);

    Observation reset(std::uint64_t seed);
    // Illegal actions degrade to no-op. Throws UsageError after the episode ends.
    StepResult step(const CompoundAction& action);

    const WorldState& state() const { return state_; }
    // Test hook: overwrite selected economy fields of the live state.
    WorldState& mutable_state() { return state_; }
    const EnvConfig& config() const { return config_; }
    ActionMask legal_actions() const { return env::legal_actions(state_, config_); }
    Observation observe() const { return render(state_, config_, config_.episode_length); }
    bool done() const { return state_.done; }

private:
    int nearest_free_cell(int origin) const;
    void occupy(int cell, Cell kind);
    void spawn_unit(int origin, Cell kind);
    bool apply_action(const CompoundAction& action);
    int advance_queue();

    EnvConfig config_;
    WorldState state_;
    int base_cell_ = 0;
    std::vector<int> barracks_cells_;
    int marines_queued_ = 0;
};

// Convenience matching the functional contract: fresh env observation.
Observation reset(const EnvConfig& config, std::uint64_t seed);

// Human-readable dump of the rule table.
std::string rule_report(const EnvConfig& config);

// One JSON object per line: step, action, x, y, reward, nonspatial.
class TraceWriter {
public:
    explicit TraceWriter(std::ostream& out) : out_(out) {}
    void write(int step, const CompoundAction& action, double reward, const Observation& obs);

private:
    std::ostream& out_;
};

}  // namespace groundrl::env
