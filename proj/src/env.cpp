#include "groundrl/env.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "groundrl/errors.hpp"

namespace groundrl::env {

std::string_view action_name(ActionId id) {
    switch (id) {
        case ActionId::NoOp: return "no_op";
        case ActionId::BuildWorker: return "build_worker";
        case ActionId::BuildDepot: return "build_depot";
        case ActionId::BuildBarracks: return "build_barracks";
        case ActionId::TrainMarine: return "train_marine";
    }
    return "unknown";
}

bool takes_placement(ActionId id) {
    return id == ActionId::BuildDepot || id == ActionId::BuildBarracks;
}

void EnvConfig::validate() const {
    if (grid_size < 8) throw ConfigError("grid_size must be >= 8, got " + std::to_string(grid_size));
    if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
    for (int i = 0; i < kBuildables; ++i) {
        if (rules.cost[i] <= 0) throw ConfigError("all unit costs must be positive");
        if (rules.duration[i] <= 0) throw ConfigError("all build durations must be positive");
    }
    if (rules.base_supply <= 0 || rules.depot_supply <= 0 || rules.worker_supply <= 0 ||
        rules.marine_supply <= 0)
        throw ConfigError("supply values must be positive");
    if (harvest_rate <= 0) throw ConfigError("harvest_rate must be positive");
    if (initial_workers <= 0) throw ConfigError("initial_workers must be positive");
    if (initial_minerals <= 0) throw ConfigError("initial_minerals must be positive");
    if (initial_workers * rules.worker_supply > rules.base_supply)
        throw ConfigError("initial workers exceed base supply");
}

namespace {

bool has_free_cell(const Frame& f) {
    return std::find(f.cells.begin(), f.cells.end(), static_cast<std::uint8_t>(Cell::Empty)) !=
           f.cells.end();
}

bool supply_room(const Frame& f, int need) { return f.supply_used + need <= f.supply_cap; }

}  // namespace

ActionMask legal_actions(const Frame& f, const EnvConfig& config) {
    const RuleTable& r = config.rules;
    ActionMask mask{};
    mask[static_cast<int>(ActionId::NoOp)] = true;
    mask[static_cast<int>(ActionId::BuildWorker)] =
        f.minerals >= r.cost_of(Buildable::Worker) && supply_room(f, r.worker_supply);
    const bool free_cell = has_free_cell(f);
    mask[static_cast<int>(ActionId::BuildDepot)] = f.minerals >= r.cost_of(Buildable::Depot) && free_cell;
    mask[static_cast<int>(ActionId::BuildBarracks)] =
        f.minerals >= r.cost_of(Buildable::Barracks) && free_cell && f.depots >= 1;
    mask[static_cast<int>(ActionId::TrainMarine)] =
        f.barracks >= 1 && f.minerals >= r.cost_of(Buildable::Marine) && supply_room(f, r.marine_supply);
    return mask;
}

Observation render(const Frame& f, const EnvConfig& config, int episode_length) {
    const int g = f.grid_size;
    const int plane = g * g;
    Observation obs;
    obs.grid_size = g;
    obs.spatial.assign(static_cast<std::size_t>(kSpatialLayers) * plane, 0.0);

    for (int i = 0; i < plane; ++i) obs.spatial[static_cast<std::size_t>(f.cells[i]) * plane + i] = 1.0;
    if (f.last_target >= 0) obs.spatial[static_cast<std::size_t>(kCellKinds) * plane + f.last_target] = 1.0;

    // Coarse density layers: per-block fraction of workers, structures, marines.
    const int block = std::max(2, g / 8);
    const int nb = (g + block - 1) / block;
    std::vector<std::array<int, 3>> counts(static_cast<std::size_t>(nb) * nb, {0, 0, 0});
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            auto& c = counts[(y / block) * nb + x / block];
            switch (f.at(x, y)) {
                case Cell::Worker: ++c[0]; break;
                case Cell::Base:
                case Cell::Depot:
                case Cell::Barracks:
                case Cell::Construction: ++c[1]; break;
                case Cell::Marine: ++c[2]; break;
                default: break;
            }
        }
    }
    const double area = static_cast<double>(block * block);
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            const auto& c = counts[(y / block) * nb + x / block];
            for (int k = 0; k < 3; ++k)
                obs.spatial[static_cast<std::size_t>(kScreenLayers + k) * plane + y * g + x] = c[k] / area;
        }
    }

    auto clip01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    auto& ns = obs.nonspatial;
    ns[0] = clip01(f.minerals / 1000.0);
    ns[1] = f.supply_cap > 0 ? clip01(static_cast<double>(f.supply_used) / f.supply_cap) : 0.0;
    // Unit counts are scaled so a single completion moves the feature visibly;
    // they may exceed 1 late in long episodes.
    ns[2] = f.workers / 20.0;
    ns[3] = f.depots / 10.0;
    ns[4] = f.barracks / 5.0;
    ns[5] = f.marines / 20.0;
    ns[6] = f.queue_length / 10.0;
    ns[7] = clip01(static_cast<double>(f.step) / episode_length);
    ns[8] = static_cast<double>(f.cumulative_harvested % kHarvestMilestone) / kHarvestMilestone;
    // Last action, one-hot over the four non-trivial actions (no_op is all zeros).
    if (f.last_action != ActionId::NoOp) ns[8 + static_cast<int>(f.last_action)] = 1.0;

    obs.action_mask = legal_actions(f, config);
    return obs;
}

MiniBuild::MiniBuild(EnvConfig config) : config_(std::move(config)) {
    config_.validate();
    reset(config_.rng_seed);
}

int MiniBuild::nearest_free_cell(int origin) const {
    const int g = config_.grid_size;
    const int ox = origin % g;
    const int oy = origin / g;
    for (int r = 0; r < g; ++r) {
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
                const int x = ox + dx;
                const int y = oy + dy;
                if (x < 0 || y < 0 || x >= g || y >= g) continue;
                if (state_.at(x, y) == Cell::Empty) return y * g + x;
            }
        }
    }
    return -1;
}

void MiniBuild::occupy(int cell, Cell kind) {
    if (state_.cells[cell] == static_cast<std::uint8_t>(Cell::Empty) && kind != Cell::Empty) --state_.empty_cells;
    state_.cells[cell] = static_cast<std::uint8_t>(kind);
}

void MiniBuild::spawn_unit(int origin, Cell kind) {
    // Units beyond grid capacity still count; they are just not drawn.
    const int cell = nearest_free_cell(origin);
    if (cell >= 0) occupy(cell, kind);
}

Observation MiniBuild::reset(std::uint64_t seed) {
    const int g = config_.grid_size;
    std::mt19937_64 rng(seed);

    state_ = WorldState{};
    state_.grid_size = g;
    state_.cells.assign(static_cast<std::size_t>(g) * g, static_cast<std::uint8_t>(Cell::Empty));
    state_.empty_cells = g * g;
    state_.minerals = config_.initial_minerals;
    state_.supply_cap = config_.rules.base_supply;
    barracks_cells_.clear();
    marines_queued_ = 0;

    std::uniform_int_distribution<int> pos(2, g - 3);
    const int bx = pos(rng);
    const int by = pos(rng);
    base_cell_ = by * g + bx;
    occupy(base_cell_, Cell::Base);

    // Mineral line three cells away from the base, on a side with room.
    constexpr std::array<std::array<int, 2>, 4> dirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    std::vector<int> candidates;
    for (int d = 0; d < 4; ++d) {
        const int x = bx + 3 * dirs[d][0];
        const int y = by + 3 * dirs[d][1];
        if (x >= 0 && y >= 0 && x < g && y < g) candidates.push_back(d);
    }
    const int d = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    const int mx = bx + 3 * dirs[d][0];
    const int my = by + 3 * dirs[d][1];
    for (int k = -2; k <= 3; ++k) {
        const int x = mx + k * dirs[d][1];
        const int y = my + k * dirs[d][0];
        if (x >= 0 && y >= 0 && x < g && y < g) occupy(y * g + x, Cell::Mineral);
    }
    const int worker_origin = ((by + my) / 2) * g + (bx + mx) / 2;
    for (int i = 0; i < config_.initial_workers; ++i) spawn_unit(worker_origin, Cell::Worker);
    state_.workers = config_.initial_workers;
    state_.supply_used = config_.initial_workers * config_.rules.worker_supply;
    return observe();
}

bool MiniBuild::apply_action(const CompoundAction& action) {
    const auto mask = legal_actions();
    const int id = static_cast<int>(action.id);
    if (id < 0 || id >= kNumActions || !mask[id] || action.id == ActionId::NoOp) return false;
    const RuleTable& r = config_.rules;
    const int g = config_.grid_size;

    switch (action.id) {
        case ActionId::BuildWorker:
            state_.minerals -= r.cost_of(Buildable::Worker);
            state_.supply_used += r.worker_supply;
            state_.queue.push_back({Buildable::Worker, r.duration_of(Buildable::Worker), base_cell_});
            state_.last_target = base_cell_;
            break;
        case ActionId::TrainMarine: {
            const int producer = barracks_cells_[marines_queued_++ % barracks_cells_.size()];
            state_.minerals -= r.cost_of(Buildable::Marine);
            state_.supply_used += r.marine_supply;
            state_.queue.push_back({Buildable::Marine, r.duration_of(Buildable::Marine), producer});
            state_.last_target = producer;
            break;
        }
        case ActionId::BuildDepot:
        case ActionId::BuildBarracks: {
            if (action.x < 0 || action.y < 0 || action.x >= g || action.y >= g) return false;
            const Buildable kind = action.id == ActionId::BuildDepot ? Buildable::Depot : Buildable::Barracks;
            // An occupied target snaps to the nearest free cell.
            const int cell = nearest_free_cell(action.y * g + action.x);
            if (cell < 0) return false;
            state_.minerals -= r.cost_of(kind);
            occupy(cell, Cell::Construction);
            state_.queue.push_back({kind, r.duration_of(kind), cell});
            state_.last_target = cell;
            break;
        }
        case ActionId::NoOp: break;
    }
    state_.last_action = action.id;
    return true;
}

int MiniBuild::advance_queue() {
    int marines_done = 0;
    std::vector<BuildOrder> pending;
    pending.reserve(state_.queue.size());
    for (auto order : state_.queue) {
        if (--order.remaining > 0) {
            pending.push_back(order);
            continue;
        }
        switch (order.kind) {
            case Buildable::Worker:
                ++state_.workers;
                spawn_unit(order.cell, Cell::Worker);
                break;
            case Buildable::Depot:
                ++state_.depots;
                state_.supply_cap += config_.rules.depot_supply;
                occupy(order.cell, Cell::Depot);
                break;
            case Buildable::Barracks:
                ++state_.barracks;
                barracks_cells_.push_back(order.cell);
                occupy(order.cell, Cell::Barracks);
                break;
            case Buildable::Marine:
                ++state_.marines;
                ++marines_done;
                spawn_unit(order.cell, Cell::Marine);
                break;
        }
    }
    state_.queue = std::move(pending);
    return marines_done;
}

StepResult MiniBuild::step(const CompoundAction& action) {
    if (state_.done) throw UsageError("step() called after the episode finished; call reset()");

    const std::size_t queued_before = state_.queue.size();
    if (!apply_action(action)) {
        state_.last_action = ActionId::NoOp;
        state_.last_target = -1;
    }
    // Orders enqueued this step start progressing next step.
    std::vector<BuildOrder> fresh(state_.queue.begin() + static_cast<std::ptrdiff_t>(queued_before),
                                  state_.queue.end());
    state_.queue.resize(queued_before);
    const int marines_done = advance_queue();
    state_.queue.insert(state_.queue.end(), fresh.begin(), fresh.end());
    state_.queue_length = static_cast<int>(state_.queue.size());

    const int income = config_.harvest_rate * state_.workers;
    state_.minerals += income;
    state_.cumulative_harvested += income;

    ++state_.step;
    state_.done = state_.step >= config_.episode_length;

    StepResult result;
    result.observation = observe();
    result.reward = static_cast<double>(marines_done);
    result.done = state_.done;
    return result;
}

Observation reset(const EnvConfig& config, std::uint64_t seed) {
    MiniBuild env(config);
    return env.reset(seed);
}

std::string rule_report(const EnvConfig& config) {
    static constexpr std::array<const char*, kBuildables> names{"worker", "depot", "barracks", "marine"};
    std::ostringstream os;
    os << "MiniBuild rule table\n";
    os << "  grid_size        " << config.grid_size << "\n";
    os << "  episode_length   " << config.episode_length << "\n";
    os << "  harvest_rate     " << config.harvest_rate << " minerals/worker/step\n";
    os << "  initial_workers  " << config.initial_workers << "\n";
    os << "  initial_minerals " << config.initial_minerals << "\n";
    os << "  supply           base " << config.rules.base_supply << ", depot +" << config.rules.depot_supply
       << ", worker " << config.rules.worker_supply << ", marine " << config.rules.marine_supply << "\n";
    os << "  unit       cost  duration\n";
    for (int i = 0; i < kBuildables; ++i) {
        os << "  " << names[i];
        for (std::size_t pad = std::char_traits<char>::length(names[i]); pad < 10; ++pad) os << ' ';
        os << ' ' << config.rules.cost[i] << "\t" << config.rules.duration[i] << "\n";
    }
    os << "prerequisites: barracks needs a completed depot; marines need a completed barracks\n";
    os << "reward: +1 per completed marine\n";
    return os.str();
}

void TraceWriter::write(int step, const CompoundAction& action, double reward, const Observation& obs) {
    nlohmann::json rec;
    rec["step"] = step;
    rec["action"] = std::string(action_name(action.id));
    rec["x"] = action.x;
    rec["y"] = action.y;
    rec["reward"] = reward;
    rec["nonspatial"] = std::vector<double>(obs.nonspatial.begin(), obs.nonspatial.end());
    out_ << rec.dump() << '\n';
}

}  // namespace groundrl::env
