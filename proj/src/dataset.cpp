#include "groundrl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "groundrl/binio.hpp"
#include "groundrl/errors.hpp"

namespace groundrl::dataset {

using env::Frame;
using lang::kNumGoals;

namespace {

constexpr char kMagic[8] = {'G', 'R', 'L', 'D', 'A', 'T', 'A', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kTextWidth = 96;

// Detector evaluation order doubles as the tie-break priority.
constexpr int kPriority[kNumGoals] = {lang::kMarine, lang::kBarracks, lang::kDepot, lang::kWorker, lang::kCollect};

struct Event {
    int episode;
    int step;
};

std::vector<Split> proportional(std::size_t n, const std::array<std::size_t, 3>& targets) {
    std::vector<Split> out(n);
    std::array<std::size_t, 3> assigned{};
    for (std::size_t j = 0; j < n; ++j) {
        int best = 0;
        double best_deficit = -1e300;
        for (int s = 0; s < 3; ++s) {
            if (assigned[s] >= targets[s]) continue;
            const double deficit = static_cast<double>(targets[s]) * static_cast<double>(j + 1) / static_cast<double>(n) -
                                   static_cast<double>(assigned[s]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        ++assigned[static_cast<std::size_t>(best)];
        out[j] = static_cast<Split>(best);
    }
    return out;
}

std::array<std::size_t, 3> ratio_targets(std::size_t n) {
    const std::size_t train = (n * 4 + 3) / 6;
    const std::size_t val = (n - train) / 2;
    return {train, val, n - train - val};
}

void put_frame(std::ostream& out, const Frame& f) {
    for (int v : {f.step, f.minerals, f.supply_used, f.supply_cap, f.workers, f.depots, f.barracks, f.marines,
                  f.queue_length, static_cast<int>(f.last_action), f.last_target})
        binio::put<std::int32_t>(out, v);
    binio::put<std::int64_t>(out, f.cumulative_harvested);
    out.write(reinterpret_cast<const char*>(f.cells.data()), static_cast<std::streamsize>(f.cells.size()));
}

Frame get_frame(std::istream& in, int grid) {
    Frame f;
    f.grid_size = grid;
    int* fields[] = {&f.step, &f.minerals, &f.supply_used, &f.supply_cap, &f.workers, &f.depots,
                     &f.barracks, &f.marines, &f.queue_length};
    for (int* p : fields) *p = binio::get<std::int32_t>(in);
    f.last_action = static_cast<env::ActionId>(binio::get<std::int32_t>(in));
    f.last_target = binio::get<std::int32_t>(in);
    f.cumulative_harvested = binio::get<std::int64_t>(in);
    f.cells.resize(static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid));
    in.read(reinterpret_cast<char*>(f.cells.data()), static_cast<std::streamsize>(f.cells.size()));
    if (!in) throw IoError("truncated dataset record");
    return f;
}

}  // namespace

GoalFlags fired_goals(const Frame& prev, const Frame& cur) {
    GoalFlags f{};
    f[lang::kWorker] = cur.workers > prev.workers;
    f[lang::kDepot] = cur.depots > prev.depots;
    f[lang::kBarracks] = cur.barracks > prev.barracks;
    f[lang::kMarine] = cur.marines > prev.marines;
    f[lang::kCollect] = cur.cumulative_harvested / env::kHarvestMilestone > prev.cumulative_harvested / env::kHarvestMilestone;
    return f;
}

std::optional<int> detect_goal(const Frame& prev, const Frame& cur) {
    const GoalFlags f = fired_goals(prev, cur);
    for (int goal : kPriority)
        if (f[static_cast<std::size_t>(goal)]) return goal;
    return std::nullopt;
}

std::uint64_t episode_seed(std::uint64_t seed, int episode) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(episode), 0x5eedu};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void run_random_agent(const env::EnvConfig& config, int first_episode, int episodes, std::uint64_t seed,
                      const std::function<void(const Transition&)>& visit) {
    if (episodes < 1) throw UsageError("run_random_agent needs at least one episode");
    env::MiniBuild game(config);
    const int g = config.grid_size;
    Frame prev;
    for (int e = first_episode; e < first_episode + episodes; ++e) {
        const std::uint64_t s = episode_seed(seed, e);
        game.reset(s);
        std::mt19937_64 rng(s ^ 0xa6e47ULL);
        int t = 0;
        while (!game.done()) {
            const Frame& cur = game.state();
            if (t > 0) visit(Transition{e, t, prev, cur});
            prev = cur;
            const auto mask = game.legal_actions();
            int legal[env::kNumActions];
            int n = 0;
            for (int a = 0; a < env::kNumActions; ++a)
                if (mask[static_cast<std::size_t>(a)]) legal[n++] = a;
            const auto pick = static_cast<env::ActionId>(legal[rng() % static_cast<std::uint64_t>(n)]);
            const int x = static_cast<int>(rng() % static_cast<std::uint64_t>(g));
            const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(g));
            game.step({pick, x, y});
            ++t;
        }
    }
}

std::string_view kind_name(PairKind kind) {
    switch (kind) {
        case PairKind::Matched: return "matched";
        case PairKind::Mismatched: return "mismatched";
        case PairKind::Null: return "null";
    }
    return "?";
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::vector<const LabeledPair*> Dataset::split(Split s) const {
    std::vector<const LabeledPair*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

Dataset build_dataset(const DatasetConfig& config, const lang::Vocabulary& vocab) {
    config.env.validate();
    if (config.quota < 1) throw ConfigError("quota must be at least 1");
    const std::size_t quota = static_cast<std::size_t>(config.quota);

    Dataset data;
    data.env = config.env;
    std::array<std::vector<Event>, kNumGoals> found;
    std::vector<Event> nulls;

    // Pass 1: cheap rollouts recording where each detector fires.
    auto satisfied = [&] {
        for (const auto& f : found)
            if (f.size() < quota) return false;
        return nulls.size() >= quota * kNumGoals;
    };
    while (!satisfied()) {
        if (data.episodes_run >= config.max_episodes) {
            for (int goal = 0; goal < kNumGoals; ++goal)
                if (found[static_cast<std::size_t>(goal)].size() < quota)
                    throw DataScarcityError("goal '" + std::string(lang::goal_name(goal)) + "' fired " +
                                            std::to_string(found[static_cast<std::size_t>(goal)].size()) +
                                            " times in " + std::to_string(data.episodes_run) +
                                            " episodes, quota " + std::to_string(quota));
            throw DataScarcityError("not enough null states for quota " + std::to_string(quota));
        }
        const int n = std::min(config.chunk_episodes, config.max_episodes - data.episodes_run);
        run_random_agent(config.env, data.episodes_run, n, config.seed, [&](const Transition& t) {
            if (auto goal = detect_goal(t.prev, t.cur))
                found[static_cast<std::size_t>(*goal)].push_back({t.episode, t.step});
            else
                nulls.push_back({t.episode, t.step});
        });
        data.episodes_run += n;
    }
    for (int goal = 0; goal < kNumGoals; ++goal)
        data.detections[static_cast<std::size_t>(goal)] = static_cast<std::int64_t>(found[static_cast<std::size_t>(goal)].size());
    data.null_candidates = static_cast<std::int64_t>(nulls.size());

    // Selection: matched states per goal, then nulls.
    std::mt19937_64 rng(config.seed ^ 0xda7a5e7ULL);
    auto& recs = data.records;
    recs.reserve(quota * kNumGoals * 3);
    for (int goal = 0; goal < kNumGoals; ++goal) {
        auto& list = found[static_cast<std::size_t>(goal)];
        std::shuffle(list.begin(), list.end(), rng);
        const auto& texts = lang::paraphrases(goal);
        for (std::size_t i = 0; i < quota; ++i) {
            LabeledPair p;
            p.episode = list[i].episode;
            p.step = list[i].step;
            p.kind = PairKind::Matched;
            p.detected = goal;
            p.command_goal = goal;
            p.y = 0;
            p.text = texts[rng() % texts.size()];
            recs.push_back(std::move(p));
        }
    }
    std::shuffle(nulls.begin(), nulls.end(), rng);
    const std::size_t n_matched = recs.size();
    for (std::size_t i = 0; i < quota * kNumGoals; ++i) {
        LabeledPair p;
        p.episode = nulls[i].episode;
        p.step = nulls[i].step;
        p.kind = PairKind::Null;
        p.detected = -1;
        p.command_goal = static_cast<int>(rng() % kNumGoals);
        p.y = 1;
        const auto& texts = lang::paraphrases(p.command_goal);
        p.text = texts[rng() % texts.size()];
        recs.push_back(std::move(p));
    }

    // Pass 2: replay only the episodes that hold selected states.
    std::map<std::pair<int, int>, std::vector<std::size_t>> wanted;
    for (std::size_t i = 0; i < recs.size(); ++i) wanted[{recs[i].episode, recs[i].step}].push_back(i);
    std::vector<int> episodes;
    for (const auto& [key, idx] : wanted)
        if (episodes.empty() || episodes.back() != key.first) episodes.push_back(key.first);
    for (int e : episodes) {
        run_random_agent(config.env, e, 1, config.seed, [&](const Transition& t) {
            auto it = wanted.find({t.episode, t.step});
            if (it == wanted.end()) return;
            for (std::size_t i : it->second) {
                recs[i].prev = t.prev;
                recs[i].cur = t.cur;
            }
        });
    }

    // Mismatched twins reuse each matched state with a goal that did not fire.
    for (std::size_t i = 0; i < n_matched; ++i) {
        const GoalFlags fired = fired_goals(recs[i].prev, recs[i].cur);
        std::vector<int> others;
        for (int goal = 0; goal < kNumGoals; ++goal)
            if (!fired[static_cast<std::size_t>(goal)]) others.push_back(goal);
        if (others.empty()) throw DataScarcityError("a matched state fired every detector");
        LabeledPair p = recs[i];
        p.kind = PairKind::Mismatched;
        p.command_goal = others[rng() % others.size()];
        p.y = 1;
        const auto& texts = lang::paraphrases(p.command_goal);
        p.text = texts[rng() % texts.size()];
        recs.push_back(std::move(p));
    }
    for (auto& r : recs) r.ids = lang::tokenize(r.text, vocab);

    // Splits: matched/mismatched twins move together; nulls fill the remainder
    // so totals follow 4:1:1 exactly.
    const auto totals = ratio_targets(recs.size());
    const auto unit_split = proportional(n_matched, ratio_targets(n_matched));
    std::array<std::size_t, 3> used{};
    for (std::size_t i = 0; i < n_matched; ++i) {
        recs[i].split = unit_split[i];
        used[static_cast<std::size_t>(unit_split[i])] += 2;
    }
    const std::size_t n_null = quota * kNumGoals;
    std::array<std::size_t, 3> null_targets{};
    for (int s = 0; s < 3; ++s) {
        const std::size_t t = totals[static_cast<std::size_t>(s)], u = used[static_cast<std::size_t>(s)];
        null_targets[static_cast<std::size_t>(s)] = t > u ? t - u : 0;
    }
    // Sort nulls by command goal so the proportional walk stratifies them.
    std::stable_sort(recs.begin() + static_cast<std::ptrdiff_t>(n_matched),
                     recs.begin() + static_cast<std::ptrdiff_t>(n_matched + n_null),
                     [](const LabeledPair& a, const LabeledPair& b) { return a.command_goal < b.command_goal; });
    const auto null_split = proportional(n_null, null_targets);
    for (std::size_t j = 0; j < n_null; ++j) recs[n_matched + j].split = null_split[j];
    for (std::size_t i = 0; i < n_matched; ++i) recs[n_matched + n_null + i].split = recs[i].split;
    return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
    const auto& e = data.env;
    out.write(kMagic, sizeof kMagic);
    binio::put<std::uint32_t>(out, kVersion);
    for (int v : {e.grid_size, e.episode_length, e.harvest_rate, e.initial_workers, e.initial_minerals})
        binio::put<std::int32_t>(out, v);
    for (int v : e.rules.cost) binio::put<std::int32_t>(out, v);
    for (int v : e.rules.duration) binio::put<std::int32_t>(out, v);
    for (int v : {e.rules.base_supply, e.rules.depot_supply, e.rules.worker_supply, e.rules.marine_supply})
        binio::put<std::int32_t>(out, v);
    binio::put<std::int32_t>(out, data.episodes_run);
    for (auto d : data.detections) binio::put<std::int64_t>(out, d);
    binio::put<std::int64_t>(out, data.null_candidates);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(data.records.size()));
    for (const auto& r : data.records) {
        binio::put<std::int32_t>(out, r.episode);
        binio::put<std::int32_t>(out, r.step);
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.kind));
        binio::put<std::int8_t>(out, static_cast<std::int8_t>(r.detected));
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.command_goal));
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.y));
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.split));
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.ids.size()));
        for (int i = 0; i < lang::kMaxCommandLength; ++i)
            binio::put<std::int32_t>(out, i < static_cast<int>(r.ids.size()) ? r.ids[static_cast<std::size_t>(i)] : 0);
        binio::put_fixed(out, r.text, kTextWidth);
        put_frame(out, r.prev);
        put_frame(out, r.cur);
    }
    if (!out) throw IoError("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMagic)) throw IoError("not a dataset file (bad magic)");
    if (binio::get<std::uint32_t>(in) != kVersion) throw IoError("unsupported dataset version");
    Dataset data;
    auto& e = data.env;
    for (int* p : {&e.grid_size, &e.episode_length, &e.harvest_rate, &e.initial_workers, &e.initial_minerals})
        *p = binio::get<std::int32_t>(in);
    for (int& v : e.rules.cost) v = binio::get<std::int32_t>(in);
    for (int& v : e.rules.duration) v = binio::get<std::int32_t>(in);
    for (int* p : {&e.rules.base_supply, &e.rules.depot_supply, &e.rules.worker_supply, &e.rules.marine_supply})
        *p = binio::get<std::int32_t>(in);
    e.validate();
    data.episodes_run = binio::get<std::int32_t>(in);
    for (auto& d : data.detections) d = binio::get<std::int64_t>(in);
    data.null_candidates = binio::get<std::int64_t>(in);
    const auto n = binio::get<std::uint32_t>(in);
    data.records.resize(n);
    for (auto& r : data.records) {
        r.episode = binio::get<std::int32_t>(in);
        r.step = binio::get<std::int32_t>(in);
        r.kind = static_cast<PairKind>(binio::get<std::uint8_t>(in));
        r.detected = binio::get<std::int8_t>(in);
        r.command_goal = binio::get<std::uint8_t>(in);
        r.y = binio::get<std::uint8_t>(in);
        r.split = static_cast<Split>(binio::get<std::uint8_t>(in));
        const int len = binio::get<std::uint8_t>(in);
        if (len < 1 || len > lang::kMaxCommandLength) throw IoError("corrupt command length in dataset");
        for (int i = 0; i < lang::kMaxCommandLength; ++i) {
            const int id = binio::get<std::int32_t>(in);
            if (i < len) r.ids.push_back(id);
        }
        r.text = binio::get_fixed(in, kTextWidth);
        r.prev = get_frame(in, e.grid_size);
        r.cur = get_frame(in, e.grid_size);
    }
    return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_dataset(out, data);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("dataset not found: " + path);
    return read_dataset(in);
}

std::string stats_report(const Dataset& data) {
    std::ostringstream os;
    std::array<std::size_t, 3> totals{};
    std::map<std::pair<int, int>, std::array<std::size_t, 3>> counts;
    for (const auto& r : data.records) {
        const int goal = r.kind == PairKind::Null ? r.command_goal : r.detected;
        ++counts[{static_cast<int>(r.kind), goal}][static_cast<std::size_t>(r.split)];
        ++totals[static_cast<std::size_t>(r.split)];
    }
    os << "records " << data.records.size() << " from " << data.episodes_run << " episodes\n";
    os << "split train " << totals[0] << " val " << totals[1] << " test " << totals[2] << "\n";
    os << "kind,goal,train,val,test\n";
    for (const auto& [key, c] : counts)
        os << kind_name(static_cast<PairKind>(key.first)) << "," << lang::goal_name(key.second) << "," << c[0] << ","
           << c[1] << "," << c[2] << "\n";
    os << "detections";
    for (int goal = 0; goal < kNumGoals; ++goal)
        os << " " << lang::goal_name(goal) << "=" << data.detections[static_cast<std::size_t>(goal)];
    os << " null_candidates=" << data.null_candidates << "\n";
    return os.str();
}

}  // namespace groundrl::dataset
