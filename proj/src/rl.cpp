#include "groundrl/rl.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "groundrl/dataset.hpp"
#include "groundrl/errors.hpp"

namespace groundrl::rl {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

UpdateMode parse_update_mode(std::string_view name) {
    if (name == "sync") return UpdateMode::Sync;
    if (name == "async") return UpdateMode::Async;
    throw ConfigError("unknown update mode '" + std::string(name) + "' (sync, async)");
}

std::string_view update_mode_name(UpdateMode mode) { return mode == UpdateMode::Sync ? "sync" : "async"; }

void RLConfig::validate() const {
    env.validate();
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (n_step < 1) throw ConfigError("n_step must be at least 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (entropy_beta < 0.0 || value_coef < 0.0) throw ConfigError("loss coefficients must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("rl lr must be positive");
    if (budget < 0) throw ConfigError("budget must be non-negative");
    if (budget > 0 && budget < n_step) throw ConfigError("budget must be at least n_step");
}

Policy::Policy(const state_enc::StateEncoderConfig& encoder, int grid_size, std::uint64_t seed) : grid_(grid_size) {
    std::mt19937_64 rng(seed);
    auto cfg = encoder;
    cfg.grid_size = grid_size;
    encoder_ = state_enc::StateEncoder(store_, "state", cfg, rng);
    action_ = ad::Dense(store_, "policy.action", cfg.embed_dim, env::kNumActions, rng);
    x_ = ad::Dense(store_, "policy.x", cfg.embed_dim, grid_size, rng);
    y_ = ad::Dense(store_, "policy.y", cfg.embed_dim, grid_size, rng);
    value_ = ad::Dense(store_, "policy.value", cfg.embed_dim, 1, rng);
}

Policy::Heads Policy::forward(ad::ParamStore& store, Graph& g, const state_enc::StateBatch& batch) const {
    Var trunk = relu(encoder_(store, g, batch));
    const std::vector<int> zeros(static_cast<std::size_t>(batch.size), 0);
    return {action_(store, trunk), x_(store, trunk), y_(store, trunk), pick(value_(store, trunk), zeros)};
}

void Policy::adopt_mem_encoder(const mem::MemModel& model) {
    const auto& src = model.params();
    for (auto& p : store_.params()) {
        if (!p.name.starts_with("state.")) continue;
        if (!src.contains(p.name)) throw ConfigError("MEM has no parameter '" + p.name + "'");
        const auto& q = src[p.name];
        if (q.value.shape() != p.value.shape())
            throw DimensionError("MEM parameter '" + p.name + "' has shape " + ad::shape_str(q.value.shape()));
        p.value = q.value;
        p.trainable = false;
    }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int sample_categorical(const double* log_probs, int n, std::mt19937_64& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    int last = -1;
    for (int k = 0; k < n; ++k) {
        if (std::isinf(log_probs[k])) continue;
        acc += std::exp(log_probs[k]);
        last = k;
        if (u < acc) return k;
    }
    if (last < 0) throw UsageError("categorical with no admissible entries");
    return last;
}

namespace {

std::vector<bool> mask_bits(const env::ActionMask& m) { return std::vector<bool>(m.begin(), m.end()); }

}  // namespace

ActResult act(const Policy& policy, ad::ParamStore& store, const env::Observation& prev, const env::Observation& cur,
              std::mt19937_64& rng) {
    state_enc::StateBatch batch;
    batch.add(prev, cur);
    Graph g;
    const auto heads = policy.forward(store, g, batch);
    const auto& la = log_softmax(heads.action, mask_bits(cur.action_mask)).value();
    ActResult r;
    const int id = sample_categorical(la.data(), env::kNumActions, rng);
    r.action.id = static_cast<env::ActionId>(id);
    r.logprob = la[static_cast<std::size_t>(id)];
    if (env::takes_placement(r.action.id)) {
        const int grid = policy.grid_size();
        const auto& lx = log_softmax(heads.x).value();
        const auto& ly = log_softmax(heads.y).value();
        r.action.x = sample_categorical(lx.data(), grid, rng);
        r.action.y = sample_categorical(ly.data(), grid, rng);
        r.logprob += lx[static_cast<std::size_t>(r.action.x)] + ly[static_cast<std::size_t>(r.action.y)];
    }
    r.value = heads.value.value()[0];
    return r;
}

std::vector<double> n_step_returns(const std::vector<double>& rewards, double bootstrap, bool terminal, double gamma) {
    std::vector<double> out(rewards.size());
    double running = terminal ? 0.0 : bootstrap;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        running = rewards[i] + gamma * running;
        out[i] = running;
    }
    return out;
}

Var a2c_loss(const Policy& policy, ad::ParamStore& store, Graph& g, const Segment& seg, const RLConfig& config,
             LossStats* stats) {
    const int n = static_cast<int>(seg.size());
    if (n == 0) throw UsageError("n-step update on an empty segment");

    double bootstrap = 0.0;
    if (!seg.terminal) {
        state_enc::StateBatch last;
        last.add(seg.next_prev, seg.next_cur);
        Graph gb;
        bootstrap = policy.forward(store, gb, last).value.value()[0];
    }
    const auto returns = n_step_returns(seg.rewards, bootstrap, seg.terminal, config.gamma);

    state_enc::StateBatch batch;
    std::vector<bool> mask;
    std::vector<int> ids(static_cast<std::size_t>(n)), xs(static_cast<std::size_t>(n)), ys(static_cast<std::size_t>(n));
    Tensor placed(Shape{n});
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        batch.add(seg.prev[k], seg.cur[k]);
        const auto bits = mask_bits(seg.cur[k].action_mask);
        mask.insert(mask.end(), bits.begin(), bits.end());
        ids[k] = static_cast<int>(seg.actions[k].id);
        xs[k] = seg.actions[k].x;
        ys[k] = seg.actions[k].y;
        placed[k] = env::takes_placement(seg.actions[k].id) ? 1.0 : 0.0;
    }
    const auto heads = policy.forward(store, g, batch);
    Var lp_action = log_softmax(heads.action, mask);
    Var lp_x = log_softmax(heads.x);
    Var lp_y = log_softmax(heads.y);
    Var place = g.constant(placed);
    Var logp = add(pick(lp_action, ids), mul(add(pick(lp_x, xs), pick(lp_y, ys)), place));
    Var entropy = add(entropy_from_log_probs(lp_action),
                      mul(add(entropy_from_log_probs(lp_x), entropy_from_log_probs(lp_y)), place));

    const auto& v = heads.value.value();
    Tensor adv(Shape{n}), ret(Shape{n}, returns);
    for (int i = 0; i < n; ++i) adv[static_cast<std::size_t>(i)] = returns[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(i)];

    Var policy_loss = scale(sum(mul(logp, g.constant(adv))), -1.0);
    Var value_loss = scale(sum(square(sub(heads.value, g.constant(ret)))), config.value_coef);
    Var entropy_sum = sum(entropy);
    Var loss = sub(add(policy_loss, value_loss), scale(entropy_sum, config.entropy_beta));
    if (stats) {
        stats->policy = policy_loss.value().item();
        stats->value = value_loss.value().item();
        stats->entropy = entropy_sum.value().item();
        stats->advantages.assign(adv.values().begin(), adv.values().end());
        stats->returns = returns;
    }
    return loss;
}

LossStats n_step_update(const Policy& policy, ad::ParamStore& store, const Segment& segment, const RLConfig& config) {
    LossStats stats;
    Graph g;
    g.backward(a2c_loss(policy, store, g, segment, config, &stats));
    return stats;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// One actor: its own env, rng, shaping state and parameter copy.
struct Worker {
    int id = 0;
    env::MiniBuild game;
    std::mt19937_64 rng;
    std::optional<shaping::Shaper> shaper;
    std::optional<shaping::MemDistance> mem_distance;
    ad::ParamStore local;
    std::uint64_t base_seed = 0;
    int episodes_started = 0;
    bool in_episode = false;
    env::Frame prev_frame, cur_frame;
    env::Observation prev_obs, cur_obs;
    EpisodeLog log;
    std::vector<EpisodeLog> finished;

    Worker(int id_, const RLConfig& cfg, const ad::ParamStore& params)
        : id(id_), game(cfg.env), rng(mix(cfg.seed, 0x1000u + static_cast<std::uint64_t>(id_))), local(params),
          base_seed(mix(cfg.seed, 0x2000u + static_cast<std::uint64_t>(id_))) {}

    void start_episode() {
        cur_obs = game.reset(dataset::episode_seed(base_seed, episodes_started++));
        prev_obs = cur_obs;
        cur_frame = game.state();
        prev_frame = cur_frame;
        if (shaper) shaper->start_episode();
        log = EpisodeLog{};
        log.worker = id;
        in_episode = true;
    }

    // Runs up to `steps` transitions with the local parameters, stopping
    // early at the end of an episode.
    Segment rollout(const Policy& policy, int steps, shaping::RewardMode mode) {
        if (!in_episode) start_episode();
        Segment seg;
        for (int t = 0; t < steps; ++t) {
            const ActResult a = act(policy, local, prev_obs, cur_obs, rng);
            StepResultFrame next = step(a.action);
            double interim = 0.0;
            if (shaper) {
                const shaping::StackView view{cur_frame, next.frame, cur_obs, next.result.observation};
                const auto shaped = shaper->observe(view);
                interim = shaped.reward;
                log.script_advances += shaped.advanced ? 1 : 0;
            }
            const double r = shaping::combined_reward(next.result.reward, interim, mode);
            seg.prev.push_back(prev_obs);
            seg.cur.push_back(cur_obs);
            seg.actions.push_back(a.action);
            seg.rewards.push_back(r);
            log.env_return += next.result.reward;
            log.shaped_return += r;
            log.marines = next.frame.marines;
            prev_obs = std::move(cur_obs);
            cur_obs = std::move(next.result.observation);
            prev_frame = std::move(cur_frame);
            cur_frame = std::move(next.frame);
            if (next.result.done) {
                seg.terminal = true;
                in_episode = false;
                finished.push_back(log);
                break;
            }
        }
        seg.next_prev = prev_obs;
        seg.next_cur = cur_obs;
        return seg;
    }

    struct StepResultFrame {
        env::StepResult result;
        env::Frame frame;
    };
    StepResultFrame step(const env::CompoundAction& action) {
        auto result = game.step(action);
        return {std::move(result), static_cast<const env::Frame&>(game.state())};
    }
};

std::vector<std::int64_t> split_budget(std::int64_t budget, int workers) {
    std::vector<std::int64_t> share(static_cast<std::size_t>(workers), budget / workers);
    for (int w = 0; w < budget % workers; ++w) ++share[static_cast<std::size_t>(w)];
    return share;
}

}  // namespace

TrainResult train_agent(const RLConfig& config, Policy& policy, mem::MemModel* mem_model,
                        const shaping::NarrationScript* script) {
    config.validate();
    if (policy.grid_size() != config.env.grid_size)
        throw DimensionError("policy grid " + std::to_string(policy.grid_size()) + " does not match env grid " +
                             std::to_string(config.env.grid_size));
    if (config.mode != shaping::RewardMode::Baseline && !script)
        throw ConfigError(std::string(shaping::mode_name(config.mode)) + " mode needs a narration script");
    if (config.mode == shaping::RewardMode::MemShaped && !mem_model)
        throw ConfigError("mem_shaped mode needs a trained MEM");
    if (config.share_mem_encoder) {
        if (!mem_model) throw ConfigError("share_mem_encoder needs a trained MEM");
        policy.adopt_mem_encoder(*mem_model);
    }

    ad::ParamStore& master = policy.params();
    master.zero_grad();
    const ad::AdamConfig adam{.lr = config.lr};
    const auto shares = split_budget(config.budget, config.workers);

    std::vector<std::unique_ptr<Worker>> workers;
    for (int w = 0; w < config.workers; ++w) {
        auto wk = std::make_unique<Worker>(w, config, master);
        shaping::DistanceFn distance;
        if (config.mode == shaping::RewardMode::MemShaped) {
            wk->mem_distance.emplace(*mem_model);
            distance = [d = &*wk->mem_distance](const shaping::StackView& s, const lang::Command& c) { return (*d)(s, c); };
        }
        if (config.mode != shaping::RewardMode::Baseline) wk->shaper.emplace(config.mode, *script, std::move(distance));
        workers.push_back(std::move(wk));
    }

    TrainResult result;
    std::vector<std::int64_t> remaining = shares;

    if (config.update == UpdateMode::Sync) {
        std::vector<Segment> segments(workers.size());
        for (;;) {
            std::vector<std::size_t> active;
            for (std::size_t w = 0; w < workers.size(); ++w)
                if (remaining[w] > 0) active.push_back(w);
            if (active.empty()) break;
            std::vector<std::thread> threads;
            std::vector<std::exception_ptr> errors(workers.size());
            for (std::size_t w : active) {
                threads.emplace_back([&, w] {
                    try {
                        const int steps = static_cast<int>(std::min<std::int64_t>(config.n_step, remaining[w]));
                        segments[w] = workers[w]->rollout(policy, steps, config.mode);
                        n_step_update(policy, workers[w]->local, segments[w], config);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
            for (auto& t : threads) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
            for (std::size_t w : active) {
                const auto n = static_cast<std::int64_t>(segments[w].size());
                remaining[w] -= n;
                result.steps += n;
                master.accumulate_grads_from(workers[w]->local);
                workers[w]->local.zero_grad();
            }
            adam_step(master, adam);
            for (auto& wk : workers) wk->local.copy_values_from(master);
            for (std::size_t w : active) {
                for (auto& log : workers[w]->finished) {
                    log.wall_step = result.steps;
                    result.episodes.push_back(log);
                }
                workers[w]->finished.clear();
            }
        }
    } else {
        std::atomic<std::int64_t> global_steps{0};
        std::mutex log_mutex;
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(workers.size());
        for (std::size_t w = 0; w < workers.size(); ++w) {
            threads.emplace_back([&, w] {
                try {
                    Worker& wk = *workers[w];
                    while (remaining[w] > 0) {
                        snapshot_unsynchronized(master, wk.local);
                        const int steps = static_cast<int>(std::min<std::int64_t>(config.n_step, remaining[w]));
                        const Segment seg = wk.rollout(policy, steps, config.mode);
                        n_step_update(policy, wk.local, seg, config);
                        adam_step_unsynchronized(master, wk.local, adam);
                        remaining[w] -= static_cast<std::int64_t>(seg.size());
                        const std::int64_t now = global_steps.fetch_add(static_cast<std::int64_t>(seg.size())) +
                                                 static_cast<std::int64_t>(seg.size());
                        if (!wk.finished.empty()) {
                            const std::lock_guard lock(log_mutex);
                            for (auto& log : wk.finished) {
                                log.wall_step = now;
                                result.episodes.push_back(log);
                            }
                            wk.finished.clear();
                        }
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        result.steps = global_steps.load();
        std::stable_sort(result.episodes.begin(), result.episodes.end(),
                         [](const EpisodeLog& a, const EpisodeLog& b) { return a.wall_step < b.wall_step; });
    }
    for (std::size_t i = 0; i < result.episodes.size(); ++i) result.episodes[i].episode = static_cast<int>(i) + 1;
    result.updates = master.update_count();
    return result;
}

std::string curves_csv(const std::vector<EpisodeLog>& episodes) {
    std::ostringstream out;
    out << "wall_step,episode,worker,env_return,shaped_return,script_advances,marines\n";
    for (const auto& e : episodes)
        out << e.wall_step << ',' << e.episode << ',' << e.worker << ',' << e.env_return << ',' << e.shaped_return << ','
            << e.script_advances << ',' << e.marines << '\n';
    return out.str();
}

int episodes_to_first_marine(const std::vector<EpisodeLog>& episodes) {
    for (std::size_t i = 0; i < episodes.size(); ++i)
        if (episodes[i].marines > 0) return static_cast<int>(i) + 1;
    return 0;
}

double final_mean_marines(const std::vector<EpisodeLog>& episodes, int window) {
    if (episodes.empty() || window <= 0) return 0.0;
    const std::size_t n = std::min(episodes.size(), static_cast<std::size_t>(window));
    double s = 0.0;
    for (std::size_t i = episodes.size() - n; i < episodes.size(); ++i) s += episodes[i].marines;
    return s / static_cast<double>(n);
}

EvalResult evaluate_policy(const Policy& policy, const env::EnvConfig& env_cfg, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
    if (policy.grid_size() != env_cfg.grid_size) throw DimensionError("policy grid does not match env grid");
    ad::ParamStore store = policy.params();
    std::mt19937_64 rng(mix(seed, 0x3000u));
    const std::uint64_t base = mix(seed, 0x4000u);
    env::MiniBuild game(env_cfg);
    EvalResult out;
    for (int ep = 0; ep < episodes; ++ep) {
        env::Observation cur = game.reset(dataset::episode_seed(base, ep));
        env::Observation prev = cur;
        while (!game.done()) {
            const auto a = act(policy, store, prev, cur, rng);
            auto step = game.step(a.action);
            prev = std::move(cur);
            cur = std::move(step.observation);
        }
        out.marines.push_back(game.state().marines);
    }
    double s = 0.0;
    for (int m : out.marines) s += m;
    out.mean_marines = s / static_cast<double>(episodes);
    return out;
}

namespace {

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError("policy checkpoint lacks '" + key + "'");
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw IoError("policy checkpoint has a bad '" + key + "'");
    }
}

}  // namespace

void save_policy(const std::string& path, const Policy& policy, std::map<std::string, std::string> metadata) {
    const auto& p = policy.params();
    metadata["policy.grid_size"] = std::to_string(policy.grid_size());
    metadata["policy.conv1_channels"] = std::to_string(p["state.screen1.weight"].value.shape()[0]);
    metadata["policy.conv2_channels"] = std::to_string(p["state.screen2.weight"].value.shape()[0]);
    metadata["policy.nonspatial_hidden"] = std::to_string(p["state.nonspatial.weight"].value.shape()[0]);
    metadata["policy.embed_dim"] = std::to_string(p["state.fusion.weight"].value.shape()[0]);
    ad::save_checkpoint(path, p, metadata);
}

Policy load_policy(const std::string& path) {
    ad::Checkpoint ck = ad::load_checkpoint(path);
    state_enc::StateEncoderConfig enc;
    enc.conv1_channels = meta_int(ck.metadata, "policy.conv1_channels");
    enc.conv2_channels = meta_int(ck.metadata, "policy.conv2_channels");
    enc.nonspatial_hidden = meta_int(ck.metadata, "policy.nonspatial_hidden");
    enc.embed_dim = meta_int(ck.metadata, "policy.embed_dim");
    Policy policy(enc, meta_int(ck.metadata, "policy.grid_size"), 0);
    auto& store = policy.params();
    if (store.size() != ck.params.size()) throw IoError("checkpoint does not match the policy layout");
    for (int i = 0; i < store.size(); ++i) {
        const auto& src = ck.params.at(i);
        auto& dst = store.at(i);
        if (src.name != dst.name || src.value.shape() != dst.value.shape())
            throw IoError("checkpoint entry '" + src.name + "' does not match '" + dst.name + "'");
        dst.value = src.value;
        dst.trainable = src.trainable;
    }
    return policy;
}

}  // namespace groundrl::rl
