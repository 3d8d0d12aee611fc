#pragma once

// Advantage actor-critic over MiniBuild with pluggable reward modes.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "groundrl/env.hpp"
#include "groundrl/mem.hpp"
#include "groundrl/shaping.hpp"
#include "groundrl/state_enc.hpp"

namespace groundrl::rl {

enum class UpdateMode { Sync, Async };
UpdateMode parse_update_mode(std::string_view name);
std::string_view update_mode_name(UpdateMode mode);

struct RLConfig {
    env::EnvConfig env;
    state_enc::StateEncoderConfig encoder;  // grid_size is taken from env
    int workers = 8;
    int n_step = 16;
    double gamma = 0.99;
    double entropy_beta = 0.01;
    double value_coef = 0.5;
    double lr = 1e-4;
    std::int64_t budget = 200000;  // total env steps over all workers
    shaping::RewardMode mode = shaping::RewardMode::Baseline;
    UpdateMode update = UpdateMode::Sync;
    bool share_mem_encoder = false;
    std::uint64_t seed = 1;

    // Throws ConfigError.
    void validate() const;
};

// Shared trunk (state encoder + relu) with action, x, y and value heads.
class Policy {
public:
    Policy(const state_enc::StateEncoderConfig& encoder, int grid_size, std::uint64_t seed);

    struct Heads {
        ad::Var action;  // [B, 5]
        ad::Var x;       // [B, G]
        ad::Var y;       // [B, G]
        ad::Var value;   // [B]
    };
    Heads forward(ad::ParamStore& store, ad::Graph& g, const state_enc::StateBatch& batch) const;

    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }
    int grid_size() const { return grid_; }
    // Copies the MEM state-branch weights into the trunk and freezes them.
    void adopt_mem_encoder(const mem::MemModel& model);

private:
    ad::ParamStore store_;
    state_enc::StateEncoder encoder_;
    ad::Dense action_, x_, y_, value_;
    int grid_ = 0;
};

struct ActResult {
    env::CompoundAction action;
    double logprob = 0.0;
    double value = 0.0;
};

// Samples an action id from the masked policy, then x and y from their heads
// when the action takes a placement; the log-probability sums the sampled parts.
ActResult act(const Policy& policy, ad::ParamStore& store, const env::Observation& prev, const env::Observation& cur,
              std::mt19937_64& rng);

// Uniform double in [0, 1) with 53 random bits.
double uniform01(std::mt19937_64& rng);
// Index drawn from a categorical given log-probabilities (-inf entries never drawn).
int sample_categorical(const double* log_probs, int n, std::mt19937_64& rng);

// Bootstrapped discounted returns; bootstrap is ignored when terminal.
std::vector<double> n_step_returns(const std::vector<double>& rewards, double bootstrap, bool terminal, double gamma);

struct Segment {
    std::vector<env::Observation> prev;
    std::vector<env::Observation> cur;
    std::vector<env::CompoundAction> actions;
    std::vector<double> rewards;
    bool terminal = false;
    // Stack after the last transition, used for bootstrapping.
    env::Observation next_prev;
    env::Observation next_cur;

    std::size_t size() const { return actions.size(); }
};

struct LossStats {
    double policy = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    std::vector<double> advantages;
    std::vector<double> returns;
};

// -Σ logπ(a)·A + value_coef·Σ (R - V)² - β·Σ H, with A held constant.
// Throws UsageError on an empty segment.
ad::Var a2c_loss(const Policy& policy, ad::ParamStore& store, ad::Graph& g, const Segment& segment,
                 const RLConfig& config, LossStats* stats = nullptr);

// Accumulates the segment's gradient into store's grad slots.
LossStats n_step_update(const Policy& policy, ad::ParamStore& store, const Segment& segment, const RLConfig& config);

struct EpisodeLog {
    std::int64_t wall_step = 0;
    int episode = 0;
    int worker = 0;
    double env_return = 0.0;
    double shaped_return = 0.0;
    int script_advances = 0;
    int marines = 0;
};

struct TrainResult {
    std::vector<EpisodeLog> episodes;
    std::int64_t steps = 0;
    std::uint64_t updates = 0;
};

// Throws ConfigError when the reward mode lacks its MEM or script.
TrainResult train_agent(const RLConfig& config, Policy& policy, mem::MemModel* mem_model,
                        const shaping::NarrationScript* script);

std::string curves_csv(const std::vector<EpisodeLog>& episodes);

// Episode index (1-based) of the first episode with a marine, or 0 if none.
int episodes_to_first_marine(const std::vector<EpisodeLog>& episodes);
double final_mean_marines(const std::vector<EpisodeLog>& episodes, int window = 100);

struct EvalResult {
    double mean_marines = 0.0;
    std::vector<int> marines;
};
// Runs the policy greedily sampled (stochastic, seeded) for `episodes` episodes.
EvalResult evaluate_policy(const Policy& policy, const env::EnvConfig& env, int episodes, std::uint64_t seed);

void save_policy(const std::string& path, const Policy& policy, std::map<std::string, std::string> metadata = {});
Policy load_policy(const std::string& path);

}  // namespace groundrl::rl
