#pragma once

// The end-to-end stages behind the command-line tool. Every stage reads its
// inputs from and writes its outputs to <run_dir>/<stage>/, echoes the
// effective configuration into config.txt and lists a SHA-256 digest of every
// artifact in manifest.txt.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "groundrl/config.hpp"
#include "groundrl/dataset.hpp"
#include "groundrl/mem.hpp"
#include "groundrl/rl.hpp"
#include "groundrl/tsne.hpp"

namespace groundrl::pipeline {

using Log = std::function<void(const std::string&)>;

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::string& path);

// "<digest>  <file>" for every regular file except manifest.txt, sorted by
// name. A leading comment line marks runs whose bytes are not reproducible.
std::string manifest_text(const std::string& dir, bool nondeterministic = false);
void write_manifest(const std::string& dir, bool nondeterministic = false);

std::string stage_dir(const RunConfig& config, const std::string& stage);
std::string agent_dir(const RunConfig& config);

// gen-data: dataset.bin and stats.txt.
struct GenDataResult {
    std::string dir;
    dataset::Dataset data;
};
GenDataResult gen_data(const RunConfig& config, const Log& log = {});

// train-w2v: word2vec.ckpt (table plus vocabulary) and similarity.txt.
struct Word2VecResult {
    std::string dir;
    ad::Tensor table;
    lang::Vocabulary vocab;
    double cos_build_construct = 0.0;
    double cos_build_marine = 0.0;
};
Word2VecResult train_w2v(const RunConfig& config, const Log& log = {});
Word2VecResult load_w2v(const RunConfig& config);

// train-mem: mem.ckpt, curves.csv and summary.txt. Needs gen-data and train-w2v.
struct TrainMemResult {
    std::string dir;
    mem::MemTrainResult training;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t parameters = 0;
};
TrainMemResult train_mem(const RunConfig& config, const Log& log = {});

// eval-mem: report.txt. Needs gen-data and train-mem.
struct EvalMemResult {
    std::string dir;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    mem::ThresholdChoice val_threshold;
    double test_accuracy_at_val_threshold = 0.0;
    // Held-out wordings paired with matched test states of their own goal.
    double heldout_congruent = 0.0;
    int heldout_pairs = 0;
    double build_construct_distance = 0.0;
    double build_marine_distance = 0.0;
    std::string report;
};
EvalMemResult eval_mem(const RunConfig& config, const Log& log = {});

// project: coords.csv, kl.csv and cluster.txt. Needs gen-data and train-mem.
struct ProjectResult {
    std::string dir;
    tsne::ClusterReport cluster;
    std::vector<double> kl;
    int states = 0;
};
ProjectResult project(const RunConfig& config, const Log& log = {});

// train-agent: curves.csv, policy.ckpt and summary.txt under
// train-agent/<mode>-s<seed>. mem_shaped and a shared encoder need train-mem.
struct TrainAgentResult {
    std::string dir;
    rl::TrainResult training;
    int episodes_to_first_marine = 0;
    double final_mean_marines = 0.0;
    double eval_mean_marines = 0.0;
};
TrainAgentResult train_agent(const RunConfig& config, const Log& log = {});

// eval-agent: report.txt comparing every finished train-agent run.
struct AgentRun {
    std::string name;
    std::string mode;
    std::uint64_t seed = 0;
    int episodes = 0;
    int episodes_to_first_marine = 0;
    double final_mean_marines = 0.0;
};
struct EvalAgentResult {
    std::string dir;
    std::vector<AgentRun> runs;
    std::string report;
};
std::vector<rl::EpisodeLog> parse_curves(const std::string& csv);
// Median over runs; runs without a marine count as one past their last episode.
double median_first_marine(const std::vector<AgentRun>& runs, const std::string& mode);
double mean_final_marines(const std::vector<AgentRun>& runs, const std::string& mode);
EvalAgentResult eval_agent(const RunConfig& config, const Log& log = {});

// env-report: report.txt with the rule table and an invariant audit over
// uniform-random episodes.
struct EnvAudit {
    int episodes = 0;
    std::int64_t steps = 0;
    std::int64_t violations = 0;
    std::vector<std::string> first_violations;  // at most 10
};
EnvAudit audit_random_episodes(const env::EnvConfig& config, int episodes, std::uint64_t seed);
struct EnvReportResult {
    std::string dir;
    EnvAudit audit;
};
EnvReportResult env_report(const RunConfig& config, int episodes, const std::optional<std::string>& trace_path,
                           const Log& log = {});

}  // namespace groundrl::pipeline
