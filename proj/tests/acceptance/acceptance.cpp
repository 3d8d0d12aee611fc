// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// usage: acceptance <desk.conf> <work-dir> [criterion ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "groundrl/config.hpp"
#include "groundrl/dataset.hpp"
#include "groundrl/errors.hpp"
#include "groundrl/graph.hpp"
#include "groundrl/pipeline.hpp"
#include "groundrl/shaping.hpp"

using namespace groundrl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, double v) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void progress(const std::string& line) {
    std::cerr << "  " << line;
    if (line.empty() || line.back() != '\n') std::cerr << '\n';
}

// ---------------------------------------------------------------- criterion 1

ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng) {
    ad::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (double& v : t.values()) v = d(rng);
    return t;
}

ad::Var contract(ad::Var v, std::uint64_t seed) {
    std::mt19937_64 rng(seed * 7919 + 17);
    return ad::sum(ad::mul(v, v.graph->constant(random_tensor(v.shape(), rng))));
}

mem::MemConfig small_mem(int vocab) {
    mem::MemConfig c;
    c.vocab_size = vocab;
    c.word_dim = 4;
    c.embed_dim = 6;
    c.state.grid_size = 8;
    c.state.conv1_channels = 2;
    c.state.conv2_channels = 2;
    c.state.nonspatial_hidden = 3;
    return c;
}

env::Observation random_observation(std::mt19937_64& rng) {
    env::Observation o;
    o.grid_size = 8;
    o.spatial.resize(static_cast<std::size_t>(env::kSpatialLayers * 64));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : o.spatial) v = u(rng);
    for (double& v : o.nonspatial) v = u(rng);
    return o;
}

Outcome gradient_checks() {
    using namespace ad;
    using Build = std::function<Var(Graph&, ParamStore&)>;
    struct Case {
        std::string name;
        std::vector<std::pair<std::string, Shape>> inputs;
        Build build;
    };
    const std::vector<int> rows{2, 0, 2};
    const std::vector<int> picks{1, 0, 4};
    const std::vector<bool> mask{true, true, false, true, true};
    const auto p = [](Graph& g, ParamStore& ps, const char* n) { return g.parameter(ps, n); };
    const std::vector<Case> cases{
        {"dense", {{"x", {3, 4}}, {"w", {2, 4}}, {"b", {2}}},
         [&](Graph& g, ParamStore& ps) { return dense(p(g, ps, "x"), p(g, ps, "w"), p(g, ps, "b")); }},
        {"matmul_t", {{"x", {3, 4}}, {"w", {5, 4}}},
         [&](Graph& g, ParamStore& ps) { return matmul_t(p(g, ps, "x"), p(g, ps, "w")); }},
        {"conv2d", {{"x", {2, 3, 6, 6}}, {"w", {2, 3, 5, 5}}, {"b", {2}}},
         [&](Graph& g, ParamStore& ps) { return conv2d(p(g, ps, "x"), p(g, ps, "w"), p(g, ps, "b"), 2, 2); }},
        {"relu", {{"x", {4, 5}}}, [&](Graph& g, ParamStore& ps) { return relu(p(g, ps, "x")); }},
        {"tanh", {{"x", {4, 5}}}, [&](Graph& g, ParamStore& ps) { return tanh(p(g, ps, "x")); }},
        {"sigmoid", {{"x", {4, 5}}}, [&](Graph& g, ParamStore& ps) { return sigmoid(p(g, ps, "x")); }},
        {"add", {{"a", {3, 4}}, {"b", {3, 4}}},
         [&](Graph& g, ParamStore& ps) { return add(p(g, ps, "a"), p(g, ps, "b")); }},
        {"sub", {{"a", {3, 4}}, {"b", {3, 4}}},
         [&](Graph& g, ParamStore& ps) { return sub(p(g, ps, "a"), p(g, ps, "b")); }},
        {"mul", {{"a", {3, 4}}, {"b", {3, 4}}},
         [&](Graph& g, ParamStore& ps) { return mul(p(g, ps, "a"), p(g, ps, "b")); }},
        {"scale", {{"x", {3, 4}}}, [&](Graph& g, ParamStore& ps) { return scale(p(g, ps, "x"), -2.5); }},
        {"square", {{"x", {3, 4}}}, [&](Graph& g, ParamStore& ps) { return square(p(g, ps, "x")); }},
        {"concat", {{"a", {2, 3}}, {"b", {2, 2}}},
         [&](Graph& g, ParamStore& ps) {
             const Var parts[] = {p(g, ps, "a"), p(g, ps, "b")};
             return concat(parts);
         }},
        {"flatten", {{"x", {2, 3, 2, 2}}}, [&](Graph& g, ParamStore& ps) { return flatten(p(g, ps, "x")); }},
        {"slice", {{"x", {3, 6}}}, [&](Graph& g, ParamStore& ps) { return slice(p(g, ps, "x"), 2, 3); }},
        {"l2_norm", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return l2_norm(p(g, ps, "x")); }},
        {"sum", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return sum(p(g, ps, "x")); }},
        {"mean", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return mean(p(g, ps, "x")); }},
        {"sum_squares", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return sum_squares(p(g, ps, "x")); }},
        {"mse", {{"a", {3, 4}}, {"b", {3, 4}}},
         [&](Graph& g, ParamStore& ps) { return mse(p(g, ps, "a"), p(g, ps, "b")); }},
        {"softmax", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return softmax(p(g, ps, "x")); }},
        {"log_softmax", {{"x", {3, 5}}}, [&](Graph& g, ParamStore& ps) { return log_softmax(p(g, ps, "x")); }},
        {"masked log_softmax + pick", {{"x", {3, 5}}},
         [&](Graph& g, ParamStore& ps) { return pick(log_softmax(p(g, ps, "x"), mask), picks); }},
        {"entropy", {{"x", {3, 5}}},
         [&](Graph& g, ParamStore& ps) { return entropy_from_log_probs(log_softmax(p(g, ps, "x"), mask)); }},
        {"embedding_lookup", {{"t", {5, 3}}},
         [&](Graph& g, ParamStore& ps) { return embedding_lookup(p(g, ps, "t"), rows); }},
        {"gather_rows", {{"x", {4, 3}}}, [&](Graph& g, ParamStore& ps) { return gather_rows(p(g, ps, "x"), rows); }},
    };

    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : cases)
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(seed + 1000);
            ParamStore ps;
            for (const auto& [n, s] : c.inputs) ps.add(n, random_tensor(s, rng));
            const double err = grad_check(
                [&](Graph& g) {
                    Var out = c.build(g, ps);
                    return out.value().size() == 1 ? out : contract(out, seed);
                },
                ps, 1e-5);
            if (err > worst) {
                worst = err;
                worst_name = c.name;
            }
        }

    double worst_mem = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        mem::MemModel model(small_mem(9), seed);
        std::mt19937_64 rng(seed);
        mem::PairBatch b;
        b.states.add(random_observation(rng), random_observation(rng));
        b.states.add(random_observation(rng), random_observation(rng));
        b.commands = {{2, 3, 4}, {5, 8}};
        b.labels = {0.0, 1.0};
        worst_mem = std::max(worst_mem, grad_check([&](Graph& g) { return mem::mem_loss(model, g, b, 2.5e-3); },
                                                   model.params(), 1e-5));
    }
    const bool pass = worst < 1e-3 && worst_mem < 1e-3;
    return {pass, std::to_string(cases.size()) + " primitives x 20 seeds, worst " + fmt("%.2e", worst) + " (" +
                      worst_name + "); MEM loss x 20 seeds, worst " + fmt("%.2e", worst_mem)};
}

// ---------------------------------------------------------------- criterion 2

void pin(mem::MemModel& m, const std::vector<int>& cmd, const std::vector<double>& offset) {
    ad::Graph g;
    const std::vector<std::vector<int>> one{cmd};
    const auto xc = m.command_embedding(g, one).value();
    m.params()["state.fusion.weight"].value.fill(0.0);
    auto& b = m.params()["state.fusion.bias"].value;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = xc[j] + offset[j];
}

double loss_of(mem::MemModel& m, const std::vector<int>& cmd, double y, double lambda) {
    mem::PairBatch b;
    const auto o = env::reset(env::EnvConfig{.grid_size = 8}, 3);
    b.states.add(o, o);
    b.commands.push_back(cmd);
    b.labels.push_back(y);
    ad::Graph g;
    return mem::mem_loss(m, g, b, lambda).value().item();
}

Outcome loss_identities() {
    mem::MemModel m(small_mem(9), 4);
    const std::vector<int> cmd{2, 7};
    std::vector<double> off(6, 0.0);
    pin(m, cmd, off);
    const double a = loss_of(m, cmd, 0.0, 0.0);
    off[1] = 1.0;
    pin(m, cmd, off);
    const double b = loss_of(m, cmd, 1.0, 0.0);
    off[1] = 0.5;
    pin(m, cmd, off);
    const double c = loss_of(m, cmd, 0.0, 0.0);

    double worst_decomp = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        mem::MemModel r(small_mem(9), seed + 10);
        const double lambda = 2.5e-3;
        const double full = loss_of(r, cmd, seed % 2, lambda);
        const double data = loss_of(r, cmd, seed % 2, 0.0);
        worst_decomp = std::max(worst_decomp, std::abs(full - (data + lambda * r.params().sum_squares())));
    }
    const bool pass =
        std::abs(a) <= 1e-12 && std::abs(b) <= 1e-12 && std::abs(c - 0.25) <= 1e-12 && worst_decomp <= 1e-9;
    return {pass, "losses " + fmt("%.3g", a) + ", " + fmt("%.3g", b) + ", " + fmt("%.15g", c) +
                      "; decomposition error " + fmt("%.2e", worst_decomp)};
}

// ---------------------------------------------------------------- criterion 6

struct Step {
    env::Frame prev_frame, cur_frame;
    env::Observation prev, cur;
    double env_reward = 0.0;
};

// Uniform-random legal play, recorded once and replayed through both shapers.
std::vector<std::vector<Step>> record_trajectories(const env::EnvConfig& cfg, int episodes) {
    std::vector<std::vector<Step>> out;
    env::MiniBuild game(cfg);
    std::mt19937_64 rng(99);
    for (int e = 0; e < episodes; ++e) {
        auto obs = game.reset(dataset::episode_seed(42, e));
        env::Frame frame = game.state();
        std::vector<Step> steps;
        while (!game.done()) {
            std::vector<int> legal;
            for (int i = 0; i < env::kNumActions; ++i)
                if (obs.action_mask[static_cast<std::size_t>(i)]) legal.push_back(i);
            env::CompoundAction a;
            a.id = static_cast<env::ActionId>(legal[rng() % legal.size()]);
            a.x = static_cast<int>(rng() % static_cast<unsigned>(cfg.grid_size));
            a.y = static_cast<int>(rng() % static_cast<unsigned>(cfg.grid_size));
            const auto r = game.step(a);
            const env::Frame next = game.state();
            steps.push_back({frame, next, obs, r.observation, r.reward});
            frame = next;
            obs = r.observation;
        }
        out.push_back(std::move(steps));
    }
    return out;
}

Outcome oracle_equivalence(const RunConfig& config) {
    const auto vocab = lang::standard_vocabulary();
    const auto trajectories = record_trajectories(config.env, 20);
    // Stand-in MEM: zero exactly when the command's detector fired.
    const shaping::DistanceFn mock = [](const shaping::StackView& s, const lang::Command& c) {
        return dataset::fired_goals(s.prev_frame, s.cur_frame)[static_cast<std::size_t>(*c.goal)] ? 0.0 : 1.0;
    };
    shaping::Shaper oracle(shaping::RewardMode::SubtaskOracle, shaping::default_script(vocab));
    shaping::Shaper shaped(shaping::RewardMode::MemShaped, shaping::default_script(vocab), mock);
    std::vector<double> a, b;
    int advances = 0;
    for (const auto& episode : trajectories) {
        oracle.start_episode();
        shaped.start_episode();
        for (const auto& s : episode) {
            const shaping::StackView view{s.prev_frame, s.cur_frame, s.prev, s.cur};
            const auto ra = oracle.observe(view);
            const auto rb = shaped.observe(view);
            advances += rb.advanced;
            a.push_back(shaping::combined_reward(s.env_reward, ra.reward, shaping::RewardMode::SubtaskOracle));
            b.push_back(shaping::combined_reward(s.env_reward, rb.reward, shaping::RewardMode::MemShaped));
        }
    }
    const bool pass = a == b && advances > 0;
    return {pass, std::to_string(a.size()) + " replayed steps, " + std::to_string(advances) +
                      " script advances, streams " + (a == b ? "identical" : "differ")};
}

// ---------------------------------------------------------------- criterion 8

Outcome env_invariants(const RunConfig& config) {
    const auto audit = pipeline::audit_random_episodes(config.env, 10000, 1);
    std::string detail = std::to_string(audit.episodes) + " episodes, " + std::to_string(audit.steps) + " steps, " +
                         std::to_string(audit.violations) + " violations";
    if (!audit.first_violations.empty()) detail += " (first: " + audit.first_violations.front() + ")";
    return {audit.episodes == 10000 && audit.violations == 0, detail};
}

// ---------------------------------------------------------------- criteria 3, 4, 9

Outcome mem_accuracy(const RunConfig& config) {
    const double t0 = cpu_seconds();
    const auto data = pipeline::gen_data(config, progress);
    const auto split_sizes = std::to_string(data.data.split(dataset::Split::Train).size()) + "/" +
                             std::to_string(data.data.split(dataset::Split::Val).size()) + "/" +
                             std::to_string(data.data.split(dataset::Split::Test).size());
    pipeline::train_w2v(config, progress);
    const auto r = pipeline::train_mem(config, progress);
    const double minutes = (cpu_seconds() - t0) / 60.0;
    const bool pass = data.data.records.size() == 15000 && r.train_accuracy >= 0.95 && r.test_accuracy >= 0.85 &&
                      minutes <= 30.0;
    return {pass, std::to_string(data.data.records.size()) + " records (" + split_sizes + "), train " +
                      fmt("%.4f", r.train_accuracy) + ", test " + fmt("%.4f", r.test_accuracy) + ", " +
                      fmt("%.1f", minutes) + " CPU-min"};
}

Outcome representation(const RunConfig& config) {
    const double t0 = cpu_seconds();
    const auto r = pipeline::project(config, progress);
    const double minutes = (cpu_seconds() - t0) / 60.0;
    const auto& s = r.cluster.silhouette;
    const bool pass = s.mean && *s.mean > 0.2 && r.cluster.matches >= 4 && minutes < 10.0;
    return {pass, std::to_string(r.states) + " states, mean silhouette " + (s.mean ? fmt("%.3f", *s.mean) : "n/a") +
                      ", " + std::to_string(r.cluster.matches) + "/5 commands at their own centroid, " +
                      fmt("%.1f", minutes) + " CPU-min"};
}

Outcome word_semantics(const RunConfig& config, const fs::path& work) {
    int wins = 0;
    std::string cos;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto c = config;
        c.set("w2v.seed", std::to_string(seed));
        c.set("run_dir", (work / ("w2v-seed" + std::to_string(seed))).string());
        const auto r = pipeline::train_w2v(c);
        wins += r.cos_build_construct > r.cos_build_marine;
        cos += (cos.empty() ? "" : " ") + fmt("%.2f", r.cos_build_construct) + ">" + fmt("%.2f", r.cos_build_marine);
    }
    const auto em = pipeline::eval_mem(config, {});
    const bool pass = wins >= 4 && em.heldout_congruent >= 0.8;
    return {pass, "cosine ordering in " + std::to_string(wins) + "/5 seeds [" + cos + "]; held-out wordings " +
                      fmt("%.4f", em.heldout_congruent) + " congruent over " + std::to_string(em.heldout_pairs) +
                      " pairs"};
}

// ---------------------------------------------------------------- criterion 5

Outcome shaping_efficacy(const RunConfig& config) {
    const double t0 = cpu_seconds();
    fs::remove_all(pipeline::stage_dir(config, "train-agent"));
    for (const char* mode : {"baseline", "subtask_oracle", "mem_shaped"})
        for (int seed = 1; seed <= 5; ++seed) {
            auto c = config;
            c.set("rl.mode", mode);
            c.set("rl.seed", std::to_string(seed));
            c.set("rl.workers", "8");
            c.set("rl.update", "sync");
            c.set("rl.budget", "200000");
            const auto r = pipeline::train_agent(c);
            progress(std::string(mode) + " seed " + std::to_string(seed) + ": first marine at episode " +
                     std::to_string(r.episodes_to_first_marine) + ", final mean " +
                     fmt("%.3f", r.final_mean_marines));
        }
    const auto ev = pipeline::eval_agent(config);
    const double hours = (cpu_seconds() - t0) / 3600.0;
    const double base_first = pipeline::median_first_marine(ev.runs, "baseline");
    const double oracle_first = pipeline::median_first_marine(ev.runs, "subtask_oracle");
    const double base_final = pipeline::mean_final_marines(ev.runs, "baseline");
    const double shaped_final = pipeline::mean_final_marines(ev.runs, "mem_shaped");
    const bool a = oracle_first < base_first;
    const bool b = shaped_final >= 2.0 * base_final;
    return {a && b && hours < 4.0,
            "(a) median first-marine episode oracle " + fmt("%.1f", oracle_first) + " vs baseline " +
                fmt("%.1f", base_first) + (a ? " ok" : " FAIL") + "; (b) final mean marines mem_shaped " +
                fmt("%.3f", shaped_final) + " vs baseline " + fmt("%.3f", base_final) + (b ? " ok" : " FAIL") +
                "; " + fmt("%.2f", hours) + " CPU-h"};
}

// ---------------------------------------------------------------- criterion 7

Outcome determinism(const RunConfig& desk, const fs::path& work) {
    auto c = desk;
    c.set("run_dir", (work / "determinism").string());
    c.set("data.quota", "100");
    c.set("mem.epochs", "2");
    c.set("rl.budget", "8000");
    c.set("rl.workers", "8");
    c.set("rl.update", "sync");
    c.set("rl.mode", "subtask_oracle");
    fs::remove_all(c.run_dir);

    auto run = [&] {
        std::map<std::string, std::string> m;
        pipeline::gen_data(c);
        pipeline::train_w2v(c);
        pipeline::train_mem(c);
        const auto agent = pipeline::train_agent(c);
        for (const char* stage : {"gen-data", "train-w2v", "train-mem"})
            m[stage] = slurp(fs::path(pipeline::stage_dir(c, stage)) / "manifest.txt");
        m["train-agent"] = slurp(fs::path(agent.dir) / "manifest.txt");
        return m;
    };
    const auto first = run();
    const auto second = run();
    std::string detail;
    bool pass = true;
    for (const auto& [stage, manifest] : first) {
        const bool same = !manifest.empty() && second.at(stage) == manifest;
        pass = pass && same;
        detail += (detail.empty() ? "" : ", ") + stage + (same ? " identical" : " DIFFERS");
    }
    return {pass, detail + " (quota 100, 2 MEM epochs, 8000 agent steps)"};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: acceptance <desk.conf> <work-dir> [criterion ...]\n";
        return 2;
    }
    std::set<int> only;
    for (int i = 3; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

    RunConfig config;
    const fs::path work = fs::absolute(argv[2]);
    try {
        load_config(argv[1], config);
        config.set("run_dir", (work / "desk").string());
        config.validate();
    } catch (const Error& e) {
        std::cerr << e.category() << ": " << e.what() << "\n";
        return 2;
    }
    fs::create_directories(work);

    const std::map<int, std::string> names{
        {1, "gradient correctness"}, {2, "loss identities"},       {3, "MEM desk accuracy"},
        {4, "representation structure"}, {5, "shaping efficacy"},  {6, "oracle equivalence"},
        {7, "determinism"},          {8, "environment invariants"}, {9, "word-embedding semantics"},
    };
    std::map<int, Outcome> results;
    auto run = [&](int n, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        o.detail += " [" + fmt("%.0f", secs) + " s]";
        results[n] = o;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << names.at(n) << ": " << o.detail << std::endl;
    };

    run(1, gradient_checks);
    run(2, loss_identities);
    run(6, [&] { return oracle_equivalence(config); });
    run(8, [&] { return env_invariants(config); });
    run(3, [&] { return mem_accuracy(config); });
    run(4, [&] { return representation(config); });
    run(9, [&] { return word_semantics(config, work); });
    run(5, [&] { return shaping_efficacy(config); });
    run(7, [&] { return determinism(config, work); });

    int failed = 0;
    std::cout << "\nsummary\n";
    for (const auto& [n, o] : results) {
        std::cout << "  " << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << names.at(n) << "\n";
        failed += !o.pass;
    }
    std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
