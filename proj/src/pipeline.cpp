#include "groundrl/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include "groundrl/errors.hpp"
#include "groundrl/graph.hpp"
#include "groundrl/shaping.hpp"

namespace fs = std::filesystem;

namespace groundrl::pipeline {

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path require(const RunConfig& config, const std::string& stage, const std::string& file) {
    const fs::path p = fs::path(stage_dir(config, stage)) / file;
    if (!fs::exists(p)) throw MissingArtifactError("run " + stage + " first (" + p.string() + " not found)");
    return p;
}

fs::path begin_stage(const RunConfig& config, const std::string& dir) {
    config.validate();
    fs::create_directories(dir);
    fs::remove(fs::path(dir) / "manifest.txt");
    write_file(fs::path(dir) / "config.txt", config.to_text());
    return dir;
}

void say(const Log& log, const std::string& line) {
    if (log) log(line);
}

dataset::Dataset load_data(const RunConfig& config) {
    auto data = dataset::load_dataset(require(config, "gen-data", "dataset.bin").string());
    if (data.env.grid_size != config.env.grid_size || data.env.episode_length != config.env.episode_length)
        throw ConfigError("dataset was generated for grid " + std::to_string(data.env.grid_size) + " and episode length " +
                          std::to_string(data.env.episode_length) + "; rerun gen-data with the current config");
    return data;
}

mem::LoadedMem load_trained_mem(const RunConfig& config) {
    return mem::load_mem(require(config, "train-mem", "mem.ckpt").string());
}

std::vector<double> state_embeddings(mem::MemModel& model, const dataset::Dataset& data,
                                     const std::vector<const dataset::LabeledPair*>& records, int dim) {
    std::vector<double> out;
    out.reserve(records.size() * static_cast<std::size_t>(dim));
    constexpr std::size_t kBatch = 256;
    for (std::size_t b = 0; b < records.size(); b += kBatch) {
        state_enc::StateBatch batch;
        for (std::size_t i = b; i < std::min(records.size(), b + kBatch); ++i)
            batch.add(data.observe(records[i]->prev), data.observe(records[i]->cur));
        ad::Graph g;
        const auto v = model.state_embedding(g, batch).value().values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

std::vector<double> command_embedding(mem::MemModel& model, const std::vector<int>& ids) {
    ad::Graph g;
    const std::vector<std::vector<int>> one{ids};
    const auto v = model.command_embedding(g, one).value().values();
    return {v.begin(), v.end()};
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Matched records of one split re-paired with an arbitrary command.
class RepairedPairs : public mem::PairSet {
public:
    struct Item {
        const dataset::LabeledPair* record;
        std::vector<int> command;
    };
    RepairedPairs(const dataset::Dataset& data, std::vector<Item> items) : data_(data), items_(std::move(items)) {}
    std::size_t size() const override { return items_.size(); }
    int label(std::size_t) const override { return 0; }
    void append(std::size_t i, mem::PairBatch& batch) const override {
        batch.states.add(data_.observe(items_[i].record->prev), data_.observe(items_[i].record->cur));
        batch.commands.push_back(items_[i].command);
        batch.labels.push_back(0.0);
    }

private:
    const dataset::Dataset& data_;
    std::vector<Item> items_;
};

int record_goal(const dataset::LabeledPair& r) {
    return r.kind == dataset::PairKind::Null ? r.command_goal : r.detected;
}

env::CompoundAction random_action(const env::Observation& obs, int grid, std::mt19937_64& rng) {
    std::vector<int> legal;
    for (int i = 0; i < env::kNumActions; ++i)
        if (obs.action_mask[static_cast<std::size_t>(i)]) legal.push_back(i);
    env::CompoundAction action;
    action.id = static_cast<env::ActionId>(legal[std::uniform_int_distribution<std::size_t>(0, legal.size() - 1)(rng)]);
    action.x = std::uniform_int_distribution<int>(0, grid - 1)(rng);
    action.y = std::uniform_int_distribution<int>(0, grid - 1)(rng);
    return action;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("SHA-256 digest failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 15];
    }
    return out;
}

std::string file_sha256(const std::string& path) { return sha256_hex(read_file(path)); }

std::string manifest_text(const std::string& dir, bool nondeterministic) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.txt")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    std::string out;
    if (nondeterministic) out += "# nondeterministic: asynchronous updates\n";
    for (const auto& n : names) out += file_sha256((fs::path(dir) / n).string()) + "  " + n + "\n";
    return out;
}

void write_manifest(const std::string& dir, bool nondeterministic) {
    const auto text = manifest_text(dir, nondeterministic);
    write_file(fs::path(dir) / "manifest.txt", text);
}

std::string stage_dir(const RunConfig& config, const std::string& stage) {
    return (fs::path(config.run_dir) / stage).string();
}

std::string agent_dir(const RunConfig& config) {
    return (fs::path(stage_dir(config, "train-agent")) /
            (std::string(shaping::mode_name(config.rl.mode)) + "-s" + std::to_string(config.rl.seed)))
        .string();
}

GenDataResult gen_data(const RunConfig& config, const Log& log) {
    GenDataResult r;
    r.dir = stage_dir(config, "gen-data");
    const auto dir = begin_stage(config, r.dir);
    dataset::DatasetConfig dc;
    dc.env = config.env;
    dc.quota = config.data_quota;
    dc.seed = config.data_seed;
    dc.max_episodes = config.data_max_episodes;
    r.data = dataset::build_dataset(dc, lang::standard_vocabulary());
    say(log, std::to_string(r.data.records.size()) + " records from " + std::to_string(r.data.episodes_run) +
                 " episodes");
    dataset::save_dataset((dir / "dataset.bin").string(), r.data);
    write_file(dir / "stats.txt", dataset::stats_report(r.data));
    write_manifest(r.dir);
    return r;
}

Word2VecResult train_w2v(const RunConfig& config, const Log& log) {
    Word2VecResult r;
    r.dir = stage_dir(config, "train-w2v");
    const auto dir = begin_stage(config, r.dir);
    r.vocab = lang::standard_vocabulary();
    std::vector<std::vector<int>> corpus;
    for (const auto& s : lang::paraphrase_corpus(config.w2v.seed, config.w2v_repeats))
        corpus.push_back(lang::tokenize(s, r.vocab));
    r.table = lang::train_word2vec(corpus, r.vocab.size(), config.w2v);
    r.cos_build_construct = lang::cosine(r.table, r.vocab.id("build"), r.vocab.id("construct"));
    r.cos_build_marine = lang::cosine(r.table, r.vocab.id("build"), r.vocab.id("marine"));
    say(log, "cos(build, construct) " + fmt("%.4f", r.cos_build_construct) + ", cos(build, marine) " +
                 fmt("%.4f", r.cos_build_marine));

    ad::ParamStore store;
    store.add("word2vec.table", r.table, false);
    ad::save_checkpoint((dir / "word2vec.ckpt").string(), store, {{"vocab", r.vocab.serialize()}});
    write_file(dir / "similarity.txt", "cos(build, construct) = " + fmt("%.6f", r.cos_build_construct) +
                                           "\ncos(build, marine) = " + fmt("%.6f", r.cos_build_marine) + "\n");
    write_manifest(r.dir);
    return r;
}

Word2VecResult load_w2v(const RunConfig& config) {
    const auto ck = ad::load_checkpoint(require(config, "train-w2v", "word2vec.ckpt").string());
    Word2VecResult r;
    r.dir = stage_dir(config, "train-w2v");
    r.table = ck.params["word2vec.table"].value;
    const auto it = ck.metadata.find("vocab");
    if (it == ck.metadata.end()) throw IoError("word2vec checkpoint has no vocabulary");
    r.vocab = lang::Vocabulary::deserialize(it->second);
    r.cos_build_construct = lang::cosine(r.table, r.vocab.id("build"), r.vocab.id("construct"));
    r.cos_build_marine = lang::cosine(r.table, r.vocab.id("build"), r.vocab.id("marine"));
    return r;
}

TrainMemResult train_mem(const RunConfig& config, const Log& log) {
    const auto data = load_data(config);
    const auto w2v = load_w2v(config);
    TrainMemResult r;
    r.dir = stage_dir(config, "train-mem");
    const auto dir = begin_stage(config, r.dir);

    mem::MemConfig mc = config.mem;
    mc.vocab_size = w2v.vocab.size();
    if (w2v.table.shape().size() != 2 || w2v.table.shape()[1] != mc.word_dim)
        throw ConfigError("word vectors have shape " + ad::shape_str(w2v.table.shape()) + " but w2v.dim is " +
                          std::to_string(mc.word_dim) + "; rerun train-w2v");
    mem::MemModel model(mc, config.mem_train.seed);
    model.command_encoder().load_word_table(model.params(), w2v.table);
    r.parameters = model.params().parameter_count();
    say(log, std::to_string(r.parameters) + " parameters");

    const mem::RecordPairs train(data, data.split(dataset::Split::Train));
    const mem::RecordPairs val(data, data.split(dataset::Split::Val));
    const mem::RecordPairs test(data, data.split(dataset::Split::Test));
    r.training = mem::train_mem(model, train, val, config.mem_train, [&](const mem::EpochStats& s) {
        say(log, "epoch " + std::to_string(s.epoch) + " train loss " + fmt("%.4f", s.train_loss) + " acc " +
                     fmt("%.4f", s.train_acc) + ", val loss " + fmt("%.4f", s.val_loss) + " acc " +
                     fmt("%.4f", s.val_acc));
    });

    const double t = config.mem_train.threshold;
    r.train_accuracy = mem::evaluate_mem(model, train, t);
    r.val_accuracy = mem::evaluate_mem(model, val, t);
    r.test_accuracy = mem::evaluate_mem(model, test, t);
    say(log, "accuracy train " + fmt("%.4f", r.train_accuracy) + " val " + fmt("%.4f", r.val_accuracy) + " test " +
                 fmt("%.4f", r.test_accuracy));

    mem::save_mem((dir / "mem.ckpt").string(), model, w2v.vocab,
                  {{"best_epoch", std::to_string(r.training.best_epoch)}});
    write_file(dir / "curves.csv", mem::curves_csv(r.training.curves));
    std::string summary;
    summary += "parameters = " + std::to_string(r.parameters) + "\n";
    summary += "best_epoch = " + std::to_string(r.training.best_epoch) + "\n";
    summary += "threshold = " + fmt("%g", t) + "\n";
    summary += "train_accuracy = " + fmt("%.6f", r.train_accuracy) + "\n";
    summary += "val_accuracy = " + fmt("%.6f", r.val_accuracy) + "\n";
    summary += "test_accuracy = " + fmt("%.6f", r.test_accuracy) + "\n";
    write_file(dir / "summary.txt", summary);
    write_manifest(r.dir);
    return r;
}

EvalMemResult eval_mem(const RunConfig& config, const Log& log) {
    const auto data = load_data(config);
    auto loaded = load_trained_mem(config);
    auto& model = loaded.model;
    EvalMemResult r;
    r.dir = stage_dir(config, "eval-mem");
    const auto dir = begin_stage(config, r.dir);
    const double t = config.mem_train.threshold;

    const mem::RecordPairs train(data, data.split(dataset::Split::Train));
    const mem::RecordPairs val(data, data.split(dataset::Split::Val));
    const mem::RecordPairs test(data, data.split(dataset::Split::Test));
    const auto d_train = mem::pair_distances(model, train);
    const auto d_val = mem::pair_distances(model, val);
    const auto d_test = mem::pair_distances(model, test);
    r.train_accuracy = mem::accuracy(d_train, train, t);
    r.val_accuracy = mem::accuracy(d_val, val, t);
    r.test_accuracy = mem::accuracy(d_test, test, t);
    r.val_threshold = mem::best_threshold(d_val, val);
    r.test_accuracy_at_val_threshold = mem::accuracy(d_test, test, r.val_threshold.threshold);

    std::string rep;
    rep += "threshold " + fmt("%g", t) + "\n";
    rep += "accuracy train " + fmt("%.4f", r.train_accuracy) + " val " + fmt("%.4f", r.val_accuracy) + " test " +
           fmt("%.4f", r.test_accuracy) + "\n";
    rep += "val-optimal threshold " + fmt("%.4f", r.val_threshold.threshold) + " (val " +
           fmt("%.4f", r.val_threshold.accuracy) + ", test " + fmt("%.4f", r.test_accuracy_at_val_threshold) + ")\n";

    rep += "\ntest accuracy by pair kind and goal\nkind,goal,count,accuracy\n";
    for (int k = 0; k < 3; ++k)
        for (int goal = 0; goal < lang::kNumGoals; ++goal) {
            int n = 0, hit = 0;
            for (std::size_t i = 0; i < test.size(); ++i) {
                const auto& rec = test.record(i);
                if (static_cast<int>(rec.kind) != k || record_goal(rec) != goal) continue;
                ++n;
                hit += mem::classify(d_test[i], t) == (rec.y == 0);
            }
            rep += std::string(dataset::kind_name(static_cast<dataset::PairKind>(k))) + "," +
                   std::string(lang::goal_name(goal)) + "," + std::to_string(n) + "," +
                   (n ? fmt("%.4f", static_cast<double>(hit) / n) : std::string("n/a")) + "\n";
        }

    std::vector<RepairedPairs::Item> items;
    for (const auto* rec : data.split(dataset::Split::Test)) {
        if (rec->kind != dataset::PairKind::Matched) continue;
        for (const auto& text : lang::heldout_paraphrases(rec->detected))
            items.push_back({rec, lang::make_command(text, loaded.vocab).ids});
    }
    const RepairedPairs heldout(data, std::move(items));
    const auto d_held = mem::pair_distances(model, heldout);
    int congruent = 0;
    for (double d : d_held) congruent += mem::classify(d, t);
    r.heldout_pairs = static_cast<int>(d_held.size());
    r.heldout_congruent = r.heldout_pairs ? static_cast<double>(congruent) / r.heldout_pairs : 0.0;
    rep += "\nheld-out wordings on matched test states: " + std::to_string(congruent) + "/" +
           std::to_string(r.heldout_pairs) + " congruent (" + fmt("%.4f", r.heldout_congruent) + ")\n";

    const auto build = command_embedding(model, lang::make_command("build a supply depot", loaded.vocab).ids);
    const auto construct = command_embedding(model, lang::make_command("construct a supply depot", loaded.vocab).ids);
    const auto marine = command_embedding(model, lang::make_command("train a marine", loaded.vocab).ids);
    r.build_construct_distance = euclidean(build, construct);
    r.build_marine_distance = euclidean(build, marine);
    rep += "|build a supply depot - construct a supply depot| = " + fmt("%.4f", r.build_construct_distance) + "\n";
    rep += "|build a supply depot - train a marine| = " + fmt("%.4f", r.build_marine_distance) + "\n";

    r.report = rep;
    say(log, rep);
    write_file(dir / "report.txt", rep);
    write_manifest(r.dir);
    return r;
}

ProjectResult project(const RunConfig& config, const Log& log) {
    const auto data = load_data(config);
    auto loaded = load_trained_mem(config);
    auto& model = loaded.model;
    ProjectResult r;
    r.dir = stage_dir(config, "project");
    const auto dir = begin_stage(config, r.dir);

    std::vector<const dataset::LabeledPair*> matched;
    std::vector<int> goals;
    for (const auto* rec : data.split(dataset::Split::Train))
        if (rec->kind == dataset::PairKind::Matched) {
            matched.push_back(rec);
            goals.push_back(rec->detected);
        }
    const auto picked = tsne::stratified_sample(goals, lang::kNumGoals, config.tsne_per_class, config.tsne.seed);
    std::vector<const dataset::LabeledPair*> records;
    std::vector<int> labels;
    for (auto i : picked) {
        records.push_back(matched[i]);
        labels.push_back(goals[i]);
    }
    r.states = static_cast<int>(records.size());

    const int dim = model.config().embed_dim;
    const auto flat = state_embeddings(model, data, records, dim);
    tsne::Points points;
    for (std::size_t i = 0; i < records.size(); ++i)
        points.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * dim),
                            flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    std::vector<int> command_labels;
    for (int goal = 0; goal < lang::kNumGoals; ++goal) {
        points.push_back(
            command_embedding(model, lang::make_command(lang::canonical_command(goal), loaded.vocab).ids));
        command_labels.push_back(goal);
    }
    say(log, "embedding " + std::to_string(points.size()) + " points");

    const auto emb = tsne::tsne_embed(points, config.tsne);
    r.kl = emb.kl;
    const tsne::Points state_coords(emb.coords.begin(), emb.coords.begin() + r.states);
    const tsne::Points command_coords(emb.coords.begin() + r.states, emb.coords.end());
    r.cluster = tsne::cluster_report(state_coords, labels, lang::kNumGoals, command_coords, command_labels);

    std::vector<int> all_labels = labels;
    all_labels.insert(all_labels.end(), command_labels.begin(), command_labels.end());
    std::vector<std::string> kinds(static_cast<std::size_t>(r.states), "state");
    kinds.resize(emb.coords.size(), "command");
    write_file(dir / "coords.csv", tsne::coords_csv(emb.coords, all_labels, kinds));

    std::string kl = "iteration,kl\n";
    for (std::size_t i = 0; i < r.kl.size(); ++i) kl += std::to_string(i + 1) + "," + fmt("%.17g", r.kl[i]) + "\n";
    write_file(dir / "kl.csv", kl);

    std::vector<std::string> names;
    for (int goal = 0; goal < lang::kNumGoals; ++goal) names.emplace_back(lang::goal_name(goal));
    const auto text = tsne::report_text(r.cluster, names);
    say(log, text);
    write_file(dir / "cluster.txt", text);
    write_manifest(r.dir);
    return r;
}

TrainAgentResult train_agent(const RunConfig& config, const Log& log) {
    const bool needs_mem = config.rl.mode == shaping::RewardMode::MemShaped || config.rl.share_mem_encoder;
    std::optional<mem::LoadedMem> loaded;
    if (needs_mem) loaded.emplace(load_trained_mem(config));
    const auto vocab = loaded ? loaded->vocab : lang::standard_vocabulary();
    const auto script =
        config.rl_script.empty() ? shaping::default_script(vocab) : shaping::load_script(config.rl_script, vocab);

    TrainAgentResult r;
    r.dir = agent_dir(config);
    const auto dir = begin_stage(config, r.dir);
    if (!config.rl_script.empty()) write_file(dir / "script.txt", read_file(config.rl_script));

    rl::Policy policy(config.rl.encoder, config.env.grid_size, config.rl.seed);
    say(log, std::string(shaping::mode_name(config.rl.mode)) + " seed " + std::to_string(config.rl.seed) + ", " +
                 std::to_string(config.rl.workers) + " workers, budget " + std::to_string(config.rl.budget));
    r.training = rl::train_agent(config.rl, policy, loaded ? &loaded->model : nullptr, &script);
    r.episodes_to_first_marine = rl::episodes_to_first_marine(r.training.episodes);
    r.final_mean_marines = rl::final_mean_marines(r.training.episodes);
    r.eval_mean_marines = rl::evaluate_policy(policy, config.env, config.rl_eval_episodes, config.rl.seed).mean_marines;

    write_file(dir / "curves.csv", rl::curves_csv(r.training.episodes));
    rl::save_policy((dir / "policy.ckpt").string(), policy,
                    {{"mode", std::string(shaping::mode_name(config.rl.mode))},
                     {"seed", std::to_string(config.rl.seed)}});
    std::string summary;
    summary += "mode = " + std::string(shaping::mode_name(config.rl.mode)) + "\n";
    summary += "update = " + std::string(rl::update_mode_name(config.rl.update)) + "\n";
    summary += "seed = " + std::to_string(config.rl.seed) + "\n";
    summary += "steps = " + std::to_string(r.training.steps) + "\n";
    summary += "updates = " + std::to_string(r.training.updates) + "\n";
    summary += "episodes = " + std::to_string(r.training.episodes.size()) + "\n";
    summary += "episodes_to_first_marine = " + std::to_string(r.episodes_to_first_marine) + "\n";
    summary += "final_mean_marines = " + fmt("%.6f", r.final_mean_marines) + "\n";
    summary += "eval_mean_marines = " + fmt("%.6f", r.eval_mean_marines) + "\n";
    write_file(dir / "summary.txt", summary);
    say(log, summary);
    write_manifest(r.dir, config.rl.update == rl::UpdateMode::Async);
    return r;
}

std::vector<rl::EpisodeLog> parse_curves(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<rl::EpisodeLog> out;
    int line_no = 0;
    while (std::getline(in, line)) {
        if (++line_no == 1 || line.empty()) continue;
        rl::EpisodeLog e;
        char c1, c2, c3, c4, c5, c6;
        std::istringstream row(line);
        row >> e.wall_step >> c1 >> e.episode >> c2 >> e.worker >> c3 >> e.env_return >> c4 >> e.shaped_return >> c5 >>
            e.script_advances >> c6 >> e.marines;
        if (!row || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',' || c6 != ',')
            throw IoError("malformed curves row " + std::to_string(line_no));
        out.push_back(e);
    }
    return out;
}

namespace {

std::vector<const AgentRun*> runs_of(const std::vector<AgentRun>& runs, const std::string& mode) {
    std::vector<const AgentRun*> out;
    for (const auto& r : runs)
        if (r.mode == mode) out.push_back(&r);
    return out;
}

}  // namespace

double median_first_marine(const std::vector<AgentRun>& runs, const std::string& mode) {
    std::vector<double> v;
    for (const auto* r : runs_of(runs, mode))
        v.push_back(r->episodes_to_first_marine > 0 ? r->episodes_to_first_marine : r->episodes + 1.0);
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_final_marines(const std::vector<AgentRun>& runs, const std::string& mode) {
    const auto sel = runs_of(runs, mode);
    if (sel.empty()) return std::nan("");
    double s = 0.0;
    for (const auto* r : sel) s += r->final_mean_marines;
    return s / static_cast<double>(sel.size());
}

EvalAgentResult eval_agent(const RunConfig& config, const Log& log) {
    const fs::path root = stage_dir(config, "train-agent");
    EvalAgentResult r;
    if (fs::exists(root))
        for (const auto& entry : fs::directory_iterator(root)) {
            const auto curves = entry.path() / "curves.csv";
            if (!entry.is_directory() || !fs::exists(curves)) continue;
            const std::string name = entry.path().filename().string();
            const auto dash = name.rfind("-s");
            if (dash == std::string::npos) continue;
            AgentRun run;
            run.name = name;
            run.mode = name.substr(0, dash);
            run.seed = std::stoull(name.substr(dash + 2));
            const auto episodes = parse_curves(read_file(curves));
            run.episodes = static_cast<int>(episodes.size());
            run.episodes_to_first_marine = rl::episodes_to_first_marine(episodes);
            run.final_mean_marines = rl::final_mean_marines(episodes);
            r.runs.push_back(run);
        }
    if (r.runs.empty()) throw MissingArtifactError("run train-agent first (no runs under " + root.string() + ")");
    std::sort(r.runs.begin(), r.runs.end(), [](const AgentRun& a, const AgentRun& b) {
        return std::tie(a.mode, a.seed) < std::tie(b.mode, b.seed);
    });
    r.dir = stage_dir(config, "eval-agent");
    const auto dir = begin_stage(config, r.dir);

    std::string rep = "run,episodes,first_marine_episode,final_mean_marines\n";
    for (const auto& run : r.runs)
        rep += run.name + "," + std::to_string(run.episodes) + "," + std::to_string(run.episodes_to_first_marine) + "," +
               fmt("%.4f", run.final_mean_marines) + "\n";
    rep += "\nmode,runs,median_first_marine,mean_final_marines\n";
    for (const char* mode : {"baseline", "subtask_oracle", "mem_shaped"}) {
        const auto n = runs_of(r.runs, mode).size();
        if (n == 0) continue;
        rep += std::string(mode) + "," + std::to_string(n) + "," + fmt("%.1f", median_first_marine(r.runs, mode)) +
               "," + fmt("%.4f", mean_final_marines(r.runs, mode)) + "\n";
    }
    const bool have_base = !runs_of(r.runs, "baseline").empty();
    if (have_base && !runs_of(r.runs, "subtask_oracle").empty())
        rep += std::string("\nsubtask_oracle reaches a marine sooner than baseline (median): ") +
               (median_first_marine(r.runs, "subtask_oracle") < median_first_marine(r.runs, "baseline") ? "yes"
                                                                                                        : "no") +
               "\n";
    if (have_base && !runs_of(r.runs, "mem_shaped").empty())
        rep += std::string("mem_shaped final marines at least twice baseline: ") +
               (mean_final_marines(r.runs, "mem_shaped") >= 2.0 * mean_final_marines(r.runs, "baseline") ? "yes"
                                                                                                          : "no") +
               "\n";
    r.report = rep;
    say(log, rep);
    write_file(dir / "report.txt", rep);
    write_manifest(r.dir);
    return r;
}

EnvAudit audit_random_episodes(const env::EnvConfig& config, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw UsageError("audit needs at least one episode");
    EnvAudit a;
    a.episodes = episodes;
    env::MiniBuild game(config);
    const int g = config.grid_size;
    auto violation = [&](int ep, int step, const std::string& what) {
        ++a.violations;
        if (a.first_violations.size() < 10)
            a.first_violations.push_back("episode " + std::to_string(ep) + " step " + std::to_string(step) + ": " +
                                         what);
    };
    auto check = [&](int ep, const env::Observation& obs, double rewards) {
        const auto& s = game.state();
        if (s.minerals < 0) violation(ep, s.step, "negative minerals");
        if (s.supply_used > s.supply_cap) violation(ep, s.step, "supply above cap");
        if (static_cast<double>(s.marines) != rewards) violation(ep, s.step, "marines differ from reward total");
        int depots = 0, barracks = 0, bases = 0, empty = 0;
        for (auto c : s.cells) {
            const auto cell = static_cast<env::Cell>(c);
            depots += cell == env::Cell::Depot;
            barracks += cell == env::Cell::Barracks;
            bases += cell == env::Cell::Base;
            empty += cell == env::Cell::Empty;
        }
        if (depots != s.depots || barracks != s.barracks || bases != 1)
            violation(ep, s.step, "structure count differs from grid");
        if (empty != s.empty_cells) violation(ep, s.step, "empty-cell count differs from grid");
        for (double v : obs.spatial)
            if (!(v >= 0.0 && v <= 1.0)) {
                violation(ep, s.step, "spatial value outside [0, 1]");
                break;
            }
        if (obs.spatial.size() != static_cast<std::size_t>(env::kSpatialLayers * g * g))
            violation(ep, s.step, "spatial size");
        if (!obs.action_mask[0]) violation(ep, s.step, "no-op masked");
    };
    for (int ep = 0; ep < episodes; ++ep) {
        const auto s = dataset::episode_seed(seed, ep);
        std::mt19937_64 rng(s ^ 0x9e3779b97f4a7c15ull);
        auto obs = game.reset(s);
        double rewards = 0.0;
        check(ep, obs, rewards);
        while (!game.done()) {
            const auto action = random_action(obs, g, rng);
            const auto step = game.step(action);
            obs = step.observation;
            rewards += step.reward;
            ++a.steps;
            check(ep, obs, rewards);
        }
    }
    return a;
}

EnvReportResult env_report(const RunConfig& config, int episodes, const std::optional<std::string>& trace_path,
                           const Log& log) {
    EnvReportResult r;
    r.dir = stage_dir(config, "env-report");
    const auto dir = begin_stage(config, r.dir);
    r.audit = audit_random_episodes(config.env, episodes, config.data_seed);
    std::string rep = env::rule_report(config.env);
    rep += "\naudit: " + std::to_string(r.audit.episodes) + " random episodes, " + std::to_string(r.audit.steps) +
           " steps, " + std::to_string(r.audit.violations) + " violations\n";
    for (const auto& v : r.audit.first_violations) rep += "  " + v + "\n";
    say(log, rep);
    write_file(dir / "report.txt", rep);

    if (trace_path) {
        std::ofstream out(*trace_path);
        if (!out) throw IoError("cannot write " + *trace_path);
        env::TraceWriter trace(out);
        env::MiniBuild game(config.env);
        auto obs = game.reset(dataset::episode_seed(config.data_seed, 0));
        std::mt19937_64 rng(config.data_seed);
        while (!game.done()) {
            const auto action = random_action(obs, config.env.grid_size, rng);
            const int step = game.state().step;
            const auto res = game.step(action);
            trace.write(step, action, res.reward, res.observation);
            obs = res.observation;
        }
    }
    write_manifest(r.dir);
    return r;
}

}  // namespace groundrl::pipeline
