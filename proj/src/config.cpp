#include "groundrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "groundrl/errors.hpp"

namespace groundrl {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
    return out;
}

double parse_real(std::string_view key, std::string_view v) {
    const std::string s(v);
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size())
        throw ConfigError("'" + std::string(key) + "' expects a number, got '" + s + "'");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

std::string real_text(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

struct Entry {
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define GRL_INT(field)                                                                                       \
    Entry {                                                                                                  \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_integer<int>(k, v); },   \
            [](const RunConfig& c) { return std::to_string(c.field); }                                       \
    }
#define GRL_U64(field)                                                                                            \
    Entry {                                                                                                       \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_integer<std::uint64_t>(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }                                            \
    }
#define GRL_INT64(field)                                                                                           \
    Entry {                                                                                                        \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_integer<std::int64_t>(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }                                             \
    }
#define GRL_REAL(field)                                                                               \
    Entry {                                                                                           \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_real(k, v); },    \
            [](const RunConfig& c) { return real_text(c.field); }                                     \
    }
#define GRL_BOOL(field)                                                                               \
    Entry {                                                                                           \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_bool(k, v); },    \
            [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }                \
    }

const std::map<std::string, Entry, std::less<>>& table() {
    static const std::map<std::string, Entry, std::less<>> t = {
        {"env.grid_size", GRL_INT(env.grid_size)},
        {"env.episode_length", GRL_INT(env.episode_length)},
        {"env.harvest_rate", GRL_INT(env.harvest_rate)},
        {"env.initial_workers", GRL_INT(env.initial_workers)},
        {"env.initial_minerals", GRL_INT(env.initial_minerals)},
        {"env.seed", GRL_U64(env.rng_seed)},
        {"env.cost.worker", GRL_INT(env.rules.cost[0])},
        {"env.cost.depot", GRL_INT(env.rules.cost[1])},
        {"env.cost.barracks", GRL_INT(env.rules.cost[2])},
        {"env.cost.marine", GRL_INT(env.rules.cost[3])},
        {"env.duration.worker", GRL_INT(env.rules.duration[0])},
        {"env.duration.depot", GRL_INT(env.rules.duration[1])},
        {"env.duration.barracks", GRL_INT(env.rules.duration[2])},
        {"env.duration.marine", GRL_INT(env.rules.duration[3])},
        {"env.supply.base", GRL_INT(env.rules.base_supply)},
        {"env.supply.depot", GRL_INT(env.rules.depot_supply)},
        {"env.supply.worker", GRL_INT(env.rules.worker_supply)},
        {"env.supply.marine", GRL_INT(env.rules.marine_supply)},

        {"data.quota", GRL_INT(data_quota)},
        {"data.seed", GRL_U64(data_seed)},
        {"data.max_episodes", GRL_INT(data_max_episodes)},

        {"w2v.dim", GRL_INT(w2v.dim)},
        {"w2v.window", GRL_INT(w2v.window)},
        {"w2v.negatives", GRL_INT(w2v.negatives)},
        {"w2v.epochs", GRL_INT(w2v.epochs)},
        {"w2v.lr", GRL_REAL(w2v.lr)},
        {"w2v.seed", GRL_U64(w2v.seed)},
        {"w2v.repeats", GRL_INT(w2v_repeats)},

        {"mem.embed_dim", GRL_INT(mem.embed_dim)},
        {"mem.conv1_channels", GRL_INT(mem.state.conv1_channels)},
        {"mem.conv2_channels", GRL_INT(mem.state.conv2_channels)},
        {"mem.nonspatial_hidden", GRL_INT(mem.state.nonspatial_hidden)},
        {"mem.lr", GRL_REAL(mem_train.lr)},
        {"mem.batch", GRL_INT(mem_train.batch)},
        {"mem.epochs", GRL_INT(mem_train.epochs)},
        {"mem.lambda", GRL_REAL(mem_train.lambda)},
        {"mem.threshold", GRL_REAL(mem_train.threshold)},
        {"mem.seed", GRL_U64(mem_train.seed)},
        {"mem.early_stop", GRL_BOOL(mem_train.early_stop)},
        {"mem.freeze_words", GRL_BOOL(mem_train.freeze_words)},

        {"tsne.perplexity", GRL_REAL(tsne.perplexity)},
        {"tsne.iterations", GRL_INT(tsne.iterations)},
        {"tsne.learning_rate", GRL_REAL(tsne.learning_rate)},
        {"tsne.seed", GRL_U64(tsne.seed)},
        {"tsne.per_class", GRL_INT(tsne_per_class)},

        {"rl.workers", GRL_INT(rl.workers)},
        {"rl.n_step", GRL_INT(rl.n_step)},
        {"rl.gamma", GRL_REAL(rl.gamma)},
        {"rl.entropy_beta", GRL_REAL(rl.entropy_beta)},
        {"rl.value_coef", GRL_REAL(rl.value_coef)},
        {"rl.lr", GRL_REAL(rl.lr)},
        {"rl.budget", GRL_INT64(rl.budget)},
        {"rl.seed", GRL_U64(rl.seed)},
        {"rl.share_mem_encoder", GRL_BOOL(rl.share_mem_encoder)},
        {"rl.eval_episodes", GRL_INT(rl_eval_episodes)},
        {"rl.mode",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.rl.mode = shaping::parse_mode(v); },
          [](const RunConfig& c) { return std::string(shaping::mode_name(c.rl.mode)); }}},
        {"rl.update",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.rl.update = rl::parse_update_mode(v); },
          [](const RunConfig& c) { return std::string(rl::update_mode_name(c.rl.update)); }}},
        {"rl.script",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.rl_script = std::string(v); },
          [](const RunConfig& c) { return c.rl_script; }}},
        {"run_dir",
         {[](RunConfig& c, std::string_view, std::string_view v) {
              if (v.empty()) throw ConfigError("run_dir must not be empty");
              c.run_dir = std::string(v);
          },
          [](const RunConfig& c) { return c.run_dir; }}},
    };
    return t;
}

#undef GRL_INT
#undef GRL_U64
#undef GRL_INT64
#undef GRL_REAL
#undef GRL_BOOL

}  // namespace

RunConfig::RunConfig() { sync(); }

void RunConfig::sync() {
    mem.word_dim = w2v.dim;
    mem.state.grid_size = env.grid_size;
    mem.state.embed_dim = mem.embed_dim;
    rl.env = env;
    rl.encoder = mem.state;
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto it = table().find(key);
    if (it == table().end()) throw ConfigError("unknown key '" + std::string(key) + "'");
    it->second.set(*this, key, trim(value));
    sync();
}

void RunConfig::validate() const {
    env.validate();
    if (data_quota < 1) throw ConfigError("data.quota must be at least 1");
    if (data_max_episodes < 1) throw ConfigError("data.max_episodes must be at least 1");
    if (w2v.dim < 1 || w2v.window < 1 || w2v.negatives < 1 || w2v.epochs < 1 || !(w2v.lr > 0.0))
        throw ConfigError("word2vec settings must be positive");
    if (w2v_repeats < 1) throw ConfigError("w2v.repeats must be at least 1");
    if (mem.embed_dim < 1 || mem.state.conv1_channels < 1 || mem.state.conv2_channels < 1 ||
        mem.state.nonspatial_hidden < 1)
        throw ConfigError("MEM dimensions must be positive");
    mem_train.validate();
    if (tsne_per_class < 2) throw ConfigError("tsne.per_class must be at least 2");
    if (tsne.iterations < 250) throw ConfigError("tsne.iterations must be at least 250");
    rl.validate();
    if (rl_eval_episodes < 1) throw ConfigError("rl.eval_episodes must be at least 1");
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [key, entry] : table()) out += key + " = " + entry.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [key, entry] : table()) out.push_back(key);
    return out;
}

void parse_config(std::string_view text, RunConfig& config) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        try {
            if (eq == std::string::npos) throw ConfigError("expected 'key = value'");
            config.set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void load_config(const std::string& path, RunConfig& config) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("config file not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    parse_config(buf.str(), config);
}

}  // namespace groundrl
