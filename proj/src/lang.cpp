#include "groundrl/lang.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "groundrl/errors.hpp"

namespace groundrl::lang {

namespace {

constexpr std::string_view kGoalNames[kNumGoals] = {"worker", "collect", "depot", "barracks", "marine"};
constexpr std::string_view kCanonical[kNumGoals] = {
    "build a worker", "collect resources", "build a supply depot", "build a barracks", "train a marine",
};

const std::vector<std::string> kBuildVerbs{"build", "construct", "make", "create"};
const std::vector<std::string> kTrainVerbs{"train", "recruit", "produce"};
const std::vector<std::string> kCollectVerbs{"collect", "gather", "harvest", "mine"};
const std::vector<std::string> kDets{"a", "one", "another"};

struct ParaphraseSets {
    std::vector<std::string> train[kNumGoals];
    std::vector<std::string> heldout[kNumGoals];
};

std::vector<std::string> cross(const std::vector<std::string>& verbs, const std::vector<std::string>& dets,
                               const std::vector<std::string>& objects) {
    std::vector<std::string> out;
    for (const auto& v : verbs)
        for (const auto& d : dets)
            for (const auto& o : objects) out.push_back(d.empty() ? v + " " + o : v + " " + d + " " + o);
    return out;
}

const ParaphraseSets& sets() {
    static const ParaphraseSets s = [] {
        ParaphraseSets p;
        std::vector<std::string> all[kNumGoals] = {
            cross(kBuildVerbs, kDets, {"worker", "scv"}),
            cross(kCollectVerbs, {"", "some", "more"}, {"resources", "minerals", "ore"}),
            cross(kBuildVerbs, kDets, {"supply depot", "depot"}),
            cross(kBuildVerbs, kDets, {"barracks"}),
            cross(kTrainVerbs, kDets, {"marine", "soldier"}),
        };
        const std::vector<std::string> held[kNumGoals] = {
            {"create another scv", "construct one worker", "make a scv", "build another scv"},
            {"mine some ore", "gather resources", "harvest more minerals", "collect ore"},
            {"create one supply depot", "construct another depot", "make a depot", "build one depot"},
            {"create one barracks", "construct another barracks"},
            {"recruit another soldier", "produce one marine", "train a soldier", "recruit a marine"},
        };
        for (int goal = 0; goal < kNumGoals; ++goal) {
            p.heldout[goal] = held[goal];
            for (auto& text : all[goal])
                if (std::find(held[goal].begin(), held[goal].end(), text) == held[goal].end())
                    p.train[goal].push_back(text);
        }
        return p;
    }();
    return s;
}

const std::vector<std::string> kFiller{
    "the {o} is ready",
    "we need {d} {o}",
    "our {o} is under attack",
    "send the {o} to the base",
    "the base needs more minerals",
    "workers gather ore near the base",
    "marines defend the base",
    "supply is blocked so build a depot",
    "please {v} {d} {o} now",
    "{v} {d} {o} next",
    "{v} {d} {o} quickly",
    "wait for the {o}",
};

const std::vector<std::string> kFillerObjects{"worker", "scv", "supply depot", "depot", "barracks", "marine",
                                              "soldier", "base"};

std::string fill(std::string tmpl, const std::string& verb, const std::string& det, const std::string& obj) {
    auto sub = [&](const std::string& key, const std::string& value) {
        for (std::size_t pos; (pos = tmpl.find(key)) != std::string::npos;) tmpl.replace(pos, key.size(), value);
    };
    sub("{v}", verb);
    sub("{d}", det);
    sub("{o}", obj);
    return tmpl;
}

bool is_unit(const std::string& obj) { return obj == "marine" || obj == "soldier"; }

}  // namespace

std::string_view goal_name(int goal) {
    if (goal < 0 || goal >= kNumGoals) throw UsageError("goal id out of range: " + std::to_string(goal));
    return kGoalNames[goal];
}

std::string_view canonical_command(int goal) {
    goal_name(goal);
    return kCanonical[goal];
}

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
    for (const auto& t : tokens) add(t);
}

int Vocabulary::add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (tokens_.size() >= kMaxSize) throw ConfigError("vocabulary exceeds " + std::to_string(kMaxSize) + " tokens");
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::string Vocabulary::serialize() const {
    std::string out;
    for (std::size_t i = 2; i < tokens_.size(); ++i) out += tokens_[i] + "\n";
    return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
    Vocabulary v;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        if (end > start) v.add(std::string(text.substr(start, end - start)));
        start = end + 1;
    }
    return v;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
    if (text.empty()) throw UsageError("cannot tokenize empty text");
    const auto words = split_words(text);
    if (words.empty()) throw UsageError("text contains no words: '" + std::string(text) + "'");
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
}

Command make_command(std::string_view text, const Vocabulary& vocab, std::optional<int> goal) {
    Command c{std::string(text), tokenize(text, vocab), goal};
    if (c.ids.size() > static_cast<std::size_t>(kMaxCommandLength))
        throw UsageError("command longer than " + std::to_string(kMaxCommandLength) + " tokens: '" + c.text + "'");
    if (!c.goal) c.goal = goal_of(text);
    return c;
}

const std::vector<std::string>& paraphrases(int goal) {
    goal_name(goal);
    return sets().train[goal];
}

const std::vector<std::string>& heldout_paraphrases(int goal) {
    goal_name(goal);
    return sets().heldout[goal];
}

std::optional<int> goal_of(std::string_view text) {
    std::string norm;
    for (const auto& w : split_words(text)) norm += (norm.empty() ? "" : " ") + w;
    for (int goal = 0; goal < kNumGoals; ++goal) {
        for (const auto& p : sets().train[goal])
            if (p == norm) return goal;
        for (const auto& p : sets().heldout[goal])
            if (p == norm) return goal;
    }
    return std::nullopt;
}

std::vector<std::string> paraphrase_corpus(std::uint64_t seed, int repeats) {
    std::vector<std::string> corpus;
    for (int r = 0; r < repeats; ++r)
        for (int goal = 0; goal < kNumGoals; ++goal)
            for (const auto& p : sets().train[goal]) corpus.push_back(p);

    std::set<std::string> held;
    for (int goal = 0; goal < kNumGoals; ++goal) held.insert(sets().heldout[goal].begin(), sets().heldout[goal].end());

    for (const auto& tmpl : kFiller)
        for (const auto& obj : kFillerObjects) {
            const auto& verbs = is_unit(obj) ? kTrainVerbs : kBuildVerbs;
            for (const auto& v : verbs)
                for (const auto& d : kDets) {
                    if (obj == "base" && tmpl.find("{v}") != std::string::npos) continue;
                    const std::string s = fill(tmpl, v, d, obj);
                    bool leaks = false;
                    for (const auto& h : held) leaks = leaks || s.find(h) != std::string::npos;
                    if (!leaks) corpus.push_back(s);
                }
        }
    std::sort(corpus.begin(), corpus.end());
    std::mt19937_64 rng(seed);
    std::shuffle(corpus.begin(), corpus.end(), rng);
    return corpus;
}

Vocabulary standard_vocabulary() {
    std::set<std::string> words;
    for (const auto& s : paraphrase_corpus(0, 1))
        for (auto& w : split_words(s)) words.insert(std::move(w));
    for (int goal = 0; goal < kNumGoals; ++goal) {
        for (const auto& s : sets().heldout[goal])
            for (auto& w : split_words(s)) words.insert(std::move(w));
        for (auto& w : split_words(kCanonical[goal])) words.insert(std::move(w));
    }
    const std::vector<std::string> sorted(words.begin(), words.end());
    return Vocabulary(sorted);
}

ad::Tensor train_word2vec(const std::vector<std::vector<int>>& corpus, int vocab_size, const Word2VecConfig& cfg) {
    if (cfg.dim < 1 || cfg.window < 1 || cfg.negatives < 1 || cfg.epochs < 0 || cfg.lr <= 0.0)
        throw ConfigError("invalid word2vec configuration");
    std::vector<long> counts(static_cast<std::size_t>(vocab_size), 0);
    long total = 0;
    for (const auto& sentence : corpus)
        for (int id : sentence) {
            if (id < 0 || id >= vocab_size) throw DimensionError("token id outside vocabulary");
            ++counts[static_cast<std::size_t>(id)];
            ++total;
        }
    const auto distinct = std::count_if(counts.begin(), counts.end(), [](long c) { return c > 0; });
    if (distinct < 2) throw ConfigError("word2vec corpus needs at least two distinct tokens");

    // Noise distribution: unigram^0.75 as a cumulative table.
    std::vector<double> noise_cdf(counts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) noise_cdf[i] = acc += std::pow(static_cast<double>(counts[i]), 0.75);
    for (double& v : noise_cdf) v /= acc;

    const int dim = cfg.dim;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ad::Tensor in(ad::Shape{vocab_size, dim});
    std::vector<double> out(static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(dim), 0.0);
    for (double& v : in.values()) v = (unit(rng) - 0.5) / dim;

    auto draw_noise = [&] {
        const double u = unit(rng);
        const auto it = std::upper_bound(noise_cdf.begin(), noise_cdf.end(), u);
        return static_cast<int>(std::min<std::ptrdiff_t>(it - noise_cdf.begin(), vocab_size - 1));
    };
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

    const double total_words = static_cast<double>(total) * cfg.epochs;
    double processed = 0.0;
    std::vector<double> grad_in(static_cast<std::size_t>(dim));
    double* W = in.data();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& sentence : corpus) {
            const int n = static_cast<int>(sentence.size());
            for (int pos = 0; pos < n; ++pos, processed += 1.0) {
                const double lr = std::max(cfg.lr * 1e-4, cfg.lr * (1.0 - processed / total_words));
                const int center = sentence[static_cast<std::size_t>(pos)];
                double* v = W + static_cast<std::size_t>(center) * dim;
                for (int off = -cfg.window; off <= cfg.window; ++off) {
                    const int cpos = pos + off;
                    if (off == 0 || cpos < 0 || cpos >= n) continue;
                    const int context = sentence[static_cast<std::size_t>(cpos)];
                    std::fill(grad_in.begin(), grad_in.end(), 0.0);
                    for (int k = 0; k <= cfg.negatives; ++k) {
                        int target = context;
                        double label = 1.0;
                        if (k > 0) {
                            target = draw_noise();
                            if (target == context) continue;
                            label = 0.0;
                        }
                        double* u = out.data() + static_cast<std::size_t>(target) * dim;
                        double dot = 0.0;
                        for (int j = 0; j < dim; ++j) dot += v[j] * u[j];
                        const double gcoef = (label - sigmoid(dot)) * lr;
                        for (int j = 0; j < dim; ++j) {
                            grad_in[static_cast<std::size_t>(j)] += gcoef * u[j];
                            u[j] += gcoef * v[j];
                        }
                    }
                    for (int j = 0; j < dim; ++j) v[j] += grad_in[static_cast<std::size_t>(j)];
                }
            }
        }
    }
    return in;
}

double cosine(const ad::Tensor& table, int a, int b) {
    const int dim = table.dim(1);
    const double* x = table.data() + static_cast<std::size_t>(a) * dim;
    const double* y = table.data() + static_cast<std::size_t>(b) * dim;
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (int j = 0; j < dim; ++j) {
        xy += x[j] * y[j];
        xx += x[j] * x[j];
        yy += y[j] * y[j];
    }
    const double denom = std::sqrt(xx * yy);
    return denom > 0.0 ? xy / denom : 0.0;
}

CommandEncoder::CommandEncoder(ad::ParamStore& store, const std::string& prefix, int vocab_size, int word_dim,
                               int hidden, std::mt19937_64& rng)
    : embed_(store, prefix + ".embed", vocab_size, word_dim, rng),
      lstm_(store, prefix + ".lstm", word_dim, hidden, rng),
      vocab_size_(vocab_size) {}

ad::Var CommandEncoder::operator()(ad::ParamStore& store, ad::Graph& g,
                                   std::span<const std::vector<int>> sequences) const {
    if (sequences.empty()) throw UsageError("no command sequences to encode");
    std::size_t longest = 0;
    for (const auto& s : sequences) {
        if (s.empty()) throw UsageError("cannot encode an empty command");
        longest = std::max(longest, s.size());
    }
    const int batch = static_cast<int>(sequences.size());
    const int h = lstm_.hidden();
    ad::LstmState state{g.constant(ad::Tensor(ad::Shape{batch, h})), g.constant(ad::Tensor(ad::Shape{batch, h}))};
    std::vector<int> ids(static_cast<std::size_t>(batch));
    for (std::size_t t = 0; t < longest; ++t) {
        bool ragged = false;
        for (int b = 0; b < batch; ++b) {
            const auto& s = sequences[static_cast<std::size_t>(b)];
            ids[static_cast<std::size_t>(b)] = t < s.size() ? s[t] : Vocabulary::kPad;
            ragged = ragged || t >= s.size();
        }
        ad::LstmState next = lstm_(store, embed_(store, g, ids), state);
        if (ragged) {
            ad::Tensor keep(ad::Shape{batch, h}), hold(ad::Shape{batch, h});
            for (int b = 0; b < batch; ++b) {
                const bool live = t < sequences[static_cast<std::size_t>(b)].size();
                for (int j = 0; j < h; ++j) {
                    keep[static_cast<std::size_t>(b * h + j)] = live ? 1.0 : 0.0;
                    hold[static_cast<std::size_t>(b * h + j)] = live ? 0.0 : 1.0;
                }
            }
            ad::Var k = g.constant(std::move(keep)), o = g.constant(std::move(hold));
            next.h = add(mul(next.h, k), mul(state.h, o));
            next.c = add(mul(next.c, k), mul(state.c, o));
        }
        state = next;
    }
    return state.h;
}

void CommandEncoder::load_word_table(ad::ParamStore& store, const ad::Tensor& table) const {
    auto& p = store.at(embed_.table_index());
    if (table.shape() != p.value.shape())
        throw DimensionError("word table shape " + ad::shape_str(table.shape()) + " does not match " +
                             ad::shape_str(p.value.shape()));
    p.value = table;
}

void CommandEncoder::freeze_words(ad::ParamStore& store, bool frozen) const {
    store.at(embed_.table_index()).trainable = !frozen;
}

}  // namespace groundrl::lang
