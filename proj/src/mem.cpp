#include "groundrl/mem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "groundrl/errors.hpp"

namespace groundrl::mem {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint metadata lacks '" + key + "'");
    return std::stoi(it->second);
}

}  // namespace

std::map<std::string, std::string> MemConfig::to_metadata() const {
    return {
        {"mem.vocab_size", std::to_string(vocab_size)},
        {"mem.word_dim", std::to_string(word_dim)},
        {"mem.embed_dim", std::to_string(embed_dim)},
        {"mem.grid_size", std::to_string(state.grid_size)},
        {"mem.conv1_channels", std::to_string(state.conv1_channels)},
        {"mem.conv2_channels", std::to_string(state.conv2_channels)},
        {"mem.nonspatial_hidden", std::to_string(state.nonspatial_hidden)},
    };
}

MemConfig MemConfig::from_metadata(const std::map<std::string, std::string>& meta) {
    MemConfig c;
    c.vocab_size = meta_int(meta, "mem.vocab_size");
    c.word_dim = meta_int(meta, "mem.word_dim");
    c.embed_dim = meta_int(meta, "mem.embed_dim");
    c.state.grid_size = meta_int(meta, "mem.grid_size");
    c.state.conv1_channels = meta_int(meta, "mem.conv1_channels");
    c.state.conv2_channels = meta_int(meta, "mem.conv2_channels");
    c.state.nonspatial_hidden = meta_int(meta, "mem.nonspatial_hidden");
    c.state.embed_dim = c.embed_dim;
    return c;
}

MemModel::MemModel(const MemConfig& config, std::uint64_t seed) : config_(config) {
    if (config.vocab_size < 3) throw ConfigError("MEM vocabulary too small");
    config_.state.embed_dim = config.embed_dim;
    std::mt19937_64 rng(seed);
    command_ = lang::CommandEncoder(store_, "cmd", config.vocab_size, config.word_dim, config.embed_dim, rng);
    state_ = state_enc::StateEncoder(store_, "state", config_.state, rng);
}

Var MemModel::state_embedding(Graph& g, const state_enc::StateBatch& states) { return state_(store_, g, states); }

Var MemModel::command_embedding(Graph& g, std::span<const std::vector<int>> commands) {
    return command_(store_, g, commands);
}

Var MemModel::distances(Graph& g, const state_enc::StateBatch& states, std::span<const std::vector<int>> commands) {
    if (static_cast<int>(commands.size()) != states.size)
        throw DimensionError(std::to_string(states.size) + " states but " + std::to_string(commands.size()) +
                             " commands");
    std::vector<std::vector<int>> unique;
    std::vector<int> rows;
    rows.reserve(commands.size());
    for (const auto& c : commands) {
        auto it = std::find(unique.begin(), unique.end(), c);
        if (it == unique.end()) {
            rows.push_back(static_cast<int>(unique.size()));
            unique.push_back(c);
        } else {
            rows.push_back(static_cast<int>(it - unique.begin()));
        }
    }
    Var xc = gather_rows(command_embedding(g, unique), rows);
    Var xs = state_embedding(g, states);
    return l2_norm(sub(xs, xc));
}

void PairBatch::clear() {
    states.clear();
    commands.clear();
    labels.clear();
}

namespace {

struct LossParts {
    Var loss;
    Var distances;
};

LossParts loss_parts(MemModel& model, Graph& g, const PairBatch& batch, double lambda) {
    if (batch.size() == 0) throw UsageError("mem_loss on an empty batch");
    if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
    Var d = model.distances(g, batch.states, batch.commands);
    Var y = g.constant(Tensor(Shape{batch.size()}, batch.labels));
    Var loss = mean(square(sub(d, y)));
    if (lambda > 0.0) {
        auto& store = model.params();
        Var reg = g.constant(Tensor::scalar(0.0));
        for (int i = 0; i < store.size(); ++i)
            if (store.at(i).trainable) reg = add(reg, sum_squares(g.parameter(store, i)));
        loss = add(loss, scale(reg, lambda));
    }
    return {loss, d};
}

}  // namespace

Var mem_loss(MemModel& model, Graph& g, const PairBatch& batch, double lambda) {
    return loss_parts(model, g, batch, lambda).loss;
}

void RecordPairs::append(std::size_t i, PairBatch& batch) const {
    const auto& r = *records_[i];
    batch.states.add(data_.observe(r.prev), data_.observe(r.cur));
    batch.commands.push_back(r.ids);
    batch.labels.push_back(static_cast<double>(r.y));
}

void ObservationPairs::append(std::size_t i, PairBatch& batch) const {
    const auto& p = pairs_[i];
    batch.states.add(p.prev, p.cur);
    batch.commands.push_back(p.command);
    batch.labels.push_back(static_cast<double>(p.y));
}

void MemTrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("mem lr must be positive");
    if (batch < 1) throw ConfigError("mem batch must be at least 1");
    if (epochs < 0) throw ConfigError("mem epochs must be non-negative");
    if (lambda < 0.0) throw ConfigError("mem lambda must be non-negative");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("mem threshold must lie in (0, 1)");
}

std::vector<double> pair_distances(MemModel& model, const PairSet& pairs, int batch) {
    std::vector<double> out;
    out.reserve(pairs.size());
    PairBatch b;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch)) {
        b.clear();
        const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(batch));
        for (std::size_t i = start; i < end; ++i) pairs.append(i, b);
        Graph g;
        const auto& d = model.distances(g, b.states, b.commands).value();
        out.insert(out.end(), d.values().begin(), d.values().end());
    }
    return out;
}

double data_loss(const std::vector<double>& distances, const PairSet& pairs) {
    if (distances.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        const double r = distances[i] - pairs.label(i);
        s += r * r;
    }
    return s / static_cast<double>(distances.size());
}

double accuracy(const std::vector<double>& distances, const PairSet& pairs, double threshold) {
    if (distances.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < distances.size(); ++i)
        hits += classify(distances[i], threshold) == (pairs.label(i) == 0);
    return static_cast<double>(hits) / static_cast<double>(distances.size());
}

double evaluate_mem(MemModel& model, const PairSet& pairs, double threshold) {
    return accuracy(pair_distances(model, pairs), pairs, threshold);
}

ThresholdChoice best_threshold(const std::vector<double>& distances, const PairSet& pairs) {
    std::vector<std::size_t> order(distances.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
    // Sweep: everything strictly below the cut is called congruent.
    std::size_t incongruent_total = 0;
    for (std::size_t i = 0; i < distances.size(); ++i) incongruent_total += pairs.label(i) != 0;
    ThresholdChoice best{0.5, accuracy(distances, pairs, 0.5)};
    std::size_t congruent_below = 0, incongruent_below = 0;
    const double n = static_cast<double>(distances.size());
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        (pairs.label(order[k]) == 0 ? congruent_below : incongruent_below) += 1;
        const double lo = distances[order[k]], hi = distances[order[k + 1]];
        if (hi <= lo) continue;
        const double cut = 0.5 * (lo + hi);
        const double acc = static_cast<double>(congruent_below + (incongruent_total - incongruent_below)) / n;
        if (acc > best.accuracy || (acc == best.accuracy && std::abs(cut - 0.5) < std::abs(best.threshold - 0.5)))
            best = {cut, acc};
    }
    return best;
}

MemTrainResult train_mem(MemModel& model, const PairSet& train, const PairSet& val, const MemTrainConfig& config,
                         const std::function<void(const EpochStats&)>& on_epoch) {
    config.validate();
    if (train.size() == 0 || val.size() == 0) throw ConfigError("train_mem needs non-empty train and val splits");
    auto& store = model.params();
    model.command_encoder().freeze_words(store, config.freeze_words);
    const ad::AdamConfig adam{config.lr};
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    MemTrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    ad::ParamStore best = store;
    PairBatch batch;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            for (std::size_t i = start; i < end; ++i) train.append(order[i], batch);
            Graph g;
            const LossParts parts = loss_parts(model, g, batch, config.lambda);
            loss_sum += parts.loss.value().item() * static_cast<double>(end - start);
            const auto& d = parts.distances.value();
            for (std::size_t k = 0; k < d.size(); ++k) hits += classify(d[k], config.threshold) == (batch.labels[k] == 0.0);
            g.backward(parts.loss);
            ad::adam_step(store, adam);
        }
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(order.size());
        const double reg = config.lambda * store.sum_squares();
        const auto vd = pair_distances(model, val);
        st.val_loss = data_loss(vd, val) + reg;
        st.val_acc = accuracy(vd, val, config.threshold);
        st.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
        result.curves.push_back(st);
        if (st.val_loss < best_val) {
            best_val = st.val_loss;
            best = store;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(st);
    }
    if (config.early_stop && result.best_epoch > 0) store.copy_values_from(best);
    return result;
}

std::string curves_csv(const std::vector<EpochStats>& curves) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,train_loss,val_loss,train_acc,val_acc\n";
    for (const auto& c : curves)
        os << c.epoch << "," << c.train_loss << "," << c.val_loss << "," << c.train_acc << "," << c.val_acc << "\n";
    return os.str();
}

void save_mem(const std::string& path, const MemModel& model, const lang::Vocabulary& vocab,
              std::map<std::string, std::string> extra) {
    auto meta = model.config().to_metadata();
    meta["vocab"] = vocab.serialize();
    for (auto& [k, v] : extra) meta[k] = std::move(v);
    ad::save_checkpoint(path, model.params(), meta);
}

LoadedMem load_mem(const std::string& path) {
    ad::Checkpoint ck = ad::load_checkpoint(path);
    const MemConfig cfg = MemConfig::from_metadata(ck.metadata);
    MemModel model(cfg, 0);
    auto& store = model.params();
    if (store.size() != ck.params.size()) throw IoError("checkpoint does not match the MEM layout");
    for (int i = 0; i < store.size(); ++i) {
        const auto& src = ck.params.at(i);
        auto& dst = store.at(i);
        if (src.name != dst.name || src.value.shape() != dst.value.shape())
            throw IoError("checkpoint entry '" + src.name + "' does not match '" + dst.name + "'");
        dst.value = src.value;
        dst.trainable = src.trainable;
    }
    auto it = ck.metadata.find("vocab");
    if (it == ck.metadata.end()) throw IoError("checkpoint lacks a vocabulary");
    lang::Vocabulary vocab = lang::Vocabulary::deserialize(it->second);
    return {std::move(model), std::move(vocab), std::move(ck.metadata)};
}

}  // namespace groundrl::mem
