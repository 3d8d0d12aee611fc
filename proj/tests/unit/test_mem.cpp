#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "groundrl/errors.hpp"
#include "groundrl/mem.hpp"

using namespace groundrl;
using namespace groundrl::mem;

namespace {

MemConfig small_config(int vocab = 12) {
    MemConfig c;
    c.vocab_size = vocab;
    c.word_dim = 6;
    c.embed_dim = 8;
    c.state.grid_size = 8;
    c.state.conv1_channels = 2;
    c.state.conv2_channels = 3;
    c.state.nonspatial_hidden = 4;
    return c;
}

env::Observation noisy(int cls, std::mt19937_64& rng) {
    env::Observation o;
    o.grid_size = 8;
    o.spatial.assign(static_cast<std::size_t>(env::kSpatialLayers * 64), 0.0);
    std::uniform_real_distribution<double> u(0.0, 0.05);
    for (double& v : o.spatial) v = u(rng);
    for (int i = 0; i < 64; ++i) o.spatial[static_cast<std::size_t>((cls == 0 ? 3 : 5) * 64 + i)] = 1.0;
    o.nonspatial[static_cast<std::size_t>(cls)] = 1.0;
    return o;
}

// Forces X_s to a chosen offset from the command embedding by zeroing the
// fusion weights and writing the bias.
void pin_state_embedding(MemModel& m, const std::vector<int>& cmd, const std::vector<double>& offset) {
    ad::Graph g;
    const std::vector<std::vector<int>> one{cmd};
    const auto xc = m.command_embedding(g, one).value();
    m.params()["state.fusion.weight"].value.fill(0.0);
    auto& b = m.params()["state.fusion.bias"].value;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = xc[j] + offset[j];
}

PairBatch single(const std::vector<int>& cmd, double y) {
    PairBatch b;
    const env::Observation o = env::reset(env::EnvConfig{.grid_size = 8}, 0);
    b.states.add(o, o);
    b.commands.push_back(cmd);
    b.labels.push_back(y);
    return b;
}

double loss_value(MemModel& m, const PairBatch& b, double lambda) {
    ad::Graph g;
    return mem_loss(m, g, b, lambda).value().item();
}

class FixedPairs : public PairSet {
public:
    explicit FixedPairs(std::vector<int> labels) : labels_(std::move(labels)) {}
    std::size_t size() const override { return labels_.size(); }
    int label(std::size_t i) const override { return labels_[i]; }
    void append(std::size_t, PairBatch&) const override {}

private:
    std::vector<int> labels_;
};

ObservationPairs toy_pairs(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<ObservationPair> pairs;
    for (int s = 0; s < 10; ++s) {
        const int cls = s % 2;
        const auto obs = noisy(cls, rng);
        for (int c = 0; c < 2; ++c) pairs.push_back({obs, obs, {c == 0 ? 2 : 3, 4}, cls == c ? 0 : 1});
    }
    return ObservationPairs(std::move(pairs));
}

}  // namespace

TEST_CASE("distance is zero for pinned-equal embeddings and two for opposite unit offsets") {
    MemModel m(small_config(), 1);
    const std::vector<int> cmd{2, 3};
    pin_state_embedding(m, cmd, std::vector<double>(8, 0.0));
    ad::Graph g;
    auto b = single(cmd, 0);
    CHECK(m.distances(g, b.states, b.commands).value()[0] == 0.0);

    std::vector<double> off(8, 0.0);
    off[0] = 2.0;
    pin_state_embedding(m, cmd, off);
    ad::Graph g2;
    const double d = m.distances(g2, b.states, b.commands).value()[0];
    CHECK(d == doctest::Approx(2.0).epsilon(1e-12));
    ad::Graph g3;
    CHECK(m.distances(g3, b.states, b.commands).value()[0] == d);
}

TEST_CASE("loss identities") {
    MemModel m(small_config(), 2);
    const std::vector<int> cmd{5};
    pin_state_embedding(m, cmd, std::vector<double>(8, 0.0));
    CHECK(std::abs(loss_value(m, single(cmd, 0), 0.0)) < 1e-12);

    std::vector<double> off(8, 0.0);
    off[3] = 1.0;
    pin_state_embedding(m, cmd, off);
    CHECK(std::abs(loss_value(m, single(cmd, 1), 0.0)) < 1e-12);

    off[3] = 0.5;
    pin_state_embedding(m, cmd, off);
    CHECK(std::abs(loss_value(m, single(cmd, 0), 0.0) - 0.25) < 1e-12);

    const double lambda = 2.5e-3;
    CHECK(std::abs(loss_value(m, single(cmd, 0), lambda) -
                   (loss_value(m, single(cmd, 0), 0.0) + lambda * m.params().sum_squares())) < 1e-9);
    CHECK_THROWS_AS(loss_value(m, PairBatch{}, 0.0), UsageError);
}

TEST_CASE("mem loss passes grad_check on random two-sample batches") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        MemModel m(small_config(), seed);
        std::mt19937_64 rng(seed);
        PairBatch b;
        b.states.add(noisy(0, rng), noisy(1, rng));
        b.states.add(noisy(1, rng), noisy(0, rng));
        b.commands = {{2, 3, 4}, {5}};
        b.labels = {0.0, 1.0};
        const double err = ad::grad_check([&](ad::Graph& g) { return mem_loss(m, g, b, 2.5e-3); }, m.params(), 1e-5);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("classification threshold is strict and monotone") {
    CHECK(classify(0.49));
    CHECK_FALSE(classify(0.5));
    CHECK_FALSE(classify(2.0));
    for (double d1 = 0.0; d1 < 1.0; d1 += 0.05)
        for (double d2 = d1; d2 < 1.0; d2 += 0.05)
            if (classify(d2)) CHECK(classify(d1));
}

TEST_CASE("accuracy examples") {
    const std::vector<double> d{0.1, 0.2, 0.3};
    CHECK(accuracy(d, FixedPairs({0, 0, 0}), 0.5) == 1.0);
    CHECK(accuracy(d, FixedPairs({1, 1, 1}), 0.5) == 0.0);
    const auto t = best_threshold({0.1, 0.2, 0.6, 0.9}, FixedPairs({0, 0, 1, 1}));
    CHECK(t.accuracy == 1.0);
    CHECK((t.threshold > 0.2 && t.threshold < 0.6));
}

TEST_CASE("random parameters are near chance on a balanced set") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        MemConfig cfg;
        cfg.vocab_size = 12;
        cfg.state.grid_size = 8;
        MemModel m(cfg, seed + 100);
        const auto pairs = toy_pairs(seed);
        const double acc = evaluate_mem(m, pairs);
        INFO("seed " << seed << " acc " << acc);
        CHECK((acc >= 0.3 && acc <= 0.7));
    }
}

TEST_CASE("separable toy set is learned perfectly") {
    MemModel m(small_config(), 7);
    const auto train = toy_pairs(1), val = toy_pairs(2);
    MemTrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.batch = 4;
    cfg.lambda = 0.0;
    const auto result = train_mem(m, train, val, cfg);
    CHECK(result.curves.size() == 20u);
    CHECK(evaluate_mem(m, train) == 1.0);
}

TEST_CASE("training is deterministic per seed") {
    auto run = [] {
        MemModel m(small_config(), 3);
        MemTrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch = 5;
        return curves_csv(train_mem(m, toy_pairs(1), toy_pairs(2), cfg).curves);
    };
    CHECK(run() == run());
}

TEST_CASE("congruent-only training pulls distances toward zero") {
    MemModel m(small_config(), 4);
    std::mt19937_64 rng(3);
    std::vector<ObservationPair> pairs;
    for (int s = 0; s < 16; ++s) {
        const auto o = noisy(s % 2, rng);
        pairs.push_back({o, o, {2 + s % 2}, 0});
    }
    const ObservationPairs set(pairs);
    MemTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.early_stop = false;
    auto mean_d = [&] {
        const auto d = pair_distances(m, set);
        double s = 0.0;
        for (double v : d) s += v;
        return s / static_cast<double>(d.size());
    };
    double prev = mean_d();
    for (int epoch = 0; epoch < 5; ++epoch) {
        cfg.seed = static_cast<std::uint64_t>(epoch);
        train_mem(m, set, set, cfg);
        const double now = mean_d();
        CHECK(now <= prev + 1e-3);
        prev = now;
    }
}

TEST_CASE("empty splits are a configuration error") {
    MemModel m(small_config(), 1);
    CHECK_THROWS_AS(train_mem(m, ObservationPairs({}), toy_pairs(1), {}), ConfigError);
}

TEST_CASE("checkpoint round-trips the model bit-exactly") {
    const auto vocab = lang::standard_vocabulary();
    MemModel m(small_config(vocab.size()), 9);
    const std::string path = "test_mem_roundtrip.ckpt";
    save_mem(path, m, vocab);
    const auto loaded = load_mem(path);
    std::remove(path.c_str());
    REQUIRE(loaded.model.params().size() == m.params().size());
    for (int i = 0; i < m.params().size(); ++i) CHECK(loaded.model.params().at(i).value == m.params().at(i).value);
    CHECK(loaded.vocab.tokens() == vocab.tokens());
    CHECK_THROWS_AS(load_mem("does-not-exist.ckpt"), MissingArtifactError);
}
