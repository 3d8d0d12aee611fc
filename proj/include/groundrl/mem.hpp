#pragma once

// Mutual-embedding model: a state encoder and a command encoder trained so
// that congruent (state, command) pairs land close together and incongruent
// ones about unit distance apart.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "groundrl/dataset.hpp"
#include "groundrl/lang.hpp"
#include "groundrl/state_enc.hpp"

namespace groundrl::mem {

struct MemConfig {
    int vocab_size = 0;
    int word_dim = 128;
    int embed_dim = 256;
    state_enc::StateEncoderConfig state;

    std::map<std::string, std::string> to_metadata() const;
    static MemConfig from_metadata(const std::map<std::string, std::string>& meta);
};

class MemModel {
public:
    MemModel(const MemConfig& config, std::uint64_t seed);

    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }
    const MemConfig& config() const { return config_; }
    lang::CommandEncoder& command_encoder() { return command_; }
    const state_enc::StateEncoder& state_encoder() const { return state_; }

    ad::Var state_embedding(ad::Graph& g, const state_enc::StateBatch& states);
    ad::Var command_embedding(ad::Graph& g, std::span<const std::vector<int>> commands);
    // Row-wise ||X_s - X_c||; repeated commands are encoded once.
    ad::Var distances(ad::Graph& g, const state_enc::StateBatch& states, std::span<const std::vector<int>> commands);

private:
    MemConfig config_;
    ad::ParamStore store_;
    lang::CommandEncoder command_;
    state_enc::StateEncoder state_;
};

struct PairBatch {
    state_enc::StateBatch states;
    std::vector<std::vector<int>> commands;
    std::vector<double> labels;

    void clear();
    int size() const { return states.size; }
};

// Mean squared residual between distance and label, plus lambda * ||θ||² over
// trainable parameters. Throws UsageError on an empty batch.
ad::Var mem_loss(MemModel& model, ad::Graph& g, const PairBatch& batch, double lambda);

// Congruent iff d < threshold.
inline bool classify(double d, double threshold = 0.5) { return d < threshold; }

// Random-access source of labeled pairs.
class PairSet {
public:
    virtual ~PairSet() = default;
    virtual std::size_t size() const = 0;
    virtual int label(std::size_t i) const = 0;
    virtual void append(std::size_t i, PairBatch& batch) const = 0;
};

// Pairs drawn from dataset records; observations are rendered on demand.
class RecordPairs : public PairSet {
public:
    RecordPairs(const dataset::Dataset& data, std::vector<const dataset::LabeledPair*> records)
        : data_(data), records_(std::move(records)) {}
    std::size_t size() const override { return records_.size(); }
    int label(std::size_t i) const override { return records_[i]->y; }
    void append(std::size_t i, PairBatch& batch) const override;
    const dataset::LabeledPair& record(std::size_t i) const { return *records_[i]; }

private:
    const dataset::Dataset& data_;
    std::vector<const dataset::LabeledPair*> records_;
};

struct ObservationPair {
    env::Observation prev;
    env::Observation cur;
    std::vector<int> command;
    int y = 0;
};

class ObservationPairs : public PairSet {
public:
    explicit ObservationPairs(std::vector<ObservationPair> pairs) : pairs_(std::move(pairs)) {}
    std::size_t size() const override { return pairs_.size(); }
    int label(std::size_t i) const override { return pairs_[i].y; }
    void append(std::size_t i, PairBatch& batch) const override;

private:
    std::vector<ObservationPair> pairs_;
};

struct MemTrainConfig {
    double lr = 5e-4;
    int batch = 32;
    int epochs = 20;
    double lambda = 2.5e-3;
    double threshold = 0.5;
    std::uint64_t seed = 1;
    bool early_stop = true;
    bool freeze_words = false;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct MemTrainResult {
    std::vector<EpochStats> curves;
    int best_epoch = 0;
};

// Shuffled mini-batch Adam. With early stopping the parameters of the epoch
// with the lowest validation loss are restored at the end. Train statistics
// are accumulated over the epoch's batches before each update.
MemTrainResult train_mem(MemModel& model, const PairSet& train, const PairSet& val, const MemTrainConfig& config,
                         const std::function<void(const EpochStats&)>& on_epoch = {});

std::vector<double> pair_distances(MemModel& model, const PairSet& pairs, int batch = 256);
// Mean data term of the loss (no regularizer) over a set.
double data_loss(const std::vector<double>& distances, const PairSet& pairs);
double accuracy(const std::vector<double>& distances, const PairSet& pairs, double threshold);
double evaluate_mem(MemModel& model, const PairSet& pairs, double threshold = 0.5);

struct ThresholdChoice {
    double threshold = 0.5;
    double accuracy = 0.0;
};
// Threshold maximizing accuracy on the given distances (midpoints between
// consecutive sorted distances); ties keep the one closest to 0.5.
ThresholdChoice best_threshold(const std::vector<double>& distances, const PairSet& pairs);

std::string curves_csv(const std::vector<EpochStats>& curves);

void save_mem(const std::string& path, const MemModel& model, const lang::Vocabulary& vocab,
              std::map<std::string, std::string> extra = {});
struct LoadedMem {
    MemModel model;
    lang::Vocabulary vocab;
    std::map<std::string, std::string> metadata;
};
LoadedMem load_mem(const std::string& path);

}  // namespace groundrl::mem
