#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "groundrl/tensor.hpp"

namespace groundrl::ad {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    bool trainable = true;
};

// Named parameters θ with same-shaped gradient slots and Adam moments.
// Copying a store yields an independent snapshot (used for worker-local params).
class ParamStore {
public:
    int add(std::string name, Tensor init, bool trainable = true);

    bool contains(std::string_view name) const;
    int index(std::string_view name) const;
    Param& at(int i) { return params_.at(static_cast<std::size_t>(i)); }
    const Param& at(int i) const { return params_.at(static_cast<std::size_t>(i)); }
    Param& operator[](std::string_view name) { return at(index(name)); }
    const Param& operator[](std::string_view name) const { return at(index(name)); }

    int size() const { return static_cast<int>(params_.size()); }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }

    std::size_t parameter_count() const;
    void zero_grad();
    // Sum of squares over trainable parameters (the ||θ||² regularizer).
    double sum_squares() const;
    // Marks every parameter whose name starts with `prefix`.
    void set_trainable(std::string_view prefix, bool trainable);

    // Copies values (not gradients or moments) from a store with the same layout.
    void copy_values_from(const ParamStore& other);
    // Adds other's gradients into ours, in parameter order.
    void accumulate_grads_from(const ParamStore& other);

    std::uint64_t update_count() const { return updates_; }
    void bump_update_count() { ++updates_; }
    // Relaxed atomic increment for unsynchronized updates; returns the new count.
    std::uint64_t bump_update_count_relaxed();
    void set_update_count(std::uint64_t n) { updates_ = n; }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> by_name_;
    std::uint64_t updates_ = 0;
};

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
Tensor init_uniform(Shape shape, int fan_in, std::mt19937_64& rng);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam on every trainable parameter, then zeroes gradients.
void adam_step(ParamStore& params, const AdamConfig& config);

// Applies an Adam update to `shared` using gradients held in `local`, with
// per-element relaxed atomic loads/stores and no lock. Concurrent callers may
// interleave arbitrarily; individual elements are never torn, but a parameter
// tensor can mix contributions from different workers (Hogwild semantics).
void adam_step_unsynchronized(ParamStore& shared, ParamStore& local, const AdamConfig& config);
// Relaxed-atomic snapshot of shared values into local.
void snapshot_unsynchronized(const ParamStore& shared, ParamStore& local);

// Named-tensor container: magic, version, entry count, then per entry
// (name, dtype, rank, dims, payload) with little-endian payloads.
// dtype 0 = float64 tensor, dtype 1 = UTF-8 string (stored as metadata).
struct Checkpoint {
    ParamStore params;
    std::map<std::string, std::string> metadata;
};

void write_checkpoint(std::ostream& out, const ParamStore& params,
                      const std::map<std::string, std::string>& metadata = {});
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::map<std::string, std::string>& metadata = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace groundrl::ad
