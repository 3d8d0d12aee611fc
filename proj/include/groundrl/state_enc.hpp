#pragma once

// State encoder over a two-frame stack: a conv branch for the screen layers,
// an identically shaped branch for the coarse minimap layers, and a dense
// branch for the non-spatial features, fused into one embedding.

#include <random>
#include <string>
#include <vector>

#include "groundrl/env.hpp"
#include "groundrl/layers.hpp"

namespace groundrl::state_enc {

inline constexpr int kStack = 2;
inline constexpr int kScreenChannels = kStack * env::kScreenLayers;
inline constexpr int kMinimapChannels = kStack * env::kMinimapLayers;
inline constexpr int kNonSpatialInputs = kStack * env::kNonSpatial;

struct StateEncoderConfig {
    int grid_size = 64;
    int conv1_channels = 16;
    int conv2_channels = 32;
    int nonspatial_hidden = 64;
    int embed_dim = 256;
};

// A batch of (t-1, t) observation pairs laid out as encoder inputs. Frame t-1
// channels precede frame t channels in every branch.
struct StateBatch {
    int size = 0;
    int grid_size = 0;
    std::vector<double> screen;
    std::vector<double> minimap;
    std::vector<double> nonspatial;

    // Throws DimensionError when the frames disagree in shape with each other
    // or with earlier entries.
    void add(const env::Observation& prev, const env::Observation& cur);
    void clear();
};

class StateEncoder {
public:
    StateEncoder() = default;
    StateEncoder(ad::ParamStore& store, const std::string& prefix, const StateEncoderConfig& config,
                 std::mt19937_64& rng);

    ad::Var operator()(ad::ParamStore& store, ad::Graph& g, const StateBatch& batch) const;
    const StateEncoderConfig& config() const { return config_; }
    int flat_features() const;

private:
    StateEncoderConfig config_;
    ad::Conv2d screen1_, screen2_, mini1_, mini2_;
    ad::Dense nonspatial_, fusion_;
};

}  // namespace groundrl::state_enc
