#include "groundrl/state_enc.hpp"

#include "groundrl/errors.hpp"

namespace groundrl::state_enc {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void StateBatch::add(const env::Observation& prev, const env::Observation& cur) {
    const int g = cur.grid_size;
    const std::size_t plane = static_cast<std::size_t>(g) * static_cast<std::size_t>(g);
    if (prev.grid_size != g || prev.spatial.size() != cur.spatial.size() ||
        cur.spatial.size() != plane * env::kSpatialLayers)
        throw DimensionError("stack frames disagree: grid " + std::to_string(prev.grid_size) + " vs " +
                             std::to_string(g));
    if (size > 0 && g != grid_size)
        throw DimensionError("batch grid " + std::to_string(grid_size) + " vs frame grid " + std::to_string(g));
    grid_size = g;
    const std::size_t screen_len = plane * env::kScreenLayers;
    for (const auto* f : {&prev, &cur}) {
        screen.insert(screen.end(), f->spatial.begin(), f->spatial.begin() + static_cast<std::ptrdiff_t>(screen_len));
        minimap.insert(minimap.end(), f->spatial.begin() + static_cast<std::ptrdiff_t>(screen_len), f->spatial.end());
    }
    nonspatial.insert(nonspatial.end(), prev.nonspatial.begin(), prev.nonspatial.end());
    nonspatial.insert(nonspatial.end(), cur.nonspatial.begin(), cur.nonspatial.end());
    ++size;
}

void StateBatch::clear() {
    size = 0;
    screen.clear();
    minimap.clear();
    nonspatial.clear();
}

StateEncoder::StateEncoder(ad::ParamStore& store, const std::string& prefix, const StateEncoderConfig& config,
                           std::mt19937_64& rng)
    : config_(config) {
    if (config.grid_size < 4 || config.conv1_channels < 1 || config.conv2_channels < 1 ||
        config.nonspatial_hidden < 1 || config.embed_dim < 1)
        throw ConfigError("invalid state encoder configuration");
    const int c1 = config.conv1_channels, c2 = config.conv2_channels;
    screen1_ = ad::Conv2d(store, prefix + ".screen1", kScreenChannels, c1, 5, 2, 2, rng);
    screen2_ = ad::Conv2d(store, prefix + ".screen2", c1, c2, 3, 2, 1, rng);
    mini1_ = ad::Conv2d(store, prefix + ".minimap1", kMinimapChannels, c1, 5, 2, 2, rng);
    mini2_ = ad::Conv2d(store, prefix + ".minimap2", c1, c2, 3, 2, 1, rng);
    nonspatial_ = ad::Dense(store, prefix + ".nonspatial", kNonSpatialInputs, config.nonspatial_hidden, rng);
    fusion_ = ad::Dense(store, prefix + ".fusion", flat_features(), config.embed_dim, rng);
}

int StateEncoder::flat_features() const {
    const int side = screen2_.output_side(screen1_.output_side(config_.grid_size));
    return 2 * config_.conv2_channels * side * side + config_.nonspatial_hidden;
}

Var StateEncoder::operator()(ad::ParamStore& store, ad::Graph& g, const StateBatch& batch) const {
    if (batch.size == 0) throw UsageError("empty state batch");
    if (batch.grid_size != config_.grid_size)
        throw DimensionError("state grid " + std::to_string(batch.grid_size) + " but encoder expects " +
                             std::to_string(config_.grid_size));
    const int b = batch.size, n = batch.grid_size;
    Var screen = g.constant(Tensor(Shape{b, kScreenChannels, n, n}, batch.screen));
    Var minimap = g.constant(Tensor(Shape{b, kMinimapChannels, n, n}, batch.minimap));
    Var scalars = g.constant(Tensor(Shape{b, kNonSpatialInputs}, batch.nonspatial));
    Var s = flatten(relu(screen2_(store, relu(screen1_(store, screen)))));
    Var m = flatten(relu(mini2_(store, relu(mini1_(store, minimap)))));
    Var v = relu(nonspatial_(store, scalars));
    const Var parts[] = {s, m, v};
    return fusion_(store, concat(parts));
}

}  // namespace groundrl::state_enc
