#include "groundrl/params.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "groundrl/errors.hpp"

namespace groundrl::ad {

int ParamStore::add(std::string name, Tensor init, bool trainable) {
    if (by_name_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Param p;
    p.grad = Tensor(init.shape());
    p.adam_m = Tensor(init.shape());
    p.adam_v = Tensor(init.shape());
    p.value = std::move(init);
    p.name = name;
    p.trainable = trainable;
    const int idx = static_cast<int>(params_.size());
    by_name_.emplace(std::move(name), idx);
    params_.push_back(std::move(p));
    return idx;
}

bool ParamStore::contains(std::string_view name) const { return by_name_.contains(std::string(name)); }

int ParamStore::index(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

double ParamStore::sum_squares() const {
    double s = 0.0;
    for (const auto& p : params_) {
        if (!p.trainable) continue;
        for (double v : p.value.values()) s += v * v;
    }
    return s;
}

void ParamStore::set_trainable(std::string_view prefix, bool trainable) {
    for (auto& p : params_)
        if (p.name.starts_with(prefix)) p.trainable = trainable;
}

void ParamStore::copy_values_from(const ParamStore& other) {
    if (other.params_.size() != params_.size()) throw DimensionError("parameter store layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].value.shape() != other.params_[i].value.shape())
            throw DimensionError("parameter '" + params_[i].name + "' shape " + shape_str(params_[i].value.shape()) +
                                 " vs " + shape_str(other.params_[i].value.shape()));
        params_[i].value.storage() = other.params_[i].value.storage();
    }
}

void ParamStore::accumulate_grads_from(const ParamStore& other) {
    if (other.params_.size() != params_.size()) throw DimensionError("parameter store layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& dst = params_[i].grad.storage();
        const auto& src = other.params_[i].grad.storage();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

std::uint64_t ParamStore::bump_update_count_relaxed() {
    return std::atomic_ref<std::uint64_t>(updates_).fetch_add(1, std::memory_order_relaxed) + 1;
}

Tensor init_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(1.0 / std::max(1, fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

void adam_step(ParamStore& params, const AdamConfig& c) {
    params.bump_update_count();
    const double t = static_cast<double>(params.update_count());
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double corr2 = 1.0 - std::pow(c.beta2, t);
    for (auto& p : params.params()) {
        if (p.trainable) {
            double* w = p.value.data();
            double* g = p.grad.data();
            double* m = p.adam_m.data();
            double* v = p.adam_v.data();
            const std::size_t n = p.value.size();
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                const double mhat = m[i] / corr1;
                const double vhat = v[i] / corr2;
                w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
            }
        }
        p.grad.fill(0.0);
    }
}

void adam_step_unsynchronized(ParamStore& shared, ParamStore& local, const AdamConfig& c) {
    const double t = static_cast<double>(shared.bump_update_count_relaxed());
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double corr2 = 1.0 - std::pow(c.beta2, t);
    for (int k = 0; k < shared.size(); ++k) {
        Param& p = shared.at(k);
        Param& lp = local.at(k);
        if (p.trainable) {
            const std::size_t n = p.value.size();
            for (std::size_t i = 0; i < n; ++i) {
                std::atomic_ref<double> w(p.value[i]);
                std::atomic_ref<double> m(p.adam_m[i]);
                std::atomic_ref<double> v(p.adam_v[i]);
                const double g = lp.grad[i];
                const double mi = c.beta1 * m.load(std::memory_order_relaxed) + (1.0 - c.beta1) * g;
                const double vi = c.beta2 * v.load(std::memory_order_relaxed) + (1.0 - c.beta2) * g * g;
                m.store(mi, std::memory_order_relaxed);
                v.store(vi, std::memory_order_relaxed);
                const double step = c.lr * (mi / corr1) / (std::sqrt(vi / corr2) + c.eps);
                w.store(w.load(std::memory_order_relaxed) - step, std::memory_order_relaxed);
            }
        }
        lp.grad.fill(0.0);
    }
}

void snapshot_unsynchronized(const ParamStore& shared, ParamStore& local) {
    for (int k = 0; k < shared.size(); ++k) {
        auto& src = const_cast<Tensor&>(shared.at(k).value);
        auto& dst = local.at(k).value;
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i] = std::atomic_ref<double>(src[i]).load(std::memory_order_relaxed);
    }
}

namespace {

constexpr char kMagic[8] = {'G', 'R', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("truncated checkpoint string");
    return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamStore& params,
                      const std::map<std::string, std::string>& metadata) {
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + metadata.size()));
    for (const auto& p : params.params()) {
        put_string(out, p.name);
        put<std::uint8_t>(out, 0);
        put<std::uint8_t>(out, p.trainable ? 1 : 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (int d : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : p.value.values()) put<double>(out, v);
    }
    for (const auto& [key, value] : metadata) {
        put_string(out, key);
        put<std::uint8_t>(out, 1);
        put<std::uint8_t>(out, 0);
        put<std::uint32_t>(out, 1);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(value.size()));
        out.write(value.data(), static_cast<std::streamsize>(value.size()));
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto count = get<std::uint32_t>(in);
    Checkpoint ck;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::string name = get_string(in);
        const auto dtype = get<std::uint8_t>(in);
        const auto trainable = get<std::uint8_t>(in);
        const auto rank = get<std::uint32_t>(in);
        if (rank > 4) throw IoError("checkpoint entry '" + name + "' has rank > 4");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get<std::uint32_t>(in)));
        if (dtype == 0) {
            std::vector<double> values(shape_size(shape));
            for (double& v : values) v = get<double>(in);
            ck.params.add(std::move(name), Tensor(std::move(shape), std::move(values)), trainable != 0);
        } else if (dtype == 1) {
            std::string value(shape_size(shape), '\0');
            in.read(value.data(), static_cast<std::streamsize>(value.size()));
            if (!in) throw IoError("truncated checkpoint metadata");
            ck.metadata.emplace(std::move(name), std::move(value));
        } else {
            throw IoError("unknown checkpoint dtype " + std::to_string(dtype));
        }
    }
    return ck;
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::map<std::string, std::string>& metadata) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_checkpoint(out, params, metadata);
    if (!out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open checkpoint " + path);
    return read_checkpoint(in);
}

}  // namespace groundrl::ad
