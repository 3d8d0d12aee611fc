#include "groundrl/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "groundrl/errors.hpp"

namespace groundrl::tsne {

void TsneConfig::validate(int n) const {
    if (n < 10) throw ConfigError("t-SNE needs at least 10 points, got " + std::to_string(n));
    if (!(perplexity > 0.0) || perplexity >= n / 3.0)
        throw ConfigError("perplexity " + std::to_string(perplexity) + " must be below N/3 = " + std::to_string(n / 3.0));
    if (iterations < 250) throw ConfigError("t-SNE needs at least 250 iterations");
    if (!(learning_rate > 0.0) || !(exaggeration >= 1.0)) throw ConfigError("bad t-SNE step settings");
}

RowCalibration calibrate_row(const std::vector<double>& d, double perplexity) {
    if (d.empty()) throw UsageError("calibration needs at least two points");
    const double target = std::log2(perplexity);
    const double dmin = *std::min_element(d.begin(), d.end());
    std::vector<double> p(d.size());

    auto entropy_at = [&](double beta) {
        double sum = 0.0, weighted = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            p[j] = std::exp(-(d[j] - dmin) * beta);
            sum += p[j];
            weighted += (d[j] - dmin) * p[j];
        }
        for (double& v : p) v /= sum;
        return (std::log(sum) + beta * weighted / sum) / std::log(2.0);
    };

    RowCalibration best;
    double best_gap = std::numeric_limits<double>::infinity();
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= 50; ++it) {
        const double h = entropy_at(beta);
        const double gap = h - target;
        if (std::abs(gap) < best_gap) {
            best_gap = std::abs(gap);
            best.sigma = std::sqrt(1.0 / (2.0 * beta));
            best.entropy_bits = h;
            best.probs = p;
        }
        best.iterations = it;
        if (std::abs(gap) < 1e-5) {
            best.converged = true;
            break;
        }
        if (gap > 0.0) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    return best;
}

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double t = a[k] - b[k];
        s += t * t;
    }
    return s;
}

}  // namespace

JointP joint_probabilities(const Points& x, double perplexity) {
    const int n = static_cast<int>(x.size());
    JointP out;
    out.n = n;
    out.p.assign(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> cond(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> row(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0, k = 0; j < n; ++j)
            if (j != i) row[static_cast<std::size_t>(k++)] = squared_distance(x[i], x[j]);
        const auto cal = calibrate_row(row, perplexity);
        if (!cal.converged) ++out.unconverged_rows;
        for (int j = 0, k = 0; j < n; ++j)
            if (j != i) cond[static_cast<std::size_t>(i) * n + j] = cal.probs[static_cast<std::size_t>(k++)];
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.p[static_cast<std::size_t>(i) * n + j] =
                (cond[static_cast<std::size_t>(i) * n + j] + cond[static_cast<std::size_t>(j) * n + i]) / (2.0 * n);
    return out;
}

TsneResult tsne_embed(const Points& x, const TsneConfig& config) {
    const int n = static_cast<int>(x.size());
    config.validate(n);
    const std::size_t dim = x[0].size();
    for (const auto& v : x)
        if (v.size() != dim) throw DimensionError("t-SNE inputs have differing dimensions");
    if (std::all_of(x.begin(), x.end(), [&](const auto& v) { return v == x[0]; }))
        throw UsageError("t-SNE inputs are all identical");

    // Points are processed in lexicographic order so the result does not
    // depend on the input order.
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    Points sorted;
    sorted.reserve(x.size());
    for (std::size_t i : order) sorted.push_back(x[i]);

    const JointP joint = joint_probabilities(sorted, config.perplexity);
    const auto& P = joint.p;
    double p_log_p = 0.0;
    for (double v : P)
        if (v > 0.0) p_log_p += v * std::log(v);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> init(0.0, 1e-4);
    std::vector<double> y(static_cast<std::size_t>(n) * 2), update(y.size(), 0.0), gains(y.size(), 1.0),
        grad(y.size());
    for (double& v : y) v = init(rng);
    std::vector<double> num(static_cast<std::size_t>(n) * n);

    TsneResult result;
    result.unconverged_rows = joint.unconverged_rows;
    result.kl.reserve(static_cast<std::size_t>(config.iterations));
    for (int it = 0; it < config.iterations; ++it) {
        const bool early = it < config.exaggeration_iterations;
        const double exag = early ? config.exaggeration : 1.0;
        const double momentum = early ? config.initial_momentum : config.final_momentum;

        double z = 0.0;
        for (int i = 0; i < n; ++i) {
            num[static_cast<std::size_t>(i) * n + i] = 0.0;
            for (int j = i + 1; j < n; ++j) {
                const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[static_cast<std::size_t>(i) * n + j] = q;
                num[static_cast<std::size_t>(j) * n + i] = q;
                z += 2.0 * q;
            }
        }
        double cross = 0.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                const double q = num[ij];
                const double m = (exag * P[ij] - q / z) * q;
                gx += m * (y[2 * i] - y[2 * j]);
                gy += m * (y[2 * i + 1] - y[2 * j + 1]);
                if (P[ij] > 0.0) cross += P[ij] * std::log(q / z);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        result.kl.push_back(p_log_p - cross);

        for (std::size_t k = 0; k < y.size(); ++k) {
            const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        double mx = 0.0, my = 0.0;
        for (int i = 0; i < n; ++i) {
            mx += y[2 * i];
            my += y[2 * i + 1];
        }
        mx /= n;
        my /= n;
        for (int i = 0; i < n; ++i) {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
    }
    result.coords.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) result.coords[order[static_cast<std::size_t>(i)]] = {y[2 * i], y[2 * i + 1]};
    return result;
}

Silhouette silhouette(const Points& coords, const std::vector<int>& labels, int num_labels) {
    if (coords.size() != labels.size()) throw DimensionError("coords and labels differ in length");
    Silhouette out;
    out.per_label.assign(static_cast<std::size_t>(num_labels), std::nullopt);
    std::vector<int> count(static_cast<std::size_t>(num_labels), 0);
    for (int l : labels) {
        if (l < 0 || l >= num_labels) throw DimensionError("label " + std::to_string(l) + " out of range");
        ++count[static_cast<std::size_t>(l)];
    }
    const int present = static_cast<int>(std::count_if(count.begin(), count.end(), [](int c) { return c > 0; }));
    if (present < 2) return out;

    std::vector<double> total(static_cast<std::size_t>(num_labels), 0.0);
    std::vector<int> used(static_cast<std::size_t>(num_labels), 0);
    std::vector<double> sums(static_cast<std::size_t>(num_labels));
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto li = static_cast<std::size_t>(labels[i]);
        if (count[li] < 2) continue;
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < coords.size(); ++j)
            if (j != i) sums[static_cast<std::size_t>(labels[j])] += std::sqrt(squared_distance(coords[i], coords[j]));
        const double a = sums[li] / (count[li] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < sums.size(); ++l)
            if (l != li && count[l] > 0) b = std::min(b, sums[l] / count[l]);
        const double denom = std::max(a, b);
        total[li] += denom > 0.0 ? (b - a) / denom : 0.0;
        ++used[li];
    }
    double mean = 0.0;
    int n = 0;
    for (std::size_t l = 0; l < total.size(); ++l) {
        if (used[l] == 0) continue;
        out.per_label[l] = total[l] / used[l];
        mean += *out.per_label[l];
        ++n;
    }
    if (n > 0) out.mean = mean / n;
    return out;
}

ClusterReport cluster_report(const Points& coords, const std::vector<int>& labels, int num_labels,
                             const Points& command_coords, const std::vector<int>& command_labels) {
    if (command_coords.size() != command_labels.size()) throw DimensionError("command coords and labels differ");
    ClusterReport r;
    r.silhouette = silhouette(coords, labels, num_labels);
    Points centroid(static_cast<std::size_t>(num_labels), std::vector<double>(2, 0.0));
    std::vector<int> count(static_cast<std::size_t>(num_labels), 0);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto l = static_cast<std::size_t>(labels[i]);
        centroid[l][0] += coords[i][0];
        centroid[l][1] += coords[i][1];
        ++count[l];
    }
    for (std::size_t l = 0; l < centroid.size(); ++l)
        if (count[l] > 0) {
            centroid[l][0] /= count[l];
            centroid[l][1] /= count[l];
        }
    r.command_label = command_labels;
    for (std::size_t c = 0; c < command_coords.size(); ++c) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < centroid.size(); ++l) {
            if (count[l] == 0) continue;
            const double d = squared_distance(command_coords[c], centroid[l]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(l);
            }
        }
        r.nearest_centroid.push_back(best);
        if (best == command_labels[c]) ++r.matches;
    }
    return r;
}

std::string report_text(const ClusterReport& r, const std::vector<std::string>& names) {
    auto name = [&](int l) { return l >= 0 && l < static_cast<int>(names.size()) ? names[l] : std::to_string(l); };
    std::ostringstream out;
    out << "silhouette\n";
    for (std::size_t l = 0; l < r.silhouette.per_label.size(); ++l) {
        out << "  " << name(static_cast<int>(l)) << ' ';
        if (r.silhouette.per_label[l]) out << *r.silhouette.per_label[l] << '\n';
        else out << "n/a\n";
    }
    out << "  mean ";
    if (r.silhouette.mean) out << *r.silhouette.mean << '\n';
    else out << "n/a\n";
    out << "commands\n";
    for (std::size_t c = 0; c < r.command_label.size(); ++c)
        out << "  " << name(r.command_label[c]) << " -> " << (r.nearest_centroid[c] < 0 ? "none" : name(r.nearest_centroid[c]))
            << (r.nearest_centroid[c] == r.command_label[c] ? " match\n" : " miss\n");
    out << "matches " << r.matches << '/' << r.command_label.size() << '\n';
    return out.str();
}

std::vector<std::size_t> stratified_sample(const std::vector<int>& labels, int num_labels, int per_label,
                                           std::uint64_t seed, std::size_t max_total) {
    if (per_label < 1 || num_labels < 1) throw ConfigError("sample sizes must be positive");
    per_label = std::min<int>(per_label, static_cast<int>(max_total / static_cast<std::size_t>(num_labels)));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> out;
    for (int l = 0; l < num_labels; ++l) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == l) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        if (idx.size() > static_cast<std::size_t>(per_label)) idx.resize(static_cast<std::size_t>(per_label));
        std::sort(idx.begin(), idx.end());
        out.insert(out.end(), idx.begin(), idx.end());
    }
    return out;
}

std::string coords_csv(const Points& coords, const std::vector<int>& labels, const std::vector<std::string>& kinds) {
    std::ostringstream out;
    out.precision(10);
    out << "x,y,label,kind\n";
    for (std::size_t i = 0; i < coords.size(); ++i)
        out << coords[i][0] << ',' << coords[i][1] << ',' << labels[i] << ',' << (i < kinds.size() ? kinds[i] : "state")
            << '\n';
    return out.str();
}

}  // namespace groundrl::tsne
