#pragma once

// Exact O(N²) t-SNE plus cluster statistics over the 2-D projection.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace groundrl::tsne {

struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    int exaggeration_iterations = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::uint64_t seed = 1;

    // Throws ConfigError; n is the number of points.
    void validate(int n) const;
};

struct RowCalibration {
    double sigma = 0.0;
    double entropy_bits = 0.0;
    std::vector<double> probs;
    int iterations = 0;
    bool converged = false;
};

// Binary search on the Gaussian precision so the row's Shannon entropy equals
// log2(perplexity) within 1e-5, in at most 50 steps. squared_distances
// excludes the point itself. On non-convergence the best sigma is returned
// with converged = false.
RowCalibration calibrate_row(const std::vector<double>& squared_distances, double perplexity);

using Points = std::vector<std::vector<double>>;

// Symmetrized joint probabilities, row-major N×N with a zero diagonal.
struct JointP {
    int n = 0;
    std::vector<double> p;
    int unconverged_rows = 0;
};
JointP joint_probabilities(const Points& x, double perplexity);

struct TsneResult {
    Points coords;                // N×2
    std::vector<double> kl;       // KL(P‖Q) after every iteration, true P
    int unconverged_rows = 0;
};

// Throws ConfigError on too few points or too high a perplexity and
// UsageError on all-identical inputs.
TsneResult tsne_embed(const Points& x, const TsneConfig& config);

// Mean silhouette per label (nullopt for a label with one member or when only
// one label exists).
struct Silhouette {
    std::vector<std::optional<double>> per_label;
    std::optional<double> mean;
};
Silhouette silhouette(const Points& coords, const std::vector<int>& labels, int num_labels);

struct ClusterReport {
    Silhouette silhouette;
    std::vector<int> command_label;       // label of each command
    std::vector<int> nearest_centroid;    // -1 when no centroid exists
    int matches = 0;
};
ClusterReport cluster_report(const Points& coords, const std::vector<int>& labels, int num_labels,
                             const Points& command_coords, const std::vector<int>& command_labels);
std::string report_text(const ClusterReport& report, const std::vector<std::string>& label_names);

// Up to per_label indices of each label, seeded; at most max_total overall.
std::vector<std::size_t> stratified_sample(const std::vector<int>& labels, int num_labels, int per_label,
                                           std::uint64_t seed, std::size_t max_total = 2500);

// x,y,label,kind rows.
std::string coords_csv(const Points& coords, const std::vector<int>& labels, const std::vector<std::string>& kinds);

}  // namespace groundrl::tsne
