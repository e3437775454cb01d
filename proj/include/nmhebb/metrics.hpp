#pragma once

// Evaluation: Top-1, k-means NMI over embeddings, high-activation fraction,
// the kernel speckle classifier, class distance statistics and PCA.
// Everything here is a pure function of its inputs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmhebb/errors.hpp"
#include "nmhebb/tensor.hpp"

namespace nmhebb {

struct EmbeddingSet {
    Tensor<double> matrix;  // [M, D]
    std::vector<int> labels;
    std::string source;  // "phase1", "phase2", "baseline", ...

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return matrix.dim(1); }
    // Row count matches labels, values finite, labels nonnegative.
    void validate() const;
};

template <typename T>
EmbeddingSet make_embeddings(const Tensor<T>& matrix, std::vector<int> labels, std::string source);

// Row argmax, ties to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);
template <typename T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels);

struct KMeansResult {
    std::vector<int> assignment;
    Tensor<double> centroids;  // [k, D]
    double inertia = 0;
    std::size_t best_restart = 0;
};

// k-means++ seeding, Lloyd iterations to a fixed point (or max_iter); the
// restart with the lowest inertia wins (earliest on ties). Restart r uses
// the sub-seed (seed, r).
KMeansResult kmeans(const Tensor<double>& x, std::size_t k, std::uint64_t seed = 0, std::size_t restarts = 10,
                    std::size_t max_iter = 300);

// I(U;V) / ((H(U)+H(V))/2) in nats. Two single-block partitions count as
// identical (1.0).
double nmi_partitions(std::span<const int> a, std::span<const int> b);
// k-means with k = num_classes, then NMI of the clustering against labels.
double nmi(const EmbeddingSet& e, std::size_t num_classes, std::uint64_t seed = 0);

struct HafResult {
    std::vector<double> haf;  // per filter
    std::vector<bool> dead;   // max response 0: haf pinned to 1
    double mean = 0;
};

// [N,F,H,W] feature maps -> [N,F] spatial maxima.
template <typename T>
Tensor<double> spatial_max(const Tensor<T>& maps);
// responses [N,F]: fraction of images whose response reaches tau * max.
HafResult haf(const Tensor<double>& responses, double tau = 0.8);

struct KernelSpectrum {
    double hf_fraction = 0;       // power beyond half the maximum radius
    double orient_resultant = 0;  // doubled-angle resultant length
    bool speckle = false;
    bool degenerate = false;  // constant kernel
};

constexpr double kSpeckleHfThreshold = 0.60;
constexpr double kSpeckleResultantThreshold = 0.20;
constexpr std::size_t kSpecklePad = 32;

// One K x K kernel (row-major).
KernelSpectrum analyze_kernel(std::span<const double> kernel, std::size_t k, std::size_t pad = kSpecklePad);

struct FilterRecord {
    std::size_t filter_id = 0;
    double haf = 0;
    double hf_fraction = 0;
    double orient_resultant = 0;
    bool speckle = false;
    bool dead = false;
    bool degenerate = false;
};

struct FilterReport {
    std::vector<FilterRecord> records;
    double speckle_rate = 0;  // percent of filters
    double mean_haf = 0;
};

// Channel-averaged spectrum analysis of [C_out, C_in, K, K] kernels. HAF
// columns are filled when `haf_result` is given (one entry per filter).
template <typename T>
FilterReport speckle_report(const Tensor<T>& kernels, const HafResult* haf_result = nullptr);

struct ClusterStats {
    double intra = 0;  // mean over classes of mean pairwise within-class distance
    double inter = 0;  // mean pairwise distance between class centroids
    double ratio() const { return inter > 0 ? intra / inter : 0.0; }
};
ClusterStats cluster_stats(const EmbeddingSet& e);

struct Pca2d {
    Tensor<double> projection;  // [M, 2]
    Tensor<double> components;  // [2, D], unit rows, largest-magnitude entry positive
    std::vector<double> eigenvalues;  // all D, descending, covariance normalized by M
    std::vector<double> mean;
};
Pca2d pca2d(const Tensor<double>& x);

}  // namespace nmhebb
