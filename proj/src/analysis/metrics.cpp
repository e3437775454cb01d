#include "nmhebb/metrics.hpp"

#include <fftw3.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <random>

namespace nmhebb {
namespace {

void require_matrix(const Tensor<double>& x, const char* what) {
    if (x.rank() != 2) throw ShapeError(std::string(what) + ": expected a 2-D matrix, got " + shape_str(x.shape()));
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
        const double e = a[j] - b[j];
        s += e * e;
    }
    return s;
}

struct Lloyd {
    std::vector<int> assign;
    Tensor<double> cent;
    double inertia = 0;
};

Lloyd run_once(const Tensor<double>& x, std::size_t k, std::mt19937_64& rng, std::size_t max_iter) {
    const std::size_t M = x.dim(0), D = x.dim(1);
    const double* X = x.data();
    Lloyd r;
    r.cent = Tensor<double>({k, D});
    // k-means++ seeding
    std::uniform_int_distribution<std::size_t> pick(0, M - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t first = pick(rng);
    std::copy_n(X + first * D, D, r.cent.data());
    std::vector<double> d2(M);
    for (std::size_t i = 0; i < M; ++i) d2[i] = sq_dist(X + i * D, r.cent.data(), D);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0;
        for (double v : d2) total += v;
        std::size_t chosen = 0;
        if (total > 0) {
            const double target = unit(rng) * total;
            double acc = 0;
            chosen = M - 1;
            for (std::size_t i = 0; i < M; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);  // every point already coincides with a center
        }
        std::copy_n(X + chosen * D, D, r.cent.data() + c * D);
        for (std::size_t i = 0; i < M; ++i) d2[i] = std::min(d2[i], sq_dist(X + i * D, r.cent.data() + c * D, D));
    }

    r.assign.assign(M, -1);
    std::vector<double> sums(k * D);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < M; ++i) {
            int best = 0;
            double bd = sq_dist(X + i * D, r.cent.data(), D);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(X + i * D, r.cent.data() + c * D, D);
                if (d < bd) {
                    bd = d;
                    best = static_cast<int>(c);
                }
            }
            if (r.assign[i] != best) {
                r.assign[i] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < M; ++i) {
            const auto c = static_cast<std::size_t>(r.assign[i]);
            ++counts[c];
            for (std::size_t j = 0; j < D; ++j) sums[c * D + j] += X[i * D + j];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0)  // an emptied cluster keeps its previous center
                for (std::size_t j = 0; j < D; ++j) r.cent[c * D + j] = sums[c * D + j] / static_cast<double>(counts[c]);
    }
    r.inertia = 0;
    for (std::size_t i = 0; i < M; ++i)
        r.inertia += sq_dist(X + i * D, r.cent.data() + static_cast<std::size_t>(r.assign[i]) * D, D);
    return r;
}

double entropy(const std::map<int, std::size_t>& counts, double n) {
    double h = 0;
    for (const auto& [_, c] : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

void EmbeddingSet::validate() const {
    require_matrix(matrix, "embeddings");
    if (matrix.dim(0) != labels.size())
        throw ShapeError("embeddings: " + std::to_string(matrix.dim(0)) + " rows but " + std::to_string(labels.size()) +
                         " labels");
    for (int y : labels)
        if (y < 0) throw DataError("embeddings: negative label");
    if (!all_finite<double>(matrix.values())) throw DivergenceError("embeddings: non-finite values");
}

template <typename T>
EmbeddingSet make_embeddings(const Tensor<T>& matrix, std::vector<int> labels, std::string source) {
    EmbeddingSet e{matrix.template cast<double>(), std::move(labels), std::move(source)};
    e.validate();
    return e;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2 || logits.dim(1) == 0) throw ShapeError("argmax: expected [N,K] logits");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(N);
    for (std::size_t i = 0; i < N; ++i) {
        const T* row = logits.data() + i * K;
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
        out[i] = static_cast<int>(best);
    }
    return out;
}

template <typename T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
    const auto pred = argmax_rows(logits);
    if (pred.size() != labels.size()) throw ShapeError("top1: logits rows and labels differ");
    if (pred.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

KMeansResult kmeans(const Tensor<double>& x, std::size_t k, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iter) {
    require_matrix(x, "kmeans");
    if (k == 0 || x.dim(0) < k)
        throw ShapeError("kmeans: need at least k=" + std::to_string(k) + " points, got " + std::to_string(x.dim(0)));
    if (restarts == 0) throw ConfigError("kmeans: restarts must be >= 1");
    KMeansResult best;
    for (std::size_t r = 0; r < restarts; ++r) {
        std::seed_seq seq{seed, static_cast<std::uint64_t>(r)};
        std::mt19937_64 rng(seq);
        auto run = run_once(x, k, rng, max_iter);
        if (r == 0 || run.inertia < best.inertia) {
            best.assignment = std::move(run.assign);
            best.centroids = std::move(run.cent);
            best.inertia = run.inertia;
            best.best_restart = r;
        }
    }
    return best;
}

double nmi_partitions(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ShapeError("nmi: partitions differ in length");
    if (a.empty()) throw ShapeError("nmi: empty partitions");
    const double n = static_cast<double>(a.size());
    std::map<int, std::size_t> ca, cb;
    std::map<std::pair<int, int>, std::size_t> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++joint[{a[i], b[i]}];
    }
    const double ha = entropy(ca, n), hb = entropy(cb, n);
    if (ha + hb == 0.0) return 1.0;
    double mi = 0;
    for (const auto& [key, c] : joint) {
        const double p = static_cast<double>(c) / n;
        const double pa = static_cast<double>(ca[key.first]) / n, pb = static_cast<double>(cb[key.second]) / n;
        mi += p * std::log(p / (pa * pb));
    }
    return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double nmi(const EmbeddingSet& e, std::size_t num_classes, std::uint64_t seed) {
    e.validate();
    auto km = kmeans(e.matrix, num_classes, seed);
    return nmi_partitions(km.assignment, e.labels);
}

template <typename T>
Tensor<double> spatial_max(const Tensor<T>& maps) {
    if (maps.rank() != 4) throw ShapeError("spatial_max: expected [N,F,H,W], got " + shape_str(maps.shape()));
    const std::size_t N = maps.dim(0), F = maps.dim(1), hw = maps.dim(2) * maps.dim(3);
    Tensor<double> out({N, F});
    for (std::size_t i = 0; i < N * F; ++i) {
        const T* p = maps.data() + i * hw;
        out[i] = static_cast<double>(*std::max_element(p, p + hw));
    }
    return out;
}

HafResult haf(const Tensor<double>& responses, double tau) {
    require_matrix(responses, "haf");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("haf: tau must be in (0,1]");
    const std::size_t N = responses.dim(0), F = responses.dim(1);
    if (N == 0) throw ShapeError("haf: empty reference set");
    HafResult r;
    r.haf.resize(F);
    r.dead.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
        double amax = responses[f];
        for (std::size_t i = 1; i < N; ++i) amax = std::max(amax, responses[i * F + f]);
        if (amax == 0.0) {
            r.haf[f] = 1.0;
            r.dead[f] = true;
            continue;
        }
        std::size_t count = 0;
        for (std::size_t i = 0; i < N; ++i) count += responses[i * F + f] >= tau * amax;
        r.haf[f] = static_cast<double>(count) / static_cast<double>(N);
    }
    for (double h : r.haf) r.mean += h;
    r.mean /= static_cast<double>(F);
    return r;
}

KernelSpectrum analyze_kernel(std::span<const double> kernel, std::size_t k, std::size_t pad) {
    if (k < 3) throw ShapeError("speckle: kernel size must be >= 3");
    if (kernel.size() != k * k) throw ShapeError("speckle: kernel has " + std::to_string(kernel.size()) + " values, expected " +
                                                 std::to_string(k * k));
    if (pad < k) throw ShapeError("speckle: pad smaller than kernel");
    KernelSpectrum out;
    double mean = 0;
    for (double v : kernel) mean += v;
    mean /= static_cast<double>(k * k);
    double var = 0;
    for (double v : kernel) var += (v - mean) * (v - mean);
    var /= static_cast<double>(k * k);
    if (!(var > 1e-24)) {
        out.degenerate = true;
        return out;
    }
    const double inv = 1.0 / std::sqrt(var);

    const std::size_t P = pad;
    auto* buf = fftw_alloc_complex(P * P);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(P), static_cast<int>(P), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    for (std::size_t i = 0; i < P * P; ++i) buf[i][0] = buf[i][1] = 0.0;
    for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) buf[y * P + x][0] = (kernel[y * k + x] - mean) * inv;
    fftw_execute(plan);

    const double r_max = static_cast<double>(P) / 2.0;
    double total = 0, high = 0, wsum = 0;
    std::complex<double> res{0.0, 0.0};
    for (std::size_t v = 0; v < P; ++v)
        for (std::size_t u = 0; u < P; ++u) {
            if (u == 0 && v == 0) continue;
            const double fu = u < P / 2 ? double(u) : double(u) - double(P);
            const double fv = v < P / 2 ? double(v) : double(v) - double(P);
            const double re = buf[v * P + u][0], im = buf[v * P + u][1];
            const double power = re * re + im * im;
            const double mag = std::sqrt(power);
            total += power;
            if (std::hypot(fu, fv) > r_max / 2.0) high += power;
            const double psi = std::atan2(fv, fu);
            res += mag * std::polar(1.0, 2.0 * psi);
            wsum += mag;
        }
    fftw_destroy_plan(plan);
    fftw_free(buf);

    out.hf_fraction = total > 0 ? high / total : 0.0;
    out.orient_resultant = wsum > 0 ? std::abs(res) / wsum : 0.0;
    out.speckle = out.hf_fraction >= kSpeckleHfThreshold && out.orient_resultant <= kSpeckleResultantThreshold;
    return out;
}

template <typename T>
FilterReport speckle_report(const Tensor<T>& kernels, const HafResult* haf_result) {
    if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3))
        throw ShapeError("speckle: expected [C_out,C_in,K,K], got " + shape_str(kernels.shape()));
    const std::size_t F = kernels.dim(0), C = kernels.dim(1), K = kernels.dim(2);
    if (haf_result && haf_result->haf.size() != F) throw ShapeError("speckle: HAF result does not match filter count");
    FilterReport rep;
    std::vector<double> avg(K * K);
    std::size_t speckled = 0;
    for (std::size_t f = 0; f < F; ++f) {
        std::fill(avg.begin(), avg.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < K * K; ++j) avg[j] += static_cast<double>(kernels[(f * C + c) * K * K + j]);
        for (double& v : avg) v /= static_cast<double>(C);
        const auto s = analyze_kernel(avg, K);
        FilterRecord r;
        r.filter_id = f;
        r.hf_fraction = s.hf_fraction;
        r.orient_resultant = s.orient_resultant;
        r.speckle = s.speckle;
        r.degenerate = s.degenerate;
        if (haf_result) {
            r.haf = haf_result->haf[f];
            r.dead = haf_result->dead[f];
        }
        speckled += r.speckle;
        rep.records.push_back(r);
    }
    rep.speckle_rate = F ? 100.0 * static_cast<double>(speckled) / static_cast<double>(F) : 0.0;
    if (haf_result) rep.mean_haf = haf_result->mean;
    return rep;
}

ClusterStats cluster_stats(const EmbeddingSet& e) {
    e.validate();
    const std::size_t M = e.size(), D = e.dim();
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < M; ++i) members[e.labels[i]].push_back(i);
    const double* X = e.matrix.data();
    ClusterStats s;
    std::vector<std::vector<double>> cents;
    for (const auto& [_, idx] : members) {
        double sum = 0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                sum += std::sqrt(sq_dist(X + idx[a] * D, X + idx[b] * D, D));
                ++pairs;
            }
        s.intra += pairs ? sum / static_cast<double>(pairs) : 0.0;
        std::vector<double> c(D, 0.0);
        for (auto i : idx)
            for (std::size_t j = 0; j < D; ++j) c[j] += X[i * D + j];
        for (double& v : c) v /= static_cast<double>(idx.size());
        cents.push_back(std::move(c));
    }
    s.intra /= static_cast<double>(members.size());
    double sum = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < cents.size(); ++a)
        for (std::size_t b = a + 1; b < cents.size(); ++b) {
            sum += std::sqrt(sq_dist(cents[a].data(), cents[b].data(), D));
            ++pairs;
        }
    s.inter = pairs ? sum / static_cast<double>(pairs) : 0.0;
    return s;
}

Pca2d pca2d(const Tensor<double>& x) {
    require_matrix(x, "pca2d");
    const std::size_t M = x.dim(0), D = x.dim(1);
    if (M == 0 || D < 2) throw ShapeError("pca2d: need at least one row and two columns");
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> X(x.data(), static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(D));
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Mat Xc = X.rowwise() - mu;
    const Eigen::MatrixXd cov = (Xc.transpose() * Xc) / static_cast<double>(M);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // ascending order from Eigen
    Pca2d out;
    out.mean.assign(mu.data(), mu.data() + D);
    for (Eigen::Index i = static_cast<Eigen::Index>(D) - 1; i >= 0; --i) out.eigenvalues.push_back(std::max(0.0, es.eigenvalues()(i)));
    out.components = Tensor<double>({2, D});
    for (std::size_t c = 0; c < 2; ++c) {
        Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(D - 1 - c));
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        for (std::size_t j = 0; j < D; ++j) out.components[c * D + j] = v(static_cast<Eigen::Index>(j));
    }
    Eigen::Map<const Mat> W(out.components.data(), 2, static_cast<Eigen::Index>(D));
    out.projection = Tensor<double>({M, 2});
    Eigen::Map<Mat> P(out.projection.data(), static_cast<Eigen::Index>(M), 2);
    P = Xc * W.transpose();
    return out;
}

template EmbeddingSet make_embeddings<float>(const Tensor<float>&, std::vector<int>, std::string);
template EmbeddingSet make_embeddings<double>(const Tensor<double>&, std::vector<int>, std::string);
template std::vector<int> argmax_rows<float>(const Tensor<float>&);
template std::vector<int> argmax_rows<double>(const Tensor<double>&);
template double top1_accuracy<float>(const Tensor<float>&, std::span<const int>);
template double top1_accuracy<double>(const Tensor<double>&, std::span<const int>);
template Tensor<double> spatial_max<float>(const Tensor<float>&);
template Tensor<double> spatial_max<double>(const Tensor<double>&);
template FilterReport speckle_report<float>(const Tensor<float>&, const HafResult*);
template FilterReport speckle_report<double>(const Tensor<double>&, const HafResult*);

}  // namespace nmhebb
