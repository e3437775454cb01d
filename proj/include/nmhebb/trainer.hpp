#pragma once

// Two-phase training: SGD with Nesterov momentum on a per-epoch cosine
// schedule, weight averaging, early stopping on validation Top-1, and the
// pair sampler feeding the second phase.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nmhebb/data.hpp"
#include "nmhebb/losses.hpp"
#include "nmhebb/metrics.hpp"

namespace nmhebb {

enum class Precision { f32, f64 };
std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

struct TrainConfig {
    std::size_t epochs_phase1 = 30;
    std::size_t epochs_phase2 = 30;
    double lr_phase1 = 1e-3;
    double lr_phase2 = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    std::size_t batch_size = 64;
    // 1-based: parameters are snapshotted after every epoch >= this one.
    std::size_t swa_start_epoch = 24;
    bool swa_phase2 = false;
    std::size_t patience = 15;
    bool augment_flip = true;
    bool augment_crop = true;
    std::size_t crop_pad = 4;
    LossConfig loss;
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Velocity buffers mirror the trainable tensors (theta then phi).
template <typename T>
struct OptimizerState {
    std::vector<std::vector<T>> velocity;
    std::size_t step = 0;
    double lr = 0;
};

// g <- g + wd*theta; v <- mu*v + g; theta <- theta - lr*(g + mu*v)
template <typename T>
void sgd_nesterov_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                       double weight_decay);

// lr0 * (1 + cos(pi * epoch / total)) / 2
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

// Biases, batch-norm gamma/beta and gate biases carry no weight decay.
bool decays(const std::string& param_name);

// Equal-weight running mean of snapshots.
template <typename T>
struct SwaState {
    std::vector<Tensor<T>> mean;
    std::size_t count = 0;
    void update(std::span<const NamedTensor<T>> params);
};

struct PairBatch {
    std::vector<std::size_t> index_a, index_b;
    std::vector<int> labels_a, labels_b;
    std::vector<std::uint8_t> same_class;
    std::size_t size() const { return same_class.size(); }
};

class PairSampler {
public:
    // Throws DataError if any class has fewer than two samples.
    explicit PairSampler(const Dataset& ds);
    // Fair coin per slot: same class (uniform class, two distinct members)
    // or different classes (two distinct uniform classes, one member each).
    PairBatch sample(std::size_t pairs, std::mt19937_64& rng) const;

private:
    std::vector<std::vector<std::size_t>> members_;
};

PairBatch sample_pairs(const Dataset& ds, std::size_t pairs, std::mt19937_64& rng);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based within the phase
    int phase = 1;
    LossValues loss;        // batch means
    double val_top1 = 0;
    double lr = 0;
};

enum class Objective {
    nm_hebb,      // phase-1 objective (lambda_hebb1 = 0 gives the baseline)
    plain_ce,     // cross-entropy alone, no gate in the graph
};

template <typename T>
struct PhaseResult {
    ModelState<T> model;
    NeuromodulatorState<T> nm;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_top1 = 0;
    std::string handoff = "raw";  // "raw" or "swa"
    bool early_stopped = false;
};

// Called after each epoch; lets the caller stream report rows.
using EpochCallback = std::function<void(const EpochRecord&)>;

// Returns the best validation checkpoint (raw best epoch or the weight
// average, whichever validates higher).
template <typename T>
PhaseResult<T> train_phase1(ModelState<T> model, NeuromodulatorState<T> nm, const Dataset& train, const Dataset& val,
                            const TrainConfig& cfg, Objective objective = Objective::nm_hebb,
                            const EpochCallback& on_epoch = {});

// `frozen` is theta^- and is never modified. Returns the final state.
template <typename T>
PhaseResult<T> train_phase2(ModelState<T> model, const ModelState<T>& frozen, NeuromodulatorState<T> nm,
                            const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

// Normalized (train statistics), cast batch of dataset rows.
template <typename T>
Tensor<T> prepare_batch(const Dataset& ds, std::span<const std::size_t> indices, std::mt19937_64* augment_rng,
                        const TrainConfig& cfg);

// Batch-norm running statistics as the cumulative average over one
// un-augmented pass of `train`.
template <typename T>
void recompute_bn_statistics(ModelState<T>& model, const Dataset& train, std::size_t batch_size);

struct EvalResult {
    double top1 = 0;
    double nmi = 0;
    ClusterStats clusters;
    EmbeddingSet embeddings;
    std::vector<int> predictions;
};

// Eval-mode Top-1, embedding NMI (k = number of classes) and class distances.
template <typename T>
EvalResult evaluate(ModelState<T>& model, const Dataset& ds, std::uint64_t kmeans_seed = 0, const std::string& tag = "");

template <typename T>
double validation_top1(ModelState<T>& model, const Dataset& ds);

}  // namespace nmhebb
