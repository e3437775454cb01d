#pragma once

// Datasets: a parametric synthetic generator plus IDX and CIFAR-binary
// loaders, stratified splitting, per-channel normalization and flip/crop
// augmentation. Images are stored as float in [0,1], [M,C,H,W] row-major.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nmhebb/errors.hpp"
#include "nmhebb/tensor.hpp"

namespace nmhebb {

struct Dataset {
    Tensor<float> images;  // [M,C,H,W], values in [0,1]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split;  // "train", "val", "test", or a file tag
    // Per-channel normalization statistics. Filled from the train split and
    // copied onto the val/test splits.
    std::vector<float> mean, stddev;

    std::size_t size() const { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t image_size() const { return images.dim(2); }
    std::size_t image_numel() const { return images.size() / std::max<std::size_t>(size(), 1); }
    // Counts per class, length num_classes.
    std::vector<std::size_t> class_counts() const;
    // Throws DataError unless labels are in range and the image tensor
    // matches the label count; with require_all_classes, also unless every
    // class is present (loaders skip that: a file may hold a subset).
    void validate(bool require_all_classes = true) const;
};

// Per-class generator parameters, derived from the class index.
struct ClassRecipe {
    double angle = 0;      // grating orientation, radians
    double frequency = 0;  // cycles per image
    double blob_x = 0, blob_y = 0, blob_sigma = 0;  // fractions of the image side
    double blob_sign = 1;
    std::vector<double> tint;  // per-channel gain of the grating
};

struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t image_size = 16;
    std::size_t channels = 3;
    std::size_t train_per_class = 500;
    std::size_t val_per_class = 125;
    std::size_t test_per_class = 125;
    double grating_amplitude = 0.25;
    double blob_amplitude = 0.25;
    double noise = 0.2;  // std of additive Gaussian pixel noise
    // Per-sample nuisance: orientation jitter (radians) and blob position
    // jitter (fraction of the side).
    double angle_jitter = 0.35;
    double position_jitter = 0.12;
    std::uint64_t seed = 1;

    ClassRecipe recipe(std::size_t k) const;
};

struct Splits {
    Dataset train, val, test;
};

// `count` samples per class, labels in class-major blocks; deterministic in
// (spec.seed, stream).
Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t count_per_class, std::uint64_t stream,
                           const std::string& split = "synthetic");

// train+val drawn as one pool and split 80/20 stratified; test drawn from a
// separate stream. Normalization statistics come from train.
Splits synthetic_splits(const SyntheticSpec& spec);

// IDX: images magic 0x00000803 (ubyte, [N,H,W]) and labels 0x00000801.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t num_classes = 0);
Dataset load_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                       std::size_t num_classes = 0, const std::string& tag = "idx");

enum class CifarVariant { cifar10, cifar100 };
// 3073-byte records (label, 3072 pixel bytes) or 3074-byte records
// (coarse, fine, 3072 bytes; the fine label is used).
Dataset load_cifar_binary(const std::vector<std::string>& paths, CifarVariant variant);
Dataset load_cifar_bytes(std::span<const std::uint8_t> bytes, CifarVariant variant, const std::string& tag = "cifar");

// Per-class proportional split: round(fraction * n_k) samples of each class
// go to the first part. Order inside each part follows the original order.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double fraction, std::uint64_t seed);

void compute_channel_stats(Dataset& ds);
// (x - mean) / std per channel, in place on a [N,C,H,W] batch.
template <typename T>
void normalize(Tensor<T>& batch, std::span<const float> mean, std::span<const float> stddev);
template <typename T>
void denormalize(Tensor<T>& batch, std::span<const float> mean, std::span<const float> stddev);

struct AugmentFlags {
    bool flip = true;
    bool crop = true;
    std::size_t pad = 4;
};

// Mirror image i left-right.
void flip_horizontal(float* image, std::size_t channels, std::size_t size);
// Zero-pad by `pad` and take the size x size window at (dy, dx) of the padded
// image; (pad, pad) is the identity.
void pad_crop(float* image, std::size_t channels, std::size_t size, std::size_t pad, std::size_t dy, std::size_t dx);
// Independent flip (p = 0.5) and pad-crop per image.
void augment(Tensor<float>& batch, std::mt19937_64& rng, const AugmentFlags& flags = {});

// Rows `indices` of the dataset, as a batch.
Tensor<float> gather_images(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices);

// Nearest-centroid classifier in raw pixel space: centroids from `train`,
// accuracy on `test`.
double nearest_centroid_accuracy(const Dataset& train, const Dataset& test);

}  // namespace nmhebb
