#include "nmhebb/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace nmhebb {
namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

[[noreturn]] void fail_at(const std::string& tag, std::size_t offset, const std::string& what) {
    throw DataError(tag + ": " + what + " (byte offset " + std::to_string(offset) + ")");
}

// Validated IDX header: returns dims, checks magic and total length.
std::vector<std::uint32_t> idx_header(std::span<const std::uint8_t> b, std::uint32_t want_rank, const std::string& tag) {
    if (b.size() < 4) fail_at(tag, b.size(), "truncated IDX magic");
    if (b[0] != 0 || b[1] != 0) fail_at(tag, 0, "bad IDX magic: leading bytes must be zero");
    if (b[2] != 0x08) fail_at(tag, 2, "unsupported IDX element type 0x" + std::to_string(b[2]) + " (need 0x08, ubyte)");
    if (b[3] != want_rank)
        fail_at(tag, 3, "IDX rank " + std::to_string(b[3]) + ", expected " + std::to_string(want_rank));
    const std::size_t header = 4 + 4 * std::size_t(want_rank);
    if (b.size() < header) fail_at(tag, b.size(), "truncated IDX dimension header");
    std::vector<std::uint32_t> dims;
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < want_rank; ++i) {
        dims.push_back(be32(b, 4 + 4 * i));
        total *= dims.back();
    }
    if (b.size() < header + total)
        fail_at(tag, b.size(), "truncated IDX payload: need " + std::to_string(header + total) + " bytes");
    if (b.size() > header + total) fail_at(tag, header + total, "trailing bytes after IDX payload");
    return dims;
}

void finish_dataset(Dataset& ds, std::size_t num_classes) {
    if (ds.labels.empty()) throw DataError(ds.split + ": no samples");
    if (num_classes == 0) num_classes = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
    ds.num_classes = num_classes;
    ds.validate(false);
}

double gauss2(double dx, double dy, double sigma) { return std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)); }

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (int y : labels)
        if (y >= 0 && static_cast<std::size_t>(y) < num_classes) ++c[static_cast<std::size_t>(y)];
    return c;
}

void Dataset::validate(bool require_all_classes) const {
    if (images.rank() != 4) throw DataError(split + ": images must be [M,C,H,W], got " + shape_str(images.shape()));
    if (images.dim(0) != labels.size())
        throw DataError(split + ": " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                        " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw DataError(split + ": label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                            " outside [0," + std::to_string(num_classes) + ")");
    if (!require_all_classes) return;
    const auto counts = class_counts();
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] == 0) throw DataError(split + ": class " + std::to_string(k) + " has no samples");
}

ClassRecipe SyntheticSpec::recipe(std::size_t k) const {
    const double K = static_cast<double>(num_classes);
    const double t = static_cast<double>(k) / K;
    ClassRecipe r;
    r.angle = std::numbers::pi * t;
    r.frequency = 2.0 + static_cast<double>(k % 3);
    r.blob_x = 0.5 + 0.25 * std::cos(2 * std::numbers::pi * t);
    r.blob_y = 0.5 + 0.25 * std::sin(2 * std::numbers::pi * t);
    r.blob_sigma = 0.14 + 0.04 * static_cast<double>(k % 2);
    r.blob_sign = (k % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t c = 0; c < channels; ++c)
        r.tint.push_back(0.6 + 0.4 * std::cos(2 * std::numbers::pi * (t + static_cast<double>(c) / static_cast<double>(channels))));
    return r;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t count_per_class, std::uint64_t stream,
                           const std::string& split) {
    if (spec.num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (spec.image_size < 4 || spec.channels < 1) throw ConfigError("synthetic: image too small");
    if (count_per_class == 0) throw ConfigError("synthetic: samples per class must be > 0");
    const std::size_t S = spec.image_size, C = spec.channels, K = spec.num_classes;
    std::seed_seq seq{spec.seed, stream, std::uint64_t{0x5e7d}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Dataset ds;
    ds.split = split;
    ds.num_classes = K;
    ds.images = Tensor<float>({K * count_per_class, C, S, S});
    ds.labels.resize(K * count_per_class);
    float* out = ds.images.data();
    for (std::size_t k = 0; k < K; ++k) {
        const ClassRecipe r = spec.recipe(k);
        for (std::size_t s = 0; s < count_per_class; ++s) {
            const std::size_t idx = k * count_per_class + s;
            ds.labels[idx] = static_cast<int>(k);
            const double angle = r.angle + spec.angle_jitter * gauss(rng);
            const double phase = 2 * std::numbers::pi * unit(rng);
            const double contrast = 0.7 + 0.6 * unit(rng);
            const double bx = r.blob_x + spec.position_jitter * gauss(rng);
            const double by = r.blob_y + spec.position_jitter * gauss(rng);
            const double ca = std::cos(angle), sa = std::sin(angle);
            float* img = out + idx * C * S * S;
            for (std::size_t y = 0; y < S; ++y)
                for (std::size_t x = 0; x < S; ++x) {
                    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
                    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
                    const double wave = std::sin(2 * std::numbers::pi * r.frequency * (u * ca + v * sa) + phase);
                    const double blob = r.blob_sign * gauss2(u - bx, v - by, r.blob_sigma);
                    for (std::size_t c = 0; c < C; ++c) {
                        double p = 0.5 + spec.grating_amplitude * contrast * r.tint[c] * wave +
                                   spec.blob_amplitude * blob;
                        if (spec.noise > 0) p += spec.noise * gauss(rng);
                        img[(c * S + y) * S + x] = static_cast<float>(std::clamp(p, 0.0, 1.0));
                    }
                }
        }
    }
    return ds;
}

Splits synthetic_splits(const SyntheticSpec& spec) {
    const std::size_t pool = spec.train_per_class + spec.val_per_class;
    Dataset all = generate_synthetic(spec, pool, 0, "pool");
    const double frac = static_cast<double>(spec.train_per_class) / static_cast<double>(pool);
    auto [train, val] = stratified_split(all, frac, spec.seed);
    Splits s{std::move(train), std::move(val), generate_synthetic(spec, spec.test_per_class, 1, "test")};
    s.train.split = "train";
    s.val.split = "val";
    compute_channel_stats(s.train);
    s.val.mean = s.test.mean = s.train.mean;
    s.val.stddev = s.test.stddev = s.train.stddev;
    return s;
}

Dataset load_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                       std::size_t num_classes, const std::string& tag) {
    const auto idims = idx_header(images, 3, tag + " images");
    const auto ldims = idx_header(labels, 1, tag + " labels");
    if (idims[0] != ldims[0])
        fail_at(tag + " labels", 4, "record count " + std::to_string(ldims[0]) + " does not match " +
                                        std::to_string(idims[0]) + " images");
    if (idims[1] == 0 || idims[2] == 0) fail_at(tag + " images", 8, "zero image extent");
    Dataset ds;
    ds.split = tag;
    const std::size_t N = idims[0], H = idims[1], W = idims[2];
    ds.images = Tensor<float>({N, 1, H, W});
    const std::uint8_t* px = images.data() + 16;
    for (std::size_t i = 0; i < N * H * W; ++i) ds.images[i] = static_cast<float>(px[i]) / 255.0f;
    ds.labels.resize(N);
    for (std::size_t i = 0; i < N; ++i) ds.labels[i] = labels[8 + i];
    if (num_classes != 0)
        for (std::size_t i = 0; i < N; ++i)
            if (static_cast<std::size_t>(ds.labels[i]) >= num_classes)
                fail_at(tag + " labels", 8 + i, "label " + std::to_string(ds.labels[i]) + " >= " + std::to_string(num_classes));
    finish_dataset(ds, num_classes);
    return ds;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t num_classes) {
    const auto im = read_file(images_path);
    const auto lb = read_file(labels_path);
    return load_idx_bytes(im, lb, num_classes, images_path);
}

Dataset load_cifar_bytes(std::span<const std::uint8_t> bytes, CifarVariant variant, const std::string& tag) {
    const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
    const std::size_t rec = label_bytes + 3072;
    const std::size_t K = variant == CifarVariant::cifar10 ? 10 : 100;
    if (bytes.empty()) fail_at(tag, 0, "empty CIFAR file");
    if (bytes.size() % rec != 0)
        fail_at(tag, bytes.size() - bytes.size() % rec,
                "truncated record: file size " + std::to_string(bytes.size()) + " is not a multiple of " +
                    std::to_string(rec));
    const std::size_t N = bytes.size() / rec;
    Dataset ds;
    ds.split = tag;
    ds.images = Tensor<float>({N, 3, 32, 32});
    ds.labels.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        const std::uint8_t* r = bytes.data() + i * rec;
        const std::size_t label = r[label_bytes - 1];  // fine label for the 100-class layout
        if (label >= K) fail_at(tag, i * rec + label_bytes - 1, "label " + std::to_string(label) + " >= " + std::to_string(K));
        ds.labels[i] = static_cast<int>(label);
        for (std::size_t j = 0; j < 3072; ++j) ds.images[i * 3072 + j] = static_cast<float>(r[label_bytes + j]) / 255.0f;
    }
    ds.num_classes = K;
    return ds;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths, CifarVariant variant) {
    if (paths.empty()) throw DataError("cifar: no input files");
    std::vector<Dataset> parts;
    std::size_t total = 0;
    for (const auto& p : paths) {
        const auto bytes = read_file(p);
        parts.push_back(load_cifar_bytes(bytes, variant, p));
        total += parts.back().size();
    }
    Dataset ds;
    ds.split = paths.front();
    ds.num_classes = parts.front().num_classes;
    ds.images = Tensor<float>({total, 3, 32, 32});
    std::size_t off = 0;
    for (const auto& part : parts) {
        std::copy(part.images.storage().begin(), part.images.storage().end(), ds.images.storage().begin() + off * 3072);
        ds.labels.insert(ds.labels.end(), part.labels.begin(), part.labels.end());
        off += part.size();
    }
    return ds;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("stratified_split: fraction must be in (0,1)");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
    std::vector<char> first(ds.size(), 0);
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        for (std::size_t j = 0; j < take; ++j) first[members[j]] = 1;
    }
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < ds.size(); ++i) (first[i] ? a : b).push_back(i);
    auto make = [&](const std::vector<std::size_t>& idx, const std::string& tag) {
        Dataset out;
        out.split = tag;
        out.num_classes = ds.num_classes;
        out.images = gather_images(ds, idx);
        out.labels = gather_labels(ds, idx);
        out.mean = ds.mean;
        out.stddev = ds.stddev;
        return out;
    };
    return {make(a, ds.split + ".a"), make(b, ds.split + ".b")};
}

void compute_channel_stats(Dataset& ds) {
    const std::size_t C = ds.channels(), hw = ds.images.dim(2) * ds.images.dim(3);
    ds.mean.assign(C, 0.0f);
    ds.stddev.assign(C, 1.0f);
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for (std::size_t n = 0; n < ds.size(); ++n) {
            const float* p = ds.images.data() + (n * C + c) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
                s += p[j];
                s2 += double(p[j]) * p[j];
            }
        }
        const double m = s / static_cast<double>(ds.size() * hw);
        const double var = std::max(0.0, s2 / static_cast<double>(ds.size() * hw) - m * m);
        ds.mean[c] = static_cast<float>(m);
        ds.stddev[c] = static_cast<float>(std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0);
    }
}

template <typename T>
void normalize(Tensor<T>& batch, std::span<const float> mean, std::span<const float> stddev) {
    const std::size_t N = batch.dim(0), C = batch.dim(1), hw = batch.dim(2) * batch.dim(3);
    if (mean.size() != C || stddev.size() != C) throw ShapeError("normalize: statistics do not match channel count");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            T* p = batch.data() + (n * C + c) * hw;
            const T m = static_cast<T>(mean[c]), inv = T(1) / static_cast<T>(stddev[c]);
            for (std::size_t j = 0; j < hw; ++j) p[j] = (p[j] - m) * inv;
        }
}

template <typename T>
void denormalize(Tensor<T>& batch, std::span<const float> mean, std::span<const float> stddev) {
    const std::size_t N = batch.dim(0), C = batch.dim(1), hw = batch.dim(2) * batch.dim(3);
    if (mean.size() != C || stddev.size() != C) throw ShapeError("denormalize: statistics do not match channel count");
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            T* p = batch.data() + (n * C + c) * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] = p[j] * static_cast<T>(stddev[c]) + static_cast<T>(mean[c]);
        }
}

template void normalize<float>(Tensor<float>&, std::span<const float>, std::span<const float>);
template void normalize<double>(Tensor<double>&, std::span<const float>, std::span<const float>);
template void denormalize<float>(Tensor<float>&, std::span<const float>, std::span<const float>);
template void denormalize<double>(Tensor<double>&, std::span<const float>, std::span<const float>);

void flip_horizontal(float* image, std::size_t channels, std::size_t size) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < size; ++y) {
            float* row = image + (c * size + y) * size;
            std::reverse(row, row + size);
        }
}

void pad_crop(float* image, std::size_t channels, std::size_t size, std::size_t pad, std::size_t dy, std::size_t dx) {
    if (dy > 2 * pad || dx > 2 * pad) throw ConfigError("pad_crop: offset outside the padded image");
    std::vector<float> tmp(size * size);
    for (std::size_t c = 0; c < channels; ++c) {
        float* plane = image + c * size * size;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                // padded coordinates (y+dy, x+dx) -> source (y+dy-pad, x+dx-pad)
                const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
                const auto sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
                const bool in = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(size) &&
                                sx < static_cast<std::ptrdiff_t>(size);
                tmp[y * size + x] = in ? plane[sy * static_cast<std::ptrdiff_t>(size) + sx] : 0.0f;
            }
        std::copy(tmp.begin(), tmp.end(), plane);
    }
}

void augment(Tensor<float>& batch, std::mt19937_64& rng, const AugmentFlags& flags) {
    const std::size_t N = batch.dim(0), C = batch.dim(1), S = batch.dim(2);
    std::uniform_int_distribution<std::size_t> off(0, 2 * flags.pad);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t n = 0; n < N; ++n) {
        float* img = batch.data() + n * C * S * S;
        // draws happen whether or not the flag is on, so toggling one
        // augmentation does not shift the other's random stream
        const bool f = coin(rng);
        const std::size_t dy = off(rng), dx = off(rng);
        if (flags.flip && f) flip_horizontal(img, C, S);
        if (flags.crop && flags.pad > 0) pad_crop(img, C, S, flags.pad, dy, dx);
    }
}

Tensor<float> gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
    const std::size_t per = ds.image_numel();
    Shape s = ds.images.shape();
    s[0] = indices.size();
    Tensor<float> out(s);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= ds.size()) throw ShapeError("gather_images: index out of range");
        std::copy_n(ds.images.data() + indices[i] * per, per, out.data() + i * per);
    }
    return out;
}

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(ds.labels.at(i));
    return out;
}

double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
    const std::size_t D = train.image_numel(), K = train.num_classes;
    std::vector<double> cent(K * D, 0.0);
    const auto counts = train.class_counts();
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto k = static_cast<std::size_t>(train.labels[i]);
        for (std::size_t j = 0; j < D; ++j) cent[k * D + j] += train.images[i * D + j];
    }
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < D; ++j) cent[k * D + j] /= static_cast<double>(std::max<std::size_t>(counts[k], 1));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        double bd = 0;
        for (std::size_t k = 0; k < K; ++k) {
            double d = 0;
            for (std::size_t j = 0; j < D; ++j) {
                const double e = test.images[i * D + j] - cent[k * D + j];
                d += e * e;
            }
            if (k == 0 || d < bd) {
                bd = d;
                best = k;
            }
        }
        hit += static_cast<int>(best) == test.labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

}  // namespace nmhebb
