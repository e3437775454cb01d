#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "nmhebb/harness.hpp"

namespace nmhebb {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
    double out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || !std::isfinite(out)) throw ConfigError("expected a finite number, got '" + v + "'");
    return out;
}

std::uint64_t to_uint(const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("expected a nonnegative integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (auto t = trim(item); !t.empty()) out.push_back(t);
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

DataSource parse_source(const std::string& s) {
    if (s == "synthetic") return DataSource::synthetic;
    if (s == "idx") return DataSource::idx;
    if (s == "cifar10") return DataSource::cifar10;
    if (s == "cifar100") return DataSource::cifar100;
    throw ConfigError("unknown data source '" + s + "' (synthetic, idx, cifar10, cifar100)");
}

struct Field {
    std::string section, key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define NUM_FIELD(sec, name, member, cond, what)                                              \
    Field{sec, name,                                                                          \
          [](RunConfig& c, const std::string& v) {                                            \
              const double x = to_double(v);                                                  \
              check(cond, std::string(name) + " " + what);                                    \
              c.member = x;                                                                   \
          },                                                                                  \
          [](const RunConfig& c) { return format_number(c.member); }}

#define UINT_FIELD(sec, name, member, cond, what)                                             \
    Field{sec, name,                                                                          \
          [](RunConfig& c, const std::string& v) {                                            \
              const auto x = to_uint(v);                                                      \
              check(cond, std::string(name) + " " + what);                                    \
              c.member = static_cast<decltype(c.member)>(x);                                  \
          },                                                                                  \
          [](const RunConfig& c) { return std::to_string(c.member); }}

#define BOOL_FIELD(sec, name, member)                                                         \
    Field{sec, name, [](RunConfig& c, const std::string& v) { c.member = to_bool(v); },       \
          [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}

#define STR_FIELD(sec, name, member)                                                          \
    Field{sec, name, [](RunConfig& c, const std::string& v) { c.member = v; },                \
          [](const RunConfig& c) { return c.member; }}

#define LIST_FIELD(sec, name, member)                                                         \
    Field{sec, name, [](RunConfig& c, const std::string& v) { c.member = to_list(v); },       \
          [](const RunConfig& c) { return join(c.member); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        Field{"data", "source", [](RunConfig& c, const std::string& v) { c.data.source = parse_source(v); },
              [](const RunConfig& c) { return data_source_name(c.data.source); }},
        UINT_FIELD("data", "num_classes", data.synthetic.num_classes, x >= 2, "must be >= 2"),
        UINT_FIELD("data", "image_size", data.synthetic.image_size, x >= 4, "must be >= 4"),
        UINT_FIELD("data", "channels", data.synthetic.channels, x >= 1, "must be >= 1"),
        UINT_FIELD("data", "train_per_class", data.synthetic.train_per_class, x >= 2, "must be >= 2"),
        UINT_FIELD("data", "val_per_class", data.synthetic.val_per_class, x >= 1, "must be >= 1"),
        UINT_FIELD("data", "test_per_class", data.synthetic.test_per_class, x >= 1, "must be >= 1"),
        NUM_FIELD("data", "grating_amplitude", data.synthetic.grating_amplitude, x >= 0, "must be >= 0"),
        NUM_FIELD("data", "blob_amplitude", data.synthetic.blob_amplitude, x >= 0, "must be >= 0"),
        NUM_FIELD("data", "noise", data.synthetic.noise, x >= 0, "must be >= 0"),
        NUM_FIELD("data", "angle_jitter", data.synthetic.angle_jitter, x >= 0, "must be >= 0"),
        NUM_FIELD("data", "position_jitter", data.synthetic.position_jitter, x >= 0, "must be >= 0"),
        UINT_FIELD("data", "seed", data.synthetic.seed, true, ""),
        NUM_FIELD("data", "val_fraction", data.val_fraction, x > 0 && x < 1, "must be in (0,1)"),
        UINT_FIELD("data", "split_seed", data.split_seed, true, ""),
        STR_FIELD("data", "train_images", data.train_images),
        STR_FIELD("data", "train_labels", data.train_labels),
        STR_FIELD("data", "test_images", data.test_images),
        STR_FIELD("data", "test_labels", data.test_labels),
        LIST_FIELD("data", "train_files", data.train_files),
        LIST_FIELD("data", "test_files", data.test_files),

        Field{"model", "arch", [](RunConfig& c, const std::string& v) { c.arch = parse_arch(v); },
              [](const RunConfig& c) { return arch_name(c.arch); }},

        UINT_FIELD("train", "epochs_phase1", train.epochs_phase1, x >= 1, "must be >= 1"),
        UINT_FIELD("train", "epochs_phase2", train.epochs_phase2, x >= 1, "must be >= 1"),
        NUM_FIELD("train", "lr_phase1", train.lr_phase1, x > 0, "must be > 0"),
        NUM_FIELD("train", "lr_phase2", train.lr_phase2, x > 0, "must be > 0"),
        NUM_FIELD("train", "momentum", train.momentum, x >= 0 && x < 1, "must be in [0,1)"),
        NUM_FIELD("train", "weight_decay", train.weight_decay, x >= 0, "must be >= 0"),
        UINT_FIELD("train", "batch_size", train.batch_size, x >= 2, "must be >= 2"),
        UINT_FIELD("train", "swa_start_epoch", train.swa_start_epoch, x >= 1, "must be >= 1"),
        BOOL_FIELD("train", "swa_phase2", train.swa_phase2),
        UINT_FIELD("train", "early_stop_patience", train.patience, x >= 1, "must be >= 1"),
        BOOL_FIELD("train", "augment_flip", train.augment_flip),
        BOOL_FIELD("train", "augment_crop", train.augment_crop),
        UINT_FIELD("train", "crop_pad", train.crop_pad, true, ""),
        UINT_FIELD("train", "seed", train.seed, true, ""),
        Field{"train", "precision", [](RunConfig& c, const std::string& v) { c.train.precision = parse_precision(v); },
              [](const RunConfig& c) { return precision_name(c.train.precision); }},

        NUM_FIELD("loss", "lambda_hebb1", train.loss.lambda_hebb1, x >= 0, "must be >= 0"),
        NUM_FIELD("loss", "lambda_hebb2", train.loss.lambda_hebb2, x >= 0, "must be >= 0"),
        NUM_FIELD("loss", "lambda_metric", train.loss.lambda_metric, x >= 0, "must be >= 0"),
        NUM_FIELD("loss", "lambda_cons", train.loss.lambda_cons, x >= 0, "must be >= 0"),
        NUM_FIELD("loss", "margin", train.loss.margin, x > 0, "must be > 0"),
        Field{"loss", "hebb_activation_stat",
              [](RunConfig& c, const std::string& v) { c.train.loss.hebb_stat = parse_hebb_stat(v); },
              [](const RunConfig& c) { return hebb_stat_name(c.train.loss.hebb_stat); }},

        NUM_FIELD("analysis", "haf_tau", analysis.haf_tau, x > 0 && x <= 1, "must be in (0,1]"),
        UINT_FIELD("analysis", "kmeans_seed", analysis.kmeans_seed, true, ""),
    };
    return f;
}

void validate_run(const RunConfig& c) {
    c.train.validate();
    const auto& d = c.data;
    switch (d.source) {
        case DataSource::synthetic:
            break;
        case DataSource::idx:
            check(!d.train_images.empty() && !d.train_labels.empty() && !d.test_images.empty() &&
                      !d.test_labels.empty(),
                  "idx source needs train_images, train_labels, test_images and test_labels");
            break;
        case DataSource::cifar10:
        case DataSource::cifar100:
            check(!d.train_files.empty() && !d.test_files.empty(), "cifar source needs train_files and test_files");
            break;
    }
}

}  // namespace

std::string data_source_name(DataSource s) {
    switch (s) {
        case DataSource::synthetic: return "synthetic";
        case DataSource::idx: return "idx";
        case DataSource::cifar10: return "cifar10";
        case DataSource::cifar100: return "cifar100";
    }
    return "?";
}

std::string format_number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    RunConfig c;
    std::istringstream in(text);
    std::string line, section;
    std::set<std::string> seen;
    std::map<std::string, std::size_t> where;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : fields()) known = known || f.section == section;
            if (!known) fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value', got '" + line + "'");
        if (section.empty()) fail("key outside of a section");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (f.section == section && f.key == key) field = &f;
        if (!field) fail("unknown key '" + key + "' in [" + section + "]");
        if (!seen.insert(section + "." + key).second) fail("duplicate key '" + key + "' in [" + section + "]");
        where[section + "." + key] = lineno;
        try {
            field->set(c, value);
        } catch (const ConfigError& e) {
            fail(e.what());
        }
    }
    try {
        validate_run(c);
    } catch (const ConfigError& e) {
        // cross-field constraint: point at the latest line that set a key
        std::size_t last = 0;
        for (const auto& [_, l] : where) last = std::max(last, l);
        throw ConfigError(source + (last ? ":" + std::to_string(last) : "") + ": " + e.what());
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string emit_config(const RunConfig& c) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

Splits load_data(const DataConfig& d) {
    if (d.source == DataSource::synthetic) return synthetic_splits(d.synthetic);
    Dataset pool, test;
    if (d.source == DataSource::idx) {
        pool = load_idx(d.train_images, d.train_labels);
        test = load_idx(d.test_images, d.test_labels, pool.num_classes);
    } else {
        const auto v = d.source == DataSource::cifar10 ? CifarVariant::cifar10 : CifarVariant::cifar100;
        pool = load_cifar_binary(d.train_files, v);
        test = load_cifar_binary(d.test_files, v);
    }
    pool.validate();
    auto [train, val] = stratified_split(pool, 1.0 - d.val_fraction, d.split_seed);
    Splits s{std::move(train), std::move(val), std::move(test)};
    s.train.split = "train";
    s.val.split = "val";
    s.test.split = "test";
    s.train.validate();
    s.val.validate(false);
    compute_channel_stats(s.train);
    s.val.mean = s.test.mean = s.train.mean;
    s.val.stddev = s.test.stddev = s.train.stddev;
    return s;
}

}  // namespace nmhebb
