#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "nmhebb/harness.hpp"

namespace nmhebb {
namespace {

using json = nlohmann::json;
constexpr const char* kMagic = "NMHEBB-CKPT";

std::uint32_t crc(const char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    while (n > 0) {
        const auto step = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(p), step);
        p += step;
        n -= step;
    }
    return static_cast<std::uint32_t>(c);
}

template <typename U>
void put_le(std::string& out, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out.append(b, sizeof(U));
}

template <typename U>
U get_le(const char* p) {
    char b[sizeof(U)];
    std::memcpy(b, p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
}

[[noreturn]] void bad(const std::string& source, const std::string& what) {
    throw CheckpointError(source + ": " + what);
}

std::string stat_name(const std::string& layer, bool var) { return layer + (var ? ".running_var" : ".running_mean"); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    const std::size_t width = c.precision == Precision::f32 ? 4 : 8;
    std::string payload;
    json dir = json::array();
    for (const auto& t : c.tensors) {
        if (numel(t.shape) != t.values.size()) throw CheckpointError("checkpoint: tensor '" + t.name + "' shape/value mismatch");
        dir.push_back({{"name", t.name}, {"group", t.group}, {"shape", t.shape}, {"offset", payload.size()},
                       {"bytes", t.values.size() * width}});
        for (double v : t.values) {
            if (width == 4)
                put_le(payload, static_cast<float>(v));
            else
                put_le(payload, v);
        }
    }
    json h;
    h["arch"] = arch_name(c.arch);
    h["phase"] = c.phase;
    h["num_classes"] = c.num_classes;
    h["input_channels"] = c.input_channels;
    h["input_size"] = c.input_size;
    h["embed_dim"] = c.embed_dim;
    h["hebbian_layer"] = c.hebbian_layer;
    h["embedding_layer"] = c.embedding_layer;
    h["dtype"] = precision_name(c.precision);
    h["config"] = c.config;
    h["rng_state"] = c.rng_state;
    h["meta"] = c.meta;
    h["tensors"] = dir;
    h["payload_bytes"] = payload.size();
    h["payload_crc32"] = crc(payload.data(), payload.size());
    const std::string header = h.dump(1) + "\n";
    std::ostringstream out;
    out << kMagic << ' ' << c.version << ' ' << header.size() << ' ' << crc(header.data(), header.size()) << '\n';
    return out.str() + header + payload;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos || nl > 128) bad(source, "not a checkpoint (no header line)");
    std::istringstream first(bytes.substr(0, nl));
    std::string magic;
    long long version = -1;
    unsigned long long header_len = 0, header_crc = 0;
    if (!(first >> magic >> version >> header_len >> header_crc) || magic != kMagic)
        bad(source, "not a checkpoint (bad magic line)");
    if (version != kCheckpointVersion)
        bad(source, "format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const std::size_t hstart = nl + 1;
    if (bytes.size() < hstart + header_len) bad(source, "truncated header");
    const std::string header = bytes.substr(hstart, header_len);
    if (crc(header.data(), header.size()) != header_crc) bad(source, "header checksum mismatch (corrupt file)");
    json h;
    try {
        h = json::parse(header);
    } catch (const json::exception& e) {
        bad(source, std::string("header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.version = static_cast<int>(version);
        c.arch = parse_arch(h.at("arch").get<std::string>());
        c.phase = h.at("phase").get<std::string>();
        c.num_classes = h.at("num_classes").get<std::size_t>();
        c.input_channels = h.at("input_channels").get<std::size_t>();
        c.input_size = h.at("input_size").get<std::size_t>();
        c.embed_dim = h.at("embed_dim").get<std::size_t>();
        c.hebbian_layer = h.at("hebbian_layer").get<std::string>();
        c.embedding_layer = h.at("embedding_layer").get<std::string>();
        c.precision = parse_precision(h.at("dtype").get<std::string>());
        c.config = h.at("config").get<std::string>();
        c.rng_state = h.at("rng_state").get<std::string>();
        c.meta = h.at("meta").get<std::map<std::string, std::string>>();
        const std::size_t payload_bytes = h.at("payload_bytes").get<std::size_t>();
        const std::size_t pstart = hstart + header_len;
        if (bytes.size() != pstart + payload_bytes)
            bad(source, "payload is " + std::to_string(bytes.size() - std::min(bytes.size(), pstart)) + " bytes, header says " +
                            std::to_string(payload_bytes) + (bytes.size() < pstart + payload_bytes ? " (truncated)" : ""));
        if (crc(bytes.data() + pstart, payload_bytes) != h.at("payload_crc32").get<std::uint32_t>())
            bad(source, "payload checksum mismatch (corrupt file)");
        const std::size_t width = c.precision == Precision::f32 ? 4 : 8;
        for (const auto& t : h.at("tensors")) {
            StoredTensor st;
            st.name = t.at("name").get<std::string>();
            st.group = t.at("group").get<std::string>();
            st.shape = t.at("shape").get<Shape>();
            const std::size_t off = t.at("offset").get<std::size_t>(), nb = t.at("bytes").get<std::size_t>();
            const std::size_t n = numel(st.shape);
            if (nb != n * width || off + nb > payload_bytes) bad(source, "tensor '" + st.name + "' has an inconsistent extent");
            st.values.resize(n);
            const char* p = bytes.data() + pstart + off;
            for (std::size_t i = 0; i < n; ++i)
                st.values[i] = width == 4 ? static_cast<double>(get_le<float>(p + 4 * i)) : get_le<double>(p + 8 * i);
            c.tensors.push_back(std::move(st));
        }
    } catch (const json::exception& e) {
        bad(source, std::string("malformed header: ") + e.what());
    } catch (const ConfigError& e) {
        bad(source, std::string("malformed header: ") + e.what());
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const auto bytes = serialize_checkpoint(c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str(), path);
}

template <typename T>
Checkpoint make_checkpoint(const ModelState<T>& model, const NeuromodulatorState<T>& nm, const std::string& phase,
                           const std::string& config_text) {
    Checkpoint c;
    c.phase = phase;
    c.arch = model.arch;
    c.num_classes = model.num_classes;
    c.input_channels = model.input_channels;
    c.input_size = model.input_size;
    c.embed_dim = model.embed_dim;
    c.hebbian_layer = model.hebbian_layer;
    c.embedding_layer = model.embedding_layer;
    c.precision = std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
    c.config = config_text;
    auto store = [&](const std::string& name, const std::string& group, const Tensor<T>& t) {
        c.tensors.push_back({name, group, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
    };
    for (const auto& p : model.params) store(p.name, "theta", p.value);
    for (const auto& r : model.running) {
        store(stat_name(r.name, false), "running", r.stats.mean);
        store(stat_name(r.name, true), "running", r.stats.var);
    }
    for (const auto& p : nm.params) store(p.name, "phi", p.value);
    return c;
}

template <typename T>
ModelState<T> model_from_checkpoint(const Checkpoint& c) {
    ModelState<T> m;
    try {
        m = build_model<T>(c.arch, c.num_classes, c.input_channels, c.input_size, 0);
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint describes an unbuildable model: ") + e.what());
    }
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : c.tensors) by_name[t.group + "/" + t.name] = &t;
    auto fill = [&](const std::string& key, Tensor<T>& dst) {
        auto it = by_name.find(key);
        if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + key + "' required by " + arch_name(c.arch));
        if (it->second->shape != dst.shape())
            throw CheckpointError("checkpoint tensor '" + key + "' has shape " + shape_str(it->second->shape) +
                                  ", architecture expects " + shape_str(dst.shape()));
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    };
    std::size_t used = 0;
    for (auto& p : m.params) fill("theta/" + p.name, p.value), ++used;
    for (auto& r : m.running) {
        fill("running/" + stat_name(r.name, false), r.stats.mean);
        fill("running/" + stat_name(r.name, true), r.stats.var);
        used += 2;
    }
    std::size_t theta_running = 0;
    for (const auto& t : c.tensors) theta_running += t.group == "theta" || t.group == "running";
    if (theta_running != used) throw CheckpointError("checkpoint holds tensors the architecture does not have");
    if (m.hebbian_layer != c.hebbian_layer) throw CheckpointError("checkpoint Hebbian layer does not match the architecture");
    return m;
}

template <typename T>
NeuromodulatorState<T> nm_from_checkpoint(const Checkpoint& c) {
    auto nm = NeuromodulatorState<T>::zeros();
    for (auto& p : nm.params) {
        const StoredTensor* found = nullptr;
        for (const auto& t : c.tensors)
            if (t.group == "phi" && t.name == p.name) found = &t;
        if (!found) throw CheckpointError("checkpoint lacks gate tensor '" + p.name + "'");
        if (found->shape != p.value.shape()) throw CheckpointError("checkpoint gate tensor '" + p.name + "' has the wrong shape");
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(found->values[i]);
    }
    return nm;
}

std::string run_report_header() { return "epoch,phase,loss_total,loss_ce,loss_hebb,nu,loss_metric,loss_cons,val_top1,lr\n"; }

std::string run_report_row(const EpochRecord& r) {
    std::string s = std::to_string(r.epoch) + "," + std::to_string(r.phase);
    for (double v : {r.loss.total, r.loss.ce, r.loss.hebbian, r.loss.nu, r.loss.metric, r.loss.consolidation, r.val_top1, r.lr})
        s += "," + format_number(v);
    return s + "\n";
}

std::string filter_report_csv(const FilterReport& r) {
    std::string s = "filter_id,haf,hf_fraction,orient_resultant,speckle,dead\n";
    for (const auto& f : r.records)
        s += std::to_string(f.filter_id) + "," + format_number(f.haf) + "," + format_number(f.hf_fraction) + "," +
             format_number(f.orient_resultant) + "," + (f.speckle ? "1" : "0") + "," + (f.dead ? "1" : "0") + "\n";
    return s;
}

template Checkpoint make_checkpoint<float>(const ModelState<float>&, const NeuromodulatorState<float>&, const std::string&,
                                           const std::string&);
template Checkpoint make_checkpoint<double>(const ModelState<double>&, const NeuromodulatorState<double>&,
                                            const std::string&, const std::string&);
template ModelState<float> model_from_checkpoint<float>(const Checkpoint&);
template ModelState<double> model_from_checkpoint<double>(const Checkpoint&);
template NeuromodulatorState<float> nm_from_checkpoint<float>(const Checkpoint&);
template NeuromodulatorState<double> nm_from_checkpoint<double>(const Checkpoint&);

}  // namespace nmhebb
