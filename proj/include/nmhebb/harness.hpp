#pragma once

// Run plumbing: INI-style config files, the checkpoint container, CSV
// reports, and the command implementations behind tools/nmhebb.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmhebb/trainer.hpp"

namespace nmhebb {

enum class DataSource { synthetic, idx, cifar10, cifar100 };
std::string data_source_name(DataSource s);

struct DataConfig {
    DataSource source = DataSource::synthetic;
    SyntheticSpec synthetic;
    double val_fraction = 0.2;  // file sources: stratified hold-out from the training file(s)
    std::uint64_t split_seed = 1;
    std::string train_images, train_labels, test_images, test_labels;  // idx
    std::vector<std::string> train_files, test_files;                  // cifar
};

struct AnalysisConfig {
    double haf_tau = 0.8;
    std::uint64_t kmeans_seed = 0;
};

struct RunConfig {
    Arch arch = Arch::tiny_vgg;
    DataConfig data;
    TrainConfig train;
    AnalysisConfig analysis;
};

// Sections [data] [model] [train] [loss] [analysis]; `key = value`, `#` or
// `;` comments. Unknown sections/keys, malformed values and constraint
// violations throw ConfigError with the line number.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::string& path);
// Every key with its effective value; parse_config(emit_config(c)) == c.
std::string emit_config(const RunConfig& c);

Splits load_data(const DataConfig& d);

// Checkpoint container:
//   line 1: "NMHEBB-CKPT <version> <header bytes> <header crc32>"
//   JSON header (tags, config text, RNG state, tensor directory)
//   payload: raw little-endian values in directory order
constexpr int kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    std::string group;  // "theta", "running", "phi"
    Shape shape;
    std::vector<double> values;  // exact for either stored precision
};

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string phase;  // "phase1", "phase2", "baseline"
    Arch arch = Arch::tiny_vgg;
    std::size_t num_classes = 0, input_channels = 0, input_size = 0, embed_dim = 0;
    std::string hebbian_layer, embedding_layer;
    Precision precision = Precision::f32;
    std::string config;     // emit_config text
    std::string rng_state;  // std::mt19937_64 stream form
    std::map<std::string, std::string> meta;
    std::vector<StoredTensor> tensors;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint make_checkpoint(const ModelState<T>& model, const NeuromodulatorState<T>& nm, const std::string& phase,
                           const std::string& config_text);
// Rebuild a model and gate; names and shapes are validated against a fresh
// build of the recorded architecture.
template <typename T>
ModelState<T> model_from_checkpoint(const Checkpoint& c);
template <typename T>
NeuromodulatorState<T> nm_from_checkpoint(const Checkpoint& c);

// CSV emitters.
std::string run_report_header();
std::string run_report_row(const EpochRecord& r);
std::string filter_report_csv(const FilterReport& r);
std::string format_number(double v);

// tools/nmhebb entry point. Exit codes: 0 ok, 1 failed check or internal
// error, 2 config, 3 data, 4 numeric divergence, 5 checkpoint.
int run_cli(int argc, char** argv);

}  // namespace nmhebb
