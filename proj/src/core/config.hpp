#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "data.hpp"
#include "engine.hpp"
#include "pipeline.hpp"

namespace backlink {

inline constexpr int kConfigSchemaVersion = 1;

enum class Precision { Standard, Wide };
enum class ExecMode { Sequential, Pipeline };

const char* precision_name(Precision p);
const char* exec_mode_name(ExecMode m);
Precision precision_from_name(const std::string& s);
ExecMode exec_mode_from_name(const std::string& s);

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | cifar | idx
  // synthetic
  std::size_t classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 20;
  double spread = 1.0;
  std::uint64_t seed = 1234;
  // cifar
  std::vector<std::string> train_files;
  std::string test_file;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // Keep at most this many samples per split (0 keeps all).
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

struct GradcheckConfig {
  std::size_t batch = 4;
  std::size_t max_entries = 0;
  double tolerance = 1e-4;
  bool corrupt = false;
};

struct CostModelConfig {
  std::vector<std::size_t> modules{1, 2, 4, 8, 16};
  std::vector<std::size_t> lengths{0, 1, 2, 3, 4};
  double comm_weight = 0.0;
  std::size_t batches = 32;
  std::size_t staleness = 1;
  bool uniform = false;  // unit footprint and compute 1 instead of shape-derived
  double uniform_head = 0.25;
};

struct PipesimConfig {
  double comm_weight = 0.0;
  bool check_equivalence = true;
  std::size_t equivalence_epochs = 1;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name = "experiment";
  std::string network_preset;  // empty when the units are listed explicitly
  NetworkSpec network;
  DatasetConfig dataset;
  std::size_t modules = 1;
  BackLinkConfig backlink;
  std::string optimizer_preset;
  SgdHyper sgd;
  LrSchedule schedule;
  std::size_t epochs = 1;
  BatchOptions batch;
  std::size_t eval_batch = 256;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  ExecMode mode = ExecMode::Sequential;
  PipelineOptions pipeline;
  Precision precision = Precision::Standard;
  std::string out_dir;
  GradcheckConfig gradcheck;
  CostModelConfig costmodel;
  PipesimConfig pipesim;

  // Non-fatal findings of validate().
  std::vector<std::string> warnings;

  // Partition feasibility, ranges and file presence; fills `warnings`.
  void validate();
  PartitionPlan plan() const { return partition(network.units.size(), modules); }
  TrainOptions train_options(std::uint64_t run_seed) const;
};

// Optimizer presets per network family: lr, weight decay, epochs and
// milestones at half and three quarters of the run.
struct OptimizerPreset {
  std::string name;
  double lr;
  double weight_decay;
  std::size_t epochs;
};
const std::vector<OptimizerPreset>& optimizer_presets();

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
ExperimentConfig load_config_string(const std::string& text);

// Fully resolved form; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& c);
nlohmann::json network_to_json(const NetworkSpec& spec);
NetworkSpec network_from_json(const nlohmann::json& j);

// FNV-1a over the canonical resolved config, excluding seeds and output paths.
std::string config_hash(const ExperimentConfig& c);

// Training and test splits described by the dataset section.
std::pair<DatasetHandle, DatasetHandle> load_datasets(const ExperimentConfig& c);

}  // namespace backlink
