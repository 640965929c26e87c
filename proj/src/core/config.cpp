#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace backlink {

using nlohmann::json;

const char* precision_name(Precision p) { return p == Precision::Wide ? "wide" : "standard"; }
const char* exec_mode_name(ExecMode m) { return m == ExecMode::Pipeline ? "pipeline" : "sequential"; }

Precision precision_from_name(const std::string& s) {
  if (s == "wide") return Precision::Wide;
  if (s == "standard") return Precision::Standard;
  throw ConfigError("precision must be 'wide' or 'standard', got '" + s + "'");
}

ExecMode exec_mode_from_name(const std::string& s) {
  if (s == "sequential") return ExecMode::Sequential;
  if (s == "pipeline") return ExecMode::Pipeline;
  throw ConfigError("mode must be 'sequential' or 'pipeline', got '" + s + "'");
}

const std::vector<OptimizerPreset>& optimizer_presets() {
  static const std::vector<OptimizerPreset> presets{
      {"alexnet", 0.01, 5e-4, 100},
      {"vgg16", 0.01, 1e-4, 150},
      {"resnet32", 0.5, 5e-4, 200},
      {"resnet110", 0.3, 5e-4, 200},
  };
  return presets;
}

namespace {

// Section reader that rejects unknown keys and reports the offending path.
class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("'" + path_ + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!allowed.count(it.key()))
        throw ConfigError("unknown key '" + it.key() + "' in '" + path_ + "'");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }

  template <typename V>
  V get(const std::string& key, V fallback) const {
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError("'" + path_ + "." + key + "' has the wrong type");
    }
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError("'" + path_ + "." + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  }

 private:
  const json& j_;
  std::string path_;
};

json empty_object() { return json::object(); }

LayerSpec layer_from_json(const json& j, const std::string& path) {
  Section s(j, path, {"type", "out", "stride", "p"});
  if (!s.has("type")) throw ConfigError("'" + path + "' needs a 'type'");
  LayerSpec l;
  l.type = layer_type_from_name(s.get<std::string>("type", ""));
  l.out = s.count("out", 0);
  l.stride = s.count("stride", 1);
  l.p = s.get<double>("p", 0.5);
  if ((l.type == LayerType::Dense) && l.out == 0) throw ConfigError("'" + path + "' dense layer needs 'out'");
  if (l.type == LayerType::Dropout && !(l.p >= 0.0 && l.p < 1.0))
    throw ConfigError("'" + path + "' dropout p must lie in [0, 1)");
  if (l.stride != 1 && l.stride != 2) throw ConfigError("'" + path + "' stride must be 1 or 2");
  return l;
}

json layer_to_json(const LayerSpec& l) {
  json j{{"type", layer_type_name(l.type)}};
  switch (l.type) {
    case LayerType::Dense:
    case LayerType::ResidualBlock:
      j["out"] = l.out;
      break;
    case LayerType::Conv3x3:
      j["out"] = l.out;
      j["stride"] = l.stride;
      break;
    case LayerType::Dropout:
      j["p"] = l.p;
      break;
    default:
      break;
  }
  return j;
}

void apply_optimizer_preset(ExperimentConfig& c, const std::string& name) {
  const auto& presets = optimizer_presets();
  auto it = std::find_if(presets.begin(), presets.end(), [&](const OptimizerPreset& p) { return p.name == name; });
  if (it == presets.end()) {
    std::string names;
    for (const auto& p : presets) names += (names.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown optimizer preset '" + name + "' (known: " + names + ")");
  }
  c.optimizer_preset = name;
  c.sgd.lr = it->lr;
  c.sgd.weight_decay = it->weight_decay;
  c.schedule.base = it->lr;
  c.schedule.milestones = {it->epochs / 2, it->epochs * 3 / 4};
  c.epochs = it->epochs;
}

}  // namespace

NetworkSpec network_from_json(const json& j) {
  Section s(j, "network", {"preset", "name", "input", "classes", "units"});
  const std::size_t classes = s.count("classes", 10);
  if (s.has("preset")) {
    if (s.has("units") || s.has("input"))
      throw ConfigError("'network' takes either 'preset' or 'input' + 'units', not both");
    return preset_network(s.get<std::string>("preset", ""), classes);
  }
  if (!s.has("input") || !s.has("units")) throw ConfigError("'network' needs 'preset' or both 'input' and 'units'");
  NetworkSpec spec;
  spec.name = s.get<std::string>("name", "custom");
  spec.classes = classes;
  spec.input = s.get<std::vector<std::size_t>>("input", {});
  const auto& units = s.at("units");
  if (!units.is_array()) throw ConfigError("'network.units' must be a list of units");
  for (std::size_t i = 0; i < units.size(); ++i) {
    const std::string path = "network.units[" + std::to_string(i) + "]";
    const json& u = units[i];
    UnitSpec unit;
    if (u.is_array()) {
      for (std::size_t k = 0; k < u.size(); ++k) unit.layers.push_back(layer_from_json(u[k], path + "[" + std::to_string(k) + "]"));
    } else {
      unit.layers.push_back(layer_from_json(u, path));
    }
    spec.units.push_back(std::move(unit));
  }
  return spec;
}

json network_to_json(const NetworkSpec& spec) {
  json units = json::array();
  for (const auto& u : spec.units) {
    json layers = json::array();
    for (const auto& l : u.layers) layers.push_back(layer_to_json(l));
    units.push_back(layers);
  }
  return {{"name", spec.name}, {"input", spec.input}, {"classes", spec.classes}, {"units", units}};
}

ExperimentConfig parse_config(const json& j) {
  Section top(j, "config",
              {"schema_version", "name", "network", "dataset", "partition", "backlink", "optimizer", "training",
               "seed", "seeds", "execution", "precision", "output", "gradcheck", "costmodel", "pipesim"});
  ExperimentConfig c;
  c.schema_version = top.get<int>("schema_version", kConfigSchemaVersion);
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(c.schema_version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  c.name = top.get<std::string>("name", "experiment");
  if (!top.has("network")) throw ConfigError("config needs a 'network' section");
  {
    const json& n = top.at("network");
    if (n.is_object() && n.contains("preset") && n["preset"].is_string()) c.network_preset = n["preset"];
    c.network = network_from_json(n);
  }

  const json none = empty_object();
  {
    Section d(top.has("dataset") ? top.at("dataset") : none, "dataset",
              {"source", "classes", "train_per_class", "test_per_class", "spread", "seed", "train_files", "test_file",
               "train_images", "train_labels", "test_images", "test_labels", "train_limit", "test_limit"});
    auto& ds = c.dataset;
    ds.source = d.get<std::string>("source", ds.source);
    ds.classes = d.count("classes", c.network.classes);
    ds.train_per_class = d.count("train_per_class", ds.train_per_class);
    ds.test_per_class = d.count("test_per_class", ds.test_per_class);
    ds.spread = d.get<double>("spread", ds.spread);
    ds.seed = d.get<std::uint64_t>("seed", ds.seed);
    ds.train_files = d.get<std::vector<std::string>>("train_files", {});
    ds.test_file = d.get<std::string>("test_file", "");
    ds.train_images = d.get<std::string>("train_images", "");
    ds.train_labels = d.get<std::string>("train_labels", "");
    ds.test_images = d.get<std::string>("test_images", "");
    ds.test_labels = d.get<std::string>("test_labels", "");
    ds.train_limit = d.count("train_limit", 0);
    ds.test_limit = d.count("test_limit", 0);
  }
  {
    Section p(top.has("partition") ? top.at("partition") : none, "partition", {"modules"});
    c.modules = p.count("modules", 1);
  }
  {
    Section b(top.has("backlink") ? top.at("backlink") : none, "backlink",
              {"length", "alpha", "classifier", "hidden", "reweight_each_unit"});
    c.backlink.length = b.count("length", 0);
    c.backlink.alpha = b.get<double>("alpha", 1.0);
    c.backlink.classifier.type = classifier_type_from_name(b.get<std::string>("classifier", "linear"));
    c.backlink.classifier.hidden = b.count("hidden", 128);
    c.backlink.classifier.classes = c.network.classes;
    c.backlink.reweight_each_unit = b.get<bool>("reweight_each_unit", false);
  }
  {
    Section t(top.has("training") ? top.at("training") : none, "training",
              {"epochs", "batch_size", "shuffle", "augment", "eval_batch"});
    Section o(top.has("optimizer") ? top.at("optimizer") : none, "optimizer",
              {"preset", "lr", "momentum", "weight_decay", "decay_all", "milestones", "factor"});
    if (o.has("preset")) apply_optimizer_preset(c, o.get<std::string>("preset", ""));
    c.sgd.lr = o.get<double>("lr", c.sgd.lr);
    c.sgd.momentum = o.get<double>("momentum", c.sgd.momentum);
    c.sgd.weight_decay = o.get<double>("weight_decay", c.sgd.weight_decay);
    c.sgd.decay_all = o.get<bool>("decay_all", c.sgd.decay_all);
    c.schedule.base = c.sgd.lr;
    c.schedule.milestones = o.get<std::vector<std::size_t>>("milestones", c.schedule.milestones);
    c.schedule.factor = o.get<double>("factor", c.schedule.factor);
    c.epochs = t.count("epochs", c.epochs);
    c.batch.batch_size = t.count("batch_size", 128);
    c.batch.shuffle = t.get<bool>("shuffle", true);
    c.batch.augment = t.get<bool>("augment", false);
    c.eval_batch = t.count("eval_batch", 256);
  }
  c.seed = top.get<std::uint64_t>("seed", 0);
  c.seeds = top.count("seeds", 1);
  {
    Section e(top.has("execution") ? top.at("execution") : none, "execution",
              {"mode", "staleness", "capacity", "timeout_ms"});
    c.mode = exec_mode_from_name(e.get<std::string>("mode", "sequential"));
    c.pipeline.staleness = e.count("staleness", c.mode == ExecMode::Pipeline ? 1 : 0);
    c.pipeline.capacity = e.count("capacity", 2);
    c.pipeline.timeout = std::chrono::milliseconds(e.count("timeout_ms", 60000));
  }
  c.precision = precision_from_name(top.get<std::string>("precision", "standard"));
  {
    Section o(top.has("output") ? top.at("output") : none, "output", {"dir"});
    c.out_dir = o.get<std::string>("dir", "");
  }
  {
    Section g(top.has("gradcheck") ? top.at("gradcheck") : none, "gradcheck",
              {"batch", "max_entries", "tolerance", "corrupt"});
    c.gradcheck.batch = g.count("batch", 4);
    c.gradcheck.max_entries = g.count("max_entries", 0);
    c.gradcheck.tolerance = g.get<double>("tolerance", 1e-4);
    c.gradcheck.corrupt = g.get<bool>("corrupt", false);
  }
  {
    Section m(top.has("costmodel") ? top.at("costmodel") : none, "costmodel",
              {"modules", "lengths", "comm_weight", "batches", "staleness", "uniform", "uniform_head"});
    c.costmodel.modules = m.get<std::vector<std::size_t>>("modules", c.costmodel.modules);
    c.costmodel.lengths = m.get<std::vector<std::size_t>>("lengths", c.costmodel.lengths);
    c.costmodel.comm_weight = m.get<double>("comm_weight", 0.0);
    c.costmodel.batches = m.count("batches", 32);
    c.costmodel.staleness = m.count("staleness", 1);
    c.costmodel.uniform = m.get<bool>("uniform", false);
    c.costmodel.uniform_head = m.get<double>("uniform_head", 0.25);
  }
  {
    Section p(top.has("pipesim") ? top.at("pipesim") : none, "pipesim",
              {"comm_weight", "check_equivalence", "equivalence_epochs"});
    c.pipesim.comm_weight = p.get<double>("comm_weight", 0.0);
    c.pipesim.check_equivalence = p.get<bool>("check_equivalence", true);
    c.pipesim.equivalence_epochs = p.count("equivalence_epochs", 1);
  }
  return c;
}

ExperimentConfig load_config_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_string(ss.str());
}

void ExperimentConfig::validate() {
  warnings.clear();
  network.resolve();
  const std::size_t units = network.units.size();
  if (modules == 0) throw ConfigError("partition.modules must be at least 1");
  if (modules > units)
    throw ConfigError("partition.modules = " + std::to_string(modules) + " exceeds the " + std::to_string(units) +
                      " units of network '" + network.name + "'");
  backlink.classifier.classes = network.classes;
  backlink.validate();
  if (!alpha_on_grid(backlink.alpha)) {
    std::ostringstream os;
    os << "alpha " << backlink.alpha << " is off the grid {0, 0.25, 0.5, 0.75, 1}";
    warnings.push_back(os.str());
  }
  const auto p = plan();
  const std::size_t largest = *std::max_element(p.sizes.begin(), p.sizes.end());
  if (modules > 1 && backlink.length > largest)
    warnings.push_back("length " + std::to_string(backlink.length) + " exceeds the largest module (" +
                       std::to_string(largest) + " units) and is clamped");
  const auto shapes = network.unit_shapes();
  for (std::size_t m = 0; m < modules; ++m) classifier_layers(backlink.classifier, shapes[p.end(m)]);
  if (backlink.classifier.hidden == 0) throw ConfigError("backlink.hidden must be positive");

  if (!(sgd.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (!(sgd.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be non-negative");
  if (!(schedule.factor > 0.0 && schedule.factor <= 1.0)) throw ConfigError("optimizer.factor must lie in (0, 1]");
  if (epochs == 0) throw ConfigError("training.epochs must be at least 1");
  if (batch.batch_size == 0) throw ConfigError("training.batch_size must be at least 1");
  if (eval_batch == 0) throw ConfigError("training.eval_batch must be at least 1");
  if (seeds == 0) throw ConfigError("seeds must be at least 1");
  if (pipeline.staleness > 1) throw ConfigError("execution.staleness must be 0 or 1");
  if (pipeline.capacity == 0) throw ConfigError("execution.capacity must be at least 1");
  if (pipeline.timeout.count() <= 0) throw ConfigError("execution.timeout_ms must be positive");
  if (mode == ExecMode::Pipeline && modules < 2) throw ConfigError("pipeline mode needs partition.modules >= 2");
  if (mode == ExecMode::Pipeline && backlink.reweight_each_unit)
    throw ConfigError("backlink.reweight_each_unit is only supported in sequential mode");

  const auto& ds = dataset;
  if (ds.source == "synthetic") {
    if (ds.classes == 0 || ds.train_per_class == 0 || ds.test_per_class == 0)
      throw ConfigError("synthetic dataset needs positive classes, train_per_class and test_per_class");
    if (ds.classes > network.classes)
      throw ConfigError("dataset.classes exceeds network.classes");
  } else if (ds.source == "cifar") {
    if (ds.train_files.empty() || ds.test_file.empty())
      throw ConfigError("cifar dataset needs 'train_files' and 'test_file'");
    for (const auto& f : ds.train_files)
      if (!std::filesystem::exists(f)) throw IoError("dataset file '" + f + "' does not exist");
    if (!std::filesystem::exists(ds.test_file)) throw IoError("dataset file '" + ds.test_file + "' does not exist");
  } else if (ds.source == "idx") {
    for (const auto* f : {&ds.train_images, &ds.train_labels, &ds.test_images, &ds.test_labels}) {
      if (f->empty()) throw ConfigError("idx dataset needs train/test image and label paths");
      if (!std::filesystem::exists(*f)) throw IoError("dataset file '" + *f + "' does not exist");
    }
  } else {
    throw ConfigError("dataset.source must be synthetic, cifar or idx, got '" + ds.source + "'");
  }

  if (gradcheck.batch < 2) throw ConfigError("gradcheck.batch must be at least 2 (batch norm needs a batch)");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
  if (costmodel.modules.empty()) throw ConfigError("costmodel.modules must list at least one K");
  if (costmodel.staleness > 1) throw ConfigError("costmodel.staleness must be 0 or 1");
  if (costmodel.batches == 0) throw ConfigError("costmodel.batches must be at least 1");
  if (!(costmodel.comm_weight >= 0.0) || !(pipesim.comm_weight >= 0.0))
    throw ConfigError("communication weights must be non-negative");
}

TrainOptions ExperimentConfig::train_options(std::uint64_t run_seed) const {
  TrainOptions o;
  o.epochs = epochs;
  o.batch = batch;
  o.batch.seed = run_seed;
  o.sgd = sgd;
  o.schedule = schedule;
  o.schedule.base = sgd.lr;
  o.seed = run_seed;
  o.eval_batch = eval_batch;
  return o;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["name"] = c.name;
  j["network"] = network_to_json(c.network);
  const auto& ds = c.dataset;
  json d{{"source", ds.source}};
  if (ds.source == "synthetic") {
    d["classes"] = ds.classes;
    d["train_per_class"] = ds.train_per_class;
    d["test_per_class"] = ds.test_per_class;
    d["spread"] = ds.spread;
    d["seed"] = ds.seed;
  } else if (ds.source == "cifar") {
    d["train_files"] = ds.train_files;
    d["test_file"] = ds.test_file;
  } else {
    d["train_images"] = ds.train_images;
    d["train_labels"] = ds.train_labels;
    d["test_images"] = ds.test_images;
    d["test_labels"] = ds.test_labels;
  }
  d["train_limit"] = ds.train_limit;
  d["test_limit"] = ds.test_limit;
  j["dataset"] = d;
  j["partition"] = {{"modules", c.modules}};
  j["backlink"] = {{"length", c.backlink.length},
                   {"alpha", c.backlink.alpha},
                   {"classifier", classifier_type_name(c.backlink.classifier.type)},
                   {"hidden", c.backlink.classifier.hidden},
                   {"reweight_each_unit", c.backlink.reweight_each_unit}};
  j["optimizer"] = {{"lr", c.sgd.lr},
                    {"momentum", c.sgd.momentum},
                    {"weight_decay", c.sgd.weight_decay},
                    {"decay_all", c.sgd.decay_all},
                    {"milestones", c.schedule.milestones},
                    {"factor", c.schedule.factor}};
  j["training"] = {{"epochs", c.epochs},
                   {"batch_size", c.batch.batch_size},
                   {"shuffle", c.batch.shuffle},
                   {"augment", c.batch.augment},
                   {"eval_batch", c.eval_batch}};
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["execution"] = {{"mode", exec_mode_name(c.mode)},
                    {"staleness", c.pipeline.staleness},
                    {"capacity", c.pipeline.capacity},
                    {"timeout_ms", c.pipeline.timeout.count()}};
  j["precision"] = precision_name(c.precision);
  j["output"] = {{"dir", c.out_dir}};
  j["gradcheck"] = {{"batch", c.gradcheck.batch},
                    {"max_entries", c.gradcheck.max_entries},
                    {"tolerance", c.gradcheck.tolerance},
                    {"corrupt", c.gradcheck.corrupt}};
  j["costmodel"] = {{"modules", c.costmodel.modules},
                    {"lengths", c.costmodel.lengths},
                    {"comm_weight", c.costmodel.comm_weight},
                    {"batches", c.costmodel.batches},
                    {"staleness", c.costmodel.staleness},
                    {"uniform", c.costmodel.uniform},
                    {"uniform_head", c.costmodel.uniform_head}};
  j["pipesim"] = {{"comm_weight", c.pipesim.comm_weight},
                  {"check_equivalence", c.pipesim.check_equivalence},
                  {"equivalence_epochs", c.pipesim.equivalence_epochs}};
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("seed");
  j.erase("seeds");
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::pair<DatasetHandle, DatasetHandle> load_datasets(const ExperimentConfig& c) {
  const auto& ds = c.dataset;
  DatasetHandle train, test;
  if (ds.source == "synthetic") {
    train = synth_blobs(ds.classes, ds.train_per_class, c.network.input, ds.seed, ds.spread, Split::Train);
    test = synth_blobs(ds.classes, ds.test_per_class, c.network.input, ds.seed, ds.spread, Split::Test);
  } else if (ds.source == "cifar") {
    for (const auto& f : ds.train_files) {
      auto part = load_cifar_binary(f, Split::Train);
      if (train.size() == 0) {
        train = std::move(part);
      } else {
        train.images.insert(train.images.end(), part.images.begin(), part.images.end());
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
        train.shape[0] = train.labels.size();
      }
    }
    test = load_cifar_binary(ds.test_file, Split::Test);
  } else {
    train = load_idx(ds.train_images, ds.train_labels, Split::Train);
    test = load_idx(ds.test_images, ds.test_labels, Split::Test);
  }
  if (ds.train_limit > 0 && train.size() > ds.train_limit) train = train.slice(0, ds.train_limit);
  if (ds.test_limit > 0 && test.size() > ds.test_limit) test = test.slice(0, ds.test_limit);
  train.classes = test.classes = std::max({train.classes, test.classes, c.network.classes});
  if (shape_elements(train.sample_shape()) != shape_elements(c.network.input))
    throw ConfigError("dataset samples " + shape_string(train.sample_shape()) + " do not fit network input " +
                      shape_string(c.network.input));
  return {std::move(train), std::move(test)};
}

}  // namespace backlink
