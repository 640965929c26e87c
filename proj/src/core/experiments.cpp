#include "experiments.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "records.hpp"
#include "verify.hpp"

namespace backlink {

using nlohmann::json;
namespace fs = std::filesystem;

std::string resolve_out_dir(const ExperimentConfig& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv("BACKLINK_OUT_DIR"); env && *env) return (fs::path(env) / c.name).string();
  return (fs::path("runs") / c.name).string();
}

namespace {

std::string prepare_dir(const ExperimentConfig& c) {
  const std::string dir = resolve_out_dir(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

json header(const ExperimentConfig& c, const std::string& hash, const std::string& command, std::uint64_t seed) {
  json h = make_record("run_header", hash);
  h["command"] = command;
  h["seed"] = seed;
  h["mode"] = exec_mode_name(c.mode);
  h["precision"] = precision_name(c.precision);
  h["network"] = c.network.name;
  h["modules"] = c.modules;
  h["length"] = c.backlink.length;
  h["alpha"] = c.backlink.alpha;
  h["classifier"] = classifier_type_name(c.backlink.classifier.type);
  h["staleness"] = c.pipeline.staleness;
  return h;
}

template <typename T>
RunMetrics train_once(const ExperimentConfig& c, std::uint64_t seed, const DatasetHandle& train,
                      const DatasetHandle& test) {
  Network<T> net(c.network, c.plan(), c.backlink.classifier, seed);
  const auto opts = c.train_options(seed);
  if (c.mode == ExecMode::Pipeline) return run_pipeline(net, c.backlink, train, test, opts, c.pipeline).metrics;
  return run_sequential(net, c.backlink, train, test, opts);
}

}  // namespace

CommandResult cmd_train(ExperimentConfig c) {
  c.validate();
  CommandResult result;
  result.warnings = c.warnings;
  const std::string hash = config_hash(c);
  const std::string dir = prepare_dir(c);
  const auto [train, test] = load_datasets(c);

  RecordWriter records(join(dir, "train.jsonl"));
  std::vector<std::string> columns{"config_hash", "seed", "epoch", "lr", "test_accuracy"};
  for (std::size_t m = 0; m < c.modules; ++m) {
    columns.push_back("module" + std::to_string(m) + "_loss");
    columns.push_back("module" + std::to_string(m) + "_accuracy");
  }
  CsvWriter csv(join(dir, "train.csv"), columns);

  std::vector<std::uint64_t> seeds;
  std::vector<double> finals;
  for (std::size_t s = 0; s < c.seeds; ++s) {
    const std::uint64_t seed = c.seed + s;
    records.write(header(c, hash, "train", seed));
    const RunMetrics m = c.precision == Precision::Wide ? train_once<double>(c, seed, train, test)
                                                        : train_once<float>(c, seed, train, test);
    for (const auto& e : m.epochs) {
      json r = make_record("epoch", hash);
      r["seed"] = seed;
      r["epoch"] = e.epoch;
      r["lr"] = e.lr;
      r["module_loss"] = e.module_loss;
      r["module_accuracy"] = e.module_accuracy;
      r["test_accuracy"] = e.test_accuracy;
      records.write(r);
      std::vector<std::string> cells{hash, std::to_string(seed), std::to_string(e.epoch), format_number(e.lr),
                                     format_number(e.test_accuracy)};
      for (std::size_t k = 0; k < c.modules; ++k) {
        cells.push_back(format_number(e.module_loss[k]));
        cells.push_back(format_number(e.module_accuracy[k]));
      }
      csv.row(cells);
    }
    const double final_acc = m.epochs.back().test_accuracy;
    json r = make_record("run_summary", hash);
    r["seed"] = seed;
    r["epochs"] = m.epochs.size();
    r["final_test_accuracy"] = final_acc;
    records.write(r);
    seeds.push_back(seed);
    finals.push_back(final_acc);
  }
  double mean = 0.0, var = 0.0;
  for (double f : finals) mean += f;
  mean /= static_cast<double>(finals.size());
  for (double f : finals) var += (f - mean) * (f - mean);
  const double sd = finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1)) : 0.0;
  json agg = make_record("aggregate", hash);
  agg["seeds"] = seeds;
  agg["per_seed"] = finals;
  agg["final_test_accuracy_mean"] = mean;
  agg["final_test_accuracy_std"] = sd;
  records.write(agg);

  result.files = {records.path(), csv.path()};
  result.summary = agg;
  return result;
}

CommandResult cmd_gradcheck(ExperimentConfig c) {
  c.validate();
  require_tiny(c.network);
  CommandResult result;
  result.warnings = c.warnings;
  const std::string hash = config_hash(c);
  const std::string dir = prepare_dir(c);
  const auto plan = c.plan();
  Network<double> net(c.network, plan, c.backlink.classifier, c.seed);
  jitter_biases(net, c.seed);
  const OracleBatch batch = random_oracle_batch(c.network, c.gradcheck.batch, c.seed);

  FdOptions fd;
  fd.tolerance = c.gradcheck.tolerance;
  fd.max_entries = c.gradcheck.max_entries;
  fd.seed = c.seed;
  fd.corrupt = c.gradcheck.corrupt;
  GradcheckReport report;
  for (auto& r : fd_surrogate_check(net, c.backlink, batch, fd)) report.checks.push_back(r);
  if (plan.modules() == 1) {
    report.checks.push_back(check_bp_equivalence(net, c.backlink, batch));
  } else {
    report.checks.push_back(check_gll_reduction(net, c.backlink, batch));
    report.checks.push_back(check_alpha_one(net, c.backlink, batch));
    report.checks.push_back(check_linearity(net, c.backlink, batch));
    report.checks.push_back(check_truncation(net, c.backlink, batch));
    BackLinkConfig full = c.backlink;
    full.length = *std::max_element(plan.sizes.begin(), plan.sizes.end());
    FdOptions full_fd = fd;
    full_fd.corrupt = false;
    for (auto r : fd_surrogate_check(net, full, batch, full_fd)) {
      r.name = "full_span_" + r.name;
      report.checks.push_back(r);
    }
    if (plan.modules() == 2 && c.backlink.effective_length(plan, 0) == plan.sizes[0] &&
        !c.backlink.reweight_each_unit)
      report.checks.push_back(check_full_span_monolithic(net, c.backlink, batch));
  }

  RecordWriter records(join(dir, "gradcheck.jsonl"));
  records.write(header(c, hash, "gradcheck", c.seed));
  std::size_t failed = 0;
  for (const auto& ch : report.checks) {
    json r = make_record("check", hash);
    r["name"] = ch.name;
    r["max_error"] = ch.max_error;
    r["tolerance"] = ch.tolerance;
    r["passed"] = ch.passed;
    r["detail"] = ch.detail;
    records.write(r);
    failed += ch.passed ? 0 : 1;
  }
  json s = make_record("gradcheck_summary", hash);
  s["passed"] = failed == 0;
  s["checks"] = report.checks.size();
  s["failed"] = failed;
  records.write(s);
  result.summary = s;
  result.summary["checks_detail"] = json::array();
  for (const auto& ch : report.checks)
    result.summary["checks_detail"].push_back(
        {{"name", ch.name}, {"max_error", ch.max_error}, {"tolerance", ch.tolerance}, {"passed", ch.passed}});
  result.files = {records.path()};
  result.status = failed == 0 ? 0 : 2;
  return result;
}

namespace {

CostModel cost_model_for(const ExperimentConfig& c, double comm) {
  CostModel model = c.costmodel.uniform
                        ? CostModel::uniform(c.network.units.size(), 1.0, 1.0, c.costmodel.uniform_head, 0.0)
                        : CostModel::from_spec(c.network, c.backlink.classifier);
  model.set_comm(comm);
  return model;
}

}  // namespace

CommandResult cmd_costmodel(ExperimentConfig c) {
  c.validate();
  CommandResult result;
  result.warnings = c.warnings;
  const std::string hash = config_hash(c);
  const std::string dir = prepare_dir(c);
  const std::size_t units = c.network.units.size();
  const CostModel model = cost_model_for(c, c.costmodel.comm_weight);
  const auto bp = estimate_memory(model, partition(units, 1), 0, TrainingMode::BP);

  RecordWriter records(join(dir, "costmodel.jsonl"));
  CsvWriter csv(join(dir, "costmodel.csv"),
                {"config_hash", "K", "l", "mode", "peak_memory", "backbone_peak", "relative_memory", "critical_path",
                 "relative_runtime", "speedup", "steady_state_speedup"});
  json rows = json::array();
  auto emit = [&](std::size_t k, std::size_t l, TrainingMode mode) {
    const auto plan = partition(units, k);
    const auto mem = estimate_memory(model, plan, l, mode);
    auto trace = synthesize_trace(plan, l, c.costmodel.staleness, c.pipeline.capacity, c.costmodel.batches);
    const auto rt = estimate_runtime(trace, model);
    json r = make_record("cost_row", hash);
    r["K"] = k;
    r["l"] = l;
    r["mode"] = training_mode_name(mode);
    r["peak_memory"] = mem.peak;
    r["backbone_peak"] = mem.backbone_peak;
    r["relative_memory"] = mem.peak / bp.peak;
    r["critical_path"] = rt.critical_path;
    r["relative_runtime"] = rt.critical_path / rt.bp_path;
    r["speedup"] = rt.speedup;
    r["steady_state_speedup"] = rt.steady_state_speedup;
    records.write(r);
    csv.row({hash, std::to_string(k), std::to_string(l), training_mode_name(mode), format_number(mem.peak),
             format_number(mem.backbone_peak), format_number(mem.peak / bp.peak), format_number(rt.critical_path),
             format_number(rt.critical_path / rt.bp_path), format_number(rt.speedup),
             format_number(rt.steady_state_speedup)});
    rows.push_back(r);
  };
  for (std::size_t k : c.costmodel.modules) {
    if (k == 0 || k > units) {
      result.warnings.push_back("skipping K = " + std::to_string(k) + " for a " + std::to_string(units) +
                                "-unit network");
      continue;
    }
    if (k == 1) {
      emit(1, 0, TrainingMode::BP);
      continue;
    }
    emit(k, 0, TrainingMode::GLL);
    for (std::size_t l : c.costmodel.lengths)
      if (l > 0) emit(k, l, TrainingMode::BackLink);
  }
  result.files = {records.path(), csv.path()};
  result.summary = {{"rows", rows}};
  return result;
}

namespace {

template <typename T>
PipelineResult<T> pipeline_once(const ExperimentConfig& c, const DatasetHandle& train, const DatasetHandle& test) {
  Network<T> net(c.network, c.plan(), c.backlink.classifier, c.seed);
  return run_pipeline(net, c.backlink, train, test, c.train_options(c.seed), c.pipeline);
}

// Lock-step pipeline against the sequential reference from the same
// initialization, wide precision.
double lockstep_divergence(const ExperimentConfig& c, const DatasetHandle& train, const DatasetHandle& test) {
  auto opts = c.train_options(c.seed);
  opts.epochs = c.pipesim.equivalence_epochs;
  Network<double> seq_net(c.network, c.plan(), c.backlink.classifier, c.seed);
  Network<double> pipe_net(c.network, c.plan(), c.backlink.classifier, c.seed);
  ParameterTrajectory<double> seq(c.modules), pipe(c.modules);
  run_sequential(seq_net, c.backlink, train, test, opts, seq.observer());
  PipelineOptions po = c.pipeline;
  po.staleness = 0;
  run_pipeline(pipe_net, c.backlink, train, test, opts, po, pipe.observer());
  return seq.max_diff(pipe);
}

}  // namespace

CommandResult cmd_pipesim(ExperimentConfig c) {
  c.mode = ExecMode::Pipeline;
  c.validate();
  CommandResult result;
  result.warnings = c.warnings;
  const std::string hash = config_hash(c);
  const std::string dir = prepare_dir(c);
  const auto [train, test] = load_datasets(c);

  ScheduleTrace trace;
  PipelineStats stats;
  if (c.precision == Precision::Wide) {
    auto r = pipeline_once<double>(c, train, test);
    trace = std::move(r.trace);
    stats = std::move(r.stats);
  } else {
    auto r = pipeline_once<float>(c, train, test);
    trace = std::move(r.trace);
    stats = std::move(r.stats);
  }
  const CostModel model = cost_model_for(c, c.pipesim.comm_weight);
  const RuntimeEstimate rt = estimate_runtime(trace, model);

  RecordWriter trace_out(join(dir, "pipesim_trace.jsonl"));
  for (const auto& e : trace.events) {
    json r = make_record("trace_event", hash);
    r["worker"] = e.key.worker;
    r["batch"] = e.key.batch;
    r["phase"] = phase_name(e.key.phase);
    r["start"] = e.start;
    r["end"] = e.end;
    r["deps"] = e.deps;
    trace_out.write(r);
  }

  // Every batch crosses every boundary exactly once, in order.
  bool conserved = true;
  const std::size_t steps = trace.batches;
  for (std::size_t b = 0; b < stats.produced.size(); ++b) {
    conserved = conserved && stats.produced[b] == stats.consumed[b] && stats.produced[b].size() == steps;
    for (std::size_t t = 0; conserved && t < stats.produced[b].size(); ++t) conserved = stats.produced[b][t] == t;
    const bool syncs = c.backlink.effective_length(trace.plan, b) > 0;
    conserved = conserved && stats.sync_messages[b] == (syncs ? steps : 0);
  }

  double divergence = 0.0;
  bool equivalent = true;
  if (c.pipesim.check_equivalence) {
    divergence = lockstep_divergence(c, train, test);
    equivalent = divergence <= 1e-10;
  }

  RecordWriter records(join(dir, "pipesim.jsonl"));
  records.write(header(c, hash, "pipesim", c.seed));
  json s = make_record("pipesim_summary", hash);
  s["staleness"] = c.pipeline.staleness;
  s["batches"] = steps;
  s["critical_path"] = rt.critical_path;
  s["bp_path"] = rt.bp_path;
  s["speedup"] = rt.speedup;
  s["steady_state_speedup"] = rt.steady_state_speedup;
  s["sync_messages"] = stats.sync_messages;
  s["sync_message_elements"] = stats.sync_message_elements;
  s["duplicate_divergence"] = stats.max_duplicate_divergence;
  s["queue_conservation"] = conserved;
  s["equivalence_checked"] = c.pipesim.check_equivalence;
  s["equivalence_max_diff"] = divergence;
  s["equivalence_passed"] = equivalent;
  records.write(s);

  result.files = {records.path(), trace_out.path()};
  result.summary = s;
  result.status = (conserved && equivalent && stats.max_duplicate_divergence == 0.0) ? 0 : 2;
  return result;
}

}  // namespace backlink
