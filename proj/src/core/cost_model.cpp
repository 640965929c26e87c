#include "cost_model.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

namespace backlink {

const char* training_mode_name(TrainingMode m) {
  switch (m) {
    case TrainingMode::BP: return "bp";
    case TrainingMode::GLL: return "gll";
    case TrainingMode::BackLink: return "backlink";
  }
  return "?";
}

TrainingMode training_mode_from_name(const std::string& name) {
  if (name == "bp") return TrainingMode::BP;
  if (name == "gll") return TrainingMode::GLL;
  if (name == "backlink") return TrainingMode::BackLink;
  throw ConfigError("unknown training mode '" + name + "' (expected bp, gll or backlink)");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Fwd: return "fwd";
    case Phase::BwdLocal: return "bwd_local";
    case Phase::BwdGlobal: return "bwd_global";
    case Phase::Sync: return "sync";
    case Phase::Step: return "step";
  }
  return "?";
}

void CostModel::validate() const {
  const std::size_t n = units();
  if (n == 0) throw ConfigError("cost model has no units");
  if (unit_compute.size() != n || head_footprint.size() != n || head_compute.size() != n || comm.size() != n)
    throw ConfigError("cost model arrays differ in length");
  for (const auto* v : {&unit_footprint, &unit_compute, &head_footprint, &head_compute, &comm})
    for (double x : *v)
      if (!(x >= 0.0)) throw ConfigError("cost model weights must be non-negative");
}

void CostModel::set_comm(double weight) { comm.assign(units(), weight); }

CostModel CostModel::from_spec(const NetworkSpec& spec, const AuxClassifierSpec& head, double compute_scale) {
  NetworkSpec s = spec;
  s.resolve();
  const auto shapes = s.unit_shapes();
  AuxClassifierSpec h = head;
  h.classes = s.classes;
  CostModel m;
  for (std::size_t i = 0; i < s.units.size(); ++i) {
    double fp = 0, macs = 0;
    Shape shape = shapes[i];
    for (const auto& l : s.units[i].layers) {
      fp += static_cast<double>(layer_stored_elements(l, shape));
      macs += static_cast<double>(layer_macs(l, shape));
      shape = layer_output_shape(l, shape);
    }
    double hfp = 0, hmacs = 0;
    for (const auto& l : classifier_layers(h, shape)) {
      hfp += static_cast<double>(layer_stored_elements(l, shape));
      hmacs += static_cast<double>(layer_macs(l, shape));
      shape = layer_output_shape(l, shape);
    }
    m.unit_footprint.push_back(fp);
    m.unit_compute.push_back(macs * compute_scale);
    m.head_footprint.push_back(hfp);
    m.head_compute.push_back(hmacs * compute_scale);
    m.comm.push_back(0.0);
  }
  return m;
}

CostModel CostModel::uniform(std::size_t units, double footprint, double compute, double head_footprint,
                             double head_compute) {
  CostModel m;
  m.unit_footprint.assign(units, footprint);
  m.unit_compute.assign(units, compute);
  m.head_footprint.assign(units, head_footprint);
  m.head_compute.assign(units, head_compute);
  m.comm.assign(units, 0.0);
  return m;
}

namespace {

double sum_range(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<long>(begin), v.begin() + static_cast<long>(end), 0.0);
}

void check_plan(const CostModel& model, const PartitionPlan& plan) {
  model.validate();
  if (plan.total_units() != model.units())
    throw ConfigError("partition covers " + std::to_string(plan.total_units()) + " units, cost model has " +
                      std::to_string(model.units()));
}

// Units of module m-1 duplicated onto worker m.
std::size_t dup_length(const PartitionPlan& plan, std::size_t length, std::size_t m) {
  return m == 0 ? 0 : std::min(length, plan.sizes[m - 1]);
}

}  // namespace

MemoryEstimate estimate_memory(const CostModel& model, const PartitionPlan& plan, std::size_t length,
                               TrainingMode mode) {
  check_plan(model, plan);
  MemoryEstimate est;
  est.mode = mode;
  const std::size_t n = model.units();
  if (mode == TrainingMode::BP) {
    const double backbone = sum_range(model.unit_footprint, 0, n);
    est.per_module_backbone = {backbone};
    est.per_module = {backbone + model.head_footprint[n - 1]};
  } else {
    for (std::size_t m = 0; m < plan.modules(); ++m) {
      double backbone = sum_range(model.unit_footprint, plan.begin(m), plan.end(m));
      if (mode == TrainingMode::BackLink) {
        const std::size_t d = dup_length(plan, length, m);
        if (d > 0) backbone += sum_range(model.unit_footprint, plan.end(m - 1) - d, plan.end(m - 1));
      }
      est.per_module_backbone.push_back(backbone);
      est.per_module.push_back(backbone + model.head_footprint[plan.end(m) - 1]);
    }
  }
  est.peak = *std::max_element(est.per_module.begin(), est.per_module.end());
  est.backbone_peak = *std::max_element(est.per_module_backbone.begin(), est.per_module_backbone.end());
  return est;
}

std::size_t ScheduleTrace::find(const EventKey& key) const {
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].key == key) return i;
  throw SchedulingError("trace has no " + std::string(phase_name(key.phase)) + " event for worker " +
                        std::to_string(key.worker) + ", batch " + std::to_string(key.batch));
}

bool ScheduleTrace::contains(const EventKey& key) const {
  return std::any_of(events.begin(), events.end(), [&](const TraceEvent& e) { return e.key == key; });
}

std::vector<Phase> worker_phases(const PartitionPlan& plan, std::size_t length, std::size_t worker) {
  std::vector<Phase> phases{Phase::Fwd, Phase::BwdLocal};
  if (dup_length(plan, length, worker) > 0) phases.push_back(Phase::BwdGlobal);
  if (worker + 1 < plan.modules() && std::min(length, plan.sizes[worker]) > 0) phases.push_back(Phase::Sync);
  phases.push_back(Phase::Step);
  return phases;
}

std::vector<EventKey> protocol_deps(const PartitionPlan& plan, std::size_t staleness, std::size_t capacity,
                                    const EventKey& key) {
  std::vector<EventKey> deps;
  const std::size_t k = key.worker, t = key.batch;
  if (key.phase == Phase::Fwd) {
    if (k > 0) deps.push_back({k - 1, t, Phase::Fwd});
    // A full activation buffer holds the producer until the consumer takes batch t - capacity.
    if (k + 1 < plan.modules() && t >= capacity) deps.push_back({k + 1, t - capacity, Phase::Fwd});
  } else if (key.phase == Phase::Sync) {
    if (t >= staleness) deps.push_back({k + 1, t - staleness, Phase::BwdGlobal});
  }
  return deps;
}

namespace {

using KeyTuple = std::tuple<std::size_t, std::size_t, int>;
KeyTuple tuple_of(const EventKey& k) { return {k.worker, k.batch, static_cast<int>(k.phase)}; }

}  // namespace

ScheduleTrace assemble_trace(const PartitionPlan& plan, std::size_t length, std::size_t staleness,
                             std::size_t capacity, std::size_t batches,
                             const std::vector<std::vector<TraceRecord>>& per_worker) {
  ScheduleTrace trace;
  trace.plan = plan;
  trace.length = length;
  trace.staleness = staleness;
  trace.capacity = capacity;
  trace.batches = batches;
  std::map<KeyTuple, std::size_t> index;
  for (const auto& records : per_worker)
    for (const auto& r : records) {
      if (!index.emplace(tuple_of(r.key), trace.events.size()).second)
        throw SchedulingError("duplicate trace event for worker " + std::to_string(r.key.worker));
      trace.events.push_back({r.key, {}, 0.0, 0.0});
    }
  std::size_t pos = 0;
  for (const auto& records : per_worker)
    for (std::size_t i = 0; i < records.size(); ++i, ++pos) {
      auto& ev = trace.events[pos];
      if (i > 0) ev.deps.push_back(pos - 1);
      for (const auto& d : records[i].deps) {
        auto it = index.find(tuple_of(d));
        if (it == index.end())
          throw SchedulingError("trace dependency on a missing " + std::string(phase_name(d.phase)) + " event");
        ev.deps.push_back(it->second);
      }
    }
  return trace;
}

ScheduleTrace synthesize_trace(const PartitionPlan& plan, std::size_t length, std::size_t staleness,
                               std::size_t capacity, std::size_t batches) {
  if (capacity == 0) throw ConfigError("buffer capacity must be positive");
  std::vector<std::vector<TraceRecord>> per_worker(plan.modules());
  for (std::size_t k = 0; k < plan.modules(); ++k) {
    const auto phases = worker_phases(plan, length, k);
    for (std::size_t t = 0; t < batches; ++t)
      for (Phase p : phases) {
        EventKey key{k, t, p};
        per_worker[k].push_back({key, protocol_deps(plan, staleness, capacity, key)});
      }
  }
  return assemble_trace(plan, length, staleness, capacity, batches, per_worker);
}

double event_weight(const ScheduleTrace& trace, const CostModel& model, const EventKey& key) {
  const auto& plan = trace.plan;
  const std::size_t k = key.worker;
  const double module = sum_range(model.unit_compute, plan.begin(k), plan.end(k)) + model.head_compute[plan.end(k) - 1];
  switch (key.phase) {
    case Phase::Fwd: return module + (k > 0 ? model.comm[plan.end(k - 1) - 1] : 0.0);
    case Phase::BwdLocal: return 2.0 * module;
    case Phase::BwdGlobal: {
      const std::size_t d = dup_length(plan, trace.length, k);
      // Duplicated units recompute their forward, then run backward.
      return 3.0 * sum_range(model.unit_compute, plan.end(k - 1) - d, plan.end(k - 1));
    }
    case Phase::Sync: return model.comm[plan.end(k) - 1];
    case Phase::Step: return 0.0;
  }
  return 0.0;
}

RuntimeEstimate estimate_runtime(ScheduleTrace& trace, const CostModel& model) {
  check_plan(model, trace.plan);
  const std::size_t n = trace.events.size();
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> users(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d : trace.events[i].deps) {
      if (d >= n) throw SchedulingError("trace dependency index out of range");
      ++indegree[i];
      users[d].push_back(i);
    }
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push_back(i);
  for (auto& e : trace.events) e.start = e.end = 0.0;
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::size_t i = ready.back();
    ready.pop_back();
    ++visited;
    auto& ev = trace.events[i];
    for (std::size_t d : ev.deps) ev.start = std::max(ev.start, trace.events[d].end);
    ev.end = ev.start + event_weight(trace, model, ev.key);
    for (std::size_t u : users[i])
      if (--indegree[u] == 0) ready.push_back(u);
  }
  if (visited != n) throw SchedulingError("schedule trace contains a dependency cycle");

  RuntimeEstimate est;
  const std::size_t last = model.units() - 1;
  est.per_batch_bp = 3.0 * (sum_range(model.unit_compute, 0, model.units()) + model.head_compute[last]);
  est.bp_path = est.per_batch_bp * static_cast<double>(trace.batches);
  for (const auto& e : trace.events) est.critical_path = std::max(est.critical_path, e.end);
  est.speedup = est.critical_path > 0 ? est.bp_path / est.critical_path : 1.0;

  // Completion time of each batch across all workers.
  std::vector<double> done(trace.batches, 0.0);
  for (const auto& e : trace.events)
    if (e.key.phase == Phase::Step && e.key.batch < trace.batches)
      done[e.key.batch] = std::max(done[e.key.batch], e.end);
  if (trace.batches >= 4) {
    const std::size_t lo = trace.batches / 2, hi = trace.batches - 1;
    est.per_batch_pipeline = (done[hi] - done[lo]) / static_cast<double>(hi - lo);
  } else {
    est.per_batch_pipeline = trace.batches > 0 ? est.critical_path / static_cast<double>(trace.batches) : 0.0;
  }
  est.steady_state_speedup = est.per_batch_pipeline > 0 ? est.per_batch_bp / est.per_batch_pipeline : 1.0;
  return est;
}

}  // namespace backlink
