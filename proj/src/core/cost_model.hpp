#pragma once

#include <string>
#include <vector>

#include "network.hpp"

namespace backlink {

enum class TrainingMode { BP, GLL, BackLink };

const char* training_mode_name(TrainingMode m);
TrainingMode training_mode_from_name(const std::string& name);

// Analytic per-unit costs. head_* describe the auxiliary classifier a module
// would attach after unit i; comm[i] is the weight of sending across the
// boundary after unit i.
struct CostModel {
  std::vector<double> unit_footprint;
  std::vector<double> unit_compute;
  std::vector<double> head_footprint;
  std::vector<double> head_compute;
  std::vector<double> comm;

  std::size_t units() const { return unit_footprint.size(); }
  void validate() const;
  void set_comm(double weight);

  // Footprints are stored activation elements per sample; compute weights
  // are forward multiply-accumulates per sample scaled by `compute_scale`.
  static CostModel from_spec(const NetworkSpec& spec, const AuxClassifierSpec& head, double compute_scale = 1.0);
  static CostModel uniform(std::size_t units, double footprint = 1.0, double compute = 1.0,
                           double head_footprint = 0.25, double head_compute = 0.0);
};

struct MemoryEstimate {
  TrainingMode mode = TrainingMode::BP;
  std::vector<double> per_module;          // activations + classifier (+ duplicates)
  std::vector<double> per_module_backbone; // backbone activations (+ duplicates)
  double peak = 0.0;
  double backbone_peak = 0.0;
};

// BP keeps every unit plus the final classifier; GLL the largest module with
// its classifier; BackLink adds the predecessor's last min(l, size) units to
// each successor module.
MemoryEstimate estimate_memory(const CostModel& model, const PartitionPlan& plan, std::size_t length,
                               TrainingMode mode);

enum class Phase { Fwd, BwdLocal, BwdGlobal, Sync, Step };

const char* phase_name(Phase p);

struct EventKey {
  std::size_t worker = 0;
  std::size_t batch = 0;
  Phase phase = Phase::Fwd;
  friend bool operator==(const EventKey&, const EventKey&) = default;
};

// An event as a worker records it: cross-worker dependencies only, program
// order is implied by recording order.
struct TraceRecord {
  EventKey key;
  std::vector<EventKey> deps;
};

struct TraceEvent {
  EventKey key;
  std::vector<std::size_t> deps;  // event indices, program order included
  double start = 0.0;
  double end = 0.0;
};

struct ScheduleTrace {
  PartitionPlan plan;
  std::size_t length = 0;
  std::size_t staleness = 1;
  std::size_t capacity = 2;
  std::size_t batches = 0;
  std::vector<TraceEvent> events;

  std::size_t workers() const { return plan.modules(); }
  // Index of an event; throws when absent.
  std::size_t find(const EventKey& key) const;
  bool contains(const EventKey& key) const;
};

// Phases a worker runs per batch, in order.
std::vector<Phase> worker_phases(const PartitionPlan& plan, std::size_t length, std::size_t worker);

// Dependencies of one event under the pipeline protocol.
std::vector<EventKey> protocol_deps(const PartitionPlan& plan, std::size_t staleness, std::size_t capacity,
                                    const EventKey& key);

ScheduleTrace assemble_trace(const PartitionPlan& plan, std::size_t length, std::size_t staleness,
                             std::size_t capacity, std::size_t batches,
                             const std::vector<std::vector<TraceRecord>>& per_worker);

// The trace a pipeline run over `batches` steps would record.
ScheduleTrace synthesize_trace(const PartitionPlan& plan, std::size_t length, std::size_t staleness,
                               std::size_t capacity, std::size_t batches);

struct RuntimeEstimate {
  double critical_path = 0.0;
  double bp_path = 0.0;
  double speedup = 1.0;
  double per_batch_bp = 0.0;
  double per_batch_pipeline = 0.0;
  double steady_state_speedup = 1.0;
};

// Weighs every event by the cost model, schedules each as soon as its
// dependencies end (filling start/end) and compares with one BP worker.
// Throws SchedulingError on a cyclic trace.
RuntimeEstimate estimate_runtime(ScheduleTrace& trace, const CostModel& model);

double event_weight(const ScheduleTrace& trace, const CostModel& model, const EventKey& key);

}  // namespace backlink
