#include "pipeline.hpp"

#include <atomic>
#include <exception>
#include <memory>
#include <thread>

namespace backlink {

template <typename T>
GradSyncMessage<T> concat_grads(std::size_t batch, const std::vector<const Parameter<T>*>& params,
                                const GradMap<T>& grads) {
  GradSyncMessage<T> msg;
  msg.batch = batch;
  for (const auto* p : params) {
    msg.shapes.push_back(p->value.shape());
    auto it = grads.find(p);
    if (it == grads.end()) {
      msg.values.insert(msg.values.end(), p->value.size(), T{0});
    } else {
      const auto& v = it->second.values();
      msg.values.insert(msg.values.end(), v.begin(), v.end());
    }
  }
  return msg;
}

template <typename T>
std::vector<Tensor<T>> deconcat_grads(const GradSyncMessage<T>& msg, const std::vector<Parameter<T>*>& params) {
  if (msg.shapes.size() != params.size())
    throw SchedulingError("gradient message carries " + std::to_string(msg.shapes.size()) + " tensors, owner has " +
                          std::to_string(params.size()) + " duplicated parameters");
  std::vector<Tensor<T>> out;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (msg.shapes[i] != params[i]->value.shape())
      throw DimensionError("gradient message shape " + shape_string(msg.shapes[i]) + " does not match " +
                           params[i]->name + " " + shape_string(params[i]->value.shape()));
    const std::size_t n = shape_elements(msg.shapes[i]);
    if (offset + n > msg.values.size()) throw SchedulingError("gradient message is truncated");
    out.emplace_back(msg.shapes[i], std::vector<T>(msg.values.begin() + static_cast<long>(offset),
                                                   msg.values.begin() + static_cast<long>(offset + n)));
    offset += n;
  }
  if (offset != msg.values.size()) throw SchedulingError("gradient message has trailing values");
  return out;
}

namespace {

template <typename T>
struct Activation {
  std::size_t batch = 0;
  Tensor<T> features;
  Tensor<T> range_input;
  std::vector<Tensor<T>> range_params;
  std::uint64_t seed = 0;
  std::vector<std::int32_t> labels;
};

// Rendezvous between the workers and the evaluating main thread at epoch ends.
class EpochGate {
 public:
  explicit EpochGate(std::size_t workers) : workers_(workers) {}

  void arrive(std::size_t epoch) {
    std::unique_lock lock(mu_);
    ++arrived_;
    cv_.notify_all();
    cv_.wait(lock, [&] { return aborted_ || released_ > epoch; });
    if (aborted_) throw SchedulingError("pipeline aborted");
  }
  // False when the run was aborted.
  bool wait_all(std::size_t epoch) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return aborted_ || arrived_ >= workers_ * (epoch + 1); });
    return !aborted_;
  }
  void release(std::size_t epoch) {
    std::lock_guard lock(mu_);
    released_ = epoch + 1;
    cv_.notify_all();
  }
  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  std::size_t workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t arrived_ = 0;
  std::size_t released_ = 0;
  bool aborted_ = false;
};

template <typename T>
std::vector<const Parameter<T>*> const_params(const std::vector<Parameter<T>*>& ps) {
  return {ps.begin(), ps.end()};
}

}  // namespace

template <typename T>
PipelineResult<T> run_pipeline(Network<T>& net, const BackLinkConfig& config, const DatasetHandle& train,
                               const DatasetHandle& test, const TrainOptions& options, const PipelineOptions& pipe,
                               StepObserver<T> observer) {
  config.validate();
  const std::size_t k_count = net.modules();
  const PartitionPlan& plan = net.plan();
  if (k_count < 2) throw ConfigError("pipeline mode needs at least 2 modules");
  if (pipe.staleness > 1) throw ConfigError("staleness must be 0 or 1");
  if (config.reweight_each_unit) throw ConfigError("per-unit reweighting is only available in sequential mode");
  train.validate();
  test.validate();
  if (shape_elements(train.sample_shape()) != shape_elements(net.spec().input))
    throw ConfigError("dataset samples " + shape_string(train.sample_shape()) + " do not fit network input " +
                      shape_string(net.spec().input));

  const Normalization norm = channel_statistics(train);
  BatchIterator<T> iterator(train, norm, options.batch);
  const std::size_t per_epoch = iterator.batches_per_epoch();
  const std::size_t total_steps = per_epoch * options.epochs;

  using ActQueue = BoundedQueue<Activation<T>>;
  using SyncQueue = BoundedQueue<GradSyncMessage<T>>;
  std::vector<std::unique_ptr<ActQueue>> act_q;
  std::vector<std::unique_ptr<SyncQueue>> sync_q;
  for (std::size_t b = 0; b + 1 < k_count; ++b) {
    act_q.push_back(std::make_unique<ActQueue>(pipe.capacity, pipe.timeout));
    sync_q.push_back(std::make_unique<SyncQueue>(pipe.staleness + 2, pipe.timeout));
  }

  EpochGate gate(k_count);
  std::vector<EpochTally> tallies(k_count, EpochTally(k_count));
  std::vector<std::vector<TraceRecord>> records(k_count);
  PipelineStats stats;
  stats.produced.resize(k_count - 1);
  stats.consumed.resize(k_count - 1);
  stats.sync_messages.assign(k_count - 1, 0);
  stats.sync_message_elements.assign(k_count - 1, 0);
  std::vector<double> divergence(k_count, 0.0);

  std::mutex error_mu;
  std::exception_ptr first_error;
  auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(error_mu);
      if (!first_error) first_error = e;
    }
    for (auto& q : act_q) q->close();
    for (auto& q : sync_q) q->close();
    gate.abort();
  };

  auto worker = [&](std::size_t k) {
    try {
      const T alpha = static_cast<T>(config.effective_alpha(plan, k));
      const std::size_t own_length = config.effective_length(plan, k);
      const std::size_t pred_length = k > 0 ? config.effective_length(plan, k - 1) : 0;
      SgdState<T> opt(net.module_parameters(k), options.sgd);

      // Owner side: in-range parameters whose global gradients arrive from k + 1.
      std::vector<Parameter<T>*> owned_range;
      for (std::size_t i = plan.end(k) - own_length; i < plan.end(k); ++i)
        for (auto* p : net.units()[i].parameters()) owned_range.push_back(p);

      // Successor side: copies of the predecessor's in-range units.
      std::vector<Unit<T>> dups;
      std::vector<Parameter<T>*> dup_params;
      if (pred_length > 0) {
        dups.reserve(pred_length);
        for (std::size_t i = plan.end(k - 1) - pred_length; i < plan.end(k - 1); ++i)
          dups.emplace_back(net.spec().units[i], i, 0, "dup");
        for (auto& u : dups)
          for (auto* p : u.parameters()) dup_params.push_back(p);
      }
      const T dup_scale = k > 0 ? T{1} - static_cast<T>(config.effective_alpha(plan, k - 1)) : T{0};

      auto& rec = records[k];
      std::size_t step = 0;
      for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        opt.set_lr(module_lr(options, epoch, k));
        if (k == 0) iterator.start_epoch(epoch);
        tallies[k] = EpochTally(k_count);
        for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
          // fwd
          Activation<T> in;
          if (k == 0) {
            auto batch = iterator.next();
            if (!batch) throw SchedulingError("data iterator ended early");
            in.batch = step;
            in.features = conform_input(std::move(batch->inputs), net.spec().input);
            in.labels = std::move(batch->labels);
            in.seed = step_seed(options, step);
          } else {
            in = act_q[k - 1]->pop();
            stats.consumed[k - 1].push_back(in.batch);
            if (in.batch != step)
              throw SchedulingError("worker " + std::to_string(k) + " expected batch " + std::to_string(step) +
                                    ", received " + std::to_string(in.batch));
          }
          ForwardContext ctx{Mode::Train, in.seed, true};
          auto trace = net.forward_module(k, in.features, ctx);
          auto res = softmax_xent(trace.tape.value(trace.logits), in.labels);
          tallies[k].loss_sum[k] += static_cast<double>(res.loss) * static_cast<double>(in.labels.size());
          tallies[k].correct[k] += res.correct;
          tallies[k].samples += in.labels.size();
          if (k + 1 < k_count) {
            Activation<T> out;
            out.batch = step;
            out.features = trace.tape.value(trace.features());
            if (own_length > 0) {
              out.range_input = trace.tape.value(trace.unit_input(plan.sizes[k] - own_length));
              for (auto* p : owned_range) out.range_params.push_back(p->value);
            }
            out.seed = in.seed;
            out.labels = in.labels;
            stats.produced[k].push_back(step);
            act_q[k]->push(std::move(out));
          }
          EventKey key{k, step, Phase::Fwd};
          rec.push_back({key, {}});
          if (k > 0) rec.back().deps.push_back({k - 1, in.batch, Phase::Fwd});
          if (k + 1 < k_count && step >= pipe.capacity) rec.back().deps.push_back({k + 1, step - pipe.capacity, Phase::Fwd});

          // bwd_local
          GradMap<T> grads;
          const Tensor<T> local = head_backward(trace, res.error, &grads);
          Tensor<T> input_error = local_path(trace, local, alpha, &grads);
          rec.push_back({{k, step, Phase::BwdLocal}, {}});

          // bwd_global: the predecessor's in-range units replayed with its
          // parameter values, fed this module's input error.
          if (!dups.empty()) {
            const Tensor<T> delta = std::move(input_error);
            if (in.range_params.size() != dup_params.size())
              throw SchedulingError("activation message carries the wrong number of duplicated parameters");
            for (std::size_t i = 0; i < dup_params.size(); ++i) dup_params[i]->value = in.range_params[i];
            Tape<T> tape;
            Var v = stop_grad(tape, input(tape, in.range_input));
            const ForwardContext dup_ctx{Mode::Train, in.seed, false};
            for (auto& u : dups) v = u.forward(tape, v, dup_ctx);
            divergence[k] = std::max(divergence[k], static_cast<double>(max_abs_diff(tape.value(v), in.features)));
            const Var out = scale_grad(tape, v, dup_scale);
            const Seed<T> seed{out, delta};
            GradMap<T> global;
            tape.backward(std::span<const Seed<T>>(&seed, 1), &global);
            auto msg = concat_grads(step, const_params(dup_params), global);
            stats.sync_message_elements[k - 1] = msg.values.size();
            sync_q[k - 1]->push(std::move(msg));
            rec.push_back({{k, step, Phase::BwdGlobal}, {}});
          }

          // sync
          if (own_length > 0) {
            TraceRecord r{{k, step, Phase::Sync}, {}};
            if (step >= pipe.staleness) {
              auto msg = sync_q[k]->pop();
              ++stats.sync_messages[k];
              if (msg.batch != step - pipe.staleness)
                throw SchedulingError("worker " + std::to_string(k) + " expected gradients of batch " +
                                      std::to_string(step - pipe.staleness) + ", received " +
                                      std::to_string(msg.batch));
              auto g = deconcat_grads(msg, owned_range);
              for (std::size_t i = 0; i < owned_range.size(); ++i) accumulate(grads, owned_range[i], g[i]);
              r.deps.push_back({k + 1, msg.batch, Phase::BwdGlobal});
            }
            rec.push_back(std::move(r));
          }

          // step
          opt.step(grads);
          if (observer) observer(k, step, opt.params());
          rec.push_back({{k, step, Phase::Step}, {}});
        }
        gate.arrive(epoch);
      }
      // The last batch's gradients arrive after the final step; take them off
      // the queue so every message is consumed exactly once.
      if (own_length > 0 && pipe.staleness == 1 && total_steps > 0) {
        sync_q[k]->pop();
        ++stats.sync_messages[k];
      }
    } catch (...) {
      fail(std::current_exception());
    }
  };

  PipelineResult<T> result;
  {
    std::vector<std::jthread> threads;
    for (std::size_t k = 0; k < k_count; ++k) threads.emplace_back(worker, k);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      if (!gate.wait_all(epoch)) break;
      try {
        EpochTally merged(k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
          merged.loss_sum[k] = tallies[k].loss_sum[k];
          merged.correct[k] = tallies[k].correct[k];
        }
        merged.samples = tallies[0].samples;
        const double acc = evaluate_accuracy(net, test, norm, options.eval_batch);
        result.metrics.epochs.push_back(merged.finish(epoch, options.schedule.at(epoch), acc));
      } catch (...) {
        fail(std::current_exception());
        break;
      }
      gate.release(epoch);
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  for (double d : divergence) stats.max_duplicate_divergence = std::max(stats.max_duplicate_divergence, d);
  result.stats = std::move(stats);
  result.trace = assemble_trace(plan, config.length, pipe.staleness, pipe.capacity, total_steps, records);
  return result;
}

template GradSyncMessage<float> concat_grads(std::size_t, const std::vector<const Parameter<float>*>&,
                                             const GradMap<float>&);
template GradSyncMessage<double> concat_grads(std::size_t, const std::vector<const Parameter<double>*>&,
                                              const GradMap<double>&);
template std::vector<Tensor<float>> deconcat_grads(const GradSyncMessage<float>&,
                                                   const std::vector<Parameter<float>*>&);
template std::vector<Tensor<double>> deconcat_grads(const GradSyncMessage<double>&,
                                                    const std::vector<Parameter<double>*>&);
template PipelineResult<float> run_pipeline(Network<float>&, const BackLinkConfig&, const DatasetHandle&,
                                            const DatasetHandle&, const TrainOptions&, const PipelineOptions&,
                                            StepObserver<float>);
template PipelineResult<double> run_pipeline(Network<double>&, const BackLinkConfig&, const DatasetHandle&,
                                             const DatasetHandle&, const TrainOptions&, const PipelineOptions&,
                                             StepObserver<double>);

}  // namespace backlink
