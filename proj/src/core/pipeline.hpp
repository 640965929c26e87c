#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>

#include "cost_model.hpp"
#include "engine.hpp"

namespace backlink {

// Bounded FIFO. push blocks while full, pop while empty; both give up with a
// SchedulingError after `timeout` or once the queue is closed.
template <typename M>
class BoundedQueue {
 public:
  BoundedQueue(std::size_t capacity, std::chrono::milliseconds timeout) : capacity_(capacity), timeout_(timeout) {
    if (capacity == 0) throw ConfigError("queue capacity must be positive");
  }

  void push(M item) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout_, [&] { return closed_ || items_.size() < capacity_; }))
      throw SchedulingError("timed out waiting for queue space (possible deadlock)");
    if (closed_) throw SchedulingError("queue closed");
    items_.push_back(std::move(item));
    ++pushed_;
    cv_.notify_all();
  }

  M pop() {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout_, [&] { return closed_ || !items_.empty(); }))
      throw SchedulingError("timed out waiting for a message (possible deadlock)");
    if (items_.empty()) throw SchedulingError("queue closed");
    M item = std::move(items_.front());
    items_.pop_front();
    ++popped_;
    cv_.notify_all();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t pushed() const {
    std::lock_guard lock(mu_);
    return pushed_;
  }
  std::size_t popped() const {
    std::lock_guard lock(mu_);
    return popped_;
  }

 private:
  std::size_t capacity_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<M> items_;
  bool closed_ = false;
  std::size_t pushed_ = 0, popped_ = 0;
};

// Global-path gradients of every duplicated parameter of one boundary,
// flattened in parameter order.
template <typename T>
struct GradSyncMessage {
  std::size_t batch = 0;
  std::vector<T> values;
  std::vector<Shape> shapes;
};

template <typename T>
GradSyncMessage<T> concat_grads(std::size_t batch, const std::vector<const Parameter<T>*>& params,
                                const GradMap<T>& grads);
// Inverse of concat_grads; shapes must match `params` one to one.
template <typename T>
std::vector<Tensor<T>> deconcat_grads(const GradSyncMessage<T>& msg, const std::vector<Parameter<T>*>& params);

struct PipelineOptions {
  std::size_t staleness = 1;
  std::size_t capacity = 2;
  std::chrono::milliseconds timeout{60000};
};

struct PipelineStats {
  // Per boundary b (between worker b and b+1).
  std::vector<std::vector<std::size_t>> produced;  // activation batch tags sent
  std::vector<std::vector<std::size_t>> consumed;  // activation batch tags received
  std::vector<std::size_t> sync_messages;           // gradient messages received by the owner
  std::vector<std::size_t> sync_message_elements;   // values per gradient message
  // Largest difference between a duplicate's recomputed output and the owner's.
  double max_duplicate_divergence = 0.0;
};

template <typename T>
struct PipelineResult {
  RunMetrics metrics;
  ScheduleTrace trace;
  PipelineStats stats;
};

// K workers, one per module, exchanging activations forward and duplicated-unit
// gradients backward. Staleness 0 waits for the same batch's global gradients
// before stepping; staleness 1 applies those of the previous batch.
template <typename T>
PipelineResult<T> run_pipeline(Network<T>& net, const BackLinkConfig& config, const DatasetHandle& train,
                               const DatasetHandle& test, const TrainOptions& options,
                               const PipelineOptions& pipe = {}, StepObserver<T> observer = {});

}  // namespace backlink
