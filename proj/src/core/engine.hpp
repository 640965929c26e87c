#pragma once

#include <functional>
#include <vector>

#include "data.hpp"
#include "optim.hpp"
#include "router.hpp"

namespace backlink {

struct TrainOptions {
  std::size_t epochs = 1;
  BatchOptions batch;
  SgdHyper sgd;
  LrSchedule schedule;
  std::uint64_t seed = 0;
  // Per-module multiplier on the scheduled lr; empty means 1 everywhere.
  std::vector<double> module_lr_scale;
  std::size_t eval_batch = 256;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<double> module_loss;
  std::vector<double> module_accuracy;
  double test_accuracy = 0.0;
  double lr = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
};

// Called after a module's optimizer step with the module's parameters. In
// pipeline mode each module's calls come from that module's worker thread.
template <typename T>
using StepObserver = std::function<void(std::size_t module, std::size_t step, const std::vector<Parameter<T>*>&)>;

// Reshapes a batch to (N, network input), e.g. IDX images for a dense network.
template <typename T>
Tensor<T> conform_input(Tensor<T> x, const Shape& input);

double module_lr(const TrainOptions& options, std::size_t epoch, std::size_t module);
std::uint64_t step_seed(const TrainOptions& options, std::size_t step);

// Fraction of `data` the final head classifies correctly, eval mode.
template <typename T>
double evaluate_accuracy(Network<T>& net, const DatasetHandle& data, const Normalization& norm, std::size_t batch);

// Reference schedule: every batch runs forward through all modules, all local
// losses, one routed backward and one optimizer step per module.
template <typename T>
RunMetrics run_sequential(Network<T>& net, const BackLinkConfig& config, const DatasetHandle& train,
                          const DatasetHandle& test, const TrainOptions& options, StepObserver<T> observer = {});

// Parameter values of every module after each of its steps. The observer may
// be called concurrently for different modules.
template <typename T>
class ParameterTrajectory {
 public:
  explicit ParameterTrajectory(std::size_t modules) : steps_(modules) {}
  StepObserver<T> observer() {
    return [this](std::size_t module, std::size_t, const std::vector<Parameter<T>*>& params) {
      std::vector<double> flat;
      for (const auto* p : params)
        for (std::size_t i = 0; i < p->value.size(); ++i) flat.push_back(static_cast<double>(p->value[i]));
      steps_.at(module).push_back(std::move(flat));
    };
  }
  const std::vector<std::vector<std::vector<double>>>& steps() const { return steps_; }
  // Largest elementwise difference; infinity when the step counts differ.
  double max_diff(const ParameterTrajectory& other) const;

 private:
  std::vector<std::vector<std::vector<double>>> steps_;
};

// Per-epoch accumulation of module losses and accuracies.
struct EpochTally {
  std::vector<double> loss_sum;
  std::vector<std::size_t> correct;
  std::size_t samples = 0;

  explicit EpochTally(std::size_t modules) : loss_sum(modules, 0.0), correct(modules, 0) {}
  EpochRecord finish(std::size_t epoch, double lr, double test_accuracy) const;
};

}  // namespace backlink
