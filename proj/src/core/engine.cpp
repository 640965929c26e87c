#include "engine.hpp"

#include <cmath>
#include <limits>

namespace backlink {

template <typename T>
Tensor<T> conform_input(Tensor<T> x, const Shape& input) {
  Shape want{x.dim(0)};
  want.insert(want.end(), input.begin(), input.end());
  if (x.shape() == want) return x;
  return x.reshaped(want);
}

double module_lr(const TrainOptions& options, std::size_t epoch, std::size_t module) {
  const double scale = module < options.module_lr_scale.size() ? options.module_lr_scale[module] : 1.0;
  return options.schedule.at(epoch) * scale;
}

std::uint64_t step_seed(const TrainOptions& options, std::size_t step) {
  return mix_seed(mix_seed(options.seed, 0x64726f70), step);
}

template <typename T>
double ParameterTrajectory<T>::max_diff(const ParameterTrajectory& other) const {
  double worst = 0.0;
  if (steps_.size() != other.steps_.size()) return std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < steps_.size(); ++m) {
    if (steps_[m].size() != other.steps_[m].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < steps_[m].size(); ++s) {
      const auto& a = steps_[m][s];
      const auto& b = other.steps_[m][s];
      if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
  }
  return worst;
}

template class ParameterTrajectory<float>;
template class ParameterTrajectory<double>;

EpochRecord EpochTally::finish(std::size_t epoch, double lr, double test_accuracy) const {
  EpochRecord r;
  r.epoch = epoch;
  r.lr = lr;
  r.test_accuracy = test_accuracy;
  const double n = samples > 0 ? static_cast<double>(samples) : 1.0;
  for (std::size_t m = 0; m < loss_sum.size(); ++m) {
    r.module_loss.push_back(loss_sum[m] / n);
    r.module_accuracy.push_back(static_cast<double>(correct[m]) / n);
  }
  return r;
}

template <typename T>
double evaluate_accuracy(Network<T>& net, const DatasetHandle& data, const Normalization& norm, std::size_t batch) {
  if (data.size() == 0) throw ConfigError("evaluation split is empty");
  if (batch == 0) batch = data.size();
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch) {
    const std::size_t e = std::min(data.size(), b + batch);
    const auto logits = net.predict(conform_input(normalized_inputs<T>(data, norm, b, e), net.spec().input));
    correct += count_correct(logits, std::span<const std::int32_t>(data.labels.data() + b, e - b));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void check_dataset(const NetworkSpec& spec, const DatasetHandle& data) {
  data.validate();
  if (data.classes > spec.classes)
    throw ConfigError("dataset has " + std::to_string(data.classes) + " classes but the network predicts " +
                      std::to_string(spec.classes));
  if (shape_elements(data.sample_shape()) != shape_elements(spec.input))
    throw ConfigError("dataset samples " + shape_string(data.sample_shape()) + " do not fit network input " +
                      shape_string(spec.input));
}

}  // namespace

template <typename T>
RunMetrics run_sequential(Network<T>& net, const BackLinkConfig& config, const DatasetHandle& train,
                          const DatasetHandle& test, const TrainOptions& options, StepObserver<T> observer) {
  config.validate();
  check_dataset(net.spec(), train);
  check_dataset(net.spec(), test);
  const std::size_t k = net.modules();
  std::vector<SgdState<T>> optimizers;
  for (std::size_t m = 0; m < k; ++m) optimizers.emplace_back(net.module_parameters(m), options.sgd);

  const Normalization norm = channel_statistics(train);
  BatchIterator<T> it(train, norm, options.batch);
  RunMetrics metrics;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t m = 0; m < k; ++m) optimizers[m].set_lr(module_lr(options, epoch, m));
    it.start_epoch(epoch);
    EpochTally tally(k);
    while (auto batch = it.next()) {
      ForwardContext ctx{Mode::Train, step_seed(options, step), true};
      auto traces = net.forward(conform_input(std::move(batch->inputs), net.spec().input), ctx);
      std::vector<Tensor<T>> errors;
      for (std::size_t m = 0; m < k; ++m) {
        auto res = softmax_xent(traces[m].tape.value(traces[m].logits), batch->labels);
        tally.loss_sum[m] += static_cast<double>(res.loss) * static_cast<double>(batch->labels.size());
        tally.correct[m] += res.correct;
        errors.push_back(std::move(res.error));
      }
      tally.samples += batch->labels.size();
      auto routed = route_backward<T>(traces, net.plan(), config, errors);
      for (std::size_t m = 0; m < k; ++m) {
        optimizers[m].step(routed.grads);
        if (observer) observer(m, step, optimizers[m].params());
      }
      ++step;
    }
    const double acc = evaluate_accuracy(net, test, norm, options.eval_batch);
    metrics.epochs.push_back(tally.finish(epoch, options.schedule.at(epoch), acc));
  }
  return metrics;
}

template Tensor<float> conform_input(Tensor<float>, const Shape&);
template Tensor<double> conform_input(Tensor<double>, const Shape&);
template double evaluate_accuracy(Network<float>&, const DatasetHandle&, const Normalization&, std::size_t);
template double evaluate_accuracy(Network<double>&, const DatasetHandle&, const Normalization&, std::size_t);
template RunMetrics run_sequential(Network<float>&, const BackLinkConfig&, const DatasetHandle&, const DatasetHandle&,
                                   const TrainOptions&, StepObserver<float>);
template RunMetrics run_sequential(Network<double>&, const BackLinkConfig&, const DatasetHandle&,
                                   const DatasetHandle&, const TrainOptions&, StepObserver<double>);

}  // namespace backlink
