#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace backlink {

bool GradcheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

OracleBatch random_oracle_batch(const NetworkSpec& spec, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x62617463));
  std::normal_distribution<double> normal(0.0, 1.0);
  Shape shape{batch};
  shape.insert(shape.end(), spec.input.begin(), spec.input.end());
  OracleBatch b;
  b.x = Tensor<double>(shape);
  for (auto& v : b.x.values()) v = normal(rng);
  std::uniform_int_distribution<std::int32_t> label(0, static_cast<std::int32_t>(spec.classes) - 1);
  for (std::size_t i = 0; i < batch; ++i) b.labels.push_back(label(rng));
  b.ctx = ForwardContext{Mode::Train, mix_seed(seed, 0x6d61736b), false};
  return b;
}

namespace {

std::vector<Tensor<double>> classifier_errors(const std::vector<ModuleTrace<double>>& traces,
                                              const std::vector<std::int32_t>& labels) {
  std::vector<Tensor<double>> errors;
  for (const auto& t : traces) errors.push_back(softmax_xent(t.tape.value(t.logits), labels).error);
  return errors;
}

const Tensor<double>* find_grad(const GradMap<double>& g, const Parameter<double>* p) {
  auto it = g.find(p);
  return it == g.end() ? nullptr : &it->second;
}

double grad_at(const GradMap<double>& g, const Parameter<double>* p, std::size_t i) {
  const auto* t = find_grad(g, p);
  return t ? (*t)[i] : 0.0;
}

// Largest elementwise |a - b| over the given parameters; missing entries count as zero.
double max_diff(const GradMap<double>& a, const GradMap<double>& b, const std::vector<Parameter<double>*>& params) {
  double m = 0.0;
  for (const auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      m = std::max(m, std::abs(grad_at(a, p, i) - grad_at(b, p, i)));
  return m;
}

double max_relative(const GradMap<double>& a, const GradMap<double>& b, const std::vector<Parameter<double>*>& params,
                    double floor) {
  double m = 0.0;
  for (const auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      m = std::max(m, relative_error(grad_at(a, p, i), grad_at(b, p, i), floor));
  return m;
}

CheckResult finish(std::string name, double err, double tol, std::string detail = {}) {
  CheckResult r{std::move(name), err, tol, err <= tol, std::move(detail)};
  return r;
}

BackLinkConfig with(const BackLinkConfig& c, std::size_t length, double alpha) {
  BackLinkConfig out = c;
  out.length = length;
  out.alpha = alpha;
  return out;
}

std::vector<Parameter<double>*> params_of_units(Network<double>& net, std::size_t begin, std::size_t end) {
  std::vector<Parameter<double>*> ps;
  for (std::size_t i = begin; i < end; ++i)
    for (auto* p : net.units()[i].parameters()) ps.push_back(p);
  return ps;
}

}  // namespace

GradMap<double> router_gradients(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  auto traces = net.forward(batch.x, batch.ctx);
  const auto errors = classifier_errors(traces, batch.labels);
  return route_backward<double>(traces, net.plan(), config, errors).grads;
}

GradMap<double> monolithic_gradients(Network<double>& net, const OracleBatch& batch,
                                     const std::vector<double>& weights) {
  if (weights.size() != net.modules()) throw ConfigError("one loss weight per module is required");
  Tape<double> tape;
  Var v = input(tape, batch.x);
  std::vector<Seed<double>> seeds;
  for (std::size_t m = 0; m < net.modules(); ++m) {
    for (std::size_t i = net.plan().begin(m); i < net.plan().end(m); ++i) v = net.units()[i].forward(tape, v, batch.ctx);
    const Var logits = net.head(m).forward(tape, v, batch.ctx);
    if (weights[m] != 0.0)
      seeds.push_back({logits, weights[m] * softmax_xent(tape.value(logits), batch.labels).error});
  }
  GradMap<double> grads;
  tape.backward(seeds, &grads);
  return grads;
}

std::vector<CheckResult> fd_surrogate_check(Network<double>& net, const BackLinkConfig& config,
                                            const OracleBatch& batch, const FdOptions& options) {
  GradMap<double> grads = router_gradients(net, config, batch);
  if (options.corrupt) {
    auto* p = net.module_parameters(0).front();
    auto& g = grads[p];
    if (g.empty()) g = Tensor<double>::zeros_like(p->value);
    g[0] += 1e-2 * std::max(1.0, std::abs(g[0]));
  }
  std::mt19937_64 rng(mix_seed(options.seed, 0x6664));
  std::vector<CheckResult> results;
  for (std::size_t m = 0; m < net.modules(); ++m) {
    const auto obj = build_surrogate_objective(net.plan(), config, m);
    SurrogateEvaluator<double> eval(net, batch.x, batch.labels, batch.ctx, obj);
    double worst = 0.0;
    std::string where;
    std::size_t probed = 0, refined = 0;
    for (auto* p : net.module_parameters(m)) {
      std::vector<std::size_t> idx(p->value.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      if (options.max_entries > 0 && idx.size() > options.max_entries) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(options.max_entries);
      }
      for (std::size_t i : idx) {
        const double v = p->value[i];
        const double analytic = grad_at(grads, p, i);
        auto central = [&](double h) {
          p->value[i] = v + h;
          const double fp = eval.value_for(p);
          p->value[i] = v - h;
          const double fm = eval.value_for(p);
          p->value[i] = v;
          return (fp - fm) / (2.0 * h);
        };
        double h = 1e-5 * std::max(1.0, std::abs(v));
        double fd = central(h);
        double err = relative_error(analytic, fd, options.floor);
        // A ReLU input or pooling tie closer than h makes the difference
        // straddle a kink; smaller steps step off it.
        for (int retry = 0; retry < 2 && err > options.tolerance; ++retry) {
          h *= 0.1;
          const double fd_small = central(h);
          const double err_small = relative_error(analytic, fd_small, options.floor);
          if (err_small < err) {
            err = err_small;
            fd = fd_small;
          }
          if (retry == 0) ++refined;
        }
        ++probed;
        if (err > worst) {
          worst = err;
          std::ostringstream os;
          os << p->name << "[" << i << "] router=" << analytic << " fd=" << fd;
          where = os.str();
        }
      }
    }
    std::ostringstream detail;
    detail << probed << " entries";
    if (refined > 0) detail << " (" << refined << " re-probed with smaller steps)";
    if (!where.empty()) detail << ", worst " << where;
    results.push_back(finish("fd_module_" + std::to_string(m), worst, options.tolerance, detail.str()));
  }
  return results;
}

CheckResult check_bp_equivalence(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  if (net.modules() != 1) throw ConfigError("BP equivalence needs K = 1");
  const auto r = router_gradients(net, config, batch);
  const auto m = monolithic_gradients(net, batch, {1.0});
  return finish("bp_equivalence", max_diff(r, m, net.all_parameters()), 1e-10);
}

CheckResult check_gll_reduction(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  const auto gll = with(config, 0, config.alpha);
  double worst = 0.0;
  std::mt19937_64 rng(0x676c6c);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t n = 0; n + 1 < net.modules(); ++n) {
    const auto before = router_gradients(net, gll, batch);
    std::vector<std::pair<Parameter<double>*, Tensor<double>>> saved;
    for (std::size_t m = n + 1; m < net.modules(); ++m)
      for (auto* p : net.module_parameters(m)) {
        saved.emplace_back(p, p->value);
        for (auto& v : p->value.values()) v += noise(rng);
      }
    const auto after = router_gradients(net, gll, batch);
    for (auto& [p, v] : saved) p->value = v;
    worst = std::max(worst, max_diff(before, after, net.module_parameters(n)));
  }
  return finish("gll_reduction", worst, 0.0);
}

CheckResult check_alpha_one(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  const std::size_t length = config.length > 0 ? config.length : net.plan().total_units();
  const auto a = router_gradients(net, with(config, length, 1.0), batch);
  const auto b = router_gradients(net, with(config, 0, 1.0), batch);
  double worst = 0.0;
  for (std::size_t m = 0; m < net.modules(); ++m) worst = std::max(worst, max_diff(a, b, net.backbone_parameters(m)));
  return finish("alpha_one_reduction", worst, 1e-10);
}

CheckResult check_linearity(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  if (config.reweight_each_unit) return finish("linearity", 0.0, 1e-10, "not applicable to per-unit reweighting");
  auto traces = net.forward(batch.x, batch.ctx);
  const auto errors = classifier_errors(traces, batch.labels);
  const auto routed = route_backward<double>(traces, net.plan(), config, errors).grads;
  double worst = 0.0;
  std::size_t checked = 0;
  const auto& plan = net.plan();
  for (std::size_t n = 0; n + 1 < net.modules(); ++n) {
    const std::size_t length = config.effective_length(plan, n);
    if (length == 0) continue;
    const double alpha = config.effective_alpha(plan, n);
    GradMap<double> g_local, g_global;
    const auto local = head_backward<double>(traces[n], errors[n], nullptr);
    local_path(traces[n], local, 1.0, &g_local);
    const auto next_local = head_backward<double>(traces[n + 1], errors[n + 1], nullptr);
    const auto global = module_input_error(traces[n + 1], next_local);
    global_path(traces[n], global, 0.0, length, &g_global);
    for (auto* p : params_of_units(net, plan.end(n) - length, plan.end(n)))
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double expect = alpha * grad_at(g_local, p, i) + (1.0 - alpha) * grad_at(g_global, p, i);
        worst = std::max(worst, std::abs(grad_at(routed, p, i) - expect));
        ++checked;
      }
  }
  return finish("linearity", worst, 1e-10, std::to_string(checked) + " in-range entries");
}

CheckResult check_truncation(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch) {
  if (config.reweight_each_unit) return finish("truncation", 0.0, 0.0, "not applicable to per-unit reweighting");
  const auto& plan = net.plan();
  auto measure = [&]() {
    auto traces = net.forward(batch.x, batch.ctx);
    const auto errors = classifier_errors(traces, batch.labels);
    const auto routed = route_backward<double>(traces, plan, config, errors).grads;
    double worst = 0.0;
    for (std::size_t n = 0; n < net.modules(); ++n) {
      const std::size_t length = config.effective_length(plan, n);
      const double alpha = config.effective_alpha(plan, n);
      GradMap<double> g_local;
      local_path(traces[n], head_backward<double>(traces[n], errors[n], nullptr), alpha, &g_local);
      // Whatever a below-range parameter gets beyond its scaled local gradient
      // would be attributed to the successor's loss.
      worst = std::max(worst, max_diff(routed, g_local, params_of_units(net, plan.begin(n), plan.end(n) - length)));
    }
    return worst;
  };
  double worst = measure();
  std::size_t perturbed = 0;
  for (std::size_t n = 0; n < net.modules(); ++n) {
    const std::size_t below = plan.sizes[n] - config.effective_length(plan, n);
    auto ps = params_of_units(net, plan.begin(n), plan.begin(n) + below);
    if (ps.empty()) continue;
    Parameter<double>* p = ps.front();
    const double saved = p->value[0];
    p->value[0] += 0.1;
    worst = std::max(worst, measure());
    p->value[0] = saved;
    ++perturbed;
  }
  return finish("truncation", worst, 0.0, std::to_string(perturbed) + " below-range perturbations");
}

CheckResult check_full_span_monolithic(Network<double>& net, const BackLinkConfig& config,
                                       const OracleBatch& batch, double tolerance) {
  if (net.modules() != 2) throw ConfigError("full-span monolithic check needs K = 2");
  if (config.effective_length(net.plan(), 0) != net.plan().sizes[0])
    throw ConfigError("full-span monolithic check needs l >= size of module 1");
  if (config.reweight_each_unit) throw ConfigError("full-span monolithic check assumes single weighting");
  const auto r = router_gradients(net, config, batch);
  const auto m = monolithic_gradients(net, batch, {config.alpha, 1.0 - config.alpha});
  return finish("full_span_monolithic", max_relative(r, m, net.backbone_parameters(0), 1e-6), tolerance);
}

NetworkSpec random_tiny_spec(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x74696e79));
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  NetworkSpec spec;
  spec.name = "random-" + std::to_string(seed);
  spec.classes = pick(2, 5);
  const std::size_t units = pick(3, 8);
  const std::size_t kind = pick(0, 2);  // 0 dense, 1 conv, 2 mixed
  if (kind == 0) {
    spec.input = {pick(3, 8)};
    for (std::size_t i = 0; i < units; ++i) {
      UnitSpec u{{LayerSpec::dense(0, pick(4, 16)), LayerSpec::relu()}};
      if (pick(0, 3) == 0) u.layers.push_back(LayerSpec::dropout(0.25));
      spec.units.push_back(u);
    }
    spec.resolve();
    return spec;
  }
  std::size_t c = pick(1, 3), hw = 4;
  spec.input = {c, hw, hw};
  const std::size_t spatial = kind == 1 ? units : pick(1, units - 1);
  for (std::size_t i = 0; i < spatial; ++i) {
    const std::size_t choice = pick(0, 2);
    if (choice == 0 || c > 8) {
      const std::size_t out = pick(2, 8);
      UnitSpec u{{LayerSpec::conv3x3(0, out), LayerSpec::batch_norm(0), LayerSpec::relu()}};
      if (hw >= 4 && pick(0, 2) == 0) {
        u.layers.push_back(LayerSpec::max_pool());
        hw /= 2;
      }
      spec.units.push_back(u);
      c = out;
    } else if (choice == 1 || hw < 2) {
      spec.units.push_back({{LayerSpec::residual(c, c)}});
    } else {
      spec.units.push_back({{LayerSpec::residual(c, 2 * c)}});
      c *= 2;
      hw = (hw + 1) / 2;
    }
  }
  for (std::size_t i = spatial; i < units; ++i) {
    UnitSpec u;
    if (i == spatial) {
      if (c * hw * hw <= 16) u.layers.push_back(LayerSpec::flatten());
      else u.layers.push_back(LayerSpec::avg_pool_global());
    }
    u.layers.push_back(LayerSpec::dense(0, pick(4, 16)));
    u.layers.push_back(LayerSpec::relu());
    spec.units.push_back(u);
  }
  spec.resolve();
  return spec;
}

void jitter_biases(Network<double>& net, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(mix_seed(seed, 0x6a6974));
  std::normal_distribution<double> noise(0.0, scale);
  for (auto* p : net.all_parameters())
    if (!p->decay)
      for (auto& v : p->value.values()) v += noise(rng);
}

void require_tiny(const NetworkSpec& spec) {
  NetworkSpec s = spec;
  s.resolve();
  if (s.units.size() > 8)
    throw ConfigError("gradcheck needs a tiny network (at most 8 units), got " + std::to_string(s.units.size()));
  std::size_t width = 0;
  for (const auto& u : s.units)
    for (const auto& l : u.layers) width = std::max(width, l.out);
  if (width > 16) throw ConfigError("gradcheck needs widths of at most 16, got " + std::to_string(width));
}

}  // namespace backlink
