#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "emoji/numeric/autograd.hpp"
#include "emoji/numeric/rng.hpp"

namespace emoji::numeric {

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t coords_per_tensor = 20;
  std::uint64_t seed = 1234;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::vector<std::pair<std::string, double>> per_parameter;
};

/// Builds the scalar loss on a fresh tape. Must be a pure function of the
/// parameter values (no dropout, no hidden state).
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares backward() gradients against central finite differences on a
/// random coordinate sample of every parameter tensor. `after_backward` is a
/// fault-injection hook that may tamper with the analytic gradients.
inline GradCheckReport grad_check(const LossBuilder& loss_fn, const std::vector<Parameter<double>*>& params,
                                  GradCheckOptions opts = {},
                                  const std::function<void()>& after_backward = {}) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  if (after_backward) after_backward();

  auto eval = [&] {
    Tape<double> tape(false);
    return loss_fn(tape).item();
  };

  Rng rng(opts.seed);
  GradCheckReport report;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > opts.coords_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opts.coords_per_tensor);
    }
    double worst = 0.0;
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opts.eps;
      const double up = eval();
      p->value[i] = saved - opts.eps;
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.denominator_floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
      ++report.coords_checked;
    }
    report.per_parameter.emplace_back(p->name, worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  for (auto* p : params) p->zero_grad();
  return report;
}

}  // namespace emoji::numeric
