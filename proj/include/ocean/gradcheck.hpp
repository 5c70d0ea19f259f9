#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "ocean/autodiff.hpp"
#include "ocean/error.hpp"

namespace ocean {

using ParamTensors = std::map<std::string, Tensor<double>>;
using ParamVars = std::map<std::string, ad::Var<double>>;

/// Builds a scalar-valued graph from the bound parameters and returns its root.
using GraphBuilder = std::function<ad::Var<double>(ad::Graph<double>&, const ParamVars&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Below this gradient magnitude the error is measured absolutely.
  double floor = 1e-8;
  // Skip elements whose +/- step evaluations land on a different smooth piece
  // of the function than the base point (relu kinks, clamps, min switches).
  bool skip_kinks = false;
  // Test hook applied to the analytic gradients before comparison.
  std::function<void(const std::string&, Tensor<double>&)> tamper;
};

struct GradCheckReport {
  double max_rel_err = 0;
  bool pass = false;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements excluded by skip_kinks
};

inline double gradient_error(double analytic, double numeric, double floor) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < floor ? diff : diff / scale;
}

/// Compares analytic gradients of `build` against central finite differences
/// for every element of every parameter.
inline GradCheckReport grad_check(const GraphBuilder& build, ParamTensors params, double tol,
                                  const GradCheckOptions& options = {}) {
  if (!(tol > 0)) throw UsageError("grad_check: tolerance must be positive");

  ParamTensors analytic;
  std::uint64_t base_signature = 0;
  {
    ad::Graph<double> g;
    ParamVars vars;
    for (const auto& [name, value] : params) vars.emplace(name, g.parameter(value));
    const auto root = build(g, vars);
    g.backward(root);
    base_signature = g.branch_signature();
    for (const auto& [name, var] : vars) {
      Tensor<double> grad = g.grad(var);
      if (options.tamper) options.tamper(name, grad);
      analytic.emplace(name, std::move(grad));
    }
  }

  bool crossed = false;
  auto evaluate = [&]() {
    ad::Graph<double> g;
    ParamVars vars;
    for (const auto& [name, value] : params) vars.emplace(name, g.constant(value));
    const double v = build(g, vars).value()[0];
    if (options.skip_kinks && g.branch_signature() != base_signature) crossed = true;
    return v;
  };

  GradCheckReport report;
  for (auto& [name, value] : params) {
    const Tensor<double>& a = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      crossed = false;
      value[i] = saved + options.step;
      const double up = evaluate();
      value[i] = saved - options.step;
      const double down = evaluate();
      value[i] = saved;
      if (crossed) {
        ++report.skipped;
        continue;
      }
      const double numeric = (up - down) / (2 * options.step);
      const double err = gradient_error(a[i], numeric, options.floor);
      ++report.checked;
      if (err > report.max_rel_err || std::isnan(err)) {
        report.max_rel_err = std::isnan(err) ? INFINITY : err;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace ocean
