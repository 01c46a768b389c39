#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "ntt/autodiff.hpp"

namespace ntt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::map<std::string, double> per_param;  // max relative error per tensor
  std::size_t entries_checked = 0;
};

/// Compares backprop gradients with central differences for every entry of
/// every parameter. The relative error of an entry is
/// |a − n| / max(|a|, |n|, 1e-8). model_fn must be deterministic.
inline GradCheckReport finite_diff_check(const std::function<Var(Tape&)>& model_fn, ParameterSet& params,
                                         double epsilon) {
  if (params.empty()) throw Error("finite_diff_check: no parameters");
  if (!(epsilon > 0.0)) throw Error("finite_diff_check: epsilon must be positive");

  auto evaluate = [&]() {
    Tape tape;
    Var out = model_fn(tape);
    if (out.size() != 1) throw Error("finite_diff_check: model output is not scalar");
    return out.value()[0];
  };

  const double first = evaluate();
  const double second = evaluate();
  if (first != second) throw Error("finite_diff_check: model_fn is non-deterministic");

  params.zero_grad();
  {
    Tape tape;
    Var out = model_fn(tape);
    backprop(tape, out);
  }

  GradCheckReport report;
  params.for_each([&](Parameter& p) {
    double worst = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + epsilon;
      const double plus = evaluate();
      p.value[i] = saved - epsilon;
      const double minus = evaluate();
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      worst = std::max(worst, rel);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
      ++report.entries_checked;
    }
    report.per_param[p.name] = worst;
  });
  return report;
}

}  // namespace ntt
