#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cm2net/autodiff.hpp"

namespace cm2 {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor);
  /// keeps rounding noise on near-zero gradients from dominating.
  double floor = 1e-3;
};

/// Compares autodiff gradients of a scalar function against central finite
/// differences for every non-frozen parameter in `params`. `f` must build its
/// graph on the tape it is given, reading parameters through Tape::param.
inline GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                                  GradCheckOptions opts = {}) {
  {
    Tape tape;
    Var root = f(tape);
    tape.backward(root);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto evaluate = [&f]() {
    Tape tape;
    return f(tape).value().item();
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (p.frozen) continue;
    GradCheckEntry entry{p.name, 0.0, 0};
    auto values = p.value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + opts.step;
      const double up = evaluate();
      values[i] = orig - opts.step;
      const double down = evaluate();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      ++entry.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cm2
