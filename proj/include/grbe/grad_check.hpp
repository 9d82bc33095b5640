#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "grbe/params.hpp"
#include "grbe/rng.hpp"

namespace grbe {

struct GradCheckIssue {
  std::string param;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  std::vector<GradCheckIssue> worst;        // up to 10, descending rel_error
  std::map<std::string, double> group_max;  // per-parameter max rel error
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Central-difference gradient check of a scalar loss against the tape's
/// analytic gradient. `build` must be a deterministic function of the
/// parameters: any randomness inside has to be frozen by the caller.
///
/// Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckReport grad_check(const ParamStore& params,
                                  const std::function<ad::Value(ad::Tape&, const BoundParams&)>& build,
                                  double step = 1e-5, int max_coords = 1500, std::uint64_t seed = 0) {
  require(step > 0.0, "grad_check: step must be positive");

  GradStore analytic;
  {
    ad::Tape tape;
    BoundParams bound = bind_params(tape, params);
    ad::Value loss = build(tape, bound);
    tape.backward(loss);
    analytic = collect_grads(tape, bound);
  }

  const auto eval = [&](const ParamStore& p) {
    ad::Tape tape;
    BoundParams bound = bind_params(tape, p);
    return build(tape, bound).scalar();
  };

  // Enumerate coordinates; subsample if there are too many for the budget.
  std::vector<std::pair<std::string, int>> coords;
  for (const auto& [name, tensor] : params)
    for (int i = 0; i < static_cast<int>(tensor.size()); ++i) coords.emplace_back(name, i);
  if (static_cast<int>(coords.size()) > max_coords) {
    RngStream rng = RngStream::keyed(seed, {stream_key::grad_check});
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(max_coords));
  }

  GradCheckReport report;
  ParamStore work = params;
  for (const auto& [name, idx] : coords) {
    double& slot = work.at(name).v[static_cast<std::size_t>(idx)];
    const double original = slot;
    slot = original + step;
    const double up = eval(work);
    slot = original - step;
    const double down = eval(work);
    slot = original;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.at(name).v[static_cast<std::size_t>(idx)];
    const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    report.coords_checked += 1;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    auto [it, inserted] = report.group_max.emplace(name, rel);
    if (!inserted) it->second = std::max(it->second, rel);
    report.worst.push_back(GradCheckIssue{name, idx, a, numeric, rel});
    std::sort(report.worst.begin(), report.worst.end(),
              [](const GradCheckIssue& x, const GradCheckIssue& y) { return x.rel_error > y.rel_error; });
    if (report.worst.size() > 10) report.worst.resize(10);
  }
  return report;
}

}  // namespace grbe
