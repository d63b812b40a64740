#pragma once

// Central finite-difference gradient verification. Coordinates sitting on a
// kink (relu at 0, max-pool ties, clamp boundaries) are detected by comparing
// the two one-sided slopes and excluded instead of reported as failures.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "advstyle/tensor.hpp"

namespace advstyle {

template <typename T>
struct GradCheckFailure {
  std::size_t input_index;
  std::size_t coord;
  T analytic;
  T numeric;
  T rel_err;
};

template <typename T>
struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t excluded = 0;
  T max_rel_err = T(0);
  std::vector<GradCheckFailure<T>> failures;

  bool pass() const { return failures.empty() && checked > 0; }
};

// f maps the given inputs to a scalar tensor and must be deterministic
// (freeze any noise before calling). Inputs must have requires_grad set.
template <typename T>
GradCheckReport<T> check_gradients(
    const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
    std::vector<Tensor<T>> inputs, T eps = T(1e-4), T rtol = T(1e-4)) {
  if (eps <= T(0)) throw ValueError("check_gradients: eps must be positive");

  for (auto& in : inputs) in.zero_grad();
  Tensor<T> loss = f(inputs);
  if (loss.size() != 1) throw ValueError("check_gradients: f must be scalar-valued");
  loss.backward();

  GradCheckReport<T> report;
  // One-sided slopes disagreeing by more than this (relative) flag a kink.
  const T kink_rtol = T(1e-3);
  const T denom_floor = T(1e-6);

  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& x = inputs[ii];
    if (!x.requires_grad()) continue;
    const std::vector<T> analytic = x.grad();
    for (std::size_t c = 0; c < x.size(); ++c) {
      const T orig = x.data()[c];
      x.data()[c] = orig + eps;
      const T fp = f(inputs).item();
      x.data()[c] = orig - eps;
      const T fm = f(inputs).item();
      x.data()[c] = orig;
      const T f0 = loss.item();

      const T dplus = (fp - f0) / eps;
      const T dminus = (f0 - fm) / eps;
      const T slope_gap = std::abs(dplus - dminus);
      const T slope_mag = std::max(T(1), std::max(std::abs(dplus), std::abs(dminus)));
      if (slope_gap > kink_rtol * slope_mag) {
        ++report.excluded;
        continue;
      }

      const T numeric = (fp - fm) / (T(2) * eps);
      const T rel = std::abs(analytic[c] - numeric) /
                    std::max(denom_floor, std::max(std::abs(analytic[c]), std::abs(numeric)));
      ++report.checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel >= rtol)
        report.failures.push_back({ii, c, analytic[c], numeric, rel});
    }
  }
  return report;
}

}  // namespace advstyle
