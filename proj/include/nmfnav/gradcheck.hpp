#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nmfnav/tensor.hpp"

namespace nmfnav {

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t kink_retries = 0;  ///< elements that only matched at a reduced step
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Relative error with the denominator floored at `floor`, so gradients much
/// smaller than the floor are effectively compared in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of a scalar function against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), element by element.
///
/// `f` must rebuild the graph on the tape it is given and return a scalar. It
/// must be deterministic (dropout off); this is verified by evaluating twice.
/// Runs in the scalar type of the tensors, normally double.
///
/// An element that misses `tol` at `eps` is re-measured at eps/10 and eps/100:
/// a ReLU or max kink inside [p - eps, p + eps] spoils the central difference,
/// while a wrong analytic gradient disagrees at every step size.
template <typename T>
GradCheckReport gradient_check(const std::function<BasicTensor<T>(BasicTape<T>&)>& f,
                               std::vector<std::pair<std::string, BasicTensor<T>>> params, double eps, double tol) {
  if (!(eps > 0.0)) throw RangeError("gradient_check: eps must be > 0");
  const auto eval = [&]() {
    BasicTape<T> off(false);
    return static_cast<double>(f(off).item());
  };
  const double first = eval();
  const double second = eval();
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw GraphError("gradient_check: function is not deterministic (two identical forward passes disagree)");
  }
  if (!std::isfinite(first)) throw NumericError("gradient_check: function value is not finite");

  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    BasicTape<T> tape;
    BasicTensor<T> loss = f(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& [name, p] : params) {
    ParamCheck pc{name, p.numel(), 0.0, 0.0};
    std::vector<T> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T orig = p[i];
      const auto central = [&](double h) {
        p[i] = static_cast<T>(orig + h);
        const double up = eval();
        p[i] = static_cast<T>(orig - h);
        const double down = eval();
        p[i] = orig;
        return (up - down) / (2.0 * h);
      };
      double numeric = central(eps);
      double rel = relative_error(analytic[i], numeric);
      for (int shrink = 1; shrink <= 2 && rel > tol; ++shrink) {
        const double retry = central(eps / std::pow(10.0, shrink));
        const double retry_rel = relative_error(analytic[i], retry);
        if (retry_rel < rel) {
          rel = retry_rel;
          numeric = retry;
        }
        if (rel <= tol) ++pc.kink_retries;
      }
      pc.max_rel_error = std::max(pc.max_rel_error, rel);
      pc.max_abs_error = std::max(pc.max_abs_error, std::abs(analytic[i] - numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace nmfnav
