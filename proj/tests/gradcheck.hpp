#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

// Central differences of f with respect to every entry of `params`, restored afterwards.
inline std::vector<double> central_differences(std::span<double> params, const std::function<double()>& f,
                                               double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// |a - n| / max(|a|, |n|), with the denominator floored so exact zeros compare absolutely.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  return worst;
}
