#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace icjm {

/// 15-point Gauss-Kronrod rule (the Kronrod extension of 7-point Gauss-Legendre).
struct GaussKronrod15 {
  static constexpr std::size_t kPoints = 15;

  /// Abscissae on [-1, 1], ascending.
  static const std::array<double, kPoints>& abscissae();
  /// Kronrod weights matching abscissae().
  static const std::array<double, kPoints>& weights();
  /// Embedded 7-point Gauss weights (zero at the pure Kronrod nodes).
  static const std::array<double, kPoints>& gauss_weights();

  /// Nodes mapped onto [a, b].
  static std::array<double, kPoints> nodes(double a, double b);
  /// Weights scaled by (b - a) / 2.
  static std::array<double, kPoints> scaled_weights(double a, double b);

  template <class F>
  static double integrate(F&& f, double a, double b) {
    const auto& x = abscissae();
    const auto& w = weights();
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < kPoints; ++i) sum += w[i] * f(mid + half * x[i]);
    return sum * half;
  }

  /// Difference between the Kronrod and embedded Gauss estimates.
  template <class F>
  static double error_estimate(F&& f, double a, double b) {
    const auto& x = abscissae();
    const auto& w = weights();
    const auto& g = gauss_weights();
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double k = 0.0, gs = 0.0;
    for (std::size_t i = 0; i < kPoints; ++i) {
      const double fx = f(mid + half * x[i]);
      k += w[i] * fx;
      gs += g[i] * fx;
    }
    return (k - gs) * half;
  }
};

/// Panel boundaries used for cumulative-hazard integrals: a single panel when
/// b - a <= 2, otherwise ceil(b - a) equal panels (roughly one per year).
std::vector<double> hazard_panels(double a, double b);

/// Node/weight pairs for a composite GK15 rule over the given panel edges.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule composite_gk15(std::span<const double> edges);

}  // namespace icjm
