#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace icjm {

/// Boundary and interior knots of a spline basis (times in years).
struct KnotVector {
  double lower = 0.0;
  double upper = 1.0;
  std::vector<double> interior;

  /// Throws InvalidArgument unless lower < interior[0] < ... < upper.
  void validate() const;
  bool operator==(const KnotVector&) const = default;
};

/// Type-7 (linear interpolation) sample quantile; `sorted` must be ascending.
double quantile_sorted(std::span<const double> sorted, double p);

/// Knots at `count` evenly spaced quantiles of `times` (levels 0, 1/(count-1), ..., 1).
/// The first and last quantiles become the boundary knots. Ties are separated
/// by the smallest shift that keeps the sequence strictly increasing.
KnotVector knots_from_quantiles(std::span<const double> times, int count);

/// Natural-spline knots for the longitudinal time effect: boundaries at the
/// 0 and 0.99 quantiles, interior knots at the tertiles (3 degrees of freedom).
KnotVector natural_spline_knots(std::span<const double> pooled_times);

/// Knots for a clamped B-spline baseline hazard with `n_basis` functions of the
/// given degree: boundaries at 0 and `max_followup`, interior knots at evenly
/// spaced quantiles of `event_times`.
KnotVector hazard_knots(std::span<const double> event_times, double max_followup,
                        int n_basis = 12, int degree = 3);

/// Values (deriv = 0) or derivatives of all B-splines of the given order
/// (degree + 1) on an arbitrary nondecreasing knot sequence. `x` must lie in
/// [tau[order-1], tau[n]]; the right end is treated as closed.
std::vector<double> bspline_basis(std::span<const double> tau, int order, double x, int deriv = 0);

/// Clamped B-spline basis of the given degree; t is clamped to [lower, upper].
/// Returns interior.size() + degree + 1 values.
std::vector<double> bspline_design(double t, const KnotVector& knots, int degree = 3);

/// Natural cubic spline basis without intercept, built as in R's splines::ns():
/// cubic B-splines projected onto the null space of the second-derivative
/// constraints at both boundary knots. Linear beyond the boundaries.
class NaturalCubicSpline {
 public:
  explicit NaturalCubicSpline(KnotVector knots);

  int df() const { return static_cast<int>(knots_.interior.size()) + 1; }
  const KnotVector& knots() const { return knots_; }
  std::vector<double> evaluate(double t) const;
  void evaluate(double t, std::span<double> out) const;

 private:
  KnotVector knots_;
  std::vector<double> tau_;
  Eigen::MatrixXd projection_;  // df x (n_bspline - 1)
};

/// Row of the natural cubic spline design at t (3 values for the default knots).
std::vector<double> ncs_design(double t, const KnotVector& knots);

/// P-spline penalty M = D_r' D_r + 1e-6 I.
struct PenaltyMatrix {
  int dim = 0;
  int order = 0;
  Eigen::MatrixXd matrix;
  int rank = 0;
};

PenaltyMatrix difference_penalty(int dim, int order);

/// The r-th order difference operator, (dim - order) x dim.
Eigen::MatrixXd difference_operator(int dim, int order);

}  // namespace icjm
