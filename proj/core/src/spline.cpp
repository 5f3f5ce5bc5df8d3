#include "icjm/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icjm/error.hpp"

namespace icjm {

void KnotVector::validate() const {
  if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper))
    throw InvalidArgument("knot vector: boundary knots must satisfy lower < upper");
  double prev = lower;
  for (double k : interior) {
    if (!std::isfinite(k) || !(k > prev))
      throw InvalidArgument("knot vector: knots must be strictly increasing inside the boundary");
    prev = k;
  }
  if (!(upper > prev)) throw InvalidArgument("knot vector: upper boundary must exceed interior knots");
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InvalidArgument("quantile of empty sample");
  if (sorted.size() == 1) return sorted.front();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

std::vector<double> sorted_copy(std::span<const double> times) {
  std::vector<double> s(times.begin(), times.end());
  for (double t : s)
    if (!std::isfinite(t)) throw InvalidArgument("knot placement: non-finite time");
  std::sort(s.begin(), s.end());
  return s;
}

// Every knot must exceed its predecessor by at least `gap`.
void separate_ties(std::vector<double>& q, double gap) {
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] < q[i - 1] + gap) q[i] = q[i - 1] + gap;
}

KnotVector from_levels(const std::vector<double>& sorted, std::span<const double> levels) {
  std::vector<double> q;
  q.reserve(levels.size());
  for (double p : levels) q.push_back(quantile_sorted(sorted, p));
  const double range = sorted.back() - sorted.front();
  if (!(range > 0.0)) throw InvalidArgument("knot placement: all times identical (degenerate knot vector)");
  separate_ties(q, range * 1e-8);
  KnotVector k;
  k.lower = q.front();
  k.upper = q.back();
  k.interior.assign(q.begin() + 1, q.end() - 1);
  return k;
}

}  // namespace

KnotVector knots_from_quantiles(std::span<const double> times, int count) {
  if (times.empty()) throw InvalidArgument("knots_from_quantiles: no times");
  if (count < 2) throw InvalidArgument("knots_from_quantiles: count must be >= 2");
  const auto sorted = sorted_copy(times);
  std::vector<double> levels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) levels[static_cast<std::size_t>(i)] = static_cast<double>(i) / (count - 1);
  auto k = from_levels(sorted, levels);
  k.validate();
  return k;
}

KnotVector natural_spline_knots(std::span<const double> pooled_times) {
  if (pooled_times.empty()) throw InvalidArgument("natural_spline_knots: no times");
  const auto sorted = sorted_copy(pooled_times);
  const double levels[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 0.99};
  auto k = from_levels(sorted, levels);
  k.validate();
  return k;
}

KnotVector hazard_knots(std::span<const double> event_times, double max_followup, int n_basis,
                        int degree) {
  const int n_interior = n_basis - degree - 1;
  if (n_interior < 0) throw InvalidArgument("hazard_knots: too few basis functions for degree");
  if (!(max_followup > 0.0)) throw InvalidArgument("hazard_knots: max follow-up must be positive");
  KnotVector k;
  k.lower = 0.0;
  k.upper = max_followup;
  if (n_interior > 0) {
    if (event_times.empty()) throw InvalidArgument("hazard_knots: no event times");
    const auto q = knots_from_quantiles(event_times, n_interior + 2);
    std::vector<double> inner = q.interior;
    // keep interior knots strictly inside (0, max_followup)
    const double gap = max_followup * 1e-6;
    for (auto& v : inner) v = std::clamp(v, gap, max_followup - gap);
    separate_ties(inner, gap);
    k.interior = std::move(inner);
  }
  k.validate();
  return k;
}

std::vector<double> bspline_basis(std::span<const double> tau, int order, double x, int deriv) {
  const int p = order - 1;
  const int n = static_cast<int>(tau.size()) - order;  // number of basis functions
  if (p < 0 || n < 1) throw InvalidArgument("bspline_basis: knot sequence too short");
  const double lo = tau[static_cast<std::size_t>(p)];
  const double hi = tau[static_cast<std::size_t>(n)];
  if (!(x >= lo && x <= hi)) throw InvalidArgument("bspline_basis: x outside the basis support");

  // span index s with tau[s] <= x < tau[s+1], right end closed
  int s = p;
  if (x >= hi) {
    s = n - 1;
    while (s > p && !(tau[static_cast<std::size_t>(s)] < tau[static_cast<std::size_t>(s) + 1])) --s;
  } else {
    s = static_cast<int>(std::upper_bound(tau.begin(), tau.end(), x) - tau.begin()) - 1;
    s = std::clamp(s, p, n - 1);
  }

  // Piegl & Tiller, algorithm A2.3
  const auto U = [&](int i) { return tau[static_cast<std::size_t>(i)]; };
  std::vector<std::vector<double>> ndu(static_cast<std::size_t>(p + 1), std::vector<double>(static_cast<std::size_t>(p + 1)));
  std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[static_cast<std::size_t>(j)] = x - U(s + 1 - j);
    right[static_cast<std::size_t>(j)] = U(s + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      auto& lower = ndu[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
      lower = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = ndu[static_cast<std::size_t>(r)][static_cast<std::size_t>(j - 1)] / lower;
      ndu[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    ndu[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] = saved;
  }

  std::vector<double> local(static_cast<std::size_t>(p + 1), 0.0);
  if (deriv == 0) {
    for (int j = 0; j <= p; ++j) local[static_cast<std::size_t>(j)] = ndu[static_cast<std::size_t>(j)][static_cast<std::size_t>(p)];
  } else if (deriv <= p) {
    std::vector<std::vector<double>> a(2, std::vector<double>(static_cast<std::size_t>(p + 1)));
    for (int r = 0; r <= p; ++r) {
      int s1 = 0, s2 = 1;
      a[0][0] = 1.0;
      double d = 0.0;
      for (int k = 1; k <= deriv; ++k) {
        d = 0.0;
        const int rk = r - k, pk = p - k;
        auto A = [&](int row, int col) -> double& { return a[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)]; };
        auto N = [&](int row, int col) { return ndu[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)]; };
        if (r >= k) {
          A(s2, 0) = A(s1, 0) / N(pk + 1, rk);
          d = A(s2, 0) * N(rk, pk);
        }
        const int j1 = rk >= -1 ? 1 : -rk;
        const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
        for (int j = j1; j <= j2; ++j) {
          A(s2, j) = (A(s1, j) - A(s1, j - 1)) / N(pk + 1, rk + j);
          d += A(s2, j) * N(rk + j, pk);
        }
        if (r <= pk) {
          A(s2, k) = -A(s1, k - 1) / N(pk + 1, r);
          d += A(s2, k) * N(r, pk);
        }
        std::swap(s1, s2);
      }
      local[static_cast<std::size_t>(r)] = d;
    }
    double factor = p;
    for (int k = 1; k < deriv; ++k) factor *= (p - k);
    for (auto& v : local) v *= factor;
  }

  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j <= p; ++j) out[static_cast<std::size_t>(s - p + j)] = local[static_cast<std::size_t>(j)];
  return out;
}

namespace {

std::vector<double> clamped_sequence(const KnotVector& knots, int order) {
  std::vector<double> tau;
  tau.reserve(knots.interior.size() + 2 * static_cast<std::size_t>(order));
  tau.insert(tau.end(), static_cast<std::size_t>(order), knots.lower);
  tau.insert(tau.end(), knots.interior.begin(), knots.interior.end());
  tau.insert(tau.end(), static_cast<std::size_t>(order), knots.upper);
  return tau;
}

}  // namespace

std::vector<double> bspline_design(double t, const KnotVector& knots, int degree) {
  knots.validate();
  if (degree < 0) throw InvalidArgument("bspline_design: negative degree");
  const auto tau = clamped_sequence(knots, degree + 1);
  return bspline_basis(tau, degree + 1, std::clamp(t, knots.lower, knots.upper));
}

NaturalCubicSpline::NaturalCubicSpline(KnotVector knots) : knots_(std::move(knots)) {
  knots_.validate();
  tau_ = clamped_sequence(knots_, 4);
  const int nb = static_cast<int>(tau_.size()) - 4;
  // second-derivative constraints at both boundaries, first column dropped (no intercept)
  const auto d2_lo = bspline_basis(tau_, 4, knots_.lower, 2);
  const auto d2_hi = bspline_basis(tau_, 4, knots_.upper, 2);
  Eigen::MatrixXd const_t(nb - 1, 2);
  for (int j = 1; j < nb; ++j) {
    const_t(j - 1, 0) = d2_lo[static_cast<std::size_t>(j)];
    const_t(j - 1, 1) = d2_hi[static_cast<std::size_t>(j)];
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(const_t);
  const Eigen::MatrixXd qt = qr.householderQ().transpose() * Eigen::MatrixXd::Identity(nb - 1, nb - 1);
  projection_ = qt.bottomRows(nb - 3);
}

void NaturalCubicSpline::evaluate(double t, std::span<double> out) const {
  const int nb = static_cast<int>(tau_.size()) - 4;
  std::vector<double> b;
  if (t < knots_.lower) {
    b = bspline_basis(tau_, 4, knots_.lower, 0);
    const auto d1 = bspline_basis(tau_, 4, knots_.lower, 1);
    for (int j = 0; j < nb; ++j) b[static_cast<std::size_t>(j)] += (t - knots_.lower) * d1[static_cast<std::size_t>(j)];
  } else if (t > knots_.upper) {
    b = bspline_basis(tau_, 4, knots_.upper, 0);
    const auto d1 = bspline_basis(tau_, 4, knots_.upper, 1);
    for (int j = 0; j < nb; ++j) b[static_cast<std::size_t>(j)] += (t - knots_.upper) * d1[static_cast<std::size_t>(j)];
  } else {
    b = bspline_basis(tau_, 4, t, 0);
  }
  const Eigen::Map<const Eigen::VectorXd> tail(b.data() + 1, nb - 1);
  const Eigen::VectorXd v = projection_ * tail;
  for (int i = 0; i < df(); ++i) out[static_cast<std::size_t>(i)] = v(i);
}

std::vector<double> NaturalCubicSpline::evaluate(double t) const {
  std::vector<double> out(static_cast<std::size_t>(df()));
  evaluate(t, out);
  return out;
}

std::vector<double> ncs_design(double t, const KnotVector& knots) {
  return NaturalCubicSpline(knots).evaluate(t);
}

Eigen::MatrixXd difference_operator(int dim, int order) {
  if (order < 1 || dim <= order) throw InvalidArgument("difference penalty: require dim > order >= 1");
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(dim, dim);
  for (int r = 0; r < order; ++r) {
    const Eigen::Index rows = d.rows() - 1;
    d = (d.bottomRows(rows) - d.topRows(rows)).eval();
  }
  return d;
}

PenaltyMatrix difference_penalty(int dim, int order) {
  const Eigen::MatrixXd d = difference_operator(dim, order);
  PenaltyMatrix pm;
  pm.dim = dim;
  pm.order = order;
  pm.matrix = d.transpose() * d + 1e-6 * Eigen::MatrixXd::Identity(dim, dim);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pm.matrix, Eigen::EigenvaluesOnly);
  const double tol = dim * std::numeric_limits<double>::epsilon() * es.eigenvalues().cwiseAbs().maxCoeff();
  pm.rank = static_cast<int>((es.eigenvalues().array() > tol).count());
  return pm;
}

}  // namespace icjm
