#include "icjm/quadrature.hpp"

#include <cmath>

#include "icjm/error.hpp"

namespace icjm {
namespace {

// QUADPACK qk15 constants.
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Tables {
  std::array<double, 15> x{}, w{}, g{};
  Tables() {
    // ascending order: -xgk[0], ..., -xgk[6], 0, xgk[6], ..., xgk[0]
    for (std::size_t i = 0; i < 7; ++i) {
      x[i] = -kXgk[i];
      w[i] = kWgk[i];
      x[14 - i] = kXgk[i];
      w[14 - i] = kWgk[i];
      if (i % 2 == 1) {
        g[i] = kWg[i / 2];
        g[14 - i] = kWg[i / 2];
      }
    }
    x[7] = 0.0;
    w[7] = kWgk[7];
    g[7] = kWg[3];
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

const std::array<double, 15>& GaussKronrod15::abscissae() { return tables().x; }
const std::array<double, 15>& GaussKronrod15::weights() { return tables().w; }
const std::array<double, 15>& GaussKronrod15::gauss_weights() { return tables().g; }

std::array<double, 15> GaussKronrod15::nodes(double a, double b) {
  const auto& x = abscissae();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  std::array<double, 15> out{};
  for (std::size_t i = 0; i < kPoints; ++i) out[i] = mid + half * x[i];
  return out;
}

std::array<double, 15> GaussKronrod15::scaled_weights(double a, double b) {
  const auto& w = weights();
  const double half = 0.5 * (b - a);
  std::array<double, 15> out{};
  for (std::size_t i = 0; i < kPoints; ++i) out[i] = w[i] * half;
  return out;
}

std::vector<double> hazard_panels(double a, double b) {
  if (!(a <= b)) throw InvalidArgument("hazard_panels: a > b");
  const double len = b - a;
  const std::size_t n = len > 2.0 ? static_cast<std::size_t>(std::ceil(len)) : 1;
  std::vector<double> edges(n + 1);
  for (std::size_t i = 0; i <= n; ++i) edges[i] = a + len * static_cast<double>(i) / static_cast<double>(n);
  edges[n] = b;
  return edges;
}

QuadratureRule composite_gk15(std::span<const double> edges) {
  QuadratureRule rule;
  if (edges.size() < 2) return rule;
  rule.nodes.reserve((edges.size() - 1) * 15);
  rule.weights.reserve((edges.size() - 1) * 15);
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const auto x = GaussKronrod15::nodes(edges[p], edges[p + 1]);
    const auto w = GaussKronrod15::scaled_weights(edges[p], edges[p + 1]);
    rule.nodes.insert(rule.nodes.end(), x.begin(), x.end());
    rule.weights.insert(rule.weights.end(), w.begin(), w.end());
  }
  return rule;
}

}  // namespace icjm
