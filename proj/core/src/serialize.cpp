#include "icjm/serialize.hpp"

#include "icjm/error.hpp"

namespace icjm {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j, Eigen::Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expected)
    throw DataError(std::string("parameters: '") + what + "' has length " + std::to_string(v.size()) + ", expected " +
                    std::to_string(expected));
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

json to_json(const KnotVector& k) {
  return {{"boundary", {k.lower, k.upper}}, {"interior", k.interior}};
}

json to_json(const ModelSpec& spec) {
  const auto& p = spec.priors;
  return {{"variant", to_string(spec.variant)},
          {"ncs_knots", to_json(spec.ncs_knots)},
          {"h0_knots", to_json(spec.h0_knots)},
          {"h0_degree", spec.h0_degree},
          {"penalty_order", spec.penalty.order},
          {"priors",
           {{"normal_variance", p.normal_variance},
            {"tau_eps_shape", p.tau_eps_shape},
            {"tau_eps_rate", p.tau_eps_rate},
            {"tau_h0_shape", p.tau_h0_shape},
            {"tau_h0_rate", p.tau_h0_rate},
            {"tau_u_shape", p.tau_u_shape},
            {"tau_u_rate", p.tau_u_rate},
            {"omega_scale", p.omega_scale}}}};
}

json to_json(const ModelParameters& p) {
  std::vector<std::vector<double>> omega;
  for (Eigen::Index i = 0; i < p.omega.rows(); ++i) {
    omega.emplace_back();
    for (Eigen::Index j = 0; j < p.omega.cols(); ++j) omega.back().push_back(p.omega(i, j));
  }
  return {{"beta", vec(p.beta)},
          {"tau_eps", p.tau_eps},
          {"omega", omega},
          {"tau_u", p.tau_u},
          {"gamma_h0", {vec(p.gamma_h0[0]), vec(p.gamma_h0[1])}},
          {"tau_h0", {p.tau_h0[0], p.tau_h0[1]}},
          {"gamma", {p.gamma[0], p.gamma[1]}},
          {"alpha", {vec(p.alpha[0]), vec(p.alpha[1])}}};
}

KnotVector knots_from_json(const json& j) {
  KnotVector k;
  const auto b = field(j, "boundary").get<std::vector<double>>();
  if (b.size() != 2) throw DataError("knots: 'boundary' must have two entries");
  k.lower = b[0];
  k.upper = b[1];
  k.interior = field(j, "interior").get<std::vector<double>>();
  k.validate();
  return k;
}

ModelSpec spec_from_json(const json& j) {
  try {
    auto spec = ModelSpec::make(parse_variant(field(j, "variant").get<std::string>()), knots_from_json(field(j, "ncs_knots")),
                                knots_from_json(field(j, "h0_knots")), field(j, "penalty_order").get<int>());
    if (field(j, "h0_degree").get<int>() != 3) throw DataError("model spec: only cubic baseline-hazard splines are supported");
    const auto& pr = field(j, "priors");
    auto& p = spec.priors;
    p.normal_variance = field(pr, "normal_variance").get<double>();
    p.tau_eps_shape = field(pr, "tau_eps_shape").get<double>();
    p.tau_eps_rate = field(pr, "tau_eps_rate").get<double>();
    p.tau_h0_shape = field(pr, "tau_h0_shape").get<double>();
    p.tau_h0_rate = field(pr, "tau_h0_rate").get<double>();
    p.tau_u_shape = field(pr, "tau_u_shape").get<double>();
    p.tau_u_rate = field(pr, "tau_u_rate").get<double>();
    p.omega_scale = field(pr, "omega_scale").get<double>();
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("model spec: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("model spec: ") + e.what());
  }
}

ModelParameters parameters_from_json(const json& j, const ModelSpec& spec) {
  try {
    ModelParameters p = ModelParameters::zeros(spec);
    p.beta = vec_from(field(j, "beta"), spec.n_beta(), "beta");
    p.tau_eps = field(j, "tau_eps").get<double>();
    const auto omega = field(j, "omega").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(omega.size()) != spec.n_u()) throw DataError("parameters: 'omega' has wrong dimension");
    for (int r = 0; r < spec.n_u(); ++r) {
      if (static_cast<int>(omega[static_cast<std::size_t>(r)].size()) != spec.n_u())
        throw DataError("parameters: 'omega' has wrong dimension");
      for (int c = 0; c < spec.n_u(); ++c) p.omega(r, c) = omega[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    p.tau_u = field(j, "tau_u").get<double>();
    for (std::size_t k = 0; k < 2; ++k) {
      p.gamma_h0[k] = vec_from(field(j, "gamma_h0").at(k), spec.n_h0(), "gamma_h0");
      p.tau_h0[k] = field(j, "tau_h0").at(k).get<double>();
      p.gamma[k] = field(j, "gamma").at(k).get<double>();
      p.alpha[k] = vec_from(field(j, "alpha").at(k), spec.n_alpha(), "alpha");
    }
    p.validate(spec);
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("parameters: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("parameters: ") + e.what());
  }
}

}  // namespace icjm
