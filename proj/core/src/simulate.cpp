#include "icjm/simulate.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "icjm/error.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/quadrature.hpp"
#include "icjm/serialize.hpp"

namespace icjm {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPanel = 0.25;

// Hazards of both causes on a fixed composite GK15 grid over [0, horizon];
// the spline rows are shared by every simulated patient.
struct HazardGrid {
  std::vector<double> edges;
  TimeDesign design;
  std::vector<double> weights;

  HazardGrid(const ModelBasis& basis, double horizon) {
    const auto n = static_cast<std::size_t>(std::ceil(horizon / kPanel - 1e-9));
    for (std::size_t i = 0; i <= n; ++i) edges.push_back(std::min(horizon, kPanel * static_cast<double>(i)));
    const auto rule = composite_gk15(edges);
    design = basis.design(rule.nodes);
    weights = rule.weights;
  }
};

class EventSolver {
 public:
  EventSolver(const SimulationConfig& cfg, const ModelBasis& basis, const HazardGrid& grid, const Eigen::VectorXd& u,
              const BaselineCovariates& cov)
      : cfg_(cfg), basis_(basis), grid_(grid), u_(u), cov_(cov) {
    for (int k = 0; k < kNumCauses; ++k) {
      const Eigen::VectorXd h =
          log_hazard_rows(static_cast<Cause>(k), grid.design, cfg.params, u, cov, cfg.spec).array().exp();
      auto& cum = cum_[static_cast<std::size_t>(k)];
      cum.assign(grid.edges.size(), 0.0);
      for (std::size_t p = 0; p + 1 < grid.edges.size(); ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < 15; ++j) s += grid.weights[15 * p + j] * h(static_cast<Eigen::Index>(15 * p + j));
        cum[p + 1] = cum[p] + s;
      }
    }
  }

  double hazard(Cause k, double t) const {
    const double times[] = {t};
    return std::exp(log_hazard_rows(k, basis_.design(times), cfg_.params, u_, cov_, cfg_.spec)(0));
  }

  // H_k(0, t) for the causes selected by the mask, accurate to quadrature error
  double cumulative(unsigned mask, double t) const {
    const auto& e = grid_.edges;
    auto p = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), t) - e.begin());
    p = std::clamp<std::size_t>(p, 1, e.size() - 1) - 1;
    double total = 0.0;
    for (int k = 0; k < kNumCauses; ++k)
      if (mask & (1u << k)) total += cum_[static_cast<std::size_t>(k)][p];
    if (t > e[p]) {
      const auto x = GaussKronrod15::nodes(e[p], t);
      const auto w = GaussKronrod15::scaled_weights(e[p], t);
      const auto d = basis_.design(x);
      for (int k = 0; k < kNumCauses; ++k) {
        if (!(mask & (1u << k))) continue;
        const Eigen::VectorXd h = log_hazard_rows(static_cast<Cause>(k), d, cfg_.params, u_, cov_, cfg_.spec).array().exp();
        for (int j = 0; j < 15; ++j) total += w[static_cast<std::size_t>(j)] * h(j);
      }
    }
    return total;
  }

  // Smallest T with H(0,T) = target on [0, horizon]; +inf if H(0, horizon) < target.
  double solve(unsigned mask, double target, double* residual) const {
    const auto& e = grid_.edges;
    auto at_edge = [&](std::size_t i) {
      double s = 0.0;
      for (int k = 0; k < kNumCauses; ++k)
        if (mask & (1u << k)) s += cum_[static_cast<std::size_t>(k)][i];
      return s;
    };
    if (at_edge(e.size() - 1) < target) return kInf;
    std::size_t p = 0;
    while (at_edge(p + 1) < target) ++p;
    auto f = [&](double t) { return cumulative(mask, t) - target; };
    double lo = e[p], hi = e[p + 1];
    double flo = at_edge(p) - target, fhi = at_edge(p + 1) - target;
    if (fhi == 0.0) {
      if (residual) *residual = 0.0;
      return hi;
    }
    boost::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(52),
                                                     iters);
    const double t = 0.5 * (r.first + r.second);
    if (residual) *residual = std::abs(f(t));
    return t;
  }

 private:
  const SimulationConfig& cfg_;
  const ModelBasis& basis_;
  const HazardGrid& grid_;
  const Eigen::VectorXd& u_;
  const BaselineCovariates& cov_;
  std::array<std::vector<double>, kNumCauses> cum_;
};

EventTimes solve_events(const SimulationConfig& cfg, const ModelBasis& basis, const HazardGrid& grid,
                        const Eigen::VectorXd& u, const BaselineCovariates& cov, Rng& rng) {
  EventSolver solver(cfg, basis, grid, u, cov);
  EventTimes ev;
  const double e = -std::log1p(-uniform01(rng));
  const double u_cause = uniform01(rng);
  const double e_latent = -std::log1p(-uniform01(rng));
  const double t = solver.solve(0b11, e, &ev.residual);
  if (!std::isfinite(t)) {
    ev.cause = 0;
    return ev;
  }
  const double hp = solver.hazard(Cause::Progression, t);
  const double ht = solver.hazard(Cause::Treatment, t);
  if (u_cause * (hp + ht) < hp) {
    ev.cause = 1;
    ev.t_prg = t;
    ev.latent_t_prg = t;
  } else {
    ev.cause = 2;
    ev.t_trt = t;
    // progression hazard continues from t when treatment is withheld
    ev.latent_t_prg = solver.solve(0b01, solver.cumulative(0b01, t) + e_latent, nullptr);
  }
  return ev;
}

double draw_density(const SimulationConfig& cfg, Rng& rng) {
  const double s2 = std::log1p((cfg.density_sd / cfg.density_mean) * (cfg.density_sd / cfg.density_mean));
  const double mu = std::log(cfg.density_mean) - 0.5 * s2;
  return std::exp(mu + std::sqrt(s2) * std_normal(rng));
}

double jitter(Rng& rng, double half_width) { return half_width * (2.0 * uniform01(rng) - 1.0); }

SimulatedPatient simulate_one(const SimulationConfig& cfg, const ModelBasis& basis, const HazardGrid& grid,
                              const std::string& id, Rng& rng) {
  SimulatedPatient sp;
  auto& rec = sp.record;
  auto& truth = sp.truth;
  rec.patient_id = id;
  truth.patient_id = id;

  rec.covariates.age = truncated_normal_draw(rng, cfg.age_mean, cfg.age_sd, cfg.age_min, cfg.age_max);
  rec.covariates.psa_density = draw_density(cfg, rng);
  truth.u = mvn_draw(rng, Eigen::VectorXd::Zero(cfg.spec.n_u()), cfg.params.omega);
  truth.events = solve_events(cfg, basis, grid, truth.u, rec.covariates, rng);
  truth.censoring_time = cfg.censor_min + (cfg.censor_max - cfg.censor_min) * uniform01(rng);

  // quarterly PSA over the whole horizon
  const auto n_psa = static_cast<int>(std::floor(cfg.horizon / cfg.psa_interval + 1e-9));
  for (int j = 0; j <= n_psa; ++j) {
    double t = j * cfg.psa_interval;
    if (j > 0) t = std::clamp(t + jitter(rng, cfg.psa_jitter), 0.0, cfg.horizon);
    const double eps = student_t_draw(rng, 3.0) / std::sqrt(cfg.params.tau_eps);
    const double m = mean_psa(t, cfg.params.beta, truth.u, rec.covariates.age, cfg.spec);
    const double y = cfg.noise ? m + eps : m;
    truth.trajectory.push_back({id, t, OutcomeKind::PSA, std::max(0.0, std::exp2(y) - 1.0), std::nullopt});
  }
  for (double b : cfg.biopsy_times) truth.biopsy_schedule.push_back(b + jitter(rng, cfg.biopsy_jitter));

  // observation scheme
  const auto& ev = truth.events;
  const double c = truth.censoring_time;
  double last_negative = 0.0;
  if (ev.cause == 1 && ev.t_prg <= c) {
    double detect = kInf;
    for (double b : truth.biopsy_schedule) {
      if (b > c) break;
      if (b < ev.t_prg) last_negative = b;
      else if (b >= ev.t_prg) {
        detect = b;
        break;
      }
    }
    if (std::isfinite(detect)) {
      rec.event = {1, last_negative, detect};
    } else {
      rec.event = {0, last_negative, c};
    }
  } else if (ev.cause == 2 && ev.t_trt <= c) {
    for (double b : truth.biopsy_schedule)
      if (b <= ev.t_trt) last_negative = b;
    rec.event = {2, last_negative, ev.t_trt};
  } else {
    for (double b : truth.biopsy_schedule)
      if (b <= c) last_negative = b;
    rec.event = {0, last_negative, c};
  }
  for (const auto& o : truth.trajectory)
    if (o.time <= rec.event.t_upper) rec.longitudinal.push_back(o);
  return sp;
}

}  // namespace

const GroundTruth& SimulatedDataset::truth_for(const std::string& id) const {
  for (const auto& t : truth)
    if (t.patient_id == id) return t;
  throw DataError("no ground truth for patient '" + id + "'");
}

EventTimes simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u, const BaselineCovariates& cov,
                                Rng& rng) {
  const ModelBasis basis(cfg.spec);
  const HazardGrid grid(basis, cfg.horizon);
  return solve_events(cfg, basis, grid, u, cov, rng);
}

EventTimes simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u, const BaselineCovariates& cov,
                                std::uint64_t seed) {
  auto rng = make_rng(seed);
  return simulate_event_times(cfg, u, cov, rng);
}

std::vector<EventTimes> simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u,
                                             const BaselineCovariates& cov, Rng& rng, std::size_t count) {
  const ModelBasis basis(cfg.spec);
  const HazardGrid grid(basis, cfg.horizon);
  std::vector<EventTimes> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(solve_events(cfg, basis, grid, u, cov, rng));
  return out;
}

SimulatedPatient simulate_patient(const SimulationConfig& cfg, const std::string& id, std::uint64_t seed) {
  cfg.params.validate(cfg.spec);
  const ModelBasis basis(cfg.spec);
  const HazardGrid grid(basis, cfg.horizon);
  auto rng = make_rng(seed);
  return simulate_one(cfg, basis, grid, id, rng);
}

EventProportions event_proportions(const Dataset& ds) {
  EventProportions p;
  if (ds.patients.empty()) return p;
  for (const auto& r : ds.patients) {
    if (r.event.delta == 1) p.progression += 1;
    else if (r.event.delta == 2) p.treatment += 1;
    else p.censored += 1;
  }
  const auto n = static_cast<double>(ds.patients.size());
  p.progression /= n;
  p.treatment /= n;
  p.censored /= n;
  return p;
}

SimulatedDataset simulate_dataset(const SimulationConfig& cfg, int n, std::uint64_t seed) {
  if (n <= 0) throw InvalidArgument("simulate_dataset: n must be positive");
  cfg.params.validate(cfg.spec);
  const ModelBasis basis(cfg.spec);
  const HazardGrid grid(basis, cfg.horizon);
  SimulatedDataset out;
  out.config = cfg;
  out.data.provenance = "simulated n=" + std::to_string(n) + " seed=" + std::to_string(seed);
  const int width = static_cast<int>(std::to_string(n).size());
  for (int i = 0; i < n; ++i) {
    auto id = std::to_string(i + 1);
    id = "p" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    auto rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    auto sp = simulate_one(cfg, basis, grid, id, rng);
    out.data.patients.push_back(std::move(sp.record));
    out.truth.push_back(std::move(sp.truth));
  }
  out.proportions = event_proportions(out.data);
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

const char* cause_name(int c) { return c == 1 ? "prg" : c == 2 ? "trt" : "none"; }

int parse_cause(const std::string& s) {
  if (s == "prg") return 1;
  if (s == "trt") return 2;
  if (s == "none") return 0;
  throw DataError("ground truth: unknown cause '" + s + "'");
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path, std::size_t n_fields) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::size_t s = 0;
    while (true) {
      const auto c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string::npos ? std::string::npos : c - s));
      if (c == std::string::npos) break;
      s = c + 1;
    }
    if (f.size() != n_fields) throw DataError(path.filename().string() + ": wrong number of fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

double to_double(const std::string& s) {
  if (s == "inf") return kInf;
  try {
    return std::stod(s);
  } catch (...) {
    throw DataError("ground truth: '" + s + "' is not a number");
  }
}

}  // namespace

void write_simulation(const SimulatedDataset& sim, const fs::path& dir) {
  write_dataset(sim.data, dir);
  std::string gt = "patient_id,true_T_prg,true_T_trt,cause\n";
  std::string fx = "patient_id";
  const auto n_u = sim.truth.empty() ? 0 : sim.truth.front().u.size();
  for (Eigen::Index j = 0; j < n_u; ++j) fx += ",u" + std::to_string(j);
  fx += ",latent_T_prg,censoring_time,biopsy_schedule\n";
  std::string tr = "patient_id,time,psa\n";
  for (const auto& t : sim.truth) {
    gt += t.patient_id + ',' + format_number(t.events.t_prg) + ',' + format_number(t.events.t_trt) + ',' +
          cause_name(t.events.cause) + '\n';
    fx += t.patient_id;
    for (Eigen::Index j = 0; j < t.u.size(); ++j) fx += ',' + format_number(t.u(j));
    fx += ',' + format_number(t.events.latent_t_prg) + ',' + format_number(t.censoring_time) + ',';
    for (std::size_t b = 0; b < t.biopsy_schedule.size(); ++b)
      fx += (b ? ";" : "") + format_number(t.biopsy_schedule[b]);
    fx += '\n';
    for (const auto& o : t.trajectory) tr += t.patient_id + ',' + format_number(o.time) + ',' + format_number(o.value) + '\n';
  }
  write_text(dir / "ground_truth.csv", gt);
  write_text(dir / "true_effects.csv", fx);
  write_text(dir / "trajectories.csv", tr);
  nlohmann::json spec;
  spec["spec"] = to_json(sim.config.spec);
  spec["parameters"] = to_json(sim.config.params);
  spec["proportions"] = {{"progression", sim.proportions.progression},
                         {"treatment", sim.proportions.treatment},
                         {"censored", sim.proportions.censored}};
  spec["n"] = sim.data.size();
  spec["provenance"] = sim.data.provenance;
  write_text(dir / "model_spec.json", spec.dump(1) + "\n");
}

std::vector<GroundTruth> read_ground_truth(const fs::path& dir) {
  std::vector<GroundTruth> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& f : read_rows(dir / "ground_truth.csv", 4)) {
    GroundTruth g;
    g.patient_id = f[0];
    g.events.t_prg = to_double(f[1]);
    g.events.t_trt = to_double(f[2]);
    g.events.cause = parse_cause(f[3]);
    g.events.latent_t_prg = g.events.t_prg;
    index[g.patient_id] = out.size();
    out.push_back(std::move(g));
  }
  const auto fx_path = dir / "true_effects.csv";
  if (fs::exists(fx_path)) {
    std::ifstream in(fx_path);
    std::string header;
    std::getline(in, header);
    const auto n_fields = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
    for (const auto& f : read_rows(fx_path, n_fields)) {
      auto it = index.find(f[0]);
      if (it == index.end()) throw DataError("true_effects.csv: unknown patient '" + f[0] + "'");
      auto& g = out[it->second];
      const auto n_u = static_cast<Eigen::Index>(n_fields - 4);
      g.u.resize(n_u);
      for (Eigen::Index j = 0; j < n_u; ++j) g.u(j) = to_double(f[static_cast<std::size_t>(j) + 1]);
      g.events.latent_t_prg = to_double(f[n_fields - 3]);
      g.censoring_time = to_double(f[n_fields - 2]);
      std::string sched = f[n_fields - 1];
      std::size_t s = 0;
      while (!sched.empty()) {
        const auto c = sched.find(';', s);
        g.biopsy_schedule.push_back(to_double(sched.substr(s, c == std::string::npos ? std::string::npos : c - s)));
        if (c == std::string::npos) break;
        s = c + 1;
      }
    }
  }
  const auto tr_path = dir / "trajectories.csv";
  if (fs::exists(tr_path)) {
    for (const auto& f : read_rows(tr_path, 3)) {
      auto it = index.find(f[0]);
      if (it == index.end()) throw DataError("trajectories.csv: unknown patient '" + f[0] + "'");
      out[it->second].trajectory.push_back({f[0], to_double(f[1]), OutcomeKind::PSA, to_double(f[2]), std::nullopt});
    }
  }
  return out;
}

namespace {

nlohmann::json read_model_spec_json(const fs::path& path) {
  const auto file = fs::is_directory(path) ? path / "model_spec.json" : path;
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

}  // namespace

ModelSpec read_generating_spec(const fs::path& path) {
  const auto j = read_model_spec_json(path);
  try {
    return spec_from_json(j.contains("spec") ? j.at("spec") : j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model spec: " + std::string(e.what()));
  }
}

SimulatedDataset read_simulation(const fs::path& dir) {
  SimulatedDataset sim;
  sim.data = load_dataset(dir);
  sim.truth = read_ground_truth(dir);
  const auto j = read_model_spec_json(dir);
  try {
    sim.config.spec = spec_from_json(j.at("spec"));
    sim.config.params = parameters_from_json(j.at("parameters"), sim.config.spec);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model_spec.json: " + std::string(e.what()));
  }
  sim.proportions = event_proportions(sim.data);
  if (sim.truth.size() != sim.data.size()) throw DataError("ground truth does not match the dataset");
  return sim;
}

}  // namespace icjm
