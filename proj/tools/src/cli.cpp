#include "icjm_cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "icjm/error.hpp"
#include "icjm/evaluate.hpp"
#include "icjm/mcmc.hpp"
#include "icjm/predict.hpp"
#include "icjm/schedule.hpp"
#include "icjm/simulate.hpp"

namespace icjm::cli {

namespace fs = std::filesystem;

namespace {

int env_threads() {
  if (const char* v = std::getenv("ICJM_THREADS")) {
    try {
      return std::max(0, std::stoi(v));
    } catch (...) {
    }
  }
  return 0;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument(what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw InvalidArgument(what + ": empty list");
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << content;
  if (!f) throw DataError("failed writing " + p.string());
}

// Artifacts are staged and written only after the command has succeeded.
struct Artifacts {
  std::vector<std::pair<fs::path, std::string>> files;
  std::string log;

  void add(fs::path p, std::string content) { files.emplace_back(std::move(p), std::move(content)); }
  void note(const std::string& line) { log += line + '\n'; }
  void commit(const fs::path& log_path) {
    for (const auto& [p, c] : files) write_file(p, c);
    write_file(log_path, log);
  }
};

std::string snapshot(const CLI::App* sub) {
  return "# re-run with: icjm " + sub->get_name() + " --config <this file>\n[" + sub->get_name() + "]\n" +
         sub->config_to_str(true, false);
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

struct PredictFlags {
  std::string posterior, data, patient;
  double t_b = 0.0, t_v = -1.0, t_y = 0.0;
  int draws = 400, mh = 250, warmup = 50;
  std::uint64_t seed = 1;
  double horizon = 10.0, visit_step = 0.5;

  void add(CLI::App* sub) {
    sub->add_option("--posterior", posterior, "posterior archive from fit")->required();
    sub->add_option("--data", data, "dataset directory or JSON file holding the patient")->required();
    sub->add_option("--patient", patient, "patient id")->required();
    sub->add_option("--tb", t_b, "time of the last negative biopsy")->capture_default_str();
    sub->add_option("--tv", t_v, "current visit (default: max(tb, ty))")->capture_default_str();
    sub->add_option("--ty", t_y, "latest measurement time used")->capture_default_str();
    sub->add_option("--draws", draws, "posterior draws L")->capture_default_str();
    sub->add_option("--mh", mh, "random-effects MH steps per draw")->capture_default_str();
    sub->add_option("--warmup", warmup, "adaptive MH steps")->capture_default_str();
    sub->add_option("--seed", seed)->capture_default_str();
    sub->add_option("--horizon", horizon)->capture_default_str();
    sub->add_option("--visit-step", visit_step)->capture_default_str();
  }

  PredictConfig config() const {
    PredictConfig c;
    c.n_draws = draws;
    c.n_mh = mh;
    c.warmup = warmup;
    c.seed = seed;
    c.horizon = horizon;
    c.visit_step = visit_step;
    c.validate();
    return c;
  }

  PredictionContext context() const {
    const auto ds = load_dataset(data);
    return PredictionContext::from_record(ds.find(patient), t_b, t_v < 0.0 ? std::max(t_b, t_y) : t_v, t_y);
  }
};

// ---- simulate ----

struct SimulateCmd {
  int n = 500;
  std::uint64_t seed = 1;
  std::string out;
  double censor_min = SimulationConfig{}.censor_min;
  double censor_max = SimulationConfig{}.censor_max;
  double horizon = SimulationConfig{}.horizon;

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "number of patients")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed)->capture_default_str();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--censor-min", censor_min)->capture_default_str();
    sub->add_option("--censor-max", censor_max)->capture_default_str();
    sub->add_option("--horizon", horizon)->capture_default_str();
  }

  void run(const CLI::App* sub, std::ostream& os) const {
    SimulationConfig cfg;
    cfg.censor_min = censor_min;
    cfg.censor_max = censor_max;
    cfg.horizon = horizon;
    if (!(censor_min >= 0.0 && censor_min <= censor_max)) throw InvalidArgument("need 0 ≤ censor-min ≤ censor-max");
    const auto sim = simulate_dataset(cfg, n, seed);
    const fs::path dir(out);
    fs::create_directories(dir);
    write_simulation(sim, dir);
    Artifacts a;
    a.add(dir / "config.toml", snapshot(sub));
    std::ostringstream msg;
    msg << std::fixed << std::setprecision(1) << "simulated " << n << " patients: progression "
        << 100.0 * sim.proportions.progression << "%, treatment " << 100.0 * sim.proportions.treatment
        << "%, censored " << 100.0 * sim.proportions.censored << "%";
    a.note(msg.str());
    a.commit(dir / "run.log");
    os << msg.str() << '\n';
  }
};

// ---- fit ----

struct FitCmd {
  std::string data, out, spec, variant = "icjm1";
  int chains = 3, iters = 4000, burnin = -1, thin = 2, threads = env_threads();
  std::uint64_t seed = 1;

  void add(CLI::App* sub) {
    sub->add_option("--data", data, "dataset directory or JSON file")->required();
    sub->add_option("--out", out, "posterior archive (.json, or .bin/.cbor for CBOR)")->required();
    sub->add_option("--spec", spec, "model_spec.json of a simulation (default: knots from the data)");
    sub->add_option("--variant", variant, "icjm1 or icjm2")->capture_default_str();
    sub->add_option("--chains", chains)->capture_default_str();
    sub->add_option("--iters", iters)->capture_default_str();
    sub->add_option("--burnin", burnin, "-1: half of iters")->capture_default_str();
    sub->add_option("--thin", thin)->capture_default_str();
    sub->add_option("--seed", seed)->capture_default_str();
    sub->add_option("--threads", threads, "0: one per chain (default from ICJM_THREADS)")->capture_default_str();
  }

  void run(const CLI::App* sub, std::ostream& os) const {
    const auto ds = load_dataset(data);
    const auto v = parse_variant(variant);
    ModelSpec model = spec.empty() ? default_spec(ds, v) : read_generating_spec(spec);
    model.variant = v;
    MCMCConfig cfg;
    cfg.n_iterations = iters;
    cfg.n_burnin = burnin >= 0 ? burnin : iters / 2;
    cfg.thinning = thin;
    cfg.n_chains = chains;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    const auto post = fit(ds, model, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_posterior(post, out);
    Artifacts a;
    a.add(with_suffix(out, ".config.toml"), snapshot(sub));
    std::ostringstream msg;
    msg << "fitted " << to_string(model.variant) << " to " << ds.size() << " patients: " << post.size()
        << " retained draws from " << cfg.n_chains << " chains";
    a.note(msg.str());
    double max_rhat = 0.0;
    for (const auto& [name, r] : post.rhat)
      if (std::isfinite(r)) max_rhat = std::max(max_rhat, r);
    a.note("max R-hat " + format_number(max_rhat));
    for (const auto& b : post.acceptance)
      a.note("acceptance " + b.block + " chain " + std::to_string(b.chain) + ": " + format_number(b.rate) +
             " (target " + format_number(b.target) + ")");
    a.commit(with_suffix(out, ".log"));
    os << msg.str() << " in " << secs << " s; max R-hat " << max_rhat << '\n';
  }
};

// ---- predict ----

struct PredictCmd {
  PredictFlags f;
  std::string kind = "full", out;

  void add(CLI::App* sub) {
    f.add(sub);
    sub->add_option("--kind", kind, "full, no_treatment or at_visit_biopsy")->capture_default_str();
    sub->add_option("--out", out, "output prefix for .csv and .json")->required();
  }

  void run(const CLI::App* sub, std::ostream& os) const {
    const auto post = read_posterior(f.posterior);
    const auto ctx = f.context();
    const auto k = parse_risk_kind(kind);
    const auto curve = predict_risk_curve(k, ctx, post, f.config());
    Artifacts a;
    a.add(with_suffix(out, ".csv"), risk_curve_csv(curve));
    a.add(with_suffix(out, ".json"), risk_curve_json(curve, ctx.patient_id));
    a.add(with_suffix(out, ".config.toml"), snapshot(sub));
    const std::string msg = to_string(k) + " risk for " + ctx.patient_id + " at t=" + format_number(curve.grid.back()) +
                            ": " + format_number(curve.mean.back());
    a.note(msg);
    a.commit(with_suffix(out, ".log"));
    os << msg << '\n';
  }
};

// ---- schedule ----

struct ScheduleCmd {
  PredictFlags f;
  std::string phi = "auto", phi_grid, out;
  double max_dd = 1.5;

  void add(CLI::App* sub) {
    f.add(sub);
    sub->add_option("--phi", phi, "risk threshold, or auto for the loss-optimal one")->capture_default_str();
    sub->add_option("--phi-grid", phi_grid, "comma-separated thresholds for auto (default 0.02..0.50)");
    sub->add_option("--max-dd", max_dd, "upper bound on the expected detection delay")->capture_default_str();
    sub->add_option("--out", out, "schedule JSON")->required();
  }

  void run(const CLI::App* sub, std::ostream& os) const {
    const auto post = read_posterior(f.posterior);
    const auto ctx = f.context();
    const auto grid = VisitGrid::regular(f.visit_step, f.horizon);
    std::vector<double> phis;
    if (phi == "auto")
      phis = phi_grid.empty() ? default_threshold_grid() : parse_list(phi_grid, "--phi-grid");
    else
      phis = parse_list(phi, "--phi");
    const auto choice = optimal_threshold(ctx, grid, post, f.config(), phis, max_dd);
    Artifacts a;
    a.add(out, schedule_json(choice, ctx.patient_id));
    a.add(with_suffix(out, ".csv"), schedule_csv_header() + schedule_csv_row(choice, ctx.patient_id));
    a.add(with_suffix(out, ".config.toml"), snapshot(sub));
    std::string times;
    for (double t : choice.schedule.planned_times) times += (times.empty() ? "" : " ") + format_number(t);
    const std::string msg = "phi " + format_number(choice.phi) + ": biopsies at " + times + "; E[Nb] " +
                            format_number(choice.metrics.expected_nb) + ", E[Dd] " +
                            format_number(choice.metrics.expected_dd);
    a.note(msg);
    if (choice.constraint_relaxed) a.note("warning: no threshold met max-dd; the smallest expected delay was taken");
    a.commit(with_suffix(out, ".log"));
    os << msg << '\n';
  }
};

// ---- evaluate ----

struct EvaluateCmd {
  std::string data, posterior, out, studies = "cif,effects", policies = "annual,pass,personalized";
  std::string starts = "0,1,2,3,4,6";
  int n_progressed = 50, n_free = 50, draws = 100, mh = 100, warmup = 40;
  double window = 2.0, max_dd = 1.5, horizon = 10.0, visit_step = 0.5;
  std::uint64_t seed = 1;

  void add(CLI::App* sub) {
    sub->add_option("--data", data, "simulation directory (dataset, ground truth, model_spec.json)")->required();
    sub->add_option("--posterior", posterior, "posterior archive (needed by all studies but cif)");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--studies", studies, "comma list of cif, prediction-error, schedules, effects")
        ->capture_default_str();
    sub->add_option("--policies", policies)->capture_default_str();
    sub->add_option("--starts", starts, "prediction-error start times")->capture_default_str();
    sub->add_option("--window", window)->capture_default_str();
    sub->add_option("--n-progressed", n_progressed, "schedule study progressors")->capture_default_str();
    sub->add_option("--n-free", n_free, "schedule study non-progressors")->capture_default_str();
    sub->add_option("--max-dd", max_dd)->capture_default_str();
    sub->add_option("--horizon", horizon)->capture_default_str();
    sub->add_option("--visit-step", visit_step)->capture_default_str();
    sub->add_option("--draws", draws)->capture_default_str();
    sub->add_option("--mh", mh)->capture_default_str();
    sub->add_option("--warmup", warmup)->capture_default_str();
    sub->add_option("--seed", seed)->capture_default_str();
  }

  PredictConfig predict_config() const {
    PredictConfig c;
    c.n_draws = draws;
    c.n_mh = mh;
    c.warmup = warmup;
    c.seed = seed;
    c.horizon = horizon;
    c.visit_step = visit_step;
    c.validate();
    return c;
  }

  void run(const CLI::App* sub, std::ostream& os) const {
    const auto sim = read_simulation(data);
    const fs::path dir(out);
    Artifacts a;
    nlohmann::json report;
    std::optional<PosteriorSamples> post;
    const auto need_posterior = [&]() -> const PosteriorSamples& {
      if (posterior.empty()) throw InvalidArgument("this study needs --posterior");
      if (!post) post = read_posterior(posterior);
      return *post;
    };
    for (const auto& study : split(studies)) {
      if (study == "cif") {
        const auto est = aalen_johansen(competing_events(sim.data));
        a.add(dir / "cif.csv", cif_csv(est));
        report["cif"] = {{"n_times", est.times.size()},
                         {"progression_at_end", est.cif[0].empty() ? 0.0 : est.cif[0].back()},
                         {"treatment_at_end", est.cif[1].empty() ? 0.0 : est.cif[1].back()}};
      } else if (study == "prediction-error") {
        PredictionErrorConfig cfg;
        cfg.starts = parse_list(starts, "--starts");
        cfg.window = window;
        cfg.predict = predict_config();
        const auto rows = prediction_error_study(need_posterior(), sim, cfg);
        a.add(dir / "prediction_error.csv", prediction_error_csv(rows));
        auto& j = report["prediction_error"] = nlohmann::json::array();
        for (const auto& r : rows)
          j.push_back({{"start", r.start}, {"n_at_risk", r.n_at_risk}, {"mean_error", r.mean_error},
                       {"sd_error", r.sd_error}});
      } else if (study == "schedules") {
        ComparisonConfig cfg;
        cfg.policies.clear();
        for (const auto& p : split(policies)) cfg.policies.push_back(parse_policy(p));
        cfg.grid = VisitGrid::regular(visit_step, horizon);
        cfg.max_dd = max_dd;
        cfg.predict = predict_config();
        const auto test = select_strata(sim, static_cast<std::size_t>(n_progressed), static_cast<std::size_t>(n_free),
                                        horizon);
        const auto cmp = run_schedule_comparison(need_posterior(), test, cfg);
        a.add(dir / "schedule_comparison.csv", comparison_csv(cmp));
        a.add(dir / "schedule_summary.csv", comparison_summary_csv(cmp));
        auto& j = report["schedules"] = nlohmann::json::array();
        for (const auto& s : cmp.summary)
          j.push_back({{"policy", to_string(s.policy)}, {"progressed", s.progressed}, {"n", s.n},
                       {"mean_nb", s.mean_nb}, {"median_nb", s.median_nb},
                       {"median_delay", s.progressed ? nlohmann::json(s.median_delay) : nlohmann::json(nullptr)}});
      } else if (study == "effects") {
        const auto& p = need_posterior();
        std::vector<Contrast> cs;
        for (Cause k : {Cause::Progression, Cause::Treatment}) {
          auto psa = contrast_sweep("psa_value", k, ContrastKind::PsaValue, 5.0, {1, 2, 3, 5, 7.5, 10, 15, 20});
          auto slope = contrast_sweep("psa_slope", k, ContrastKind::PsaSlope, 0.0, {-0.5, -0.25, 0, 0.25, 0.5, 1});
          cs.insert(cs.end(), psa.begin(), psa.end());
          cs.insert(cs.end(), slope.begin(), slope.end());
          if (p.spec.variant == Variant::ICJM2) {
            auto cr = contrast_sweep("core_ratio", k, ContrastKind::CoreRatio, 0.15, {0.05, 0.1, 0.15, 0.3, 0.5});
            cs.insert(cs.end(), cr.begin(), cr.end());
          }
        }
        a.add(dir / "effects.csv", effect_csv(effect_curves(p, cs)));
        report["effects"] = {{"n_contrasts", cs.size()}};
      } else {
        throw InvalidArgument("unknown study '" + study + "'");
      }
      a.note("study " + study + " done");
    }
    a.add(dir / "report.json", report.dump(2) + "\n");
    a.add(dir / "config.toml", snapshot(sub));
    a.commit(dir / "run.log");
    os << "wrote " << a.files.size() << " files to " << dir.string() << '\n';
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interval-censored cause-specific joint model: simulate, fit, predict, schedule, evaluate", "icjm"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_config("--config", "", "TOML config, e.g. the snapshot written by a previous run");
  app.fallthrough();

  SimulateCmd sim;
  FitCmd fitc;
  PredictCmd pred;
  ScheduleCmd sched;
  EvaluateCmd eval;
  auto* s_sim = app.add_subcommand("simulate", "simulate a cohort with ground truth");
  auto* s_fit = app.add_subcommand("fit", "fit the joint model by MCMC");
  auto* s_pred = app.add_subcommand("predict", "risk curve for one patient");
  auto* s_sched = app.add_subcommand("schedule", "personalized biopsy schedule for one patient");
  auto* s_eval = app.add_subcommand("evaluate", "evaluation studies on a simulated cohort");
  sim.add(s_sim);
  fitc.add(s_fit);
  pred.add(s_pred);
  sched.add(s_sched);
  eval.add(s_eval);
  for (auto* s : {s_sim, s_fit, s_pred, s_sched, s_eval}) s->configurable();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s_sim->parsed()) sim.run(s_sim, out);
    if (s_fit->parsed()) fitc.run(s_fit, out);
    if (s_pred->parsed()) pred.run(s_pred, out);
    if (s_sched->parsed()) sched.run(s_sched, out);
    if (s_eval->parsed()) eval.run(s_eval, out);
  } catch (const InvalidArgument& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}

}  // namespace icjm::cli
