#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "icjm/adaptive.hpp"
#include "icjm/error.hpp"
#include "icjm/predict.hpp"
#include "icjm/simulate.hpp"

using namespace icjm;

namespace {

ModelParameters constant_hazards(double hp, double ht) {
  auto p = simulation_preset_parameters();
  for (int k = 0; k < kNumCauses; ++k) {
    const double h = k == 0 ? hp : ht;
    p.gamma_h0[k].setConstant(h > 0 ? std::log(h) : -1000.0);
    p.gamma[k] = 0.0;
    p.alpha[k].setZero();
  }
  return p;
}

PosteriorSamples posterior_of(std::vector<ModelParameters> draws) {
  PosteriorSamples post;
  post.spec = simulation_preset_spec();
  post.draws = std::move(draws);
  post.chain.assign(post.draws.size(), 0);
  return post;
}

PredictionContext empty_context(double t_b, double t_v) {
  PredictionContext ctx;
  ctx.patient_id = "p";
  ctx.t_b = t_b;
  ctx.t_v = t_v;
  ctx.t_y = 0.0;
  return ctx;
}

PredictConfig small_config(int draws = 20) {
  PredictConfig cfg;
  cfg.n_draws = draws;
  cfg.n_mh = 60;
  cfg.warmup = 20;
  return cfg;
}

// competing exponentials, untreated to t_v: progression before t_v, then the
// progression share of the first event after it
double full_closed_form(double hp, double ht, double t_b, double t_v, double t_p) {
  const double h = hp + ht;
  const double before = 1.0 - std::exp(-hp * (t_v - t_b));
  return before + std::exp(-hp * (t_v - t_b)) * hp / h * (1.0 - std::exp(-h * (t_p - t_v)));
}

SimulatedPatient rich_patient(std::uint64_t seed) {
  SimulationConfig cfg;
  cfg.censor_min = 9.0;
  cfg.censor_max = 10.0;
  return simulate_patient(cfg, "rich" + std::to_string(seed), seed);
}

}  // namespace

TEST(SubjectEffects, PriorRecoveryWithoutData) {
  const auto spec = simulation_preset_spec();
  const auto params = simulation_preset_parameters();
  const SubjectPosterior subject(empty_context(0.0, 0.0), spec);
  RunningMoments m(spec.n_u());
  for (int i = 0; i < 10000; ++i) {
    auto rng = make_rng(77, {static_cast<std::uint64_t>(i)});
    m.add(subject.sample(params, true, 60, 20, rng));
  }
  const double rel = (m.covariance() - params.omega).norm() / params.omega.norm();
  EXPECT_LT(rel, 0.10);
  EXPECT_LT(m.mean().norm(), 0.1);
}

TEST(SubjectEffects, CredibleIntervalsCoverGeneratingEffects) {
  const auto spec = simulation_preset_spec();
  auto params = simulation_preset_parameters();
  params.beta(0) = 6.0;  // keeps every simulated log2(PSA + 1) positive
  int covered = 0, total = 0;
  for (std::uint64_t r = 0; r < 40; ++r) {
    auto rng = make_rng(4242, {r});
    const Eigen::VectorXd u_star = mvn_draw(rng, Eigen::VectorXd::Zero(4), params.omega);
    PredictionContext ctx = empty_context(0.0, 0.0);
    ctx.covariates = {60.0, 0.1};
    for (int j = 0; j <= 16; ++j) {
      const double t = 0.25 * j;
      const double y = mean_psa(t, params.beta, u_star, ctx.covariates.age, spec) +
                       student_t_draw(rng, 3.0) / std::sqrt(params.tau_eps);
      ASSERT_GT(y, 0.0);
      ctx.history.push_back({"p", t, OutcomeKind::PSA, std::exp2(y) - 1.0, std::nullopt});
    }
    ctx.t_y = 4.0;
    const SubjectPosterior subject(ctx, spec);
    std::vector<std::vector<double>> draws(4);
    for (std::uint64_t s = 0; s < 200; ++s) {
      auto chain_rng = make_rng(99, {r, s});
      const auto u = subject.sample(params, false, 150, 50, chain_rng);
      for (int c = 0; c < 4; ++c) draws[c].push_back(u(c));
    }
    for (int c = 0; c < 4; ++c) {
      std::sort(draws[c].begin(), draws[c].end());
      const double lo = quantile_sorted(draws[c], 0.025), hi = quantile_sorted(draws[c], 0.975);
      covered += lo <= u_star(c) && u_star(c) <= hi;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(covered) / total, 0.80) << covered << "/" << total;
}

TEST(SubjectEffects, ConditioningVanishesWithoutTreatmentHazard) {
  const auto spec = simulation_preset_spec();
  auto params = simulation_preset_parameters();
  params.gamma_h0[1].setConstant(-1000.0);
  params.gamma[1] = 0.0;
  params.alpha[1].setZero();
  const auto sim = rich_patient(3);
  const auto ctx = PredictionContext::from_record(sim.record, 1.0, 2.5, 2.5);
  const SubjectPosterior subject(ctx, spec);
  auto rng = make_rng(5);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd u = mvn_draw(rng, Eigen::VectorXd::Zero(4), params.omega);
    EXPECT_NEAR(subject.log_target(params, u, true), subject.log_target(params, u, false), 1e-12);
  }
}

TEST(SubjectEffects, ConditioningOnVisitLowersTreatmentProneEffects) {
  const auto spec = simulation_preset_spec();
  const auto params = simulation_preset_parameters();
  const SubjectPosterior subject(empty_context(0.0, 6.0), spec);
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(4), hi = lo;
  hi(0) = 2.0;
  const double d_on = subject.log_target(params, hi, true) - subject.log_target(params, lo, true);
  const double d_off = subject.log_target(params, hi, false) - subject.log_target(params, lo, false);
  EXPECT_LT(d_on, d_off);
}

TEST(SubjectEffects, RejectsInvalidContext) {
  const auto spec = simulation_preset_spec();
  EXPECT_THROW(SubjectPosterior(empty_context(2.0, 1.0), spec), InvalidArgument);
  auto ctx = empty_context(0.0, 0.0);
  ctx.history.push_back({"p", 3.0, OutcomeKind::PSA, 4.0, std::nullopt});
  EXPECT_THROW(SubjectPosterior(ctx, spec), InvalidArgument);
}

TEST(SubjectEffects, SeededAndReproducible) {
  const auto spec = simulation_preset_spec();
  const auto params = simulation_preset_parameters();
  const auto sim = rich_patient(8);
  const auto ctx = PredictionContext::from_record(sim.record, 1.0, 1.5, 1.5);
  const auto a = sample_subject_effects(ctx, params, spec, true, 100, 11);
  const auto b = sample_subject_effects(ctx, params, spec, true, 100, 11);
  const auto c = sample_subject_effects(ctx, params, spec, true, 100, 12);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(RiskGrid, VisitStepsRefinedByQuadratureNodes) {
  const auto k = risk_knots(1.2, 2.2, 3.0, 0.5);
  EXPECT_EQ(k, (std::vector<double>{1.2, 1.5, 2.0, 2.2, 2.5, 3.0}));
  const auto g = risk_grid(k);
  EXPECT_EQ(g.size(), 1 + 16 * (k.size() - 1));
  for (double t : k) EXPECT_NE(std::find(g.begin(), g.end(), t), g.end()) << t;
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
  EXPECT_EQ(risk_knots(4.0, 4.0, 4.0, 0.5), std::vector<double>{4.0});
  EXPECT_EQ(risk_grid({4.0}), std::vector<double>{4.0});
}

TEST(RiskClosedForm, ConstantHazards) {
  const std::vector<std::pair<double, double>> rates{{0.3, 0.1}, {0.05, 0.4}, {1.2, 0.7}};
  std::vector<ModelParameters> draws;
  for (auto [hp, ht] : rates) draws.push_back(constant_hazards(hp, ht));
  const auto post = posterior_of(draws);
  const auto cfg = small_config(3);

  for (double t_p : {0.5, 2.0, 7.3}) {
    const auto full = risk_full(empty_context(0.0, 0.0), t_p, post, cfg);
    const auto none = risk_no_treatment(empty_context(0.0, 0.0), t_p, post, cfg);
    const auto visit = risk_at_visit_biopsy(empty_context(1.5, 1.5), t_p + 1.5, post, cfg);
    const auto later = risk_full(empty_context(0.5, 2.0), t_p + 2.0, post, cfg);
    for (std::size_t d = 0; d < rates.size(); ++d) {
      const auto [hp, ht] = rates[d];
      const double h = hp + ht;
      const auto i = static_cast<Eigen::Index>(d);
      EXPECT_NEAR(full.per_draw(i), hp / h * (1.0 - std::exp(-h * t_p)), 1e-6);
      EXPECT_NEAR(none.per_draw(i), 1.0 - std::exp(-hp * t_p), 1e-6);
      const double tb = 1.5, tp = t_p + 1.5;
      EXPECT_NEAR(visit.per_draw(i), hp / h * (std::exp(-h * tb) - std::exp(-h * tp)) / std::exp(-h * tb), 1e-6);
      EXPECT_NEAR(later.per_draw(i), full_closed_form(hp, ht, 0.5, 2.0, t_p + 2.0), 1e-6);
    }
    EXPECT_NEAR(full.mean, full.per_draw.mean(), 1e-15);
    EXPECT_LE(full.lower, full.mean);
    EXPECT_GE(full.upper, full.mean);
  }
}

TEST(RiskClosedForm, EmptyIntervalIsZero) {
  const auto post = posterior_of({constant_hazards(0.3, 0.1)});
  const auto cfg = small_config(1);
  EXPECT_EQ(risk_full(empty_context(2.0, 2.0), 2.0, post, cfg).mean, 0.0);
  EXPECT_EQ(risk_no_treatment(empty_context(2.0, 3.0), 2.0, post, cfg).mean, 0.0);
  EXPECT_EQ(risk_at_visit_biopsy(empty_context(2.0, 2.0), 2.0, post, cfg).mean, 0.0);
}

TEST(RiskClosedForm, NoTreatmentApproachesOne) {
  const auto post = posterior_of({constant_hazards(0.3, 0.1)});
  auto cfg = small_config(1);
  cfg.horizon = 80.0;
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, empty_context(0.0, 0.0), post, cfg);
  for (std::size_t g = 1; g < curve.grid.size(); ++g) EXPECT_GE(curve.mean[g], curve.mean[g - 1]);
  EXPECT_GT(curve.mean.back(), 1.0 - 1e-9);
  EXPECT_LE(curve.mean.back(), 1.0);
}

TEST(RiskReduction, NoTreatmentEqualsFullWithoutTreatmentHazard) {
  auto params = simulation_preset_parameters();
  params.gamma_h0[1].setConstant(-1000.0);
  params.gamma[1] = 0.0;
  params.alpha[1].setZero();
  const auto post = posterior_of({params, params, params});
  const auto sim = rich_patient(21);
  const auto ctx = PredictionContext::from_record(sim.record, 1.0, 1.0, 1.0);
  auto cfg = small_config(3);
  cfg.horizon = 6.0;
  const auto none = predict_risk_curve(RiskKind::NoTreatment, ctx, post, cfg);
  const auto full = predict_risk_curve(RiskKind::Full, ctx, post, cfg);
  ASSERT_EQ(none.per_draw.rows(), full.per_draw.rows());
  for (std::size_t d = 0; d < none.effects.size(); ++d) EXPECT_EQ(none.effects[d], full.effects[d]);
  EXPECT_LT((none.per_draw - full.per_draw).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RiskReduction, AtVisitBiopsyEqualsFull) {
  const auto params = simulation_preset_parameters();
  const auto post = posterior_of({params, params});
  const auto sim = rich_patient(22);
  const auto ctx = PredictionContext::from_record(sim.record, 2.0, 2.0, 2.0);
  auto cfg = small_config(2);
  cfg.horizon = 7.0;
  const auto visit = predict_risk_curve(RiskKind::AtVisitBiopsy, ctx, post, cfg);
  const auto full = predict_risk_curve(RiskKind::Full, ctx, post, cfg);
  EXPECT_LT((visit.per_draw - full.per_draw).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RiskCurveInvariants, BoundedMonotoneAndZeroAtLastBiopsy) {
  const auto params = simulation_preset_parameters();
  std::vector<ModelParameters> draws(6, params);
  for (std::size_t i = 0; i < draws.size(); ++i) draws[i].gamma[0] += 0.1 * static_cast<double>(i);
  const auto post = posterior_of(draws);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto sim = rich_patient(100 + s);
    const double t_b = 0.5 * static_cast<double>(s), t_v = t_b + 0.75;
    const auto ctx = PredictionContext::from_record(sim.record, t_b, t_v, t_v);
    auto cfg = small_config(6);
    cfg.horizon = 9.0;
    for (auto kind : {RiskKind::NoTreatment, RiskKind::Full}) {
      const auto curve = predict_risk_curve(kind, ctx, post, cfg);
      EXPECT_EQ(curve.grid.front(), t_b);
      EXPECT_EQ(curve.mean.front(), 0.0);
      for (Eigen::Index d = 0; d < curve.per_draw.rows(); ++d)
        for (Eigen::Index g = 1; g < curve.per_draw.cols(); ++g) {
          EXPECT_GE(curve.per_draw(d, g), curve.per_draw(d, g - 1));
          EXPECT_LE(curve.per_draw(d, g), 1.0);
        }
      for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        EXPECT_LE(curve.lower[g], curve.mean[g] + 1e-15);
        EXPECT_GE(curve.upper[g], curve.mean[g] - 1e-15);
      }
    }
  }
}

TEST(RiskErrors, OrderingViolations) {
  const auto post = posterior_of({constant_hazards(0.3, 0.1)});
  const auto cfg = small_config(1);
  EXPECT_THROW(risk_no_treatment(empty_context(2.0, 2.0), 1.0, post, cfg), InvalidArgument);
  EXPECT_THROW(risk_full(empty_context(1.0, 3.0), 2.0, post, cfg), InvalidArgument);
  EXPECT_THROW(risk_at_visit_biopsy(empty_context(1.0, 2.0), 3.0, post, cfg), InvalidArgument);
  EXPECT_THROW(risk_no_treatment(empty_context(0.0, 0.0), 1.0, posterior_of({}), cfg), InvalidArgument);
  EXPECT_THROW(parse_risk_kind("sometimes"), InvalidArgument);
  EXPECT_EQ(parse_risk_kind(to_string(RiskKind::AtVisitBiopsy)), RiskKind::AtVisitBiopsy);
}

TEST(ConditionalRisk, Identities) {
  const auto post = posterior_of({constant_hazards(0.3, 0.1), constant_hazards(0.1, 0.1)});
  auto cfg = small_config(2);
  cfg.horizon = 8.0;
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, empty_context(1.0, 1.0), post, cfg);
  EXPECT_NEAR(conditional_risk_from_curve(curve, 1.0, 4.0), curve.mean_at(4.0), 1e-15);
  EXPECT_EQ(conditional_risk_from_curve(curve, 3.0, 3.0), 0.0);
  EXPECT_THROW(conditional_risk_from_curve(curve, 0.5, 3.0), InvalidArgument);
  EXPECT_THROW(conditional_risk_from_curve(curve, 2.0, 9.0), InvalidArgument);
}

TEST(ConditionalRisk, MemorylessUnderConstantHazard) {
  const double hp = 0.3;
  const auto post = posterior_of({constant_hazards(hp, 0.2)});
  auto cfg = small_config(1);
  cfg.horizon = 8.0;
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, empty_context(1.0, 1.0), post, cfg);
  for (auto [tb, te] : std::vector<std::pair<double, double>>{{2.0, 3.5}, {4.5, 8.0}, {1.0, 6.0}})
    EXPECT_NEAR(conditional_risk_from_curve(curve, tb, te), 1.0 - std::exp(-hp * (te - tb)), 1e-6);
}

TEST(ConditionalRisk, MatchesDirectRecomputationAtMatchedDraws) {
  const auto params = simulation_preset_parameters();
  std::vector<ModelParameters> draws(12, params);
  for (std::size_t i = 0; i < draws.size(); ++i) draws[i].alpha[0](1) += 0.2 * static_cast<double>(i);
  const auto post = posterior_of(draws);
  const auto sim = rich_patient(31);
  const auto ctx = PredictionContext::from_record(sim.record, 1.0, 1.0, 1.0);
  auto cfg = small_config(12);
  cfg.horizon = 8.0;
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, ctx, post, cfg);
  for (auto [tb, te] : std::vector<std::pair<double, double>>{{2.5, 4.0}, {3.0, 7.5}}) {
    std::vector<double> direct;
    for (std::size_t d = 0; d < curve.effects.size(); ++d) {
      const auto path = risk_path(RiskKind::NoTreatment, post.draws[curve.draw_index[d]], curve.effects[d],
                                  ctx.covariates, post.spec, tb, tb, {tb, te});
      direct.push_back(path(1));
    }
    const double n = static_cast<double>(direct.size());
    double mean = 0.0, ss = 0.0;
    for (double v : direct) mean += v / n;
    for (double v : direct) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (n - 1.0) / n);
    const double reformulated = conditional_risk_from_curve(curve, tb, te);
    EXPECT_NEAR(reformulated, mean, std::max(3.0 * se, 1e-9));
    EXPECT_NEAR(reformulated, mean, 1e-8);
  }
}

TEST(RiskExport, CsvAndJsonEnvelope) {
  const auto post = posterior_of({constant_hazards(0.3, 0.1)});
  auto cfg = small_config(1);
  cfg.horizon = 2.0;
  auto ctx = empty_context(1.0, 1.5);
  const auto curve = predict_risk_curve(RiskKind::Full, ctx, post, cfg);
  const auto csv = risk_curve_csv(curve);
  EXPECT_EQ(csv.rfind("t_p,mean,lower,upper\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), curve.grid.size() + 1);
  const auto j = nlohmann::json::parse(risk_curve_json(curve, "p"));
  EXPECT_EQ(j["kind"], "full");
  EXPECT_EQ(j["t_b"], 1.0);
  EXPECT_EQ(j["t_v"], 1.5);
  EXPECT_EQ(j["grid"].size(), curve.grid.size());
  const auto none = predict_risk_curve(RiskKind::NoTreatment, ctx, post, cfg);
  EXPECT_TRUE(nlohmann::json::parse(risk_curve_json(none, "p"))["t_v"].is_null());
}
