#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace msense;

namespace {

ProblemInstance scalar_instance() {
  return make_instance(make_identity_operator(1), Matrix::Ones(1, 1), 1);
}

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

PGDConfig scalar_config() {
  PGDConfig cfg;
  cfg.step = 0.1;
  cfg.max_iters = 10000;
  return cfg;
}

std::string csv(const Trajectory& t) {
  std::ostringstream os;
  write_trajectory_csv(os, t);
  return os.str();
}

}  // namespace

TEST(GradientDescent, ScalarRecursionOracle) {
  // x <- x - 0.1 * 2x(x^2 - 1), stopped once |x^2 - 1| <= 1e-6
  double x = 0.1;
  int iters = 0;
  while (std::abs(x * x - 1.0) > 1e-6 && iters < 10000) {
    x -= 0.1 * 2.0 * x * (x * x - 1.0);
    ++iters;
  }
  ASSERT_LT(iters, 10000);

  const auto t = gradient_descent(scalar_instance(), {2, 0.0}, scalar_config(), scalar(0.1));
  EXPECT_EQ(t.reason, Termination::converged);
  EXPECT_LT(std::abs(t.final_x(0, 0) * t.final_x(0, 0) - 1.0), 1e-6);
  EXPECT_EQ(static_cast<int>(t.records.size()) - 1, iters);
  EXPECT_NEAR(t.final_x(0, 0), x, 1e-14);
  EXPECT_EQ(t.iterations_to(1e-6), iters);
}

TEST(GradientDescent, ExactFitStopsImmediately) {
  Rng rng(1);
  const Matrix xs = gaussian_matrix(4, 2, rng);
  const auto inst = make_instance(make_gaussian_operator(4, 10, 2), xs, 2);
  const auto t = gradient_descent(inst, {4, 0.5}, PGDConfig{}, xs);
  EXPECT_EQ(t.reason, Termination::converged);
  ASSERT_EQ(t.records.size(), 1u);
  EXPECT_EQ(t.records[0].iter, 0);
  EXPECT_EQ(t.final_x, xs);
}

TEST(GradientDescent, Deterministic) {
  const auto inst = make_instance(make_epsilon_operator(5, 0.3), odd_indicator_factor(5), 1);
  PGDConfig cfg;
  cfg.max_iters = 500;
  cfg.seed = 17;
  const auto a = gradient_descent(inst, {4, 0.5}, cfg);
  const auto b = gradient_descent(inst, {4, 0.5}, cfg);
  EXPECT_EQ(csv(a), csv(b));
  EXPECT_EQ(a.final_x, b.final_x);
  cfg.seed = 18;
  EXPECT_NE(csv(gradient_descent(inst, {4, 0.5}, cfg)), csv(a));
}

TEST(GradientDescent, RecordsAreOrderedAndFinite) {
  const auto inst = make_instance(make_gaussian_operator(6, 20, 3), odd_indicator_factor(6), 1);
  PGDConfig cfg;
  cfg.max_iters = 300;
  const auto t = perturbed_gd(inst, {4, 5.0}, cfg);
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    EXPECT_EQ(t.records[i].iter, static_cast<int>(i));
    EXPECT_TRUE(std::isfinite(t.records[i].f));
    EXPECT_TRUE(std::isfinite(t.records[i].dist));
  }
}

TEST(GradientDescent, DivergenceGuard) {
  PGDConfig cfg;
  cfg.step = 10.0;
  cfg.max_iters = 1000;
  const auto t = gradient_descent(scalar_instance(), {2, 0.0}, cfg, scalar(2.0));
  EXPECT_EQ(t.reason, Termination::diverged);
  EXPECT_LT(t.records.size(), 1000u);
}

TEST(GradientDescent, MaxItersSentinel) {
  PGDConfig cfg = scalar_config();
  cfg.max_iters = 5;
  const auto t = gradient_descent(scalar_instance(), {2, 0.0}, cfg, scalar(0.1));
  EXPECT_EQ(t.reason, Termination::max_iters);
  EXPECT_EQ(t.records.size(), 6u);
  EXPECT_FALSE(t.iterations_to(1e-6).has_value());
}

TEST(GradientDescent, InvalidConfig) {
  PGDConfig cfg;
  cfg.max_iters = 0;
  EXPECT_THROW(gradient_descent(scalar_instance(), {2, 0.0}, cfg), InvalidArgument);
  cfg = PGDConfig{};
  cfg.converge_tol = 0.0;
  EXPECT_THROW(gradient_descent(scalar_instance(), {2, 0.0}, cfg), InvalidArgument);
  cfg = PGDConfig{};
  EXPECT_THROW(gradient_descent(scalar_instance(), {3, 0.0}, cfg), InvalidArgument);
  EXPECT_THROW(gradient_descent(scalar_instance(), {2, 0.0}, cfg, Matrix::Ones(2, 1)),
               InvalidArgument);
}

TEST(GradientDescent, MonotoneWithConservativeStep) {
  Rng rng(2);
  int trials = 0, violations = 0;
  for (int t = 0; t < 40; ++t) {
    const auto c = oracle::random_case(rng);
    const auto [lo, hi] = hessian_extremes(c.inst, c.x, c.spec);
    const double lhat = 4.0 * std::max(std::abs(lo), std::abs(hi));
    if (lhat <= 0.0) continue;
    PGDConfig cfg;
    cfg.step = 1.0 / lhat;
    cfg.max_iters = 200;
    const auto traj = gradient_descent(c.inst, c.spec, cfg, c.x);
    ++trials;
    for (std::size_t i = 1; i < traj.records.size(); ++i) {
      if (traj.records[i].f > traj.records[i - 1].f * (1 + 1e-12)) {
        ++violations;
        break;
      }
    }
  }
  EXPECT_LE(violations, trials / 20);
}

TEST(GradientDescent, DefaultStepFromCurvature) {
  const auto inst = make_instance(make_epsilon_operator(3, 0.3), odd_indicator_factor(3), 1);
  const Matrix x0 = small_initialization(inst, 1e-3, 0);
  const auto [lo, hi] = hessian_extremes(inst, x0, {4, 0.5});
  EXPECT_DOUBLE_EQ(default_step(inst, {4, 0.5}, x0), 0.05 / std::max(std::abs(lo), std::abs(hi)));
  PGDConfig cfg;
  cfg.max_iters = 1;
  EXPECT_DOUBLE_EQ(gradient_descent(inst, {4, 0.5}, cfg).step, default_step(inst, {4, 0.5}, x0));
}

TEST(GradientDescent, RecordStrideKeepsEndpoints) {
  const auto inst = make_instance(make_epsilon_operator(5, 0.3), odd_indicator_factor(5), 1);
  PGDConfig cfg;
  cfg.max_iters = 205;
  const auto full = gradient_descent(inst, {4, 0.5}, cfg);
  ASSERT_EQ(full.reason, Termination::max_iters);
  cfg.record_stride = 10;
  const auto strided = gradient_descent(inst, {4, 0.5}, cfg);
  EXPECT_EQ(strided.final_x, full.final_x);
  ASSERT_EQ(strided.records.size(), 22u);
  EXPECT_EQ(strided.records[1].iter, 10);
  EXPECT_EQ(strided.records.back().iter, 205);
  EXPECT_EQ(strided.records[15].f, full.records[150].f);
  cfg.record_stride = 0;
  EXPECT_THROW(gradient_descent(inst, {4, 0.5}, cfg), InvalidArgument);
}

TEST(PerturbedGd, ZeroTriggerMatchesPlainDescent) {
  const auto inst = make_instance(make_gaussian_operator(5, 12, 4), odd_indicator_factor(5), 1);
  PGDConfig cfg;
  cfg.max_iters = 2000;
  cfg.grad_trigger = 0.0;
  const auto a = gradient_descent(inst, {4, 0.5}, cfg);
  const auto b = perturbed_gd(inst, {4, 0.5}, cfg);
  EXPECT_EQ(b.perturbations, 0);
  EXPECT_EQ(csv(a), csv(b));
  EXPECT_EQ(a.final_x, b.final_x);
}

TEST(PerturbedGd, ScalarCaseStillConverges) {
  PGDConfig cfg = scalar_config();
  const auto t = perturbed_gd(scalar_instance(), {2, 0.0}, cfg, scalar(0.1));
  EXPECT_EQ(t.reason, Termination::converged);
  EXPECT_LT(std::abs(t.final_x(0, 0) * t.final_x(0, 0) - 1.0), 1e-6);
}

TEST(PerturbedGd, EscapesExactSaddle) {
  // X = 0 is a critical point; plain descent cannot leave it
  PGDConfig cfg = scalar_config();
  const auto plain = gradient_descent(scalar_instance(), {2, 0.0}, cfg, scalar(0.0));
  EXPECT_EQ(plain.reason, Termination::max_iters);
  const auto pgd = perturbed_gd(scalar_instance(), {2, 0.0}, cfg, scalar(0.0));
  EXPECT_EQ(pgd.reason, Termination::converged);
  EXPECT_GE(pgd.perturbations, 1);
  EXPECT_TRUE(pgd.records[0].perturbed);
  const auto csvs = csv(pgd);
  EXPECT_EQ(csvs.substr(0, csvs.find('\n')), "iter,f,dist,grad_norm,perturbed");
  EXPECT_NE(csvs.find(",1\n"), std::string::npos);
}

TEST(PerturbedGd, Deterministic) {
  const auto inst = make_instance(make_epsilon_operator(5, 0.3), odd_indicator_factor(5), 1);
  PGDConfig cfg;
  cfg.max_iters = 3000;
  cfg.grad_trigger = 1e-2;
  cfg.seed = 5;
  const auto a = perturbed_gd(inst, {4, 5.0}, cfg);
  const auto b = perturbed_gd(inst, {4, 5.0}, cfg);
  EXPECT_GT(a.perturbations, 0);
  EXPECT_EQ(csv(a), csv(b));
}

TEST(SpuriousSearch, SmallMaskHasSpuriousMinimum) {
  const auto inst = make_instance(make_epsilon_operator(3, 0.3), odd_indicator_factor(3), 1);
  PGDConfig cfg;
  cfg.init_scale = 1.0;
  const auto pts = find_spurious_minima(inst, {4, 0.0}, 10, cfg, 1e-8, 1e-8);
  ASSERT_GE(pts.size(), 1u);
  for (const auto& p : pts) {
    const auto rep = classify_point(inst, p.x, {4, 0.0}, 1e-8, 1e-8);
    EXPECT_EQ(rep.classification, PointClass::second_order_point);
    EXPECT_LE(rep.grad_norm, 1e-8);
    EXPECT_GE(rep.lambda_min, -1e-8);
    EXPECT_GT(rep.distance, 10 * cfg.converge_tol);
    EXPECT_EQ(rep.lambda_min, p.report.lambda_min);
  }
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_TRUE(std::abs(pts[i].report.distance - pts[j].report.distance) > 1e-4 ||
                  std::abs(pts[i].report.lambda_min - pts[j].report.lambda_min) > 1e-4 ||
                  std::abs(pts[i].report.lambda_max - pts[j].report.lambda_max) > 1e-4);
}

TEST(SpuriousSearch, IsometryHasNone) {
  Rng rng(3);
  for (int r : {1, 2}) {
    const Matrix xs = gaussian_matrix(4, r, rng);
    const auto inst = make_instance(make_identity_operator(4), xs, r);
    PGDConfig cfg;
    cfg.init_scale = 0.5;
    EXPECT_TRUE(find_spurious_minima(inst, {4, 0.5}, 10, cfg, 1e-8, 1e-8).empty());
  }
}

TEST(SpuriousSearch, ExactFitStartIsEmpty) {
  // with the truth at the origin of the search, every start is an exact fit
  const auto inst = make_instance(make_epsilon_operator(3, 0.3), Matrix::Zero(3, 1), 1);
  PGDConfig cfg;
  cfg.init_scale = 1e-9;
  EXPECT_TRUE(find_spurious_minima(inst, {4, 0.0}, 1, cfg, 1e-8, 1e-8).empty());
  EXPECT_THROW(find_spurious_minima(inst, {4, 0.0}, 0, cfg, 1e-8, 1e-8), InvalidArgument);
}

TEST(Polish, ReachesTightGradient) {
  const auto inst = make_instance(make_epsilon_operator(3, 0.3), odd_indicator_factor(3), 1);
  PGDConfig cfg;
  cfg.init_scale = 1.0;
  cfg.stationary_tol = 1e-5;
  const auto t = gradient_descent(inst, {4, 0.0}, cfg);
  ASSERT_EQ(t.reason, Termination::stationary);
  const Matrix x = polish_critical_point(inst, t.final_x, {4, 0.0}, 1e-12);
  EXPECT_LT(gradient(inst, x, {4, 0.0}).norm(), 1e-10);
  EXPECT_LT((x - t.final_x).norm(), 1e-3);
}

TEST(MatrixFile, RoundTripIsExact) {
  Rng rng(4);
  const Matrix m = gaussian_matrix(5, 3, rng) * 1e-7;
  std::stringstream ss;
  write_matrix(ss, m);
  EXPECT_EQ(read_matrix(ss), m);
  std::stringstream bad("2 2\n1 2 3\n");
  EXPECT_THROW(read_matrix(bad), InvalidArgument);
}

TEST(Distance, Examples) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 2;
  m(1, 1) = 1;
  EXPECT_DOUBLE_EQ(distance_to_truth(Matrix::Zero(2, 1), m), std::sqrt(5.0));
  const Matrix x = odd_indicator_factor(4);
  EXPECT_EQ(distance_to_truth(x, x * x.transpose()), 0.0);
  EXPECT_THROW(distance_to_truth(Matrix::Zero(3, 1), m), InvalidArgument);
}
