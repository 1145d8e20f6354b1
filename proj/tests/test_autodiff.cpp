#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

#include "avatarfield/autodiff/adam.hpp"
#include "avatarfield/autodiff/checkpoint.hpp"
#include "avatarfield/autodiff/grad_check.hpp"
#include "avatarfield/autodiff/ops.hpp"
#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/errors.hpp"

namespace ad = avatarfield::ad;
using ad::Mat;
using ad::Tape;
using ad::Var;

TEST(Tape, SquareHasDerivativeSix) {
  ad::ParamStore store;
  store.add("x", 1, 1, ad::Init::Constant, 3.0);
  Tape t(&store);
  Var x = t.parameter("x");
  Var y = ad::square(t, x);
  auto g = t.gradient(y);
  EXPECT_DOUBLE_EQ(t.scalar_value(y), 9.0);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
}

TEST(Tape, ProductRule) {
  ad::ParamStore store;
  store.add("x", 1, 1, ad::Init::Constant, 2.0);
  store.add("y", 1, 1, ad::Init::Constant, 5.0);
  Tape t(&store);
  Var f = ad::mul(t, t.parameter("x"), t.parameter("y"));
  auto g = t.gradient(f);
  EXPECT_DOUBLE_EQ(g[0], 5.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Tape, SoftmaxUniformUpstreamGivesZeroGradient) {
  ad::ParamStore store(3);
  store.add("logits", 2, 5, ad::Init::Uniform, 2.0);
  Tape t(&store);
  Var s = ad::softmax_rows(t, t.parameter("logits"));
  auto g = t.gradient(ad::sum(t, s));
  for (double v : g) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Tape, NonScalarLossIsContractViolation) {
  ad::ParamStore store;
  store.add("x", 2, 1, ad::Init::Constant, 1.0);
  Tape t(&store);
  Var x = t.parameter("x");
  EXPECT_THROW(t.gradient(x), avatarfield::ContractError);
}

TEST(Tape, GradientLeavesValuesUntouched) {
  ad::ParamStore store(11);
  store.add("w", 3, 4);
  Tape t(&store);
  Var w = t.parameter("w");
  Var y = ad::sum(t, ad::square(t, w));
  const Mat before = t.value(y);
  const auto params_before = store.values();
  (void)t.gradient(y);
  EXPECT_EQ(t.value(y), before);
  EXPECT_EQ(store.values(), params_before);
}

TEST(FiniteDiff, SumOfSquaresIsExact) {
  ad::ParamStore store(5);
  store.add("theta", 4, 3, ad::Init::Uniform, 1.0);
  auto f = ad::tape_objective(store, [](Tape& t) { return ad::sum(t, ad::square(t, t.parameter("theta"))); });
  const auto theta = store.values();
  auto r = ad::finite_diff_check(f, theta, 1e-5);
  EXPECT_LE(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.checked, theta.size());
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  ad::ParamStore store(5);
  store.add("theta", 2, 2, ad::Init::Uniform, 1.0);
  auto f = ad::tape_objective(store, [](Tape& t) {
    (void)t.parameter("theta");
    return t.scalar(4.2);
  });
  auto r = ad::finite_diff_check(f, store.values(), 1e-4);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(FiniteDiff, NonFiniteOutputNamesCoordinate) {
  ad::ParamStore store;
  store.add("theta", 1, 3, ad::Init::Constant, 1e-5);
  auto f = ad::tape_objective(store, [](Tape& t) { return ad::sum(t, ad::log(t, t.parameter("theta"))); });
  try {
    (void)ad::finite_diff_check(f, store.values(), 1e-4);
    FAIL() << "expected NumericalError";
  } catch (const avatarfield::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 0"), std::string::npos);
  }
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  ad::ParamStore store;
  store.add("theta", 1, 1);
  auto f = ad::tape_objective(store, [](Tape& t) { return ad::sum(t, t.parameter("theta")); });
  EXPECT_THROW((void)ad::finite_diff_check(f, store.values(), 0.0), avatarfield::ContractError);
}

namespace {

struct OpCase {
  const char* name;
  bool positive_inputs;
  std::function<Var(Tape&, Var a, Var b)> build;  // a: 4x3 param, b: 4x3 param
};

std::vector<OpCase> op_cases() {
  return {
      {"add", false, [](Tape& t, Var a, Var b) { return ad::add(t, a, b); }},
      {"sub", false, [](Tape& t, Var a, Var b) { return ad::sub(t, a, b); }},
      {"mul", false, [](Tape& t, Var a, Var b) { return ad::mul(t, a, b); }},
      {"scale", false, [](Tape& t, Var a, Var) { return ad::scale(t, a, -1.7); }},
      {"add_scalar", false, [](Tape& t, Var a, Var) { return ad::add_scalar(t, a, 0.3); }},
      {"matmul_nt", false, [](Tape& t, Var a, Var b) { return ad::matmul_nt(t, a, b); }},
      {"add_row", false,
       [](Tape& t, Var a, Var b) { return ad::add_row(t, a, ad::slice_rows(t, b, 1, 1)); }},
      {"mul_col", false,
       [](Tape& t, Var a, Var b) { return ad::mul_col(t, a, ad::slice_cols(t, b, 2, 1)); }},
      {"relu", false, [](Tape& t, Var a, Var) { return ad::relu(t, a); }},
      {"softplus", false, [](Tape& t, Var a, Var) { return ad::softplus(t, a, 3.0); }},
      {"sigmoid", false, [](Tape& t, Var a, Var) { return ad::sigmoid(t, a); }},
      {"exp", false, [](Tape& t, Var a, Var) { return ad::exp(t, a); }},
      {"log", true, [](Tape& t, Var a, Var) { return ad::log(t, a); }},
      {"sin", false, [](Tape& t, Var a, Var) { return ad::sin(t, a); }},
      {"cos", false, [](Tape& t, Var a, Var) { return ad::cos(t, a); }},
      {"square", false, [](Tape& t, Var a, Var) { return ad::square(t, a); }},
      {"sqrt", true, [](Tape& t, Var a, Var) { return ad::sqrt(t, a); }},
      {"concat_cols", false,
       [](Tape& t, Var a, Var b) {
         Var parts[] = {a, b, a};
         return ad::concat_cols(t, parts);
       }},
      {"concat_rows", false,
       [](Tape& t, Var a, Var b) {
         Var parts[] = {b, a};
         return ad::concat_rows(t, parts);
       }},
      {"gather_rows", false, [](Tape& t, Var a, Var) { return ad::gather_rows(t, a, {3, 0, 0, 2}); }},
      {"scatter_rows", false, [](Tape& t, Var a, Var) { return ad::scatter_rows(t, a, {5, 1, 0, 3}, 7); }},
      {"tile_rows", false, [](Tape& t, Var a, Var) { return ad::tile_rows(t, a, 3); }},
      {"stacked_to_cols", false, [](Tape& t, Var a, Var) { return ad::stacked_to_cols(t, a, 2); }},
      {"row_sum", false, [](Tape& t, Var a, Var) { return ad::row_sum(t, a); }},
      {"mean", false, [](Tape& t, Var a, Var) { return ad::mean(t, a); }},
      {"row_norm", false, [](Tape& t, Var a, Var) { return ad::row_norm(t, a); }},
      {"softmax_rows", false, [](Tape& t, Var a, Var) { return ad::softmax_rows(t, a); }},
      {"softmax_rows_masked", false,
       [](Tape& t, Var a, Var) {
         return ad::softmax_rows(t, a, {1, 0, 1, 1, 1, 0, 0, 0, 0, 0, 1, 1});
       }},
      {"clamp", false, [](Tape& t, Var a, Var) { return ad::clamp(t, a, -0.5, 0.4); }},
  };
}

}  // namespace

// Every operation kind agrees with central differences on random small tapes.
TEST(FiniteDiff, EveryOpMatchesCentralDifferences) {
  for (const OpCase& op : op_cases()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ad::ParamStore store(seed);
      store.add("a", 4, 3, ad::Init::Uniform, 1.0);
      store.add("b", 4, 3, ad::Init::Uniform, 1.0);
      if (op.positive_inputs) {
        for (double& v : store.values()) v = std::abs(v) + 0.2;
      }
      std::mt19937_64 rng(seed * 7919);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Mat proj;  // fixed random projection of the op output to a scalar
      auto f = ad::tape_objective(store, [&](Tape& t) {
        Var y = op.build(t, t.parameter("a"), t.parameter("b"));
        if (proj.size() == 0) {
          proj.resize(t.value(y).rows(), t.value(y).cols());
          for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = u(rng);
        }
        return ad::sum(t, ad::mul(t, y, t.constant(proj)));
      });
      auto r = ad::finite_diff_check(f, store.values(), 1e-5);
      EXPECT_LE(r.max_relative_error, 1e-4) << op.name << " seed " << seed << " coord " << r.worst_coordinate
                                            << " analytic " << r.analytic << " numeric " << r.numeric;
    }
  }
}

TEST(Tape, ForwardIsBitIdenticalAcrossRuns) {
  ad::ParamStore a(42), b(42);
  for (auto* s : {&a, &b}) {
    s->add("w1", 16, 8);
    s->add("b1", 1, 16, ad::Init::Zero);
    s->add("w2", 1, 16);
  }
  EXPECT_EQ(a.values(), b.values());
  Mat x = Mat::Random(32, 8);
  auto run = [&x](ad::ParamStore& s) {
    Tape t(&s);
    Var h = ad::softplus(t, ad::linear(t, t.constant(x), t.parameter("w1"), t.parameter("b1")), 2.0);
    Var y = ad::sum(t, ad::matmul_nt(t, h, t.parameter("w2")));
    return std::make_pair(t.scalar_value(y), t.gradient(y));
  };
  auto [ya, ga] = run(a);
  auto [yb, gb] = run(b);
  EXPECT_EQ(ya, yb);
  EXPECT_EQ(ga, gb);
}

TEST(Tape, GradientOfSumIsSumOfGradients) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ad::ParamStore store(seed);
    store.add("p", 5, 4, ad::Init::Uniform, 1.5);
    auto f1 = [](Tape& t) { return ad::sum(t, ad::sin(t, t.parameter("p"))); };
    auto f2 = [](Tape& t) { return ad::sum(t, ad::row_norm(t, ad::square(t, t.parameter("p")))); };
    Tape t1(&store), t2(&store), t3(&store);
    auto g1 = t1.gradient(f1(t1));
    auto g2 = t2.gradient(f2(t2));
    auto g3 = t3.gradient(ad::add(t3, f1(t3), f2(t3)));
    for (std::size_t i = 0; i < g3.size(); ++i) EXPECT_NEAR(g3[i], g1[i] + g2[i], 1e-12);
  }
}

TEST(ParamStore, SegmentsAreDisjointAndCoverTheVector) {
  ad::ParamStore store(9);
  store.add("a", 3, 4);
  store.add("b", 1, 7, ad::Init::Zero);
  store.add("c", 2, 2, ad::Init::Constant, 0.5);
  std::size_t next = 0;
  for (const auto& s : store.segments()) {
    EXPECT_EQ(s.offset, next);
    next += s.length();
  }
  EXPECT_EQ(next, store.size());
  EXPECT_THROW(store.add("a", 1, 1), avatarfield::ContractError);
  const double bound = std::sqrt(6.0 / 7.0);
  for (double v : store.view("a")) EXPECT_LE(std::abs(v), bound);
  for (double v : store.view("b")) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ad::ParamStore store(77);
  store.add("w", 5, 3);
  store.add("hash", 64, 2, ad::Init::Uniform, 1e-4);
  store.values()[3] = -0.0;
  store.values()[4] = 1e-310;
  const auto dir = std::filesystem::temp_directory_path() / "avatarfield_ckpt_test";
  std::filesystem::remove_all(dir);
  ad::save_checkpoint(dir / "model", store, {{"lr", 5e-4}});
  auto ck = ad::load_checkpoint(dir / "model");
  ASSERT_EQ(ck.params.size(), store.size());
  EXPECT_EQ(std::memcmp(ck.params.values().data(), store.values().data(), store.size() * sizeof(double)), 0);
  EXPECT_EQ(ck.params.seed(), 77u);
  EXPECT_EQ(ck.hyperparameters["lr"].get<double>(), 5e-4);
  EXPECT_EQ(ck.params.segment("hash").offset, store.segment("hash").offset);
  std::filesystem::remove_all(dir);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p = {1.0, -2.0, 0.0};
  std::vector<double> g = {0.5, -3.0, 0.0};
  ad::Adam opt(3, {});
  opt.step(p, g);
  EXPECT_NEAR(p[0], 1.0 - 5e-4, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 5e-4, 1e-9);
  EXPECT_EQ(p[2], 0.0);
}
