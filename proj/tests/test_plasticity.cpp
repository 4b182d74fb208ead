#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "oracle/reference_oracle.hpp"
#include "sgp/rule.hpp"
#include "sgp/trace.hpp"
#include "sgp/weights.hpp"

using namespace sgp;

// ---------------------------------------------------------------------------
// Traces

TEST(UpdateTrace, Examples) {
  const TraceConfig cfg{.tau = 20.0};
  EXPECT_DOUBLE_EQ(update_trace(0.0, true, cfg), 1.0);
  EXPECT_NEAR(update_trace(1.0, false, cfg), 0.951229424500714, 1e-15);
  EXPECT_NEAR(update_trace(1.0, false, cfg), 0.95123, 5e-6);
  const TraceConfig sat{.tau = 20.0, .increment = 0.5, .saturation = 2.0};
  EXPECT_DOUBLE_EQ(update_trace(1.9, true, sat), 2.0);
}

TEST(UpdateTrace, QuantStepSnapsToGrid) {
  const TraceConfig q{.tau = 5.0, .quant_step = 1.0 / 127.0};
  double t = 0.0;
  for (int n = 0; n < 40; ++n) {
    t = update_trace(t, n % 3 == 0, q);
    EXPECT_NEAR(t * 127.0, std::nearbyint(t * 127.0), 1e-9);
  }
}

TEST(UpdateTrace, LinearityWithoutSaturation) {
  const TraceConfig cfg{.tau = 6.0, .increment = 0.7};
  double a = 0, b = 0, ab_a = 0, ab_b = 0;
  for (int n = 0; n < 300; ++n) {
    const bool sa = n % 5 == 0, sb = n % 9 == 2;
    a = update_trace(a, sa, cfg);
    b = update_trace(b, sb, cfg);
    // A+B counted with multiplicity: two increments on coincident spikes.
    ab_a = update_trace(ab_a, sa, cfg);
    ab_b = update_trace(ab_b, sb, cfg);
    EXPECT_NEAR(ab_a + ab_b, a + b, 1e-12);
  }
  // Single combined trace receiving both trains, increments summed.
  double combined = 0;
  a = b = 0;
  for (int n = 0; n < 300; ++n) {
    const int k = (n % 5 == 0) + (n % 9 == 2);
    combined = cfg.decay() * combined + k * cfg.increment;
    a = update_trace(a, n % 5 == 0, cfg);
    b = update_trace(b, n % 9 == 2, cfg);
    ASSERT_NEAR(combined, a + b, 1e-12);
  }
}

TEST(DifferenceKernel, MatchesPspOfSameSpikeTrain) {
  for (auto [tu, tv] : {std::pair{4.0, 8.0}, std::pair{8.0, 4.0}, std::pair{2.0, 16.0}}) {
    NeuronParams p{.tau_u = tu, .tau_v = tv};
    const auto [c1, c2] = difference_kernel_traces(p);
    EXPECT_LT(c1.tau, c2.tau);
    NeuronState s(1);
    double x1 = 0, x2 = 0;
    CounterRng rng{.seed = 77};
    for (int n = 0; n < 500; ++n) {
      const bool spk = rng.uniform() < 0.15;
      const std::vector<std::uint8_t> in{static_cast<std::uint8_t>(spk)};
      s.q = step_psc(s.q, in, p);
      s = step_potential(s, std::vector<double>{0.0}, p);
      x1 = update_trace(x1, spk, c1);
      x2 = update_trace(x2, spk, c2);
      ASSERT_NEAR(x2 - x1, s.p[0], 1e-6) << "step " << n;
    }
  }
}

TEST(DifferenceKernel, EqualTimeConstantsRejected) {
  EXPECT_THROW(difference_kernel_traces(NeuronParams{.tau_u = 4.0, .tau_v = 4.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Rule parser

namespace {

Product prod(double c, std::vector<RuleVar> vars) {
  Product p{.constant = c};
  for (RuleVar v : vars) p.factors.push_back({v});
  return p;
}

TraceView view(double x0, double x1, double x2, double y0, double y1, double y2) { return {x0, x1, x2, y0, y1, y2}; }

}  // namespace

TEST(ParseRule, GoldenFourProducts) {
  const SumOfProductsRule r = parse_rule("dw = 2*y1*(x2 - x1) + 2*x1 - 2*x2");
  using enum RuleVar;
  const SumOfProductsRule expected{{prod(2, {x1}), prod(-2, {x1, y1}), prod(-2, {x2}), prod(2, {x2, y1})}};
  EXPECT_EQ(r, expected);
  EXPECT_EQ(to_string(r), "dw = 2*x1 - 2*x1*y1 - 2*x2 + 2*x2*y1");
}

TEST(ParseRule, SingleVariable) {
  const SumOfProductsRule r = parse_rule("dw = x1");
  ASSERT_EQ(r.products.size(), 1u);
  EXPECT_EQ(r.products[0], prod(1, {RuleVar::x1}));
}

TEST(ParseRule, CanonicalizationIsOrderIndependent) {
  EXPECT_EQ(parse_rule("dw = 3*(x1)*(y1)"), parse_rule("dw = y1*3*x1"));
  EXPECT_EQ(parse_rule("dw = x2*y1 + x1"), parse_rule("dw=x1+y1*x2"));
}

TEST(ParseRule, RoundTrip) {
  for (const char* text : {"dw = 2*y1*(x2 - x1) + 2*x1 - 2*x2", "dw = -0.1*w*y0 + x0", "dw = 0.30000000000000004*x1",
                           "dw = (x1 + 1)*(y2 - 2.5)", "dw = 7"}) {
    const SumOfProductsRule r = parse_rule(text);
    EXPECT_EQ(parse_rule(to_string(r)), r) << text;
  }
}

TEST(ParseRule, Errors) {
  EXPECT_THROW(parse_rule(""), EmptyRuleError);
  EXPECT_THROW(parse_rule("dw = "), EmptyRuleError);
  EXPECT_THROW(parse_rule("dw = x1 - x1"), EmptyRuleError);
  EXPECT_THROW(parse_rule("dw = 0*y1"), EmptyRuleError);
  try {
    parse_rule("dw = x1 * z3");
    FAIL() << "expected UnknownVariableError";
  } catch (const UnknownVariableError& e) {
    EXPECT_EQ(e.position(), 10u);
  }
  try {
    parse_rule("dw = (x1 + y1");
    FAIL() << "expected RuleSyntaxError";
  } catch (const RuleSyntaxError& e) {
    EXPECT_EQ(e.position(), 13u);
  }
  EXPECT_THROW(parse_rule("dv = x1"), RuleSyntaxError);
  EXPECT_THROW(parse_rule("dw = x1 / y1"), RuleSyntaxError);
  EXPECT_THROW(parse_rule("dw = x1 ^ 2"), RuleSyntaxError);
}

TEST(ParseRule, TemplateInstantiation) {
  const std::string text = instantiate_rule_template("dw = {b}*x2 - {b}*x1 - y1*x2 + y1*x1", 0.25);
  const SumOfProductsRule r = parse_rule(text);
  // (x2 - x1) * (b - y1)
  const TraceView t = view(0, 0.2, 0.5, 0, 0.1, 0);
  EXPECT_NEAR(evaluate_rule(r, t, 0.0), 0.3 * (0.25 - 0.1), 1e-15);
  EXPECT_EQ(parse_rule(instantiate_rule_template("dw = {b}*x1", -0.5)), parse_rule("dw = -0.5*x1"));
}

// ---------------------------------------------------------------------------
// Rule evaluation

TEST(EvaluateRule, Examples) {
  const SumOfProductsRule r{{prod(2, {RuleVar::x1, RuleVar::y1})}};
  EXPECT_DOUBLE_EQ(evaluate_rule(r, view(0, 3, 0, 0, 4, 0), 0.0), 24.0);

  const SumOfProductsRule reference_rule = parse_rule("dw = 2*y1*(x2 - x1) + 2*x1 - 2*x2");
  for (double y1 : {0.0, 0.3, 1.7, 5.0}) EXPECT_EQ(evaluate_rule(reference_rule, view(0, 0.4, 0.4, 0, y1, 0), 0.0), 0.0);

  // C = 1: y1*(x2 - x1) + x1 - x2 = (x2 - x1)*(y1 - 1).
  const SumOfProductsRule c1 = parse_rule("dw = y1*(x2 - x1) + x1 - x2");
  for (double y1 : {0.0, 0.5, 1.0, 1.5, 3.0}) {
    const double d = evaluate_rule(c1, view(0, 0.2, 0.5, 0, y1, 0), 0.0);
    EXPECT_NEAR(d, 0.3 * (y1 - 1.0), 1e-15);
  }
  EXPECT_LT(evaluate_rule(c1, view(0, 0.2, 0.5, 0, 0.9, 0), 0.0), 0.0);
  EXPECT_GT(evaluate_rule(c1, view(0, 0.2, 0.5, 0, 1.1, 0), 0.0), 0.0);
}

TEST(EvaluateRule, WeightFactorUsesEffectiveWeight) {
  const SumOfProductsRule r = parse_rule("dw = -0.5*w*y0");
  EXPECT_DOUBLE_EQ(evaluate_rule(r, view(0, 0, 0, 1, 0, 0), 0.25), -0.125);
  EXPECT_TRUE(rule_uses(r, RuleVar::w));
  EXPECT_FALSE(rule_uses(r, RuleVar::x1));
}

// Random expressions: a tiny independent tree evaluator versus the parsed
// canonical form.
namespace {

struct Expr {
  enum Kind { num, var, add, sub, mul, neg } kind;
  double value = 0;
  int var_index = 0;
  std::unique_ptr<Expr> a, b;
};

std::unique_ptr<Expr> random_expr(CounterRng& rng, int depth) {
  auto e = std::make_unique<Expr>();
  const std::uint64_t pick = depth <= 0 ? rng.below(2) : rng.below(6);
  switch (pick) {
    case 0:
      e->kind = Expr::num;
      // Dyadic constants keep the expanded coefficients exact.
      e->value = static_cast<double>(1 + rng.below(9)) / static_cast<double>(1u << rng.below(4));
      break;
    case 1:
      e->kind = Expr::var;
      e->var_index = static_cast<int>(rng.below(7));
      break;
    case 5:
      e->kind = Expr::neg;
      e->a = random_expr(rng, depth - 1);
      break;
    default:
      e->kind = pick == 2 ? Expr::add : pick == 3 ? Expr::sub : Expr::mul;
      e->a = random_expr(rng, depth - 1);
      e->b = random_expr(rng, depth - 1);
  }
  return e;
}

std::string text_of(const Expr& e) {
  switch (e.kind) {
    case Expr::num: return detail::format_number(e.value);
    case Expr::var: return std::string(kRuleVarNames[static_cast<std::size_t>(e.var_index)]);
    case Expr::neg: return "-(" + text_of(*e.a) + ")";
    case Expr::add: return "(" + text_of(*e.a) + " + " + text_of(*e.b) + ")";
    case Expr::sub: return "(" + text_of(*e.a) + " - " + text_of(*e.b) + ")";
    case Expr::mul: return text_of(*e.a) + "*" + text_of(*e.b);
  }
  return {};
}

double eval_tree(const Expr& e, const double vars[7]) {
  switch (e.kind) {
    case Expr::num: return e.value;
    case Expr::var: return vars[e.var_index];
    case Expr::neg: return -eval_tree(*e.a, vars);
    case Expr::add: return eval_tree(*e.a, vars) + eval_tree(*e.b, vars);
    case Expr::sub: return eval_tree(*e.a, vars) - eval_tree(*e.b, vars);
    case Expr::mul: return eval_tree(*e.a, vars) * eval_tree(*e.b, vars);
  }
  return 0;
}

}  // namespace

TEST(ParseRule, RandomExpressionsEvaluateLikeTheirTree) {
  CounterRng rng{.seed = 2024};
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    const auto e = random_expr(rng, 4);
    const std::string text = "dw = " + text_of(*e);
    SumOfProductsRule r;
    try {
      r = parse_rule(text);
    } catch (const EmptyRuleError&) {
      continue;  // folds to zero
    }
    for (int trial = 0; trial < 5; ++trial) {
      double vars[7];
      for (double& v : vars) v = rng.uniform(-2.0, 2.0);
      const TraceView t{vars[1], vars[2], vars[3], vars[4], vars[5], vars[6]};
      const double want = eval_tree(*e, vars);
      const double got = evaluate_rule(r, t, vars[0]);
      ASSERT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want))) << text;
    }
    EXPECT_EQ(parse_rule(to_string(r)), r) << text;
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(ParseRule, DistributionGivesIdenticalCanonicalForm) {
  CounterRng rng{.seed = 99};
  for (int k = 0; k < 200; ++k) {
    const auto a = random_expr(rng, 2), b = random_expr(rng, 2), c = random_expr(rng, 2);
    const std::string A = "(" + text_of(*a) + ")", B = "(" + text_of(*b) + ")", C = "(" + text_of(*c) + ")";
    SumOfProductsRule lhs, rhs;
    bool lhs_empty = false, rhs_empty = false;
    try { lhs = parse_rule("dw = " + A + "*(" + B + " + " + C + ")"); } catch (const EmptyRuleError&) { lhs_empty = true; }
    try { rhs = parse_rule("dw = " + A + "*" + B + " + " + A + "*" + C); } catch (const EmptyRuleError&) { rhs_empty = true; }
    ASSERT_EQ(lhs_empty, rhs_empty);
    if (lhs_empty) continue;
    ASSERT_EQ(lhs.products.size(), rhs.products.size());
    for (std::size_t i = 0; i < lhs.products.size(); ++i) {
      EXPECT_EQ(lhs.products[i].factors, rhs.products[i].factors);
      EXPECT_NEAR(lhs.products[i].constant, rhs.products[i].constant,
                  1e-12 * std::max(1.0, std::abs(lhs.products[i].constant)));
    }
  }
}

// ---------------------------------------------------------------------------
// Quantized weights

TEST(StochasticRound, IntegerCandidateIsExact) {
  for (double u : {0.0, 0.3, 0.999}) EXPECT_EQ(stochastic_round(34.0, u), 34);
  QuantizedWeightStore s(1, 1, 0, 5);
  s.set(0, 0, 10);
  apply_update(s, 0, 0, 24.0, 0);
  EXPECT_EQ(s.at(0, 0), 34);
}

TEST(StochasticRound, MeanOfFractionalCandidate) {
  double sum = 0;
  const int trials = 100000;
  QuantizedWeightStore s(1, 1, 0, 123);
  for (int k = 0; k < trials; ++k) {
    s.set(0, 0, 10);
    apply_update(s, 0, 0, 0.75, 0);
    sum += s.at(0, 0);
  }
  const double mean = sum / trials;
  EXPECT_GE(mean, 10.74);
  EXPECT_LE(mean, 10.76);
  EXPECT_EQ(s.draws, static_cast<std::uint64_t>(trials));
}

TEST(StochasticRound, ClampsToInt8) {
  QuantizedWeightStore s(1, 1, 0, 1);
  s.set(0, 0, 120);
  apply_update(s, 0, 0, 31.2, 0);
  EXPECT_EQ(s.at(0, 0), 127);
  s.set(0, 0, -120);
  apply_update(s, 0, 0, -400.0, 0);
  EXPECT_EQ(s.at(0, 0), -128);
  s.set(0, 0, 500);
  EXPECT_EQ(s.at(0, 0), 127);
}

TEST(StochasticRound, LearningRateExponentScalesDelta) {
  QuantizedWeightStore s(1, 1, -6, 1);
  apply_update(s, 0, 0, 12.0, -2);  // 12 * 2^-2 = 3 exactly
  EXPECT_EQ(s.at(0, 0), 3);
  EXPECT_DOUBLE_EQ(s.effective(0, 0), 3.0 / 64.0);
}

TEST(LearningStep, AllZeroTracesLeaveStoreUnchanged) {
  const SumOfProductsRule r = parse_rule(instantiate_rule_template("dw = {b}*x2 - {b}*x1 - y1*x2 + y1*x1", 0.4));
  QuantizedWeightStore s(3, 4, -6, 8);
  for (std::size_t k = 0; k < s.weights.size(); ++k) s.weights[k] = static_cast<std::int8_t>(k * 7 % 50 - 20);
  const auto before = s.weights;
  TraceBank pre(4), post(3);
  EXPECT_TRUE(learning_step(s, r, pre, post, {}, 0));
  EXPECT_EQ(s.weights, before);
}

TEST(LearningStep, PeriodAndDeterminism) {
  const SumOfProductsRule r = parse_rule("dw = 3.3*x1*y1 - 0.7*x2");
  auto run = [&](int period) {
    QuantizedWeightStore s(2, 3, -6, 42);
    TraceBank pre(3), post(2);
    int passes = 0;
    CounterRng rng{.seed = 5};
    for (std::uint64_t n = 0; n < 100; ++n) {
      for (std::size_t j = 0; j < 3; ++j) pre.t1[j] = rng.uniform(), pre.t2[j] = rng.uniform();
      for (std::size_t i = 0; i < 2; ++i) post.t1[i] = rng.uniform();
      passes += learning_step(s, r, pre, post, LearningSchedule{.lr_exp = 0, .learn_period = period}, n);
    }
    return std::pair{passes, s};
  };
  const auto [p1, s1] = run(1);
  const auto [p1b, s1b] = run(1);
  EXPECT_EQ(p1, 100);
  EXPECT_EQ(s1.weights, s1b.weights);
  EXPECT_EQ(s1.draws, 600u);
  EXPECT_EQ(run(4).first, 25);
  QuantizedWeightStore tiny(1, 1, 0, 0);
  EXPECT_THROW(learning_step(tiny, r, TraceBank(1), TraceBank(1), LearningSchedule{.learn_period = 0}, 0), ConfigError);
}

TEST(LearningStep, WeightsStayInRangeUnderLargeUpdates) {
  const SumOfProductsRule r = parse_rule("dw = 1000*x1 - 1000*y1");
  QuantizedWeightStore s(2, 2, 0, 3);
  TraceBank pre(2), post(2);
  CounterRng rng{.seed = 6};
  for (std::uint64_t n = 0; n < 200; ++n) {
    for (std::size_t j = 0; j < 2; ++j) pre.t1[j] = rng.uniform();
    for (std::size_t i = 0; i < 2; ++i) post.t1[i] = rng.uniform();
    learning_step(s, r, pre, post, {}, n);
    for (auto w : s.weights) ASSERT_TRUE(w >= -128 && w <= 127);
  }
}
