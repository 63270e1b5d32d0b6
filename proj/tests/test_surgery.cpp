#include <gtest/gtest.h>

#include <cmath>

#include "gradmix/surgery.hpp"
#include "test_util.hpp"

using namespace gradmix;
using namespace gradmix::testing;

TEST(Conflict, HandExamples) {
  EXPECT_FALSE(is_conflicting({1, 0}, {0, 1}));
  EXPECT_TRUE(is_conflicting({2, 1}, {-1, -3}));
  EXPECT_FALSE(is_conflicting({2, 1}, {2, 1}));
  EXPECT_FALSE(is_conflicting({0, 0}, {-1, -3}));
}

TEST(Projection, HandExamples) {
  EXPECT_EQ(project_gradient({1, -1}, {0, 1}), ParamVec({1, 0}));
  EXPECT_EQ(project_gradient({3, 0}, {0, 2}), ParamVec({3, 0}));
  const auto z = project_gradient({1.5, -2}, {-1.5, 2});
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Projection, ZeroReferenceThrows) {
  EXPECT_THROW(project_gradient({1, 2}, {0, 0}), ContractError);
}

TEST(Projection, Properties) {
  RngStream rng(99);
  for (std::size_t dim : {2u, 10u, 1000u}) {
    for (int i = 0; i < 1000; ++i) {
      const auto gs = random_vec(rng, dim), gt = random_vec(rng, dim, rng.uniform(0.1, 10));
      const auto p = project_gradient(gs, gt);
      ASSERT_LE(std::abs(dot(p, gt)), 1e-9 * norm(gs) * norm(gt));
      ASSERT_LE(norm(p), norm(gs));
      const auto pp = project_gradient(p, gt);
      double diff = 0.0;
      for (std::size_t k = 0; k < dim; ++k) diff = std::max(diff, std::abs(pp[k] - p[k]));
      ASSERT_LE(diff, 1e-12 * std::max(1.0, norm(p)));
    }
  }
}

TEST(ResolveConflict, NoOpUnlessConflicting) {
  RngStream rng(17);
  for (int i = 0; i < 2000; ++i) {
    const auto gs = random_vec(rng, 7), gt = random_vec(rng, 7);
    const auto out = resolve_conflict(gs, gt);
    if (is_conflicting(gs, gt)) {
      ASSERT_EQ(out, project_gradient(gs, gt));
    } else {
      ASSERT_EQ(out, gs);
    }
  }
  EXPECT_EQ(resolve_conflict({1, 2}, {0, 0}), ParamVec({1, 2}));
}

namespace {

struct Fixture {
  TaskData task = small_task();
  std::shared_ptr<const ShotBank> bank;
  std::optional<OracleBank> oracle;
  ModelState model;

  Fixture() {
    bank = std::make_shared<const ShotBank>(build_shot_bank(task.targets, 3, false, 5, RngStreams(1)));
    oracle.emplace(bank, task.targets);
    RngStream rng(3);
    model = init_params(task.spec, rng);
  }
};

}  // namespace

TEST(SgsStep, AlphaZeroNeverChangesGradient) {
  Fixture f;
  RngStreams s(4);
  RngStream rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto g = random_vec(rng, f.model.theta.dim());
    const auto r = sgs_step(g, *f.oracle, f.model, {0.0}, s);
    ASSERT_EQ(r.grad, g);
    ASSERT_FALSE(r.trace.applied);
  }
}

TEST(SgsStep, AntiparallelOracleGivesZero) {
  Fixture f;
  RngStreams s(4);
  // Pick the language the stream will choose, then build g_train = -g_oracle.
  RngStreams probe(4);
  const auto lang = probe.stream(Substream::lang_pick).uniform_index(f.oracle->size());
  const auto g_oracle = loss_and_grad(f.model, f.oracle->batch(lang)).grad;
  const auto r = sgs_step(scaled(g_oracle, -1.0), *f.oracle, f.model, {1.0}, s);
  EXPECT_EQ(r.trace.picked_lang, f.oracle->lang_id(lang));
  EXPECT_TRUE(r.trace.applied);
  EXPECT_LE(norm(r.grad), 1e-15 * norm(g_oracle));
}

TEST(SgsStep, NonConflictingIsBitwiseNoOp) {
  Fixture f;
  RngStreams s(4), probe(4);
  const auto lang = probe.stream(Substream::lang_pick).uniform_index(f.oracle->size());
  const auto g = loss_and_grad(f.model, f.oracle->batch(lang)).grad;
  const auto r = sgs_step(g, *f.oracle, f.model, {1.0}, s);
  EXPECT_EQ(r.grad, g);
  EXPECT_FALSE(r.trace.conflicted);
  EXPECT_FALSE(r.trace.applied);
  EXPECT_NEAR(*r.trace.cos_before, 1.0, 1e-12);
}

TEST(SgsStep, DrawsExactlyOnePerStreamPerStep) {
  Fixture f;
  RngStream rng(8);
  for (double alpha : {0.0, 0.3, 1.0}) {
    for (bool lazy : {false, true}) {
      RngStreams s(6), ref(6);
      for (int i = 0; i < 20; ++i) {
        const auto r = sgs_step(random_vec(rng, f.model.theta.dim()), *f.oracle, f.model, {alpha, lazy}, s);
        const auto lang = ref.stream(Substream::lang_pick).uniform_index(f.oracle->size());
        const double p = ref.stream(Substream::surgery_p).uniform01();
        ASSERT_EQ(r.trace.picked_lang, f.oracle->lang_id(lang));
        ASSERT_EQ(r.trace.p_value, p);
        ASSERT_EQ(r.trace.applied, r.trace.conflicted && p < alpha);
      }
    }
  }
}

TEST(SgsStep, LazyOracleGivesSameGradients) {
  Fixture f;
  RngStream rng(12);
  RngStreams a(2), b(2);
  for (int i = 0; i < 40; ++i) {
    const auto g = random_vec(rng, f.model.theta.dim());
    const auto eager = sgs_step(g, *f.oracle, f.model, {0.4, false}, a);
    const auto lazy = sgs_step(g, *f.oracle, f.model, {0.4, true}, b);
    ASSERT_EQ(eager.grad, lazy.grad);
    ASSERT_EQ(eager.trace.applied, lazy.trace.applied);
  }
}

TEST(SgsStep, TraceInvariantAndOrthogonality) {
  Fixture f;
  RngStreams s(7);
  RngStream rng(13);
  int applied = 0;
  for (int i = 0; i < 200; ++i) {
    const auto g = random_vec(rng, f.model.theta.dim());
    const auto r = sgs_step(g, *f.oracle, f.model, {0.5}, s);
    if (r.trace.applied) {
      ++applied;
      ASSERT_TRUE(r.trace.conflicted);
      ASSERT_LT(r.trace.p_value, 0.5);
      ASSERT_LE(std::abs(*r.trace.cos_after), 1e-9);
      ASSERT_LT(*r.trace.cos_before, 0.0);
    }
  }
  EXPECT_GT(applied, 10);
}

TEST(SgsStep, EmptyOracleAndBadAlphaThrow) {
  Fixture f;
  RngStreams s(1);
  const OracleBank empty(std::make_shared<const ShotBank>(), {});
  EXPECT_THROW(sgs_step(ParamVec(f.model.theta.dim()), empty, f.model, {1.0}, s), ContractError);
  EXPECT_THROW(sgs_step(ParamVec(f.model.theta.dim()), *f.oracle, f.model, {1.5}, s), ContractError);
}

TEST(SurgeryTrace, JsonFields) {
  SurgeryTraceEntry e{3, "ru", 0.25, true, true, -0.5, 0.0};
  const auto j = to_json(e);
  EXPECT_EQ(j["step"], 3);
  EXPECT_EQ(j["picked_lang"], "ru");
  EXPECT_EQ(j["cos_before"], -0.5);
  SurgeryTraceEntry lazy{4, "uk", 0.9, false, false, std::nullopt, std::nullopt};
  EXPECT_TRUE(to_json(lazy)["cos_before"].is_null());
}
