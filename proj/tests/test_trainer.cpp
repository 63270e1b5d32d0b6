#include <gtest/gtest.h>

#include <set>

#include "gradmix/checkpoint.hpp"
#include "gradmix/metrics.hpp"
#include "gradmix/trainer.hpp"
#include "test_util.hpp"

using namespace gradmix;
using namespace gradmix::testing;

namespace {

TrainPlan plan_for(Strategy s, std::size_t k, std::uint64_t seed, std::size_t epochs = 3) {
  TrainPlan p;
  p.strategy = s;
  p.k = k;
  p.seed = seed;
  p.lr = 0.1;
  p.source_epochs = epochs;
  p.adapt_epochs = epochs;
  return p;
}

std::vector<ModelState> states_of(const RunOutput& out) {
  std::vector<ModelState> s;
  for (const auto& c : out.checkpoints) s.push_back(c.state);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plans

TEST(TrainPlan, Validation) {
  EXPECT_NO_THROW(plan_for(Strategy::zero_shot, 0, 1).validate());
  EXPECT_THROW(plan_for(Strategy::zero_shot, 5, 1).validate(), ContractError);
  EXPECT_THROW(plan_for(Strategy::ord_fs, 0, 1).validate(), ContractError);

  auto p = plan_for(Strategy::ord_fs, 5, 1);
  p.selection = Selection::source_dev;
  EXPECT_THROW(p.validate(), ContractError);
  p.strategy = Strategy::mix_ft;
  EXPECT_THROW(p.validate(), ContractError);

  auto q = plan_for(Strategy::naive_mix_train, 5, 1);
  q.selection = Selection::target_dev;
  EXPECT_THROW(q.validate(), ContractError);
  q.unrealistic_target_dev = true;
  EXPECT_NO_THROW(q.validate());

  auto r = plan_for(Strategy::gradient_mix_train, 5, 1);
  r.alpha = -0.1;
  EXPECT_THROW(r.validate(), ContractError);
}

TEST(TrainPlan, DefaultSelections) {
  EXPECT_EQ(plan_for(Strategy::ord_fs, 1, 1).effective_selection(), Selection::last_checkpoint);
  EXPECT_EQ(plan_for(Strategy::mix_ft, 1, 1).effective_selection(), Selection::last_checkpoint);
  EXPECT_EQ(plan_for(Strategy::ord_fs_dev, 1, 1).effective_selection(), Selection::target_dev);
  EXPECT_EQ(plan_for(Strategy::naive_mix_train, 1, 1).effective_selection(), Selection::source_dev);
  EXPECT_EQ(plan_for(Strategy::gradient_mix_train, 1, 1).effective_selection(), Selection::source_dev);
  EXPECT_EQ(plan_for(Strategy::zero_shot, 0, 1).effective_selection(), Selection::source_dev);
  TrainPlan defaults;
  EXPECT_EQ(defaults.lr, 2e-5);
  EXPECT_EQ(defaults.batch_size, 32u);
  EXPECT_EQ(defaults.source_epochs, 10u);
  EXPECT_EQ(plan_for(Strategy::ord_fs, 5, 1).effective_adapt_batch_size(), 5u);
}

TEST(TrainPlan, JsonRoundTrip) {
  auto p = plan_for(Strategy::gradient_mix_train, 5, 9);
  p.alpha = 0.1;
  p.language_subset = std::vector<std::string>{"ru", "uk"};
  const auto j = to_json(p);
  EXPECT_EQ(to_json(plan_from_json(j)), j);
}

// ---------------------------------------------------------------------------
// Selection

TEST(Selection, BestEpochRules) {
  EXPECT_EQ(best_epoch({0.1, 0.2, 0.3}), 3u);
  EXPECT_EQ(best_epoch({0.9, 0.5, 0.4}), 1u);
  EXPECT_EQ(best_epoch({0.5, 0.5, 0.5}), 1u);
  EXPECT_EQ(best_epoch({}), 0u);
}

TEST(Selection, Policies) {
  const std::map<std::string, std::vector<double>> curves{{"en", {0.1, 0.4, 0.2}}, {"ru", {0.9, 0.1, 0.1}}};
  auto src = select_model(curves, "en", Selection::source_dev, 3);
  EXPECT_EQ(src["en"], 2u);
  EXPECT_EQ(src["ru"], 2u);
  auto tgt = select_model(curves, "en", Selection::target_dev, 3);
  EXPECT_EQ(tgt["ru"], 1u);
  auto last = select_model(curves, "en", Selection::last_checkpoint, 3);
  EXPECT_EQ(last["ru"], 3u);
  EXPECT_THROW(select_model({{"en", {0.1}}}, "en", Selection::source_dev, 3), ContractError);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, PerfectConstantAndPure) {
  const ModelSpec spec{ModelFamily::softmax_classifier, 1, 0, 3};
  // Logit_c = w_c x + b_c with x = class id; weights make the true class win.
  ParamVec theta(spec.param_dim());
  theta[0] = -1;
  theta[1] = 0;
  theta[2] = 1;
  theta[3] = 0.5;
  theta[4] = 0;
  theta[5] = -1.2;
  const ModelState perfect{spec, theta};
  std::vector<Example> dev;
  for (int i = 0; i < 30; ++i) dev.push_back({{static_cast<double>(i % 3)}, {i % 3}});
  EXPECT_EQ(evaluate(perfect, dev, TaskKind::classification), 1.0);
  const ModelState constant{spec, ParamVec(spec.param_dim())};
  EXPECT_DOUBLE_EQ(evaluate(constant, dev, TaskKind::classification), 1.0 / 3.0);
  EXPECT_EQ(evaluate(perfect, dev, TaskKind::classification), evaluate(perfect, dev, TaskKind::classification));
}

// ---------------------------------------------------------------------------
// Source training

TEST(SourceTraining, ZeroEpochsReturnsInitialParams) {
  const auto task = small_task();
  auto p = plan_for(Strategy::zero_shot, 0, 1, 0);
  RngStreams s(1), ref(1);
  const auto phase = run_source_training(p, task.source, task.spec, s);
  ASSERT_EQ(phase.states.size(), 1u);
  EXPECT_EQ(phase.final_state(), init_params(task.spec, ref));
}

TEST(SourceTraining, LossDecreasesOnShippedBenchmark) {
  const auto task = shipped_task();
  RngStreams s(1);
  const auto phase = run_source_training(plan_for(Strategy::zero_shot, 0, 1, 10), task.source, task.spec, s);
  const auto batch = make_batch(task.source.train);
  EXPECT_LT(loss(phase.final_state(), batch), loss(phase.states.front(), batch));
}

TEST(SourceTraining, DeterministicCheckpoints) {
  const auto task = small_task();
  const auto a = run_strategy(plan_for(Strategy::zero_shot, 0, 4), task);
  const auto b = run_strategy(plan_for(Strategy::zero_shot, 0, 4), task);
  EXPECT_EQ(states_of(a), states_of(b));
  EXPECT_EQ(to_json(a.record), to_json(b.record));
}

// ---------------------------------------------------------------------------
// Strategy equivalences

TEST(Equivalence, GradientMixAlphaZeroIsNaive) {
  const auto task = small_task();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto g = plan_for(Strategy::gradient_mix_train, 3, seed);
    g.alpha = 0.0;
    const auto naive = run_strategy(plan_for(Strategy::naive_mix_train, 3, seed), task);
    const auto gmt = run_strategy(g, task);
    ASSERT_EQ(states_of(naive), states_of(gmt)) << "seed " << seed;
    EXPECT_EQ(gmt.record.surgery->applied, 0u);
  }
}

TEST(Equivalence, NaiveWithoutTargetsIsSourceOnly) {
  const auto task = small_task();
  auto p = plan_for(Strategy::naive_mix_train, 3, 5);
  p.language_subset = std::vector<std::string>{};
  const auto naive = run_strategy(p, task);
  RngStreams s(5);
  const auto phase = run_source_training(p, task.source, task.spec, s);
  ASSERT_EQ(naive.checkpoints.size(), phase.epochs());
  for (std::size_t e = 1; e <= phase.epochs(); ++e) EXPECT_EQ(naive.checkpoints[e - 1].state, phase.states[e]);
}

TEST(Equivalence, OrdFsWithoutAdaptingIsZeroShot) {
  const auto task = small_task();
  auto p = plan_for(Strategy::ord_fs, 3, 6);
  p.adapt_epochs = 0;
  const auto ord = run_strategy(p, task);
  const auto zs = run_strategy(plan_for(Strategy::zero_shot, 0, 6), task);
  for (const auto& t : task.targets) {
    EXPECT_EQ(ord.record.find(t.lang_id)->test_metric, zs.record.find(t.lang_id)->test_metric) << t.lang_id;
  }
  // Only source checkpoints were produced.
  for (const auto& c : ord.checkpoints) EXPECT_EQ(c.model, "source");
}

// ---------------------------------------------------------------------------
// Strategy structure

TEST(Strategies, OrdFsOneModelPerTargetMixFtOne) {
  const auto task = small_task();
  const auto ord = run_strategy(plan_for(Strategy::ord_fs, 2, 1), task);
  std::set<std::string> ord_models;
  for (const auto& l : ord.record.languages) {
    if (l.role == Role::target) ord_models.insert(l.model);
  }
  EXPECT_EQ(ord_models.size(), 6u);

  const auto mix = run_strategy(plan_for(Strategy::mix_ft, 2, 1), task);
  std::set<std::string> mix_models;
  for (const auto& l : mix.record.languages) {
    if (l.role == Role::target) mix_models.insert(l.model);
  }
  EXPECT_EQ(mix_models, std::set<std::string>{"mix_ft"});
}

TEST(Strategies, SameShotsAcrossStrategies) {
  const auto task = small_task();
  const auto ref = run_strategy(plan_for(Strategy::ord_fs, 4, 8), task).record.shots;
  for (auto s : {Strategy::ord_fs_dev, Strategy::mix_ft, Strategy::naive_mix_train, Strategy::gradient_mix_train}) {
    EXPECT_EQ(run_strategy(plan_for(s, 4, 8), task).record.shots, ref) << to_string(s);
  }
  EXPECT_NE(run_strategy(plan_for(Strategy::mix_ft, 4, 9), task).record.shots, ref);
}

TEST(Strategies, TargetDevWithoutDevSplitThrows) {
  auto task = small_task();
  task.targets[2].dev.clear();
  EXPECT_THROW(run_strategy(plan_for(Strategy::ord_fs_dev, 2, 1), task), ContractError);
}

TEST(Strategies, GradientMixWithoutTargetsThrows) {
  const auto task = small_task();
  auto p = plan_for(Strategy::gradient_mix_train, 2, 1);
  p.language_subset = std::vector<std::string>{};
  EXPECT_THROW(run_strategy(p, task), ContractError);
}

TEST(Strategies, UnknownSubsetLanguageThrows) {
  const auto task = small_task();
  auto p = plan_for(Strategy::naive_mix_train, 2, 1);
  p.language_subset = std::vector<std::string>{"zz"};
  EXPECT_THROW(run_strategy(p, task), ContractError);
}

TEST(Strategies, LanguageSubsetRestrictsTargets) {
  const auto task = small_task();
  auto p = plan_for(Strategy::gradient_mix_train, 2, 1);
  p.language_subset = std::vector<std::string>{"ru"};
  const auto out = run_strategy(p, task);
  for (const auto& e : out.trace) EXPECT_EQ(e.picked_lang, "ru");
  EXPECT_EQ(out.record.languages.size(), 2u);
}

TEST(Strategies, RecordShape) {
  const auto task = small_task();
  const auto out = run_strategy(plan_for(Strategy::gradient_mix_train, 2, 1, 4), task);
  EXPECT_EQ(out.record.languages.size(), 7u);
  for (const auto& l : out.record.languages) {
    EXPECT_EQ(l.dev_curve.size(), 4u);
    EXPECT_GE(l.selected_epoch, 1u);
    EXPECT_LE(l.selected_epoch, 4u);
  }
  EXPECT_EQ(out.record.trace_ref, "trace.jsonl");
  EXPECT_EQ(out.record.checkpoint_refs.size(), 4u);
  EXPECT_EQ(out.record.checkpoint_refs.front(), "checkpoints/shared/epoch_1.json");
  ASSERT_TRUE(out.record.surgery.has_value());
  EXPECT_EQ(out.record.surgery->steps, out.trace.size());
  // Every language is selected at the source-dev epoch.
  const auto sel = out.record.find("en")->selected_epoch;
  for (const auto& l : out.record.languages) EXPECT_EQ(l.selected_epoch, sel);
}

TEST(RunRecord, JsonRoundTrip) {
  const auto task = small_task();
  const auto out = run_strategy(plan_for(Strategy::ord_fs, 2, 3), task);
  const auto j = to_json(out.record);
  EXPECT_EQ(to_json(run_record_from_json(nlohmann::json::parse(j.dump()))), j);
  EXPECT_THROW(run_record_from_json(nlohmann::json{{"format", "x"}}), DataError);
}

TEST(Checkpoint, SaveLoadEvaluateIsBitwise) {
  const auto task = small_task();
  const auto out = run_strategy(plan_for(Strategy::naive_mix_train, 2, 3), task);
  const auto path = std::filesystem::temp_directory_path() / "gradmix_trainer_ck.json";
  for (const auto& ck : out.checkpoints) {
    save_checkpoint(ck, path);
    const auto back = load_checkpoint(path);
    for (const auto& t : task.targets) {
      ASSERT_EQ(task.evaluate_split(back.state, t.test), task.evaluate_split(ck.state, t.test));
    }
  }
  std::filesystem::remove(path);
}

TEST(Strategies, TokenTaggingRuns) {
  const auto task = small_task(20, 10, 3, TaskKind::token_tags);
  const auto out = run_strategy(plan_for(Strategy::gradient_mix_train, 2, 1, 2), task);
  for (const auto& l : out.record.languages) {
    EXPECT_GE(l.test_metric, 0.0);
    EXPECT_LE(l.test_metric, 1.0);
  }
}
