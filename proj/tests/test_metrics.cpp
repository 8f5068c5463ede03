#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include <json.hpp>

#include "semaforge/errors.hpp"
#include "semaforge/experiments.hpp"
#include "support.hpp"

using namespace semaforge;
using testing_support::TempDir;

namespace {

// Pairwise statistic: P(score_pos > score_neg) with ties counted one half.
double mann_whitney(const std::vector<double>& s, const std::vector<int>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      pairs += 1.0;
    }
  }
  return wins / pairs;
}

SampleOutput output(double p_fake, int label, double w = 1.0) {
  SampleOutput o;
  for (std::size_t i = 0; i < kFragmentCount; ++i) {
    o.p.rows[0][i] = p_fake;
    o.p.rows[1][i] = 1.0 - p_fake;
  }
  o.w = WeightMatrix::uniform(w);
  o.label = label;
  return o;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.fragment_size = 32;
  c.backbone.stages = {4, 8};
  c.backbone.hidden = 16;
  c.sam_widths = {1024, 16, 8, 1};
  return c;
}

RunConfig tiny_run() {
  RunConfig rc;
  rc.dataset.train_per_class = 8;
  rc.dataset.val_per_class = 4;
  rc.dataset.test_per_class = 4;
  rc.dataset.seed = 3;
  rc.train.epochs = 1;
  rc.train.batch_size = 4;
  rc.train.model = tiny_model();
  rc.seeds = {0};
  return rc;
}

}  // namespace

TEST(RocAuc, PerfectSeparation) {
  const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
  const std::vector<int> pos = {1, 1, 0, 0};
  EXPECT_EQ(roc_auc(s, pos).auc, 1.0);
}

TEST(RocAuc, AllScoresEqual) {
  const std::vector<double> s(10, 0.42);
  const std::vector<int> pos = {1, 0, 1, 0, 0, 0, 1, 1, 0, 1};
  EXPECT_EQ(roc_auc(s, pos).auc, 0.5);
}

TEST(RocAuc, SmallWorkedCase) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  // Negatives at 0.1 and 0.4: one of the four pairs is inverted.
  const std::vector<int> pos = {0, 0, 1, 1};
  EXPECT_EQ(roc_auc(s, pos).auc, 0.75);
  EXPECT_EQ(mann_whitney(s, pos), 0.75);
  // Positives at 0.4 and 0.8 beat both negatives.
  const std::vector<int> alternating = {0, 1, 0, 1};
  EXPECT_EQ(roc_auc(s, alternating).auc, 1.0);
  EXPECT_EQ(mann_whitney(s, alternating), 1.0);
}

TEST(RocAuc, MatchesPairwiseStatisticOnRandomSets) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    // Every third set draws from a handful of levels, so ties are common.
    const int levels = trial % 3 == 0 ? 3 : 0;
    std::vector<double> s(n);
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = levels ? static_cast<double>(rng() % levels) / levels : std::uniform_real_distribution<double>()(rng);
      pos[i] = static_cast<int>(rng() % 2);
    }
    pos[0] = 1;
    pos[1] = 0;
    EXPECT_NEAR(roc_auc(s, pos).auc, mann_whitney(s, pos), 1e-12) << trial;
  }
}

TEST(RocAuc, CurveIsMonotoneFromOriginToCorner) {
  std::mt19937_64 rng(8);
  std::vector<double> s(50);
  std::vector<int> pos(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = static_cast<double>(rng() % 10);
    pos[i] = static_cast<int>(i % 2);
  }
  const RocCurve c = roc_auc(s, pos);
  ASSERT_GE(c.points.size(), 2u);
  EXPECT_EQ(c.points.front().fpr, 0.0);
  EXPECT_EQ(c.points.front().tpr, 0.0);
  EXPECT_EQ(c.points.back().fpr, 1.0);
  EXPECT_EQ(c.points.back().tpr, 1.0);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
    EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    EXPECT_LT(c.points[i].threshold, c.points[i - 1].threshold);
  }
  EXPECT_GE(c.auc, 0.0);
  EXPECT_LE(c.auc, 1.0);
}

TEST(RocAuc, SingleClassOrMismatchRejected) {
  const std::vector<double> s = {0.1, 0.2, 0.3};
  EXPECT_THROW(roc_auc(s, std::vector<int>{1, 1, 1}), ContractError);
  EXPECT_THROW(roc_auc(s, std::vector<int>{0, 0, 0}), ContractError);
  EXPECT_THROW(roc_auc(s, std::vector<int>{0, 1}), ContractError);
}

TEST(Confusion, CountsAndAccuracy) {
  const std::vector<int> y = {kFake, kFake, kFake, kReal, kReal};
  const std::vector<int> yhat = {kFake, kReal, kFake, kFake, kReal};
  const ConfusionMatrix c = confusion_matrix(y, yhat);
  EXPECT_EQ(c.true_fake, 2u);
  EXPECT_EQ(c.false_real, 1u);
  EXPECT_EQ(c.false_fake, 1u);
  EXPECT_EQ(c.true_real, 1u);
  EXPECT_EQ(c.total(), 5u);
  EXPECT_DOUBLE_EQ(c.accuracy(), 3.0 / 5.0);
}

TEST(ScoreOutputs, AlwaysFakeOnBalancedSplit) {
  std::vector<SampleOutput> outs;
  for (int i = 0; i < 20; ++i) outs.push_back(output(0.9, i % 2 ? kReal : kFake));
  const EvalReport r = score_outputs(outs, {});
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.fake_count, 10u);
  EXPECT_EQ(r.real_count, 10u);
  EXPECT_EQ(r.roc.auc, 0.5);
}

TEST(ScoreOutputs, PerfectOracle) {
  std::vector<SampleOutput> outs;
  for (int i = 0; i < 20; ++i) outs.push_back(output(i % 2 ? 0.1 : 0.95, i % 2 ? kReal : kFake));
  const EvalReport r = score_outputs(outs, {});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.roc.auc, 1.0);
  for (double a : r.fragment_accuracy) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(r.confusion.accuracy(), r.accuracy);
}

TEST(ScoreOutputs, EmptySplitRejected) {
  EXPECT_THROW(score_outputs({}, {}), ContractError);
  DetectorModel model(tiny_model());
  EXPECT_THROW(evaluate(model, FragmentCache{}, {}), ContractError);
}

TEST(ScoreOutputs, RemovalKeepsCountsAndEqualsZeroWeight) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampleOutput> outs, zeroed;
  for (int i = 0; i < 40; ++i) {
    SampleOutput o;
    for (std::size_t k = 0; k < kFragmentCount; ++k) {
      o.p.rows[0][k] = u(rng);
      o.p.rows[1][k] = 1.0 - o.p.rows[0][k];
      o.w.values[k] = u(rng);
    }
    o.label = i % 2;
    outs.push_back(o);
    o.w.values[index_of(Fragment::m)] = 0.0;
    zeroed.push_back(o);
  }
  const EvalReport full = score_outputs(outs, {});
  const EvalReport removed = score_outputs(outs, {}, Fragment::m);
  const EvalReport zero = score_outputs(zeroed, {});
  EXPECT_EQ(removed.fake_count, full.fake_count);
  EXPECT_EQ(removed.real_count, full.real_count);
  EXPECT_EQ(removed.confusion.total(), full.confusion.total());
  ASSERT_EQ(removed.roc.points.size(), zero.roc.points.size());
  EXPECT_EQ(removed.accuracy, zero.accuracy);
  EXPECT_EQ(removed.roc.auc, zero.roc.auc);
  const nlohmann::json j = nlohmann::json::parse(report_json(removed));
  EXPECT_EQ(j["removed_fragment"], "m");
}

TEST(Reports, FilesAndCsvShape) {
  std::vector<SampleOutput> outs;
  for (int i = 0; i < 6; ++i) outs.push_back(output(0.2 + 0.1 * i, i % 2));
  const EvalReport r = score_outputs(outs, {"ds", "test", "LAMs+SAM", 4, "abc-s4"});
  TempDir dir("reports");
  write_report(dir.path(), r);
  const nlohmann::json j = nlohmann::json::parse(testing_support::slurp(dir / "report.json"));
  EXPECT_EQ(j["accuracy"], r.accuracy);
  EXPECT_EQ(j["seed"], 4);
  EXPECT_EQ(j["config_hash"], "abc-s4");
  EXPECT_EQ(j["counts"]["fake"], 3);
  const std::string roc = testing_support::slurp(dir / "roc_points.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(roc.begin(), roc.end(), '\n')), r.roc.points.size() + 1);
  EXPECT_EQ(testing_support::slurp(dir / "report.csv"), report_csv(r));
}

TEST(RunConfigJson, RoundTrip) {
  RunConfig rc = tiny_run();
  rc.seeds = {4, 5};
  rc.dataset.leave_out = Family::global_color;
  rc.train.lr0 = 0.02;
  const std::string text = to_json(rc);
  EXPECT_EQ(to_json(run_config_from_json(text)), text);
  const RunConfig partial = run_config_from_json(R"({"epochs": 3, "fragment_size": 48})");
  EXPECT_EQ(partial.train.epochs, 3);
  EXPECT_EQ(partial.train.model.fragment_size, 48u);
  EXPECT_EQ(partial.train.lr0, RunConfig{}.train.lr0);
  EXPECT_THROW(run_config_from_json("{not json"), ParseError);
}

TEST(Evaluate, ScrambledLabelsSitAtChance) {
  TempDir dir("scrambled");
  DatasetSpec spec;
  spec.train_per_class = 20;
  spec.val_per_class = 2;
  spec.test_per_class = 200;
  spec.seed = 11;
  const DatasetManifest data = generate_dataset(spec, dir.path());
  const FragmentCache train = FragmentCache::build(data, data.split(Split::train), 32, 0.05);
  const FragmentCache test = FragmentCache::build(data, data.split(Split::test), 32, 0.05);
  std::vector<FragmentSet> sets;
  for (std::size_t i = 0; i < train.count(); ++i) sets.push_back(train.sample(i));
  // Within each true class half the samples are relabelled fake and half
  // real, so the training labels carry no information about the truth.
  std::vector<int> labels(train.count());
  std::mt19937_64 rng(12);
  for (int y : {kFake, kReal}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.count(); ++i) {
      if (train.labels()[i] == y) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) labels[idx[k]] = k < idx.size() / 2 ? kFake : kReal;
  }
  const FragmentCache scrambled = FragmentCache::from_sets(sets, labels);

  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  t.model = tiny_model();
  DetectorModel model(t.model);
  train_fbranch(model, scrambled, FragmentCache{}, t);
  train_gbranch(model, scrambled, FragmentCache{}, t);
  const EvalReport r = evaluate(model, test, {});
  EXPECT_EQ(r.fake_count + r.real_count, 400u);
  EXPECT_NEAR(r.accuracy, 0.5, 0.05);
  // Same model, same samples: same bytes.
  EXPECT_EQ(report_json(evaluate(model, test, {})), report_json(r));
}

TEST(Experiments, GeneralizationProtocolShape) {
  TempDir dir("generalization");
  ExperimentRunner runner(dir.path());
  const RunConfig rc = tiny_run();
  const ExperimentSummary s = run_generalization(runner, rc);

  std::size_t unseen = 0, seen = 0;
  std::set<std::string> unseen_families;
  for (const EvalReport& r : s.reports) {
    if (r.meta.variant != "LAMs+SAM") continue;
    (r.meta.split == "unseen-test" ? unseen : seen) += 1;
  }
  EXPECT_EQ(unseen, 4u);
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(s.reports.size(), 16u);  // both methods
  for (Family f : kFamilies) {
    for (const char* m : {"LAMs+SAM", "no-attention"}) {
      const SummaryRow* row = s.find("generalization", m, family_name(f));
      ASSERT_NE(row, nullptr);
      EXPECT_EQ(row->unseen.size(), 1u);
      EXPECT_EQ(row->mean_unseen, row->unseen[0]);
    }
    DatasetSpec spec = rc.dataset;
    spec.leave_out = f;
    const DatasetManifest data = runner.dataset(spec);
    for (const DatasetRecord& rec : data.records) {
      const bool held = rec.family == family_name(f);
      if (rec.split == Split::unseen_test) {
        EXPECT_TRUE(held || rec.label == kReal) << rec.image;
      } else {
        EXPECT_FALSE(held) << rec.image;
      }
    }
    EXPECT_GT(data.count(Split::unseen_test, kFake), 0u);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "generalization.csv"));
  const nlohmann::json j = nlohmann::json::parse(testing_support::slurp(dir / "generalization.json"));
  EXPECT_EQ(j["rows"].size(), 8u);

  // A second pass is served from the cache and reproduces every report.
  const ExperimentSummary again = run_generalization(runner, rc);
  ASSERT_EQ(again.reports.size(), s.reports.size());
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    EXPECT_EQ(report_json(again.reports[i]), report_json(s.reports[i]));
  }
}

TEST(Experiments, AblationControlRowAndBookkeeping) {
  TempDir dir("ablation");
  ExperimentRunner runner(dir.path());
  const ExperimentSummary s = run_ablation(runner, tiny_run(), AblationPlan{});

  const EvalReport* control = nullptr;
  const EvalReport* full = nullptr;
  for (const EvalReport& r : s.reports) {
    if (r.meta.split != "unseen-test" || r.meta.variant != "LAMs+SAM" || r.removed) continue;
    (control ? full : control) = &r;
  }
  ASSERT_NE(control, nullptr);
  ASSERT_NE(full, nullptr);
  EXPECT_EQ(report_json(*control), report_json(*full));

  const SummaryRow* none = s.find("fragments", "None", "global-warp");
  const SummaryRow* both = s.find("attention", "LAMs+SAM", "global-warp");
  ASSERT_NE(none, nullptr);
  ASSERT_NE(both, nullptr);
  EXPECT_EQ(none->unseen, both->unseen);
  EXPECT_EQ(none->seen, both->seen);

  std::size_t removals = 0;
  for (const EvalReport& r : s.reports) {
    if (!r.removed || r.meta.split != "unseen-test") continue;
    ++removals;
    EXPECT_EQ(r.fake_count, control->fake_count);
    EXPECT_EQ(r.real_count, control->real_count);
    EXPECT_EQ(r.confusion.total(), control->confusion.total());
  }
  EXPECT_EQ(removals, kFragmentCount);
  for (AttentionVariant v : kAttentionVariants) {
    EXPECT_NE(s.find("attention", variant_name(v), "global-warp"), nullptr) << variant_name(v);
  }
  for (Fragment f : kFragments) EXPECT_NE(s.find("fragments", fragment_name(f), "global-warp"), nullptr);
}
