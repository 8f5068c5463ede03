#include <gtest/gtest.h>

#include <random>

#include "semaforge/errors.hpp"
#include "semaforge/trainer.hpp"

using namespace semaforge;

namespace {

constexpr std::size_t kSize = 32;

ModelConfig small_model(std::uint64_t seed = 0) {
  ModelConfig c;
  c.fragment_size = kSize;
  c.backbone.stages = {4, 8};
  c.backbone.hidden = 16;
  c.sam_widths = {1024, 16, 8, 1};
  c.seed = seed;
  return c;
}

TrainConfig small_train(int epochs, std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.seed = seed;
  t.model = small_model(seed);
  return t;
}

Image noise_image(std::mt19937_64& rng, double mean, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Image img(kSize, kSize, 3);
  for (double& v : img.data) v = std::clamp(mean + u(rng), 0.0, 1.0);
  return img;
}

// Fakes bright, reals dark, in every fragment.
FragmentCache separable(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FragmentSet> sets;
  std::vector<int> labels;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int y = i % 2 == 0 ? kFake : kReal;
    FragmentSet fs;
    fs.size = kSize;
    for (Image& crop : fs.crops) crop = noise_image(rng, y == kFake ? 0.7 : 0.3, 0.15);
    sets.push_back(fs);
    labels.push_back(y);
  }
  return FragmentCache::from_sets(sets, labels);
}

// Only the mouth fragment carries the label; the rest is label-free noise.
FragmentCache planted_mouth(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FragmentSet> sets;
  std::vector<int> labels;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int y = i % 2 == 0 ? kFake : kReal;
    FragmentSet fs;
    fs.size = kSize;
    for (Fragment f : kFragments) {
      fs[f] = f == Fragment::m ? noise_image(rng, y == kFake ? 0.7 : 0.3, 0.15) : noise_image(rng, 0.5, 0.3);
    }
    sets.push_back(fs);
    labels.push_back(y);
  }
  return FragmentCache::from_sets(sets, labels);
}

double mean_weight(DetectorModel& model, const FragmentCache& data, Fragment f) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.count(); ++i) {
    total += gbranch_forward(fbranch_forward(data.sample(i), model), model).w.values[index_of(f)];
  }
  return total / static_cast<double>(data.count());
}

}  // namespace

TEST(FragmentCache, RoundTripsAndBatches) {
  const FragmentCache c = separable(3, 1);
  EXPECT_EQ(c.count(), 6u);
  const FragmentSet s = c.sample(4);
  const std::array<std::size_t, 2> idx = {4, 1};
  const Tensor b = c.batch(Fragment::e, idx);
  ASSERT_EQ(b.shape(), (Shape{2, kSize, kSize, 3}));
  for (std::size_t k = 0; k < kSize * kSize * 3; ++k) {
    EXPECT_EQ(b.at(k), s[Fragment::e].data[k]);
    EXPECT_EQ(static_cast<float>(b.at(k)), b.at(k));
  }
}

TEST(TrainFBranch, SeparableToyLearnedWithinFiveEpochs) {
  DetectorModel model(small_model(1));
  const FBranchReport r = train_fbranch(model, separable(48, 2), separable(25, 3), small_train(5, 1));
  EXPECT_TRUE(r.trained);
  EXPECT_TRUE(model.record().fbranch_trained);
  for (Fragment f : kFragments) {
    EXPECT_GE(r.best_val_accuracy[index_of(f)], 0.99) << fragment_key(f);
    EXPECT_EQ(r.epochs[index_of(f)].size(), 5u);
  }
}

TEST(TrainFBranch, ZeroEpochsLeavesInitialisedModel) {
  DetectorModel model(small_model(2));
  const std::string before = model.fbranch_bytes();
  const FBranchReport r = train_fbranch(model, separable(4, 4), separable(2, 5), small_train(0));
  EXPECT_FALSE(r.trained);
  EXPECT_FALSE(model.record().fbranch_trained);
  EXPECT_TRUE(model.fbranch_bytes() == before);
  EXPECT_TRUE(model.fbranch_bytes() == DetectorModel(small_model(2)).fbranch_bytes());
}

TEST(TrainFBranch, DeterministicForSeedAndJobs) {
  const FragmentCache train = separable(10, 6), val = separable(4, 7);
  auto run = [&](std::size_t jobs) {
    TrainConfig t = small_train(2, 3);
    t.jobs = jobs;
    DetectorModel model(t.model);
    train_fbranch(model, train, val, t);
    return model.fbranch_bytes();
  };
  const std::string a = run(1);
  EXPECT_TRUE(a == run(1));
  EXPECT_TRUE(a == run(3));
  TrainConfig other = small_train(2, 4);
  DetectorModel m(other.model);
  train_fbranch(m, train, val, other);
  EXPECT_FALSE(a == m.fbranch_bytes());
}

TEST(TrainFBranch, SingleClassRefused) {
  DetectorModel model(small_model());
  FragmentCache c = separable(4, 8);
  std::vector<FragmentSet> sets;
  for (std::size_t i = 0; i < c.count(); ++i) sets.push_back(c.sample(i));
  const FragmentCache one_class = FragmentCache::from_sets(sets, std::vector<int>(sets.size(), kReal));
  EXPECT_THROW(train_fbranch(model, one_class, c, small_train(1)), ContractError);
}

TEST(TrainGBranch, RequiresTrainedFBranch) {
  DetectorModel model(small_model());
  EXPECT_THROW(train_gbranch(model, separable(4, 9), separable(2, 10), small_train(1)), ContractError);
}

TEST(TrainGBranch, ZeroEpochsIsUnweightedVote) {
  DetectorModel model(small_model(5));
  const FragmentCache data = separable(4, 11);
  train_fbranch(model, data, data, small_train(1));
  train_gbranch(model, data, data, small_train(0));
  for (std::size_t i = 0; i < data.count(); ++i) {
    for (double w : gbranch_forward(fbranch_forward(data.sample(i), model), model).w.values) EXPECT_EQ(w, 0.5);
  }
}

TEST(TrainGBranch, PlantedMouthSignalGetsTheLargestWeight) {
  const FragmentCache train = planted_mouth(48, 12), val = planted_mouth(25, 13);
  TrainConfig t = small_train(8, 6);
  DetectorModel model(t.model);
  train_fbranch(model, train, val, t);
  const std::string frozen = model.fbranch_bytes();
  const GBranchReport r = train_gbranch(model, train, val, t);
  EXPECT_TRUE(r.trained);
  EXPECT_TRUE(model.fbranch_bytes() == frozen);
  const double wm = mean_weight(model, val, Fragment::m);
  double others = 0.0;
  for (Fragment f : kFragments) {
    if (f != Fragment::m) others += mean_weight(model, val, f) / 5.0;
  }
  EXPECT_GT(wm, others);
}

TEST(TrainGBranch, DeterministicAndFreezesFBranch) {
  const FragmentCache train = separable(8, 14), val = separable(4, 15);
  auto run = [&] {
    TrainConfig t = small_train(2, 7);
    DetectorModel model(t.model);
    train_fbranch(model, train, val, t);
    const std::string f = model.fbranch_bytes();
    train_gbranch(model, train, val, t);
    EXPECT_TRUE(model.fbranch_bytes() == f);
    return model.sam_bytes();
  };
  EXPECT_TRUE(run() == run());
}

TEST(TrainGBranch, RefusedWhenSamDisabled) {
  TrainConfig t = small_train(1);
  t.model.use_sam = false;
  DetectorModel model(t.model);
  const FragmentCache data = separable(4, 16);
  train_fbranch(model, data, data, t);
  EXPECT_THROW(train_gbranch(model, data, data, t), ContractError);
}

TEST(Training, LearningRateTrace) {
  TrainConfig t;
  const std::vector<double> trace = lr_trace(t);
  ASSERT_EQ(trace.size(), 15u);
  for (std::size_t e = 0; e < 15; ++e) EXPECT_EQ(trace[e], e < 5 ? 1e-3 : e < 10 ? 1e-4 : 1e-5);
  DetectorModel model(small_model());
  const FBranchReport r = train_fbranch(model, separable(4, 17), separable(2, 18), small_train(3));
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(r.epochs[0][e].lr, 1e-3);
}
