#include "semaforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "semaforge/errors.hpp"
#include "semaforge/optim.hpp"

namespace semaforge {

// --- fragment cache -----------------------------------------------------------

FragmentCache::FragmentCache(std::size_t size, std::vector<int> labels)
    : size_(size), labels_(std::move(labels)) {
  for (auto& d : data_) d.assign(labels_.size() * size_ * size_ * 3, 0.0f);
}

void FragmentCache::set(std::size_t index, const FragmentSet& fragments) {
  if (index >= count()) throw ContractError("FragmentCache::set: index out of range");
  const std::size_t stride = size_ * size_ * 3;
  for (Fragment f : kFragments) {
    const Image& crop = fragments[f];
    if (crop.height != size_ || crop.width != size_ || crop.channels != 3) {
      throw DimensionError("FragmentCache::set: fragment '" + std::string(fragment_name(f)) +
                           "' is not " + std::to_string(size_) + "x" + std::to_string(size_) + "x3");
    }
    std::transform(crop.data.begin(), crop.data.end(), data_[index_of(f)].begin() + index * stride,
                   [](double v) { return static_cast<float>(v); });
  }
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> failures(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    } catch (...) {
      failures[w] = std::current_exception();
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work, w);
  work(0);
  for (std::thread& t : threads) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

}  // namespace

FragmentCache FragmentCache::build(const DatasetManifest& manifest,
                                   const std::vector<DatasetRecord>& records, std::size_t size,
                                   double rho_fraction, std::size_t jobs) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const DatasetRecord& r : records) labels.push_back(r.label);
  FragmentCache cache(size, std::move(labels));
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    const Image image = load_png(manifest.root / records[i].image);
    const LandmarkSet lm = load_landmarks(manifest.root / records[i].landmarks);
    cache.set(i, segment(image, lm, size, rho_fraction));
  });
  return cache;
}

FragmentCache FragmentCache::from_sets(const std::vector<FragmentSet>& sets, std::vector<int> labels) {
  if (sets.size() != labels.size()) throw ContractError("FragmentCache: one label per fragment set");
  if (sets.empty()) return FragmentCache(0, {});
  FragmentCache cache(sets.front().size, std::move(labels));
  for (std::size_t i = 0; i < sets.size(); ++i) cache.set(i, sets[i]);
  return cache;
}

Tensor FragmentCache::batch(Fragment f, std::span<const std::size_t> indices) const {
  const std::size_t stride = size_ * size_ * 3;
  Buffer values(indices.size() * stride);
  const std::vector<float>& src = data_[index_of(f)];
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= count()) throw ContractError("FragmentCache::batch: index out of range");
    std::copy_n(src.begin() + indices[k] * stride, stride, values.begin() + k * stride);
  }
  return Tensor({indices.size(), size_, size_, 3}, std::move(values));
}

FragmentSet FragmentCache::sample(std::size_t index) const {
  if (index >= count()) throw ContractError("FragmentCache::sample: index out of range");
  const std::size_t stride = size_ * size_ * 3;
  FragmentSet out;
  out.size = size_;
  for (Fragment f : kFragments) {
    Image img(size_, size_, 3);
    std::copy_n(data_[index_of(f)].begin() + index * stride, stride, img.data.begin());
    out[f] = std::move(img);
  }
  return out;
}

// --- shared helpers ----------------------------------------------------------

std::vector<double> lr_trace(const TrainConfig& config) {
  std::vector<double> out;
  const StepSchedule schedule{config.lr0, config.decay_factor, config.decay_period, config.epochs};
  for (int e = 0; e < config.epochs; ++e) out.push_back(schedule.lr_at_epoch(e));
  return out;
}

namespace {

constexpr std::size_t kEvalBatch = 64;

Rng shuffle_rng(std::uint64_t seed, std::uint32_t stream, std::size_t fragment) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    static_cast<std::uint32_t>(fragment), 0x7a17u};
  return Rng(seq);
}

void check_two_classes(const FragmentCache& train, const char* who) {
  const auto& y = train.labels();
  const bool fake = std::find(y.begin(), y.end(), kFake) != y.end();
  const bool real = std::find(y.begin(), y.end(), kReal) != y.end();
  if (!fake || !real) {
    throw ContractError(std::string(who) + ": the training split holds only " +
                        (fake ? "fake" : real ? "real" : "no") +
                        " images; both classes are needed");
  }
}

void check_config(const TrainConfig& config, const char* who) {
  if (config.epochs < 0) throw ContractError(std::string(who) + ": negative epoch count");
  if (config.batch_size < 2) {
    throw ContractError(std::string(who) + ": batch size must be at least 2 (batch-norm)");
  }
}

// Mini-batches of a fresh permutation; a trailing single sample is folded
// into the previous batch because batch-norm needs two.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(perm.begin() + i, perm.begin() + std::min(n, i + batch));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

struct Snapshot {
  std::vector<std::vector<double>> values;

  static Snapshot take(const std::vector<NamedTensor>& state) {
    Snapshot s;
    for (const NamedTensor& t : state) s.values.emplace_back(t.tensor.values().begin(), t.tensor.values().end());
    return s;
  }
  void restore(const std::vector<NamedTensor>& state) const {
    for (std::size_t i = 0; i < state.size(); ++i) {
      Tensor t = state[i].tensor;
      std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
    }
  }
};

bool better(double acc, double loss, double best_acc, double best_loss) {
  return acc > best_acc || (acc == best_acc && loss < best_loss);
}

struct ValResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValResult validate_fragment(FragmentClassifier& clf, const FragmentCache& val, Fragment f) {
  NoGradGuard no_grad;
  ValResult r;
  const std::size_t n = val.count();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    std::vector<std::size_t> idx(std::min(kEvalBatch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = softmax(clf.forward(val.batch(f, idx), Mode::eval).logits);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int y = val.labels()[idx[k]];
      const double p0 = probs.at(2 * k), p1 = probs.at(2 * k + 1);
      r.loss += -std::log(std::max(y == kFake ? p0 : p1, kLogFloor));
      if (fragment_predict(p0, p1) == y) ++correct;
    }
  }
  r.loss /= static_cast<double>(n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

}  // namespace

// --- step 1 ------------------------------------------------------------------

FBranchReport train_fbranch(DetectorModel& model, const FragmentCache& train, const FragmentCache& val,
                            const TrainConfig& config, const ProgressFn& progress) {
  check_config(config, "train_fbranch");
  if (train.count() == 0) throw ContractError("train_fbranch: empty training split");
  check_two_classes(train, "train_fbranch");
  const std::size_t s = model.config().fragment_size;
  if (train.fragment_size() != s || (val.count() > 0 && val.fragment_size() != s)) {
    throw DimensionError("train_fbranch: cached fragments are not " + std::to_string(s) + "x" +
                         std::to_string(s));
  }

  FBranchReport report;
  TrainingRecord& record = model.record();
  if (config.epochs == 0) {
    record.fbranch_trained = false;
    record.fbranch_epochs = 0;
    return report;
  }
  const std::vector<double> lrs = lr_trace(config);

  parallel_for(kFragmentCount, config.jobs, [&](std::size_t fi) {
    const Fragment f = kFragments[fi];
    FragmentClassifier& clf = model.classifier(f);
    const StateDict state = clf.state();
    const std::vector<NamedTensor> all = state.all();
    SgdMomentum opt(state.parameters, config.lr0, config.momentum);
    Rng rng = shuffle_rng(config.seed, 1, fi);

    Snapshot best;
    double best_acc = -1.0, best_loss = INFINITY;
    int best_epoch = -1;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      EpochLog log;
      log.epoch = epoch;
      log.lr = lrs[static_cast<std::size_t>(epoch)];
      opt.set_lr(log.lr);
      double loss_sum = 0.0;
      for (const auto& idx : make_batches(train.count(), config.batch_size, rng)) {
        std::vector<int> y(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) y[k] = train.labels()[idx[k]];
        const Tensor loss = cross_entropy(softmax(clf.forward(train.batch(f, idx), Mode::train).logits), y);
        loss_sum += loss.item() * static_cast<double>(idx.size());
        loss.backward();
        opt.step();
      }
      log.train_loss = loss_sum / static_cast<double>(train.count());
      if (val.count() > 0) {
        const ValResult v = validate_fragment(clf, val, f);
        log.val_loss = v.loss;
        log.val_accuracy = v.accuracy;
      }
      // Without a validation split the last epoch is kept.
      if (val.count() == 0 || better(log.val_accuracy, log.val_loss, best_acc, best_loss)) {
        best = Snapshot::take(all);
        best_acc = log.val_accuracy;
        best_loss = log.val_loss;
        best_epoch = epoch;
      }
      report.epochs[fi].push_back(log);
      if (progress) {
        char line[200];
        std::snprintf(line, sizeof line,
                      "fbranch %s epoch %d/%d lr %.0e train_loss %.4f val_loss %.4f val_acc %.4f",
                      std::string(fragment_key(f)).c_str(), epoch + 1, config.epochs, log.lr,
                      log.train_loss, log.val_loss, log.val_accuracy);
        progress(line);
      }
    }
    best.restore(all);
    report.best_epoch[fi] = best_epoch;
    report.best_val_accuracy[fi] = best_acc;
  });

  report.trained = true;
  record.fbranch_trained = true;
  record.fbranch_epochs = config.epochs;
  record.fbranch_best_epoch = report.best_epoch;
  record.fbranch_val_accuracy = report.best_val_accuracy;
  return report;
}

// --- step 2 ------------------------------------------------------------------

namespace {

// Frozen F-Branch outputs for every cached sample: the true-class
// possibility of each fragment and the attentive fragments SAM consumes.
struct FrozenFeatures {
  std::vector<double> p_true;  // N x 6
  std::vector<double> p;       // N x 2 x 6 (row-major per sample: fake row, real row)
  std::array<std::vector<float>, kFragmentCount> x_att;
  std::size_t n = 0;
  std::size_t stride = 0;

  Tensor x_att_batch(Fragment f, std::span<const std::size_t> idx) const {
    Buffer values(idx.size() * stride);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(x_att[index_of(f)].begin() + idx[k] * stride, stride, values.begin() + k * stride);
    }
    const std::size_t s = static_cast<std::size_t>(std::lround(std::sqrt(stride / 3.0)));
    return Tensor({idx.size(), s, s, 3}, std::move(values));
  }
  Tensor p_true_batch(std::span<const std::size_t> idx) const {
    std::vector<double> values(idx.size() * kFragmentCount);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(p_true.begin() + idx[k] * kFragmentCount, kFragmentCount, values.begin() + k * kFragmentCount);
    }
    return Tensor({idx.size(), kFragmentCount}, std::move(values));
  }
};

FrozenFeatures freeze_features(DetectorModel& model, const FragmentCache& cache, std::size_t jobs) {
  FrozenFeatures out;
  out.n = cache.count();
  const std::size_t s = cache.fragment_size();
  out.stride = s * s * 3;
  out.p_true.assign(out.n * kFragmentCount, 0.0);
  out.p.assign(out.n * 2 * kFragmentCount, 0.0);
  parallel_for(kFragmentCount, jobs, [&](std::size_t fi) {
    NoGradGuard no_grad;
    const Fragment f = kFragments[fi];
    out.x_att[fi].assign(out.n * out.stride, 0.0f);
    for (std::size_t start = 0; start < out.n; start += kEvalBatch) {
      std::vector<std::size_t> idx(std::min(kEvalBatch, out.n - start));
      std::iota(idx.begin(), idx.end(), start);
      const FragmentClassifier::Output o = model.classifier(f).forward(cache.batch(f, idx), Mode::eval);
      const Tensor probs = softmax(o.logits);
      const auto xv = o.x_att.values();
      std::transform(xv.begin(), xv.end(), out.x_att[fi].begin() + start * out.stride,
                     [](double v) { return static_cast<float>(v); });
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::size_t i = idx[k];
        const double p0 = probs.at(2 * k), p1 = probs.at(2 * k + 1);
        out.p[i * 2 * kFragmentCount + fi] = p0;
        out.p[i * 2 * kFragmentCount + kFragmentCount + fi] = p1;
        out.p_true[i * kFragmentCount + fi] = cache.labels()[i] == kFake ? p0 : p1;
      }
    }
  });
  return out;
}

std::vector<NamedTensor> sam_parameters(DetectorModel& model) {
  std::vector<NamedTensor> out;
  for (Fragment f : kFragments) {
    for (NamedTensor t : model.sam_state(f).parameters) {
      t.name = std::string(fragment_key(f)) + "." + t.name;
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<NamedTensor> sam_all(DetectorModel& model) {
  std::vector<NamedTensor> out;
  for (Fragment f : kFragments) {
    for (NamedTensor& t : model.sam_state(f).all()) out.push_back(std::move(t));
  }
  return out;
}

Tensor sam_weights(DetectorModel& model, const FrozenFeatures& feats, std::span<const std::size_t> idx,
                   Mode mode) {
  std::vector<Tensor> columns;
  for (Fragment f : kFragments) {
    columns.push_back(model.sam(f).forward(feats.x_att_batch(f, idx), mode));
  }
  return concat_columns(columns);
}

ValResult validate_gbranch(DetectorModel& model, const FrozenFeatures& val,
                           const std::vector<int>& labels) {
  NoGradGuard no_grad;
  ValResult r;
  std::size_t correct = 0;
  const bool normalize = model.config().normalize_sam_loss;
  for (std::size_t start = 0; start < val.n; start += kEvalBatch) {
    std::vector<std::size_t> idx(std::min(kEvalBatch, val.n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor w = sam_weights(model, val, idx, Mode::eval);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      PossibilityMatrix p;
      WeightMatrix wm;
      for (std::size_t c = 0; c < kFragmentCount; ++c) {
        p.rows[0][c] = val.p[i * 2 * kFragmentCount + c];
        p.rows[1][c] = val.p[i * 2 * kFragmentCount + kFragmentCount + c];
        wm.values[c] = w.at(k * kFragmentCount + c);
      }
      r.loss += loss_sam(p, wm, labels[i], normalize);
      if (fuse(p, wm).label == labels[i]) ++correct;
    }
  }
  r.loss /= static_cast<double>(val.n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(val.n);
  return r;
}

}  // namespace

GBranchReport train_gbranch(DetectorModel& model, const FragmentCache& train, const FragmentCache& val,
                            const TrainConfig& config, const ProgressFn& progress) {
  check_config(config, "train_gbranch");
  if (!model.record().fbranch_trained) {
    throw ContractError("train_gbranch: no trained F-Branch; run step 1 or load its checkpoint first");
  }
  if (!model.config().use_sam) {
    throw ContractError("train_gbranch: the model is configured without SAM");
  }
  if (train.count() == 0) throw ContractError("train_gbranch: empty training split");
  check_two_classes(train, "train_gbranch");

  GBranchReport report;
  TrainingRecord& record = model.record();
  if (config.epochs == 0) {
    record.gbranch_trained = false;
    record.gbranch_epochs = 0;
    return report;
  }

  const FrozenFeatures train_feats = freeze_features(model, train, config.jobs);
  const FrozenFeatures val_feats = freeze_features(model, val, config.jobs);
  const std::vector<double> lrs = lr_trace(config);
  const std::vector<NamedTensor> params = sam_parameters(model);
  const std::vector<NamedTensor> all = sam_all(model);
  SgdMomentum opt(params, config.lr0, config.momentum);
  Rng rng = shuffle_rng(config.seed, 2, 0);
  const bool normalize = model.config().normalize_sam_loss;

  Snapshot best;
  double best_acc = -1.0, best_loss = INFINITY;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = lrs[static_cast<std::size_t>(epoch)];
    opt.set_lr(log.lr);
    double loss_sum = 0.0;
    for (const auto& idx : make_batches(train.count(), config.batch_size, rng)) {
      const Tensor w = sam_weights(model, train_feats, idx, Mode::train);
      const Tensor loss = loss_sam(train_feats.p_true_batch(idx), w, normalize);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      loss.backward();
      opt.step();
    }
    log.train_loss = loss_sum / static_cast<double>(train.count());
    if (val.count() > 0) {
      const ValResult v = validate_gbranch(model, val_feats, val.labels());
      log.val_loss = v.loss;
      log.val_accuracy = v.accuracy;
    }
    if (val.count() == 0 || better(log.val_accuracy, log.val_loss, best_acc, best_loss)) {
      best = Snapshot::take(all);
      best_acc = log.val_accuracy;
      best_loss = log.val_loss;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(log);
    if (progress) {
      char line[200];
      std::snprintf(line, sizeof line,
                    "gbranch epoch %d/%d lr %.0e train_loss %.4f val_loss %.4f val_acc %.4f",
                    epoch + 1, config.epochs, log.lr, log.train_loss, log.val_loss, log.val_accuracy);
      progress(line);
    }
  }
  best.restore(all);
  report.best_val_accuracy = best_acc;
  report.trained = true;
  record.gbranch_trained = true;
  record.gbranch_epochs = config.epochs;
  record.gbranch_best_epoch = report.best_epoch;
  record.gbranch_val_accuracy = best_acc;
  return report;
}

}  // namespace semaforge
