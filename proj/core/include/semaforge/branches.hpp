#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "semaforge/attention.hpp"
#include "semaforge/backbone.hpp"
#include "semaforge/config.hpp"
#include "semaforge/landmarks.hpp"
#include "semaforge/mfss.hpp"

namespace semaforge {

// Class indices: 0 = fake, 1 = real.
inline constexpr int kFake = 0;
inline constexpr int kReal = 1;

// 2 x k, column i holds [p_i^0, p_i^1] for fragment order[i].
struct PossibilityMatrix {
  std::vector<Fragment> order;
  std::array<std::vector<double>, 2> rows;

  PossibilityMatrix();  // six columns [p, b, f, e, m, n], zero-filled
  std::size_t columns() const { return order.size(); }
  double at(int y, std::size_t column) const { return rows[static_cast<std::size_t>(y)][column]; }
};

// 1 x k weights in the same fragment order.
struct WeightMatrix {
  std::vector<Fragment> order;
  std::vector<double> values;

  WeightMatrix();  // six columns, all 1
  static WeightMatrix uniform(double value);
  std::size_t columns() const { return order.size(); }
};

struct Fusion {
  std::array<double, 2> scores{};  // P W^T
  int label = kFake;
};

// Argmax over {fake, real}; exact ties go to fake.
int fragment_predict(double p_fake, double p_real);
int argmax_label(const std::array<double, 2>& scores);

// scores = P W^T through the matrix product, label = argmax.
// Throws ContractError when the two fragment orders differ.
Fusion fuse(const PossibilityMatrix& p, const WeightMatrix& w);

// The same matrices without one fragment's column.
PossibilityMatrix drop_fragment(const PossibilityMatrix& p, Fragment f);
WeightMatrix drop_fragment(const WeightMatrix& w, Fragment f);

// -log(max(p[y], 1e-12)).
double loss_lam(const std::array<double, 2>& p, int y);
// -log(max(sum_i p_i^y w_i / sum_i w_i, 1e-12)); the literal form omits the
// division. Throws ContractError when every weight is zero.
double loss_sam(const PossibilityMatrix& p, const WeightMatrix& w, int y, bool normalize = true);
// Batched, differentiable in w: p_true is N x k (each row p_i^{y_n}), w is
// N x k. Returns the batch mean.
Tensor loss_sam(const Tensor& p_true, const Tensor& w, bool normalize = true);

// LAM (optional) + backbone for one fragment.
class FragmentClassifier {
 public:
  FragmentClassifier() = default;
  FragmentClassifier(const ModelConfig& config, Rng& rng);

  struct Output {
    Tensor logits;  // N x 2 or 2
    Tensor x_att;   // the fragment itself when LAM is disabled
    Tensor h_att;   // undefined when LAM is disabled
  };
  Output forward(const Tensor& x, Mode mode);
  // State names: lam.* (when enabled), backbone.*
  StateDict state() const;

  Lam& lam() { return lam_; }
  Backbone& backbone() { return backbone_; }
  bool uses_lam() const { return use_lam_; }

 private:
  bool use_lam_ = true;
  Lam lam_;
  Backbone backbone_;
};

struct TrainingRecord {
  int fbranch_epochs = 0;
  int gbranch_epochs = 0;
  bool fbranch_trained = false;
  bool gbranch_trained = false;
  std::array<int, kFragmentCount> fbranch_best_epoch{-1, -1, -1, -1, -1, -1};
  std::array<double, kFragmentCount> fbranch_val_accuracy{};
  int gbranch_best_epoch = -1;
  double gbranch_val_accuracy = 0.0;
};

// Six (LAM, backbone) classifiers and six SAM heads, keyed by fragment.
class DetectorModel {
 public:
  // Parameters are initialised from config.seed; every sub-network draws
  // from its own stream so the layout of one does not shift another.
  explicit DetectorModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  FragmentClassifier& classifier(Fragment f) { return classifiers_[index_of(f)]; }
  Sam& sam(Fragment f) { return sams_[index_of(f)]; }
  StateDict fbranch_state(Fragment f) const { return classifiers_[index_of(f)].state(); }
  StateDict sam_state(Fragment f) const;
  TrainingRecord& record() { return record_; }
  const TrainingRecord& record() const { return record_; }

  // Checkpoint directory: fbranch_<key>.sfck and sam_<key>.sfck, each with a
  // .json hyperparameter sidecar, plus manifest.json.
  void save(const std::filesystem::path& dir) const;
  static DetectorModel load(const std::filesystem::path& dir);

  // Serialised F-Branch (all six classifiers), for freeze checks.
  std::string fbranch_bytes() const;
  std::string sam_bytes() const;

 private:
  ModelConfig config_;
  std::array<FragmentClassifier, kFragmentCount> classifiers_;
  std::array<Sam, kFragmentCount> sams_;
  TrainingRecord record_;
};

// Copies a fragment crop into a tensor (H x W x 3).
Tensor to_tensor(const Image& image);

struct FBranchOutput {
  PossibilityMatrix p;
  std::array<Tensor, kFragmentCount> x_att;  // S x S x 3 each
};

// Eval mode, no gradient recording.
FBranchOutput fbranch_forward(const FragmentSet& fragments, DetectorModel& model);

struct GBranchOutput {
  WeightMatrix w;
  Fusion fusion;
};

// SAM weights (uniform 1 when SAM is disabled) and the fused decision.
GBranchOutput gbranch_forward(const FBranchOutput& f, DetectorModel& model);

struct Prediction {
  int label = kFake;
  std::array<double, 2> scores{};
  PossibilityMatrix p;
  WeightMatrix w;
  std::array<int, kFragmentCount> fragment_labels{};
};

Prediction predict(const FragmentSet& fragments, DetectorModel& model);
Prediction predict(const Image& image, const LandmarkSet& landmarks, DetectorModel& model);

}  // namespace semaforge
