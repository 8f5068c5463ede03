#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "semaforge/branches.hpp"
#include "semaforge/config.hpp"
#include "semaforge/synthetic.hpp"

namespace semaforge {

// Segmented fragments of a labelled image list, held as float32 to halve
// the footprint (pixels come from 8-bit PNGs, so nothing is lost).
class FragmentCache {
 public:
  FragmentCache() = default;
  FragmentCache(std::size_t size, std::vector<int> labels);

  // Loads and segments every record (image + landmark file under the
  // manifest root). Work is split over `jobs` threads; the result does not
  // depend on it.
  static FragmentCache build(const DatasetManifest& manifest, const std::vector<DatasetRecord>& records,
                             std::size_t size, double rho_fraction, std::size_t jobs = 1);
  static FragmentCache from_sets(const std::vector<FragmentSet>& sets, std::vector<int> labels);

  std::size_t count() const { return labels_.size(); }
  std::size_t fragment_size() const { return size_; }
  const std::vector<int>& labels() const { return labels_; }

  void set(std::size_t index, const FragmentSet& fragments);
  // Selected samples of one fragment as an N x S x S x 3 tensor.
  Tensor batch(Fragment f, std::span<const std::size_t> indices) const;
  FragmentSet sample(std::size_t index) const;

 private:
  std::size_t size_ = 0;
  std::vector<int> labels_;
  std::array<std::vector<float>, kFragmentCount> data_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FBranchReport {
  std::array<std::vector<EpochLog>, kFragmentCount> epochs;
  std::array<int, kFragmentCount> best_epoch{-1, -1, -1, -1, -1, -1};
  std::array<double, kFragmentCount> best_val_accuracy{};
  bool trained = false;
};

struct GBranchReport {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  bool trained = false;
};

using ProgressFn = std::function<void(const std::string&)>;

// Step 1: six independent optimisations of mean cross-entropy, one per
// fragment, with SGD + momentum and the step schedule. The parameters of the
// epoch with the best validation accuracy (ties: lower validation loss) are
// kept. Zero epochs leaves the model as initialised and flags it untrained.
// Throws ContractError when the training split holds a single class.
FBranchReport train_fbranch(DetectorModel& model, const FragmentCache& train, const FragmentCache& val,
                            const TrainConfig& config, const ProgressFn& progress = {});

// Step 2: only the SAM heads learn; the F-Branch runs in eval mode and its
// bytes are left untouched. Throws ContractError when step 1 has not run.
GBranchReport train_gbranch(DetectorModel& model, const FragmentCache& train, const FragmentCache& val,
                            const TrainConfig& config, const ProgressFn& progress = {});

// Learning rate used in each epoch of a run with this config.
std::vector<double> lr_trace(const TrainConfig& config);

}  // namespace semaforge
