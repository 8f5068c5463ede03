#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semaforge/branches.hpp"
#include "semaforge/config.hpp"
#include "semaforge/metrics.hpp"
#include "semaforge/synthetic.hpp"
#include "semaforge/trainer.hpp"

namespace semaforge {

// --- evaluation ----------------------------------------------------------------

// F-Branch and G-Branch outputs of one sample, enough to re-fuse with a
// fragment removed.
struct SampleOutput {
  PossibilityMatrix p;
  WeightMatrix w;
  int label = kFake;
};

std::vector<SampleOutput> collect_outputs(DetectorModel& model, const FragmentCache& samples);

struct ReportMeta {
  std::string dataset_id;
  std::string split;
  std::string variant;  // free-form run label
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct EvalReport {
  ReportMeta meta;
  std::optional<Fragment> removed;
  std::size_t fake_count = 0;
  std::size_t real_count = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  RocCurve roc;  // fake = positive, score = s_fake / (s_fake + s_real); empty for one-class splits
  std::array<double, kFragmentCount> fragment_accuracy{};
};

// Fused decision per sample; with `removed`, that fragment's column is
// dropped from P and W before fusing. Throws ContractError on an empty list.
EvalReport score_outputs(const std::vector<SampleOutput>& outputs, const ReportMeta& meta,
                         std::optional<Fragment> removed = std::nullopt);
EvalReport evaluate(DetectorModel& model, const FragmentCache& samples, const ReportMeta& meta);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string roc_csv(const EvalReport& report);
// report.json, report.csv and roc_points.csv, each written then renamed.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

// --- run configuration -----------------------------------------------------------

// Everything a run needs; serialised into every run directory.
struct RunConfig {
  DatasetSpec dataset;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

// Flat training keys (lr0, momentum, decay_factor, decay_period, epochs,
// batch_size, seed, jobs, model, fragment_size) at the top level, plus
// optional "dataset" and "seeds".
std::string to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text, const RunConfig& base = {});

// --- experiments -----------------------------------------------------------------

enum class AttentionVariant { none, sam_only, lams_only, lams_sam };
inline constexpr std::array<AttentionVariant, 4> kAttentionVariants = {
    AttentionVariant::none, AttentionVariant::sam_only, AttentionVariant::lams_only,
    AttentionVariant::lams_sam};
std::string_view variant_name(AttentionVariant v);  // "no-attention", "SAM-only", "LAMs-only", "LAMs+SAM"
ModelConfig with_variant(ModelConfig config, AttentionVariant v);

// Trains and caches models and datasets under one output directory:
//   data/<dataset hash>/         generated datasets
//   runs/<config hash>-s<seed>/  config.json, model/, reports
// A model whose directory already holds a checkpoint is loaded instead of
// retrained, so experiments that need the same variant share one training.
// A SAM variant reuses the F-Branch of the matching SAM-free run.
class ExperimentRunner {
 public:
  ExperimentRunner(std::filesystem::path out, std::size_t jobs = 1, ProgressFn progress = {});

  const std::filesystem::path& out() const { return out_; }
  DatasetManifest dataset(const DatasetSpec& spec);
  FragmentCache fragments(const DatasetManifest& data, Split split, const ModelConfig& model);
  // Seed s drives model initialisation and batch order.
  DetectorModel trained_model(const DatasetSpec& spec, TrainConfig train, std::uint64_t seed);
  std::filesystem::path run_dir(const DatasetSpec& spec, const TrainConfig& train, std::uint64_t seed) const;

 private:
  std::filesystem::path out_;
  std::size_t jobs_;
  ProgressFn progress_;
};

struct SummaryRow {
  std::string table;    // "generalization", "fragments" or "attention"
  std::string method;   // variant label
  std::string family;   // held-out family
  std::vector<double> seen;    // per-seed test accuracy
  std::vector<double> unseen;  // per-seed unseen-test accuracy
  double mean_seen = 0.0;
  double mean_unseen = 0.0;
};

struct ExperimentSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<SummaryRow> rows;
  std::vector<EvalReport> reports;

  const SummaryRow* find(std::string_view table, std::string_view method, std::string_view family) const;
  std::string csv() const;
  std::string json() const;
};

// For every family: hold it out, train the full method and the
// no-attention baseline for each seed, and evaluate both on the seen test
// split and the unseen-test split. Writes generalization.csv/.json.
ExperimentSummary run_generalization(ExperimentRunner& runner, const RunConfig& config);

struct AblationPlan {
  Family held_out = Family::global_warp;
  // nullopt is the "remove None" control row.
  std::vector<std::optional<Fragment>> removals = {std::nullopt, Fragment::p, Fragment::b,
                                                   Fragment::f, Fragment::e, Fragment::m,
                                                   Fragment::n};
  std::vector<AttentionVariant> attention = {kAttentionVariants.begin(), kAttentionVariants.end()};
};

// Fragment removal re-fuses the full model's outputs without that column;
// each attention variant is its own training. Writes ablation.csv/.json.
ExperimentSummary run_ablation(ExperimentRunner& runner, const RunConfig& config, const AblationPlan& plan);

}  // namespace semaforge
