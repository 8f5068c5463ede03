#include "semaforge/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json_config.hpp"
#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

using nlohmann::ordered_json;

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// --- evaluation ----------------------------------------------------------------

std::vector<SampleOutput> collect_outputs(DetectorModel& model, const FragmentCache& samples) {
  std::vector<SampleOutput> out;
  out.reserve(samples.count());
  for (std::size_t i = 0; i < samples.count(); ++i) {
    const Prediction pred = predict(samples.sample(i), model);
    out.push_back({pred.p, pred.w, samples.labels()[i]});
  }
  return out;
}

EvalReport score_outputs(const std::vector<SampleOutput>& outputs, const ReportMeta& meta,
                         std::optional<Fragment> removed) {
  if (outputs.empty()) throw ContractError("evaluate: empty split");
  EvalReport r;
  r.meta = meta;
  r.removed = removed;
  std::vector<int> labels, predicted, positive;
  std::vector<double> scores;
  std::array<std::size_t, kFragmentCount> frag_correct{};
  for (const SampleOutput& s : outputs) {
    Fusion fusion = removed ? fuse(drop_fragment(s.p, *removed), drop_fragment(s.w, *removed))
                            : fuse(s.p, s.w);
    labels.push_back(s.label);
    predicted.push_back(fusion.label);
    positive.push_back(s.label == kFake ? 1 : 0);
    const double total = fusion.scores[0] + fusion.scores[1];
    scores.push_back(total > 0 ? fusion.scores[0] / total : 0.5);
    for (std::size_t i = 0; i < s.p.columns(); ++i) {
      if (fragment_predict(s.p.rows[0][i], s.p.rows[1][i]) == s.label) {
        ++frag_correct[index_of(s.p.order[i])];
      }
    }
    if (s.label == kFake) {
      ++r.fake_count;
    } else {
      ++r.real_count;
    }
  }
  r.confusion = confusion_matrix(labels, predicted);
  r.accuracy = r.confusion.accuracy();
  if (r.fake_count > 0 && r.real_count > 0) r.roc = roc_auc(scores, positive);
  for (std::size_t i = 0; i < kFragmentCount; ++i) {
    r.fragment_accuracy[i] = static_cast<double>(frag_correct[i]) / static_cast<double>(outputs.size());
  }
  return r;
}

EvalReport evaluate(DetectorModel& model, const FragmentCache& samples, const ReportMeta& meta) {
  if (samples.count() == 0) throw ContractError("evaluate: empty split");
  return score_outputs(collect_outputs(model, samples), meta);
}

std::string report_json(const EvalReport& r) {
  ordered_json frag = ordered_json::object();
  for (Fragment f : kFragments) frag[std::string(fragment_key(f))] = r.fragment_accuracy[index_of(f)];
  ordered_json roc = ordered_json::array();
  for (const RocPoint& p : r.roc.points) {
    roc.push_back({p.fpr, p.tpr, std::isinf(p.threshold) ? ordered_json(nullptr) : ordered_json(p.threshold)});
  }
  ordered_json j{
      {"dataset_id", r.meta.dataset_id},
      {"split", r.meta.split},
      {"variant", r.meta.variant},
      {"removed_fragment", r.removed ? ordered_json(std::string(fragment_key(*r.removed))) : ordered_json(nullptr)},
      {"counts", {{"fake", r.fake_count}, {"real", r.real_count}}},
      {"accuracy", r.accuracy},
      {"confusion", {{"true_fake", r.confusion.true_fake},
                     {"false_real", r.confusion.false_real},
                     {"false_fake", r.confusion.false_fake},
                     {"true_real", r.confusion.true_real}}},
      {"auc", r.roc.points.empty() ? ordered_json(nullptr) : ordered_json(r.roc.auc)},
      {"roc", roc},
      {"fragment_accuracy", frag},
      {"seed", r.meta.seed},
      {"config_hash", r.meta.config_hash}};
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::string out = "dataset_id,split,variant,removed,fake,real,accuracy,auc";
  for (Fragment f : kFragments) out += ",acc_" + std::string(fragment_key(f));
  out += ",seed,config_hash\n";
  out += r.meta.dataset_id + "," + r.meta.split + "," + r.meta.variant + "," +
         (r.removed ? std::string(fragment_key(*r.removed)) : "none") + "," +
         std::to_string(r.fake_count) + "," + std::to_string(r.real_count) + "," + fmt(r.accuracy) +
         "," + (r.roc.points.empty() ? "" : fmt(r.roc.auc));
  for (double a : r.fragment_accuracy) out += "," + fmt(a);
  out += "," + std::to_string(r.meta.seed) + "," + r.meta.config_hash + "\n";
  return out;
}

std::string roc_csv(const EvalReport& r) {
  std::string out = "fpr,tpr,threshold\n";
  for (const RocPoint& p : r.roc.points) {
    out += fmt(p.fpr) + "," + fmt(p.tpr) + "," + (std::isinf(p.threshold) ? "inf" : fmt(p.threshold)) + "\n";
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  make_dirs(dir);
  write_atomic(dir / "report.json", report_json(report));
  write_atomic(dir / "report.csv", report_csv(report));
  write_atomic(dir / "roc_points.csv", roc_csv(report));
}

// --- run configuration -----------------------------------------------------------

std::string to_json(const RunConfig& c) {
  nlohmann::json j = detail::train_config_json(c.train);
  j["dataset"] = nlohmann::json::parse(to_json(c.dataset));
  j["seeds"] = c.seeds;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const RunConfig& base) {
  nlohmann::json j = detail::parse_json(text, "run config");
  if (!j.is_object()) throw ParseError("run config: expected a JSON object");
  RunConfig c = base;
  if (j.contains("dataset")) {
    c.dataset = dataset_spec_from_json(j.at("dataset").dump(), c.dataset);
    j.erase("dataset");
  }
  if (j.contains("seeds")) {
    detail::read(j, "seeds", c.seeds, "run config");
    j.erase("seeds");
  }
  if (j.contains("fragment_size")) {
    detail::read(j, "fragment_size", c.train.model.fragment_size, "run config");
    j.erase("fragment_size");
  }
  detail::apply_train_config(j, c.train, "run config");
  return c;
}

// --- experiments -----------------------------------------------------------------

std::string_view variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::none: return "no-attention";
    case AttentionVariant::sam_only: return "SAM-only";
    case AttentionVariant::lams_only: return "LAMs-only";
    case AttentionVariant::lams_sam: return "LAMs+SAM";
  }
  return "?";
}

ModelConfig with_variant(ModelConfig config, AttentionVariant v) {
  config.use_lam = v == AttentionVariant::lams_only || v == AttentionVariant::lams_sam;
  config.use_sam = v == AttentionVariant::sam_only || v == AttentionVariant::lams_sam;
  return config;
}

ExperimentRunner::ExperimentRunner(std::filesystem::path out, std::size_t jobs, ProgressFn progress)
    : out_(std::move(out)), jobs_(std::max<std::size_t>(1, jobs)), progress_(std::move(progress)) {}

DatasetManifest ExperimentRunner::dataset(const DatasetSpec& spec) {
  const std::string spec_json = to_json(spec) + "\n";
  const std::filesystem::path dir = out_ / "data" / stable_hash(spec_json);
  if (std::filesystem::exists(dir / "manifest.jsonl") && std::filesystem::exists(dir / "dataset.json") &&
      read_file(dir / "dataset.json") == spec_json) {
    return load_manifest(dir);
  }
  if (progress_) progress_("generating dataset " + dir.string());
  return generate_dataset(spec, dir, jobs_);
}

FragmentCache ExperimentRunner::fragments(const DatasetManifest& data, Split split, const ModelConfig& model) {
  return FragmentCache::build(data, data.split(split), model.fragment_size, model.rho_fraction, jobs_);
}

namespace {

TrainConfig seeded(TrainConfig train, std::uint64_t seed) {
  train.seed = seed;
  train.model.seed = seed;
  train.jobs = 1;  // never changes results, so it stays out of the hash
  return train;
}

std::string run_json(const DatasetSpec& spec, const TrainConfig& train, std::uint64_t seed) {
  RunConfig rc;
  rc.dataset = spec;
  rc.train = seeded(train, seed);
  rc.seeds = {seed};
  return to_json(rc) + "\n";
}

}  // namespace

std::filesystem::path ExperimentRunner::run_dir(const DatasetSpec& spec, const TrainConfig& train,
                                                std::uint64_t seed) const {
  return out_ / "runs" / (stable_hash(run_json(spec, train, seed)) + "-s" + std::to_string(seed));
}

DetectorModel ExperimentRunner::trained_model(const DatasetSpec& spec, TrainConfig train, std::uint64_t seed) {
  train = seeded(train, seed);
  const std::filesystem::path dir = run_dir(spec, train, seed);
  if (std::filesystem::exists(dir / "model" / "manifest.json")) {
    return DetectorModel::load(dir / "model");
  }
  make_dirs(dir);
  write_atomic(dir / "config.json", run_json(spec, train, seed));

  TrainConfig run = train;
  run.jobs = jobs_;
  const DatasetManifest data = dataset(spec);
  const FragmentCache train_cache = fragments(data, Split::train, train.model);
  const FragmentCache val_cache = fragments(data, Split::val, train.model);
  auto log = [&](const std::string& line) {
    if (progress_) progress_("[" + dir.filename().string() + "] " + line);
  };

  DetectorModel model(train.model);
  if (train.model.use_sam) {
    TrainConfig step1 = train;
    step1.model.use_sam = false;
    const DetectorModel base = trained_model(spec, step1, seed);
    for (Fragment f : kFragments) {
      const std::vector<NamedTensor> from = base.fbranch_state(f).all();
      const std::vector<NamedTensor> to = model.fbranch_state(f).all();
      for (std::size_t i = 0; i < from.size(); ++i) {
        Tensor t = to[i].tensor;
        std::copy(from[i].tensor.values().begin(), from[i].tensor.values().end(), t.mutable_values().begin());
      }
    }
    const TrainingRecord& r = base.record();
    model.record().fbranch_trained = r.fbranch_trained;
    model.record().fbranch_epochs = r.fbranch_epochs;
    model.record().fbranch_best_epoch = r.fbranch_best_epoch;
    model.record().fbranch_val_accuracy = r.fbranch_val_accuracy;
    train_gbranch(model, train_cache, val_cache, run, log);
  } else {
    train_fbranch(model, train_cache, val_cache, run, log);
  }
  model.save(dir / "model");
  return model;
}

const SummaryRow* ExperimentSummary::find(std::string_view table, std::string_view method,
                                          std::string_view family) const {
  for (const SummaryRow& r : rows) {
    if (r.table == table && r.method == method && r.family == family) return &r;
  }
  return nullptr;
}

std::string ExperimentSummary::csv() const {
  std::string out = "table,method,held_out";
  for (std::uint64_t s : seeds) out += ",seen_s" + std::to_string(s);
  for (std::uint64_t s : seeds) out += ",unseen_s" + std::to_string(s);
  out += ",mean_seen,mean_unseen\n";
  for (const SummaryRow& r : rows) {
    out += r.table + "," + r.method + "," + r.family;
    for (double v : r.seen) out += "," + fmt(v);
    for (double v : r.unseen) out += "," + fmt(v);
    out += "," + fmt(r.mean_seen) + "," + fmt(r.mean_unseen) + "\n";
  }
  return out;
}

std::string ExperimentSummary::json() const {
  ordered_json rows_json = ordered_json::array();
  for (const SummaryRow& r : rows) {
    rows_json.push_back({{"table", r.table},
                         {"method", r.method},
                         {"held_out", r.family},
                         {"seen", r.seen},
                         {"unseen", r.unseen},
                         {"mean_seen", r.mean_seen},
                         {"mean_unseen", r.mean_unseen}});
  }
  return ordered_json{{"seeds", seeds}, {"rows", rows_json}}.dump(2) + "\n";
}

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct SplitCaches {
  FragmentCache test;
  FragmentCache unseen;
};

// Evaluates a model on both splits, writes the reports into its run
// directory and appends them to the summary.
std::pair<double, double> evaluate_run(ExperimentSummary& summary,
                                       const std::filesystem::path& dir, DetectorModel& model,
                                       const SplitCaches& caches, ReportMeta meta,
                                       std::vector<std::optional<Fragment>> removals,
                                       std::vector<std::pair<double, double>>* per_removal) {
  std::pair<double, double> acc{};
  const std::pair<const FragmentCache*, Split> splits[] = {{&caches.test, Split::test},
                                                           {&caches.unseen, Split::unseen_test}};
  if (per_removal) per_removal->assign(removals.size(), {});
  for (const auto& [cache, split] : splits) {
    meta.split = std::string(split_name(split));
    const std::vector<SampleOutput> outputs = collect_outputs(model, *cache);
    for (std::size_t k = 0; k < removals.size(); ++k) {
      EvalReport r = score_outputs(outputs, meta, removals[k]);
      const std::string sub = removals[k] ? "remove-" + std::string(fragment_key(*removals[k])) : "full";
      write_report(dir / "reports" / meta.split / sub, r);
      const double a = r.accuracy;
      if (!removals[k]) (split == Split::test ? acc.first : acc.second) = a;
      if (per_removal) ((split == Split::test) ? (*per_removal)[k].first : (*per_removal)[k].second) = a;
      summary.reports.push_back(std::move(r));
    }
  }
  return acc;
}

SummaryRow& row_for(ExperimentSummary& s, const std::string& table, const std::string& method,
                    const std::string& family) {
  for (SummaryRow& r : s.rows) {
    if (r.table == table && r.method == method && r.family == family) return r;
  }
  s.rows.push_back({table, method, family, {}, {}, 0.0, 0.0});
  return s.rows.back();
}

void finish(ExperimentSummary& s) {
  for (SummaryRow& r : s.rows) {
    r.mean_seen = mean(r.seen);
    r.mean_unseen = mean(r.unseen);
  }
}

}  // namespace

ExperimentSummary run_generalization(ExperimentRunner& runner, const RunConfig& config) {
  if (config.seeds.empty()) throw ContractError("run_generalization: no seeds");
  ExperimentSummary summary;
  summary.seeds = config.seeds;
  const AttentionVariant methods[] = {AttentionVariant::lams_sam, AttentionVariant::none};
  for (Family family : kFamilies) {
    DatasetSpec spec = config.dataset;
    spec.leave_out = family;
    const DatasetManifest data = runner.dataset(spec);
    const SplitCaches caches{runner.fragments(data, Split::test, config.train.model),
                             runner.fragments(data, Split::unseen_test, config.train.model)};
    for (AttentionVariant v : methods) {
      TrainConfig train = config.train;
      train.model = with_variant(train.model, v);
      SummaryRow& row = row_for(summary, "generalization", std::string(variant_name(v)),
                                std::string(family_name(family)));
      for (std::uint64_t seed : config.seeds) {
        DetectorModel model = runner.trained_model(spec, train, seed);
        const std::filesystem::path dir = runner.run_dir(spec, train, seed);
        const ReportMeta meta{stable_hash(to_json(spec) + "\n"), "", std::string(variant_name(v)), seed,
                              dir.filename().string()};
        const auto [seen, unseen] = evaluate_run(summary, dir, model, caches, meta, {std::nullopt}, nullptr);
        row.seen.push_back(seen);
        row.unseen.push_back(unseen);
      }
    }
  }
  finish(summary);
  make_dirs(runner.out());
  write_atomic(runner.out() / "generalization.csv", summary.csv());
  write_atomic(runner.out() / "generalization.json", summary.json());
  return summary;
}

ExperimentSummary run_ablation(ExperimentRunner& runner, const RunConfig& config, const AblationPlan& plan) {
  if (config.seeds.empty()) throw ContractError("run_ablation: no seeds");
  ExperimentSummary summary;
  summary.seeds = config.seeds;
  DatasetSpec spec = config.dataset;
  spec.leave_out = plan.held_out;
  const std::string family(family_name(plan.held_out));
  const DatasetManifest data = runner.dataset(spec);
  const SplitCaches caches{runner.fragments(data, Split::test, config.train.model),
                           runner.fragments(data, Split::unseen_test, config.train.model)};
  const std::string dataset_id = stable_hash(to_json(spec) + "\n");

  for (std::uint64_t seed : config.seeds) {
    // Fragment table: one full model, re-fused without each fragment.
    TrainConfig full = config.train;
    full.model = with_variant(full.model, AttentionVariant::lams_sam);
    {
      DetectorModel model = runner.trained_model(spec, full, seed);
      const std::filesystem::path dir = runner.run_dir(spec, full, seed);
      const ReportMeta meta{dataset_id, "", std::string(variant_name(AttentionVariant::lams_sam)), seed,
                            dir.filename().string()};
      std::vector<std::pair<double, double>> per;
      evaluate_run(summary, dir, model, caches, meta, plan.removals, &per);
      for (std::size_t k = 0; k < plan.removals.size(); ++k) {
        const std::string name = plan.removals[k] ? std::string(fragment_name(*plan.removals[k])) : "None";
        SummaryRow& row = row_for(summary, "fragments", name, family);
        row.seen.push_back(per[k].first);
        row.unseen.push_back(per[k].second);
      }
    }
    for (AttentionVariant v : plan.attention) {
      TrainConfig train = config.train;
      train.model = with_variant(train.model, v);
      DetectorModel model = runner.trained_model(spec, train, seed);
      const std::filesystem::path dir = runner.run_dir(spec, train, seed);
      const ReportMeta meta{dataset_id, "", std::string(variant_name(v)), seed, dir.filename().string()};
      const auto [seen, unseen] = evaluate_run(summary, dir, model, caches, meta, {std::nullopt}, nullptr);
      SummaryRow& row = row_for(summary, "attention", std::string(variant_name(v)), family);
      row.seen.push_back(seen);
      row.unseen.push_back(unseen);
    }
  }
  finish(summary);
  make_dirs(runner.out());
  write_atomic(runner.out() / "ablation.csv", summary.csv());
  write_atomic(runner.out() / "ablation.json", summary.json());
  return summary;
}

}  // namespace semaforge
