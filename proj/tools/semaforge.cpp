// semaforge: dataset generation, segmentation preview, two-step training,
// evaluation, generalization/ablation suites and gradient self-checks.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>

#include "semaforge/branches.hpp"
#include "semaforge/errors.hpp"
#include "semaforge/experiments.hpp"
#include "semaforge/mfss.hpp"
#include "semaforge/selfcheck.hpp"
#include "semaforge/synthetic.hpp"
#include "semaforge/trainer.hpp"

namespace fs = std::filesystem;
using namespace semaforge;

namespace {

enum class Level { error = 0, info = 1, debug = 2 };

Level log_level() {
  const char* env = std::getenv("SEMAFORGE_LOG");
  if (!env) return Level::info;
  const std::string v = env;
  if (v == "error") return Level::error;
  if (v == "debug") return Level::debug;
  return Level::info;
}

std::mutex log_mutex;

void log(Level level, const std::string& line) {
  if (level > log_level()) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << line << '\n';
}

ProgressFn progress_logger() {
  return [](const std::string& line) { log(Level::info, line); };
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

// Flags shared by every subcommand, plus the ones only some use.
struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> fragment_size;
  std::optional<int> epochs;
  std::optional<std::string> leave_out;
  std::string step = "both";
  std::string data;
  std::string model;
  std::string split = "test";
  std::string image;
  std::string landmarks;
  std::string format = "png";
};

void add_common(CLI::App* cmd, Options& o, const std::string& out_help) {
  cmd->add_option("--config", o.config, "JSON run configuration (flags override it)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, out_help)->required();
  cmd->add_option("--jobs", o.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
}

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--fragment-size", o.fragment_size, "Fragment side S in pixels (default 64, at least 32)");
  cmd->add_option("--epochs", o.epochs, "Training epochs per step (default 15)")->check(CLI::NonNegativeNumber);
}

void add_leave_out(CLI::App* cmd, Options& o, const std::string& help) {
  cmd->add_option("--leave-out", o.leave_out, help)
      ->check(CLI::IsMember({"local-eyes", "local-mouth", "global-warp", "global-color"}));
}

// Built-in defaults, then the config file, then flags.
RunConfig resolve(const Options& o) {
  RunConfig rc;
  if (!o.config.empty()) rc = run_config_from_json(read_text(o.config), rc);
  if (o.seed) {
    rc.train.seed = *o.seed;
    rc.train.model.seed = *o.seed;
    rc.seeds = {*o.seed};
  }
  if (o.jobs) rc.train.jobs = *o.jobs;
  if (o.fragment_size) rc.train.model.fragment_size = *o.fragment_size;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.leave_out) rc.dataset.leave_out = parse_family(*o.leave_out);
  log(Level::info, "config: " + to_json(rc));
  return rc;
}

// --- subcommands -------------------------------------------------------------

int cmd_generate(const Options& o) {
  RunConfig rc = resolve(o);
  if (o.seed) rc.dataset.seed = *o.seed;
  const DatasetManifest m = generate_dataset(rc.dataset, o.out, rc.train.jobs);
  log(Level::info, "wrote " + std::to_string(m.records.size()) + " records");
  std::cout << (fs::path(o.out) / "manifest.jsonl").string() << '\n';
  return 0;
}

int cmd_segment(const Options& o) {
  const RunConfig rc = resolve(o);
  const Image image = load_png(o.image);
  const LandmarkSet lm = load_landmarks(o.landmarks);
  validate_landmarks(lm, image.height, image.width);
  const std::size_t size = rc.train.model.fragment_size;
  const RegionPolygons regions = group_landmarks(lm, rc.train.model.rho_fraction);
  const FragmentMaskSet masks = rasterize_masks(regions, image.height, image.width);
  for (const std::string& w : masks.warnings) log(Level::info, "warning: " + w);
  const FragmentSet frags = extract_fragments(image, masks, size);

  const fs::path out = o.out;
  ensure_dir(out);
  std::optional<DetectorModel> model;
  if (!o.model.empty()) model = DetectorModel::load(o.model);
  for (Fragment f : kFragments) {
    const std::string key(fragment_key(f));
    save_pgm(out / ("mask_" + key + ".pgm"), masks[f]);
    if (o.format == "png") {
      save_png(out / ("fragment_" + key + ".png"), frags[f]);
    } else {
      // Little-endian float64, S x S x 3, no header.
      std::ofstream raw(out / ("fragment_" + key + ".raw"), std::ios::binary);
      raw.write(reinterpret_cast<const char*>(frags[f].data.data()),
                static_cast<std::streamsize>(frags[f].data.size() * sizeof(double)));
      if (!raw) throw IoError("write failed for fragment_" + key + ".raw");
    }
    if (model && model->config().use_lam) {
      if (model->config().fragment_size != size) {
        throw ContractError("segment: model expects fragment size " +
                            std::to_string(model->config().fragment_size));
      }
      NoGradGuard no_grad;
      const Tensor h = model->classifier(f).lam().forward(to_tensor(frags[f]), Mode::eval).h_att;
      Image gray(size, size, 1);
      std::copy(h.values().begin(), h.values().end(), gray.data.begin());
      save_pgm(out / ("heatmap_" + key + ".pgm"), gray);
    }
  }
  std::cout << out.string() << '\n';
  return 0;
}

std::string epochs_json(const std::vector<EpochLog>& logs) {
  std::string s = "[";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%s{\"epoch\": %d, \"lr\": %.17g, \"train_loss\": %.17g, \"val_loss\": %.17g, "
                  "\"val_accuracy\": %.17g}",
                  i ? ", " : "", logs[i].epoch, logs[i].lr, logs[i].train_loss, logs[i].val_loss,
                  logs[i].val_accuracy);
    s += buf;
  }
  return s + "]";
}

int cmd_train(const Options& o) {
  RunConfig rc = resolve(o);
  const TrainConfig& tc = rc.train;
  const fs::path out = o.out;
  ensure_dir(out);
  write_text(out / "config.json", to_json(rc) + "\n");

  const fs::path model_dir = out / "model";
  const bool step1 = o.step == "1" || o.step == "both";
  const bool step2 = o.step == "2" || o.step == "both";
  if (!step1 && !fs::exists(model_dir / "manifest.json")) {
    throw ContractError("train --step 2: missing F-Branch checkpoint in '" + model_dir.string() + "'");
  }

  DatasetManifest data;
  if (o.data.empty()) {
    log(Level::info, "generating dataset under " + (out / "data").string());
    data = generate_dataset(rc.dataset, out / "data", tc.jobs);
  } else {
    data = load_manifest(o.data);
  }

  DetectorModel model = step1 ? DetectorModel(tc.model) : DetectorModel::load(model_dir);
  if (!step1 && to_json(model.config()) != to_json(tc.model)) {
    log(Level::info, "note: using the model configuration stored with the F-Branch checkpoint");
  }
  const ModelConfig& mc = model.config();
  const FragmentCache train = FragmentCache::build(data, data.split(Split::train), mc.fragment_size,
                                                   mc.rho_fraction, tc.jobs);
  const FragmentCache val = FragmentCache::build(data, data.split(Split::val), mc.fragment_size,
                                                 mc.rho_fraction, tc.jobs);
  std::string log_json = "{\n  \"lr_trace\": [";
  const std::vector<double> lrs = lr_trace(tc);
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%s%.17g", i ? ", " : "", lrs[i]);
    log_json += buf;
  }
  log_json += "]";
  if (step1) {
    const FBranchReport r = train_fbranch(model, train, val, tc, progress_logger());
    log_json += ",\n  \"fbranch\": {";
    for (Fragment f : kFragments) {
      log_json += std::string(index_of(f) ? ", " : "") + "\"" + std::string(fragment_key(f)) +
                  "\": " + epochs_json(r.epochs[index_of(f)]);
    }
    log_json += "}";
  }
  if (step2 && mc.use_sam) {
    const GBranchReport r = train_gbranch(model, train, val, tc, progress_logger());
    log_json += ",\n  \"gbranch\": " + epochs_json(r.epochs);
  }
  log_json += "\n}\n";
  model.save(model_dir);
  write_text(out / "train_log.json", log_json);
  std::cout << model_dir.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig rc = resolve(o);
  DetectorModel model = DetectorModel::load(o.model);
  const DatasetManifest data = load_manifest(o.data);
  const Split split = parse_split(o.split);
  const ModelConfig& mc = model.config();
  const FragmentCache samples = FragmentCache::build(data, data.split(split), mc.fragment_size,
                                                     mc.rho_fraction, rc.train.jobs);
  ReportMeta meta;
  meta.dataset_id = stable_hash(manifest_jsonl(data));
  meta.split = o.split;
  meta.variant = std::string(variant_name(mc.use_lam ? (mc.use_sam ? AttentionVariant::lams_sam
                                                                   : AttentionVariant::lams_only)
                                                     : (mc.use_sam ? AttentionVariant::sam_only
                                                                   : AttentionVariant::none)));
  meta.seed = mc.seed;
  meta.config_hash = stable_hash(to_json(mc));
  const EvalReport report = evaluate(model, samples, meta);
  write_report(o.out, report);
  char line[160];
  std::snprintf(line, sizeof line, "accuracy %.4f auc %.4f (%zu fake, %zu real)", report.accuracy,
                report.roc.auc, report.fake_count, report.real_count);
  log(Level::info, line);
  std::cout << (fs::path(o.out) / "report.json").string() << '\n';
  return 0;
}

int cmd_generalize(const Options& o) {
  const RunConfig rc = resolve(o);
  ExperimentRunner runner(o.out, rc.train.jobs, progress_logger());
  const ExperimentSummary s = run_generalization(runner, rc);
  log(Level::info, "\n" + s.csv());
  std::cout << (fs::path(o.out) / "generalization.json").string() << '\n';
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig rc = resolve(o);
  AblationPlan plan;
  if (rc.dataset.leave_out) plan.held_out = *rc.dataset.leave_out;
  ExperimentRunner runner(o.out, rc.train.jobs, progress_logger());
  const ExperimentSummary s = run_ablation(runner, rc, plan);
  log(Level::info, "\n" + s.csv());
  std::cout << (fs::path(o.out) / "ablation.json").string() << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  const std::vector<LayerCheck> checks = gradcheck_suite(seed);
  bool ok = true;
  std::string json = "{\"seed\": " + std::to_string(seed) + ", \"checks\": [";
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const LayerCheck& c = checks[i];
    const bool pass = c.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-34s %.3e %s\n", c.name.c_str(), c.max_rel_error, pass ? "ok" : "FAIL");
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s{\"name\": \"%s\", \"max_rel_error\": %.17g, \"worst\": \"%s\"}",
                  i ? ", " : "", c.name.c_str(), c.max_rel_error, c.worst.c_str());
    json += buf;
  }
  json += "]}\n";
  ensure_dir(o.out);
  write_text(fs::path(o.out) / "gradcheck.json", json);
  return ok ? 0 : 1;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  if (dynamic_cast<const StateError*>(&e)) return "state";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const GeometryError*>(&e)) return "geometry";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manipulated-face detection with multilevel facial segmentation and cascade attention"};
  app.require_subcommand(1);
  Options o;

  auto* generate = app.add_subcommand("generate", "Generate a synthetic face dataset");
  add_common(generate, o, "Dataset directory");
  add_leave_out(generate, o, "Family excluded from train/val/test; it forms the unseen-test split");

  auto* segment = app.add_subcommand("segment", "Segment one image into its six fragments");
  add_common(segment, o, "Directory for masks, fragments and heatmaps");
  segment->add_option("--image", o.image, "PNG image")->required()->check(CLI::ExistingFile);
  segment->add_option("--landmarks", o.landmarks, "81-point landmark file")->required()->check(CLI::ExistingFile);
  segment->add_option("--fragment-size", o.fragment_size, "Fragment side S in pixels (default 64)");
  segment->add_option("--format", o.format, "Fragment export format")->check(CLI::IsMember({"png", "raw"}));
  segment->add_option("--model", o.model, "Model directory; also exports LAM heatmaps")->check(CLI::ExistingDirectory);

  auto* train = app.add_subcommand("train", "Two-step training (F-Branch, then G-Branch)");
  add_common(train, o, "Run directory (model/, config.json, train_log.json)");
  add_model_flags(train, o);
  add_leave_out(train, o, "Family held out when the dataset is generated here");
  train->add_option("--data", o.data, "Dataset directory; generated under --out when omitted")
      ->check(CLI::ExistingDirectory);
  train->add_option("--step", o.step, "Training step to run")->check(CLI::IsMember({"1", "2", "both"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a trained model on one split");
  add_common(eval, o, "Report directory (report.json, report.csv, roc_points.csv)");
  eval->add_option("--model", o.model, "Model directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", o.split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test", "unseen-test"}));

  auto* generalize = app.add_subcommand("generalize", "Leave-one-family-out generalization suite");
  add_common(generalize, o, "Experiment directory");
  add_model_flags(generalize, o);

  auto* ablate = app.add_subcommand("ablate", "Fragment and attention-module ablation suite");
  add_common(ablate, o, "Experiment directory");
  add_model_flags(ablate, o);
  add_leave_out(ablate, o, "Held-out family for the unseen split (default global-warp)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every layer");
  add_common(gradcheck, o, "Directory for gradcheck.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*generate) return cmd_generate(o);
    if (*segment) return cmd_segment(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*generalize) return cmd_generalize(o);
    if (*ablate) return cmd_ablate(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const std::exception& e) {
    std::cerr << "error " << error_kind(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
