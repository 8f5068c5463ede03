#include "semaforge/branches.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json_config.hpp"
#include "semaforge/checkpoint.hpp"
#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

std::vector<Fragment> all_fragments() { return {kFragments.begin(), kFragments.end()}; }

Rng stream_rng(std::uint64_t seed, std::uint32_t stream, Fragment f) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream, static_cast<std::uint32_t>(index_of(f))};
  return Rng(seq);
}

constexpr std::uint32_t kFBranchStream = 1;
constexpr std::uint32_t kSamStream = 2;

}  // namespace

PossibilityMatrix::PossibilityMatrix() : order(all_fragments()) {
  rows[0].assign(kFragmentCount, 0.0);
  rows[1].assign(kFragmentCount, 0.0);
}

WeightMatrix::WeightMatrix() : order(all_fragments()), values(kFragmentCount, 1.0) {}

WeightMatrix WeightMatrix::uniform(double value) {
  WeightMatrix w;
  w.values.assign(kFragmentCount, value);
  return w;
}

int fragment_predict(double p_fake, double p_real) { return p_real > p_fake ? kReal : kFake; }

int argmax_label(const std::array<double, 2>& scores) {
  return fragment_predict(scores[0], scores[1]);
}

Fusion fuse(const PossibilityMatrix& p, const WeightMatrix& w) {
  if (p.order != w.order) {
    throw ContractError("fuse: possibility and weight matrices use different fragment orders");
  }
  const std::size_t k = p.columns();
  if (p.rows[0].size() != k || p.rows[1].size() != k || w.values.size() != k) {
    throw DimensionError("fuse: matrix sizes do not match the fragment order");
  }
  std::vector<double> pv(p.rows[0]);
  pv.insert(pv.end(), p.rows[1].begin(), p.rows[1].end());
  const Tensor scores = matmul(Tensor({2, k}, std::move(pv)), Tensor({k, 1}, w.values));
  Fusion out;
  out.scores = {scores.at(0), scores.at(1)};
  out.label = argmax_label(out.scores);
  return out;
}

PossibilityMatrix drop_fragment(const PossibilityMatrix& p, Fragment f) {
  PossibilityMatrix out = p;
  out.order.clear();
  out.rows[0].clear();
  out.rows[1].clear();
  for (std::size_t i = 0; i < p.columns(); ++i) {
    if (p.order[i] == f) continue;
    out.order.push_back(p.order[i]);
    out.rows[0].push_back(p.rows[0][i]);
    out.rows[1].push_back(p.rows[1][i]);
  }
  return out;
}

WeightMatrix drop_fragment(const WeightMatrix& w, Fragment f) {
  WeightMatrix out;
  out.order.clear();
  out.values.clear();
  for (std::size_t i = 0; i < w.columns(); ++i) {
    if (w.order[i] == f) continue;
    out.order.push_back(w.order[i]);
    out.values.push_back(w.values[i]);
  }
  return out;
}

namespace {

void check_label(int y, const char* who) {
  if (y != kFake && y != kReal) {
    throw ContractError(std::string(who) + ": label must be 0 (fake) or 1 (real), got " +
                        std::to_string(y));
  }
}

}  // namespace

double loss_lam(const std::array<double, 2>& p, int y) {
  check_label(y, "loss_lam");
  return -std::log(std::max(p[static_cast<std::size_t>(y)], kLogFloor));
}

double loss_sam(const PossibilityMatrix& p, const WeightMatrix& w, int y, bool normalize) {
  check_label(y, "loss_sam");
  if (p.order != w.order) throw ContractError("loss_sam: fragment orders differ");
  double mass = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.columns(); ++i) {
    mass += p.at(y, i) * w.values[i];
    total += w.values[i];
  }
  if (total == 0.0) throw ContractError("loss_sam: all fragment weights are zero");
  const double arg = normalize ? mass / total : mass;
  return -std::log(std::max(arg, kLogFloor));
}

Tensor loss_sam(const Tensor& p_true, const Tensor& w, bool normalize) {
  if (p_true.rank() != 2 || p_true.shape() != w.shape()) {
    throw DimensionError("loss_sam: expected matching N x k tensors, got " +
                         shape_str(p_true.shape()) + " and " + shape_str(w.shape()));
  }
  Tensor mass = row_sum(mul(p_true, w));
  if (normalize) {
    for (std::size_t n = 0; n < w.dim(0); ++n) {
      double total = 0.0;
      for (std::size_t i = 0; i < w.dim(1); ++i) total += w.at(n * w.dim(1) + i);
      if (total == 0.0) throw ContractError("loss_sam: all fragment weights are zero");
    }
    mass = div(mass, row_sum(w));
  }
  return neg(mean(log_clamped(mass, kLogFloor)));
}

// --- model -------------------------------------------------------------------

FragmentClassifier::FragmentClassifier(const ModelConfig& config, Rng& rng)
    : use_lam_(config.use_lam) {
  // The LAM is always drawn so that toggling it does not reseed the backbone.
  lam_ = Lam(rng);
  backbone_ = Backbone(config.backbone, config.fragment_size, rng);
}

FragmentClassifier::Output FragmentClassifier::forward(const Tensor& x, Mode mode) {
  Output out;
  if (use_lam_) {
    Lam::Output a = lam_.forward(x, mode);
    out.x_att = a.x_att;
    out.h_att = a.h_att;
  } else {
    out.x_att = x;
  }
  out.logits = backbone_.forward(out.x_att, mode);
  return out;
}

StateDict FragmentClassifier::state() const {
  StateDict s;
  if (use_lam_) lam_.export_state(s, "lam");
  backbone_.export_state(s, "backbone");
  return s;
}

DetectorModel::DetectorModel(const ModelConfig& config) : config_(config) {
  if (config.fragment_size < kSamPool) {
    throw ContractError("DetectorModel: fragment size " + std::to_string(config.fragment_size) +
                        " is below the 32x32 SAM pooling size");
  }
  for (Fragment f : kFragments) {
    Rng frng = stream_rng(config.seed, kFBranchStream, f);
    classifiers_[index_of(f)] = FragmentClassifier(config, frng);
    Rng srng = stream_rng(config.seed, kSamStream, f);
    sams_[index_of(f)] = Sam(srng, config.sam_widths);
  }
}

StateDict DetectorModel::sam_state(Fragment f) const {
  StateDict s;
  sams_[index_of(f)].export_state(s, "sam");
  return s;
}

std::string DetectorModel::fbranch_bytes() const {
  std::string out;
  for (Fragment f : kFragments) out += serialize_tensors(fbranch_state(f).all());
  return out;
}

std::string DetectorModel::sam_bytes() const {
  std::string out;
  for (Fragment f : kFragments) out += serialize_tensors(sam_state(f).all());
  return out;
}

namespace {

using nlohmann::json;

json record_json(const TrainingRecord& r) {
  return json{{"fbranch_epochs", r.fbranch_epochs},
              {"gbranch_epochs", r.gbranch_epochs},
              {"fbranch_trained", r.fbranch_trained},
              {"gbranch_trained", r.gbranch_trained},
              {"fbranch_best_epoch", r.fbranch_best_epoch},
              {"fbranch_val_accuracy", r.fbranch_val_accuracy},
              {"gbranch_best_epoch", r.gbranch_best_epoch},
              {"gbranch_val_accuracy", r.gbranch_val_accuracy}};
}

TrainingRecord record_from_json(const json& j) {
  TrainingRecord r;
  r.fbranch_epochs = j.at("fbranch_epochs").get<int>();
  r.gbranch_epochs = j.at("gbranch_epochs").get<int>();
  r.fbranch_trained = j.at("fbranch_trained").get<bool>();
  r.gbranch_trained = j.at("gbranch_trained").get<bool>();
  r.fbranch_best_epoch = j.at("fbranch_best_epoch").get<std::array<int, kFragmentCount>>();
  r.fbranch_val_accuracy = j.at("fbranch_val_accuracy").get<std::array<double, kFragmentCount>>();
  r.gbranch_best_epoch = j.at("gbranch_best_epoch").get<int>();
  r.gbranch_val_accuracy = j.at("gbranch_val_accuracy").get<double>();
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fbranch_file(Fragment f) { return "fbranch_" + std::string(fragment_key(f)) + ".sfck"; }
std::string sam_file(Fragment f) { return "sam_" + std::string(fragment_key(f)) + ".sfck"; }

}  // namespace

void DetectorModel::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const json model = detail::model_config_json(config_);
  json files = json::object();
  for (Fragment f : kFragments) {
    const std::string key(fragment_key(f));
    const std::pair<std::string, StateDict> parts[] = {{fbranch_file(f), fbranch_state(f)},
                                                       {sam_file(f), sam_state(f)}};
    for (const auto& [name, state] : parts) {
      save_checkpoint(dir / name, state.all());
      json sidecar{{"format", "semaforge-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"network", name.substr(0, name.find('_'))},
                   {"fragment", key},
                   {"hyperparameters", model}};
      write_text(dir / (name + ".json"), sidecar.dump(2) + "\n");
    }
    files[key] = {fbranch_file(f), sam_file(f)};
  }
  json manifest{{"format", "semaforge-model"},
                {"version", 1},
                {"fragments", {"p", "b", "f", "e", "m", "n"}},
                {"seed", config_.seed},
                {"config", model},
                {"files", files},
                {"record", record_json(record_)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DetectorModel DetectorModel::load(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.json";
  const json manifest = detail::parse_json(read_text(manifest_path), manifest_path.string());
  try {
    if (manifest.at("format") != "semaforge-model") {
      throw FormatError(manifest_path.string() + ": not a model manifest");
    }
    const auto keys = manifest.at("fragments").get<std::vector<std::string>>();
    if (keys != std::vector<std::string>{"p", "b", "f", "e", "m", "n"}) {
      throw FormatError(manifest_path.string() + ": fragment keys must be [p, b, f, e, m, n]");
    }
    ModelConfig config;
    detail::apply_model_config(manifest.at("config"), config, "manifest.config");
    DetectorModel model(config);
    for (Fragment f : kFragments) {
      load_checkpoint(dir / fbranch_file(f), model.fbranch_state(f).all());
      load_checkpoint(dir / sam_file(f), model.sam_state(f).all());
    }
    model.record_ = record_from_json(manifest.at("record"));
    return model;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

// --- inference ---------------------------------------------------------------

Tensor to_tensor(const Image& image) {
  return Tensor({image.height, image.width, image.channels}, image.data);
}

FBranchOutput fbranch_forward(const FragmentSet& fragments, DetectorModel& model) {
  NoGradGuard no_grad;
  FBranchOutput out;
  const std::size_t s = model.config().fragment_size;
  for (Fragment f : kFragments) {
    const Image& crop = fragments[f];
    if (crop.empty()) {
      throw ContractError("fbranch_forward: missing fragment '" + std::string(fragment_name(f)) + "'");
    }
    if (crop.height != s || crop.width != s || crop.channels != 3) {
      throw DimensionError("fbranch_forward: fragment '" + std::string(fragment_name(f)) +
                           "' is " + std::to_string(crop.height) + "x" +
                           std::to_string(crop.width) + "x" + std::to_string(crop.channels) +
                           ", model expects " + std::to_string(s) + "x" + std::to_string(s) +
                           "x3");
    }
    FragmentClassifier::Output o = model.classifier(f).forward(to_tensor(crop), Mode::eval);
    const Tensor probs = softmax(o.logits);
    out.p.rows[0][index_of(f)] = probs.at(0);
    out.p.rows[1][index_of(f)] = probs.at(1);
    out.x_att[index_of(f)] = o.x_att;
  }
  return out;
}

GBranchOutput gbranch_forward(const FBranchOutput& f, DetectorModel& model) {
  NoGradGuard no_grad;
  GBranchOutput out;
  if (model.config().use_sam) {
    for (Fragment fr : kFragments) {
      out.w.values[index_of(fr)] = model.sam(fr).forward(f.x_att[index_of(fr)], Mode::eval).item();
    }
  } else {
    out.w = WeightMatrix::uniform(1.0);
  }
  out.fusion = fuse(f.p, out.w);
  return out;
}

Prediction predict(const FragmentSet& fragments, DetectorModel& model) {
  const FBranchOutput f = fbranch_forward(fragments, model);
  const GBranchOutput g = gbranch_forward(f, model);
  Prediction out;
  out.label = g.fusion.label;
  out.scores = g.fusion.scores;
  out.p = f.p;
  out.w = g.w;
  for (std::size_t i = 0; i < kFragmentCount; ++i) {
    out.fragment_labels[i] = fragment_predict(f.p.rows[0][i], f.p.rows[1][i]);
  }
  return out;
}

Prediction predict(const Image& image, const LandmarkSet& landmarks, DetectorModel& model) {
  return predict(segment(image, landmarks, model.config().fragment_size, model.config().rho_fraction),
                 model);
}

}  // namespace semaforge
