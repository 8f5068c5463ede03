#include "semaforge/config.hpp"

#include <cstdio>
#include <set>

#include "json_config.hpp"
#include "semaforge/errors.hpp"

namespace semaforge {

namespace detail {

using nlohmann::json;

json model_config_json(const ModelConfig& c) {
  return json{{"fragment_size", c.fragment_size},
              {"backbone", {{"stages", c.backbone.stages}, {"hidden", c.backbone.hidden}}},
              {"sam_widths", c.sam_widths},
              {"use_lam", c.use_lam},
              {"use_sam", c.use_sam},
              {"normalize_sam_loss", c.normalize_sam_loss},
              {"rho_fraction", c.rho_fraction},
              {"seed", c.seed}};
}

json train_config_json(const TrainConfig& c) {
  return json{{"lr0", c.lr0},
              {"momentum", c.momentum},
              {"decay_factor", c.decay_factor},
              {"decay_period", c.decay_period},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"jobs", c.jobs},
              {"model", model_config_json(c.model)}};
}


void apply_model_config(const json& j, ModelConfig& c, const std::string& where) {
  check_keys(j,
             {"fragment_size", "backbone", "sam_widths", "use_lam", "use_sam",
              "normalize_sam_loss", "rho_fraction", "seed"},
             where);
  read(j, "fragment_size", c.fragment_size, where);
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b, {"stages", "hidden"}, where + ".backbone");
    read(b, "stages", c.backbone.stages, where + ".backbone");
    read(b, "hidden", c.backbone.hidden, where + ".backbone");
  }
  read(j, "sam_widths", c.sam_widths, where);
  read(j, "use_lam", c.use_lam, where);
  read(j, "use_sam", c.use_sam, where);
  read(j, "normalize_sam_loss", c.normalize_sam_loss, where);
  read(j, "rho_fraction", c.rho_fraction, where);
  read(j, "seed", c.seed, where);
}

void apply_train_config(const json& j, TrainConfig& c, const std::string& where) {
  check_keys(j,
             {"lr0", "momentum", "decay_factor", "decay_period", "epochs", "batch_size", "seed",
              "jobs", "model"},
             where);
  read(j, "lr0", c.lr0, where);
  read(j, "momentum", c.momentum, where);
  read(j, "decay_factor", c.decay_factor, where);
  read(j, "decay_period", c.decay_period, where);
  read(j, "epochs", c.epochs, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "seed", c.seed, where);
  read(j, "jobs", c.jobs, where);
  if (j.contains("model")) apply_model_config(j.at("model"), c.model, where + ".model");
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

}  // namespace detail

std::string to_json(const ModelConfig& config) { return detail::model_config_json(config).dump(2); }
std::string to_json(const TrainConfig& config) { return detail::train_config_json(config).dump(2); }

ModelConfig model_config_from_json(const std::string& text, const ModelConfig& base) {
  ModelConfig c = base;
  detail::apply_model_config(detail::parse_json(text, "model config"), c, "model");
  return c;
}

TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  detail::apply_train_config(detail::parse_json(text, "train config"), c, "train");
  return c;
}

std::string stable_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace semaforge
