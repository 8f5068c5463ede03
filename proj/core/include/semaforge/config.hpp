#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "semaforge/backbone.hpp"

namespace semaforge {

struct ModelConfig {
  std::size_t fragment_size = 64;
  BackboneConfig backbone;
  std::vector<std::size_t> sam_widths = {1024, 256, 64, 1};
  bool use_lam = true;
  bool use_sam = true;
  // -log(sum p*w / sum w) when true, the literal -log(sum p*w) otherwise.
  bool normalize_sam_loss = true;
  double rho_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double momentum = 0.9;
  double decay_factor = 0.1;
  int decay_period = 5;
  int epochs = 15;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Worker threads for the per-fragment step-1 trainings and feature
  // extraction. Results do not depend on it.
  std::size_t jobs = 1;
  ModelConfig model;
};

// JSON keys mirror the field names; nested "model" and "model.backbone"
// objects. Parsing starts from `base` and overrides only the keys present;
// unknown keys are rejected (ParseError naming the key).
std::string to_json(const ModelConfig& config);
std::string to_json(const TrainConfig& config);
ModelConfig model_config_from_json(const std::string& text, const ModelConfig& base = {});
TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base = {});

// 16 hex digits of FNV-1a over the canonical JSON text.
std::string stable_hash(const std::string& text);

}  // namespace semaforge
