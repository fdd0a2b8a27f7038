#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsconv/data.hpp"
#include "tsconv/model.hpp"

namespace tsconv {

enum class AssignerKind { kDtla, kStatic };
enum class Augment { kNone, kFlipRot90, kRotate };

// Flat key=value run configuration. Every key has a validated range and
// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data = "synth";  // "synth" or a dataset directory
  int train_scenes = 16;
  std::uint64_t val_seed = 1000003;
  int val_scenes = 0;
  data::SynthSpec synth;
  std::vector<std::string> classes{"solid", "striped", "dotted"};
  ModelConfig model;
  AssignerKind assigner = AssignerKind::kDtla;
  long iterations = 2000;
  int batch = 4;
  double lr = 5e-4;
  double lr_min = 1e-6;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 10.0;  // global norm, 0 disables
  double threshold = 0.3;   // T
  double theta = 0.3;
  double gamma = 2.0;
  double nms = 0.4;
  double conf = 0.05;
  long eval_every = 0;
  long checkpoint_every = 0;
  Augment augment = Augment::kNone;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  void validate() const;  // throws ConfigError
};

}  // namespace tsconv
