#pragma once

// Deterministic desk-scale multi-modal dataset with controllable modality
// informativeness.
//
// Every video is a sequence of action slots on the alpha grid. In the
// S_ant rows before an action starts, the informative modality carries the
// action's class prototype with an amplitude that grows linearly toward the
// start; the other modalities carry a prototype of a different (distractor)
// class scaled by distractor_scale, and their noise is multiplied by
// corruption_scale for the whole action slot. Inside the action segment the same
// pattern is held at full amplitude. Gaussian noise is added everywhere.
// Object modalities are emitted as detection records whose aggregation gives
// the feature rows.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulstm/evaluation.hpp"
#include "rulstm/features.hpp"

namespace rulstm {

struct SynthModality {
  std::string name;
  std::size_t dim = 0;
  bool object = false;  // detection-backed object-presence features
};

enum class InformativeSchedule { fixed, alternate, random };
std::string schedule_name(InformativeSchedule s);
InformativeSchedule parse_schedule(const std::string& text);

struct SynthConfig {
  std::size_t n_train_videos = 50;
  std::size_t n_val_videos = 20;
  std::size_t actions_per_video = 10;
  std::size_t n_actions = 20;
  std::size_t n_verbs = 5;
  std::size_t n_nouns = 8;
  std::vector<SynthModality> modalities{{"rgb", 16, false}, {"flow", 16, false}};
  InformativeSchedule schedule = InformativeSchedule::alternate;
  std::size_t fixed_modality = 0;
  double noise_sigma = 0.5;
  double signal_scale = 1.0;
  double distractor_scale = 0.0;  // non-informative modalities: noise only
  /// Noise multiplier for a modality in the slots where it is not informative.
  double corruption_scale = 1.0;
  double alpha = 0.25;
  int s_enc = 6;
  int s_ant = 8;
  double action_duration = 2.0;  // seconds, rounded to the grid
  std::uint64_t seed = 7;

  std::size_t n_object_classes() const;
  /// ConfigError on inconsistent sizes.
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthDataset {
  SynthConfig config;
  FeatureStore store;
  std::vector<DetectionRecord> detections;
  std::vector<ActionAnnotation> train;
  std::vector<ActionAnnotation> validation;
  /// Oracle: index of the informative modality per annotation.
  std::vector<std::size_t> train_informative;
  std::vector<std::size_t> validation_informative;
  ActionVocabulary vocab;

  nlohmann::json manifest() const;
};

SynthDataset generate(const SynthConfig& cfg);

/// Writes features/<modality>/<video>.ruft, annotations_{train,val}.csv,
/// detections.csv, vocab.json and manifest.json under dir.
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace rulstm
