#pragma once

// Run configuration shared by the command-line tools.
//
// File format: INI-style text with [sections] and key=value lines; '#' and
// ';' start comments. Values are applied in order: built-in defaults, then
// the config file, then command-line overrides ("section.key=value").
//
//   [paths] data_dir output_dir features_root train_annotations
//           val_annotations detections vocab checkpoint
//   [run]   task (anticipation|early_recognition) fusion (matt|late|early|
//           single:<m>) scp (on|off)
//   [model] hidden dropout alpha s_enc s_ant
//   [train] lr momentum batch_size epochs scp_epochs branch_epochs
//           joint_epochs seed (early stopping follows the task)
//   [eval]  k reference_tau_a
//   [data]  synthetic generator settings (see SynthConfig); modalities are
//           written as name:dim[:object] separated by commas

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulstm/evaluation.hpp"
#include "rulstm/features.hpp"
#include "rulstm/model.hpp"
#include "rulstm/sample.hpp"
#include "rulstm/synthetic.hpp"
#include "rulstm/training.hpp"

namespace rulstm {

struct RunConfig {
  RUModelConfig model;
  TrainConfig train;
  SynthConfig data;
  EvaluationConfig eval;
  Protocol task = Protocol::anticipation;
  Fusion fusion = Fusion::matt();

  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "out";
  // Empty entries are derived from data_dir / output_dir.
  std::filesystem::path features_root;
  std::filesystem::path train_annotations;
  std::filesystem::path val_annotations;
  std::filesystem::path detections;
  std::filesystem::path vocab;
  std::filesystem::path checkpoint;

  RunConfig();

  /// ConfigError on unreadable files, unknown keys or malformed values.
  static RunConfig from_file(const std::filesystem::path& path);
  void apply_file(const std::filesystem::path& path);
  void set(const std::string& section, const std::string& key, const std::string& value);
  /// "section.key=value"
  void apply_override(const std::string& assignment);

  std::filesystem::path features_path() const;
  std::filesystem::path train_annotations_path() const;
  std::filesystem::path val_annotations_path() const;
  std::filesystem::path detections_path() const;
  std::filesystem::path vocab_path() const;
  std::filesystem::path checkpoint_path() const;

  std::vector<std::string> modality_names() const;
  /// ConfigError naming the first missing input file.
  void require_inputs() const;
  /// Model config matching the data on disk; early recognition uses s_enc = 0.
  RUModelConfig model_config_for(const FeatureStore& store, const ActionVocabulary& vocab) const;
  EarlyStopMetric early_stop_metric() const;

  nlohmann::json to_json() const;
};

}  // namespace rulstm
