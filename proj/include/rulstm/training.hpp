#pragma once

// Staged optimisation: sequence-completion pre-training per branch,
// anticipation fine-tuning per branch, then joint fine-tuning of all branches
// with the attention fusion. Every stage runs SGD with momentum, evaluates on
// the validation split after each epoch and restores the best epoch.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulstm/evaluation.hpp"
#include "rulstm/model.hpp"
#include "rulstm/sample.hpp"

namespace rulstm {

enum class EarlyStopMetric {
  top5_action_at_1s,     // anticipation
  mean_top1_over_rates,  // early recognition
};
std::string early_stop_metric_name(EarlyStopMetric metric);
EarlyStopMetric parse_early_stop_metric(const std::string& text);

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// Per-modality epochs; missing entries fall back to default_epochs.
  std::vector<int> scp_epochs;
  std::vector<int> branch_epochs;
  int default_epochs = 100;
  int joint_epochs = 100;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::top5_action_at_1s;
  std::uint64_t seed = 0;
  bool use_scp = true;
  /// Joint training refuses branches that skipped their per-branch stages.
  bool require_pretrained = true;

  int scp_epochs_for(std::size_t m) const;
  int branch_epochs_for(std::size_t m) const;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double val_loss = 0.0;
};

struct TrainReport {
  std::string stage;
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;  // 1-based
  double best_metric = 0.0;
  double wall_clock_s = 0.0;  // logged, never serialized

  nlohmann::json to_json() const;
};

/// Validation metric hook; the default evaluates the model on the split.
using MetricFn = std::function<double(const RUModel& model, int epoch)>;

struct StageSpec {
  std::string name;
  ForwardMode mode = ForwardMode::anticipation;
  Fusion fusion = Fusion::matt();
  int epochs = 1;
  MetricFn metric;
};

/// Mean over steps of the cross-entropy of the fused scores.
ad::Tensor loss_anticipation(ad::Tape& tape, std::span<const StepOutputs> steps,
                             std::span<const std::size_t> targets);

struct InferenceResult {
  ScoreTable table;
  /// weights[sample][column][branch]
  std::vector<std::vector<std::vector<double>>> weights;
};

/// Batched evaluation-mode forward over the samples.
InferenceResult run_inference(const RUModel& model, std::span<const Sample> samples,
                              ForwardMode mode, const Fusion& fusion,
                              std::size_t batch_size = 64);

double validation_metric(const ScoreTable& table, EarlyStopMetric metric);

TrainReport train_stage(RUModel& model, std::span<const Sample> train,
                        std::span<const Sample> validation, const StageSpec& spec,
                        const TrainConfig& cfg, ad::Rng& rng);

TrainReport train_scp(RUModel& model, std::size_t modality, std::span<const Sample> train,
                      std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng);
TrainReport train_branch(RUModel& model, std::size_t modality, std::span<const Sample> train,
                         std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng);
TrainReport train_joint(RUModel& model, std::span<const Sample> train,
                        std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng);

struct PipelineResult {
  RUModel model;
  std::vector<TrainReport> reports;

  nlohmann::json reports_json() const;
};

/// Runs the stages required by the fusion scheme in order: per-branch
/// (SCP, anticipation) stages, then the joint stage for attention fusion.
PipelineResult run_pipeline(const RUModelConfig& model_cfg, const TrainConfig& cfg,
                            const Fusion& fusion, std::span<const Sample> train,
                            std::span<const Sample> validation,
                            ForwardMode mode = ForwardMode::anticipation);

}  // namespace rulstm
