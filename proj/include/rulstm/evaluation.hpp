#pragma once

// Anticipation metrics: Top-k accuracy, mean Top-k recall, time to action and
// verb/noun marginalization, plus the composite report.
//
// Ranking ties are broken by the lower class id: class j outranks the ground
// truth c when score_j > score_c, or score_j == score_c and j < c.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace rulstm {

enum class Axis { verb, noun, action };
std::string axis_name(Axis axis);

struct ActionVocabulary {
  std::size_t n_verbs = 0;
  std::size_t n_nouns = 0;
  struct Entry {
    std::size_t verb;
    std::size_t noun;
  };
  std::vector<Entry> actions;  // indexed by action id
  std::vector<std::size_t> many_shot_verbs;
  std::vector<std::size_t> many_shot_nouns;
  std::vector<std::size_t> many_shot_actions;

  std::size_t n_actions() const { return actions.size(); }
  std::size_t n_classes(Axis axis) const;
  const std::vector<std::size_t>& many_shot(Axis axis) const;
  /// DataError when an action maps outside the verb/noun ranges or a
  /// many-shot id is not in its vocabulary.
  void validate() const;
};

nlohmann::json vocabulary_to_json(const ActionVocabulary& vocab);
ActionVocabulary vocabulary_from_json(const nlohmann::json& j);
void save_vocabulary(const std::filesystem::path& path, const ActionVocabulary& vocab);
ActionVocabulary load_vocabulary(const std::filesystem::path& path);

struct ScoreRow {
  std::string sample_id;
  std::size_t verb = 0;
  std::size_t noun = 0;
  std::size_t action = 0;
  std::vector<std::vector<double>> scores;  // [step][class]

  std::size_t label(Axis axis) const;
};

struct ScoreTable {
  /// Which label the scores rank.
  Axis axis = Axis::action;
  bool early_recognition = false;
  std::size_t n_classes = 0;
  std::vector<int> steps;             // time-step index of each column
  std::vector<double> step_times;     // tau_a, or observation rate for early recognition
  std::vector<ScoreRow> rows;

  std::size_t n_steps() const { return steps.size(); }
  /// Column whose time equals value within 1e-9; EvaluationError otherwise.
  std::size_t step_at_time(double value) const;
  /// EvaluationError unless every row shares the step grid with finite scores.
  void validate() const;
};

/// Rank of the target under the tie-break rule (0 = best).
std::size_t rank_of(std::span<const double> scores, std::size_t target);
bool in_top_k(std::span<const double> scores, std::size_t target, std::size_t k);

/// Percentage of rows whose label is among the k best classes at the column.
double top_k_accuracy(const ScoreTable& table, std::size_t k, std::size_t step);

/// Macro-averaged per-class Top-k recall (percentage) over the classes of
/// class_set that appear in the ground truth.
double mean_top_k_recall(const ScoreTable& table, std::size_t k, std::size_t step,
                         std::span<const std::size_t> class_set);

/// Largest tau_a of a column where the label is in the top k; 0 if never.
double time_to_action(const ScoreTable& table, const ScoreRow& row, std::size_t k);
double mean_tta(const ScoreTable& table, std::size_t k);

/// Softmax over action scores, summed per verb or noun.
std::vector<double> marginalize(std::span<const double> action_scores,
                                const ActionVocabulary& vocab, Axis axis);
/// Table of verb or noun probabilities derived row by row from an action table.
ScoreTable marginalize_table(const ScoreTable& table, const ActionVocabulary& vocab, Axis axis);

struct EvaluationConfig {
  std::size_t k = 5;
  double reference_tau_a = 1.0;
};

struct EvaluationReport {
  bool early_recognition = false;
  std::size_t k = 5;
  std::vector<double> step_times;
  std::vector<double> top_k_by_step;  // action Top-k per column
  std::vector<double> top1_by_step;   // action Top-1 per column
  // At the reference anticipation time; indexed verb, noun, action.
  double reference_tau_a = 1.0;
  double top_k_at_reference[3] = {0, 0, 0};
  double mean_recall_at_reference[3] = {0, 0, 0};
  double mean_tta_k[3] = {0, 0, 0};
  double mean_top1_over_steps = 0.0;

  nlohmann::json to_json() const;
  /// Aligned columns: accuracy per tau_a, then per-axis summaries.
  std::string to_text() const;
};

EvaluationReport evaluate(const ScoreTable& table, const ActionVocabulary& vocab,
                          const EvaluationConfig& cfg);

/// CSV with one line per (sample, column):
/// sample_id,step,tau_a,gt_verb,gt_noun,gt_action,score_0,...
/// For early-recognition tables the tau_a column carries the observation rate.
void save_score_table(const std::filesystem::path& path, const ScoreTable& table);
ScoreTable load_score_table(const std::filesystem::path& path, bool early_recognition);

}  // namespace rulstm
