#pragma once

// Rolling-unrolling recurrent architecture.
//
// Each modality owns a branch made of a rolling LSTM that encodes the observed
// feature sequence, an unrolling LSTM that starts from the rolling state and
// iterates n_t times to reach the action start, and a linear score head.
// Branch scores are fused with weights produced by a small attention network
// over the concatenated rolling states, or by the fixed late/early/single
// fusion alternatives used for ablations.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rulstm/autodiff.hpp"
#include "rulstm/sample.hpp"

namespace rulstm {

struct RUModelConfig {
  double alpha = 0.25;  // seconds per time-step
  int s_enc = 6;
  int s_ant = 8;
  std::size_t hidden = 1024;
  std::vector<std::size_t> modality_dims;
  std::vector<std::string> modality_names;
  std::size_t n_actions = 0;
  std::size_t n_verbs = 0;
  std::size_t n_nouns = 0;
  double dropout_p = 0.8;

  std::size_t n_modalities() const { return modality_dims.size(); }
  int total_steps() const { return s_enc + s_ant; }
  /// Length in seconds of the processed video segment.
  double observed_length() const { return alpha * total_steps(); }
  std::size_t concatenated_dim() const;
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Number of unrolling iterations at anticipation step t.
int unroll_count(int t, const RUModelConfig& cfg);

struct StepTimes {
  double observation;   // tau_o
  double anticipation;  // tau_a
};
StepTimes times(int t, const RUModelConfig& cfg);

/// Anticipation step whose tau_a equals the target; ParameterError when off-grid.
int step_for_anticipation_time(double tau_a, const RUModelConfig& cfg);

struct LstmParams {
  ad::Parameter w_input;   // [4H x D], gate blocks (i, f, g, o)
  ad::Parameter w_hidden;  // [4H x H]
  ad::Parameter bias;      // [4H]

  std::size_t hidden() const { return w_hidden.value().cols(); }
  std::size_t input_dim() const { return w_input.value().cols(); }
};

struct LstmState {
  ad::Tensor h;
  ad::Tensor c;

  static LstmState zeros(std::size_t rows, std::size_t hidden);
};

struct BranchParams {
  LstmParams r_lstm;
  LstmParams u_lstm;
  ad::Parameter head_w;  // [n_actions x H]
  ad::Parameter head_b;  // [n_actions]
};

/// Three fully connected layers (h -> h/4 -> h/8 -> M) with h = M * 2H.
struct MattParams {
  ad::Parameter fc1_w, fc1_b;
  ad::Parameter fc2_w, fc2_b;
  ad::Parameter fc3_w, fc3_b;
};

LstmParams make_lstm(std::size_t input_dim, std::size_t hidden, ad::Rng& rng);
BranchParams make_branch(std::size_t input_dim, std::size_t hidden, std::size_t n_actions,
                         ad::Rng& rng);
/// Hidden layers drawn uniformly, output layer zeroed so that training
/// starts from equal fusion weights.
MattParams make_matt(std::size_t n_modalities, std::size_t hidden, ad::Rng& rng);
MattParams zero_matt(std::size_t n_modalities, std::size_t hidden);

struct RUModel {
  RUModelConfig config;
  std::vector<BranchParams> branches;
  /// Single branch over the concatenated features, used by early fusion.
  BranchParams early;
  MattParams matt;
  /// Provenance: set once a branch has completed its per-branch stages.
  std::vector<bool> branch_trained;

  static RUModel create(const RUModelConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, ad::Parameter*>> named_parameters();
  std::vector<std::pair<std::string, const ad::Parameter*>> named_parameters() const;
};

enum class ForwardMode {
  anticipation,  // unrolling LSTM repeats the current input n_t times
  scp,           // unrolling LSTM consumes the true future inputs
  rolling_only,  // baseline: head applied directly to the rolling state
};

struct Fusion {
  enum class Kind { matt, late, early, single };
  Kind kind = Kind::matt;
  std::size_t modality = 0;

  static Fusion matt() { return {Kind::matt, 0}; }
  static Fusion late() { return {Kind::late, 0}; }
  static Fusion early() { return {Kind::early, 0}; }
  static Fusion single(std::size_t m) { return {Kind::single, m}; }
  /// Accepts "matt", "late", "early" and "single:<m>".
  static Fusion parse(const std::string& text);
  std::string name() const;
  bool operator==(const Fusion&) const = default;
};

std::string mode_name(ForwardMode mode);
ForwardMode parse_mode(const std::string& text);

/// Dropout settings shared by every call in one forward pass.
struct DropoutContext {
  double p = 0.0;
  bool training = false;
  ad::Rng* rng = nullptr;

  ad::Tensor apply(ad::Tape& tape, const ad::Tensor& x) const;
};

/// Rows of several samples stacked per time-step.
struct Batch {
  std::size_t size = 0;
  /// features[m][t - 1] is a [size x D_m] tensor.
  std::vector<std::vector<ad::Tensor>> features;
  std::vector<std::size_t> targets;
};

Batch make_batch(std::span<const Sample> samples);
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

/// Instrumentation hooks filled in by forward().
struct ForwardTrace {
  struct UnrollTap {
    std::size_t branch;  // modality index; n_modalities() for the early-fusion branch
    int step;
    std::vector<int> inputs;  // 1-based time-steps fed to the unrolling LSTM, in order
  };
  std::vector<UnrollTap> taps;
  std::size_t rolling_cells = 0;
  std::size_t unrolling_cells = 0;
};

struct StepOutputs {
  int step = 0;
  double tau_a = 0.0;
  double tau_o = 0.0;
  std::vector<ad::Tensor> modality_scores;  // each [B x n_actions]
  ad::Tensor weights;                       // [B x M'] fusion weights
  ad::Tensor fused;                         // [B x n_actions]
};

struct ForwardOptions {
  ForwardMode mode = ForwardMode::anticipation;
  Fusion fusion = Fusion::matt();
  bool training = false;
  ad::Rng* rng = nullptr;
  ForwardTrace* trace = nullptr;
  /// Restrict processing to the prefix ending at this anticipation step.
  std::optional<int> only_step;
};

/// One LSTM cell update: c' = s(f)*c + s(i)*tanh(g), h' = s(o)*tanh(c').
LstmState lstm_step(ad::Tape& tape, const LstmParams& params, const ad::Tensor& x,
                    const LstmState& state);

/// Rolling states for t = 1..len(features), starting from zeros.
std::vector<LstmState> rolling_encode(ad::Tape& tape, const BranchParams& branch,
                                      std::span<const ad::Tensor> features,
                                      const DropoutContext& dropout,
                                      ForwardTrace* trace = nullptr);

ad::Tensor apply_head(ad::Tape& tape, const BranchParams& branch, const ad::Tensor& h,
                      const DropoutContext& dropout);

/// Unrolls n_t times on the constant input and scores the last hidden state.
ad::Tensor unroll_anticipate(ad::Tape& tape, const BranchParams& branch, const ad::Tensor& input,
                             const LstmState& state, int n_t, const DropoutContext& dropout,
                             std::vector<ad::Tensor>* consumed = nullptr,
                             ForwardTrace* trace = nullptr);

/// Unrolls over the supplied future inputs (f_t, f_{t+1}, ...) in order.
ad::Tensor scp_unroll(ad::Tape& tape, const BranchParams& branch,
                      std::span<const ad::Tensor> future_inputs, const LstmState& state,
                      int n_t, const DropoutContext& dropout,
                      std::vector<ad::Tensor>* consumed = nullptr,
                      ForwardTrace* trace = nullptr);

/// Pre-softmax attention scores [B x M] from the rolling states of all branches.
ad::Tensor matt_scores(ad::Tape& tape, const MattParams& matt, std::span<const LstmState> states,
                       const DropoutContext& dropout);
ad::Tensor matt_weights(ad::Tape& tape, const MattParams& matt, std::span<const LstmState> states,
                        const DropoutContext& dropout);

/// Row-wise weighted sum of modality scores; weights are [B x M].
ad::Tensor fuse(ad::Tape& tape, std::span<const ad::Tensor> modality_scores,
                const ad::Tensor& weights);

std::vector<StepOutputs> forward(ad::Tape& tape, const RUModel& model, const Batch& batch,
                                 const ForwardOptions& options);

/// Fused scores [1 x n_actions] at the fixed anticipation time tau_a.
ad::Tensor predict_at(const RUModel& model, const Sample& sample, double tau_a,
                      Fusion fusion = Fusion::matt(),
                      ForwardMode mode = ForwardMode::anticipation);

/// Parameters that receive a gradient under the given wiring.
std::vector<ad::Parameter*> trainable_parameters(RUModel& model, ForwardMode mode,
                                                 const Fusion& fusion);

}  // namespace rulstm
