#include "rulstm/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rulstm/errors.hpp"

namespace rulstm {

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, double bound, ad::Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> values(n);
  for (double& v : values) v = (2.0 * ad::uniform01(rng) - 1.0) * bound;
  return ad::Tensor(std::move(shape), std::move(values));
}

void add_lstm(std::vector<std::pair<std::string, ad::Parameter*>>& out, const std::string& prefix,
              LstmParams& p) {
  out.emplace_back(prefix + ".w_input", &p.w_input);
  out.emplace_back(prefix + ".w_hidden", &p.w_hidden);
  out.emplace_back(prefix + ".bias", &p.bias);
}

void add_branch(std::vector<std::pair<std::string, ad::Parameter*>>& out, const std::string& prefix,
                BranchParams& b) {
  add_lstm(out, prefix + ".r_lstm", b.r_lstm);
  add_lstm(out, prefix + ".u_lstm", b.u_lstm);
  out.emplace_back(prefix + ".head_w", &b.head_w);
  out.emplace_back(prefix + ".head_b", &b.head_b);
}

void append_branch_params(std::vector<ad::Parameter*>& out, BranchParams& b, ForwardMode mode) {
  for (auto* p : {&b.r_lstm.w_input, &b.r_lstm.w_hidden, &b.r_lstm.bias}) out.push_back(p);
  if (mode != ForwardMode::rolling_only) {
    for (auto* p : {&b.u_lstm.w_input, &b.u_lstm.w_hidden, &b.u_lstm.bias}) out.push_back(p);
  }
  out.push_back(&b.head_w);
  out.push_back(&b.head_b);
}

ad::Tensor linear(ad::Tape& tape, const ad::Tensor& x, const ad::Parameter& w,
                  const ad::Parameter& b) {
  return tape.add_bias(tape.matmul_transposed(x, w.value()), b.value());
}

std::string format_seconds(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and timing

std::size_t RUModelConfig::concatenated_dim() const {
  std::size_t total = 0;
  for (auto d : modality_dims) total += d;
  return total;
}

void RUModelConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (s_ant < 1) throw ConfigError("s_ant must be >= 1");
  if (s_enc < 0) throw ConfigError("s_enc must be >= 0");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (modality_dims.empty()) throw ConfigError("at least one modality is required");
  if (!modality_names.empty() && modality_names.size() != modality_dims.size()) {
    throw ConfigError("modality_names and modality_dims differ in length");
  }
  for (auto d : modality_dims) {
    if (d < 1) throw ConfigError("modality dimensions must be >= 1");
  }
  if (n_actions < 1) throw ConfigError("n_actions must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
}

int unroll_count(int t, const RUModelConfig& cfg) {
  if (t < cfg.s_enc + 1 || t > cfg.total_steps()) {
    throw RangeError("time-step " + std::to_string(t) + " is outside the anticipation stage [" +
                     std::to_string(cfg.s_enc + 1) + ", " + std::to_string(cfg.total_steps()) + "]");
  }
  return cfg.s_ant + cfg.s_enc - t + 1;
}

StepTimes times(int t, const RUModelConfig& cfg) {
  if (t < 1 || t > cfg.total_steps()) {
    throw RangeError("time-step " + std::to_string(t) + " outside [1, " +
                     std::to_string(cfg.total_steps()) + "]");
  }
  return {cfg.alpha * t, cfg.alpha * (cfg.s_ant + cfg.s_enc + 1 - t)};
}

int step_for_anticipation_time(double tau_a, const RUModelConfig& cfg) {
  const double k = std::round(tau_a / cfg.alpha);
  if (k >= 1 && k <= cfg.s_ant && std::abs(cfg.alpha * k - tau_a) < 1e-9) {
    return cfg.total_steps() + 1 - static_cast<int>(k);
  }
  std::string valid;
  for (int i = cfg.s_ant; i >= 1; --i) {
    if (!valid.empty()) valid += ", ";
    valid += format_seconds(cfg.alpha * i);
  }
  throw ParameterError("anticipation time " + format_seconds(tau_a) +
                       "s is not on the step grid; valid values: {" + valid + "}");
}

// ---------------------------------------------------------------------------
// Parameters

LstmState LstmState::zeros(std::size_t rows, std::size_t hidden) {
  return {ad::Tensor::zeros({rows, hidden}), ad::Tensor::zeros({rows, hidden})};
}

LstmParams make_lstm(std::size_t input_dim, std::size_t hidden, ad::Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmParams p;
  p.w_input = ad::Parameter(uniform_tensor({4 * hidden, input_dim}, bound, rng));
  p.w_hidden = ad::Parameter(uniform_tensor({4 * hidden, hidden}, bound, rng));
  std::vector<double> bias(4 * hidden, 0.0);
  std::fill(bias.begin() + hidden, bias.begin() + 2 * hidden, 1.0);
  p.bias = ad::Parameter(ad::Tensor::vector(std::move(bias)));
  return p;
}

BranchParams make_branch(std::size_t input_dim, std::size_t hidden, std::size_t n_actions,
                         ad::Rng& rng) {
  BranchParams b;
  b.r_lstm = make_lstm(input_dim, hidden, rng);
  b.u_lstm = make_lstm(input_dim, hidden, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  b.head_w = ad::Parameter(uniform_tensor({n_actions, hidden}, bound, rng));
  b.head_b = ad::Parameter(ad::Tensor::zeros({n_actions}));
  return b;
}

namespace {
struct MattSizes {
  std::size_t in, l1, l2, out;
};
MattSizes matt_sizes(std::size_t n_modalities, std::size_t hidden) {
  const std::size_t h = n_modalities * 2 * hidden;
  return {h, std::max<std::size_t>(1, h / 4), std::max<std::size_t>(1, h / 8), n_modalities};
}
}  // namespace

MattParams make_matt(std::size_t n_modalities, std::size_t hidden, ad::Rng& rng) {
  const auto s = matt_sizes(n_modalities, hidden);
  MattParams m;
  m.fc1_w = ad::Parameter(uniform_tensor({s.l1, s.in}, 1.0 / std::sqrt(double(s.in)), rng));
  m.fc1_b = ad::Parameter(ad::Tensor::zeros({s.l1}));
  m.fc2_w = ad::Parameter(uniform_tensor({s.l2, s.l1}, 1.0 / std::sqrt(double(s.l1)), rng));
  m.fc2_b = ad::Parameter(ad::Tensor::zeros({s.l2}));
  m.fc3_w = ad::Parameter(ad::Tensor::zeros({s.out, s.l2}));
  m.fc3_b = ad::Parameter(ad::Tensor::zeros({s.out}));
  return m;
}

MattParams zero_matt(std::size_t n_modalities, std::size_t hidden) {
  const auto s = matt_sizes(n_modalities, hidden);
  MattParams m;
  m.fc1_w = ad::Parameter(ad::Tensor::zeros({s.l1, s.in}));
  m.fc1_b = ad::Parameter(ad::Tensor::zeros({s.l1}));
  m.fc2_w = ad::Parameter(ad::Tensor::zeros({s.l2, s.l1}));
  m.fc2_b = ad::Parameter(ad::Tensor::zeros({s.l2}));
  m.fc3_w = ad::Parameter(ad::Tensor::zeros({s.out, s.l2}));
  m.fc3_b = ad::Parameter(ad::Tensor::zeros({s.out}));
  return m;
}

RUModel RUModel::create(const RUModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ad::Rng rng(seed);
  RUModel model;
  model.config = cfg;
  for (auto d : cfg.modality_dims) {
    model.branches.push_back(make_branch(d, cfg.hidden, cfg.n_actions, rng));
  }
  model.early = make_branch(cfg.concatenated_dim(), cfg.hidden, cfg.n_actions, rng);
  model.matt = make_matt(cfg.n_modalities(), cfg.hidden, rng);
  model.branch_trained.assign(cfg.n_modalities(), false);
  return model;
}

std::vector<std::pair<std::string, ad::Parameter*>> RUModel::named_parameters() {
  std::vector<std::pair<std::string, ad::Parameter*>> out;
  for (std::size_t m = 0; m < branches.size(); ++m) {
    add_branch(out, "branch" + std::to_string(m), branches[m]);
  }
  add_branch(out, "early", early);
  out.emplace_back("matt.fc1_w", &matt.fc1_w);
  out.emplace_back("matt.fc1_b", &matt.fc1_b);
  out.emplace_back("matt.fc2_w", &matt.fc2_w);
  out.emplace_back("matt.fc2_b", &matt.fc2_b);
  out.emplace_back("matt.fc3_w", &matt.fc3_w);
  out.emplace_back("matt.fc3_b", &matt.fc3_b);
  return out;
}

std::vector<std::pair<std::string, const ad::Parameter*>> RUModel::named_parameters() const {
  auto mut = const_cast<RUModel*>(this)->named_parameters();
  return {mut.begin(), mut.end()};
}

std::vector<ad::Parameter*> trainable_parameters(RUModel& model, ForwardMode mode,
                                                 const Fusion& fusion) {
  std::vector<ad::Parameter*> out;
  switch (fusion.kind) {
    case Fusion::Kind::single:
      if (fusion.modality >= model.branches.size()) {
        throw ContractError("single-branch fusion on missing modality " +
                            std::to_string(fusion.modality));
      }
      append_branch_params(out, model.branches[fusion.modality], mode);
      break;
    case Fusion::Kind::early:
      append_branch_params(out, model.early, mode);
      break;
    case Fusion::Kind::late:
    case Fusion::Kind::matt:
      for (auto& b : model.branches) append_branch_params(out, b, mode);
      if (fusion.kind == Fusion::Kind::matt && mode != ForwardMode::scp) {
        auto& m = model.matt;
        for (auto* p : {&m.fc1_w, &m.fc1_b, &m.fc2_w, &m.fc2_b, &m.fc3_w, &m.fc3_b}) out.push_back(p);
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion / mode names

Fusion Fusion::parse(const std::string& text) {
  if (text == "matt") return matt();
  if (text == "late") return late();
  if (text == "early") return early();
  if (text.rfind("single:", 0) == 0) {
    const std::string idx = text.substr(7);
    if (!idx.empty() && std::all_of(idx.begin(), idx.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return single(std::stoul(idx));
    }
  }
  throw ConfigError("unknown fusion '" + text + "' (expected matt, late, early or single:<m>)");
}

std::string Fusion::name() const {
  switch (kind) {
    case Kind::matt: return "matt";
    case Kind::late: return "late";
    case Kind::early: return "early";
    case Kind::single: return "single:" + std::to_string(modality);
  }
  return "?";
}

std::string mode_name(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::anticipation: return "anticipation";
    case ForwardMode::scp: return "scp";
    case ForwardMode::rolling_only: return "rolling_only";
  }
  return "?";
}

ForwardMode parse_mode(const std::string& text) {
  if (text == "anticipation") return ForwardMode::anticipation;
  if (text == "scp") return ForwardMode::scp;
  if (text == "rolling_only") return ForwardMode::rolling_only;
  throw ConfigError("unknown forward mode '" + text + "'");
}

// ---------------------------------------------------------------------------
// Building blocks

ad::Tensor DropoutContext::apply(ad::Tape& tape, const ad::Tensor& x) const {
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("training-mode dropout requires a generator");
  return tape.dropout(x, p, training, *rng);
}

LstmState lstm_step(ad::Tape& tape, const LstmParams& params, const ad::Tensor& x,
                    const LstmState& state) {
  const std::size_t hidden = params.hidden();
  if (x.cols() != params.input_dim()) {
    throw DimensionError("lstm_step: input " + ad::shape_string(x.shape()) +
                         " does not match input weights " +
                         ad::shape_string(params.w_input.value().shape()));
  }
  if (state.h.cols() != hidden || state.c.cols() != hidden || state.h.rows() != x.rows() ||
      state.c.rows() != x.rows()) {
    throw DimensionError("lstm_step: state " + ad::shape_string(state.h.shape()) + "/" +
                         ad::shape_string(state.c.shape()) + " incompatible with input " +
                         ad::shape_string(x.shape()) + " and hidden size " + std::to_string(hidden));
  }
  const ad::Tensor gates = tape.add_bias(
      tape.add(tape.matmul_transposed(x, params.w_input.value()),
               tape.matmul_transposed(state.h, params.w_hidden.value())),
      params.bias.value());
  const ad::Tensor in_gate = tape.sigmoid(tape.slice_cols(gates, 0, hidden));
  const ad::Tensor forget_gate = tape.sigmoid(tape.slice_cols(gates, hidden, hidden));
  const ad::Tensor candidate = tape.tanh(tape.slice_cols(gates, 2 * hidden, hidden));
  const ad::Tensor out_gate = tape.sigmoid(tape.slice_cols(gates, 3 * hidden, hidden));
  ad::Tensor c = tape.add(tape.mul(forget_gate, state.c), tape.mul(in_gate, candidate));
  ad::Tensor h = tape.mul(out_gate, tape.tanh(c));
  return {std::move(h), std::move(c)};
}

std::vector<LstmState> rolling_encode(ad::Tape& tape, const BranchParams& branch,
                                      std::span<const ad::Tensor> features,
                                      const DropoutContext& dropout, ForwardTrace* trace) {
  std::vector<LstmState> states;
  if (features.empty()) return states;
  states.reserve(features.size());
  LstmState state = LstmState::zeros(features[0].rows(), branch.r_lstm.hidden());
  for (const auto& f : features) {
    state = lstm_step(tape, branch.r_lstm, dropout.apply(tape, f), state);
    if (trace) ++trace->rolling_cells;
    states.push_back(state);
  }
  return states;
}

ad::Tensor apply_head(ad::Tape& tape, const BranchParams& branch, const ad::Tensor& h,
                      const DropoutContext& dropout) {
  return linear(tape, dropout.apply(tape, h), branch.head_w, branch.head_b);
}

namespace {

ad::Tensor run_unroll(ad::Tape& tape, const BranchParams& branch,
                      std::span<const ad::Tensor* const> inputs, const LstmState& start,
                      const DropoutContext& dropout, std::vector<ad::Tensor>* consumed,
                      ForwardTrace* trace) {
  LstmState state = start;
  for (const ad::Tensor* in : inputs) {
    if (consumed) consumed->push_back(*in);
    state = lstm_step(tape, branch.u_lstm, dropout.apply(tape, *in), state);
    if (trace) ++trace->unrolling_cells;
  }
  return apply_head(tape, branch, state.h, dropout);
}

}  // namespace

ad::Tensor unroll_anticipate(ad::Tape& tape, const BranchParams& branch, const ad::Tensor& input,
                             const LstmState& state, int n_t, const DropoutContext& dropout,
                             std::vector<ad::Tensor>* consumed, ForwardTrace* trace) {
  if (n_t < 1) throw RangeError("unroll count must be >= 1, got " + std::to_string(n_t));
  std::vector<const ad::Tensor*> inputs(static_cast<std::size_t>(n_t), &input);
  return run_unroll(tape, branch, inputs, state, dropout, consumed, trace);
}

ad::Tensor scp_unroll(ad::Tape& tape, const BranchParams& branch,
                      std::span<const ad::Tensor> future_inputs, const LstmState& state, int n_t,
                      const DropoutContext& dropout, std::vector<ad::Tensor>* consumed,
                      ForwardTrace* trace) {
  if (n_t < 1) throw RangeError("unroll count must be >= 1, got " + std::to_string(n_t));
  if (future_inputs.size() != static_cast<std::size_t>(n_t)) {
    throw ContractError("scp_unroll: expected " + std::to_string(n_t) + " future inputs, got " +
                        std::to_string(future_inputs.size()));
  }
  std::vector<const ad::Tensor*> inputs;
  for (const auto& f : future_inputs) inputs.push_back(&f);
  return run_unroll(tape, branch, inputs, state, dropout, consumed, trace);
}

ad::Tensor matt_scores(ad::Tape& tape, const MattParams& matt, std::span<const LstmState> states,
                       const DropoutContext& dropout) {
  const std::size_t expected = matt.fc3_w.value().rows();
  if (states.size() != expected) {
    throw ContractError("matt: expected " + std::to_string(expected) + " modality states, got " +
                        std::to_string(states.size()));
  }
  std::vector<ad::Tensor> parts;
  for (const auto& s : states) {
    parts.push_back(s.h);
    parts.push_back(s.c);
  }
  const ad::Tensor x = tape.concat(parts, 1);
  if (x.cols() != matt.fc1_w.value().cols()) {
    throw DimensionError("matt: input width " + std::to_string(x.cols()) + " vs expected " +
                         std::to_string(matt.fc1_w.value().cols()));
  }
  ad::Tensor l1 = tape.relu(linear(tape, x, matt.fc1_w, matt.fc1_b));
  ad::Tensor l2 = tape.relu(linear(tape, dropout.apply(tape, l1), matt.fc2_w, matt.fc2_b));
  return linear(tape, dropout.apply(tape, l2), matt.fc3_w, matt.fc3_b);
}

ad::Tensor matt_weights(ad::Tape& tape, const MattParams& matt, std::span<const LstmState> states,
                        const DropoutContext& dropout) {
  return tape.softmax(matt_scores(tape, matt, states, dropout));
}

ad::Tensor fuse(ad::Tape& tape, std::span<const ad::Tensor> modality_scores,
                const ad::Tensor& weights) {
  if (modality_scores.empty() || weights.cols() != modality_scores.size()) {
    throw ContractError("fuse: " + std::to_string(modality_scores.size()) +
                        " score vectors for weights " + ad::shape_string(weights.shape()));
  }
  for (const auto& s : modality_scores) {
    if (s.shape() != modality_scores[0].shape() || s.rows() != weights.rows()) {
      throw ContractError("fuse: score shapes " + ad::shape_string(s.shape()) + " and " +
                          ad::shape_string(modality_scores[0].shape()) + " with weights " +
                          ad::shape_string(weights.shape()));
    }
  }
  ad::Tensor total;
  for (std::size_t m = 0; m < modality_scores.size(); ++m) {
    ad::Tensor term = tape.scale_rows(modality_scores[m], tape.slice_cols(weights, m, 1));
    total = total.defined() ? tape.add(total, term) : term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Batching and the full forward pass

Batch make_batch(std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(samples, idx);
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const Sample& first = samples[indices[0]];
  const std::size_t n_mod = first.modalities.size();
  const std::size_t steps = n_mod ? first.modalities[0].rows : 0;
  Batch batch;
  batch.size = indices.size();
  batch.features.resize(n_mod);
  for (std::size_t i : indices) {
    const Sample& s = samples[i];
    if (s.modalities.size() != n_mod) throw ContractError("make_batch: modality count differs");
    for (std::size_t m = 0; m < n_mod; ++m) {
      if (s.modalities[m].rows != steps || s.modalities[m].cols != first.modalities[m].cols) {
        throw ContractError("make_batch: feature matrix shape differs across samples");
      }
    }
    batch.targets.push_back(s.annotation.action);
  }
  for (std::size_t m = 0; m < n_mod; ++m) {
    const std::size_t dim = first.modalities[m].cols;
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> rows;
      rows.reserve(batch.size * dim);
      for (std::size_t i : indices) {
        auto r = samples[i].modalities[m].row(t);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      batch.features[m].push_back(ad::Tensor::matrix(batch.size, dim, std::move(rows)));
    }
  }
  return batch;
}

std::vector<StepOutputs> forward(ad::Tape& tape, const RUModel& model, const Batch& batch,
                                 const ForwardOptions& options) {
  const RUModelConfig& cfg = model.config;
  const std::size_t n_mod = cfg.n_modalities();
  const int total = cfg.total_steps();
  if (batch.features.size() != n_mod) {
    throw ContractError("forward: batch has " + std::to_string(batch.features.size()) +
                        " modalities, model expects " + std::to_string(n_mod));
  }
  for (std::size_t m = 0; m < n_mod; ++m) {
    if (batch.features[m].size() != static_cast<std::size_t>(total)) {
      throw ContractError("forward: modality " + std::to_string(m) + " has " +
                          std::to_string(batch.features[m].size()) + " steps, expected " +
                          std::to_string(total));
    }
    for (const auto& f : batch.features[m]) {
      if (f.cols() != cfg.modality_dims[m] || f.rows() != batch.size) {
        throw ContractError("forward: modality " + std::to_string(m) + " features " +
                            ad::shape_string(f.shape()) + " do not match dim " +
                            std::to_string(cfg.modality_dims[m]));
      }
    }
  }
  if (options.training && options.rng == nullptr) {
    throw ContractError("forward: training mode requires a generator");
  }

  int first = cfg.s_enc + 1;
  int last = total;
  if (options.only_step) {
    unroll_count(*options.only_step, cfg);
    first = last = *options.only_step;
  }
  // The sequence-completion wiring reads up to the final step regardless.
  const int encoded = options.mode == ForwardMode::scp ? total : last;

  const DropoutContext dropout{cfg.dropout_p, options.training, options.rng};

  struct Route {
    const BranchParams* params;
    std::span<const ad::Tensor> features;
    std::size_t id;
  };
  std::vector<Route> routes;
  std::vector<ad::Tensor> concatenated;
  switch (options.fusion.kind) {
    case Fusion::Kind::matt:
    case Fusion::Kind::late:
      for (std::size_t m = 0; m < n_mod; ++m) routes.push_back({&model.branches[m], batch.features[m], m});
      break;
    case Fusion::Kind::single:
      if (options.fusion.modality >= n_mod) {
        throw ContractError("forward: single-branch modality " +
                            std::to_string(options.fusion.modality) + " does not exist");
      }
      routes.push_back({&model.branches[options.fusion.modality],
                        batch.features[options.fusion.modality], options.fusion.modality});
      break;
    case Fusion::Kind::early: {
      ad::Tape constants(false);
      for (int t = 0; t < total; ++t) {
        std::vector<ad::Tensor> parts;
        for (std::size_t m = 0; m < n_mod; ++m) parts.push_back(batch.features[m][t]);
        concatenated.push_back(constants.concat(parts, 1));
      }
      routes.push_back({&model.early, concatenated, n_mod});
      break;
    }
  }

  std::vector<std::vector<LstmState>> rolling;
  for (const auto& r : routes) {
    rolling.push_back(rolling_encode(tape, *r.params, r.features.first(encoded), dropout,
                                     options.trace));
  }

  const bool attend = options.fusion.kind == Fusion::Kind::matt && options.mode != ForwardMode::scp;
  std::vector<StepOutputs> outputs;
  for (int t = first; t <= last; ++t) {
    const int n_t = unroll_count(t, cfg);
    const auto tm = times(t, cfg);
    StepOutputs step;
    step.step = t;
    step.tau_a = tm.anticipation;
    step.tau_o = tm.observation;

    std::vector<LstmState> states_t;
    for (std::size_t b = 0; b < routes.size(); ++b) {
      const Route& r = routes[b];
      const LstmState& state = rolling[b][t - 1];
      states_t.push_back(state);
      std::vector<ad::Tensor> consumed;
      auto* taps = options.trace ? &consumed : nullptr;
      ad::Tensor scores;
      switch (options.mode) {
        case ForwardMode::anticipation:
          scores = unroll_anticipate(tape, *r.params, r.features[t - 1], state, n_t, dropout, taps,
                                     options.trace);
          break;
        case ForwardMode::scp:
          scores = scp_unroll(tape, *r.params, r.features.subspan(t - 1, n_t), state, n_t, dropout,
                              taps, options.trace);
          break;
        case ForwardMode::rolling_only:
          scores = apply_head(tape, *r.params, state.h, dropout);
          break;
      }
      if (options.trace) {
        ForwardTrace::UnrollTap tap{r.id, t, {}};
        for (const auto& c : consumed) {
          for (std::size_t k = 0; k < r.features.size(); ++k) {
            if (c.same_node(r.features[k])) {
              tap.inputs.push_back(static_cast<int>(k) + 1);
              break;
            }
          }
        }
        options.trace->taps.push_back(std::move(tap));
      }
      step.modality_scores.push_back(std::move(scores));
    }

    const std::size_t n_routes = routes.size();
    if (attend) {
      step.weights = matt_weights(tape, model.matt, states_t, dropout);
    } else {
      step.weights = ad::Tensor::full({batch.size, n_routes}, 1.0 / static_cast<double>(n_routes));
    }
    step.fused = n_routes == 1 ? step.modality_scores[0]
                               : fuse(tape, step.modality_scores, step.weights);
    outputs.push_back(std::move(step));
  }
  return outputs;
}

ad::Tensor predict_at(const RUModel& model, const Sample& sample, double tau_a, Fusion fusion,
                      ForwardMode mode) {
  const int t = step_for_anticipation_time(tau_a, model.config);
  ad::Tape tape(false);
  const Sample one[] = {sample};
  ForwardOptions opts;
  opts.mode = mode;
  opts.fusion = fusion;
  opts.only_step = t;
  auto outputs = forward(tape, model, make_batch(one), opts);
  return outputs.front().fused;
}

}  // namespace rulstm
