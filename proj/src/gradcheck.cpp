#include "rulstm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rulstm/training.hpp"

namespace rulstm {

using ad::Tape;
using ad::Tensor;

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradient_check(const std::string& name, std::span<Tensor> leaves,
                               const std::function<Tensor(Tape&)>& f, double eps,
                               double tolerance) {
  for (auto& leaf : leaves) leaf.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  GradCheckResult res{name, 0, 0.0, tolerance};
  for (auto& leaf : leaves) {
    const std::vector<double> analytic =
        leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                        : std::vector<double>(leaf.size(), 0.0);
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      Tape plus(false);
      const double up = f(plus).item();
      values[i] = saved - eps;
      Tape minus(false);
      const double down = f(minus).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      res.max_rel_error = std::max(res.max_rel_error, gradient_relative_error(analytic[i], numeric));
      ++res.probes;
    }
  }
  return res;
}

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, ad::Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = lo + (hi - lo) * ad::uniform01(rng);
  return Tensor::matrix(rows, cols, std::move(v), true);
}

// Values bounded away from zero so relu's kink is never straddled.
Tensor away_from_zero(std::size_t rows, std::size_t cols, ad::Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) {
    const double mag = 0.1 + 0.9 * ad::uniform01(rng);
    x = ad::uniform01(rng) < 0.5 ? -mag : mag;
  }
  return Tensor::matrix(rows, cols, std::move(v), true);
}

}  // namespace

std::vector<GradCheckResult> op_gradient_checks(std::uint64_t seed) {
  ad::Rng rng(seed);
  std::vector<GradCheckResult> out;
  // Projects an op output onto fixed random weights to get a generic scalar.
  auto project = [&](std::size_t rows, std::size_t cols) {
    Tensor r = random_matrix(rows, cols, rng).detach();
    return [r](Tape& t, const Tensor& y) { return t.sum(t.mul(y, r)); };
  };

  {
    std::vector<Tensor> l{random_matrix(8, 7, rng), random_matrix(7, 8, rng)};
    auto p = project(8, 8);
    out.push_back(gradient_check("matmul", l, [&](Tape& t) { return p(t, t.matmul(l[0], l[1])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(8, 7, rng), random_matrix(8, 7, rng)};
    auto p = project(8, 8);
    out.push_back(gradient_check("matmul_transposed", l,
                                 [&](Tape& t) { return p(t, t.matmul_transposed(l[0], l[1])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(8, 7, rng), random_matrix(8, 7, rng)};
    auto p = project(8, 7);
    out.push_back(gradient_check("add", l, [&](Tape& t) { return p(t, t.add(l[0], l[1])); }));
    out.push_back(gradient_check("mul", l, [&](Tape& t) { return p(t, t.mul(l[0], l[1])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng, -3.0, 3.0)};
    auto p = project(10, 11);
    out.push_back(gradient_check("sigmoid", l, [&](Tape& t) { return p(t, t.sigmoid(l[0])); }));
    out.push_back(gradient_check("tanh", l, [&](Tape& t) { return p(t, t.tanh(l[0])); }));
  }
  {
    std::vector<Tensor> l{away_from_zero(10, 11, rng)};
    auto p = project(10, 11);
    out.push_back(gradient_check("relu", l, [&](Tape& t) { return p(t, t.relu(l[0])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(12, 9, rng), random_matrix(1, 9, rng)};
    l[1] = Tensor::vector(std::vector<double>(l[1].data().begin(), l[1].data().end()), true);
    auto p = project(12, 9);
    out.push_back(gradient_check("add_bias", l, [&](Tape& t) { return p(t, t.add_bias(l[0], l[1])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng)};
    auto p = project(10, 11);
    out.push_back(gradient_check("scale", l, [&](Tape& t) { return p(t, t.scale(l[0], -1.7)); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 10, rng), random_matrix(10, 1, rng)};
    auto p = project(10, 10);
    out.push_back(gradient_check("scale_rows", l, [&](Tape& t) { return p(t, t.scale_rows(l[0], l[1])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 12, rng)};
    auto p = project(10, 5);
    out.push_back(gradient_check("slice_cols", l, [&](Tape& t) { return p(t, t.slice_cols(l[0], 3, 5)); }));
  }
  {
    std::vector<Tensor> l{random_matrix(7, 9, rng), random_matrix(5, 9, rng)};
    auto p = project(12, 9);
    out.push_back(gradient_check("concat_rows", l, [&](Tape& t) { return p(t, t.concat(l, 0)); }));
  }
  {
    std::vector<Tensor> l{random_matrix(9, 7, rng), random_matrix(9, 5, rng)};
    auto p = project(9, 12);
    out.push_back(gradient_check("concat_cols", l, [&](Tape& t) { return p(t, t.concat(l, 1)); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng)};
    out.push_back(gradient_check("sum", l, [&](Tape& t) { return t.sum(t.mul(l[0], l[0])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng, -2.0, 2.0)};
    auto p = project(10, 11);
    out.push_back(gradient_check("softmax", l, [&](Tape& t) { return p(t, t.softmax(l[0])); }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng)};
    auto p = project(10, 11);
    const std::uint64_t mask_seed = rng();
    out.push_back(gradient_check("dropout", l, [&](Tape& t) {
      ad::Rng mask(mask_seed);
      return p(t, t.dropout(l[0], 0.4, true, mask));
    }));
  }
  {
    std::vector<Tensor> l{random_matrix(10, 11, rng, -2.0, 2.0)};
    std::vector<std::size_t> targets;
    for (int r = 0; r < 10; ++r) targets.push_back(rng() % 11);
    out.push_back(gradient_check("cross_entropy", l,
                                 [&](Tape& t) { return t.cross_entropy(l[0], targets); }));
  }
  return out;
}

std::vector<GradCheckResult> model_gradient_checks(const ModelCheckConfig& c) {
  RUModelConfig cfg;
  cfg.hidden = c.hidden;
  cfg.s_enc = c.s_enc;
  cfg.s_ant = c.s_ant;
  cfg.n_actions = c.n_actions;
  cfg.n_verbs = c.n_actions;
  cfg.n_nouns = 1;
  cfg.dropout_p = 0.3;
  for (std::size_t m = 0; m < c.n_modalities; ++m) {
    cfg.modality_dims.push_back(c.feature_dim + m);
    cfg.modality_names.push_back("m" + std::to_string(m));
  }
  RUModel model = RUModel::create(cfg, c.seed);
  ad::Rng rng(c.seed + 1);
  // The attention output layer starts at zero, which would leave the layers
  // below it without gradient; give it random weights for the check.
  for (auto* p : {&model.matt.fc3_w, &model.matt.fc3_b})
    for (auto& v : p->value().mutable_data()) v = ad::uniform01(rng) - 0.5;

  std::vector<Sample> samples(c.batch);
  const int T = cfg.total_steps();
  for (std::size_t b = 0; b < c.batch; ++b) {
    samples[b].annotation.action = rng() % c.n_actions;
    for (std::size_t m = 0; m < c.n_modalities; ++m) {
      FeatureMatrix fm{static_cast<std::size_t>(T), cfg.modality_dims[m], {}};
      for (std::size_t i = 0; i < fm.rows * fm.cols; ++i)
        fm.values.push_back(2.0 * ad::uniform01(rng) - 1.0);
      samples[b].modalities.push_back(std::move(fm));
    }
  }
  const Batch batch = make_batch(samples);
  const std::uint64_t mask_seed = rng();

  struct Case {
    ForwardMode mode;
    Fusion fusion;
  };
  const std::vector<Case> cases{
      {ForwardMode::anticipation, Fusion::matt()},
      {ForwardMode::anticipation, Fusion::late()},
      {ForwardMode::anticipation, Fusion::early()},
      {ForwardMode::scp, Fusion::single(0)},
      {ForwardMode::rolling_only, Fusion::late()},
  };
  std::vector<GradCheckResult> out;
  for (const auto& cs : cases) {
    std::vector<Tensor> leaves;
    for (auto* p : trainable_parameters(model, cs.mode, cs.fusion)) leaves.push_back(p->value());
    auto loss = [&](Tape& t) {
      ad::Rng mask(mask_seed);
      ForwardOptions opts;
      opts.mode = cs.mode;
      opts.fusion = cs.fusion;
      opts.training = true;
      opts.rng = &mask;
      const auto steps = forward(t, model, batch, opts);
      return loss_anticipation(t, steps, batch.targets);
    };
    out.push_back(gradient_check("model:" + mode_name(cs.mode) + ":" + cs.fusion.name(), leaves, loss));
  }
  return out;
}

}  // namespace rulstm
