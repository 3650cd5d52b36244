#include "rulstm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "rulstm/errors.hpp"

namespace rulstm {

std::string early_stop_metric_name(EarlyStopMetric metric) {
  return metric == EarlyStopMetric::top5_action_at_1s ? "top5_action_at_1s" : "mean_top1_over_rates";
}

EarlyStopMetric parse_early_stop_metric(const std::string& text) {
  if (text == "top5_action_at_1s") return EarlyStopMetric::top5_action_at_1s;
  if (text == "mean_top1_over_rates") return EarlyStopMetric::mean_top1_over_rates;
  throw ConfigError("unknown early-stop metric '" + text + "'");
}

int TrainConfig::scp_epochs_for(std::size_t m) const {
  return m < scp_epochs.size() ? scp_epochs[m] : default_epochs;
}

int TrainConfig::branch_epochs_for(std::size_t m) const {
  return m < branch_epochs.size() ? branch_epochs[m] : default_epochs;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (default_epochs < 1 || joint_epochs < 1) throw ConfigError("epochs must be >= 1");
  for (int e : scp_epochs) if (e < 1) throw ConfigError("scp epochs must be >= 1");
  for (int e : branch_epochs) if (e < 1) throw ConfigError("branch epochs must be >= 1");
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["selected_epoch"] = selected_epoch;
  j["best_metric"] = best_metric;
  auto& ep = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"metric", e.val_metric},
                  {"val_loss", e.val_loss}});
  }
  return j;
}

nlohmann::json PipelineResult::reports_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["stages"] = nlohmann::json::array();
  for (const auto& r : reports) j["stages"].push_back(r.to_json());
  return j;
}

// ---------------------------------------------------------------------------

ad::Tensor loss_anticipation(ad::Tape& tape, std::span<const StepOutputs> steps,
                             std::span<const std::size_t> targets) {
  if (steps.empty()) throw ContractError("loss_anticipation: no step outputs");
  ad::Tensor total;
  for (const auto& s : steps) {
    if (!s.fused.defined()) throw ContractError("loss_anticipation: step without fused scores");
    ad::Tensor ce = tape.cross_entropy(s.fused, targets);
    total = total.defined() ? tape.add(total, ce) : ce;
  }
  return tape.scale(total, 1.0 / static_cast<double>(steps.size()));
}

InferenceResult run_inference(const RUModel& model, std::span<const Sample> samples,
                              ForwardMode mode, const Fusion& fusion, std::size_t batch_size) {
  const RUModelConfig& cfg = model.config;
  InferenceResult res;
  ScoreTable& table = res.table;
  table.axis = Axis::action;
  table.n_classes = cfg.n_actions;
  table.early_recognition = !samples.empty() && samples[0].protocol == Protocol::early_recognition;
  for (int t = cfg.s_enc + 1; t <= cfg.total_steps(); ++t) {
    table.steps.push_back(t);
    const int k = t - cfg.s_enc;
    table.step_times.push_back(table.early_recognition
                                   ? static_cast<double>(k) / cfg.s_ant
                                   : times(t, cfg).anticipation);
  }
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    ad::Tape tape(false);
    ForwardOptions opts;
    opts.mode = mode;
    opts.fusion = fusion;
    const auto outs = forward(tape, model, make_batch(samples, idx), opts);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Sample& s = samples[idx[b]];
      ScoreRow row;
      row.sample_id = std::to_string(idx[b]);
      row.verb = s.annotation.verb;
      row.noun = s.annotation.noun;
      row.action = s.annotation.action;
      std::vector<std::vector<double>> w;
      for (const auto& o : outs) {
        const std::size_t n = o.fused.cols();
        auto d = o.fused.data().subspan(b * n, n);
        row.scores.emplace_back(d.begin(), d.end());
        const std::size_t m = o.weights.cols();
        auto wd = o.weights.data().subspan(b * m, m);
        w.emplace_back(wd.begin(), wd.end());
      }
      table.rows.push_back(std::move(row));
      res.weights.push_back(std::move(w));
    }
  }
  return res;
}

double validation_metric(const ScoreTable& table, EarlyStopMetric metric) {
  if (metric == EarlyStopMetric::top5_action_at_1s) {
    return top_k_accuracy(table, std::min<std::size_t>(5, table.n_classes), table.step_at_time(1.0));
  }
  double sum = 0.0;
  for (std::size_t s = 0; s < table.n_steps(); ++s) sum += top_k_accuracy(table, 1, s);
  return sum / static_cast<double>(table.n_steps());
}

namespace {

double table_loss(const ScoreTable& table) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : table.rows) {
    for (const auto& s : r.scores) {
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double v : s) z += std::exp(v - mx);
      total += mx + std::log(z) - s[r.action];
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

void shuffle(std::vector<std::size_t>& v, ad::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

TrainReport train_stage(RUModel& model, std::span<const Sample> train,
                        std::span<const Sample> validation, const StageSpec& spec,
                        const TrainConfig& cfg, ad::Rng& rng) {
  cfg.validate();
  if (train.empty()) throw DataError("stage '" + spec.name + "': empty training set");
  if (validation.empty() && !spec.metric) {
    throw DataError("stage '" + spec.name + "': empty validation set");
  }
  if (spec.epochs < 1) throw ConfigError("stage '" + spec.name + "': epochs must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  std::vector<ad::Parameter*> params = trainable_parameters(model, spec.mode, spec.fusion);
  for (auto* p : params) {
    p->reset_momentum();
    p->value().zero_grad();
  }
  std::vector<ad::Parameter> best;
  double best_metric = -1.0;
  double best_loss = 0.0;

  TrainReport report;
  report.stage = spec.name;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Batch batch = make_batch(train, idx);
      ad::Tape tape;
      ForwardOptions opts;
      opts.mode = spec.mode;
      opts.fusion = spec.fusion;
      opts.training = true;
      opts.rng = &rng;
      const auto outs = forward(tape, model, batch, opts);
      const ad::Tensor loss = loss_anticipation(tape, outs, batch.targets);
      tape.backward(loss);
      ad::sgd_step(params, cfg.lr, cfg.momentum);
      loss_sum += loss.item() * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    if (spec.metric) {
      rec.val_metric = spec.metric(model, epoch);
    } else {
      const ScoreTable table = run_inference(model, validation, spec.mode, spec.fusion).table;
      rec.val_metric = validation_metric(table, cfg.early_stop_metric);
      rec.val_loss = table_loss(table);
    }
    report.epochs.push_back(rec);

    const bool better = rec.val_metric > best_metric ||
                        (rec.val_metric == best_metric && rec.val_loss < best_loss);
    if (better || best.empty()) {
      best_metric = rec.val_metric;
      best_loss = rec.val_loss;
      report.selected_epoch = epoch;
      best.clear();
      for (auto* p : params) best.push_back(*p);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i]->value().mutable_data();
    auto src = best[i].value().data();
    std::copy(src.begin(), src.end(), dst.begin());
    params[i]->reset_momentum();
  }
  report.best_metric = best_metric;
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainReport train_scp(RUModel& model, std::size_t modality, std::span<const Sample> train,
                      std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng) {
  StageSpec spec{"scp:" + std::to_string(modality), ForwardMode::scp, Fusion::single(modality),
                 cfg.scp_epochs_for(modality), {}};
  return train_stage(model, train, validation, spec, cfg, rng);
}

TrainReport train_branch(RUModel& model, std::size_t modality, std::span<const Sample> train,
                         std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng) {
  StageSpec spec{"branch:" + std::to_string(modality), ForwardMode::anticipation,
                 Fusion::single(modality), cfg.branch_epochs_for(modality), {}};
  TrainReport rep = train_stage(model, train, validation, spec, cfg, rng);
  if (modality < model.branch_trained.size()) model.branch_trained[modality] = true;
  return rep;
}

TrainReport train_joint(RUModel& model, std::span<const Sample> train,
                        std::span<const Sample> validation, const TrainConfig& cfg, ad::Rng& rng) {
  if (model.branches.size() != model.config.n_modalities() ||
      model.branch_trained.size() != model.branches.size()) {
    throw ContractError("train_joint: model has " + std::to_string(model.branches.size()) +
                        " branches for " + std::to_string(model.config.n_modalities()) + " modalities");
  }
  if (cfg.require_pretrained) {
    for (std::size_t m = 0; m < model.branch_trained.size(); ++m) {
      if (!model.branch_trained[m]) {
        throw ContractError("train_joint: branch " + std::to_string(m) +
                            " has not been pre-trained (set require_pretrained=false to override)");
      }
    }
  }
  StageSpec spec{"joint", ForwardMode::anticipation, Fusion::matt(), cfg.joint_epochs, {}};
  return train_stage(model, train, validation, spec, cfg, rng);
}

PipelineResult run_pipeline(const RUModelConfig& model_cfg, const TrainConfig& cfg,
                            const Fusion& fusion, std::span<const Sample> train,
                            std::span<const Sample> validation, ForwardMode mode) {
  cfg.validate();
  PipelineResult res{RUModel::create(model_cfg, cfg.seed), {}};
  ad::Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  RUModel& model = res.model;
  const std::size_t n_mod = model_cfg.n_modalities();

  auto run = [&](const std::string& stage, auto&& fn) {
    try {
      TrainReport rep = fn();
      std::clog << "[train] " << rep.stage << ": best metric " << rep.best_metric << " at epoch "
                << rep.selected_epoch << "/" << rep.epochs.size() << " (" << rep.wall_clock_s << " s)\n";
      res.reports.push_back(std::move(rep));
    } catch (const Error& e) {
      throw Error("stage '" + stage + "': " + e.what());
    }
  };

  auto train_one = [&](const Fusion& f, std::size_t m, int scp_epochs, int branch_epochs) {
    const std::string tag = f.kind == Fusion::Kind::early ? "early" : std::to_string(m);
    if (cfg.use_scp && mode == ForwardMode::anticipation) {
      run("scp:" + tag, [&] {
        return train_stage(model, train, validation,
                           {"scp:" + tag, ForwardMode::scp, f, scp_epochs, {}}, cfg, rng);
      });
    }
    run("branch:" + tag, [&] {
      return train_stage(model, train, validation, {"branch:" + tag, mode, f, branch_epochs, {}},
                         cfg, rng);
    });
    if (f.kind == Fusion::Kind::single) model.branch_trained[m] = true;
  };

  switch (fusion.kind) {
    case Fusion::Kind::single:
      if (fusion.modality >= n_mod) throw ConfigError("single-branch modality out of range");
      train_one(fusion, fusion.modality, cfg.scp_epochs_for(fusion.modality),
                cfg.branch_epochs_for(fusion.modality));
      break;
    case Fusion::Kind::early:
      train_one(fusion, 0, cfg.scp_epochs_for(0), cfg.branch_epochs_for(0));
      break;
    case Fusion::Kind::late:
    case Fusion::Kind::matt:
      for (std::size_t m = 0; m < n_mod; ++m) {
        train_one(Fusion::single(m), m, cfg.scp_epochs_for(m), cfg.branch_epochs_for(m));
      }
      if (fusion.kind == Fusion::Kind::matt) {
        run("joint", [&] {
          StageSpec spec{"joint", mode, Fusion::matt(), cfg.joint_epochs, {}};
          return train_stage(model, train, validation, spec, cfg, rng);
        });
      }
      break;
  }
  return res;
}

}  // namespace rulstm
