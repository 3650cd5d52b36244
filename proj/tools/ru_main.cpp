// ru: data generation, training, evaluation, fixed-time inference and
// gradient checks for the rolling-unrolling anticipation model.
//
// Settings precedence (later wins): built-in defaults, --config file,
// --set section.key=value overrides, dedicated flags such as --fusion.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rulstm/errors.hpp"
#include "rulstm/evaluation.hpp"
#include "rulstm/features.hpp"
#include "rulstm/gradcheck.hpp"
#include "rulstm/model.hpp"
#include "rulstm/run_config.hpp"
#include "rulstm/synthetic.hpp"
#include "rulstm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rulstm;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string fusion;
  std::string scp;
  std::string task;
  std::string output_dir;
  std::string data_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Run configuration file (INI sections)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.overrides, "Override a setting: section.key=value (repeatable)");
  cmd->add_option("--data-dir", o.data_dir, "Dataset directory (paths.data_dir)");
  cmd->add_option("--output-dir", o.output_dir, "Output directory (paths.output_dir)");
}

void add_run_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--fusion", o.fusion, "matt, late, early or single:<m> (run.fusion)");
  cmd->add_option("--scp", o.scp, "Sequence-completion pre-training: on or off (run.scp)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--task", o.task, "anticipation or early_recognition (run.task)")
      ->check(CLI::IsMember({"anticipation", "early_recognition"}));
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig rc;
  if (!o.config.empty()) rc.apply_file(o.config);
  for (const auto& s : o.overrides) rc.apply_override(s);
  if (!o.data_dir.empty()) rc.set("paths", "data_dir", o.data_dir);
  if (!o.output_dir.empty()) rc.set("paths", "output_dir", o.output_dir);
  if (!o.fusion.empty()) rc.set("run", "fusion", o.fusion);
  if (!o.scp.empty()) rc.set("run", "scp", o.scp);
  if (!o.task.empty()) rc.set("run", "task", o.task);
  rc.train.early_stop_metric = rc.early_stop_metric();
  return rc;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct LoadedData {
  FeatureStore store;
  ActionVocabulary vocab;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<ActionAnnotation> val_annotations;
};

LoadedData load_data(const RunConfig& rc, std::optional<RUModelConfig> model_cfg,
                     RUModelConfig* resolved, bool need_train) {
  rc.require_inputs();
  LoadedData d;
  d.store = load_feature_store(rc.features_path(), rc.modality_names());
  d.vocab = load_vocabulary(rc.vocab_path());
  RUModelConfig cfg = model_cfg ? *model_cfg : rc.model_config_for(d.store, d.vocab);
  check_compatible(cfg, d.store);
  d.val_annotations = load_annotations(rc.val_annotations_path());
  validate_annotations(d.val_annotations, cfg.n_verbs, cfg.n_nouns, cfg.n_actions);
  LookupStats stats;
  d.val = extract_samples(d.store, d.val_annotations, cfg, rc.task, &stats);
  if (need_train) {
    const auto train = load_annotations(rc.train_annotations_path());
    validate_annotations(train, cfg.n_verbs, cfg.n_nouns, cfg.n_actions);
    d.train = extract_samples(d.store, train, cfg, rc.task, &stats);
  }
  if (stats.clamped > 0)
    std::clog << "[data] " << stats.clamped << " lookups clamped to the first timeline row\n";
  if (resolved) *resolved = cfg;
  return d;
}

ForwardMode model_mode() { return ForwardMode::anticipation; }

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOptions& o) {
  const RunConfig rc = resolve(o);
  const SynthDataset data = generate(rc.data);
  write_dataset(data, rc.data_dir);
  std::cout << "wrote " << data.train.size() << " training and " << data.validation.size()
            << " validation actions over " << rc.data.modalities.size() << " modalities to "
            << rc.data_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  const RunConfig rc = resolve(o);
  RUModelConfig mcfg;
  const LoadedData d = load_data(rc, std::nullopt, &mcfg, true);
  const PipelineResult res = run_pipeline(mcfg, rc.train, rc.fusion, d.train, d.val, model_mode());
  fs::create_directories(rc.output_dir);
  save_checkpoint(rc.checkpoint_path(), res.model);
  json report = res.reports_json();
  report["config"] = rc.to_json();
  write_json(rc.output_dir / "train_report.json", report);
  std::cout << "checkpoint " << rc.checkpoint_path().string() << "\n";
  for (const auto& r : res.reports)
    std::cout << "  " << std::left << std::setw(12) << r.stage << " epoch " << r.selected_epoch
              << "/" << r.epochs.size() << "  metric " << std::fixed << std::setprecision(2)
              << r.best_metric << "\n";
  return 0;
}

void check_k(const RunConfig& rc, const ActionVocabulary& vocab) {
  if (rc.eval.k < 1 || rc.eval.k > vocab.n_actions())
    throw ConfigError("k=" + std::to_string(rc.eval.k) + " is outside [1, " +
                      std::to_string(vocab.n_actions()) + "] for this vocabulary");
}

json summary_row(const std::string& name, const EvaluationReport& rep) {
  return {{"variant", name},
          {"verb_top_k", rep.top_k_at_reference[0]},
          {"noun_top_k", rep.top_k_at_reference[1]},
          {"action_top_k", rep.top_k_at_reference[2]},
          {"action_top1", rep.top1_by_step.empty() ? 0.0 : rep.top1_by_step.back()},
          {"action_top_k_by_step", rep.top_k_by_step},
          {"mean_top1_over_steps", rep.mean_top1_over_steps}};
}

int run_ablation(const RunConfig& rc) {
  if (rc.task != Protocol::anticipation)
    throw ConfigError("the ablation suite runs on the anticipation task");
  RUModelConfig mcfg;
  const LoadedData d = load_data(rc, std::nullopt, &mcfg, true);
  check_k(rc, d.vocab);
  std::vector<std::pair<std::string, EvaluationReport>> rows;
  auto score = [&](const std::string& name, const RUModel& model, ForwardMode mode,
                   const Fusion& fusion) {
    const auto inf = run_inference(model, d.val, mode, fusion);
    rows.emplace_back(name, evaluate(inf.table, d.vocab, rc.eval));
  };

  TrainConfig with_scp = rc.train;
  with_scp.use_scp = true;
  TrainConfig no_scp = rc.train;
  no_scp.use_scp = false;

  const auto bl = run_pipeline(mcfg, with_scp, Fusion::late(), d.train, d.val,
                               ForwardMode::rolling_only);
  score("BL-late", bl.model, ForwardMode::rolling_only, Fusion::late());

  auto late = run_pipeline(mcfg, with_scp, Fusion::late(), d.train, d.val);
  for (std::size_t m = 0; m < mcfg.n_modalities(); ++m)
    score("RU-" + mcfg.modality_names[m], late.model, ForwardMode::anticipation, Fusion::single(m));
  score("RU-late", late.model, ForwardMode::anticipation, Fusion::late());
  RUModel matt = late.model;
  ad::Rng rng(with_scp.seed ^ 0x5bd1e995ULL);
  train_joint(matt, d.train, d.val, with_scp, rng);
  score("RU-matt", matt, ForwardMode::anticipation, Fusion::matt());

  const auto early = run_pipeline(mcfg, with_scp, Fusion::early(), d.train, d.val);
  score("RU-early", early.model, ForwardMode::anticipation, Fusion::early());

  const auto plain = run_pipeline(mcfg, no_scp, Fusion::matt(), d.train, d.val);
  score("RU-matt w/o SCP", plain.model, ForwardMode::anticipation, Fusion::matt());

  json table = json::array();
  for (const auto& [name, rep] : rows) table.push_back(summary_row(name, rep));
  fs::create_directories(rc.output_dir);
  write_json(rc.output_dir / "ablation.json", {{"k", rc.eval.k}, {"rows", table}});

  std::ofstream csv(rc.output_dir / "ablation.csv", std::ios::binary);
  csv << "variant,verb_top" << rc.eval.k << ",noun_top" << rc.eval.k << ",action_top"
      << rc.eval.k << ",action_top1_last,mean_top1\n";
  std::cout << std::left << std::setw(18) << "variant" << std::right;
  for (const char* h : {"verb", "noun", "action", "top1", "mean1"}) std::cout << std::setw(9) << h;
  std::cout << "\n" << std::fixed << std::setprecision(2);
  for (const auto& [name, rep] : rows) {
    const double last = rep.top1_by_step.back();
    csv << name << ',' << rep.top_k_at_reference[0] << ',' << rep.top_k_at_reference[1] << ','
        << rep.top_k_at_reference[2] << ',' << last << ',' << rep.mean_top1_over_steps << '\n';
    std::cout << std::left << std::setw(18) << name << std::right << std::setw(9)
              << rep.top_k_at_reference[0] << std::setw(9) << rep.top_k_at_reference[1]
              << std::setw(9) << rep.top_k_at_reference[2] << std::setw(9) << last << std::setw(9)
              << rep.mean_top1_over_steps << "\n";
  }
  std::cout << "(top-" << rc.eval.k << " at tau_a=" << rc.eval.reference_tau_a
            << " s; top1 at the last step; mean1 over all steps)\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, std::optional<std::size_t> k,
             const std::string& suite) {
  RunConfig rc = resolve(o);
  if (k) rc.eval.k = *k;
  if (!suite.empty()) return run_ablation(rc);

  const fs::path ckpt = checkpoint.empty() ? rc.checkpoint_path() : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint '" + ckpt.string() + "'");
  const RUModel model = load_checkpoint(ckpt);
  const LoadedData d = load_data(rc, model.config, nullptr, false);
  check_k(rc, d.vocab);
  const auto inf = run_inference(model, d.val, model_mode(), rc.fusion);
  const EvaluationReport rep = evaluate(inf.table, d.vocab, rc.eval);
  fs::create_directories(rc.output_dir);
  json j = rep.to_json();
  j["fusion"] = rc.fusion.name();
  write_json(rc.output_dir / "eval_report.json", j);
  save_score_table(rc.output_dir / "eval_scores.csv", inf.table);
  std::cout << rep.to_text();
  return 0;
}

int cmd_anticipate(const CommonOptions& o, const std::string& checkpoint, std::size_t index,
                   const std::string& split, std::optional<double> tau_a) {
  const RunConfig rc = resolve(o);
  const fs::path ckpt = checkpoint.empty() ? rc.checkpoint_path() : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint '" + ckpt.string() + "'");
  const RUModel model = load_checkpoint(ckpt);
  const LoadedData d = load_data(rc, model.config, nullptr, split == "train");
  const auto& pool = split == "train" ? d.train : d.val;
  if (index >= pool.size())
    throw ConfigError("sample " + std::to_string(index) + " is outside the " + split + " split (" +
                      std::to_string(pool.size()) + " samples)");
  if (tau_a && rc.task != Protocol::anticipation)
    throw ConfigError("--tau-a applies to the anticipation task only");

  const Sample& sample = pool[index];
  const Batch batch = make_batch(std::span<const Sample>(&sample, 1));
  ForwardOptions opts;
  opts.mode = model_mode();
  opts.fusion = rc.fusion;
  if (tau_a) {
    try {
      opts.only_step = step_for_anticipation_time(*tau_a, model.config);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  ad::Tape tape(false);
  const auto steps = forward(tape, model, batch, opts);

  const auto& a = sample.annotation;
  std::cout << "sample " << index << " (" << split << ", video " << a.video_id << ", start "
            << a.start << " s)  ground truth: action " << a.action << " = verb " << a.verb
            << " / noun " << a.noun << "\n";
  const int T = model.config.total_steps();
  for (const auto& s : steps) {
    if (opts.only_step && s.step != *opts.only_step) continue;
    const auto fused = s.fused.data();
    const double mx = *std::max_element(fused.begin(), fused.end());
    std::vector<double> prob(fused.size());
    double z = 0.0;
    for (std::size_t c = 0; c < fused.size(); ++c) z += prob[c] = std::exp(fused[c] - mx);
    for (auto& p : prob) p /= z;
    std::vector<std::size_t> order(prob.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return prob[x] > prob[y]; });

    std::cout << std::fixed << std::setprecision(2);
    if (rc.task == Protocol::anticipation)
      std::cout << "tau_a " << s.tau_a << " s (step " << s.step << ")\n";
    else
      std::cout << "observed " << 100.0 * (s.step - model.config.s_enc) / model.config.s_ant
                << "% (step " << s.step << " of " << T << ")\n";
    for (std::size_t r = 0; r < std::min<std::size_t>(4, order.size()); ++r) {
      const std::size_t c = order[r];
      const auto& e = d.vocab.actions[c];
      std::cout << "  " << r + 1 << ". action " << std::setw(3) << c << "  (verb " << e.verb
                << ", noun " << e.noun << ")  " << std::setprecision(4) << prob[c]
                << std::setprecision(2) << (c == a.action ? "  *" : "") << "\n";
    }
    const auto w = s.weights.data();
    std::cout << "  weights:";
    if (rc.fusion.kind == Fusion::Kind::early) {
      std::cout << " early 100.0%";
    } else if (rc.fusion.kind == Fusion::Kind::single) {
      std::cout << " " << model.config.modality_names[rc.fusion.modality] << " 100.0%";
    } else {
      for (std::size_t m = 0; m < w.size(); ++m)
        std::cout << " " << model.config.modality_names[m] << " " << std::setprecision(1)
                  << 100.0 * w[m] << "%";
    }
    std::cout << std::setprecision(2) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const ModelCheckConfig& cfg) {
  std::vector<GradCheckResult> results = op_gradient_checks(cfg.seed);
  for (auto& r : model_gradient_checks(cfg)) results.push_back(std::move(r));
  bool ok = true;
  std::cout << std::left << std::setw(36) << "check" << std::right << std::setw(8) << "probes"
            << std::setw(14) << "max rel err" << "  result\n";
  for (const auto& r : results) {
    ok = ok && r.passed();
    std::cout << std::left << std::setw(36) << r.name << std::right << std::setw(8) << r.probes
              << std::setw(14) << std::scientific << std::setprecision(2) << r.max_rel_error
              << "  " << (r.passed() ? "PASS" : "FAIL") << "\n";
  }
  if (!ok) throw Error("gradient check failed");
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rolling-unrolling action anticipation: data, training, evaluation"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, ant_o;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-modal dataset");
  add_common(gen, gen_o);

  auto* train = app.add_subcommand("train", "Run the staged training pipeline and save a checkpoint");
  add_common(train, train_o);
  add_run_flags(train, train_o);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, or run the ablation suite");
  add_common(eval, eval_o);
  add_run_flags(eval, eval_o);
  std::string eval_ckpt, suite;
  std::optional<std::size_t> eval_k;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file (paths.checkpoint)");
  eval->add_option("-k,--k", eval_k, "Top-k for accuracy and recall (eval.k)");
  eval->add_option("--suite", suite, "Train and compare the ablation variants")
      ->check(CLI::IsMember({"ablation"}));

  auto* ant = app.add_subcommand("anticipate", "Print per-step predictions for one sample");
  add_common(ant, ant_o);
  add_run_flags(ant, ant_o);
  std::string ant_ckpt, split = "val";
  std::size_t index = 0;
  std::optional<double> tau_a;
  ant->add_option("--checkpoint", ant_ckpt, "Checkpoint file (paths.checkpoint)");
  ant->add_option("--sample", index, "Sample index within the split")->capture_default_str();
  ant->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}))
      ->capture_default_str();
  ant->add_option("--tau-a", tau_a, "Report only the prediction at this anticipation time (s)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  ModelCheckConfig gc;
  grad->add_option("--hidden", gc.hidden, "LSTM hidden size")->capture_default_str();
  grad->add_option("--modalities", gc.n_modalities, "Number of modalities")->capture_default_str();
  grad->add_option("--classes", gc.n_actions, "Number of action classes")->capture_default_str();
  grad->add_option("--seed", gc.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(gen_o);
    if (*train) return cmd_train(train_o);
    if (*eval) return cmd_eval(eval_o, eval_ckpt, eval_k, suite);
    if (*ant) return cmd_anticipate(ant_o, ant_ckpt, index, split, tau_a);
    if (*grad) return cmd_gradcheck(gc);
  } catch (const ConfigError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const Error& e) {
    print_error("runtime", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
