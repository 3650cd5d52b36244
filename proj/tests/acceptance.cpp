// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Long-running criteria train on the shipped desk config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "metric_oracle.hpp"
#include "rulstm/features.hpp"
#include "rulstm/gradcheck.hpp"
#include "rulstm/model.hpp"
#include "rulstm/run_config.hpp"
#include "rulstm/synthetic.hpp"
#include "rulstm/training.hpp"

using namespace rulstm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

RunConfig desk(std::uint64_t seed) {
  RunConfig rc = RunConfig::from_file(DESK_CONFIG);
  rc.data.seed = seed;
  rc.train.seed = seed;
  return rc;
}

struct Prepared {
  SynthDataset data;
  RUModelConfig model;
  TrainConfig train;
  std::vector<Sample> train_samples;
  std::vector<Sample> val_samples;
};

Prepared prepare(const RunConfig& rc) {
  Prepared p{generate(rc.data), {}, rc.train, {}, {}};
  p.model = rc.model_config_for(p.data.store, p.data.vocab);
  p.train.early_stop_metric = rc.early_stop_metric();
  p.train_samples = extract_samples(p.data.store, p.data.train, p.model, rc.task);
  p.val_samples = extract_samples(p.data.store, p.data.validation, p.model, rc.task);
  return p;
}

double top1_at(const RUModel& m, std::span<const Sample> s, const Fusion& f, double tau_a) {
  const auto t = run_inference(m, s, ForwardMode::anticipation, f).table;
  return top_k_accuracy(t, 1, t.step_at_time(tau_a));
}

// ---------------------------------------------------------------------------

Verdict gradient_integrity() {
  const auto t0 = Clock::now();
  auto results = op_gradient_checks(5);
  const auto model = model_gradient_checks({});
  results.insert(results.end(), model.begin(), model.end());
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed();
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
  }
  return {ok && secs < 30.0, std::to_string(results.size()) + " checks, worst " + worst_name + " " +
                                 sci(worst) + ", " + fmt(secs, 1) + " s"};
}

Verdict timing_algebra() {
  RUModelConfig cfg;
  const std::vector<double> tau_a{2.0, 1.75, 1.5, 1.25, 1.0, 0.75, 0.5, 0.25};
  const std::vector<double> tau_o{1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25, 3.5};
  bool ok = times(11, cfg).observation == 2.75 && times(11, cfg).anticipation == 1.0;
  for (int t = 7; t <= 14; ++t) {
    const auto tm = times(t, cfg);
    ok = ok && tm.anticipation == tau_a[static_cast<std::size_t>(t - 7)] &&
         tm.observation == tau_o[static_cast<std::size_t>(t - 7)];
  }
  return {ok, "t=11 -> (" + fmt(times(11, cfg).observation) + " s, " + fmt(times(11, cfg).anticipation) +
                  " s); tau_a and tau_o sets over t=7..14 exact"};
}

Verdict unrolling_schedule() {
  RUModelConfig cfg;
  cfg.hidden = 6;
  cfg.modality_dims = {5, 3, 4};
  cfg.modality_names = {"a", "b", "c"};
  cfg.n_actions = 7;
  cfg.n_verbs = 7;
  cfg.n_nouns = 1;
  const RUModel model = RUModel::create(cfg, 3);
  ad::Rng rng(1);
  Sample s;
  for (auto d : cfg.modality_dims) {
    FeatureMatrix fm{14, d, {}};
    for (std::size_t i = 0; i < 14 * d; ++i) fm.values.push_back(ad::uniform01(rng));
    s.modalities.push_back(fm);
  }
  const Batch batch = make_batch(std::span<const Sample>(&s, 1));
  const int last = cfg.s_enc + cfg.s_ant;
  bool ok = true;
  std::size_t taps = 0;
  for (auto mode : {ForwardMode::anticipation, ForwardMode::scp}) {
    for (auto fusion : {Fusion::matt(), Fusion::early()}) {
      ForwardTrace trace;
      ad::Tape tape(false);
      ForwardOptions o;
      o.mode = mode;
      o.fusion = fusion;
      o.trace = &trace;
      forward(tape, model, batch, o);
      const std::size_t branches = fusion == Fusion::early() ? 1 : cfg.n_modalities();
      ok = ok && trace.taps.size() == branches * static_cast<std::size_t>(cfg.s_ant);
      std::size_t cells = 0;
      for (const auto& tap : trace.taps) {
        const int n_t = cfg.s_ant + cfg.s_enc - tap.step + 1;
        std::vector<int> expected;
        for (int j = 0; j < n_t; ++j) expected.push_back(mode == ForwardMode::scp ? tap.step + j : tap.step);
        ok = ok && tap.inputs == expected && (mode == ForwardMode::anticipation || tap.inputs.back() == last);
        cells += static_cast<std::size_t>(n_t);
        ++taps;
      }
      ok = ok && trace.unrolling_cells == cells;
    }
  }
  return {ok, std::to_string(taps) + " unroll traces checked against n_t and the consumed inputs"};
}

Verdict metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t comparisons = 0, mismatches = 0;
  double worst_marginal = 0.0;
  for (int f = 0; f < 100; ++f) {
    const std::size_t rows = 1 + rng() % 200, classes = 2 + rng() % 49;
    const std::size_t verbs = 1 + rng() % classes, nouns = 1 + rng() % classes;
    const auto t = oracle::random_table(rng, rows, classes, verbs, nouns);
    const auto vocab = oracle::vocab_for(classes, verbs, nouns);
    std::vector<std::size_t> set;
    for (std::size_t c = 0; c < classes; ++c)
      if (rng() % 3) set.push_back(c);
    if (set.empty()) set.push_back(t.rows[0].action);
    set.push_back(t.rows[0].action);
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    const std::size_t k = 1 + rng() % std::min<std::size_t>(classes, 10);

    auto expect = [&](bool same) { ++comparisons; mismatches += !same; };
    for (std::size_t s = 0; s < 8; ++s) {
      expect(top_k_accuracy(t, k, s) == oracle::top_k(t, k, s));
      expect(mean_top_k_recall(t, k, s, set) == oracle::mean_recall(t, k, s, set));
    }
    for (const auto& r : t.rows) expect(time_to_action(t, r, k) == oracle::tta(t, r, k));
    expect(mean_tta(t, k) == oracle::mean_tta(t, k));
    for (const auto& r : t.rows) {
      for (bool verbs_axis : {true, false}) {
        const auto lib = marginalize(r.scores[4], vocab, verbs_axis ? Axis::verb : Axis::noun);
        const auto ref = oracle::marginal(r.scores[4], vocab, verbs_axis);
        for (std::size_t j = 0; j < lib.size(); ++j) worst_marginal = std::max(worst_marginal, std::abs(lib[j] - ref[j]));
      }
    }
  }
  const double secs = seconds_since(t0);
  // Marginals are sums of exponentials; the oracle runs in extended precision,
  // so agreement is to within double rounding.
  const bool ok = mismatches == 0 && worst_marginal < 1e-12 && secs < 60.0;
  return {ok, std::to_string(comparisons) + " metric values, " + std::to_string(mismatches) +
                  " mismatches, marginal max |diff| " + sci(worst_marginal) + ", " +
                  fmt(secs, 1) + " s"};
}

Verdict overfit() {
  const auto t0 = Clock::now();
  RunConfig rc = desk(11);
  rc.data.n_train_videos = 2;
  rc.data.n_val_videos = 1;
  rc.model.hidden = 64;
  Prepared p = prepare(rc);
  RUModel model = RUModel::create(p.model, rc.train.seed);
  const auto& train = p.train_samples;
  int first_hit = 0;
  StageSpec spec{"joint", ForwardMode::anticipation, Fusion::matt(), 300,
                 [&](const RUModel& m, int epoch) {
                   const auto table = run_inference(m, train, ForwardMode::anticipation, Fusion::matt()).table;
                   const double acc = top_k_accuracy(table, 1, table.n_steps() - 1);
                   if (acc >= 95.0 && first_hit == 0) first_hit = epoch;
                   return acc;
                 }};
  TrainConfig tc = p.train;
  tc.batch_size = 20;
  ad::Rng rng(rc.train.seed);
  const auto rep = train_stage(model, train, {}, spec, tc, rng);
  const double final_acc = top1_at(model, train, Fusion::matt(), 0.25);
  const double secs = seconds_since(t0);
  const bool ok = train.size() == 20 && final_acc >= 95.0 && first_hit > 0 && secs < 180.0;
  return {ok, std::to_string(train.size()) + " samples, train Top-1 " + fmt(final_acc, 1) +
                  "% at the final step, first >= 95% at epoch " + std::to_string(first_hit) + "/" +
                  std::to_string(rep.epochs.size()) + ", " + fmt(secs, 1) + " s"};
}

struct SeedRun {
  double single[2] = {0, 0};
  double late = 0, matt = 0, early = 0, matt_no_scp = 0;
  double weight_on_informative = 0;
  double seconds_fusion = 0;
};

SeedRun fusion_seed(std::uint64_t seed) {
  const RunConfig rc = desk(seed);
  Prepared p = prepare(rc);
  SeedRun out;
  const auto t0 = Clock::now();
  const auto& tr = p.train_samples;
  const auto& va = p.val_samples;
  const double tau = rc.eval.reference_tau_a;

  // Late fusion over independently trained branches; attention fusion
  // continues from the same branches with the joint stage.
  auto late = run_pipeline(p.model, p.train, Fusion::late(), tr, va);
  RUModel matt = late.model;
  ad::Rng joint_rng(seed + 7919);
  train_joint(matt, tr, va, p.train, joint_rng);
  auto early = run_pipeline(p.model, p.train, Fusion::early(), tr, va);
  for (std::size_t m = 0; m < 2; ++m) out.single[m] = top1_at(late.model, va, Fusion::single(m), tau);
  out.late = top1_at(late.model, va, Fusion::late(), tau);
  out.matt = top1_at(matt, va, Fusion::matt(), tau);
  out.early = top1_at(early.model, va, Fusion::early(), tau);
  out.seconds_fusion = seconds_since(t0);

  const auto inf = run_inference(matt, va, ForwardMode::anticipation, Fusion::matt());
  const std::size_t col = inf.table.step_at_time(tau);
  double sum = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) sum += inf.weights[i][col][p.data.validation_informative[i]];
  out.weight_on_informative = sum / static_cast<double>(va.size());

  TrainConfig no_scp = p.train;
  no_scp.use_scp = false;
  auto plain = run_pipeline(p.model, no_scp, Fusion::late(), tr, va);
  RUModel plain_matt = plain.model;
  ad::Rng plain_rng(seed + 7919);
  train_joint(plain_matt, tr, va, no_scp, plain_rng);
  out.matt_no_scp = top1_at(plain_matt, va, Fusion::matt(), tau);
  return out;
}

Verdict determinism() {
  const auto base = fs::temp_directory_path() / ("rulstm_accept_" + std::to_string(::getpid()));
  RunConfig rc = desk(5);
  rc.data.n_train_videos = 6;
  rc.data.n_val_videos = 3;
  rc.train.default_epochs = 3;
  rc.train.joint_epochs = 3;
  auto once = [&](const std::string& tag) {
    Prepared p = prepare(rc);
    auto res = run_pipeline(p.model, p.train, Fusion::matt(), p.train_samples, p.val_samples);
    const auto dir = base / tag;
    fs::create_directories(dir);
    save_checkpoint(dir / "model.ruck", res.model);
    std::ofstream(dir / "train_report.json") << res.reports_json().dump(2);
    const auto inf = run_inference(res.model, p.val_samples, ForwardMode::anticipation, Fusion::matt());
    std::ofstream(dir / "eval_report.json") << evaluate(inf.table, p.data.vocab, rc.eval).to_json().dump(2);
    save_score_table(dir / "scores.csv", inf.table);
  };
  once("a");
  once("b");
  auto slurp = [](const fs::path& f) {
    std::ifstream is(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  bool ok = true;
  std::size_t bytes = 0;
  for (const char* f : {"model.ruck", "train_report.json", "eval_report.json", "scores.csv"}) {
    const auto a = slurp(base / "a" / f);
    ok = ok && !a.empty() && a == slurp(base / "b" / f);
    bytes += a.size();
  }
  fs::remove_all(base);
  return {ok, "checkpoint, training report, evaluation report and scores identical (" +
                  std::to_string(bytes) + " bytes)"};
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

Verdict early_recognition() {
  const auto t0 = Clock::now();
  RunConfig rc = desk(3);
  rc.task = Protocol::early_recognition;
  Prepared p = prepare(rc);
  auto res = run_pipeline(p.model, p.train, Fusion::matt(), p.train_samples, p.val_samples);
  const auto table = run_inference(res.model, p.val_samples, ForwardMode::anticipation, Fusion::matt()).table;
  const auto rep = evaluate(table, p.data.vocab, rc.eval);
  const std::vector<double> rates = table.step_times;
  bool grid = table.early_recognition && p.model.s_enc == 0 && rates.size() == 8;
  for (std::size_t s = 0; grid && s < rates.size(); ++s) grid = rates[s] == static_cast<double>(s + 1) / 8.0;
  for (const auto& sample : p.val_samples) grid = grid && sample.sample_times.size() == 8;
  const double rho = spearman(rates, rep.top1_by_step);
  std::string curve;
  for (double a : rep.top1_by_step) curve += (curve.empty() ? "" : " ") + fmt(a, 1);
  return {grid && rho > 0.0, "8 rates 12.5%..100%, Top-1 [" + curve + "], Spearman rho " + fmt(rho, 3) +
                                 ", " + fmt(seconds_since(t0), 1) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; default is all of them.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  // Per-stage training progress would drown the verdict lines.
  std::clog.rdbuf(nullptr);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Verdict& v) {
    std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << v.detail << std::endl;
    failures += !v.pass;
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Verdict()>& f) {
    if (!selected(id)) return;
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "gradient integrity", gradient_integrity);
  guarded(2, "timing algebra", timing_algebra);
  guarded(3, "unrolling schedule", unrolling_schedule);
  guarded(4, "metric oracles", metric_oracles);
  guarded(5, "overfit capacity", overfit);

  std::vector<SeedRun> runs;
  std::string fusion_error;
  const bool fusion_study = selected(6) || selected(7) || selected(8);
  if (fusion_study) try {
    for (std::uint64_t seed : {1, 2, 3}) {
      runs.push_back(fusion_seed(seed));
      const auto& r = runs.back();
      std::cout << "      seed " << seed << ": single " << fmt(r.single[0], 1) << "/" << fmt(r.single[1], 1)
                << "  late " << fmt(r.late, 1) << "  matt " << fmt(r.matt, 1) << "  early " << fmt(r.early, 1)
                << "  matt w/o scp " << fmt(r.matt_no_scp, 1) << "  w_inf " << fmt(r.weight_on_informative, 3)
                << std::endl;
    }
  } catch (const std::exception& e) {
    fusion_error = e.what();
  }
  if (!fusion_study) {
  } else if (!fusion_error.empty()) {
    for (int id : {6, 7, 8}) report(id, "fusion study", {false, "error: " + fusion_error});
  } else {
    auto mean = [&](auto get) {
      double s = 0.0;
      for (const auto& r : runs) s += get(r);
      return s / static_cast<double>(runs.size());
    };
    const double s0 = mean([](const SeedRun& r) { return r.single[0]; });
    const double s1 = mean([](const SeedRun& r) { return r.single[1]; });
    const double late = mean([](const SeedRun& r) { return r.late; });
    const double matt = mean([](const SeedRun& r) { return r.matt; });
    const double early = mean([](const SeedRun& r) { return r.early; });
    const double secs = mean([](const SeedRun& r) { return r.seconds_fusion; }) * runs.size();
    const double best_single = std::max(s0, s1);
    const bool ordered = matt >= late && late >= early && std::min({matt, late, early}) >= best_single &&
                         matt - late >= 2.0 && secs < 900.0;
    report(6, "fusion ordering",
           {ordered, "mean Top-1@1s matt " + fmt(matt) + " >= late " + fmt(late) + " >= early " + fmt(early) +
                         ", best single " + fmt(best_single) + ", matt-late " + fmt(matt - late) + ", " +
                         fmt(secs, 0) + " s"});

    int scp_wins = 0;
    std::string pairs;
    for (const auto& r : runs) {
      scp_wins += r.matt >= r.matt_no_scp;
      pairs += (pairs.empty() ? "" : ", ") + fmt(r.matt, 1) + " vs " + fmt(r.matt_no_scp, 1);
    }
    report(7, "SCP effect direction", {scp_wins >= 2, "with vs without SCP: " + pairs + "; " +
                                                         std::to_string(scp_wins) + "/3 seeds"});

    const double w = mean([](const SeedRun& r) { return r.weight_on_informative; });
    report(8, "attention diagnostic",
           {w >= 0.5 + 0.1, "mean weight on the informative modality " + fmt(w, 3) + " (threshold 0.600)"});
  }

  guarded(9, "determinism", determinism);
  guarded(10, "early recognition", early_recognition);

  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
