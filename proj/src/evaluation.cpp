#include "rulstm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rulstm/errors.hpp"
#include "text_io.hpp"

namespace rulstm {

std::string axis_name(Axis axis) {
  switch (axis) {
    case Axis::verb: return "verb";
    case Axis::noun: return "noun";
    case Axis::action: return "action";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Vocabulary

std::size_t ActionVocabulary::n_classes(Axis axis) const {
  switch (axis) {
    case Axis::verb: return n_verbs;
    case Axis::noun: return n_nouns;
    case Axis::action: return n_actions();
  }
  return 0;
}

const std::vector<std::size_t>& ActionVocabulary::many_shot(Axis axis) const {
  switch (axis) {
    case Axis::verb: return many_shot_verbs;
    case Axis::noun: return many_shot_nouns;
    default: return many_shot_actions;
  }
}

void ActionVocabulary::validate() const {
  for (std::size_t a = 0; a < actions.size(); ++a) {
    if (actions[a].verb >= n_verbs || actions[a].noun >= n_nouns) {
      throw DataError("vocabulary: action " + std::to_string(a) + " maps to (" +
                      std::to_string(actions[a].verb) + ", " + std::to_string(actions[a].noun) +
                      ") outside " + std::to_string(n_verbs) + " verbs x " + std::to_string(n_nouns) + " nouns");
    }
  }
  for (Axis axis : {Axis::verb, Axis::noun, Axis::action}) {
    for (std::size_t c : many_shot(axis)) {
      if (c >= n_classes(axis)) {
        throw DataError("vocabulary: many-shot " + axis_name(axis) + " " + std::to_string(c) +
                        " is not in the vocabulary");
      }
    }
  }
}

nlohmann::json vocabulary_to_json(const ActionVocabulary& vocab) {
  nlohmann::json j;
  j["n_verbs"] = vocab.n_verbs;
  j["n_nouns"] = vocab.n_nouns;
  auto& actions = j["actions"] = nlohmann::json::array();
  for (const auto& e : vocab.actions) actions.push_back({e.verb, e.noun});
  j["many_shot"] = {{"verbs", vocab.many_shot_verbs},
                    {"nouns", vocab.many_shot_nouns},
                    {"actions", vocab.many_shot_actions}};
  return j;
}

ActionVocabulary vocabulary_from_json(const nlohmann::json& j) {
  ActionVocabulary v;
  try {
    v.n_verbs = j.at("n_verbs").get<std::size_t>();
    v.n_nouns = j.at("n_nouns").get<std::size_t>();
    for (const auto& a : j.at("actions")) {
      v.actions.push_back({a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()});
    }
    if (j.contains("many_shot")) {
      const auto& ms = j.at("many_shot");
      v.many_shot_verbs = ms.value("verbs", std::vector<std::size_t>{});
      v.many_shot_nouns = ms.value("nouns", std::vector<std::size_t>{});
      v.many_shot_actions = ms.value("actions", std::vector<std::size_t>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  v.validate();
  return v;
}

void save_vocabulary(const std::filesystem::path& path, const ActionVocabulary& vocab) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << vocabulary_to_json(vocab).dump(2) << '\n';
}

ActionVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  try {
    return vocabulary_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tables

std::size_t ScoreRow::label(Axis axis) const {
  switch (axis) {
    case Axis::verb: return verb;
    case Axis::noun: return noun;
    case Axis::action: return action;
  }
  return action;
}

std::size_t ScoreTable::step_at_time(double value) const {
  for (std::size_t s = 0; s < step_times.size(); ++s) {
    if (std::abs(step_times[s] - value) < 1e-9) return s;
  }
  throw EvaluationError("score table has no column at " + text::format_number(value));
}

void ScoreTable::validate() const {
  if (steps.size() != step_times.size()) throw EvaluationError("score table: step grid is inconsistent");
  for (const auto& r : rows) {
    if (r.scores.size() != steps.size()) {
      throw EvaluationError("score table: sample '" + r.sample_id + "' has " +
                            std::to_string(r.scores.size()) + " columns, expected " +
                            std::to_string(steps.size()));
    }
    if (r.label(axis) >= n_classes) {
      throw EvaluationError("score table: sample '" + r.sample_id + "' label outside " +
                            std::to_string(n_classes) + " classes");
    }
    for (const auto& s : r.scores) {
      if (s.size() != n_classes) throw EvaluationError("score table: sample '" + r.sample_id + "' has a short score vector");
      for (double v : s) {
        if (!std::isfinite(v)) throw EvaluationError("score table: sample '" + r.sample_id + "' has a non-finite score");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  const double s = scores[target];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
  }
  return rank;
}

bool in_top_k(std::span<const double> scores, std::size_t target, std::size_t k) {
  return rank_of(scores, target) < k;
}

namespace {

void check_query(const ScoreTable& table, std::size_t k, std::size_t step) {
  if (k < 1 || k > table.n_classes) {
    throw ParameterError("k=" + std::to_string(k) + " must lie in [1, " +
                         std::to_string(table.n_classes) + "]");
  }
  if (step >= table.n_steps()) {
    throw ParameterError("column " + std::to_string(step) + " outside " + std::to_string(table.n_steps()) + " steps");
  }
}

}  // namespace

double top_k_accuracy(const ScoreTable& table, std::size_t k, std::size_t step) {
  check_query(table, k, step);
  if (table.rows.empty()) throw EvaluationError("top_k_accuracy: empty table");
  std::size_t hits = 0;
  for (const auto& r : table.rows) hits += in_top_k(r.scores[step], r.label(table.axis), k);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(table.rows.size());
}

double mean_top_k_recall(const ScoreTable& table, std::size_t k, std::size_t step,
                         std::span<const std::size_t> class_set) {
  check_query(table, k, step);
  if (class_set.empty()) throw EvaluationError("mean_top_k_recall: empty class set");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;  // class -> (hits, total)
  for (std::size_t c : class_set) per_class.emplace(c, std::make_pair(0, 0));
  for (const auto& r : table.rows) {
    auto it = per_class.find(r.label(table.axis));
    if (it == per_class.end()) continue;
    ++it->second.second;
    if (in_top_k(r.scores[step], it->first, k)) ++it->second.first;
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& [c, counts] : per_class) {
    if (counts.second == 0) continue;
    total += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    ++counted;
  }
  if (counted == 0) {
    throw EvaluationError("mean_top_k_recall: no class of the set occurs in the ground truth");
  }
  return 100.0 * total / static_cast<double>(counted);
}

double time_to_action(const ScoreTable& table, const ScoreRow& row, std::size_t k) {
  double best = 0.0;
  for (std::size_t s = 0; s < table.n_steps(); ++s) {
    if (in_top_k(row.scores[s], row.label(table.axis), k)) best = std::max(best, table.step_times[s]);
  }
  return best;
}

double mean_tta(const ScoreTable& table, std::size_t k) {
  if (table.rows.empty()) throw EvaluationError("mean_tta: empty table");
  double total = 0.0;
  for (const auto& r : table.rows) total += time_to_action(table, r, k);
  return total / static_cast<double>(table.rows.size());
}

std::vector<double> marginalize(std::span<const double> action_scores,
                                const ActionVocabulary& vocab, Axis axis) {
  if (action_scores.size() != vocab.n_actions()) {
    throw DataError("marginalize: " + std::to_string(action_scores.size()) +
                    " action scores but vocabulary maps " + std::to_string(vocab.n_actions()) + " actions");
  }
  if (axis == Axis::action) throw ParameterError("marginalize: axis must be verb or noun");
  const double mx = *std::max_element(action_scores.begin(), action_scores.end());
  std::vector<double> probs(action_scores.size());
  double z = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    probs[a] = std::exp(action_scores[a] - mx);
    z += probs[a];
  }
  std::vector<double> out(vocab.n_classes(axis), 0.0);
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const auto& e = vocab.actions[a];
    const std::size_t c = axis == Axis::verb ? e.verb : e.noun;
    if (c >= out.size()) throw DataError("marginalize: action " + std::to_string(a) + " is unmapped");
    out[c] += probs[a] / z;
  }
  return out;
}

ScoreTable marginalize_table(const ScoreTable& table, const ActionVocabulary& vocab, Axis axis) {
  if (table.axis != Axis::action) throw ParameterError("marginalize_table: input must rank actions");
  ScoreTable out;
  out.axis = axis;
  out.early_recognition = table.early_recognition;
  out.n_classes = vocab.n_classes(axis);
  out.steps = table.steps;
  out.step_times = table.step_times;
  out.rows.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    ScoreRow m = r;
    for (auto& s : m.scores) s = marginalize(s, vocab, axis);
    out.rows.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite report

EvaluationReport evaluate(const ScoreTable& table, const ActionVocabulary& vocab,
                          const EvaluationConfig& cfg) {
  table.validate();
  if (table.axis != Axis::action) throw EvaluationError("evaluate: table must rank actions");
  if (table.n_classes != vocab.n_actions()) {
    throw EvaluationError("evaluate: table has " + std::to_string(table.n_classes) +
                          " classes, vocabulary " + std::to_string(vocab.n_actions()));
  }
  if (table.n_steps() == 0) throw EvaluationError("evaluate: table has no steps");
  EvaluationReport rep;
  rep.early_recognition = table.early_recognition;
  rep.k = cfg.k;
  rep.step_times = table.step_times;
  for (std::size_t s = 0; s < table.n_steps(); ++s) {
    rep.top_k_by_step.push_back(top_k_accuracy(table, cfg.k, s));
    rep.top1_by_step.push_back(top_k_accuracy(table, 1, s));
  }
  double sum = 0.0;
  for (double v : rep.top1_by_step) sum += v;
  rep.mean_top1_over_steps = sum / static_cast<double>(rep.top1_by_step.size());
  if (table.early_recognition) return rep;

  rep.reference_tau_a = cfg.reference_tau_a;
  const std::size_t ref = table.step_at_time(cfg.reference_tau_a);
  const ScoreTable verbs = marginalize_table(table, vocab, Axis::verb);
  const ScoreTable nouns = marginalize_table(table, vocab, Axis::noun);
  const ScoreTable* per_axis[3] = {&verbs, &nouns, &table};
  const Axis axes[3] = {Axis::verb, Axis::noun, Axis::action};
  for (int a = 0; a < 3; ++a) {
    const ScoreTable& t = *per_axis[a];
    const std::size_t k = std::min(cfg.k, t.n_classes);
    rep.top_k_at_reference[a] = top_k_accuracy(t, k, ref);
    std::vector<std::size_t> set = vocab.many_shot(axes[a]);
    if (set.empty()) {
      for (std::size_t c = 0; c < t.n_classes; ++c) set.push_back(c);
    }
    rep.mean_recall_at_reference[a] = mean_top_k_recall(t, k, ref, set);
    rep.mean_tta_k[a] = mean_tta(t, k);
  }
  return rep;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["task"] = early_recognition ? "early_recognition" : "anticipation";
  j[early_recognition ? "observation_rates" : "tau_a"] = step_times;
  j["top_k_action_by_step"] = top_k_by_step;
  j["top1_action_by_step"] = top1_by_step;
  j["mean_top1_over_steps"] = mean_top1_over_steps;
  if (!early_recognition) {
    j["reference_tau_a"] = reference_tau_a;
    const char* names[3] = {"verb", "noun", "action"};
    for (int a = 0; a < 3; ++a) {
      j["top_k_at_reference"][names[a]] = top_k_at_reference[a];
      j["mean_top_k_recall_at_reference"][names[a]] = mean_recall_at_reference[a];
      j["mean_tta"][names[a]] = mean_tta_k[a];
    }
  }
  return j;
}

std::string EvaluationReport::to_text() const {
  std::ostringstream os;
  char buf[64];
  const std::string kk = std::to_string(k);
  if (early_recognition) {
    os << "Top-1 ACTION Accuracy% @ observation rate\n";
  } else {
    os << "Top-" << kk << " ACTION Accuracy% @ different tau_a(s)\n";
  }
  for (double t : step_times) {
    std::snprintf(buf, sizeof(buf), early_recognition ? "%8.1f%%" : "%8.2f", early_recognition ? 100.0 * t : t);
    os << buf;
  }
  os << '\n';
  for (double v : early_recognition ? top1_by_step : top_k_by_step) {
    std::snprintf(buf, sizeof(buf), "%8.2f", v);
    os << buf;
  }
  os << '\n';
  if (early_recognition) return os.str();

  std::snprintf(buf, sizeof(buf), "%.2f", reference_tau_a);
  os << '\n' << std::string(26, ' ') << "    VERB    NOUN  ACTION\n";
  auto line = [&](const std::string& label, const double* v, const char* fmt) {
    std::snprintf(buf, sizeof(buf), "%-26s", label.c_str());
    os << buf;
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof(buf), fmt, v[a]);
      os << buf;
    }
    os << '\n';
  };
  std::snprintf(buf, sizeof(buf), "%g", reference_tau_a);
  const std::string at = std::string(" @") + buf + "s";
  line("Top-" + kk + " Acc.%" + at, top_k_at_reference, "%8.2f");
  line("M. Top-" + kk + " Rec.%" + at, mean_recall_at_reference, "%8.2f");
  line("Mean TtA(" + kk + ")", mean_tta_k, "%8.2f");
  return os.str();
}

// ---------------------------------------------------------------------------
// Score table files

void save_score_table(const std::filesystem::path& path, const ScoreTable& table) {
  table.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "sample_id,step,tau_a,gt_verb,gt_noun,gt_action";
  for (std::size_t c = 0; c < table.n_classes; ++c) os << ",score_" << c;
  os << '\n';
  for (const auto& r : table.rows) {
    for (std::size_t s = 0; s < table.n_steps(); ++s) {
      os << r.sample_id << ',' << table.steps[s] << ',' << text::format_number(table.step_times[s]) << ','
         << r.verb << ',' << r.noun << ',' << r.action;
      for (double v : r.scores[s]) os << ',' << text::format_number(v);
      os << '\n';
    }
  }
}

ScoreTable load_score_table(const std::filesystem::path& path, bool early_recognition) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  const std::string file = path.string();
  ScoreTable table;
  table.early_recognition = early_recognition;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError(file + ": empty score table");
  ++line_no;
  const auto header = text::split(line);
  if (header.size() < 7 || text::trim(header[0]) != "sample_id") {
    throw ParseError(text::where(file, line_no) + "missing score table header");
  }
  table.n_classes = header.size() - 6;
  std::map<std::string, std::size_t> index;
  while (std::getline(is, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line);
    if (f.size() != header.size()) {
      throw ParseError(text::where(file, line_no) + "expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(f.size()));
    }
    const std::string id(text::trim(f[0]));
    const int step = text::parse_number<int>(f[1], file, line_no, "step");
    const double time = text::parse_number<double>(f[2], file, line_no, "tau_a");
    auto [it, inserted] = index.emplace(id, table.rows.size());
    if (inserted) {
      ScoreRow r;
      r.sample_id = id;
      r.verb = text::parse_number<std::size_t>(f[3], file, line_no, "gt_verb");
      r.noun = text::parse_number<std::size_t>(f[4], file, line_no, "gt_noun");
      r.action = text::parse_number<std::size_t>(f[5], file, line_no, "gt_action");
      table.rows.push_back(std::move(r));
    }
    ScoreRow& r = table.rows[it->second];
    const std::size_t col = r.scores.size();
    if (it->second == 0) {
      table.steps.push_back(step);
      table.step_times.push_back(time);
    } else if (col >= table.steps.size() || table.steps[col] != step) {
      throw ParseError(text::where(file, line_no) + "sample '" + id + "' does not follow the step grid");
    }
    std::vector<double> scores;
    scores.reserve(table.n_classes);
    for (std::size_t c = 6; c < f.size(); ++c) scores.push_back(text::parse_number<double>(f[c], file, line_no, "score"));
    r.scores.push_back(std::move(scores));
  }
  table.validate();
  return table;
}

}  // namespace rulstm
