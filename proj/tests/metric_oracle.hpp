#pragma once

// Brute-force reference implementations of the ranking metrics and random
// score fixtures. Written independently of the library: ranks come from a
// full sort, recalls from explicit per-class counters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "rulstm/evaluation.hpp"

namespace oracle {

// Position of target after sorting classes by descending score, then
// ascending id.
inline std::size_t sorted_position(const std::vector<double>& scores, std::size_t target) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return static_cast<std::size_t>(std::find(idx.begin(), idx.end(), target) - idx.begin());
}

inline bool hit(const std::vector<double>& scores, std::size_t target, std::size_t k) {
  return sorted_position(scores, target) < k;
}

inline double top_k(const rulstm::ScoreTable& t, std::size_t k, std::size_t col) {
  std::size_t hits = 0;
  for (const auto& r : t.rows) hits += hit(r.scores[col], r.label(t.axis), k);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(t.rows.size());
}

inline double mean_recall(const rulstm::ScoreTable& t, std::size_t k, std::size_t col,
                          const std::vector<std::size_t>& set) {
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;  // class -> (hits, total)
  for (const auto& r : t.rows) {
    const std::size_t c = r.label(t.axis);
    if (std::find(set.begin(), set.end(), c) == set.end()) continue;
    counts[c].second += 1;
    counts[c].first += hit(r.scores[col], c, k);
  }
  // Fractions summed in class order, scaled once: the convention the metric
  // is specified with, so results are comparable bit for bit.
  double sum = 0.0;
  for (const auto& [c, ht] : counts) sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return counts.empty() ? -1.0 : 100.0 * sum / static_cast<double>(counts.size());
}

inline double tta(const rulstm::ScoreTable& t, const rulstm::ScoreRow& r, std::size_t k) {
  double best = 0.0;
  for (std::size_t s = 0; s < t.n_steps(); ++s)
    if (hit(r.scores[s], r.label(t.axis), k)) best = std::max(best, t.step_times[s]);
  return best;
}

inline double mean_tta(const rulstm::ScoreTable& t, std::size_t k) {
  double sum = 0.0;
  for (const auto& r : t.rows) sum += tta(t, r, k);
  return sum / static_cast<double>(t.rows.size());
}

/// Random anticipation table on the default eight-step grid. Scores are drawn
/// from a small integer range so ties are frequent.
inline rulstm::ScoreTable random_table(std::mt19937_64& rng, std::size_t n_rows, std::size_t n_classes,
                                       std::size_t n_verbs, std::size_t n_nouns) {
  rulstm::ScoreTable t;
  t.n_classes = n_classes;
  for (int s = 0; s < 8; ++s) {
    t.steps.push_back(7 + s);
    t.step_times.push_back(2.0 - 0.25 * s);
  }
  std::uniform_int_distribution<int> score(0, 6);
  for (std::size_t i = 0; i < n_rows; ++i) {
    rulstm::ScoreRow r;
    r.sample_id = "s" + std::to_string(i);
    r.action = rng() % n_classes;
    r.verb = r.action % n_verbs;
    r.noun = r.action % n_nouns;
    for (int s = 0; s < 8; ++s) {
      std::vector<double> v(n_classes);
      for (auto& x : v) x = 0.5 * score(rng);
      r.scores.push_back(std::move(v));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline rulstm::ActionVocabulary vocab_for(std::size_t n_classes, std::size_t n_verbs, std::size_t n_nouns) {
  rulstm::ActionVocabulary v;
  v.n_verbs = n_verbs;
  v.n_nouns = n_nouns;
  for (std::size_t a = 0; a < n_classes; ++a) v.actions.push_back({a % n_verbs, a % n_nouns});
  return v;
}

/// Softmax then per-group sums, computed with long double.
inline std::vector<double> marginal(const std::vector<double>& scores, const rulstm::ActionVocabulary& v,
                                    bool verbs) {
  long double mx = *std::max_element(scores.begin(), scores.end());
  long double z = 0;
  for (double s : scores) z += std::exp(static_cast<long double>(s) - mx);
  std::vector<double> out(verbs ? v.n_verbs : v.n_nouns, 0.0);
  for (std::size_t a = 0; a < scores.size(); ++a) {
    const std::size_t g = verbs ? v.actions[a].verb : v.actions[a].noun;
    out[g] += static_cast<double>(std::exp(static_cast<long double>(scores[a]) - mx) / z);
  }
  return out;
}

}  // namespace oracle
