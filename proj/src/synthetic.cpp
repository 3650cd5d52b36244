#include "rulstm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "rulstm/autodiff.hpp"
#include "rulstm/errors.hpp"

namespace rulstm {

namespace {

using nlohmann::json;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <class T>
void shuffle(std::vector<T>& v, ad::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::string video_name(const std::string& split, std::size_t v) {
  std::string digits = std::to_string(v);
  return split + "_" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

struct Layout {
  std::size_t pre_rows;   // rows before each action start
  std::size_t act_rows;   // rows covered by the action, end row included
  std::size_t slot_rows;  // rows per action slot
};

Layout layout_of(const SynthConfig& cfg) {
  Layout l;
  l.pre_rows = static_cast<std::size_t>(cfg.s_enc + cfg.s_ant + 1);
  l.act_rows = static_cast<std::size_t>(std::llround(cfg.action_duration / cfg.alpha));
  l.slot_rows = l.pre_rows + l.act_rows + 2;
  return l;
}

// Per-modality class prototypes. Dense: unit Gaussian. Object: three object
// classes with confidences in [0.5, 1], the first tied to the noun.
std::vector<std::vector<std::vector<double>>> make_prototypes(const SynthConfig& cfg,
                                                              const ActionVocabulary& vocab,
                                                              ad::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> protos(cfg.modalities.size());
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    const auto& mod = cfg.modalities[m];
    for (std::size_t a = 0; a < cfg.n_actions; ++a) {
      std::vector<double> p(mod.dim, 0.0);
      if (!mod.object) {
        for (auto& v : p) v = normal(rng);
      } else {
        std::size_t first = vocab.actions[a].noun % mod.dim;
        p[first] = 0.5 + 0.5 * ad::uniform01(rng);
        for (std::size_t extra = 0; extra < std::min<std::size_t>(2, mod.dim - 1); ++extra) {
          std::size_t j = 0;
          do {
            j = rng() % mod.dim;
          } while (p[j] != 0.0);
          p[j] = 0.5 + 0.5 * ad::uniform01(rng);
        }
      }
      protos[m].push_back(std::move(p));
    }
  }
  return protos;
}

struct SplitResult {
  std::vector<ActionAnnotation> annotations;
  std::vector<std::size_t> informative;
};

SplitResult generate_split(const SynthConfig& cfg, const std::string& split,
                           std::uint64_t split_tag, std::size_t n_videos,
                           const ActionVocabulary& vocab,
                           const std::vector<std::vector<std::vector<double>>>& protos,
                           FeatureStore& store, std::vector<DetectionRecord>& detections) {
  const std::size_t M = cfg.modalities.size();
  const Layout lay = layout_of(cfg);
  const std::size_t n_samples = n_videos * cfg.actions_per_video;

  ad::Rng split_rng(mix(cfg.seed, split_tag));
  std::vector<std::size_t> labels(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) labels[i] = i % cfg.n_actions;
  shuffle(labels, split_rng);

  SplitResult out;
  out.informative.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    switch (cfg.schedule) {
      case InformativeSchedule::fixed: out.informative[i] = cfg.fixed_modality; break;
      case InformativeSchedule::alternate: out.informative[i] = i % M; break;
      case InformativeSchedule::random: out.informative[i] = split_rng() % M; break;
    }
  }

  for (std::size_t v = 0; v < n_videos; ++v) {
    const std::string vid = video_name(split, v);
    ad::Rng rng(mix(mix(cfg.seed, split_tag), v + 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n_rows = cfg.actions_per_video * lay.slot_rows;

    std::vector<double> timestamps(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) timestamps[r] = static_cast<double>(r) * cfg.alpha;

    // Signal amplitude and class shown by each modality at every row.
    std::vector<double> amplitude(n_rows, 0.0);
    std::vector<std::size_t> slot_of(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) slot_of[r] = r / lay.slot_rows;
    std::vector<std::vector<std::size_t>> shown(M, std::vector<std::size_t>(cfg.actions_per_video));
    std::vector<std::vector<double>> gain(M, std::vector<double>(cfg.actions_per_video, 0.0));
    std::vector<std::vector<double>> sigma(M, std::vector<double>(cfg.actions_per_video, 0.0));

    for (std::size_t a = 0; a < cfg.actions_per_video; ++a) {
      const std::size_t i = v * cfg.actions_per_video + a;
      const std::size_t label = labels[i];
      const std::size_t start_row = a * lay.slot_rows + lay.pre_rows;
      for (std::size_t k = 1; k <= static_cast<std::size_t>(cfg.s_ant); ++k) {
        amplitude[start_row - k] =
            static_cast<double>(cfg.s_ant + 1 - static_cast<int>(k)) / cfg.s_ant;
      }
      for (std::size_t r = start_row; r <= start_row + lay.act_rows; ++r) amplitude[r] = 1.0;
      for (std::size_t m = 0; m < M; ++m) {
        sigma[m][a] = cfg.noise_sigma * (m == out.informative[i] ? 1.0 : cfg.corruption_scale);
        if (m == out.informative[i]) {
          shown[m][a] = label;
          gain[m][a] = cfg.signal_scale;
        } else {
          std::size_t d = cfg.n_actions > 1 ? rng() % (cfg.n_actions - 1) : 0;
          if (d >= label) ++d;
          shown[m][a] = cfg.n_actions > 1 ? d : label;
          gain[m][a] = cfg.n_actions > 1 ? cfg.signal_scale * cfg.distractor_scale : 0.0;
        }
      }
      const double start = static_cast<double>(start_row) * cfg.alpha;
      const double end = static_cast<double>(start_row + lay.act_rows) * cfg.alpha;
      const auto& entry = vocab.actions[label];
      out.annotations.push_back({vid, start, end, entry.verb, entry.noun, label});
    }

    for (std::size_t m = 0; m < M; ++m) {
      const auto& mod = cfg.modalities[m];
      if (!mod.object) {
        FeatureTimeline tl{vid, mod.name, mod.dim, {}, {}};
        std::vector<float> row(mod.dim);
        for (std::size_t r = 0; r < n_rows; ++r) {
          const std::size_t a = slot_of[r];
          const double g = amplitude[r] * gain[m][a];
          const auto& p = protos[m][shown[m][a]];
          for (std::size_t j = 0; j < mod.dim; ++j)
            row[j] = static_cast<float>(g * p[j] + sigma[m][a] * normal(rng));
          tl.append(timestamps[r], row);
        }
        store.add(m, std::move(tl));
      } else {
        std::vector<DetectionRecord> dets;
        auto emit = [&](double t, std::size_t cls, double score) {
          score = std::clamp(score, 0.0, 1.0);
          if (score <= 0.0) return;
          double x1 = ad::uniform01(rng) * 0.5, y1 = ad::uniform01(rng) * 0.5;
          dets.push_back({vid, t, cls, score,
                          {x1, y1, x1 + 0.1 + 0.4 * ad::uniform01(rng),
                           y1 + 0.1 + 0.4 * ad::uniform01(rng)}});
        };
        for (std::size_t r = 0; r < n_rows; ++r) {
          const std::size_t a = slot_of[r];
          const double g = amplitude[r] * gain[m][a];
          const auto& p = protos[m][shown[m][a]];
          if (g > 0.0)
            for (std::size_t j = 0; j < mod.dim; ++j)
              if (p[j] > 0.0) emit(timestamps[r], j, g * p[j]);
          // Spurious detections of random classes.
          const std::size_t n_noise = rng() % (1 + static_cast<std::size_t>(std::ceil(2.0 * cfg.corruption_scale)));
          for (std::size_t s = 0; s < n_noise; ++s)
            emit(timestamps[r], rng() % mod.dim, std::abs(sigma[m][a] * normal(rng)));
        }
        store.add(m, build_object_timeline(vid, mod.name, dets, mod.dim, timestamps));
        detections.insert(detections.end(), dets.begin(), dets.end());
      }
    }
  }
  return out;
}

}  // namespace

std::string schedule_name(InformativeSchedule s) {
  switch (s) {
    case InformativeSchedule::fixed: return "fixed";
    case InformativeSchedule::alternate: return "alternate";
    case InformativeSchedule::random: return "random";
  }
  return "?";
}

InformativeSchedule parse_schedule(const std::string& text) {
  if (text == "fixed") return InformativeSchedule::fixed;
  if (text == "alternate") return InformativeSchedule::alternate;
  if (text == "random") return InformativeSchedule::random;
  throw ConfigError("unknown informative schedule '" + text +
                    "' (expected fixed, alternate or random)");
}

std::size_t SynthConfig::n_object_classes() const {
  for (const auto& m : modalities)
    if (m.object) return m.dim;
  return 0;
}

void SynthConfig::validate() const {
  if (n_verbs == 0 || n_nouns == 0 || n_actions == 0)
    throw ConfigError("synthetic vocabulary sizes must be positive");
  if (n_actions > n_verbs * n_nouns)
    throw ConfigError("n_actions (" + std::to_string(n_actions) + ") exceeds n_verbs*n_nouns (" +
                      std::to_string(n_verbs * n_nouns) + ")");
  if (modalities.empty()) throw ConfigError("synthetic config needs at least one modality");
  for (const auto& m : modalities) {
    if (m.dim < 1) throw ConfigError("modality '" + m.name + "' must have dim >= 1");
    if (m.name.empty()) throw ConfigError("modality names must be non-empty");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(signal_scale > 0.0)) throw ConfigError("signal_scale must be > 0");
  if (!(distractor_scale >= 0.0)) throw ConfigError("distractor_scale must be >= 0");
  if (!(corruption_scale >= 0.0)) throw ConfigError("corruption_scale must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (s_enc < 0 || s_ant < 1) throw ConfigError("need s_enc >= 0 and s_ant >= 1");
  if (!(action_duration >= alpha)) throw ConfigError("action_duration must cover a grid step");
  if (n_train_videos == 0 || actions_per_video == 0)
    throw ConfigError("need at least one training video and one action per video");
  if (schedule == InformativeSchedule::fixed && fixed_modality >= modalities.size())
    throw ConfigError("fixed_modality out of range");
}

json SynthConfig::to_json() const {
  json mods = json::array();
  for (const auto& m : modalities) mods.push_back({{"name", m.name}, {"dim", m.dim}, {"object", m.object}});
  return {{"n_train_videos", n_train_videos},
          {"n_val_videos", n_val_videos},
          {"actions_per_video", actions_per_video},
          {"n_actions", n_actions},
          {"n_verbs", n_verbs},
          {"n_nouns", n_nouns},
          {"modalities", mods},
          {"schedule", schedule_name(schedule)},
          {"fixed_modality", fixed_modality},
          {"noise_sigma", noise_sigma},
          {"signal_scale", signal_scale},
          {"distractor_scale", distractor_scale},
          {"corruption_scale", corruption_scale},
          {"alpha", alpha},
          {"s_enc", s_enc},
          {"s_ant", s_ant},
          {"action_duration", action_duration},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  try {
    SynthConfig c;
    c.n_train_videos = j.at("n_train_videos").get<std::size_t>();
    c.n_val_videos = j.at("n_val_videos").get<std::size_t>();
    c.actions_per_video = j.at("actions_per_video").get<std::size_t>();
    c.n_actions = j.at("n_actions").get<std::size_t>();
    c.n_verbs = j.at("n_verbs").get<std::size_t>();
    c.n_nouns = j.at("n_nouns").get<std::size_t>();
    c.modalities.clear();
    for (const auto& m : j.at("modalities"))
      c.modalities.push_back({m.at("name").get<std::string>(), m.at("dim").get<std::size_t>(),
                              m.at("object").get<bool>()});
    c.schedule = parse_schedule(j.at("schedule").get<std::string>());
    c.fixed_modality = j.at("fixed_modality").get<std::size_t>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.signal_scale = j.at("signal_scale").get<double>();
    c.distractor_scale = j.at("distractor_scale").get<double>();
    c.corruption_scale = j.at("corruption_scale").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.s_enc = j.at("s_enc").get<int>();
    c.s_ant = j.at("s_ant").get<int>();
    c.action_duration = j.at("action_duration").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic config: ") + e.what());
  }
}

json SynthDataset::manifest() const {
  std::vector<std::string> names;
  for (const auto& m : config.modalities) names.push_back(m.name);
  return {{"config", config.to_json()},
          {"modalities", names},
          {"oracle_informative", {{"train", train_informative}, {"val", validation_informative}}},
          {"files",
           {{"features", "features"},
            {"train_annotations", "annotations_train.csv"},
            {"val_annotations", "annotations_val.csv"},
            {"detections", "detections.csv"},
            {"vocab", "vocab.json"}}}};
}

SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset data;
  data.config = cfg;
  ad::Rng rng(mix(cfg.seed, 0));

  // Distinct (verb, noun) pairs per action.
  std::vector<std::size_t> pairs(cfg.n_verbs * cfg.n_nouns);
  std::iota(pairs.begin(), pairs.end(), std::size_t{0});
  shuffle(pairs, rng);
  auto& vocab = data.vocab;
  vocab.n_verbs = cfg.n_verbs;
  vocab.n_nouns = cfg.n_nouns;
  for (std::size_t a = 0; a < cfg.n_actions; ++a)
    vocab.actions.push_back({pairs[a] / cfg.n_nouns, pairs[a] % cfg.n_nouns});
  std::vector<bool> verb_used(cfg.n_verbs), noun_used(cfg.n_nouns);
  for (const auto& e : vocab.actions) verb_used[e.verb] = noun_used[e.noun] = true;
  for (std::size_t i = 0; i < cfg.n_verbs; ++i)
    if (verb_used[i]) vocab.many_shot_verbs.push_back(i);
  for (std::size_t i = 0; i < cfg.n_nouns; ++i)
    if (noun_used[i]) vocab.many_shot_nouns.push_back(i);
  vocab.many_shot_actions.resize(cfg.n_actions);
  std::iota(vocab.many_shot_actions.begin(), vocab.many_shot_actions.end(), std::size_t{0});

  const auto protos = make_prototypes(cfg, vocab, rng);

  std::vector<std::string> names;
  for (const auto& m : cfg.modalities) names.push_back(m.name);
  data.store = FeatureStore(names);

  auto tr = generate_split(cfg, "train", 1, cfg.n_train_videos, vocab, protos, data.store,
                           data.detections);
  auto va = generate_split(cfg, "val", 2, cfg.n_val_videos, vocab, protos, data.store,
                           data.detections);
  data.train = std::move(tr.annotations);
  data.train_informative = std::move(tr.informative);
  data.validation = std::move(va.annotations);
  data.validation_informative = std::move(va.informative);
  return data;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_feature_store(dir / "features", data.store);
  save_annotations(dir / "annotations_train.csv", data.train);
  save_annotations(dir / "annotations_val.csv", data.validation);
  save_detections(dir / "detections.csv", data.detections);
  save_vocabulary(dir / "vocab.json", data.vocab);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << data.manifest().dump(2) << '\n';
}

}  // namespace rulstm
