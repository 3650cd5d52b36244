#include "rulstm/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rulstm/errors.hpp"
#include "text_io.hpp"

namespace rulstm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T number(const std::string& section, const std::string& key, const std::string& value) {
  try {
    return text::parse_number<T>(value, section + "." + key, 0, "value");
  } catch (const ParseError&) {
    throw ConfigError("invalid value '" + value + "' for " + section + "." + key);
  }
}

bool on_off(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("invalid value '" + value + "' for " + section + "." + key +
                    " (expected on or off)");
}

std::vector<int> int_list(const std::string& section, const std::string& key,
                          const std::string& value) {
  std::vector<int> out;
  if (text::trim(value).empty()) return out;
  for (auto field : text::split(value, ','))
    out.push_back(number<int>(section, key, std::string(text::trim(field))));
  return out;
}

std::vector<SynthModality> modality_list(const std::string& value) {
  std::vector<SynthModality> out;
  for (auto field : text::split(value, ',')) {
    auto parts = text::split(text::trim(field), ':');
    if (parts.size() < 2 || parts.size() > 3 || (parts.size() == 3 && parts[2] != "object"))
      throw ConfigError("invalid modality '" + std::string(field) +
                        "' (expected name:dim or name:dim:object)");
    out.push_back({std::string(parts[0]),
                   number<std::size_t>("data", "modalities", std::string(parts[1])),
                   parts.size() == 3});
  }
  return out;
}

std::string modality_text(const std::vector<SynthModality>& mods) {
  std::string out;
  for (const auto& m : mods) {
    if (!out.empty()) out += ',';
    out += m.name + ":" + std::to_string(m.dim) + (m.object ? ":object" : "");
  }
  return out;
}

[[noreturn]] void unknown(const std::string& section, const std::string& key) {
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  train.seed = data.seed;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  RunConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

void RunConfig::apply_file(const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw ConfigError(path.string() + ": key '" + section + "' outside any section");
    for (const auto& [key, value] : body) set(section, key, value.data());
  }
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& raw) {
  const std::string value(text::trim(raw));
  if (section == "paths") {
    if (key == "data_dir") data_dir = value;
    else if (key == "output_dir") output_dir = value;
    else if (key == "features_root") features_root = value;
    else if (key == "train_annotations") train_annotations = value;
    else if (key == "val_annotations") val_annotations = value;
    else if (key == "detections") detections = value;
    else if (key == "vocab") vocab = value;
    else if (key == "checkpoint") checkpoint = value;
    else unknown(section, key);
  } else if (section == "run") {
    if (key == "task") {
      if (value == "anticipation") task = Protocol::anticipation;
      else if (value == "early_recognition") task = Protocol::early_recognition;
      else throw ConfigError("invalid task '" + value + "' (expected anticipation or early_recognition)");
    } else if (key == "fusion") {
      try {
        fusion = Fusion::parse(value);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "scp") {
      train.use_scp = on_off(section, key, value);
    } else {
      unknown(section, key);
    }
  } else if (section == "model") {
    if (key == "hidden") model.hidden = number<std::size_t>(section, key, value);
    else if (key == "dropout") model.dropout_p = number<double>(section, key, value);
    else if (key == "alpha") model.alpha = data.alpha = number<double>(section, key, value);
    else if (key == "s_enc") model.s_enc = data.s_enc = number<int>(section, key, value);
    else if (key == "s_ant") model.s_ant = data.s_ant = number<int>(section, key, value);
    else unknown(section, key);
  } else if (section == "train") {
    if (key == "lr") train.lr = number<double>(section, key, value);
    else if (key == "momentum") train.momentum = number<double>(section, key, value);
    else if (key == "batch_size") train.batch_size = number<std::size_t>(section, key, value);
    else if (key == "epochs") train.default_epochs = number<int>(section, key, value);
    else if (key == "scp_epochs") train.scp_epochs = int_list(section, key, value);
    else if (key == "branch_epochs") train.branch_epochs = int_list(section, key, value);
    else if (key == "joint_epochs") train.joint_epochs = number<int>(section, key, value);
    else if (key == "seed") train.seed = number<std::uint64_t>(section, key, value);
    else unknown(section, key);
  } else if (section == "eval") {
    if (key == "k") eval.k = number<std::size_t>(section, key, value);
    else if (key == "reference_tau_a") eval.reference_tau_a = number<double>(section, key, value);
    else unknown(section, key);
  } else if (section == "data") {
    if (key == "n_train_videos") data.n_train_videos = number<std::size_t>(section, key, value);
    else if (key == "n_val_videos") data.n_val_videos = number<std::size_t>(section, key, value);
    else if (key == "actions_per_video") data.actions_per_video = number<std::size_t>(section, key, value);
    else if (key == "n_actions") data.n_actions = number<std::size_t>(section, key, value);
    else if (key == "n_verbs") data.n_verbs = number<std::size_t>(section, key, value);
    else if (key == "n_nouns") data.n_nouns = number<std::size_t>(section, key, value);
    else if (key == "modalities") data.modalities = modality_list(value);
    else if (key == "schedule") data.schedule = parse_schedule(value);
    else if (key == "fixed_modality") data.fixed_modality = number<std::size_t>(section, key, value);
    else if (key == "noise_sigma") data.noise_sigma = number<double>(section, key, value);
    else if (key == "signal_scale") data.signal_scale = number<double>(section, key, value);
    else if (key == "distractor_scale") data.distractor_scale = number<double>(section, key, value);
    else if (key == "corruption_scale") data.corruption_scale = number<double>(section, key, value);
    else if (key == "action_duration") data.action_duration = number<double>(section, key, value);
    else if (key == "seed") data.seed = number<std::uint64_t>(section, key, value);
    else unknown(section, key);
  } else {
    throw ConfigError("unknown config section '" + section + "'");
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("invalid override '" + assignment + "' (expected section.key=value)");
  set(std::string(text::trim(assignment.substr(0, dot))),
      std::string(text::trim(assignment.substr(dot + 1, eq - dot - 1))), assignment.substr(eq + 1));
}

fs::path RunConfig::features_path() const {
  return features_root.empty() ? data_dir / "features" : features_root;
}
fs::path RunConfig::train_annotations_path() const {
  return train_annotations.empty() ? data_dir / "annotations_train.csv" : train_annotations;
}
fs::path RunConfig::val_annotations_path() const {
  return val_annotations.empty() ? data_dir / "annotations_val.csv" : val_annotations;
}
fs::path RunConfig::detections_path() const {
  return detections.empty() ? data_dir / "detections.csv" : detections;
}
fs::path RunConfig::vocab_path() const { return vocab.empty() ? data_dir / "vocab.json" : vocab; }
fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? output_dir / "model.ruck" : checkpoint;
}

std::vector<std::string> RunConfig::modality_names() const {
  std::vector<std::string> names;
  for (const auto& m : data.modalities) names.push_back(m.name);
  return names;
}

void RunConfig::require_inputs() const {
  for (const auto& p : {features_path(), train_annotations_path(), val_annotations_path(),
                        vocab_path()})
    if (!fs::exists(p)) throw ConfigError("missing input '" + p.string() + "'");
}

RUModelConfig RunConfig::model_config_for(const FeatureStore& store,
                                          const ActionVocabulary& voc) const {
  RUModelConfig cfg = model;
  cfg.modality_names = store.modalities();
  cfg.modality_dims.clear();
  for (std::size_t m = 0; m < store.n_modalities(); ++m) cfg.modality_dims.push_back(store.dim(m));
  cfg.n_actions = voc.n_actions();
  cfg.n_verbs = voc.n_verbs;
  cfg.n_nouns = voc.n_nouns;
  if (task == Protocol::early_recognition) cfg.s_enc = 0;
  cfg.validate();
  return cfg;
}

EarlyStopMetric RunConfig::early_stop_metric() const {
  return task == Protocol::early_recognition ? EarlyStopMetric::mean_top1_over_rates
                                             : EarlyStopMetric::top5_action_at_1s;
}

json RunConfig::to_json() const {
  return {{"task", task == Protocol::anticipation ? "anticipation" : "early_recognition"},
          {"fusion", fusion.name()},
          {"scp", train.use_scp},
          {"model",
           {{"hidden", model.hidden},
            {"dropout", model.dropout_p},
            {"alpha", model.alpha},
            {"s_enc", model.s_enc},
            {"s_ant", model.s_ant}}},
          {"train",
           {{"lr", train.lr},
            {"momentum", train.momentum},
            {"batch_size", train.batch_size},
            {"epochs", train.default_epochs},
            {"scp_epochs", train.scp_epochs},
            {"branch_epochs", train.branch_epochs},
            {"joint_epochs", train.joint_epochs},
            {"seed", train.seed}}},
          {"eval", {{"k", eval.k}, {"reference_tau_a", eval.reference_tau_a}}},
          {"data", data.to_json()},
          {"data_modalities", modality_text(data.modalities)}};
}

}  // namespace rulstm
