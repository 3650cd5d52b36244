#include "rulstm/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rulstm/errors.hpp"
#include "text_io.hpp"

namespace rulstm {

namespace fs = std::filesystem;

namespace {

// ---- little-endian binary helpers -----------------------------------------

template <typename T>
void put(std::ostream& os, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(bytes, sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string file) : is_(is), file_(std::move(file)) {}

  template <typename T>
  T get(const char* what) {
    char bytes[sizeof(T)];
    if (!is_.read(bytes, sizeof(T))) fail(what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string get_string(const char* what, std::size_t limit = 1u << 24) {
    const auto n = get<std::uint32_t>(what);
    if (n > limit) throw ParseError(file_ + ": implausible length for " + what);
    std::string s(n, '\0');
    if (n && !is_.read(s.data(), n)) fail(what);
    return s;
  }

  void expect_magic(const char magic[4]) {
    char got[4];
    if (!is_.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
      throw ParseError(file_ + ": bad magic, expected '" + std::string(magic, 4) + "'");
    }
  }

  [[noreturn]] void fail(const char* what) const {
    throw ParseError(file_ + ": truncated file while reading " + what);
  }

  const std::string& file() const { return file_; }

 private:
  std::istream& is_;
  std::string file_;
};

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return is;
}

bool is_header(std::string_view line, std::string_view first_field) {
  return text::trim(text::split(line)[0]) == first_field;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureTimeline

void FeatureTimeline::append(double timestamp, std::span<const float> values) {
  if (values.size() != dim) {
    throw DimensionError("timeline row of width " + std::to_string(values.size()) +
                         " appended to timeline of width " + std::to_string(dim));
  }
  timestamps.push_back(timestamp);
  vectors.insert(vectors.end(), values.begin(), values.end());
}

void FeatureTimeline::sort_rows() {
  std::vector<std::size_t> order(rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return timestamps[a] < timestamps[b]; });
  std::vector<double> ts;
  std::vector<float> vs;
  ts.reserve(rows());
  vs.reserve(vectors.size());
  for (std::size_t i : order) {
    ts.push_back(timestamps[i]);
    auto r = row(i);
    vs.insert(vs.end(), r.begin(), r.end());
  }
  timestamps = std::move(ts);
  vectors = std::move(vs);
  validate();
}

void FeatureTimeline::validate() const {
  if (vectors.size() != timestamps.size() * dim) {
    throw DataError("timeline " + video_id + "/" + modality + ": " + std::to_string(vectors.size()) +
                    " values for " + std::to_string(rows()) + " rows of width " + std::to_string(dim));
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i] > timestamps[i - 1])) {
      throw DataError("timeline " + video_id + "/" + modality +
                      ": timestamps not strictly increasing at row " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Object-presence features

std::vector<double> object_feature(std::span<const DetectionRecord> detections,
                                   std::size_t n_object_classes) {
  std::vector<double> feature(n_object_classes, 0.0);
  for (const auto& d : detections) {
    if (d.class_id >= n_object_classes) {
      throw DataError("detection of video '" + d.video_id + "' at " + text::format_number(d.timestamp) +
                      "s has class " + std::to_string(d.class_id) + " outside [0, " +
                      std::to_string(n_object_classes) + ")");
    }
    feature[d.class_id] += d.score;
  }
  return feature;
}

FeatureTimeline build_object_timeline(const std::string& video_id, const std::string& modality,
                                      std::span<const DetectionRecord> detections,
                                      std::size_t n_object_classes,
                                      std::span<const double> timestamps) {
  FeatureTimeline tl;
  tl.video_id = video_id;
  tl.modality = modality;
  tl.dim = n_object_classes;
  std::vector<std::vector<DetectionRecord>> per_row(timestamps.size());
  for (const auto& d : detections) {
    if (d.video_id != video_id) continue;
    auto it = std::lower_bound(timestamps.begin(), timestamps.end(), d.timestamp - 1e-6);
    if (it != timestamps.end() && std::abs(*it - d.timestamp) <= 1e-6) {
      per_row[static_cast<std::size_t>(it - timestamps.begin())].push_back(d);
    }
  }
  std::vector<float> row(n_object_classes);
  for (std::size_t r = 0; r < timestamps.size(); ++r) {
    const auto f = object_feature(per_row[r], n_object_classes);
    std::transform(f.begin(), f.end(), row.begin(), [](double v) { return static_cast<float>(v); });
    tl.append(timestamps[r], row);
  }
  tl.validate();
  return tl;
}

// ---------------------------------------------------------------------------
// FeatureStore

FeatureStore::FeatureStore(std::vector<std::string> modalities)
    : modalities_(std::move(modalities)), timelines_(modalities_.size()) {}

void FeatureStore::add(std::size_t modality, FeatureTimeline timeline) {
  if (modality >= modalities_.size()) {
    throw DataError("feature store has no modality index " + std::to_string(modality));
  }
  timeline.validate();
  auto& slot = timelines_[modality];
  if (!slot.empty() && slot.begin()->second.dim != timeline.dim) {
    throw DataError("modality '" + modalities_[modality] + "' mixes widths " +
                    std::to_string(slot.begin()->second.dim) + " and " + std::to_string(timeline.dim));
  }
  const std::string id = timeline.video_id;
  slot.insert_or_assign(id, std::move(timeline));
}

const FeatureTimeline& FeatureStore::get(std::size_t modality, const std::string& video_id) const {
  if (modality >= timelines_.size()) {
    throw DataError("feature store has no modality index " + std::to_string(modality));
  }
  auto it = timelines_[modality].find(video_id);
  if (it == timelines_[modality].end()) {
    throw DataError("no '" + modalities_[modality] + "' timeline for video '" + video_id + "'");
  }
  return it->second;
}

bool FeatureStore::contains(std::size_t modality, const std::string& video_id) const {
  return modality < timelines_.size() && timelines_[modality].contains(video_id);
}

std::vector<std::string> FeatureStore::video_ids(std::size_t modality) const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : timelines_.at(modality)) ids.push_back(id);
  return ids;
}

std::size_t FeatureStore::dim(std::size_t modality) const {
  const auto& slot = timelines_.at(modality);
  return slot.empty() ? 0 : slot.begin()->second.dim;
}

// ---------------------------------------------------------------------------
// Sampling

std::size_t nearest_row(const FeatureTimeline& timeline, double time, LookupStats* stats) {
  if (timeline.rows() == 0) {
    throw DataError("timeline " + timeline.video_id + "/" + timeline.modality + " is empty");
  }
  const auto& ts = timeline.timestamps;
  if (time < ts.front()) {
    if (stats) ++stats->clamped;
    return 0;
  }
  auto it = std::lower_bound(ts.begin(), ts.end(), time);
  if (it == ts.end()) return ts.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  if (hi == 0) return 0;
  const std::size_t lo = hi - 1;
  return (time - ts[lo]) <= (ts[hi] - time) ? lo : hi;
}

double anticipation_target_time(double start_s, int t, const RUModelConfig& cfg) {
  return start_s - cfg.alpha * (cfg.total_steps() + 1 - t);
}

namespace {

Sample sample_at_times(const FeatureStore& store, const ActionAnnotation& annotation,
                       const RUModelConfig& cfg, std::vector<double> targets, Protocol protocol,
                       LookupStats* stats) {
  if (store.n_modalities() != cfg.n_modalities()) {
    throw DataError("feature store has " + std::to_string(store.n_modalities()) +
                    " modalities, config expects " + std::to_string(cfg.n_modalities()));
  }
  Sample s;
  s.annotation = annotation;
  s.protocol = protocol;
  for (std::size_t m = 0; m < store.n_modalities(); ++m) {
    const FeatureTimeline& tl = store.get(m, annotation.video_id);
    if (tl.dim != cfg.modality_dims[m]) {
      throw DataError("modality '" + store.modalities()[m] + "' has width " + std::to_string(tl.dim) +
                      ", config expects " + std::to_string(cfg.modality_dims[m]));
    }
    FeatureMatrix fm;
    fm.rows = targets.size();
    fm.cols = tl.dim;
    fm.values.reserve(fm.rows * fm.cols);
    for (double time : targets) {
      auto r = tl.row(nearest_row(tl, time, m == 0 ? stats : nullptr));
      fm.values.insert(fm.values.end(), r.begin(), r.end());
    }
    s.modalities.push_back(std::move(fm));
  }
  s.sample_times = std::move(targets);
  return s;
}

}  // namespace

Sample extract_anticipation_sample(const FeatureStore& store, const ActionAnnotation& annotation,
                                   const RUModelConfig& cfg, LookupStats* stats) {
  std::vector<double> targets;
  for (int t = 1; t <= cfg.total_steps(); ++t) {
    targets.push_back(anticipation_target_time(annotation.start, t, cfg));
  }
  return sample_at_times(store, annotation, cfg, std::move(targets), Protocol::anticipation, stats);
}

Sample extract_early_recognition_sample(const FeatureStore& store,
                                        const ActionAnnotation& annotation,
                                        const RUModelConfig& cfg, LookupStats* stats) {
  if (cfg.s_enc != 0) {
    throw ContractError("early recognition requires s_enc == 0, got " + std::to_string(cfg.s_enc));
  }
  if (!(annotation.end > annotation.start)) {
    throw DataError("action of video '" + annotation.video_id + "' has end <= start");
  }
  std::vector<double> targets;
  const double duration = annotation.end - annotation.start;
  for (int k = 1; k <= cfg.s_ant; ++k) {
    targets.push_back(annotation.start + duration * k / cfg.s_ant);
  }
  return sample_at_times(store, annotation, cfg, std::move(targets), Protocol::early_recognition,
                         stats);
}

std::vector<Sample> extract_samples(const FeatureStore& store,
                                    std::span<const ActionAnnotation> annotations,
                                    const RUModelConfig& cfg, Protocol protocol,
                                    LookupStats* stats) {
  std::vector<Sample> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) {
    out.push_back(protocol == Protocol::anticipation
                      ? extract_anticipation_sample(store, a, cfg, stats)
                      : extract_early_recognition_sample(store, a, cfg, stats));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timeline files

void save_timeline(const fs::path& path, const FeatureTimeline& timeline) {
  timeline.validate();
  if (path.extension() == ".csv") {
    save_timeline_csv(path, timeline);
    return;
  }
  auto os = open_out(path, true);
  os.write("RUFT", 4);
  put<std::uint8_t>(os, 1);
  put_string(os, timeline.modality);
  put<std::int32_t>(os, static_cast<std::int32_t>(timeline.dim));
  put<std::uint64_t>(os, timeline.rows());
  for (std::size_t r = 0; r < timeline.rows(); ++r) {
    put<double>(os, timeline.timestamps[r]);
    for (float v : timeline.row(r)) put<float>(os, v);
  }
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

void save_timeline_csv(const fs::path& path, const FeatureTimeline& timeline) {
  auto os = open_out(path, false);
  os << "timestamp";
  for (std::size_t j = 0; j < timeline.dim; ++j) os << ",v" << j;
  os << '\n';
  for (std::size_t r = 0; r < timeline.rows(); ++r) {
    os << text::format_number(timeline.timestamps[r]);
    for (float v : timeline.row(r)) os << ',' << text::format_number(v);
    os << '\n';
  }
}

namespace {

FeatureTimeline load_timeline_csv(const fs::path& path, std::string video_id, std::string modality) {
  auto is = open_in(path, false);
  const std::string file = path.string();
  FeatureTimeline tl;
  tl.video_id = std::move(video_id);
  tl.modality = std::move(modality);
  std::string line;
  std::size_t line_no = 0;
  bool have_dim = false;
  std::vector<float> row;
  while (std::getline(is, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    if (line_no == 1 && is_header(line, "timestamp")) {
      tl.dim = text::split(line).size() - 1;
      have_dim = true;
      continue;
    }
    const auto fields = text::split(line);
    if (!have_dim) {
      tl.dim = fields.size() - 1;
      have_dim = true;
    }
    if (fields.size() != tl.dim + 1) {
      throw ParseError(text::where(file, line_no) + "expected " + std::to_string(tl.dim + 1) +
                       " fields, got " + std::to_string(fields.size()));
    }
    const double ts = text::parse_number<double>(fields[0], file, line_no, "timestamp");
    row.clear();
    for (std::size_t j = 1; j < fields.size(); ++j) {
      row.push_back(text::parse_number<float>(fields[j], file, line_no, "feature value"));
    }
    tl.append(ts, row);
  }
  tl.sort_rows();
  return tl;
}

}  // namespace

FeatureTimeline load_timeline(const fs::path& path, std::string video_id, std::string modality) {
  if (video_id.empty()) video_id = path.stem().string();
  if (path.extension() == ".csv") return load_timeline_csv(path, std::move(video_id), std::move(modality));

  auto is = open_in(path, true);
  Reader rd(is, path.string());
  rd.expect_magic("RUFT");
  const auto version = rd.get<std::uint8_t>("version");
  if (version != 1) throw ParseError(rd.file() + ": unsupported version " + std::to_string(version));
  FeatureTimeline tl;
  tl.video_id = std::move(video_id);
  tl.modality = rd.get_string("modality name", 4096);
  if (!modality.empty() && modality != tl.modality) {
    throw DataError(rd.file() + ": holds modality '" + tl.modality + "', expected '" + modality + "'");
  }
  const auto dim = rd.get<std::int32_t>("dimension");
  if (dim < 1) throw ParseError(rd.file() + ": invalid dimension " + std::to_string(dim));
  tl.dim = static_cast<std::size_t>(dim);
  const auto rows = rd.get<std::uint64_t>("row count");
  std::vector<float> row(tl.dim);
  for (std::uint64_t r = 0; r < rows; ++r) {
    const double ts = rd.get<double>("row timestamp");
    for (auto& v : row) v = rd.get<float>("row values");
    tl.append(ts, row);
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ParseError(rd.file() + ": trailing bytes after " + std::to_string(rows) + " rows");
  }
  tl.validate();
  return tl;
}

FeatureStore load_feature_store(const fs::path& root, const std::vector<std::string>& modalities) {
  FeatureStore store(modalities);
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const fs::path dir = root / modalities[m];
    if (!fs::is_directory(dir)) throw DataError("missing feature directory '" + dir.string() + "'");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto ext = entry.path().extension();
      if (entry.is_regular_file() && (ext == ".ruft" || ext == ".csv")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) store.add(m, load_timeline(f, {}, f.extension() == ".csv" ? modalities[m] : ""));
  }
  return store;
}

void save_feature_store(const fs::path& root, const FeatureStore& store) {
  for (std::size_t m = 0; m < store.n_modalities(); ++m) {
    for (const auto& id : store.video_ids(m)) {
      save_timeline(root / store.modalities()[m] / (id + ".ruft"), store.get(m, id));
    }
  }
}

// ---------------------------------------------------------------------------
// Detections and annotations

std::vector<DetectionRecord> load_detections(const fs::path& path) {
  auto is = open_in(path, false);
  const std::string file = path.string();
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    if (line_no == 1 && is_header(line, "video_id")) continue;
    const auto f = text::split(line);
    if (f.size() != 8) {
      throw ParseError(text::where(file, line_no) + "expected 8 fields, got " + std::to_string(f.size()));
    }
    DetectionRecord d;
    d.video_id = std::string(text::trim(f[0]));
    d.timestamp = text::parse_number<double>(f[1], file, line_no, "timestamp");
    d.class_id = text::parse_number<std::size_t>(f[2], file, line_no, "class_id");
    d.score = text::parse_number<double>(f[3], file, line_no, "score");
    for (int k = 0; k < 4; ++k) d.box[k] = text::parse_number<double>(f[4 + k], file, line_no, "box coordinate");
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw DataError(text::where(file, line_no) + "detection score " + text::format_number(d.score) +
                      " outside [0, 1]");
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_detections(const fs::path& path, std::span<const DetectionRecord> records) {
  auto os = open_out(path, false);
  os << "video_id,timestamp,class_id,score,x1,y1,x2,y2\n";
  for (const auto& d : records) {
    os << d.video_id << ',' << text::format_number(d.timestamp) << ',' << d.class_id << ','
       << text::format_number(d.score);
    for (double b : d.box) os << ',' << text::format_number(b);
    os << '\n';
  }
}

std::vector<ActionAnnotation> load_annotations(const fs::path& path) {
  auto is = open_in(path, false);
  const std::string file = path.string();
  std::vector<ActionAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    if (line_no == 1 && is_header(line, "video_id")) continue;
    const auto f = text::split(line);
    if (f.size() != 6) {
      throw ParseError(text::where(file, line_no) + "expected 6 fields, got " + std::to_string(f.size()));
    }
    ActionAnnotation a;
    a.video_id = std::string(text::trim(f[0]));
    a.start = text::parse_number<double>(f[1], file, line_no, "start_s");
    a.end = text::parse_number<double>(f[2], file, line_no, "end_s");
    a.verb = text::parse_number<std::size_t>(f[3], file, line_no, "verb");
    a.noun = text::parse_number<std::size_t>(f[4], file, line_no, "noun");
    a.action = text::parse_number<std::size_t>(f[5], file, line_no, "action");
    if (!(a.start < a.end)) {
      throw DataError(text::where(file, line_no) + "start must precede end");
    }
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations(const fs::path& path, std::span<const ActionAnnotation> annotations) {
  auto os = open_out(path, false);
  os << "video_id,start_s,end_s,verb,noun,action\n";
  for (const auto& a : annotations) {
    os << a.video_id << ',' << text::format_number(a.start) << ',' << text::format_number(a.end) << ','
       << a.verb << ',' << a.noun << ',' << a.action << '\n';
  }
}

void validate_annotations(std::span<const ActionAnnotation> annotations, std::size_t n_verbs,
                          std::size_t n_nouns, std::size_t n_actions) {
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const std::string tag = "annotation " + std::to_string(i) + " (video '" + a.video_id + "'): ";
    if (!(a.start < a.end)) throw DataError(tag + "start must precede end");
    if (a.verb >= n_verbs) throw DataError(tag + "verb " + std::to_string(a.verb) + " out of range");
    if (a.noun >= n_nouns) throw DataError(tag + "noun " + std::to_string(a.noun) + " out of range");
    if (a.action >= n_actions) throw DataError(tag + "action " + std::to_string(a.action) + " out of range");
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json config_to_json(const RUModel& model) {
  const auto& c = model.config;
  nlohmann::json j;
  j["alpha"] = c.alpha;
  j["s_enc"] = c.s_enc;
  j["s_ant"] = c.s_ant;
  j["hidden"] = c.hidden;
  j["modality_dims"] = c.modality_dims;
  j["modality_names"] = c.modality_names;
  j["n_actions"] = c.n_actions;
  j["n_verbs"] = c.n_verbs;
  j["n_nouns"] = c.n_nouns;
  j["dropout_p"] = c.dropout_p;
  std::vector<int> trained;
  for (bool b : model.branch_trained) trained.push_back(b ? 1 : 0);
  j["branch_trained"] = trained;
  return j;
}

}  // namespace

void save_checkpoint(const fs::path& path, const RUModel& model) {
  auto os = open_out(path, true);
  os.write("RUCK", 4);
  put<std::uint8_t>(os, 1);
  put_string(os, config_to_json(model).dump());
  const auto params = model.named_parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_string(os, name);
    const auto& shape = p->value().shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(os, d);
    for (double v : p->value().data()) put<double>(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

RUModel load_checkpoint(const fs::path& path) {
  auto is = open_in(path, true);
  Reader rd(is, path.string());
  rd.expect_magic("RUCK");
  const auto version = rd.get<std::uint8_t>("version");
  if (version != 1) throw ParseError(rd.file() + ": unsupported version " + std::to_string(version));
  RUModelConfig cfg;
  std::vector<bool> trained;
  try {
    const auto j = nlohmann::json::parse(rd.get_string("config header"));
    cfg.alpha = j.at("alpha").get<double>();
    cfg.s_enc = j.at("s_enc").get<int>();
    cfg.s_ant = j.at("s_ant").get<int>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.modality_dims = j.at("modality_dims").get<std::vector<std::size_t>>();
    cfg.modality_names = j.at("modality_names").get<std::vector<std::string>>();
    cfg.n_actions = j.at("n_actions").get<std::size_t>();
    cfg.n_verbs = j.at("n_verbs").get<std::size_t>();
    cfg.n_nouns = j.at("n_nouns").get<std::size_t>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    for (int b : j.at("branch_trained").get<std::vector<int>>()) trained.push_back(b != 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(rd.file() + ": invalid config header: " + e.what());
  }
  RUModel model = RUModel::create(cfg, 0);
  if (trained.size() == model.branch_trained.size()) model.branch_trained = trained;

  auto params = model.named_parameters();
  const auto count = rd.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw DataError(rd.file() + ": holds " + std::to_string(count) + " tensors, model has " +
                    std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    const std::string stored = rd.get_string("tensor name", 4096);
    if (stored != name) throw DataError(rd.file() + ": expected tensor '" + name + "', found '" + stored + "'");
    const auto rank = rd.get<std::uint32_t>("tensor rank");
    ad::Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(rd.get<std::uint64_t>("tensor dims"));
    if (shape != p->value().shape()) {
      throw DataError(rd.file() + ": tensor '" + name + "' has shape " + ad::shape_string(shape) +
                      ", config implies " + ad::shape_string(p->value().shape()));
    }
    for (double& v : p->value().mutable_data()) v = rd.get<double>("tensor values");
  }
  return model;
}

void check_compatible(const RUModelConfig& cfg, const FeatureStore& store) {
  if (store.n_modalities() != cfg.n_modalities()) {
    throw DataError("features provide " + std::to_string(store.n_modalities()) +
                    " modalities, model expects " + std::to_string(cfg.n_modalities()));
  }
  for (std::size_t m = 0; m < cfg.n_modalities(); ++m) {
    if (store.dim(m) != cfg.modality_dims[m]) {
      throw DataError("modality '" + store.modalities()[m] + "' has width " + std::to_string(store.dim(m)) +
                      ", model expects " + std::to_string(cfg.modality_dims[m]));
    }
  }
}

}  // namespace rulstm
