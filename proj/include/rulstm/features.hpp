#pragma once

// Feature timelines, detection records and annotations; sample extraction for
// the anticipation and early-recognition protocols; on-disk formats.
//
// Timeline binary layout (little-endian):
//   "RUFT" | u8 version (1) | u32 name length | modality name bytes |
//   i32 D | u64 row count | rows of (f64 timestamp, D x f32)
// Timeline CSV: header "timestamp,v0,...,v{D-1}" then one row per timestamp.
// Annotations CSV: video_id,start_s,end_s,verb,noun,action
// Detections CSV:  video_id,timestamp,class_id,score,x1,y1,x2,y2

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rulstm/model.hpp"
#include "rulstm/sample.hpp"

namespace rulstm {

struct FeatureTimeline {
  std::string video_id;
  std::string modality;
  std::size_t dim = 0;
  std::vector<double> timestamps;  // strictly increasing
  std::vector<float> vectors;      // rows x dim

  std::size_t rows() const { return timestamps.size(); }
  std::span<const float> row(std::size_t r) const { return {vectors.data() + r * dim, dim}; }
  void append(double timestamp, std::span<const float> values);
  /// Orders rows by timestamp; DataError on duplicate timestamps.
  void sort_rows();
  /// DataError unless timestamps are strictly increasing and sizes agree.
  void validate() const;

  bool operator==(const FeatureTimeline&) const = default;
};

struct DetectionRecord {
  std::string video_id;
  double timestamp = 0.0;
  std::size_t class_id = 0;
  double score = 0.0;
  std::array<double, 4> box{};
};

/// Component j is the summed confidence of detections of class j.
std::vector<double> object_feature(std::span<const DetectionRecord> detections,
                                   std::size_t n_object_classes);

/// Object-presence timeline of one video on the given timestamps. A
/// detection contributes to the row whose timestamp matches within 1e-6 s.
FeatureTimeline build_object_timeline(const std::string& video_id, const std::string& modality,
                                      std::span<const DetectionRecord> detections,
                                      std::size_t n_object_classes,
                                      std::span<const double> timestamps);

/// Timelines of every modality, keyed by video.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::vector<std::string> modalities);

  const std::vector<std::string>& modalities() const { return modalities_; }
  std::size_t n_modalities() const { return modalities_.size(); }
  void add(std::size_t modality, FeatureTimeline timeline);
  /// DataError if the video has no timeline for the modality.
  const FeatureTimeline& get(std::size_t modality, const std::string& video_id) const;
  bool contains(std::size_t modality, const std::string& video_id) const;
  std::vector<std::string> video_ids(std::size_t modality) const;
  std::size_t dim(std::size_t modality) const;

 private:
  std::vector<std::string> modalities_;
  std::vector<std::map<std::string, FeatureTimeline>> timelines_;
};

/// Counts lookups that fell before the first timestamp and were clamped.
struct LookupStats {
  std::size_t clamped = 0;
};

/// Index of the row nearest in time; ties resolve to the earlier row.
std::size_t nearest_row(const FeatureTimeline& timeline, double time, LookupStats* stats = nullptr);

/// Target time of row t (1-based) for an action starting at start_s.
double anticipation_target_time(double start_s, int t, const RUModelConfig& cfg);

Sample extract_anticipation_sample(const FeatureStore& store, const ActionAnnotation& annotation,
                                   const RUModelConfig& cfg, LookupStats* stats = nullptr);

/// s_ant snippets spread uniformly over [start, end]; step k observes k/s_ant
/// of the action. Requires cfg.s_enc == 0.
Sample extract_early_recognition_sample(const FeatureStore& store,
                                        const ActionAnnotation& annotation,
                                        const RUModelConfig& cfg, LookupStats* stats = nullptr);

std::vector<Sample> extract_samples(const FeatureStore& store,
                                    std::span<const ActionAnnotation> annotations,
                                    const RUModelConfig& cfg, Protocol protocol,
                                    LookupStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Files

void save_timeline(const std::filesystem::path& path, const FeatureTimeline& timeline);
/// Loads by extension: ".csv" as text, anything else as the binary container.
/// The video id defaults to the file stem.
FeatureTimeline load_timeline(const std::filesystem::path& path, std::string video_id = {},
                              std::string modality = {});
void save_timeline_csv(const std::filesystem::path& path, const FeatureTimeline& timeline);

/// Expects <root>/<modality>/<video_id>.ruft (or .csv) for each modality.
FeatureStore load_feature_store(const std::filesystem::path& root,
                                const std::vector<std::string>& modalities);
void save_feature_store(const std::filesystem::path& root, const FeatureStore& store);

std::vector<DetectionRecord> load_detections(const std::filesystem::path& path);
void save_detections(const std::filesystem::path& path, std::span<const DetectionRecord> records);

std::vector<ActionAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path,
                      std::span<const ActionAnnotation> annotations);
/// DataError when class ids exceed the configured vocabularies or start >= end.
void validate_annotations(std::span<const ActionAnnotation> annotations, std::size_t n_verbs,
                          std::size_t n_nouns, std::size_t n_actions);

/// Named-tensor container: "RUCK" | u8 version | u32 len | JSON config header |
/// u32 count | per tensor (u32 len, name, u32 rank, u64 dims..., f64 values).
void save_checkpoint(const std::filesystem::path& path, const RUModel& model);
RUModel load_checkpoint(const std::filesystem::path& path);

/// DataError when the store's modality dims disagree with the model config.
void check_compatible(const RUModelConfig& cfg, const FeatureStore& store);

}  // namespace rulstm
