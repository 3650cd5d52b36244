#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rulstm {

enum class Protocol { anticipation, early_recognition };

struct ActionAnnotation {
  std::string video_id;
  double start = 0.0;  // seconds
  double end = 0.0;
  std::size_t verb = 0;
  std::size_t noun = 0;
  std::size_t action = 0;
};

/// Dense row-major matrix of feature values, one row per time-step.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

/// One action instance: per-modality feature rows for every processed time-step.
struct Sample {
  ActionAnnotation annotation;
  std::vector<FeatureMatrix> modalities;
  Protocol protocol = Protocol::anticipation;
  /// Target time (seconds) of each row; kept for diagnostics.
  std::vector<double> sample_times;
};

}  // namespace rulstm
