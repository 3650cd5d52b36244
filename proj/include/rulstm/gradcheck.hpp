#pragma once

// Central finite-difference checks of the reverse-mode gradients, per op and
// for the whole model.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rulstm/autodiff.hpp"
#include "rulstm/model.hpp"

namespace rulstm {

struct GradCheckResult {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-3;

  bool passed() const { return max_rel_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-8). The floor keeps entries whose true
/// gradient is zero from dividing rounding noise by zero.
double gradient_relative_error(double analytic, double numeric);

/// f must rebuild the scalar loss from the leaves on the tape it is given.
/// Every element of every leaf is probed.
GradCheckResult gradient_check(const std::string& name, std::span<ad::Tensor> leaves,
                               const std::function<ad::Tensor(ad::Tape&)>& f,
                               double eps = 1e-4, double tolerance = 1e-3);

/// One check per tape op on random inputs.
std::vector<GradCheckResult> op_gradient_checks(std::uint64_t seed);

struct ModelCheckConfig {
  std::size_t hidden = 4;
  std::size_t n_modalities = 2;
  std::size_t n_actions = 5;
  std::size_t feature_dim = 3;
  std::size_t batch = 2;
  int s_enc = 2;
  int s_ant = 3;
  std::uint64_t seed = 11;
};

/// Whole-model checks: every parameter of the tiny model under each forward
/// mode and fusion, with dropout masks replayed from a fixed seed.
std::vector<GradCheckResult> model_gradient_checks(const ModelCheckConfig& cfg);

}  // namespace rulstm
