#pragma once

// Prediction-network gradient regularizer: h_pred passes through unchanged in
// the forward pass while its gradient is scaled by alpha_m, which ramps
// linearly from 0 at step m1 to 1 at step m2.

#include <cstdint>
#include <string>

#include "rnnt/autodiff.hpp"

namespace rnnt {

struct Schedule {
  std::uint64_t m1 = 250;
  std::uint64_t m2 = 2000;

  void validate() const {
    if (m1 >= m2)
      throw ConfigError("schedule: m1 (" + std::to_string(m1) + ") must be less than m2 (" + std::to_string(m2) + ")");
  }
};

/// 0 before m1, 1 from m2 on, (m - m1) / (m2 - m1) in between.
inline double alpha_at(std::uint64_t m, const Schedule& s) {
  s.validate();
  if (m < s.m1) return 0.0;
  if (m >= s.m2) return 1.0;
  return static_cast<double>(m - s.m1) / static_cast<double>(s.m2 - s.m1);
}

template <AnyGraph G>
NodeId apply_regularizer(G& g, NodeId h_pred, std::uint64_t m, const Schedule& s) {
  return g.scale_gradient(h_pred, alpha_at(m, s));
}

}  // namespace rnnt
