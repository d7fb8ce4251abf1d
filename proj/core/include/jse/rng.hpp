#pragma once

#include <cstdint>
#include <string_view>

#include "jse/types.hpp"

namespace jse {

/// Deterministic random stream. Every consumer derives its own child stream
/// from the single experiment seed via split(), so adding or reordering
/// consumers never perturbs unrelated streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Child stream keyed by an integer. Children with distinct keys are
  /// statistically independent for simulation purposes.
  Rng split(std::uint64_t key) const;
  /// Child stream keyed by a label (hashed). Convenient for naming streams.
  Rng split(std::string_view label) const;

  std::uint64_t next_u64();
  /// Uniform draw in (0, 1].
  double uniform01();
  /// Standard normal draw (Box-Muller, cached spare).
  double gaussian();
  Vec3 gaussian3();

 private:
  Rng(std::uint64_t identity, int tag);

  std::uint64_t identity_;  // immutable stream identity; splits key off this
  std::uint64_t state_;     // advances with each draw
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace jse
