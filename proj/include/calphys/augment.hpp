#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

#include "calphys/types.hpp"

namespace calphys {

/// Temporal augmentation settings. Clip lengths are drawn from
/// [frames - minus, frames + plus] and resampled to `frames`.
struct AugmentSpec {
  int frames = 150;
  int minus = 30;
  int plus = 60;
  std::uint64_t seed = 0;

  void validate() const;
  int min_length() const { return frames - minus; }
  int max_length() const { return frames + plus; }
};

/// One random draw shared by both cameras of a clip pair.
struct AugmentDraw {
  int start = 0;
  int length = 0;

  bool operator==(const AugmentDraw&) const = default;
};

/// Frames [start, start + length) of `map`.
SpatioTemporalMap crop_temporal(const SpatioTemporalMap& map, int start, int length);

/// Takes the first `source_len` frames and linearly resamples every (c, m)
/// row to `target_len` frames. Output sample i sits at source position
/// (i + 0.5) * source_len / target_len - 0.5, clamped to the row. fps is
/// unchanged.
SpatioTemporalMap resample_temporal(const SpatioTemporalMap& map, int source_len, int target_len);

/// Same rule for a 1D series.
std::vector<double> resample_linear(std::span<const double> x, std::size_t target_len);

/// Draws a clip length uniformly over the augmentation range and a start
/// frame uniformly over the positions where that length fits.
AugmentDraw draw_augment(const AugmentSpec& spec, int available_frames, std::mt19937_64& rng);

/// Crops both synchronized maps at the same start with the same length and
/// resamples each to spec.frames.
std::pair<SpatioTemporalMap, SpatioTemporalMap> augment_pair(const SpatioTemporalMap& a, const SpatioTemporalMap& b,
                                                             const AugmentSpec& spec, const AugmentDraw& draw);

/// Independent RNG stream for pair `index` under `seed`.
std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t index);

}  // namespace calphys
