#pragma once

#include <array>
#include <vector>

#include "calphys/types.hpp"

namespace calphys {

inline constexpr double kBaselineWindowSeconds = 1.6;

/// Spatially averaged per-frame trace.
struct MeanTrace {
  enum class Source { Rgb, FlowVertical };
  Source source = Source::Rgb;
  double fps = 0.0;
  std::vector<std::array<double, 3>> rgb;  // Rgb source
  std::vector<double> values;              // FlowVertical source

  std::size_t size() const { return source == Source::Rgb ? rgb.size() : values.size(); }
};

/// Average over ROIs per frame (per channel for 3-channel maps).
MeanTrace mean_trace(const SpatioTemporalMap& map);

/// Chrominance projection X = 3R - 2G, Y = 1.5R + G - 1.5B on mean-normalized
/// channels, S = X - (sd(X)/sd(Y)) Y per window, Hann overlap-add.
Waveform chrom_wave(const MeanTrace& trace, double window_seconds = kBaselineWindowSeconds);

/// Plane-orthogonal-to-skin projection S1 = G - B, S2 = G + B - 2R on
/// mean-normalized channels, h = S1 + (sd(S1)/sd(S2)) S2 per window, Hann overlap-add.
Waveform pos_wave(const MeanTrace& trace, double window_seconds = kBaselineWindowSeconds);

enum class RrBenchmark { RgbMean, FlowMean };

/// Per-frame average over ROIs (and channels for RGB maps).
Waveform rr_benchmark_wave(const SpatioTemporalMap& map, RrBenchmark kind);

}  // namespace calphys
