#include "calphys/augment.hpp"

#include <algorithm>
#include <cmath>

namespace calphys {

void AugmentSpec::validate() const {
  if (minus < 0 || plus < 0) throw Error("augmentation ranges must be non-negative");
  if (frames - minus < 2) throw Error("augmentation range leaves fewer than 2 frames");
}

SpatioTemporalMap crop_temporal(const SpatioTemporalMap& map, int start, int length) {
  if (start < 0 || length < 1 || static_cast<std::uint32_t>(start + length) > map.frames) {
    throw Error("insufficient frames");
  }
  SpatioTemporalMap out(map.channels, map.rois, static_cast<std::uint32_t>(length), map.fps);
  for (std::uint32_t c = 0; c < map.channels; ++c) {
    for (std::uint32_t m = 0; m < map.rois; ++m) {
      const auto src = map.data.begin() + static_cast<std::ptrdiff_t>(map.index(c, m, static_cast<std::size_t>(start)));
      std::copy(src, src + length, out.data.begin() + static_cast<std::ptrdiff_t>(out.index(c, m, 0)));
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo;
  double frac;
};

std::vector<Tap> linear_taps(std::size_t source_len, std::size_t target_len) {
  // Half-pixel alignment: sample spacing is exactly source_len / target_len,
  // so frequencies scale by that ratio.
  const double scale = static_cast<double>(source_len) / static_cast<double>(target_len);
  const double last = static_cast<double>(source_len - 1);
  std::vector<Tap> taps(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    const double pos = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, last);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    lo = std::min(lo, source_len - 1);
    double frac = pos - static_cast<double>(lo);
    if (lo == source_len - 1) frac = 0.0;
    taps[i] = {lo, frac};
  }
  return taps;
}

}  // namespace

std::vector<double> resample_linear(std::span<const double> x, std::size_t target_len) {
  if (x.size() < 2) throw Error("resampling needs at least 2 samples");
  if (target_len < 1) throw Error("resampling target is empty");
  std::vector<double> out(target_len);
  const auto taps = linear_taps(x.size(), target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    const auto [lo, frac] = taps[i];
    out[i] = frac == 0.0 ? x[lo] : (1.0 - frac) * x[lo] + frac * x[lo + 1];
  }
  return out;
}

SpatioTemporalMap resample_temporal(const SpatioTemporalMap& map, int source_len, int target_len) {
  if (source_len < 2) throw Error("source_len must be at least 2");
  if (target_len < 1) throw Error("target length must be positive");
  if (static_cast<std::uint32_t>(source_len) > map.frames) throw Error("insufficient frames");
  if (source_len == target_len) return crop_temporal(map, 0, source_len);
  SpatioTemporalMap out(map.channels, map.rois, static_cast<std::uint32_t>(target_len), map.fps);
  const auto taps = linear_taps(static_cast<std::size_t>(source_len), static_cast<std::size_t>(target_len));
  for (std::uint32_t c = 0; c < map.channels; ++c) {
    for (std::uint32_t m = 0; m < map.rois; ++m) {
      const float* row = map.data.data() + map.index(c, m, 0);
      float* dst = out.data.data() + out.index(c, m, 0);
      for (std::size_t i = 0; i < taps.size(); ++i) {
        const auto [lo, frac] = taps[i];
        dst[i] = frac == 0.0 ? row[lo]
                             : static_cast<float>((1.0 - frac) * static_cast<double>(row[lo]) +
                                                  frac * static_cast<double>(row[lo + 1]));
      }
    }
  }
  return out;
}

AugmentDraw draw_augment(const AugmentSpec& spec, int available_frames, std::mt19937_64& rng) {
  spec.validate();
  if (available_frames < spec.max_length()) throw Error("insufficient frames");
  std::uniform_int_distribution<int> length_dist(spec.min_length(), spec.max_length());
  AugmentDraw draw;
  draw.length = length_dist(rng);
  std::uniform_int_distribution<int> start_dist(0, available_frames - draw.length);
  draw.start = start_dist(rng);
  return draw;
}

std::pair<SpatioTemporalMap, SpatioTemporalMap> augment_pair(const SpatioTemporalMap& a, const SpatioTemporalMap& b,
                                                             const AugmentSpec& spec, const AugmentDraw& draw) {
  spec.validate();
  if (a.frames != b.frames || a.fps != b.fps) throw Error("clip pair is not synchronized");
  if (draw.length < 2) throw Error("source_len must be at least 2");
  const auto crop_a = crop_temporal(a, draw.start, draw.length);
  const auto crop_b = crop_temporal(b, draw.start, draw.length);
  return {resample_temporal(crop_a, draw.length, spec.frames), resample_temporal(crop_b, draw.length, spec.frames)};
}

std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x9e3779b9U};
  return std::mt19937_64(seq);
}

}  // namespace calphys
