#include "calphys/baselines.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "calphys/spectrum.hpp"

namespace calphys {

MeanTrace mean_trace(const SpatioTemporalMap& map) {
  map.validate();
  MeanTrace tr;
  tr.fps = map.fps;
  if (map.channels == 3) {
    tr.source = MeanTrace::Source::Rgb;
    tr.rgb.assign(map.frames, {0.0, 0.0, 0.0});
    for (std::uint32_t c = 0; c < 3; ++c) {
      for (std::uint32_t m = 0; m < map.rois; ++m) {
        for (std::uint32_t t = 0; t < map.frames; ++t) tr.rgb[t][c] += map.at(c, m, t);
      }
    }
    for (auto& px : tr.rgb) {
      for (auto& v : px) v /= map.rois;
    }
  } else if (map.channels == 1) {
    tr.source = MeanTrace::Source::FlowVertical;
    tr.values.assign(map.frames, 0.0);
    for (std::uint32_t m = 0; m < map.rois; ++m) {
      for (std::uint32_t t = 0; t < map.frames; ++t) tr.values[t] += map.at(0, m, t);
    }
    for (auto& v : tr.values) v /= map.rois;
  } else {
    throw Error("mean trace needs a 1- or 3-channel map");
  }
  return tr;
}

namespace {

double stddev(const std::vector<double>& x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

using Projection = std::function<std::vector<double>(const std::vector<std::array<double, 3>>&)>;

// Shared sliding-window driver: normalize each channel by its window mean,
// project, remove the window mean, taper with Hann and overlap-add.
Waveform overlap_add(const MeanTrace& trace, double window_seconds, const Projection& project) {
  if (trace.source != MeanTrace::Source::Rgb) throw Error("RGB trace required");
  if (!(trace.fps > 0.0)) throw Error("fps must be positive");
  const auto n = trace.rgb.size();
  const auto win = static_cast<std::size_t>(std::lround(window_seconds * trace.fps));
  if (win < 2 || n < 2 * win) throw Error("trace shorter than two baseline windows");
  for (int c = 0; c < 3; ++c) {
    std::vector<double> ch(n);
    for (std::size_t t = 0; t < n; ++t) ch[t] = trace.rgb[t][static_cast<std::size_t>(c)];
    if (stddev(ch) <= 1e-12 * (1.0 + std::abs(ch[0]))) throw Error("flat input");
  }

  const auto hop = std::max<std::size_t>(1, win / 2);
  const auto taper = spectrum::hann(win);
  Waveform out;
  out.fps = trace.fps;
  out.samples.assign(n, 0.0);
  std::vector<std::array<double, 3>> block(win);
  for (std::size_t start = 0; start + win <= n; start += hop) {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < win; ++i) {
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += trace.rgb[start + i][static_cast<std::size_t>(c)];
    }
    bool usable = true;
    for (auto& m : mean) {
      m /= static_cast<double>(win);
      if (!(std::abs(m) > 0.0)) usable = false;
    }
    if (!usable) continue;
    for (std::size_t i = 0; i < win; ++i) {
      for (std::size_t c = 0; c < 3; ++c) block[i][c] = trace.rgb[start + i][c] / mean[c];
    }
    auto s = project(block);
    const double sm = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(win);
    for (std::size_t i = 0; i < win; ++i) out.samples[start + i] += (s[i] - sm) * taper[i];
  }
  return out;
}

std::vector<double> combine(const std::vector<double>& a, const std::vector<double>& b, double sign) {
  const double sb = stddev(b);
  const double alpha = sb > 0.0 ? stddev(a) / sb : 0.0;
  std::vector<double> s(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) s[i] = a[i] + sign * alpha * b[i];
  return s;
}

}  // namespace

Waveform chrom_wave(const MeanTrace& trace, double window_seconds) {
  return overlap_add(trace, window_seconds, [](const std::vector<std::array<double, 3>>& rgb) {
    std::vector<double> x(rgb.size());
    std::vector<double> y(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      x[i] = 3.0 * rgb[i][0] - 2.0 * rgb[i][1];
      y[i] = 1.5 * rgb[i][0] + rgb[i][1] - 1.5 * rgb[i][2];
    }
    return combine(x, y, -1.0);
  });
}

Waveform pos_wave(const MeanTrace& trace, double window_seconds) {
  return overlap_add(trace, window_seconds, [](const std::vector<std::array<double, 3>>& rgb) {
    std::vector<double> s1(rgb.size());
    std::vector<double> s2(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      s1[i] = rgb[i][1] - rgb[i][2];
      s2[i] = rgb[i][1] + rgb[i][2] - 2.0 * rgb[i][0];
    }
    return combine(s1, s2, 1.0);
  });
}

Waveform rr_benchmark_wave(const SpatioTemporalMap& map, RrBenchmark kind) {
  map.validate();
  if (kind == RrBenchmark::FlowMean && map.channels != 1) throw Error("flow_mean needs a 1-channel flow map");
  if (kind == RrBenchmark::RgbMean && map.channels != 3) throw Error("rgb_mean needs a 3-channel map");
  Waveform w;
  w.fps = map.fps;
  w.samples.assign(map.frames, 0.0);
  for (std::uint32_t c = 0; c < map.channels; ++c) {
    for (std::uint32_t m = 0; m < map.rois; ++m) {
      for (std::uint32_t t = 0; t < map.frames; ++t) w.samples[t] += map.at(c, m, t);
    }
  }
  const double scale = 1.0 / (static_cast<double>(map.channels) * map.rois);
  for (auto& v : w.samples) v *= scale;
  return w;
}

}  // namespace calphys
