#include "calphys/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace calphys::spectrum {

std::size_t padded_length(std::size_t n) {
  std::size_t len = 4096;
  while (len < n) len *= 2;
  return len;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

BandPower band_power(std::span<const double> x, double fps, Band band) {
  band.validate();
  if (x.size() < 2) throw Error("signal too short");
  if (band.hi > fps / 2.0) throw Error("band above Nyquist");

  const std::size_t n = x.size();
  const std::size_t pad = padded_length(n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const auto window = hann(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * window[i];

  BandPower out;
  out.bin_hz = fps / static_cast<double>(pad);
  out.first_bin = static_cast<std::size_t>(std::ceil(band.lo / out.bin_hz));
  const auto last_bin = static_cast<std::size_t>(std::floor(band.hi / out.bin_hz));
  if (last_bin < out.first_bin) throw Error("band narrower than one bin");
  out.power.resize(last_bin - out.first_bin + 1);

  for (std::size_t j = out.first_bin; j <= last_bin; ++j) {
    // Rotating phasor; re-seeded every 64 samples to bound drift.
    const double step = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(pad);
    double re = 0.0;
    double im = 0.0;
    double c = 1.0;
    double s = 0.0;
    const double dc = std::cos(step);
    const double ds = std::sin(step);
    for (std::size_t i = 0; i < n; ++i) {
      if ((i & 63U) == 0) {
        c = std::cos(step * static_cast<double>(i));
        s = std::sin(step * static_cast<double>(i));
      }
      re += y[i] * c;
      im += y[i] * s;
      const double nc = c * dc - s * ds;
      s = s * dc + c * ds;
      c = nc;
    }
    out.power[j - out.first_bin] = re * re + im * im;
  }
  return out;
}

double peak_frequency(std::span<const double> x, double fps, Band band) {
  const auto bp = band_power(x, fps, band);
  const auto it = std::max_element(bp.power.begin(), bp.power.end());
  return bp.frequency(static_cast<std::size_t>(it - bp.power.begin()));
}

}  // namespace calphys::spectrum
