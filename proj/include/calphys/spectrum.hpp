#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "calphys/types.hpp"

namespace calphys::spectrum {

/// Zero-padded FFT length used for every periodogram: 4096, or the next power
/// of two when the signal is longer.
std::size_t padded_length(std::size_t n);

/// Symmetric Hann window of length n.
std::vector<double> hann(std::size_t n);

/// Squared DFT magnitude of the mean-removed, Hann-windowed, zero-padded
/// signal, evaluated only on the padded bins whose frequency lies in `band`.
struct BandPower {
  std::size_t first_bin = 0;
  double bin_hz = 0.0;
  std::vector<double> power;

  double frequency(std::size_t i) const { return static_cast<double>(first_bin + i) * bin_hz; }
};

BandPower band_power(std::span<const double> x, double fps, Band band);

/// Frequency (Hz) of the periodogram peak inside `band`.
double peak_frequency(std::span<const double> x, double fps, Band band);

}  // namespace calphys::spectrum
