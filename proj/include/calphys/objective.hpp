#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "calphys/types.hpp"

namespace calphys {

inline constexpr int kDefaultPsdBins = 128;
inline constexpr double kDefaultTemperature = 0.1;

/// Normalized in-band power spectrum on K uniform points spanning the band.
struct BandPsd {
  Band band;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double frequency(std::size_t k) const;
};

/// Differentiable band PSD for a fixed wave length, frame rate and band.
///
/// The wave is mean-removed, Hann-windowed and zero-padded (4096 points, or
/// the next power of two above the wave length); the squared DFT magnitude on
/// the padded grid is linearly interpolated onto K uniform band points and
/// normalized to sum to one. Construction precomputes the DFT rows needed for
/// the band, so one operator serves a whole batch.
class PsdOperator {
 public:
  PsdOperator(std::size_t length, double fps, Band band, int bins = kDefaultPsdBins);

  std::size_t length() const { return length_; }
  double fps() const { return fps_; }
  const Band& band() const { return band_; }
  int bins() const { return bins_; }

  BandPsd operator()(std::span<const double> wave) const;

  /// d(loss)/d(wave) given d(loss)/d(psd) for the same wave.
  std::vector<double> backward(std::span<const double> wave, std::span<const double> grad_psd) const;

 private:
  struct Spectrum {
    Eigen::VectorXd re, im, power, interp;
    double total = 0.0;
  };
  Spectrum evaluate(std::span<const double> wave) const;

  std::size_t length_;
  double fps_;
  Band band_;
  int bins_;
  std::size_t first_bin_ = 0;
  Eigen::MatrixXd cos_rows_;  // windowed DFT rows, one per padded bin
  Eigen::MatrixXd sin_rows_;
  std::vector<std::size_t> lower_;  // per grid point: local index of the lower bin
  std::vector<double> frac_;
};

/// One-shot convenience wrapper around PsdOperator.
BandPsd band_psd(const Waveform& wave, Band band, int bins = kDefaultPsdBins);

/// Mean squared error between two PSDs on the same grid.
double psd_mse(const BandPsd& p, const BandPsd& q);

/// One anchor's term on precomputed distances:
/// positive/tau - log(sum_same e^{d/tau} + e^{positive/tau} + sum_cross e^{d/tau}),
/// where `same` holds the distances to the other clips of the anchor's camera
/// and `cross` those to the other camera's non-matching clips. Gradients are
/// with respect to each distance (the positive's includes its denominator term).
struct AnchorTerm {
  double value = 0.0;
  double grad_positive = 0.0;
  std::vector<double> grad_same;
  std::vector<double> grad_cross;
};
AnchorTerm anchor_term(double positive, std::span<const double> same, std::span<const double> cross,
                       double tau = kDefaultTemperature);

/// Loss value plus gradients with respect to every PSD entry.
struct LossResult {
  double value = 0.0;
  std::vector<std::vector<double>> grad_a;
  std::vector<std::vector<double>> grad_b;
};

/// Cross-camera contrastive loss. For every anchor the numerator holds the
/// synchronized pair's distance; the denominator holds same-camera distances
/// to every other clip and cross-camera distances to every clip (including the
/// positive). Distances are PSD mean squared errors scaled by 1/tau. The loss
/// is minimized during training.
LossResult contrastive_loss(std::span<const BandPsd> psd_a, std::span<const BandPsd> psd_b,
                            double tau = kDefaultTemperature);

/// Same value as contrastive_loss with camera B replaced by ground-truth PSDs;
/// the truth side is a constant, so grad_b is all zeros.
LossResult anchored_loss(std::span<const BandPsd> psd_pred, std::span<const BandPsd> psd_truth,
                         double tau = kDefaultTemperature);

}  // namespace calphys
