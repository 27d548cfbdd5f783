#include "calphys/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "calphys/spectrum.hpp"

namespace calphys {

double BandPsd::frequency(std::size_t k) const {
  if (values.size() < 2) return band.lo;
  return band.lo + (band.hi - band.lo) * static_cast<double>(k) / static_cast<double>(values.size() - 1);
}

PsdOperator::PsdOperator(std::size_t length, double fps, Band band, int bins)
    : length_(length), fps_(fps), band_(band), bins_(bins) {
  band_.validate();
  if (length_ < 8) throw Error("wave too short for PSD");
  if (bins_ < 2) throw Error("PSD needs at least two bins");
  if (!(fps_ > 0.0)) throw Error("fps must be positive");
  if (band_.hi > fps_ / 2.0) throw Error("band above Nyquist");

  const std::size_t pad = spectrum::padded_length(length_);
  const double bin_hz = fps_ / static_cast<double>(pad);
  first_bin_ = static_cast<std::size_t>(std::floor(band_.lo / bin_hz));
  const auto last_bin = std::min(pad / 2, static_cast<std::size_t>(std::floor(band_.hi / bin_hz)) + 1);
  const std::size_t nbins = last_bin - first_bin_ + 1;

  lower_.resize(static_cast<std::size_t>(bins_));
  frac_.resize(static_cast<std::size_t>(bins_));
  for (int k = 0; k < bins_; ++k) {
    const double f = band_.lo + (band_.hi - band_.lo) * k / (bins_ - 1);
    const double pos = f / bin_hz;
    auto j0 = static_cast<std::size_t>(std::floor(pos));
    j0 = std::clamp(j0, first_bin_, last_bin - 1);
    lower_[static_cast<std::size_t>(k)] = j0 - first_bin_;
    frac_[static_cast<std::size_t>(k)] = pos - static_cast<double>(j0);
  }

  const auto window = spectrum::hann(length_);
  cos_rows_.resize(static_cast<Eigen::Index>(nbins), static_cast<Eigen::Index>(length_));
  sin_rows_.resizeLike(cos_rows_);
  for (std::size_t j = 0; j < nbins; ++j) {
    const double omega = 2.0 * std::numbers::pi * static_cast<double>(first_bin_ + j) / static_cast<double>(pad);
    for (std::size_t t = 0; t < length_; ++t) {
      const double phase = omega * static_cast<double>(t);
      cos_rows_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = window[t] * std::cos(phase);
      sin_rows_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = -window[t] * std::sin(phase);
    }
  }
}

PsdOperator::Spectrum PsdOperator::evaluate(std::span<const double> wave) const {
  if (wave.size() != length_) throw Error("wave length does not match PSD operator");
  Eigen::Map<const Eigen::VectorXd> x(wave.data(), static_cast<Eigen::Index>(wave.size()));
  if (!x.allFinite()) throw Error("non-finite wave");
  // Plain sum: Eigen reductions over unaligned maps vary with the heap address.
  const double mean = std::accumulate(wave.begin(), wave.end(), 0.0) / static_cast<double>(wave.size());
  const Eigen::VectorXd centered = x.array() - mean;
  const double scale = x.cwiseAbs().maxCoeff();
  if (centered.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + scale)) throw Error("flat wave");

  Spectrum s;
  s.re = cos_rows_ * centered;
  s.im = sin_rows_ * centered;
  s.power = s.re.cwiseAbs2() + s.im.cwiseAbs2();
  s.interp.resize(bins_);
  for (int k = 0; k < bins_; ++k) {
    const auto j = static_cast<Eigen::Index>(lower_[static_cast<std::size_t>(k)]);
    const double f = frac_[static_cast<std::size_t>(k)];
    s.interp[k] = (1.0 - f) * s.power[j] + f * s.power[j + 1];
  }
  s.total = s.interp.sum();
  if (!(s.total > 0.0) || !std::isfinite(s.total)) throw Error("flat wave");
  return s;
}

BandPsd PsdOperator::operator()(std::span<const double> wave) const {
  const auto s = evaluate(wave);
  BandPsd out{band_, std::vector<double>(static_cast<std::size_t>(bins_))};
  for (int k = 0; k < bins_; ++k) out.values[static_cast<std::size_t>(k)] = s.interp[k] / s.total;
  return out;
}

std::vector<double> PsdOperator::backward(std::span<const double> wave, std::span<const double> grad_psd) const {
  if (grad_psd.size() != static_cast<std::size_t>(bins_)) throw Error("PSD gradient size mismatch");
  const auto s = evaluate(wave);

  // p_k = q_k / sum(q)  =>  dq_k = (dp_k - <dp, p>) / sum(q)
  double dot = 0.0;
  for (int k = 0; k < bins_; ++k) dot += grad_psd[static_cast<std::size_t>(k)] * s.interp[k] / s.total;

  Eigen::VectorXd grad_power = Eigen::VectorXd::Zero(s.power.size());
  for (int k = 0; k < bins_; ++k) {
    const double gq = (grad_psd[static_cast<std::size_t>(k)] - dot) / s.total;
    const auto j = static_cast<Eigen::Index>(lower_[static_cast<std::size_t>(k)]);
    const double f = frac_[static_cast<std::size_t>(k)];
    grad_power[j] += (1.0 - f) * gq;
    grad_power[j + 1] += f * gq;
  }
  const Eigen::VectorXd grad_re = 2.0 * s.re.cwiseProduct(grad_power);
  const Eigen::VectorXd grad_im = 2.0 * s.im.cwiseProduct(grad_power);
  Eigen::VectorXd grad_centered = cos_rows_.transpose() * grad_re + sin_rows_.transpose() * grad_im;
  grad_centered.array() -= grad_centered.mean();
  return {grad_centered.data(), grad_centered.data() + grad_centered.size()};
}

BandPsd band_psd(const Waveform& wave, Band band, int bins) {
  const PsdOperator op(wave.size(), wave.fps, band, bins);
  return op(wave.samples);
}

double psd_mse(const BandPsd& p, const BandPsd& q) {
  if (p.size() != q.size() || p.band.lo != q.band.lo || p.band.hi != q.band.hi) throw Error("PSD grid mismatch");
  if (p.size() == 0) throw Error("empty PSD");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = p.values[k] - q.values[k];
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

namespace {

// Adds the contribution of every anchor on `anchors` (positives at the same
// index on `others`) to the loss and to both gradient sets.
double accumulate_side(std::span<const BandPsd> anchors, std::span<const BandPsd> others, double tau,
                       std::vector<std::vector<double>>& grad_anchor, std::vector<std::vector<double>>& grad_other) {
  const std::size_t n = anchors.size();
  const std::size_t k_bins = anchors[0].size();
  const double inv_k = 1.0 / static_cast<double>(k_bins);

  // d(D(x, y))/dx scaled by `coef`, accumulated into gx and (negated) gy.
  auto push = [&](const BandPsd& x, const BandPsd& y, double coef, std::vector<double>& gx, std::vector<double>& gy) {
    for (std::size_t k = 0; k < k_bins; ++k) {
      const double g = coef * 2.0 * (x.values[k] - y.values[k]) * inv_k;
      gx[k] += g;
      gy[k] -= g;
    }
  };

  double total = 0.0;
  std::vector<double> same, cross;
  for (std::size_t i = 0; i < n; ++i) {
    same.clear();
    cross.clear();
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) same.push_back(psd_mse(anchors[i], anchors[k]));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) cross.push_back(psd_mse(anchors[i], others[k]));
    }
    const auto term = anchor_term(psd_mse(anchors[i], others[i]), same, cross, tau);
    total += term.value;

    push(anchors[i], others[i], term.grad_positive, grad_anchor[i], grad_other[i]);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) push(anchors[i], anchors[k], term.grad_same[idx++], grad_anchor[i], grad_anchor[k]);
    }
    idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) push(anchors[i], others[k], term.grad_cross[idx++], grad_anchor[i], grad_other[k]);
    }
  }
  return total;
}

void check_batch(std::span<const BandPsd> a, std::span<const BandPsd> b, double tau) {
  if (a.empty()) throw Error("contrastive loss needs N >= 1");
  if (a.size() != b.size()) throw Error("camera batches differ in size");
  if (!(tau > 0.0)) throw Error("temperature must be positive");
  const auto& ref = a[0];
  auto same_grid = [&](const BandPsd& p) {
    return p.size() == ref.size() && p.band.lo == ref.band.lo && p.band.hi == ref.band.hi;
  };
  if (ref.size() == 0) throw Error("empty PSD");
  if (!std::all_of(a.begin(), a.end(), same_grid) || !std::all_of(b.begin(), b.end(), same_grid)) {
    throw Error("PSD grid mismatch");
  }
}

}  // namespace

AnchorTerm anchor_term(double positive, std::span<const double> same, std::span<const double> cross, double tau) {
  if (!(tau > 0.0)) throw Error("temperature must be positive");
  // Denominator: same-camera negatives, the positive, cross-camera negatives.
  double peak = positive / tau;
  for (double d : same) peak = std::max(peak, d / tau);
  for (double d : cross) peak = std::max(peak, d / tau);
  double z = std::exp(positive / tau - peak);
  for (double d : same) z += std::exp(d / tau - peak);
  for (double d : cross) z += std::exp(d / tau - peak);
  const double log_z = peak + std::log(z);

  AnchorTerm t;
  t.value = positive / tau - log_z;
  t.grad_positive = (1.0 - std::exp(positive / tau - log_z)) / tau;
  for (double d : same) t.grad_same.push_back(-std::exp(d / tau - log_z) / tau);
  for (double d : cross) t.grad_cross.push_back(-std::exp(d / tau - log_z) / tau);
  return t;
}

LossResult contrastive_loss(std::span<const BandPsd> psd_a, std::span<const BandPsd> psd_b, double tau) {
  check_batch(psd_a, psd_b, tau);
  const std::vector<double> zeros(psd_a[0].size(), 0.0);
  LossResult r;
  r.grad_a.assign(psd_a.size(), zeros);
  r.grad_b.assign(psd_b.size(), zeros);
  r.value = accumulate_side(psd_a, psd_b, tau, r.grad_a, r.grad_b);
  r.value += accumulate_side(psd_b, psd_a, tau, r.grad_b, r.grad_a);
  return r;
}

LossResult anchored_loss(std::span<const BandPsd> psd_pred, std::span<const BandPsd> psd_truth, double tau) {
  auto r = contrastive_loss(psd_pred, psd_truth, tau);
  for (auto& g : r.grad_b) std::fill(g.begin(), g.end(), 0.0);
  return r;
}

}  // namespace calphys
