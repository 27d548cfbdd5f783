#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "calphys/objective.hpp"
#include "calphys/spectrum.hpp"
#include "oracles.hpp"

using namespace calphys;

namespace {

Waveform tone(double hz, double fps, std::size_t n, double amp = 1.0) {
  Waveform w{std::vector<double>(n), fps};
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / fps);
  return w;
}

}  // namespace

TEST_CASE("band_psd peaks at a single tone") {
  const auto p = band_psd(tone(1.2, 30.0, 150), Band::hr_train());
  REQUIRE(p.size() == 128);
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p.values[k] > p.values[best]) best = k;
  }
  const double step = (Band::hr_train().hi - Band::hr_train().lo) / 127.0;
  CHECK(std::abs(p.frequency(best) - 1.2) <= step);
}

TEST_CASE("band_psd is normalized and amplitude invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  Waveform w{std::vector<double>(120), 30.0};
  for (auto& v : w.samples) v = n01(rng);
  const auto p = band_psd(w, Band::hr_train());
  double sum = 0.0;
  for (double v : p.values) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  Waveform scaled = w;
  for (auto& v : scaled.samples) v *= -3.5;
  const auto q = band_psd(scaled, Band::hr_train());
  for (std::size_t k = 0; k < p.size(); ++k) CHECK(q.values[k] == doctest::Approx(p.values[k]).epsilon(1e-12));
}

TEST_CASE("band_psd matches an independent direct DFT") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  Waveform w{std::vector<double>(150), 30.0};
  for (auto& v : w.samples) v = n01(rng);
  const auto p = band_psd(w, Band::hr_train(), 32);
  const auto ref = oracle::band_psd(w.samples, w.fps, Band::hr_train().lo, Band::hr_train().hi, 32);
  for (std::size_t k = 0; k < ref.size(); ++k) CHECK(p.values[k] == doctest::Approx(ref[k]).epsilon(1e-9));
}

TEST_CASE("out-of-band tone barely changes the band PSD") {
  auto a = tone(1.0, 30.0, 150);
  const auto b = tone(5.0, 30.0, 150);
  const auto pa = band_psd(a, Band::hr_train());
  for (std::size_t i = 0; i < a.size(); ++i) a.samples[i] += b.samples[i];
  const auto pab = band_psd(a, Band::hr_train());
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(std::abs(pa.values[k] - pab.values[k]) < 1e-3);
}

TEST_CASE("band_psd errors") {
  CHECK_THROWS_WITH_AS(band_psd(Waveform{std::vector<double>(100, 4.0), 30.0}, Band::hr_train()), "flat wave", Error);
  CHECK_THROWS_WITH_AS(band_psd(tone(1.0, 4.0, 100), Band::hr_train()), "band above Nyquist", Error);
  CHECK_THROWS_AS(band_psd(tone(1.0, 30.0, 5), Band::hr_train()), Error);
}

TEST_CASE("band_psd gradient matches finite differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 24 + 8 * static_cast<std::size_t>(trial);
    std::vector<double> x(n);
    for (auto& v : x) v = n01(rng);
    const PsdOperator op(n, 10.0, Band::hr_train(), 16);
    std::vector<double> weight(16);
    for (auto& v : weight) v = n01(rng);
    auto objective = [&](const std::vector<double>& w) {
      const auto p = op(w);
      double s = 0.0;
      for (std::size_t k = 0; k < weight.size(); ++k) s += weight[k] * p.values[k];
      return s;
    };
    const auto g = op.backward(x, weight);
    CHECK(oracle::max_rel_error(g, oracle::numeric_gradient(objective, x, 1e-5)) < 1e-4);
  }
}

TEST_CASE("psd_mse") {
  BandPsd p{Band::hr_train(), std::vector<double>(128, 0.0)};
  BandPsd q = p;
  p.values[3] = 1.0;
  q.values[40] = 1.0;
  CHECK(psd_mse(p, p) == 0.0);
  CHECK(psd_mse(p, q) == doctest::Approx(2.0 / 128.0).epsilon(1e-15));
  CHECK(psd_mse(p, q) == psd_mse(q, p));
  BandPsd r{Band::rr_train(), std::vector<double>(128, 0.0)};
  CHECK_THROWS_WITH_AS(psd_mse(p, r), "PSD grid mismatch", Error);
}

TEST_CASE("contrastive loss closed forms") {
  const auto batch = oracle::random_psds(2, 8, 17);
  const auto one = contrastive_loss(std::span(batch.data(), 1), std::span(batch.data() + 1, 1), 0.1);
  CHECK(one.value == 0.0);

  std::vector<BandPsd> same(2, batch[0]);
  const auto r = contrastive_loss(same, same, 0.1);
  CHECK(std::abs(r.value - 4.0 * std::log(1.0 / 3.0)) < 1e-12);
}

TEST_CASE("contrastive loss matches brute force and is symmetric") {
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 6;
    const auto psds = oracle::random_psds(2 * n, 4 + trial % 12, 100 + trial);
    const std::span<const BandPsd> a(psds.data(), n), b(psds.data() + n, n);
    const auto r = contrastive_loss(a, b, 0.1);
    const double ref = oracle::contrastive_loss(a, b, 0.1);
    CHECK(std::abs(r.value - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
    CHECK(contrastive_loss(b, a, 0.1).value == doctest::Approx(r.value).epsilon(1e-14));
  }
}

TEST_CASE("contrastive loss gradient matches finite differences") {
  const int n = 3;
  auto psds = oracle::random_psds(2 * n, 6, 9);
  auto value = [&](const std::vector<BandPsd>& ps) {
    return contrastive_loss(std::span(ps.data(), n), std::span(ps.data() + n, n), 0.1).value;
  };
  const auto r = contrastive_loss(std::span(psds.data(), n), std::span(psds.data() + n, n), 0.1);
  for (int i = 0; i < 2 * n; ++i) {
    for (std::size_t k = 0; k < 6; ++k) {
      auto up = psds, down = psds;
      up[i].values[k] += 1e-6;
      down[i].values[k] -= 1e-6;
      const double fd = (value(up) - value(down)) / 2e-6;
      const double an = i < n ? r.grad_a[i][k] : r.grad_b[i - n][k];
      CHECK(an == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("contrastive loss errors") {
  const auto psds = oracle::random_psds(3, 8, 1);
  CHECK_THROWS_AS(contrastive_loss(std::span<const BandPsd>(), std::span<const BandPsd>()), Error);
  CHECK_THROWS_AS(contrastive_loss(std::span(psds.data(), 2), std::span(psds.data() + 2, 1)), Error);
  auto other = psds;
  other[2].band = Band::rr_train();
  CHECK_THROWS_WITH_AS(contrastive_loss(std::span(other.data(), 1), std::span(other.data() + 2, 1)),
                       "PSD grid mismatch", Error);
}

TEST_CASE("anchor_term derivative signs") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> same(3), cross(3);
    for (auto& v : same) v = u(rng);
    for (auto& v : cross) v = u(rng);
    const double pos = u(rng);
    const auto t = anchor_term(pos, same, cross, 0.1);
    CHECK(t.grad_positive > 0.0);
    for (double g : t.grad_same) CHECK(g < 0.0);
    for (double g : t.grad_cross) CHECK(g < 0.0);
    const double h = 1e-7;
    const double fd = (anchor_term(pos + h, same, cross, 0.1).value - anchor_term(pos - h, same, cross, 0.1).value) / (2 * h);
    CHECK(t.grad_positive == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("anchored loss") {
  const auto psds = oracle::random_psds(4, 8, 2);
  const std::span<const BandPsd> pred(psds.data(), 2), truth(psds.data() + 2, 2);
  const auto a = anchored_loss(pred, truth, 0.1);
  CHECK(a.value == contrastive_loss(pred, truth, 0.1).value);
  for (const auto& g : a.grad_b) {
    for (double v : g) CHECK(v == 0.0);
  }
  CHECK(anchored_loss(std::span(psds.data(), 1), std::span(psds.data(), 1)).value == 0.0);
}

TEST_CASE("periodogram peak") {
  CHECK(spectrum::padded_length(150) == 4096);
  CHECK(spectrum::padded_length(5000) == 8192);
  const auto w = tone(0.3, 30.0, 300);
  CHECK(std::abs(spectrum::peak_frequency(w.samples, 30.0, Band::rr_infer()) - 0.3) < 30.0 / 4096);
}
