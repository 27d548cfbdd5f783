// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "calphys/augment.hpp"
#include "calphys/baselines.hpp"
#include "calphys/csv.hpp"
#include "calphys/metrics.hpp"
#include "calphys/net.hpp"
#include "calphys/objective.hpp"
#include "calphys/pipeline.hpp"
#include "calphys/repr.hpp"
#include "calphys/spectrum.hpp"
#include "calphys/synth.hpp"
#include "oracles.hpp"

using namespace calphys;
namespace fs = std::filesystem;

namespace {

// Camera B hand-held shake amplitude for the RR ordering check, in pixels.
constexpr double kAcceptanceShakePx = 1.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "calphys_acceptance";
  fs::create_directories(dir);
  return dir;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

// ---------------------------------------------------------------------------

void loss_oracle(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  bool n1_zero = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    const int k = 2 + static_cast<int>(rng() % 15);
    const auto psds = oracle::random_psds(2 * n, k, static_cast<unsigned>(rng()));
    const std::span<const BandPsd> a(psds.data(), static_cast<std::size_t>(n));
    const std::span<const BandPsd> b(psds.data() + n, static_cast<std::size_t>(n));
    const double got = contrastive_loss(a, b, kDefaultTemperature).value;
    const double ref = oracle::contrastive_loss(a, b, kDefaultTemperature);
    if (n == 1) n1_zero = n1_zero && got == 0.0;
    worst = std::max(worst, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
  }
  const auto one = oracle::random_psds(2, 16, 7);
  n1_zero = n1_zero && contrastive_loss(std::span(one.data(), 1), std::span(one.data() + 1, 1), 0.1).value == 0.0;
  const std::vector<BandPsd> same(2, one[0]);
  const double identical = contrastive_loss(same, same, 0.1).value;
  const double identical_err = std::abs(identical - 4.0 * std::log(1.0 / 3.0));
  const double elapsed = seconds_since(start);

  out.detail << "max rel err " << worst << ", identical-PSD err " << identical_err << ", " << fmt(elapsed, 2) << " s";
  out.require(worst <= 1e-10, "relative error 1e-10");
  out.require(n1_zero, "N=1 gives 0");
  out.require(identical_err <= 1e-12, "4 log(1/3) to 1e-12");
  out.require(elapsed < 10.0, "runtime < 10 s");
}

void gradient_suite(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  auto normals = [&](std::size_t count) {
    std::vector<double> v(count);
    for (auto& x : v) x = n01(rng);
    return v;
  };

  double net_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    NetConfig cfg;
    cfg.in_channels = 1 + 2 * (trial % 2);
    cfg.rois = 8;
    cfg.frames = 16;
    cfg.stem_width = 4;
    cfg.block_widths = {4, 4, 4, 4};
    cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
    auto net = TemporalCnn<float>(cfg).cast<double>();
    const int batch = 2 + trial % 2;
    Tensor4<double> x(batch, cfg.in_channels, cfg.rois, cfg.frames);
    x.data = normals(x.data.size());
    Tensor4<double> upstream(batch, 1, 1, cfg.frames);
    upstream.data = normals(upstream.data.size());
    auto objective = [&](const Tensor4<double>& input) {
      const auto y = net.forward(input, Mode::Train);
      double s = 0.0;
      for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * upstream.data[i];
      return s;
    };
    TemporalCnn<double>::Cache cache;
    net.forward(x, Mode::Train, &cache);
    auto grads = net.zero_gradients();
    const auto gx = net.backward(cache, upstream, grads);
    for (std::size_t p = 0; p < net.params().size(); ++p) {
      auto& values = net.params()[p].values;
      const auto keep = values;
      const auto fd = oracle::numeric_gradient(
          [&](const std::vector<double>& v) {
            values = v;
            return objective(x);
          },
          keep, 1e-5);
      values = keep;
      net_worst = std::max(net_worst, oracle::max_rel_error(grads[p].values, fd));
    }
    const auto fdx = oracle::numeric_gradient(
        [&](const std::vector<double>& v) {
          auto xi = x;
          xi.data = v;
          return objective(xi);
        },
        x.data, 1e-5);
    net_worst = std::max(net_worst, oracle::max_rel_error(gx.data, fdx));
  }

  double psd_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 30 + 7 * static_cast<std::size_t>(trial);
    const int bins = 8 + 4 * (trial % 8);
    const Band band = trial % 2 == 0 ? Band::hr_train() : Band{0.1, 0.6};
    const double fps = trial % 2 == 0 ? 10.0 : 2.0;
    const PsdOperator op(n, fps, band, bins);
    const auto x = normals(n);
    const auto weight = normals(static_cast<std::size_t>(bins));
    auto objective = [&](const std::vector<double>& w) {
      const auto p = op(w);
      double s = 0.0;
      for (std::size_t k = 0; k < weight.size(); ++k) s += weight[k] * p.values[k];
      return s;
    };
    psd_worst = std::max(psd_worst, oracle::max_rel_error(op.backward(x, weight), oracle::numeric_gradient(objective, x, 1e-5)));
  }
  const double elapsed = seconds_since(start);

  out.detail << "network max rel err " << net_worst << ", band PSD max rel err " << psd_worst << ", " << fmt(elapsed, 1)
             << " s";
  out.require(net_worst < 1e-4, "network gradient");
  out.require(psd_worst < 1e-4, "band PSD gradient");
  out.require(elapsed < 120.0, "runtime < 2 min");
}

// ---------------------------------------------------------------------------
// Synthetic end-to-end runs

struct Pooled {
  double abs_sum = 0.0;
  std::size_t n = 0;

  void add(const RateSeries& pred, const RateSeries& truth) {
    const auto r = metrics(pred, truth);
    abs_sum += r.mae * static_cast<double>(r.n);
    n += r.n;
  }
  double mae() const { return n == 0 ? std::nan("") : abs_sum / static_cast<double>(n); }
};

struct HeldOut {
  Pooled model_a, model_b, baseline_a, baseline_b;
  int best_epoch = 0;
  double train_seconds = 0.0;
};

HeldOut run_protocol(const synth::DatasetConfig& data, Task task, const fs::path& dir,
                     const std::function<Waveform(const SpatioTemporalMap&)>& baseline) {
  fs::remove_all(dir);
  synth::gen_dataset(data, dir);
  const auto manifest = dir / "manifest.json";
  HeldOut out;
  const auto start = std::chrono::steady_clock::now();
  auto trained = train(load_manifest(manifest, task, "train"), TrainConfig::defaults(task));
  out.best_epoch = trained.best_epoch;
  out.train_seconds = seconds_since(start);
  const auto test = load_manifest(manifest, task, "test");
  const auto truth_paths = manifest_truth_rates(manifest, task, "test");
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto truth = read_rates_csv(truth_paths[i], task);
    out.model_a.add(rates_from_wave(infer_wave(trained.model_a, test[i].a), task), truth);
    out.model_b.add(rates_from_wave(infer_wave(trained.model_b, test[i].b), task), truth);
    out.baseline_a.add(rates_from_wave(baseline(test[i].a), task), truth);
    out.baseline_b.add(rates_from_wave(baseline(test[i].b), task), truth);
  }
  fs::remove_all(dir);
  return out;
}

synth::DatasetConfig two_camera_dataset(std::uint64_t seed) {
  synth::DatasetConfig d;
  d.subjects = 20;
  d.train_subjects = 15;
  d.duration = 60.0;
  d.seed = seed;
  d.camera_a.noise_sigma = 1.0;
  d.camera_a.white_balance_drift = 0.002;
  d.camera_a.flow_noise_sigma = 0.02;
  d.camera_b.gain = {1.15, 0.95, 0.8};
  d.camera_b.gamma = 0.8;
  d.camera_b.noise_sigma = 2.0;
  d.camera_b.jitter_frames = 0.1;
  d.camera_b.white_balance_drift = 0.02;
  d.camera_b.flow_noise_sigma = 0.05;
  return d;
}

void synthetic_hr(Outcome& out) {
  const auto r = run_protocol(two_camera_dataset(31), Task::HR, work_dir() / "hr",
                              [](const SpatioTemporalMap& m) { return chrom_wave(mean_trace(m)); });
  out.detail << "MAE camera A " << fmt(r.model_a.mae()) << ", camera B " << fmt(r.model_b.mae()) << " bpm; CHROM camera A "
             << fmt(r.baseline_a.mae()) << ", camera B " << fmt(r.baseline_b.mae()) << " bpm; best epoch "
             << r.best_epoch << "; training " << fmt(r.train_seconds / 60.0, 1) << " min";
  out.require(r.model_a.mae() < 3.0, "camera A MAE < 3");
  out.require(r.model_b.mae() < 3.0, "camera B MAE < 3");
  out.require(r.model_a.mae() < r.baseline_b.mae() && r.model_b.mae() < r.baseline_b.mae(),
              "both models beat CHROM on camera B");
}

void synthetic_rr(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto flow_mean = [](const SpatioTemporalMap& m) { return rr_benchmark_wave(m, RrBenchmark::FlowMean); };
  auto still = two_camera_dataset(41);
  still.camera_a.shake_px = 0.0;
  still.camera_b.shake_px = 0.0;
  const auto a = run_protocol(still, Task::RR, work_dir() / "rr_still", flow_mean);
  out.detail << "no shake: MAE camera A " << fmt(a.model_a.mae()) << ", camera B " << fmt(a.model_b.mae())
             << " bpm (flow mean " << fmt(a.baseline_a.mae()) << ", " << fmt(a.baseline_b.mae()) << ")";
  out.require(a.model_a.mae() < 2.0 && a.model_b.mae() < 2.0, "RR MAE < 2 without shake");

  auto shaky = still;
  shaky.seed = 43;
  shaky.camera_b.shake_px = kAcceptanceShakePx;
  const auto b = run_protocol(shaky, Task::RR, work_dir() / "rr_shake", flow_mean);
  out.detail << "; shake on camera B: model " << fmt(b.model_b.mae()) << " vs flow mean " << fmt(b.baseline_b.mae())
             << " bpm; " << fmt(seconds_since(start) / 60.0, 1) << " min";
  out.require(b.model_b.mae() <= b.baseline_b.mae(), "model <= flow mean under shake");
  out.require(seconds_since(start) < 30.0 * 60.0, "runtime < 30 min");
}

// ---------------------------------------------------------------------------

void augmentation_invariant(Outcome& out) {
  constexpr int kT = 150;
  constexpr double kFps = 30.0;
  const double bin = kFps / static_cast<double>(spectrum::padded_length(kT));
  double worst_bins = 0.0;
  int checked = 0;
  for (double f : {0.8, 1.3, 2.1}) {
    SpatioTemporalMap m(1, 2, 260, static_cast<float>(kFps));
    for (int r = 0; r < 2; ++r) {
      for (int t = 0; t < 260; ++t) m.at(0, r, t) = static_cast<float>(std::sin(2.0 * std::numbers::pi * f * t / kFps + r));
    }
    for (int len = kT - 30; len <= kT + 60; ++len) {
      const auto resampled = resample_temporal(m, len, kT);
      for (std::uint32_t r = 0; r < 2; ++r) {
        const std::vector<double> row(resampled.data.begin() + r * kT, resampled.data.begin() + (r + 1) * kT);
        const double peak = spectrum::peak_frequency(row, kFps, Band{0.2, 7.0});
        worst_bins = std::max(worst_bins, std::abs(peak - f * len / kT) / bin);
        ++checked;
      }
    }
  }
  out.detail << checked << " rows, worst argmax offset " << fmt(worst_bins, 2) << " bins";
  out.require(worst_bins <= 1.0, "argmax within one bin");
}

void loss_monotonicity(Outcome& out) {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> dist(0.0, 0.25);
  std::uniform_real_distribution<double> temp(0.02, 1.0);
  int violations = 0;
  int derivative_checks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 15);
    const double tau = trial % 2 == 0 ? kDefaultTemperature : temp(rng);
    const double pos = dist(rng);
    std::vector<double> same(static_cast<std::size_t>(n - 1)), cross(static_cast<std::size_t>(n - 1));
    for (auto& v : same) v = dist(rng);
    for (auto& v : cross) v = dist(rng);
    const auto term = anchor_term(pos, same, cross, tau);
    const double h = 1e-7;
    const double d_pos = (anchor_term(pos + h, same, cross, tau).value - anchor_term(pos - h, same, cross, tau).value) / (2 * h);
    if (!(d_pos > 0.0) || !(term.grad_positive > 0.0)) ++violations;
    ++derivative_checks;
    for (auto* list : {&same, &cross}) {
      for (std::size_t j = 0; j < list->size(); ++j) {
        const double keep = (*list)[j];
        (*list)[j] = keep + h;
        const double up = anchor_term(pos, same, cross, tau).value;
        (*list)[j] = keep - h;
        const double down = anchor_term(pos, same, cross, tau).value;
        (*list)[j] = keep;
        const double analytic = list == &same ? term.grad_same[j] : term.grad_cross[j];
        if (!((up - down) / (2 * h) < 0.0) || !(analytic < 0.0)) ++violations;
        ++derivative_checks;
      }
    }
  }
  out.detail << "1000 configurations, " << derivative_checks << " partial derivatives, " << violations << " sign violations";
  out.require(violations == 0, "signs");
}

TrainConfig tiny_training(std::uint64_t seed) {
  auto cfg = TrainConfig::defaults(Task::HR);
  cfg.epochs = 6;
  cfg.batch = 8;
  cfg.clips_per_video = 4;
  cfg.seed = seed;
  cfg.net.seed = seed;
  cfg.net.stem_width = 8;
  cfg.net.block_widths = {8, 8, 8, 8};
  cfg.net.bottleneck_convs = 1;
  cfg.net.decoder_convs = 1;
  return cfg;
}

std::vector<VideoPair> small_set(std::uint64_t seed) {
  auto d = two_camera_dataset(seed);
  d.duration = 30.0;
  std::vector<VideoPair> out;
  for (int i = 0; i < 8; ++i) {
    auto rec = synth::gen_pair(synth::draw_subject(d, i), d.camera_a, d.camera_b, d.duration, d.fps);
    out.push_back({"s" + std::to_string(i), std::move(rec.rgb_a), std::move(rec.rgb_b), std::move(rec.pulse)});
  }
  return out;
}

double best_val(const TrainResult& r) {
  double best = r.history.front().val_loss;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  return best;
}

void training_contracts(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto videos = small_set(5);
  {
    auto cfg = tiny_training(1);
    cfg.epochs = 2;
    const Net anchor(cfg.net);
    const auto before = parameter_digest(anchor);
    cfg.mode = TrainMode::PretrainAnchor;
    const auto frozen = train(videos, cfg, TrainInit{&anchor, nullptr});
    out.require(parameter_digest(frozen.model_a) == before && parameter_digest(anchor) == before, "anchor unchanged");
    out.require(parameter_digest(frozen.model_b) != before, "model B trained");
    cfg.mode = TrainMode::GeneralShared;
    const auto shared = train(videos, cfg);
    out.require(parameter_digest(shared.model_a) == parameter_digest(shared.model_b), "one shared digest");
  }
  int wins = 0;
  std::ostringstream runs;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto cfg = tiny_training(100 + seed);
    const auto pre = pretrain_supervised(videos, cfg);
    const auto warm = train(videos, cfg, TrainInit{&pre.model_a, &pre.model_a});
    const auto cold = train(videos, cfg);
    const bool win = best_val(warm) <= best_val(cold);
    wins += win ? 1 : 0;
    runs << (win ? '+' : '-');
  }
  out.detail << "frozen anchor and shared digest ok=" << (out.pass ? "yes" : "no") << "; pretrain-then-dual <= dual in "
             << wins << "/10 seeds (" << runs.str() << "); " << fmt(seconds_since(start) / 60.0, 1) << " min";
  out.require(wins >= 7, ">= 7 of 10 seeds");
}

bool same_bytes(const SpatioTemporalMap& a, const SpatioTemporalMap& b) {
  return a.channels == b.channels && a.rois == b.rois && a.frames == b.frames &&
         std::memcmp(&a.fps, &b.fps, sizeof a.fps) == 0 && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void contracts(Outcome& out) {
  const auto dir = work_dir() / "contracts";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const Net hr(NetConfig::for_task(Task::HR));
  out.detail << "default HR parameters " << hr.parameter_count();
  out.require(hr.parameter_count() >= 250000 && hr.parameter_count() <= 400000, "parameter count");

  bool lengths = true;
  for (int t : {100, 150, 200, 250, 300}) {
    auto c = NetConfig::for_task(Task::HR);
    c.frames = t;
    const Net net(c);
    Tensor4<float> x(1, 3, 224, t);
    std::mt19937_64 rng(static_cast<unsigned>(t));
    std::normal_distribution<float> n01;
    for (auto& v : x.data) v = n01(rng);
    lengths = lengths && net.predict(x).w == t;
  }
  out.require(lengths, "output length = T");

  synth::SubjectSpec subject;
  subject.seed = 9;
  const auto rec = synth::gen_pair(subject, {}, {}, 60.0, 30.0);
  const auto points = rates_from_wave(rec.pulse, Task::HR).size();
  out.detail << "; 60-s wave gives " << points << " rate points";
  out.require(points == 51, "51 rate points");

  stm_write(rec.rgb_b, dir / "map.stm");
  stm_write(rec.flow_a, dir / "flow.stm");
  out.require(same_bytes(stm_read(dir / "map.stm"), rec.rgb_b) && same_bytes(stm_read(dir / "flow.stm"), rec.flow_a),
              "STM round trip");

  // Two full pipeline runs from the same seed: dataset, training, checkpoint, inference.
  std::vector<std::string> fingerprints;
  for (int run = 0; run < 2; ++run) {
    const auto root = dir / ("run" + std::to_string(run));
    auto d = two_camera_dataset(12);
    d.subjects = 4;
    d.train_subjects = 3;
    d.duration = 20.0;
    synth::gen_dataset(d, root / "data");
    auto cfg = tiny_training(4);
    cfg.epochs = 2;
    const auto trained = train(load_manifest(root / "data" / "manifest.json", Task::HR, "train"), cfg);
    checkpoint_save(root / "model_b.ckpt", trained.model_b, trained.optimizer_b, Task::HR);
    const auto loaded = checkpoint_load(root / "model_b.ckpt");
    out.require(loaded.net.params() == trained.model_b.params() && loaded.net.buffers() == trained.model_b.buffers() &&
                    loaded.optimizer == trained.optimizer_b && loaded.net.config() == trained.model_b.config(),
                "checkpoint round trip");
    const auto test = load_manifest(root / "data" / "manifest.json", Task::HR, "test");
    write_rates_csv(rates_from_wave(infer_wave(loaded.net, test.front().b), Task::HR), root / "pred.csv");
    fingerprints.push_back(slurp(root / "data" / "manifest.json") + slurp(root / "data" / "s03_rgb_b.stm") +
                           slurp(root / "model_b.ckpt") + slurp(root / "pred.csv"));
  }
  out.require(fingerprints[0] == fingerprints[1], "fixed-seed determinism");
  fs::remove_all(dir);
}

struct Criterion {
  int id;
  const char* name;
  void (*run)(Outcome&);
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "contrastive loss matches brute force", loss_oracle},
      {2, "gradient suite", gradient_suite},
      {3, "synthetic HR end to end", synthetic_hr},
      {4, "synthetic RR end to end", synthetic_rr},
      {5, "temporal augmentation invariant", augmentation_invariant},
      {6, "loss monotonicity", loss_monotonicity},
      {7, "frozen anchor, shared weights, pretraining", training_contracts},
      {8, "contracts and formats", contracts},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool all = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && selected.count(c.id) == 0) continue;
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    all = all && out.pass;
    std::cout << "criterion " << c.id << ": " << (out.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << out.detail.str()
              << "  (" << fmt(seconds_since(start), 1) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}
