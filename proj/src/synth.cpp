#include "calphys/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "calphys/csv.hpp"

namespace calphys::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Relative per-channel pulse strength in normalized RGB (green strongest).
constexpr std::array<double, 3> kPulseSignature{0.33, 0.77, 0.53};
// White-balance drift moves red and blue gains in opposite directions.
constexpr std::array<double, 3> kWhiteBalanceAxis{1.0, 0.0, -1.0};
constexpr std::array<double, 3> kHarmonicPhase{0.0, 0.7, 1.4};

std::mt19937_64 stream(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c),
                    static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

double rate_at(const std::vector<RateKnot>& knots, double t) {
  if (knots.empty()) throw Error("empty rate trajectory");
  if (t <= knots.front().t_sec) return knots.front().bpm;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (t <= knots[i].t_sec) {
      const auto& a = knots[i - 1];
      const auto& b = knots[i];
      return a.bpm + (b.bpm - a.bpm) * (t - a.t_sec) / (b.t_sec - a.t_sec);
    }
  }
  return knots.back().bpm;
}

void validate_knots(const std::vector<RateKnot>& knots, double lo, double hi, const char* what) {
  if (knots.empty()) throw Error(std::string(what) + " trajectory is empty");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (knots[i].bpm < lo || knots[i].bpm > hi) throw Error(std::string(what) + " trajectory out of band");
    if (i > 0) {
      const double dt = knots[i].t_sec - knots[i - 1].t_sec;
      if (!(dt > 0.0)) throw Error(std::string(what) + " knots must be strictly increasing in time");
      if (std::abs(knots[i].bpm - knots[i - 1].bpm) > dt * 1.0 + 1e-9) {
        throw Error(std::string(what) + " trajectory changes faster than 1 bpm/s");
      }
    }
  }
}

// Sum of sinusoids with unit overall RMS-ish scale; used for slow drifts.
struct Oscillator {
  std::vector<double> freq, phase, amp;

  static Oscillator draw(std::mt19937_64& rng, int count, double f_lo, double f_hi) {
    Oscillator o;
    std::uniform_real_distribution<double> f(f_lo, f_hi);
    std::uniform_real_distribution<double> ph(0.0, kTwoPi);
    std::uniform_real_distribution<double> a(0.5, 1.0);
    double norm = 0.0;
    for (int i = 0; i < count; ++i) {
      o.freq.push_back(f(rng));
      o.phase.push_back(ph(rng));
      o.amp.push_back(a(rng));
      norm += o.amp.back() * o.amp.back();
    }
    const double scale = std::sqrt(2.0 / norm);
    for (auto& v : o.amp) v *= scale;
    return o;
  }
  double value(double t) const {
    double s = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) s += amp[i] * std::sin(kTwoPi * freq[i] * t + phase[i]);
    return s;
  }
  double derivative(double t) const {
    double s = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) s += amp[i] * kTwoPi * freq[i] * std::cos(kTwoPi * freq[i] * t + phase[i]);
    return s;
  }
};

// Subject-level spatial layout shared by both cameras.
struct Layout {
  std::vector<std::array<double, 3>> base;  // skin colour per ROI
  std::vector<double> perfusion;            // pulse strength per ROI
  std::vector<double> motion;               // respiratory motion weight per ROI
  Oscillator illumination;                  // slow intensity drift
};

Layout draw_layout(const SubjectSpec& subject) {
  auto rng = stream(subject.seed, 0x51, 0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Layout l;
  const std::array<double, 3> skin{170.0 + 15.0 * n01(rng), 122.0 + 10.0 * n01(rng), 100.0 + 10.0 * n01(rng)};
  for (int m = 0; m < kGridRois; ++m) {
    const int col = m % kGridCols;
    const int row = m / kGridCols;
    std::array<double, 3> b{};
    const double shade = 1.0 + 0.08 * n01(rng);
    for (std::size_t c = 0; c < 3; ++c) b[c] = std::clamp(skin[c] * shade * (1.0 + 0.02 * n01(rng)), 20.0, 235.0);
    l.base.push_back(b);
    l.perfusion.push_back(0.2 + 0.8 * u01(rng));
    const double across = std::sin(std::numbers::pi * (col + 0.5) / kGridCols);
    const double down = 0.6 + 0.4 * row / (kGridRows - 1.0);
    l.motion.push_back(std::max(0.0, (0.15 + 0.85 * across * across) * down * (1.0 + 0.1 * n01(rng))));
  }
  l.illumination = Oscillator::draw(rng, 2, 0.02, 0.15);
  return l;
}

std::vector<double> sample_times(std::mt19937_64& rng, std::size_t frames, double fps, double jitter) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> t(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const double j = jitter > 0.0 ? jitter * n01(rng) : 0.0;
    t[i] = (static_cast<double>(i) + j) / fps;
  }
  return t;
}

SpatioTemporalMap render_rgb(const SubjectSpec& subject, const Layout& layout, const CameraSpec& cam,
                             std::size_t frames, double fps) {
  auto rng = stream(subject.seed, cam.digest(), 1);
  const auto times = sample_times(rng, frames, fps, cam.jitter_frames);
  const auto wb = Oscillator::draw(rng, 3, 0.7, 2.4);
  std::normal_distribution<double> n01(0.0, 1.0);
  SpatioTemporalMap map(3, kGridRois, static_cast<std::uint32_t>(frames), static_cast<float>(fps));
  for (std::size_t t = 0; t < frames; ++t) {
    const double p = pulse_value(subject, times[t]);
    const double illum = 1.0 + 0.005 * layout.illumination.value(times[t]);
    const double drift = cam.white_balance_drift * wb.value(times[t]);
    for (int m = 0; m < kGridRois; ++m) {
      const auto mm = static_cast<std::size_t>(m);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = layout.base[mm][c] * (1.0 + subject.pulse_amplitude * layout.perfusion[mm] * kPulseSignature[c] * p);
        v *= illum * cam.gain[c] * (1.0 + kWhiteBalanceAxis[c] * drift);
        v = 255.0 * std::pow(std::max(v, 0.0) / 255.0, cam.gamma);
        if (cam.noise_sigma > 0.0) v += cam.noise_sigma * n01(rng);
        map.at(c, mm, t) = static_cast<float>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return map;
}

double resp_velocity(const SubjectSpec& subject, double t) {
  constexpr double h = 1e-3;
  return (resp_displacement(subject, t + h) - resp_displacement(subject, t - h)) / (2.0 * h);
}

SpatioTemporalMap render_flow(const SubjectSpec& subject, const Layout& layout, const CameraSpec& cam,
                              std::size_t frames, double fps) {
  auto rng = stream(subject.seed, cam.digest(), 2);
  const auto times = sample_times(rng, frames, fps, cam.jitter_frames);
  // Hand-held shake: global displacement below 3 Hz, mostly in the low band.
  auto shake = Oscillator::draw(rng, 3, 0.1, 0.8);
  const auto tremor = Oscillator::draw(rng, 2, 0.8, 3.0);
  for (std::size_t i = 0; i < tremor.freq.size(); ++i) {
    shake.freq.push_back(tremor.freq[i]);
    shake.phase.push_back(tremor.phase[i]);
    shake.amp.push_back(0.3 * tremor.amp[i]);
  }
  std::normal_distribution<double> n01(0.0, 1.0);
  SpatioTemporalMap map(1, kGridRois, static_cast<std::uint32_t>(frames), static_cast<float>(fps));
  for (std::size_t t = 1; t < frames; ++t) {
    const double chest = resp_velocity(subject, times[t]) / fps;
    const double global = cam.shake_px * shake.derivative(times[t]) / fps;
    for (int m = 0; m < kGridRois; ++m) {
      double v = layout.motion[static_cast<std::size_t>(m)] * chest + global;
      if (cam.flow_noise_sigma > 0.0) v += cam.flow_noise_sigma * n01(rng);
      map.at(0, static_cast<std::size_t>(m), t) = static_cast<float>(v);
    }
  }
  return map;
}

CameraSpec camera_from(const KeyValueConfig& cfg, const std::string& prefix, const CameraSpec& fallback) {
  CameraSpec c = fallback;
  const auto gain = cfg.get_doubles(prefix + "gain", {fallback.gain[0], fallback.gain[1], fallback.gain[2]});
  if (gain.size() != 3) throw Error("config key '" + prefix + "gain' needs three values");
  c.gain = {gain[0], gain[1], gain[2]};
  c.gamma = cfg.get_double(prefix + "gamma", fallback.gamma);
  c.noise_sigma = cfg.get_double(prefix + "noise_sigma", fallback.noise_sigma);
  c.flow_noise_sigma = cfg.get_double(prefix + "flow_noise_sigma", fallback.flow_noise_sigma);
  c.jitter_frames = cfg.get_double(prefix + "jitter_frames", fallback.jitter_frames);
  c.shake_px = cfg.get_double(prefix + "shake_px", fallback.shake_px);
  c.white_balance_drift = cfg.get_double(prefix + "white_balance_drift", fallback.white_balance_drift);
  c.validate();
  return c;
}

}  // namespace

double SubjectSpec::hr_at(double t) const { return rate_at(hr, t); }
double SubjectSpec::rr_at(double t) const { return rate_at(rr, t); }

void SubjectSpec::validate() const {
  validate_knots(hr, 45.0, 150.0, "hr");
  validate_knots(rr, 10.0, 40.0, "rr");
}

void CameraSpec::validate() const {
  for (double g : gain) {
    if (!(g > 0.0)) throw Error("camera gains must be positive");
  }
  if (gamma < 0.5 || gamma > 2.0) throw Error("camera gamma must lie in [0.5, 2.0]");
  if (noise_sigma < 0.0 || flow_noise_sigma < 0.0 || jitter_frames < 0.0 || shake_px < 0.0 ||
      white_balance_drift < 0.0) {
    throw Error("camera noise parameters must be non-negative");
  }
}

std::uint64_t CameraSpec::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](double v) {
    std::uint64_t bits = 0;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFU;
      h *= 1099511628211ULL;
    }
  };
  for (double g : gain) mix(g);
  for (double v : {gamma, noise_sigma, flow_noise_sigma, jitter_frames, shake_px, white_balance_drift}) mix(v);
  return h;
}

double cycles(const std::vector<RateKnot>& knots, double t) {
  if (knots.empty()) throw Error("empty rate trajectory");
  // Exact integral of the piecewise-linear rate (bpm) in cycles.
  double acc = 0.0;
  double prev_t = 0.0;
  double prev_r = rate_at(knots, 0.0);
  auto add = [&](double t1) {
    const double r1 = rate_at(knots, t1);
    acc += 0.5 * (prev_r + r1) * (t1 - prev_t) / 60.0;
    prev_t = t1;
    prev_r = r1;
  };
  if (t < 0.0) return rate_at(knots, 0.0) * t / 60.0;
  for (const auto& k : knots) {
    if (k.t_sec > prev_t && k.t_sec < t) add(k.t_sec);
  }
  add(t);
  return acc;
}

double pulse_value(const SubjectSpec& subject, double t) {
  const double phase = kTwoPi * cycles(subject.hr, t);
  double s = 0.0;
  double norm = 0.0;
  for (std::size_t h = 0; h < subject.harmonics.size(); ++h) {
    s += subject.harmonics[h] * std::sin(static_cast<double>(h + 1) * phase + kHarmonicPhase[h]);
    norm += subject.harmonics[h];
  }
  return norm > 0.0 ? s / norm : 0.0;
}

double resp_displacement(const SubjectSpec& subject, double t) {
  const double envelope = 1.0 + 0.2 * std::sin(kTwoPi * t / 23.0 + 0.3 * static_cast<double>(subject.seed % 17));
  return subject.resp_amplitude_px * envelope * std::sin(kTwoPi * cycles(subject.rr, t));
}

RateSeries truth_rates(const std::vector<RateKnot>& knots, Task task, double duration) {
  RateSeries r;
  r.task = task;
  const int count = static_cast<int>(std::floor(duration + 1e-9)) - 10 + 1;
  for (int s = 0; s < count; ++s) {
    r.t_sec.push_back(s);
    r.bpm.push_back((cycles(knots, s + 10.0) - cycles(knots, s)) * 60.0 / 10.0);
  }
  return r;
}

Recording gen_pair(const SubjectSpec& subject, const CameraSpec& cam_a, const CameraSpec& cam_b, double duration,
                   double fps) {
  subject.validate();
  cam_a.validate();
  cam_b.validate();
  if (duration < 20.0) throw Error("synthetic recordings need at least 20 s");
  if (!(fps > 0.0)) throw Error("fps must be positive");
  const auto frames = static_cast<std::size_t>(std::lround(duration * fps));
  const auto layout = draw_layout(subject);

  Recording rec;
  rec.rgb_a = render_rgb(subject, layout, cam_a, frames, fps);
  rec.rgb_b = render_rgb(subject, layout, cam_b, frames, fps);
  rec.flow_a = render_flow(subject, layout, cam_a, frames, fps);
  rec.flow_b = render_flow(subject, layout, cam_b, frames, fps);
  rec.pulse.fps = fps;
  rec.resp.fps = fps;
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / fps;
    rec.pulse.samples.push_back(pulse_value(subject, t));
    rec.resp.samples.push_back(resp_displacement(subject, t));
  }
  rec.hr_truth = truth_rates(subject.hr, Task::HR, duration);
  rec.rr_truth = truth_rates(subject.rr, Task::RR, duration);
  return rec;
}

Video render_video(const SubjectSpec& subject, double duration, double fps, int width, int height) {
  subject.validate();
  // Fixed head pose: PD = 60 px, chest band at y in [220, 280].
  LandmarkFrame lm;
  lm.right_eye = {130.0, 80.0};
  lm.left_eye = {190.0, 80.0};
  lm.face_right = {110.0, 110.0};
  lm.face_left = {210.0, 110.0};
  lm.chin = {160.0, 160.0};
  if (width < 260 || height < 290) throw Error("synthetic video frame too small");

  auto texture = [](double x, double y) {
    return 128.0 + 40.0 * std::sin(0.21 * x + 0.13 * y) * std::cos(0.17 * y - 0.05 * x) + 20.0 * std::sin(0.11 * y + 0.3);
  };
  auto rng = stream(subject.seed, 0x71, 0);
  std::uniform_real_distribution<double> speckle(-5.0, 5.0);
  std::vector<double> skin_texture(static_cast<std::size_t>(width) * height);
  for (auto& v : skin_texture) v = speckle(rng);

  Video video;
  video.fps = fps;
  const auto frames = static_cast<std::size_t>(std::lround(duration * fps));
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double p = pulse_value(subject, t);
    const double d = resp_displacement(subject, t);
    RgbImage img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3, 60)};
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::size_t px = static_cast<std::size_t>(y) * width + x;
        std::array<double, 3> rgb{60.0, 60.0, 60.0};
        if (x >= 100 && x < 220 && y >= 60 && y < 170) {
          const std::array<double, 3> skin{175.0, 125.0, 105.0};
          for (std::size_t c = 0; c < 3; ++c) {
            rgb[c] = skin[c] * (1.0 + subject.pulse_amplitude * 3.0 * kPulseSignature[c] * p) + skin_texture[px];
          }
        } else if (y >= 200) {
          const double v = texture(x, y - d);
          rgb = {v, v, v};
        }
        for (std::size_t c = 0; c < 3; ++c) {
          img.pixels[3 * px + c] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[c]), 0L, 255L));
        }
      }
    }
    video.frames.push_back(std::move(img));
    lm.frame_index = static_cast<int>(i);
    video.landmarks.push_back(lm);
  }
  return video;
}

DatasetConfig DatasetConfig::from_config(const KeyValueConfig& cfg) {
  DatasetConfig d;
  d.subjects = static_cast<int>(cfg.get_int("subjects", d.subjects));
  d.train_subjects = static_cast<int>(cfg.get_int("train_subjects", d.train_subjects));
  d.duration = cfg.get_double("duration", d.duration);
  d.fps = cfg.get_double("fps", d.fps);
  d.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(d.seed)));
  d.hr_min = cfg.get_double("hr_min", d.hr_min);
  d.hr_max = cfg.get_double("hr_max", d.hr_max);
  d.rr_min = cfg.get_double("rr_min", d.rr_min);
  d.rr_max = cfg.get_double("rr_max", d.rr_max);
  d.pulse_amplitude = cfg.get_double("pulse_amplitude", d.pulse_amplitude);
  d.resp_amplitude_px = cfg.get_double("resp_amplitude_px", d.resp_amplitude_px);
  d.camera_a = camera_from(cfg, "a_", d.camera_a);
  d.camera_b = camera_from(cfg, "b_", d.camera_b);
  if (d.subjects < 0 || d.train_subjects < 0 || d.train_subjects > d.subjects) throw Error("invalid subject split");
  return d;
}

SubjectSpec draw_subject(const DatasetConfig& cfg, int index) {
  auto rng = stream(cfg.seed, 0x5B, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SubjectSpec s;
  s.seed = rng();
  s.pulse_amplitude = cfg.pulse_amplitude;
  s.resp_amplitude_px = cfg.resp_amplitude_px;
  auto trajectory = [&](double lo, double hi, double step, double band_lo, double band_hi) {
    std::vector<RateKnot> knots;
    double v = lo + (hi - lo) * u01(rng);
    for (double t = 0.0; t <= cfg.duration + 10.0; t += 10.0) {
      knots.push_back({t, v});
      v = std::clamp(v + step * (2.0 * u01(rng) - 1.0), std::max(band_lo, lo - step), std::min(band_hi, hi + step));
    }
    return knots;
  };
  s.hr = trajectory(cfg.hr_min, cfg.hr_max, 6.0, 45.0, 150.0);
  s.rr = trajectory(cfg.rr_min, cfg.rr_max, 2.0, 10.0, 40.0);
  return s;
}

namespace {

Recording make_recording(const DatasetConfig& cfg, int index) {
  auto rec = gen_pair(draw_subject(cfg, index), cfg.camera_a, cfg.camera_b, cfg.duration, cfg.fps);
  char id[16];
  std::snprintf(id, sizeof id, "s%02d", index);
  rec.id = id;
  return rec;
}

}  // namespace

std::vector<Recording> gen_recordings(const DatasetConfig& cfg) {
  std::vector<Recording> out;
  for (int i = 0; i < cfg.subjects; ++i) out.push_back(make_recording(cfg, i));
  return out;
}

nlohmann::json gen_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["pairs"] = nlohmann::json::array();
  manifest["splits"] = {{"train", nlohmann::json::array()}, {"test", nlohmann::json::array()}};
  manifest["fps"] = cfg.fps;
  manifest["duration"] = cfg.duration;
  manifest["seed"] = cfg.seed;

  for (int i = 0; i < cfg.subjects; ++i) {
    const auto rec = make_recording(cfg, i);
    const std::string& id = rec.id;
    stm_write(rec.rgb_a, dir / (id + "_rgb_a.stm"));
    stm_write(rec.rgb_b, dir / (id + "_rgb_b.stm"));
    stm_write(rec.flow_a, dir / (id + "_flow_a.stm"));
    stm_write(rec.flow_b, dir / (id + "_flow_b.stm"));
    write_rates_csv(rec.hr_truth, dir / (id + "_truth_hr.csv"));
    write_rates_csv(rec.rr_truth, dir / (id + "_truth_rr.csv"));
    CsvTable waves;
    waves.columns = {"t_sec", "pulse", "resp"};
    for (std::size_t t = 0; t < rec.pulse.size(); ++t) {
      waves.rows.push_back({static_cast<double>(t) / cfg.fps, rec.pulse.samples[t], rec.resp.samples[t]});
    }
    write_csv(waves, dir / (id + "_truth_wave.csv"));

    const bool train = i < cfg.train_subjects;
    manifest["pairs"].push_back({{"id", id},
                                 {"stm_a", id + "_rgb_a.stm"},
                                 {"stm_b", id + "_rgb_b.stm"},
                                 {"flow_stm_a", id + "_flow_a.stm"},
                                 {"flow_stm_b", id + "_flow_b.stm"},
                                 {"truth_hr_csv", id + "_truth_hr.csv"},
                                 {"truth_rr_csv", id + "_truth_rr.csv"},
                                 {"truth_wave_csv", id + "_truth_wave.csv"},
                                 {"split", train ? "train" : "test"}});
    manifest["splits"][train ? "train" : "test"].push_back(id);
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw Error("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace calphys::synth
