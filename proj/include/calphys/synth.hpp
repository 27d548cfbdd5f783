#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calphys/config.hpp"
#include "calphys/repr.hpp"
#include "calphys/types.hpp"

namespace calphys::synth {

struct RateKnot {
  double t_sec = 0.0;
  double bpm = 0.0;
};

/// Latent physiology of one subject. Rates are piecewise linear between
/// knots and held constant outside them.
struct SubjectSpec {
  std::vector<RateKnot> hr{{0.0, 72.0}};
  std::vector<RateKnot> rr{{0.0, 15.0}};
  std::array<double, 3> harmonics{1.0, 0.5, 0.25};
  double pulse_amplitude = 0.01;  // relative skin-tone modulation at unit perfusion
  double resp_amplitude_px = 1.5;
  std::uint64_t seed = 0;

  double hr_at(double t) const;
  double rr_at(double t) const;
  void validate() const;
};

/// Per-camera imaging model.
struct CameraSpec {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  double gamma = 1.0;
  double noise_sigma = 0.0;          // additive per-ROI RGB noise (gray levels)
  double flow_noise_sigma = 0.0;     // additive per-ROI flow noise (px/frame)
  double jitter_frames = 0.0;        // sampling-time jitter
  double shake_px = 0.0;             // hand-held global motion amplitude
  double white_balance_drift = 0.0;  // relative red/blue gain fluctuation

  void validate() const;
  std::uint64_t digest() const;
};

/// Latent waves and both cameras' maps for one synchronized recording.
struct Recording {
  std::string id;
  SpatioTemporalMap rgb_a, rgb_b;
  SpatioTemporalMap flow_a, flow_b;
  Waveform pulse;
  Waveform resp;
  RateSeries hr_truth;
  RateSeries rr_truth;
};

/// Cumulative cycles of a piecewise-linear bpm trajectory from 0 to t.
double cycles(const std::vector<RateKnot>& knots, double t);

/// Latent pulse (fundamental plus harmonics) at time t.
double pulse_value(const SubjectSpec& subject, double t);
/// Respiratory displacement in pixels at time t.
double resp_displacement(const SubjectSpec& subject, double t);

/// Reference rates: one value per 10-s window starting every second, equal to
/// the mean of the trajectory over the window.
RateSeries truth_rates(const std::vector<RateKnot>& knots, Task task, double duration);

Recording gen_pair(const SubjectSpec& subject, const CameraSpec& cam_a, const CameraSpec& cam_b, double duration,
                   double fps);

/// Frames and landmarks of a small synthetic video: a pulsing face patch and a
/// textured chest band translating vertically with respiration.
struct Video {
  std::vector<RgbImage> frames;
  std::vector<LandmarkFrame> landmarks;
  double fps = 30.0;
};
Video render_video(const SubjectSpec& subject, double duration, double fps, int width = 320, int height = 300);

struct DatasetConfig {
  int subjects = 20;
  int train_subjects = 15;
  double duration = 60.0;
  double fps = 30.0;
  std::uint64_t seed = 1;
  double hr_min = 55.0, hr_max = 110.0;
  double rr_min = 12.0, rr_max = 26.0;
  double pulse_amplitude = 0.01;
  double resp_amplitude_px = 1.5;
  CameraSpec camera_a;
  CameraSpec camera_b;

  /// Keys: subjects, train_subjects, duration, fps, seed, hr_min, hr_max,
  /// rr_min, rr_max, pulse_amplitude, resp_amplitude_px and, per camera
  /// (prefix a_ or b_): gain (three comma-separated values), gamma,
  /// noise_sigma, flow_noise_sigma, jitter_frames, shake_px,
  /// white_balance_drift.
  static DatasetConfig from_config(const KeyValueConfig& cfg);
};

/// Draws subject `index` of a dataset.
SubjectSpec draw_subject(const DatasetConfig& cfg, int index);

/// All recordings of a dataset, in subject order; ids are "s00", "s01", ...
std::vector<Recording> gen_recordings(const DatasetConfig& cfg);

/// Writes STM files, truth CSVs and manifest.json into `dir`; returns the manifest.
nlohmann::json gen_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir);

}  // namespace calphys::synth
