#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace calphys {

/// Every recoverable failure in the library surfaces as this exception; the
/// message is short and stable enough for tests to match on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { HR, RR };

std::string to_string(Task task);
Task parse_task(const std::string& text);

/// Frequency band in Hz.
struct Band {
  double lo = 0.0;
  double hi = 0.0;

  /// Training bands used by the PSD loss.
  static Band hr_train() { return {0.667, 2.50}; }
  static Band rr_train() { return {0.167, 1.0}; }
  /// Bands used when reading a rate off an inference window.
  static Band hr_infer() { return {0.75, 2.50}; }
  static Band rr_infer() { return {0.167, 0.667}; }

  static Band train_band(Task task) { return task == Task::HR ? hr_train() : rr_train(); }
  static Band infer_band(Task task) { return task == Task::HR ? hr_infer() : rr_infer(); }

  void validate() const;
};

/// C x M x T tensor of per-ROI signals, stored in (c, m, t) order.
struct SpatioTemporalMap {
  std::uint32_t channels = 0;
  std::uint32_t rois = 0;
  std::uint32_t frames = 0;
  float fps = 0.0F;
  std::vector<float> data;

  SpatioTemporalMap() = default;
  SpatioTemporalMap(std::uint32_t c, std::uint32_t m, std::uint32_t t, float rate)
      : channels(c), rois(m), frames(t), fps(rate), data(std::size_t{c} * m * t, 0.0F) {}

  std::size_t index(std::size_t c, std::size_t m, std::size_t t) const {
    return (c * rois + m) * frames + t;
  }
  float& at(std::size_t c, std::size_t m, std::size_t t) { return data[index(c, m, t)]; }
  float at(std::size_t c, std::size_t m, std::size_t t) const { return data[index(c, m, t)]; }

  /// Throws if the header disagrees with the payload or a value is not finite.
  void validate() const;

  bool operator==(const SpatioTemporalMap&) const = default;
};

/// A sampled 1D signal (predicted wave or sensor ground truth).
struct Waveform {
  std::vector<double> samples;
  double fps = 0.0;

  std::size_t size() const { return samples.size(); }
  double duration() const { return fps > 0.0 ? static_cast<double>(samples.size()) / fps : 0.0; }
};

/// Per-second rate estimates in beats (or breaths) per minute.
struct RateSeries {
  Task task = Task::HR;
  std::vector<double> t_sec;
  std::vector<double> bpm;

  std::size_t size() const { return bpm.size(); }
};

}  // namespace calphys
