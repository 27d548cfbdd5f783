#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "calphys/augment.hpp"
#include "calphys/config.hpp"
#include "calphys/net.hpp"
#include "calphys/objective.hpp"
#include "calphys/types.hpp"

namespace calphys {

enum class TrainMode { Dual, PretrainAnchor, GeneralShared };

std::string to_string(TrainMode mode);
/// Accepts dual, pretrain_anchor, general_shared and general.
TrainMode parse_train_mode(const std::string& text);

/// How a clip is scaled before it enters the network.
enum class InputNorm {
  None,
  /// Each (c, m) row divided by its clip mean, minus one. Rows with a
  /// near-zero mean (flow maps) are left unchanged.
  RowMean,
};

struct TrainConfig {
  TrainMode mode = TrainMode::Dual;
  Task task = Task::HR;
  int batch = 32;
  int epochs = 30;
  double lr = 1e-3;
  double tau = kDefaultTemperature;
  double weight_decay = 1e-2;
  AugmentSpec augment;  // augment.frames is the clip length T
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  int clips_per_video = 8;
  int psd_bins = kDefaultPsdBins;
  InputNorm input_norm = InputNorm::RowMean;
  NetConfig net;

  /// HR: T = 150, lr 1e-3. RR: T = 300, lr 1e-4.
  static TrainConfig defaults(Task task);
  /// Overrides defaults(task) with keys: mode, batch, epochs, lr, tau,
  /// weight_decay, frames, aug_minus, aug_plus, seed, val_fraction,
  /// clips_per_video, psd_bins, input_norm (none|row_mean), stem_width,
  /// block_widths, time_pool_blocks, bottleneck_convs, decoder_convs.
  static TrainConfig from_config(const KeyValueConfig& cfg, Task task);
  void validate() const;
  int frames() const { return augment.frames; }
};

/// One synchronized two-camera recording, optionally with a reference wave.
struct VideoPair {
  std::string id;
  SpatioTemporalMap a;
  SpatioTemporalMap b;
  std::optional<Waveform> truth;
};

/// A cropped and resampled training clip from both cameras.
struct ClipPair {
  std::string id;
  SpatioTemporalMap map_a;
  SpatioTemporalMap map_b;
  std::optional<Waveform> truth_wave;
};

/// Shared-start, shared-length clip of a video pair; the truth wave (if any)
/// is cropped the same way and resampled to the clip length.
ClipPair make_clip(const VideoPair& video, const AugmentSpec& spec, const AugmentDraw& draw);

SpatioTemporalMap normalize_input(const SpatioTemporalMap& map, InputNorm norm);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Net model_a;
  Net model_b;
  AdamW optimizer_a;
  AdamW optimizer_b;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no epoch ran
};

/// Optional starting points. In pretrain_anchor mode `anchor` is required
/// and stays frozen as model A; otherwise it seeds model A. `init_b` seeds
/// model B (or the shared model).
struct TrainInit {
  const Net* anchor = nullptr;
  const Net* init_b = nullptr;
};

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Cross-camera contrastive training. Videos are split into training and
/// validation sets at the video level; each epoch draws clips_per_video
/// augmented clips per training video. Returns the models of the epoch with
/// the lowest validation loss (the last epoch when no validation video exists).
TrainResult train(const std::vector<VideoPair>& videos, const TrainConfig& cfg, const TrainInit& init = {},
                  const EpochCallback& on_epoch = {});

/// Trains one model against the truth waves of camera A with the anchored
/// loss; same split and selection protocol as train(). The result is in model_a.
TrainResult pretrain_supervised(const std::vector<VideoPair>& videos, const TrainConfig& cfg,
                                const Net* init = nullptr, const EpochCallback& on_epoch = {});

/// Mean validation loss of a model pair over fixed (unaugmented) validation
/// clips of `videos`.
double validation_loss(const Net& model_a, const Net& model_b, const std::vector<VideoPair>& videos,
                       const TrainConfig& cfg);

/// Video indices of the validation split used by train().
std::vector<std::size_t> validation_videos(std::size_t count, const TrainConfig& cfg);

/// Wave over the whole map, processed in consecutive non-overlapping
/// segments of the network's T frames. A trailing partial segment is resampled
/// to T and its output resampled back.
Waveform infer_wave(const Net& model, const SpatioTemporalMap& map, InputNorm norm = InputNorm::RowMean);

inline constexpr double kRateWindowSeconds = 10.0;

/// Rates from 10-s windows starting every second: floor(W) - 10 + 1 points
/// for a W-second wave, each 60 x the periodogram peak inside the inference band.
RateSeries rates_from_wave(const Waveform& wave, Task task);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

/// Pairs listed in a manifest written by the synthetic generator (paths are
/// relative to the manifest). HR uses stm_a/stm_b with the pulse wave; RR uses
/// flow_stm_a/flow_stm_b with the respiration wave. `split` filters by the
/// pair's split ("" keeps all).
std::vector<VideoPair> load_manifest(const std::filesystem::path& manifest, Task task, const std::string& split);

/// Truth rate CSV path of every pair in the same order as load_manifest().
std::vector<std::filesystem::path> manifest_truth_rates(const std::filesystem::path& manifest, Task task,
                                                        const std::string& split);

}  // namespace calphys
