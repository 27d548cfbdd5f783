#include "calphys/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "calphys/csv.hpp"
#include "calphys/objective.hpp"
#include "calphys/repr.hpp"
#include "calphys/spectrum.hpp"

namespace calphys {

namespace {

constexpr std::uint64_t kValidationStream = 0x7A11DA7EULL;
constexpr std::uint64_t kSplitStream = 0x5B117ULL;

std::vector<double> to_double(const float* p, std::size_t n) { return {p, p + n}; }

Tensor4<float> batch_of(const std::vector<ClipPair>& clips, bool camera_a, InputNorm norm) {
  std::vector<SpatioTemporalMap> maps;
  maps.reserve(clips.size());
  for (const auto& c : clips) maps.push_back(normalize_input(camera_a ? c.map_a : c.map_b, norm));
  std::vector<const SpatioTemporalMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return to_batch<float>(ptrs);
}

std::vector<BandPsd> psds_of(const Tensor4<float>& y, const PsdOperator& op) {
  std::vector<BandPsd> out;
  for (int i = 0; i < y.n; ++i) out.push_back(op(to_double(y.sample(i), static_cast<std::size_t>(y.w))));
  return out;
}

std::vector<BandPsd> truth_psds(const std::vector<ClipPair>& clips, const PsdOperator& op) {
  std::vector<BandPsd> out;
  for (const auto& c : clips) {
    if (!c.truth_wave) throw Error("clip " + c.id + " has no truth wave");
    out.push_back(op(c.truth_wave->samples));
  }
  return out;
}

Tensor4<float> wave_gradient(const Tensor4<float>& y, const PsdOperator& op,
                             const std::vector<std::vector<double>>& grad_psd, double scale) {
  Tensor4<float> g(y.n, 1, 1, y.w);
  for (int i = 0; i < y.n; ++i) {
    const auto gw = op.backward(to_double(y.sample(i), static_cast<std::size_t>(y.w)), grad_psd[static_cast<std::size_t>(i)]);
    float* dst = g.sample(i);
    for (std::size_t t = 0; t < gw.size(); ++t) dst[t] = static_cast<float>(gw[t] * scale);
  }
  return g;
}

AdamWSettings optimizer_settings(const TrainConfig& cfg) {
  AdamWSettings s;
  s.lr = cfg.lr;
  s.weight_decay = cfg.weight_decay;
  return s;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

Split split_videos(std::size_t count, const TrainConfig& cfg) {
  Split s;
  s.val = validation_videos(count, cfg);
  for (std::size_t i = 0; i < count; ++i) {
    if (std::find(s.val.begin(), s.val.end(), i) == s.val.end()) s.train.push_back(i);
  }
  return s;
}

struct ClipRef {
  std::size_t video = 0;
  AugmentDraw draw;
};

std::vector<ClipRef> epoch_clips(const std::vector<VideoPair>& videos, const std::vector<std::size_t>& train_idx,
                                 const TrainConfig& cfg, int epoch) {
  auto rng = pair_rng(cfg.seed, static_cast<std::uint64_t>(epoch));
  std::vector<ClipRef> clips;
  for (std::size_t v : train_idx) {
    for (int k = 0; k < cfg.clips_per_video; ++k) {
      clips.push_back({v, draw_augment(cfg.augment, static_cast<int>(videos[v].a.frames), rng)});
    }
  }
  std::shuffle(clips.begin(), clips.end(), rng);
  return clips;
}

std::vector<ClipPair> fixed_clips(const std::vector<VideoPair>& videos, const std::vector<std::size_t>& idx,
                                  const TrainConfig& cfg) {
  AugmentSpec plain = cfg.augment;
  plain.minus = 0;
  plain.plus = 0;
  auto rng = pair_rng(cfg.seed ^ kValidationStream, 0);
  std::vector<ClipPair> clips;
  for (std::size_t v : idx) {
    for (int k = 0; k < cfg.clips_per_video; ++k) {
      clips.push_back(make_clip(videos[v], plain, draw_augment(plain, static_cast<int>(videos[v].a.frames), rng)));
    }
  }
  return clips;
}

void check_videos(const std::vector<VideoPair>& videos, const TrainConfig& cfg, bool need_truth) {
  if (videos.empty()) throw Error("empty dataset");
  for (const auto& v : videos) {
    if (v.a.channels != static_cast<std::uint32_t>(cfg.net.in_channels) || v.b.channels != v.a.channels) {
      throw Error("video " + v.id + " channel count does not match the task");
    }
    if (v.a.frames != v.b.frames || v.a.rois != v.b.rois) throw Error("video " + v.id + " cameras are not synchronized");
    if (static_cast<int>(v.a.frames) < cfg.augment.max_length()) {
      throw Error("video " + v.id + " is shorter than the longest augmented clip");
    }
    if (need_truth && !v.truth) throw Error("video " + v.id + " has no truth wave");
  }
}

NetConfig model_config(const TrainConfig& cfg, std::uint64_t offset) {
  NetConfig c = cfg.net;
  c.seed = cfg.net.seed + offset;
  return c;
}

// Mean per-anchor loss over `clips`, processed in chunks of cfg.batch.
template <class Evaluate>
double chunked_loss(const std::vector<ClipPair>& clips, const TrainConfig& cfg, Evaluate&& evaluate) {
  if (clips.empty()) return 0.0;
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t begin = 0; begin < clips.size(); begin += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t end = std::min(clips.size(), begin + static_cast<std::size_t>(cfg.batch));
    std::vector<ClipPair> chunk(clips.begin() + static_cast<std::ptrdiff_t>(begin),
                                clips.begin() + static_cast<std::ptrdiff_t>(end));
    total += evaluate(chunk);
    anchors += chunk.size();
  }
  return total / static_cast<double>(anchors);
}

PsdOperator train_psd(const ClipPair& clip, const TrainConfig& cfg) {
  return PsdOperator(clip.map_a.frames, clip.map_a.fps, Band::train_band(cfg.task), cfg.psd_bins);
}

double pair_loss(const Net& a, const Net& b, const std::vector<ClipPair>& clips, const TrainConfig& cfg) {
  return chunked_loss(clips, cfg, [&](const std::vector<ClipPair>& chunk) {
    const auto op = train_psd(chunk.front(), cfg);
    const auto ya = a.predict(batch_of(chunk, true, cfg.input_norm));
    const auto yb = b.predict(batch_of(chunk, false, cfg.input_norm));
    return contrastive_loss(psds_of(ya, op), psds_of(yb, op), cfg.tau).value;
  });
}

class Trainer {
 public:
  Trainer(const std::vector<VideoPair>& videos, const TrainConfig& cfg, bool supervised)
      : videos_(videos), cfg_(cfg), supervised_(supervised), split_(split_videos(videos.size(), cfg)) {
    if (split_.train.empty()) throw Error("no training videos after the validation split");
    val_clips_ = fixed_clips(videos_, split_.val, cfg_);
  }

  TrainResult run(TrainResult state, const EpochCallback& on_epoch) {
    TrainResult best = state;
    double best_val = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      const auto refs = epoch_clips(videos_, split_.train, cfg_, epoch);
      double loss_sum = 0.0;
      std::size_t anchors = 0;
      int step = 0;
      for (std::size_t begin = 0; begin < refs.size(); begin += static_cast<std::size_t>(cfg_.batch)) {
        const std::size_t end = std::min(refs.size(), begin + static_cast<std::size_t>(cfg_.batch));
        if (end - begin < 2) break;  // a lone clip has no negatives
        std::vector<ClipPair> clips;
        for (std::size_t i = begin; i < end; ++i) {
          clips.push_back(make_clip(videos_[refs[i].video], cfg_.augment, refs[i].draw));
        }
        ++step;
        const double loss = train_step(state, clips);
        if (!std::isfinite(loss)) {
          throw Error("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
        }
        loss_sum += loss * static_cast<double>(clips.size());
        anchors += clips.size();
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = anchors > 0 ? loss_sum / static_cast<double>(anchors) : 0.0;
      rec.val_loss = val_clips_.empty() ? rec.train_loss : validation(state);
      state.history.push_back(rec);
      if (rec.val_loss < best_val) {
        best_val = rec.val_loss;
        best = state;
        best.best_epoch = epoch;
      }
      if (on_epoch && !on_epoch(rec)) break;
    }
    best.history = state.history;
    return best;
  }

 private:
  PsdOperator psd_operator(const ClipPair& clip) const { return train_psd(clip, cfg_); }

  double train_step(TrainResult& s, const std::vector<ClipPair>& clips) {
    const auto op = psd_operator(clips.front());
    const double scale = 1.0 / static_cast<double>(clips.size());
    const auto settings = optimizer_settings(cfg_);
    const auto xa = batch_of(clips, true, cfg_.input_norm);

    if (supervised_) {
      Net::Cache cache;
      const auto ya = s.model_a.forward(xa, Mode::Train, &cache);
      const auto loss = anchored_loss(psds_of(ya, op), truth_psds(clips, op), cfg_.tau);
      auto grads = s.model_a.zero_gradients();
      s.model_a.backward(cache, wave_gradient(ya, op, loss.grad_a, scale), grads);
      s.optimizer_a.step(s.model_a.params(), grads, settings);
      return loss.value * scale;
    }

    const auto xb = batch_of(clips, false, cfg_.input_norm);
    switch (cfg_.mode) {
      case TrainMode::Dual: {
        Net::Cache ca, cb;
        const auto ya = s.model_a.forward(xa, Mode::Train, &ca);
        const auto yb = s.model_b.forward(xb, Mode::Train, &cb);
        const auto loss = contrastive_loss(psds_of(ya, op), psds_of(yb, op), cfg_.tau);
        auto ga = s.model_a.zero_gradients();
        auto gb = s.model_b.zero_gradients();
        s.model_a.backward(ca, wave_gradient(ya, op, loss.grad_a, scale), ga);
        s.model_b.backward(cb, wave_gradient(yb, op, loss.grad_b, scale), gb);
        s.optimizer_a.step(s.model_a.params(), ga, settings);
        s.optimizer_b.step(s.model_b.params(), gb, settings);
        return loss.value * scale;
      }
      case TrainMode::PretrainAnchor: {
        Net::Cache cb;
        const auto ya = s.model_a.predict(xa);
        const auto yb = s.model_b.forward(xb, Mode::Train, &cb);
        const auto loss = contrastive_loss(psds_of(ya, op), psds_of(yb, op), cfg_.tau);
        auto gb = s.model_b.zero_gradients();
        s.model_b.backward(cb, wave_gradient(yb, op, loss.grad_b, scale), gb);
        s.optimizer_b.step(s.model_b.params(), gb, settings);
        return loss.value * scale;
      }
      case TrainMode::GeneralShared: {
        Net::Cache ca, cb;
        const auto ya = s.model_b.forward(xa, Mode::Train, &ca);
        const auto yb = s.model_b.forward(xb, Mode::Train, &cb);
        const auto loss = contrastive_loss(psds_of(ya, op), psds_of(yb, op), cfg_.tau);
        auto g = s.model_b.zero_gradients();
        s.model_b.backward(ca, wave_gradient(ya, op, loss.grad_a, scale), g);
        s.model_b.backward(cb, wave_gradient(yb, op, loss.grad_b, scale), g);
        s.optimizer_b.step(s.model_b.params(), g, settings);
        s.model_a = s.model_b;
        s.optimizer_a = s.optimizer_b;
        return loss.value * scale;
      }
    }
    throw Error("unknown training mode");
  }

  double validation(const TrainResult& s) const {
    if (supervised_) {
      return chunked_loss(val_clips_, cfg_, [&](const std::vector<ClipPair>& chunk) {
        const auto op = psd_operator(chunk.front());
        const auto ya = s.model_a.predict(batch_of(chunk, true, cfg_.input_norm));
        return anchored_loss(psds_of(ya, op), truth_psds(chunk, op), cfg_.tau).value;
      });
    }
    return pair_loss(s.model_a, s.model_b, val_clips_, cfg_);
  }

  const std::vector<VideoPair>& videos_;
  const TrainConfig& cfg_;
  bool supervised_;
  Split split_;
  std::vector<ClipPair> val_clips_;
};

TrainResult initial_state(const TrainConfig& cfg, const Net* init_a, const Net* init_b) {
  TrainResult s{init_a ? *init_a : Net(model_config(cfg, 0)), init_b ? *init_b : Net(model_config(cfg, 1)), {}, {},
                {}, 0};
  for (const Net* n : {&s.model_a, &s.model_b}) {
    const auto& c = n->config();
    if (c.in_channels != cfg.net.in_channels || c.rois != cfg.net.rois || c.frames != cfg.frames()) {
      throw Error("initial model does not match the training configuration");
    }
  }
  s.optimizer_a = AdamW(s.model_a.params());
  s.optimizer_b = AdamW(s.model_b.params());
  return s;
}

InputNorm parse_input_norm(const std::string& text) {
  if (text == "none") return InputNorm::None;
  if (text == "row_mean") return InputNorm::RowMean;
  throw Error("unknown input_norm '" + text + "'");
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Dual:
      return "dual";
    case TrainMode::PretrainAnchor:
      return "pretrain_anchor";
    case TrainMode::GeneralShared:
      return "general_shared";
  }
  return "dual";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "dual") return TrainMode::Dual;
  if (text == "pretrain_anchor") return TrainMode::PretrainAnchor;
  if (text == "general_shared" || text == "general") return TrainMode::GeneralShared;
  throw Error("unknown training mode '" + text + "'");
}

TrainConfig TrainConfig::defaults(Task task) {
  TrainConfig c;
  c.task = task;
  c.net = NetConfig::for_task(task);
  c.augment.frames = c.net.frames;
  c.lr = task == Task::HR ? 1e-3 : 1e-4;
  return c;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv, Task task) {
  TrainConfig c = defaults(task);
  c.mode = parse_train_mode(kv.get_string("mode", to_string(c.mode)));
  c.batch = static_cast<int>(kv.get_int("batch", c.batch));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.lr = kv.get_double("lr", c.lr);
  c.tau = kv.get_double("tau", c.tau);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.augment.frames = static_cast<int>(kv.get_int("frames", c.augment.frames));
  c.augment.minus = static_cast<int>(kv.get_int("aug_minus", c.augment.minus));
  c.augment.plus = static_cast<int>(kv.get_int("aug_plus", c.augment.plus));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.clips_per_video = static_cast<int>(kv.get_int("clips_per_video", c.clips_per_video));
  c.psd_bins = static_cast<int>(kv.get_int("psd_bins", c.psd_bins));
  c.input_norm = parse_input_norm(kv.get_string("input_norm", c.input_norm == InputNorm::None ? "none" : "row_mean"));
  c.net.frames = c.augment.frames;
  c.net.seed = c.seed;
  c.net.stem_width = static_cast<int>(kv.get_int("stem_width", c.net.stem_width));
  if (kv.contains("block_widths")) {
    c.net.block_widths.clear();
    for (double w : kv.get_doubles("block_widths", {})) c.net.block_widths.push_back(static_cast<int>(w));
  }
  c.net.time_pool_blocks = static_cast<int>(kv.get_int("time_pool_blocks", c.net.time_pool_blocks));
  c.net.bottleneck_convs = static_cast<int>(kv.get_int("bottleneck_convs", c.net.bottleneck_convs));
  c.net.decoder_convs = static_cast<int>(kv.get_int("decoder_convs", c.net.decoder_convs));
  c.augment.seed = c.seed;
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (batch < 2) throw Error("batch must be at least 2");
  if (epochs < 0) throw Error("epochs must be non-negative");
  if (!(lr > 0.0)) throw Error("lr must be positive");
  if (!(tau > 0.0)) throw Error("tau must be positive");
  if (weight_decay < 0.0) throw Error("weight_decay must be non-negative");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw Error("val_fraction must lie in [0, 1)");
  if (clips_per_video < 1) throw Error("clips_per_video must be positive");
  if (psd_bins < 2) throw Error("psd_bins must be at least 2");
  augment.validate();
  net.validate();
  if (net.frames != augment.frames) throw Error("network frames must equal the clip length");
  if (net.in_channels != (task == Task::HR ? 3 : 1)) throw Error("network channels do not match the task");
}

ClipPair make_clip(const VideoPair& video, const AugmentSpec& spec, const AugmentDraw& draw) {
  ClipPair c;
  c.id = video.id;
  auto [a, b] = augment_pair(video.a, video.b, spec, draw);
  c.map_a = std::move(a);
  c.map_b = std::move(b);
  if (video.truth) {
    const auto& w = video.truth->samples;
    if (draw.start + draw.length > static_cast<int>(w.size())) throw Error("truth wave shorter than video " + video.id);
    const std::span<const double> seg(w.data() + draw.start, static_cast<std::size_t>(draw.length));
    c.truth_wave = Waveform{resample_linear(seg, static_cast<std::size_t>(spec.frames)), video.truth->fps};
  }
  return c;
}

SpatioTemporalMap normalize_input(const SpatioTemporalMap& map, InputNorm norm) {
  if (norm == InputNorm::None) return map;
  SpatioTemporalMap out = map;
  const std::size_t rows = std::size_t{map.channels} * map.rois;
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = out.data.data() + r * map.frames;
    double mean = 0.0;
    for (std::size_t t = 0; t < map.frames; ++t) mean += row[t];
    mean /= static_cast<double>(map.frames);
    if (std::abs(mean) < 1e-3) continue;
    for (std::size_t t = 0; t < map.frames; ++t) row[t] = static_cast<float>(row[t] / mean - 1.0);
  }
  return out;
}

std::vector<std::size_t> validation_videos(std::size_t count, const TrainConfig& cfg) {
  std::size_t n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(count)));
  if (cfg.val_fraction > 0.0 && count >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, count > 0 ? count - 1 : 0);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  auto rng = pair_rng(cfg.seed ^ kSplitStream, 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n_val);
  std::sort(order.begin(), order.end());
  return order;
}

TrainResult train(const std::vector<VideoPair>& videos, const TrainConfig& cfg, const TrainInit& init,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_videos(videos, cfg, false);
  if (cfg.mode == TrainMode::PretrainAnchor && init.anchor == nullptr) {
    throw Error("pretrain_anchor mode needs a pretrained anchor model");
  }
  auto state = initial_state(cfg, init.anchor, init.init_b);
  if (cfg.mode == TrainMode::GeneralShared) {
    state.model_a = state.model_b;
    state.optimizer_a = state.optimizer_b;
  }
  Trainer trainer(videos, cfg, false);
  return trainer.run(std::move(state), on_epoch);
}

TrainResult pretrain_supervised(const std::vector<VideoPair>& videos, const TrainConfig& cfg, const Net* init,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  check_videos(videos, cfg, true);
  auto state = initial_state(cfg, init, nullptr);
  Trainer trainer(videos, cfg, true);
  auto result = trainer.run(std::move(state), on_epoch);
  result.model_b = result.model_a;
  result.optimizer_b = result.optimizer_a;
  return result;
}

double validation_loss(const Net& model_a, const Net& model_b, const std::vector<VideoPair>& videos,
                       const TrainConfig& cfg) {
  cfg.validate();
  check_videos(videos, cfg, false);
  std::vector<std::size_t> all(videos.size());
  std::iota(all.begin(), all.end(), 0);
  return pair_loss(model_a, model_b, fixed_clips(videos, all, cfg), cfg);
}

Waveform infer_wave(const Net& model, const SpatioTemporalMap& map, InputNorm norm) {
  map.validate();
  const auto& c = model.config();
  if (map.channels != static_cast<std::uint32_t>(c.in_channels) || map.rois != static_cast<std::uint32_t>(c.rois)) {
    throw Error("map shape does not match the model");
  }
  if (map.frames < 2) throw Error("map needs at least 2 frames");
  const int T = c.frames;
  const int total = static_cast<int>(map.frames);
  const int full = total / T;
  const int rest = total - full * T;

  Waveform wave;
  wave.fps = map.fps;
  wave.samples.reserve(static_cast<std::size_t>(total));
  if (full > 0) {
    std::vector<SpatioTemporalMap> segs;
    for (int s = 0; s < full; ++s) segs.push_back(normalize_input(crop_temporal(map, s * T, T), norm));
    std::vector<const SpatioTemporalMap*> ptrs;
    for (const auto& s : segs) ptrs.push_back(&s);
    const auto y = model.predict(to_batch<float>(ptrs));
    for (int s = 0; s < full; ++s) wave.samples.insert(wave.samples.end(), y.sample(s), y.sample(s) + T);
  }
  if (rest == 1) {
    wave.samples.push_back(wave.samples.back());
  } else if (rest > 1) {
    const auto seg = normalize_input(resample_temporal(crop_temporal(map, full * T, rest), rest, T), norm);
    const auto y = model.predict(to_batch<float>({&seg}));
    const auto back = resample_linear(to_double(y.sample(0), static_cast<std::size_t>(T)), static_cast<std::size_t>(rest));
    wave.samples.insert(wave.samples.end(), back.begin(), back.end());
  }
  return wave;
}

RateSeries rates_from_wave(const Waveform& wave, Task task) {
  if (!(wave.fps > 0.0)) throw Error("wave fps must be positive");
  const double seconds = wave.duration();
  if (seconds + 1e-9 < kRateWindowSeconds) throw Error("wave shorter than one 10-s window");
  const auto window = static_cast<std::size_t>(std::lround(kRateWindowSeconds * wave.fps));
  const int count = static_cast<int>(std::floor(seconds + 1e-9)) - static_cast<int>(kRateWindowSeconds) + 1;
  RateSeries out;
  out.task = task;
  const Band band = Band::infer_band(task);
  for (int s = 0; s < count; ++s) {
    const auto start = static_cast<std::size_t>(std::lround(s * wave.fps));
    const std::size_t len = std::min(window, wave.size() - start);
    const std::span<const double> seg(wave.samples.data() + start, len);
    out.t_sec.push_back(s);
    out.bpm.push_back(60.0 * spectrum::peak_frequency(seg, wave.fps, band));
  }
  return out;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  CsvTable t;
  t.columns = {"epoch", "train_loss", "val_loss"};
  for (const auto& r : history) t.rows.push_back({static_cast<double>(r.epoch), r.train_loss, r.val_loss});
  write_csv(t, path);
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest: " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
}

std::vector<nlohmann::json> manifest_pairs(const nlohmann::json& m, const std::string& split) {
  std::vector<nlohmann::json> out;
  if (!m.contains("pairs") || !m["pairs"].is_array()) throw Error("manifest has no pairs array");
  for (const auto& p : m["pairs"]) {
    if (split.empty() || p.value("split", std::string()) == split) out.push_back(p);
  }
  return out;
}

}  // namespace

std::vector<VideoPair> load_manifest(const std::filesystem::path& manifest, Task task, const std::string& split) {
  const auto m = read_manifest(manifest);
  const auto dir = manifest.parent_path();
  const std::string key_a = task == Task::HR ? "stm_a" : "flow_stm_a";
  const std::string key_b = task == Task::HR ? "stm_b" : "flow_stm_b";
  std::vector<VideoPair> out;
  for (const auto& p : manifest_pairs(m, split)) {
    VideoPair v;
    v.id = p.at("id").get<std::string>();
    v.a = stm_read(dir / p.at(key_a).get<std::string>());
    v.b = stm_read(dir / p.at(key_b).get<std::string>());
    if (p.contains("truth_wave_csv")) {
      const auto table = read_csv(dir / p["truth_wave_csv"].get<std::string>());
      v.truth = Waveform{table.column(task == Task::HR ? "pulse" : "resp"), v.a.fps};
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::filesystem::path> manifest_truth_rates(const std::filesystem::path& manifest, Task task,
                                                        const std::string& split) {
  const auto m = read_manifest(manifest);
  std::vector<std::filesystem::path> out;
  for (const auto& p : manifest_pairs(m, split)) {
    out.push_back(manifest.parent_path() / p.at(task == Task::HR ? "truth_hr_csv" : "truth_rr_csv").get<std::string>());
  }
  return out;
}

}  // namespace calphys
