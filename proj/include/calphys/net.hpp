#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "calphys/types.hpp"

namespace calphys {

/// Shape and initialization of the 2D temporal CNN.
///
/// Stack: a temporal stem conv, then one block per entry of `block_widths`
/// (average-pool ROIs by 2, and time by 2 for the first `time_pool_blocks`
/// blocks; an ROI-axis conv; a time-axis conv). ROIs are then averaged away,
/// `bottleneck_convs` time-axis convs run at the pooled rate, and every time
/// pooling is undone by a linear x2 upsampling followed by `decoder_convs`
/// time-axis convs. A 1x1 conv yields the single output channel. Every conv
/// except the head is followed by BatchNorm and ELU.
struct NetConfig {
  int in_channels = 3;
  int rois = 224;
  int frames = 150;
  int stem_width = 32;
  std::vector<int> block_widths{64, 64, 64, 64};
  int time_pool_blocks = 2;
  int bottleneck_convs = 2;
  int decoder_convs = 2;
  int kernel = 5;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t seed = 0;

  static NetConfig for_task(Task task);
  void validate() const;
  std::uint64_t digest() const;

  bool operator==(const NetConfig&) const = default;
};

enum class Mode { Train, Eval };

/// Dense N x C x H x W tensor; H is the ROI axis and W the time axis.
template <class Scalar>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<Scalar> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, Scalar(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * plane(); }
  Scalar* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const Scalar* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  Scalar& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  Scalar at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
};

template <class Scalar>
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<Scalar> values;

  bool operator==(const NamedTensor&) const = default;
};

template <class Scalar>
using TensorList = std::vector<NamedTensor<Scalar>>;

/// One entry of the layer stack; indices point into params()/buffers().
struct CnnLayer {
  enum class Kind { ConvTime, ConvRoi, Pool, MeanRois, Upsample, Head };
  Kind kind = Kind::ConvTime;
  std::string name;
  int in_c = 0;
  int out_c = 0;
  bool pool_time = false;  // Pool: also halve the time axis
  int stage = -1;          // Upsample: index of the time pooling being undone
  int weight = -1, bias = -1, gamma = -1, beta = -1;
  int running_mean = -1, running_var = -1;
};

/// Stacks maps (all the same shape) into one batch tensor.
template <class Scalar>
Tensor4<Scalar> to_batch(const std::vector<const SpatioTemporalMap*>& maps);

template <class Scalar>
class TemporalCnn {
 public:
  struct Cache;

  explicit TemporalCnn(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  TensorList<Scalar>& params() { return params_; }
  const TensorList<Scalar>& params() const { return params_; }
  /// BatchNorm running statistics.
  TensorList<Scalar>& buffers() { return buffers_; }
  const TensorList<Scalar>& buffers() const { return buffers_; }
  std::size_t parameter_count() const;

  /// Zero-filled gradient list with the same layout as params().
  TensorList<Scalar> zero_gradients() const;

  /// Train mode normalizes with batch statistics and updates the running
  /// averages; eval mode uses the running averages. Returns N x 1 x 1 x T.
  /// When `cache` is given the activations needed by backward() are kept.
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode, Cache* cache = nullptr);

  /// Eval-mode forward that leaves the network untouched.
  Tensor4<Scalar> predict(const Tensor4<Scalar>& x) const;

  /// Accumulates parameter gradients into `grads` and returns the input gradient.
  Tensor4<Scalar> backward(const Cache& cache, const Tensor4<Scalar>& grad_out, TensorList<Scalar>& grads) const;

  /// Convert between precisions (used by gradient checks and checkpoints).
  template <class Other>
  TemporalCnn<Other> cast() const;

 private:
  template <class>
  friend class TemporalCnn;

  Tensor4<Scalar> run(const Tensor4<Scalar>& x, Mode mode, Cache* cache, TensorList<Scalar>* stats) const;

  NetConfig config_;
  std::vector<CnnLayer> layers_;
  TensorList<Scalar> params_;
  TensorList<Scalar> buffers_;
};

/// Per-forward activations retained for backward().
template <class Scalar>
struct TemporalCnn<Scalar>::Cache {
  struct Record {
    Tensor4<Scalar> input;  // kept only for layers that need it
    Tensor4<Scalar> xhat;   // normalized pre-activation (conv layers)
    std::vector<Scalar> invstd;
    int in_c = 0, in_h = 0, in_w = 0;
  };
  Mode mode = Mode::Train;
  int batch = 0;
  std::vector<Record> records;
  bool valid = false;
};

/// Decoupled-weight-decay Adam.
struct AdamWSettings {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const TensorList<float>& params);

  /// w <- w(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps)
  void step(TensorList<float>& params, const TensorList<float>& grads, const AdamWSettings& settings);

  std::uint64_t steps() const { return steps_; }
  const TensorList<float>& first_moment() const { return m_; }
  const TensorList<float>& second_moment() const { return v_; }
  TensorList<float>& first_moment() { return m_; }
  TensorList<float>& second_moment() { return v_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  bool operator==(const AdamW&) const = default;

 private:
  TensorList<float> m_;
  TensorList<float> v_;
  std::uint64_t steps_ = 0;
};

using Net = TemporalCnn<float>;

/// FNV-1a digest over parameter and buffer bytes.
std::uint64_t parameter_digest(const Net& net);

/// Model plus optimizer state as stored on disk.
struct Checkpoint {
  Net net;
  AdamW optimizer;
  Task task = Task::HR;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const std::filesystem::path& path, const Net& net, const AdamW& optimizer, Task task);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace calphys
