#include "calphys/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace calphys {

namespace {

template <class Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using MatMap = Eigen::Map<RowMat<Scalar>>;
template <class Scalar>
using ConstMatMap = Eigen::Map<const RowMat<Scalar>>;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

nlohmann::json config_to_json(const NetConfig& c) {
  return {{"in_channels", c.in_channels},   {"rois", c.rois},
          {"frames", c.frames},             {"stem_width", c.stem_width},
          {"block_widths", c.block_widths}, {"time_pool_blocks", c.time_pool_blocks},
          {"bottleneck_convs", c.bottleneck_convs}, {"decoder_convs", c.decoder_convs},
          {"kernel", c.kernel},             {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps},             {"seed", c.seed}};
}

NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.in_channels = j.at("in_channels");
  c.rois = j.at("rois");
  c.frames = j.at("frames");
  c.stem_width = j.at("stem_width");
  c.block_widths = j.at("block_widths").get<std::vector<int>>();
  c.time_pool_blocks = j.at("time_pool_blocks");
  c.bottleneck_convs = j.at("bottleneck_convs");
  c.decoder_convs = j.at("decoder_convs");
  c.kernel = j.at("kernel");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  c.seed = j.at("seed");
  return c;
}

inline int ceil_half(int v) { return (v + 1) / 2; }

// exp for y <= 0 in single precision: 2^k * p(r) with r in [-ln2/2, ln2/2],
// relative error below 2e-7. Branch-free so the ELU loops vectorize.
inline float exp_nonpositive(float y) {
  y = std::max(y, -87.0F);
  const float k = std::nearbyint(y * 1.44269504F);
  const float r = (y - k * 0.693359375F) + k * 2.12194440e-4F;
  float p = 1.0F / 5040.0F;
  p = p * r + 1.0F / 720.0F;
  p = p * r + 1.0F / 120.0F;
  p = p * r + 1.0F / 24.0F;
  p = p * r + 1.0F / 6.0F;
  p = p * r + 0.5F;
  p = p * r + 1.0F;
  p = p * r + 1.0F;
  return p * std::bit_cast<float>(static_cast<std::int32_t>(k + 127.0F) << 23);
}

inline double exp_nonpositive(double y) { return std::exp(y); }

template <class Scalar>
inline Scalar elu(Scalar y) {
  return y > Scalar(0) ? y : exp_nonpositive(std::min(y, Scalar(0))) - Scalar(1);
}

template <class Scalar>
inline Scalar elu_grad(Scalar y) {
  return y > Scalar(0) ? Scalar(1) : exp_nonpositive(std::min(y, Scalar(0)));
}

// Column matrix for a 1D kernel applied along time (along_roi == false) or
// along the ROI axis, "same" padding. Rows are (ci, k), columns (y, x).
template <class Scalar>
void im2col(const Scalar* in, int cin, int h, int w, int kernel, bool along_roi, RowMat<Scalar>& cols) {
  const int pad = kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  cols.resize(static_cast<Eigen::Index>(cin) * kernel, static_cast<Eigen::Index>(plane));
  for (int ci = 0; ci < cin; ++ci) {
    const Scalar* src = in + static_cast<std::size_t>(ci) * plane;
    for (int k = 0; k < kernel; ++k) {
      Scalar* dst = cols.data() + (static_cast<std::size_t>(ci) * kernel + k) * plane;
      const int off = k - pad;
      if (along_roi) {
        for (int y = 0; y < h; ++y) {
          const int sy = y + off;
          Scalar* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, Scalar(0));
          } else {
            std::copy(src + static_cast<std::size_t>(sy) * w, src + static_cast<std::size_t>(sy + 1) * w, row);
          }
        }
      } else {
        // Output columns [x0, x1) read srow[x + off]; the rest are padding.
        const int x0 = std::clamp(-off, 0, w);
        const int x1 = std::clamp(w - off, x0, w);
        for (int y = 0; y < h; ++y) {
          const Scalar* srow = src + static_cast<std::size_t>(y) * w;
          Scalar* row = dst + static_cast<std::size_t>(y) * w;
          std::fill(row, row + x0, Scalar(0));
          std::copy(srow + x0 + off, srow + x1 + off, row + x0);
          std::fill(row + x1, row + w, Scalar(0));
        }
      }
    }
  }
}

template <class Scalar>
void col2im(const RowMat<Scalar>& cols, int cin, int h, int w, int kernel, bool along_roi, Scalar* out) {
  const int pad = kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    Scalar* dst = out + static_cast<std::size_t>(ci) * plane;
    for (int k = 0; k < kernel; ++k) {
      const Scalar* src = cols.data() + (static_cast<std::size_t>(ci) * kernel + k) * plane;
      const int off = k - pad;
      for (int y = 0; y < h; ++y) {
        const Scalar* row = src + static_cast<std::size_t>(y) * w;
        if (along_roi) {
          const int sy = y + off;
          if (sy < 0 || sy >= h) continue;
          Scalar* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) drow[x] += row[x];
        } else {
          Scalar* drow = dst + static_cast<std::size_t>(y) * w + off;
          const int x0 = std::clamp(-off, 0, w);
          const int x1 = std::clamp(w - off, x0, w);
          for (int x = x0; x < x1; ++x) drow[x] += row[x];
        }
      }
    }
  }
}

struct UpsampleTap {
  int lo;
  int hi;
  double frac;
};

// Half-pixel linear interpolation from `from` samples to `to` samples.
std::vector<UpsampleTap> upsample_taps(int from, int to) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(to));
  for (int i = 0; i < to; ++i) {
    double pos = (i + 0.5) * static_cast<double>(from) / to - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(from - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, from - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, pos - lo};
  }
  return taps;
}

template <class Scalar>
NamedTensor<Scalar> make_tensor(std::string name, std::vector<std::uint32_t> dims, Scalar fill) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return {std::move(name), std::move(dims), std::vector<Scalar>(n, fill)};
}

}  // namespace

NetConfig NetConfig::for_task(Task task) {
  NetConfig c;
  c.in_channels = task == Task::HR ? 3 : 1;
  c.frames = task == Task::HR ? 150 : 300;
  return c;
}

void NetConfig::validate() const {
  if (in_channels < 1 || rois < 1) throw Error("invalid network input shape");
  if (frames < 8) throw Error("network needs at least 8 frames");
  if (stem_width < 1 || block_widths.empty()) throw Error("invalid network widths");
  for (int w : block_widths) {
    if (w < 1) throw Error("invalid network widths");
  }
  if (time_pool_blocks < 0 || time_pool_blocks > static_cast<int>(block_widths.size())) {
    throw Error("invalid time pooling count");
  }
  if (kernel < 1 || kernel % 2 == 0) throw Error("kernel must be odd");
  if (bottleneck_convs < 0 || decoder_convs < 0) throw Error("invalid conv counts");
}

std::uint64_t NetConfig::digest() const {
  const auto text = config_to_json(*this).dump();
  return fnv1a(text.data(), text.size());
}

template <class Scalar>
Tensor4<Scalar> to_batch(const std::vector<const SpatioTemporalMap*>& maps) {
  if (maps.empty()) throw Error("empty batch");
  const auto& ref = *maps.front();
  Tensor4<Scalar> out(static_cast<int>(maps.size()), static_cast<int>(ref.channels), static_cast<int>(ref.rois),
                      static_cast<int>(ref.frames));
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = *maps[i];
    if (m.channels != ref.channels || m.rois != ref.rois || m.frames != ref.frames) {
      throw Error("shape mismatch within batch");
    }
    std::transform(m.data.begin(), m.data.end(), out.sample(static_cast<int>(i)),
                   [](float v) { return static_cast<Scalar>(v); });
  }
  return out;
}

template <class Scalar>
TemporalCnn<Scalar>::TemporalCnn(const NetConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const int k = config_.kernel;

  auto add_conv = [&](CnnLayer::Kind kind, std::string name, int cin, int cout, bool norm) {
    CnnLayer layer;
    layer.kind = kind;
    layer.name = name;
    layer.in_c = cin;
    layer.out_c = cout;
    const int taps = kind == CnnLayer::Kind::Head ? 1 : k;
    const int fan_in = cin * taps;
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto weight = make_tensor<Scalar>(name + ".weight",
                                      {static_cast<std::uint32_t>(cout), static_cast<std::uint32_t>(cin),
                                       static_cast<std::uint32_t>(taps)},
                                      Scalar(0));
    for (auto& v : weight.values) v = static_cast<Scalar>(dist(rng));
    layer.weight = static_cast<int>(params_.size());
    params_.push_back(std::move(weight));
    if (!norm) {
      layer.bias = static_cast<int>(params_.size());
      params_.push_back(make_tensor<Scalar>(name + ".bias", {static_cast<std::uint32_t>(cout)}, Scalar(0)));
    } else {
      layer.gamma = static_cast<int>(params_.size());
      params_.push_back(make_tensor<Scalar>(name + ".bn.weight", {static_cast<std::uint32_t>(cout)}, Scalar(1)));
      layer.beta = static_cast<int>(params_.size());
      params_.push_back(make_tensor<Scalar>(name + ".bn.bias", {static_cast<std::uint32_t>(cout)}, Scalar(0)));
      layer.running_mean = static_cast<int>(buffers_.size());
      buffers_.push_back(make_tensor<Scalar>(name + ".bn.running_mean", {static_cast<std::uint32_t>(cout)}, Scalar(0)));
      layer.running_var = static_cast<int>(buffers_.size());
      buffers_.push_back(make_tensor<Scalar>(name + ".bn.running_var", {static_cast<std::uint32_t>(cout)}, Scalar(1)));
    }
    layers_.push_back(std::move(layer));
  };
  auto add_plain = [&](CnnLayer::Kind kind, std::string name, int channels) {
    CnnLayer layer;
    layer.kind = kind;
    layer.name = std::move(name);
    layer.in_c = channels;
    layer.out_c = channels;
    layers_.push_back(std::move(layer));
    return &layers_.back();
  };

  add_conv(CnnLayer::Kind::ConvTime, "stem", config_.in_channels, config_.stem_width, true);
  int width = config_.stem_width;
  for (std::size_t b = 0; b < config_.block_widths.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    auto* pool = add_plain(CnnLayer::Kind::Pool, prefix + ".pool", width);
    pool->pool_time = static_cast<int>(b) < config_.time_pool_blocks;
    const int next = config_.block_widths[b];
    add_conv(CnnLayer::Kind::ConvRoi, prefix + ".roi", width, next, true);
    add_conv(CnnLayer::Kind::ConvTime, prefix + ".time", next, next, true);
    width = next;
  }
  add_plain(CnnLayer::Kind::MeanRois, "roi_mean", width);
  for (int i = 0; i < config_.bottleneck_convs; ++i) {
    add_conv(CnnLayer::Kind::ConvTime, "bottleneck" + std::to_string(i + 1), width, width, true);
  }
  for (int s = config_.time_pool_blocks - 1; s >= 0; --s) {
    const std::string prefix = "decoder" + std::to_string(config_.time_pool_blocks - s);
    auto* up = add_plain(CnnLayer::Kind::Upsample, prefix + ".upsample", width);
    up->stage = s;
    for (int i = 0; i < config_.decoder_convs; ++i) {
      add_conv(CnnLayer::Kind::ConvTime, prefix + ".conv" + std::to_string(i + 1), width, width, true);
    }
  }
  add_conv(CnnLayer::Kind::Head, "head", width, 1, false);
}

template <class Scalar>
std::size_t TemporalCnn<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

template <class Scalar>
TensorList<Scalar> TemporalCnn<Scalar>::zero_gradients() const {
  TensorList<Scalar> g = params_;
  for (auto& t : g) std::fill(t.values.begin(), t.values.end(), Scalar(0));
  return g;
}

template <class Scalar>
Tensor4<Scalar> TemporalCnn<Scalar>::forward(const Tensor4<Scalar>& x, Mode mode, Cache* cache) {
  return run(x, mode, cache, mode == Mode::Train ? &buffers_ : nullptr);
}

template <class Scalar>
Tensor4<Scalar> TemporalCnn<Scalar>::predict(const Tensor4<Scalar>& x) const {
  return run(x, Mode::Eval, nullptr, nullptr);
}

template <class Scalar>
Tensor4<Scalar> TemporalCnn<Scalar>::run(const Tensor4<Scalar>& x, Mode mode, Cache* cache,
                                         TensorList<Scalar>* stats) const {
  if (x.c != config_.in_channels || x.h != config_.rois) throw Error("input shape does not match network");
  if (x.w < 8) throw Error("network needs at least 8 frames");
  if (x.n < 1) throw Error("empty batch");
  if (x.data.size() != static_cast<std::size_t>(x.n) * x.sample_size()) throw Error("tensor payload size mismatch");

  if (cache != nullptr) {
    cache->mode = mode;
    cache->batch = x.n;
    cache->records.assign(layers_.size(), {});
    cache->valid = false;
  }
  std::vector<int> pooled_lengths;  // time length before each time pooling
  Tensor4<Scalar> cur = x;
  const int n = x.n;

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& layer = layers_[li];
    typename Cache::Record* rec = cache != nullptr ? &cache->records[li] : nullptr;
    if (rec != nullptr) {
      rec->in_c = cur.c;
      rec->in_h = cur.h;
      rec->in_w = cur.w;
    }
    Tensor4<Scalar> next;
    switch (layer.kind) {
      case CnnLayer::Kind::ConvTime:
      case CnnLayer::Kind::ConvRoi:
      case CnnLayer::Kind::Head: {
        const bool along_roi = layer.kind == CnnLayer::Kind::ConvRoi;
        const int taps = layer.kind == CnnLayer::Kind::Head ? 1 : config_.kernel;
        const auto& wt = params_[static_cast<std::size_t>(layer.weight)].values;
        ConstMatMap<Scalar> wmat(wt.data(), layer.out_c, static_cast<Eigen::Index>(layer.in_c) * taps);
        next = Tensor4<Scalar>(n, layer.out_c, cur.h, cur.w);
        const auto plane = static_cast<Eigen::Index>(cur.plane());
        RowMat<Scalar> cols;
        for (int i = 0; i < n; ++i) {
          MatMap<Scalar> out(next.sample(i), layer.out_c, plane);
          if (taps == 1) {
            ConstMatMap<Scalar> in(cur.sample(i), cur.c, plane);
            out.noalias() = wmat * in;
          } else {
            im2col(cur.sample(i), cur.c, cur.h, cur.w, taps, along_roi, cols);
            out.noalias() = wmat * cols;
          }
          if (layer.bias >= 0) {
            const auto& bs = params_[static_cast<std::size_t>(layer.bias)].values;
            for (int co = 0; co < layer.out_c; ++co) out.row(co).array() += bs[static_cast<std::size_t>(co)];
          }
        }
        if (layer.gamma >= 0) {
          const auto& gamma = params_[static_cast<std::size_t>(layer.gamma)].values;
          const auto& beta = params_[static_cast<std::size_t>(layer.beta)].values;
          const std::size_t pl = next.plane();
          const double count = static_cast<double>(n) * static_cast<double>(pl);
          std::vector<Scalar> invstd(static_cast<std::size_t>(layer.out_c));
          for (int co = 0; co < layer.out_c; ++co) {
            double mean = 0.0;
            double var = 0.0;
            if (mode == Mode::Train) {
              for (int i = 0; i < n; ++i) {
                const Scalar* p = next.sample(i) + static_cast<std::size_t>(co) * pl;
                for (std::size_t j = 0; j < pl; ++j) mean += static_cast<double>(p[j]);
              }
              mean /= count;
              for (int i = 0; i < n; ++i) {
                const Scalar* p = next.sample(i) + static_cast<std::size_t>(co) * pl;
                for (std::size_t j = 0; j < pl; ++j) {
                  const double d = static_cast<double>(p[j]) - mean;
                  var += d * d;
                }
              }
              var /= count;
              if (stats != nullptr) {
                auto& rm = (*stats)[static_cast<std::size_t>(layer.running_mean)].values[static_cast<std::size_t>(co)];
                auto& rv = (*stats)[static_cast<std::size_t>(layer.running_var)].values[static_cast<std::size_t>(co)];
                const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
                const double mom = config_.bn_momentum;
                rm = static_cast<Scalar>((1.0 - mom) * static_cast<double>(rm) + mom * mean);
                rv = static_cast<Scalar>((1.0 - mom) * static_cast<double>(rv) + mom * unbiased);
              }
            } else {
              mean = static_cast<double>(buffers_[static_cast<std::size_t>(layer.running_mean)].values[static_cast<std::size_t>(co)]);
              var = static_cast<double>(buffers_[static_cast<std::size_t>(layer.running_var)].values[static_cast<std::size_t>(co)]);
            }
            const auto is = static_cast<Scalar>(1.0 / std::sqrt(var + config_.bn_eps));
            const auto mu = static_cast<Scalar>(mean);
            invstd[static_cast<std::size_t>(co)] = is;
            for (int i = 0; i < n; ++i) {
              Scalar* p = next.sample(i) + static_cast<std::size_t>(co) * pl;
              for (std::size_t j = 0; j < pl; ++j) p[j] = (p[j] - mu) * is;
            }
          }
          if (rec != nullptr) {
            rec->xhat = next;
            rec->invstd = std::move(invstd);
          }
          for (int co = 0; co < layer.out_c; ++co) {
            const Scalar g = gamma[static_cast<std::size_t>(co)];
            const Scalar b = beta[static_cast<std::size_t>(co)];
            for (int i = 0; i < n; ++i) {
              Scalar* p = next.sample(i) + static_cast<std::size_t>(co) * pl;
              for (std::size_t j = 0; j < pl; ++j) p[j] = elu(g * p[j] + b);
            }
          }
        }
        if (rec != nullptr) rec->input = std::move(cur);
        break;
      }
      case CnnLayer::Kind::Pool: {
        const int oh = ceil_half(cur.h);
        const int ow = layer.pool_time ? ceil_half(cur.w) : cur.w;
        if (layer.pool_time) pooled_lengths.push_back(cur.w);
        next = Tensor4<Scalar>(n, cur.c, oh, ow);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < cur.c; ++c) {
            for (int y = 0; y < oh; ++y) {
              const int y0 = 2 * y;
              const int y1 = std::min(y0 + 2, cur.h);
              for (int t = 0; t < ow; ++t) {
                const int t0 = layer.pool_time ? 2 * t : t;
                const int t1 = layer.pool_time ? std::min(t0 + 2, cur.w) : t0 + 1;
                Scalar acc(0);
                for (int yy = y0; yy < y1; ++yy) {
                  for (int tt = t0; tt < t1; ++tt) acc += cur.at(i, c, yy, tt);
                }
                next.at(i, c, y, t) = acc / static_cast<Scalar>((y1 - y0) * (t1 - t0));
              }
            }
          }
        }
        break;
      }
      case CnnLayer::Kind::MeanRois: {
        next = Tensor4<Scalar>(n, cur.c, 1, cur.w);
        const Scalar scale = Scalar(1) / static_cast<Scalar>(cur.h);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < cur.c; ++c) {
            for (int y = 0; y < cur.h; ++y) {
              for (int t = 0; t < cur.w; ++t) next.at(i, c, 0, t) += cur.at(i, c, y, t) * scale;
            }
          }
        }
        break;
      }
      case CnnLayer::Kind::Upsample: {
        const int to = pooled_lengths.at(static_cast<std::size_t>(layer.stage));
        const auto taps = upsample_taps(cur.w, to);
        next = Tensor4<Scalar>(n, cur.c, cur.h, to);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < cur.c; ++c) {
            for (int y = 0; y < cur.h; ++y) {
              for (int t = 0; t < to; ++t) {
                const auto& tap = taps[static_cast<std::size_t>(t)];
                const auto f = static_cast<Scalar>(tap.frac);
                next.at(i, c, y, t) = (Scalar(1) - f) * cur.at(i, c, y, tap.lo) + f * cur.at(i, c, y, tap.hi);
              }
            }
          }
        }
        break;
      }
    }
    for (const Scalar v : next.data) {
      if (!std::isfinite(v)) throw Error("non-finite activation at layer " + std::to_string(li) + " (" + layer.name + ")");
    }
    cur = std::move(next);
  }
  if (cur.w != x.w || cur.c != 1 || cur.h != 1) throw Error("internal: output shape mismatch");
  if (cache != nullptr) cache->valid = true;
  return cur;
}

template <class Scalar>
Tensor4<Scalar> TemporalCnn<Scalar>::backward(const Cache& cache, const Tensor4<Scalar>& grad_out,
                                              TensorList<Scalar>& grads) const {
  if (!cache.valid || cache.records.size() != layers_.size()) throw Error("backward called without forward cache");
  if (grads.size() != params_.size()) throw Error("gradient list does not match parameters");
  if (grad_out.n != cache.batch || grad_out.c != 1 || grad_out.h != 1) throw Error("upstream gradient shape mismatch");
  const int n = cache.batch;
  Tensor4<Scalar> g = grad_out;

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const auto& rec = cache.records[li];
    Tensor4<Scalar> gin(n, rec.in_c, rec.in_h, rec.in_w);
    switch (layer.kind) {
      case CnnLayer::Kind::ConvTime:
      case CnnLayer::Kind::ConvRoi:
      case CnnLayer::Kind::Head: {
        const bool along_roi = layer.kind == CnnLayer::Kind::ConvRoi;
        const int taps = layer.kind == CnnLayer::Kind::Head ? 1 : config_.kernel;
        const std::size_t pl = g.plane();
        if (layer.gamma >= 0) {
          const auto& gamma = params_[static_cast<std::size_t>(layer.gamma)].values;
          const auto& beta = params_[static_cast<std::size_t>(layer.beta)].values;
          auto& ggamma = grads[static_cast<std::size_t>(layer.gamma)].values;
          auto& gbeta = grads[static_cast<std::size_t>(layer.beta)].values;
          const double count = static_cast<double>(n) * static_cast<double>(pl);
          for (int co = 0; co < layer.out_c; ++co) {
            const Scalar gm = gamma[static_cast<std::size_t>(co)];
            const Scalar bt = beta[static_cast<std::size_t>(co)];
            double sum_gy = 0.0;
            double sum_gy_xhat = 0.0;
            // g <- dL/dy (through ELU), then dL/dxhat.
            for (int i = 0; i < n; ++i) {
              Scalar* gp = g.sample(i) + static_cast<std::size_t>(co) * pl;
              const Scalar* xh = rec.xhat.sample(i) + static_cast<std::size_t>(co) * pl;
              for (std::size_t j = 0; j < pl; ++j) {
                const Scalar gy = gp[j] * elu_grad(gm * xh[j] + bt);
                sum_gy += static_cast<double>(gy);
                sum_gy_xhat += static_cast<double>(gy) * static_cast<double>(xh[j]);
                gp[j] = gy * gm;
              }
            }
            ggamma[static_cast<std::size_t>(co)] += static_cast<Scalar>(sum_gy_xhat);
            gbeta[static_cast<std::size_t>(co)] += static_cast<Scalar>(sum_gy);
            const Scalar is = rec.invstd[static_cast<std::size_t>(co)];
            if (cache.mode == Mode::Train) {
              // dz = invstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
              const auto mean_gx = static_cast<Scalar>(sum_gy * static_cast<double>(gm) / count);
              const auto mean_gx_xhat = static_cast<Scalar>(sum_gy_xhat * static_cast<double>(gm) / count);
              for (int i = 0; i < n; ++i) {
                Scalar* gp = g.sample(i) + static_cast<std::size_t>(co) * pl;
                const Scalar* xh = rec.xhat.sample(i) + static_cast<std::size_t>(co) * pl;
                for (std::size_t j = 0; j < pl; ++j) gp[j] = is * (gp[j] - mean_gx - xh[j] * mean_gx_xhat);
              }
            } else {
              for (int i = 0; i < n; ++i) {
                Scalar* gp = g.sample(i) + static_cast<std::size_t>(co) * pl;
                for (std::size_t j = 0; j < pl; ++j) gp[j] *= is;
              }
            }
          }
        }
        const auto& wt = params_[static_cast<std::size_t>(layer.weight)].values;
        auto& gw = grads[static_cast<std::size_t>(layer.weight)].values;
        const Eigen::Index kdim = static_cast<Eigen::Index>(layer.in_c) * taps;
        ConstMatMap<Scalar> wmat(wt.data(), layer.out_c, kdim);
        MatMap<Scalar> gwmat(gw.data(), layer.out_c, kdim);
        const auto plane = static_cast<Eigen::Index>(pl);
        RowMat<Scalar> cols;
        RowMat<Scalar> gcols;
        for (int i = 0; i < n; ++i) {
          ConstMatMap<Scalar> gz(g.sample(i), layer.out_c, plane);
          if (layer.bias >= 0) {
            auto& gb = grads[static_cast<std::size_t>(layer.bias)].values;
            for (int co = 0; co < layer.out_c; ++co) {
              const Scalar* row = g.sample(i) + static_cast<std::size_t>(co) * pl;
              gb[static_cast<std::size_t>(co)] += std::accumulate(row, row + pl, Scalar(0));
            }
          }
          if (taps == 1) {
            ConstMatMap<Scalar> in(rec.input.sample(i), rec.in_c, plane);
            gwmat.noalias() += gz * in.transpose();
            MatMap<Scalar> gi(gin.sample(i), rec.in_c, plane);
            gi.noalias() = wmat.transpose() * gz;
          } else {
            im2col(rec.input.sample(i), rec.in_c, rec.in_h, rec.in_w, taps, along_roi, cols);
            gwmat.noalias() += gz * cols.transpose();
            gcols.noalias() = wmat.transpose() * gz;
            col2im(gcols, rec.in_c, rec.in_h, rec.in_w, taps, along_roi, gin.sample(i));
          }
        }
        break;
      }
      case CnnLayer::Kind::Pool: {
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < rec.in_c; ++c) {
            for (int y = 0; y < g.h; ++y) {
              const int y0 = 2 * y;
              const int y1 = std::min(y0 + 2, rec.in_h);
              for (int t = 0; t < g.w; ++t) {
                const int t0 = layer.pool_time ? 2 * t : t;
                const int t1 = layer.pool_time ? std::min(t0 + 2, rec.in_w) : t0 + 1;
                const Scalar share = g.at(i, c, y, t) / static_cast<Scalar>((y1 - y0) * (t1 - t0));
                for (int yy = y0; yy < y1; ++yy) {
                  for (int tt = t0; tt < t1; ++tt) gin.at(i, c, yy, tt) += share;
                }
              }
            }
          }
        }
        break;
      }
      case CnnLayer::Kind::MeanRois: {
        const Scalar scale = Scalar(1) / static_cast<Scalar>(rec.in_h);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < rec.in_c; ++c) {
            for (int y = 0; y < rec.in_h; ++y) {
              for (int t = 0; t < rec.in_w; ++t) gin.at(i, c, y, t) = g.at(i, c, 0, t) * scale;
            }
          }
        }
        break;
      }
      case CnnLayer::Kind::Upsample: {
        const auto taps = upsample_taps(rec.in_w, g.w);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < rec.in_c; ++c) {
            for (int y = 0; y < rec.in_h; ++y) {
              for (int t = 0; t < g.w; ++t) {
                const auto& tap = taps[static_cast<std::size_t>(t)];
                const auto f = static_cast<Scalar>(tap.frac);
                const Scalar v = g.at(i, c, y, t);
                gin.at(i, c, y, tap.lo) += (Scalar(1) - f) * v;
                gin.at(i, c, y, tap.hi) += f * v;
              }
            }
          }
        }
        break;
      }
    }
    g = std::move(gin);
  }
  return g;
}

template <class Scalar>
template <class Other>
TemporalCnn<Other> TemporalCnn<Scalar>::cast() const {
  TemporalCnn<Other> out(config_);
  auto convert = [](const TensorList<Scalar>& src, TensorList<Other>& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::transform(src[i].values.begin(), src[i].values.end(), dst[i].values.begin(),
                     [](Scalar v) { return static_cast<Other>(v); });
    }
  };
  convert(params_, out.params_);
  convert(buffers_, out.buffers_);
  return out;
}

template struct Tensor4<float>;
template struct Tensor4<double>;
template class TemporalCnn<float>;
template class TemporalCnn<double>;
template Tensor4<float> to_batch<float>(const std::vector<const SpatioTemporalMap*>&);
template Tensor4<double> to_batch<double>(const std::vector<const SpatioTemporalMap*>&);
template TemporalCnn<double> TemporalCnn<float>::cast<double>() const;
template TemporalCnn<float> TemporalCnn<double>::cast<float>() const;
template TemporalCnn<float> TemporalCnn<float>::cast<float>() const;

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(const TensorList<float>& params) : m_(params), v_(params) {
  for (auto& t : m_) std::fill(t.values.begin(), t.values.end(), 0.0F);
  for (auto& t : v_) std::fill(t.values.begin(), t.values.end(), 0.0F);
}

void AdamW::step(TensorList<float>& params, const TensorList<float>& grads, const AdamWSettings& s) {
  if (params.size() != m_.size() || grads.size() != params.size()) throw Error("optimizer state shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != m_[i].values.size() || grads[i].values.size() != params[i].values.size()) {
      throw Error("optimizer state shape mismatch");
    }
    for (float v : grads[i].values) {
      if (!std::isfinite(v)) throw Error("non-finite gradient in " + params[i].name);
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(steps_));
  const double decay = 1.0 - s.lr * s.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    const auto& g = grads[i].values;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = s.beta1 * m[j] + (1.0 - s.beta1) * gj;
      const double vj = s.beta2 * v[j] + (1.0 - s.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + s.eps);
      w[j] = static_cast<float>(static_cast<double>(w[j]) * decay - s.lr * update);
    }
  }
}

// ---------------------------------------------------------------------------
// Digest and checkpoints

std::uint64_t parameter_digest(const Net& net) {
  std::uint64_t h = kFnvOffset;
  for (const auto* list : {&net.params(), &net.buffers()}) {
    for (const auto& t : *list) {
      h = fnv1a(t.name.data(), t.name.size(), h);
      h = fnv1a(t.values.data(), t.values.size() * sizeof(float), h);
    }
  }
  return h;
}

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'P', 'K', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFU);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

void put_tensor(std::ostream& os, const std::string& name, const std::vector<std::uint32_t>& dims,
                const std::vector<float>& values) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(os, d);
  for (float v : values) put_f32(os, v);
}

NamedTensor<float> get_tensor(std::istream& is) {
  NamedTensor<float> t;
  const auto name_len = get_u32(is);
  if (name_len > 4096) throw Error("corrupt checkpoint");
  t.name.resize(name_len);
  if (!is.read(t.name.data(), name_len)) throw Error("truncated checkpoint");
  const auto rank = get_u32(is);
  if (rank > 8) throw Error("corrupt checkpoint");
  std::size_t count = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    t.dims.push_back(get_u32(is));
    count *= t.dims.back();
  }
  if (count > (std::size_t{1} << 32)) throw Error("corrupt checkpoint");
  t.values.resize(count);
  for (auto& v : t.values) v = std::bit_cast<float>(get_u32(is));
  return t;
}

std::vector<float> bytes_as_floats(const std::string& s) {
  std::vector<float> out;
  out.reserve(s.size());
  for (unsigned char ch : s) out.push_back(static_cast<float>(ch));
  return out;
}

std::string floats_as_bytes(const std::vector<float>& v) {
  std::string s;
  s.reserve(v.size());
  for (float f : v) s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  return s;
}

// 64-bit counters are stored as four exact 16-bit pieces.
std::vector<float> u64_as_floats(std::uint64_t v) {
  return {static_cast<float>(v & 0xFFFFU), static_cast<float>((v >> 16) & 0xFFFFU),
          static_cast<float>((v >> 32) & 0xFFFFU), static_cast<float>((v >> 48) & 0xFFFFU)};
}

std::uint64_t floats_as_u64(const std::vector<float>& v) {
  if (v.size() != 4) throw Error("corrupt checkpoint");
  std::uint64_t out = 0;
  for (int i = 3; i >= 0; --i) out = (out << 16) | static_cast<std::uint64_t>(v[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

void checkpoint_save(const std::filesystem::path& path, const Net& net, const AdamW& optimizer, Task task) {
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u64(os, net.config().digest());

  std::vector<NamedTensor<float>> extras;
  const auto config_text = config_to_json(net.config()).dump();
  const auto config_bytes = bytes_as_floats(config_text);
  const auto task_text = to_string(task);
  const auto task_bytes = bytes_as_floats(task_text);
  std::uint32_t count = 3 + static_cast<std::uint32_t>(net.params().size() + net.buffers().size());
  const bool has_opt = !optimizer.first_moment().empty();
  if (has_opt) count += static_cast<std::uint32_t>(2 * optimizer.first_moment().size());
  put_u32(os, count);
  put_tensor(os, "meta.config", {static_cast<std::uint32_t>(config_bytes.size())}, config_bytes);
  put_tensor(os, "meta.task", {static_cast<std::uint32_t>(task_bytes.size())}, task_bytes);
  put_tensor(os, "adamw.step", {4}, u64_as_floats(optimizer.steps()));
  for (const auto& t : net.params()) put_tensor(os, t.name, t.dims, t.values);
  for (const auto& t : net.buffers()) put_tensor(os, t.name, t.dims, t.values);
  if (has_opt) {
    for (const auto& t : optimizer.first_moment()) put_tensor(os, "adamw.m." + t.name, t.dims, t.values);
    for (const auto& t : optimizer.second_moment()) put_tensor(os, "adamw.v." + t.name, t.dims, t.values);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot open checkpoint for writing: " + path.string());
  const auto blob = os.str();
  file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!file) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw Error("truncated checkpoint");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error("bad magic");
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto digest = get_u64(is);
  const auto count = get_u32(is);

  std::vector<NamedTensor<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(get_tensor(is));
  if (is.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes in checkpoint");

  auto find = [&](const std::string& name) -> const NamedTensor<float>& {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw Error("checkpoint missing tensor " + name);
  };

  NetConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(floats_as_bytes(find("meta.config").values)));
  } catch (const nlohmann::json::exception&) {
    throw Error("corrupt checkpoint config");
  }
  if (config.digest() != digest) throw Error("checkpoint config digest mismatch");
  const Task task = parse_task(floats_as_bytes(find("meta.task").values));

  Checkpoint ck{Net(config), AdamW{}, task};
  auto fill = [&](TensorList<float>& list, const std::string& prefix) {
    for (auto& t : list) {
      const auto& src = find(prefix + t.name);
      if (src.dims != t.dims) throw Error("checkpoint tensor shape mismatch: " + t.name);
      t.values = src.values;
    }
  };
  fill(ck.net.params(), "");
  fill(ck.net.buffers(), "");
  const bool has_opt = std::any_of(tensors.begin(), tensors.end(),
                                   [](const auto& t) { return t.name.rfind("adamw.m.", 0) == 0; });
  if (has_opt) {
    ck.optimizer = AdamW(ck.net.params());
    fill(ck.optimizer.first_moment(), "adamw.m.");
    fill(ck.optimizer.second_moment(), "adamw.v.");
  }
  ck.optimizer.set_steps(floats_as_u64(find("adamw.step").values));
  return ck;
}

}  // namespace calphys
