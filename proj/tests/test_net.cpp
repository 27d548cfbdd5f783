#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "calphys/net.hpp"
#include "oracles.hpp"

using namespace calphys;

namespace {

NetConfig tiny(int channels = 1, int rois = 8, int frames = 16, std::uint64_t seed = 1) {
  NetConfig c;
  c.in_channels = channels;
  c.rois = rois;
  c.frames = frames;
  c.stem_width = 4;
  c.block_widths = {4, 4, 4, 4};
  c.seed = seed;
  return c;
}

template <class Scalar>
Tensor4<Scalar> random_input(int n, const NetConfig& c, unsigned seed) {
  Tensor4<Scalar> x(n, c.in_channels, c.rois, c.frames);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (auto& v : x.data) v = static_cast<Scalar>(n01(rng));
  return x;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("calphys_test_" + name);
}

}  // namespace

TEST_CASE("default HR network size and output length") {
  const Net net(NetConfig::for_task(Task::HR));
  CHECK(net.parameter_count() >= 250000);
  CHECK(net.parameter_count() <= 400000);
  for (int t : {8, 37, 100, 150}) {
    auto c = tiny(3, 224, t);
    c.block_widths = {8, 8, 8, 8};
    const TemporalCnn<float> small(c);
    CHECK(small.predict(random_input<float>(1, c, 2)).w == t);
  }
}

TEST_CASE("zero input gives zero output") {
  TemporalCnn<double> net(tiny());
  const Tensor4<double> x(2, 1, 8, 16);
  for (double v : net.forward(x, Mode::Train).data) CHECK(v == 0.0);
  for (double v : net.predict(x).data) CHECK(v == 0.0);
}

TEST_CASE("network gradient matches finite differences") {
  for (int trial = 0; trial < 4; ++trial) {
    const auto cfg = tiny(1, 8, 16, 10 + trial);
    auto net = TemporalCnn<float>(cfg).cast<double>();
    const auto x = random_input<double>(3, cfg, 50 + trial);
    const auto w = random_input<double>(3, NetConfig{.in_channels = 1, .rois = 1, .frames = 16}, 90 + trial);
    Tensor4<double> upstream(3, 1, 1, 16);
    upstream.data = w.data;
    auto loss = [&]() {
      const auto y = net.forward(x, Mode::Train);
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
            return loss();
          },
          keep, 1e-5);
      values = keep;
      INFO(net.params()[p].name);
      CHECK(oracle::max_rel_error(grads[p].values, fd) < 1e-4);
    }
    auto xin = x;
    const auto fdx = oracle::numeric_gradient(
        [&](const std::vector<double>& v) {
          xin.data = v;
          const auto y = net.forward(xin, Mode::Train);
          double s = 0.0;
          for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * upstream.data[i];
          return s;
        },
        x.data, 1e-5);
    CHECK(oracle::max_rel_error(gx.data, fdx) < 1e-4);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  TemporalCnn<double> net(tiny());
  TemporalCnn<double>::Cache cache;
  net.forward(random_input<double>(2, tiny(), 4), Mode::Train, &cache);
  auto grads = net.zero_gradients();
  net.backward(cache, Tensor4<double>(2, 1, 1, 16), grads);
  for (const auto& g : grads) {
    for (double v : g.values) CHECK(v == 0.0);
  }
}

TEST_CASE("duplicated inputs get identical gradients") {
  const auto cfg = tiny();
  TemporalCnn<double> net(cfg);
  auto one = random_input<double>(1, cfg, 8);
  Tensor4<double> x(2, 1, 8, 16);
  std::copy(one.data.begin(), one.data.end(), x.data.begin());
  std::copy(one.data.begin(), one.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(one.data.size()));
  TemporalCnn<double>::Cache cache;
  net.forward(x, Mode::Train, &cache);
  Tensor4<double> up(2, 1, 1, 16);
  for (int t = 0; t < 16; ++t) up.at(0, 0, 0, t) = up.at(1, 0, 0, t) = std::sin(t);
  auto grads = net.zero_gradients();
  const auto gx = net.backward(cache, up, grads);
  for (std::size_t i = 0; i < one.data.size(); ++i) CHECK(gx.data[i] == doctest::Approx(gx.data[i + one.data.size()]));
}

TEST_CASE("backward without cache fails") {
  TemporalCnn<double> net(tiny());
  auto grads = net.zero_gradients();
  CHECK_THROWS_WITH_AS(net.backward(TemporalCnn<double>::Cache{}, Tensor4<double>(1, 1, 1, 16), grads),
                       "backward called without forward cache", Error);
}

TEST_CASE("input shape mismatch is rejected") {
  TemporalCnn<float> net(tiny());
  CHECK_THROWS_AS(net.predict(Tensor4<float>(1, 3, 8, 16)), Error);
  CHECK_THROWS_AS(net.predict(Tensor4<float>(1, 1, 8, 4)), Error);
}

TEST_CASE("training mode updates running statistics only in train mode") {
  TemporalCnn<float> net(tiny());
  const auto before = parameter_digest(net);
  net.predict(random_input<float>(2, tiny(), 1));
  CHECK(parameter_digest(net) == before);
  net.forward(random_input<float>(2, tiny(), 1), Mode::Train);
  CHECK(parameter_digest(net) != before);
}

TEST_CASE("AdamW") {
  TensorList<float> params{{"w", {1}, {0.5F}}};
  AdamW opt(params);
  const TensorList<float> zero{{"w", {1}, {0.0F}}};

  SUBCASE("zero gradient and zero decay leave params unchanged") {
    AdamWSettings s;
    s.weight_decay = 0.0;
    opt.step(params, zero, s);
    CHECK(params[0].values[0] == 0.5F);
  }
  SUBCASE("first step with unit gradient moves by lr") {
    AdamWSettings s;
    s.weight_decay = 0.0;
    s.lr = 1e-3;
    opt.step(params, TensorList<float>{{"w", {1}, {1.0F}}}, s);
    const double delta = 0.5 - params[0].values[0];
    CHECK(std::abs(delta - 1e-3 / (1.0 + 1e-8)) < 1e-7);  // float spacing at 0.5 is 6e-8
  }
  SUBCASE("pure decoupled decay") {
    AdamWSettings s;
    s.lr = 0.1;
    s.weight_decay = 0.5;
    opt.step(params, zero, s);
    CHECK(params[0].values[0] == doctest::Approx(0.5 * (1.0 - 0.05)).epsilon(1e-7));
  }
  SUBCASE("non-finite gradient") {
    CHECK_THROWS_AS(opt.step(params, TensorList<float>{{"w", {1}, {std::nanf("")}}}, AdamWSettings{}), Error);
  }
}

TEST_CASE("fixed seed gives identical parameters after training steps") {
  auto run = [] {
    const auto cfg = tiny(1, 8, 16, 7);
    TemporalCnn<float> net(cfg);
    AdamW opt(net.params());
    for (int step = 0; step < 3; ++step) {
      TemporalCnn<float>::Cache cache;
      const auto y = net.forward(random_input<float>(2, cfg, static_cast<unsigned>(step)), Mode::Train, &cache);
      auto grads = net.zero_gradients();
      net.backward(cache, y, grads);
      opt.step(net.params(), grads, AdamWSettings{});
    }
    return parameter_digest(net);
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = tiny(1, 8, 16, 3);
  TemporalCnn<float> net(cfg);
  AdamW opt(net.params());
  TemporalCnn<float>::Cache cache;
  const auto y = net.forward(random_input<float>(2, cfg, 1), Mode::Train, &cache);
  auto grads = net.zero_gradients();
  net.backward(cache, y, grads);
  opt.step(net.params(), grads, AdamWSettings{});

  const auto path = temp_path("roundtrip.ckpt");
  checkpoint_save(path, net, opt, Task::RR);
  const auto loaded = checkpoint_load(path);
  CHECK(loaded.task == Task::RR);
  CHECK(loaded.net.config() == cfg);
  CHECK(loaded.net.params() == net.params());
  CHECK(loaded.net.buffers() == net.buffers());
  CHECK(loaded.optimizer == opt);
  CHECK(parameter_digest(loaded.net) == parameter_digest(net));

  SUBCASE("version mismatch") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
    f.close();
    CHECK_THROWS_AS(checkpoint_load(path), Error);
  }
  SUBCASE("truncated") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
    CHECK_THROWS_WITH_AS(checkpoint_load(path), "truncated checkpoint", Error);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_WITH_AS(checkpoint_load(path), "bad magic", Error);
  }
  std::filesystem::remove(path);
}
