#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "calphys/repr.hpp"
#include "calphys/spectrum.hpp"
#include "calphys/synth.hpp"

using namespace calphys;

namespace {

LandmarkFrame face(double x_right, double x_left, double eye_y, double chin_y, double pd = 60.0) {
  LandmarkFrame lm;
  const double cx = 0.5 * (x_right + x_left);
  lm.right_eye = {cx - pd / 2.0, eye_y};
  lm.left_eye = {cx + pd / 2.0, eye_y};
  lm.face_right = {x_right, 0.5 * (eye_y + chin_y)};
  lm.face_left = {x_left, 0.5 * (eye_y + chin_y)};
  lm.chin = {cx, chin_y};
  return lm;
}

RgbImage uniform(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

GrayImage gray(int w, int h, const std::function<double(double, double)>& f) {
  GrayImage g{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) g.at(x, y) = static_cast<float>(f(x, y));
  }
  return g;
}

// Minimum-norm least-squares flow over the block's pixel equations.
Eigen::Vector2d least_squares_flow(const GrayImage& a, const GrayImage& b, const PixelRect& r) {
  auto avg = [&](int x, int y) { return 0.5 * (static_cast<double>(a.at(x, y)) + b.at(x, y)); };
  const int n = r.width * r.height;
  Eigen::MatrixXd A(n, 2);
  Eigen::VectorXd rhs(n);
  int i = 0;
  for (int y = r.top; y < r.bottom(); ++y) {
    for (int x = r.left; x < r.right(); ++x, ++i) {
      A(i, 0) = 0.5 * (avg(x + 1, y) - avg(x - 1, y));
      A(i, 1) = 0.5 * (avg(x, y + 1) - avg(x, y - 1));
      rhs(i) = -(static_cast<double>(b.at(x, y)) - a.at(x, y));
    }
  }
  return A.completeOrthogonalDecomposition().solve(rhs);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("calphys_test_" + name);
}

}  // namespace

TEST_CASE("face grid geometry") {
  const auto grid = face_roi_grid(face(100, 260, 150, 290));
  CHECK(grid.origin == PixelRect{100, 150, 160, 140});
  CHECK(grid.block_width() == 10);
  CHECK(grid.block_height() == 10);
  CHECK(grid.block(0) == PixelRect{100, 150, 10, 10});
  CHECK(grid.block(17) == PixelRect{110, 160, 10, 10});

  const auto odd = face_roi_grid(face(100, 261, 150, 291));
  CHECK(odd.block_width() == 10);
  CHECK(odd.block(223).right() == 260);
  CHECK(odd.block(223).bottom() == 290);

  CHECK_THROWS_WITH_AS(face_roi_grid(face(100, 115, 150, 290, 10)), "face too small", Error);
  CHECK_THROWS_WITH_AS(face_roi_grid(face(100, 260, 150, 163)), "face too small", Error);
}

TEST_CASE("chest rectangle") {
  auto lm = face(120, 220, 250, 300);
  const auto c = chest_rect(lm, 1000, 1000);
  CHECK(c.rect == PixelRect{90, 360, 160, 60});
  CHECK_FALSE(c.clamped);
  CHECK(c.rect.width == (220 - 120) + 60);

  const auto clamped = chest_rect(lm, 1000, 400);
  CHECK(clamped.clamped);
  CHECK(clamped.rect.bottom() == 400);

  CHECK_THROWS_AS(chest_rect(lm, 1000, 300), Error);
  lm.left_eye = lm.right_eye;
  CHECK_THROWS_AS(chest_rect(lm, 1000, 1000), Error);
}

TEST_CASE("rgb map of uniform and oscillating frames") {
  const auto lm = face(100, 260, 150, 290);
  std::vector<RgbImage> frames(150, uniform(320, 320, 128, 128, 128));
  const std::vector<LandmarkFrame> lms(150, lm);
  auto map = build_rgb_map(frames, lms, 30.0F);
  CHECK(map.channels == 3);
  CHECK(map.rois == 224);
  CHECK(map.frames == 150);
  CHECK(map.fps == 30.0F);
  for (float v : map.data) CHECK(v == 128.0F);

  for (int t = 0; t < 150; ++t) {
    const auto red = static_cast<std::uint8_t>(std::lround(100.0 + 10.0 * std::sin(2.0 * std::numbers::pi * 1.2 * t / 30.0)));
    frames[static_cast<std::size_t>(t)] = uniform(320, 320, red, 50, 50);
  }
  map = build_rgb_map(frames, lms, 30.0F);
  for (int m = 0; m < 224; m += 37) {
    for (int t = 0; t < 150; ++t) CHECK(map.at(0, m, t) == frames[static_cast<std::size_t>(t)].at(0, 0, 0));
  }

  CHECK_THROWS_AS(build_rgb_map(frames, std::vector<LandmarkFrame>(149, lm), 30.0F), Error);
  CHECK_THROWS_AS(build_rgb_map(frames, std::vector<LandmarkFrame>(150, face(100, 110, 150, 290, 5)), 30.0F), Error);
}

TEST_CASE("rgb map ignores pixel order within a block") {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> px(0, 255);
  RgbImage img{320, 320, std::vector<std::uint8_t>(320 * 320 * 3)};
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(px(rng));
  const auto lm = face(100, 260, 150, 290);
  const auto before = build_rgb_map(std::vector<RgbImage>{img}, std::vector<LandmarkFrame>{lm}, 30.0F);
  // Reverse the pixels of block 5.
  const auto b = face_roi_grid(lm).block(5);
  std::vector<std::array<std::uint8_t, 3>> pixels;
  for (int y = b.top; y < b.bottom(); ++y) {
    for (int x = b.left; x < b.right(); ++x) {
      pixels.push_back({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
    }
  }
  std::reverse(pixels.begin(), pixels.end());
  std::size_t i = 0;
  for (int y = b.top; y < b.bottom(); ++y) {
    for (int x = b.left; x < b.right(); ++x, ++i) {
      for (int c = 0; c < 3; ++c) img.pixels[(static_cast<std::size_t>(y) * 320 + x) * 3 + c] = pixels[i][c];
    }
  }
  const auto after = build_rgb_map(std::vector<RgbImage>{img}, std::vector<LandmarkFrame>{lm}, 30.0F);
  CHECK(before == after);
}

TEST_CASE("vertical flow") {
  const PixelRect block{10, 10, 20, 20};
  const auto ramp = gray(40, 40, [](double, double y) { return 3.0 * y; });
  const auto shifted = gray(40, 40, [](double, double y) { return 3.0 * (y - 1.0); });
  CHECK(vertical_flow(ramp, ramp, block) == 0.0);
  CHECK(std::abs(vertical_flow(ramp, shifted, block) - 1.0) < 1e-3);
  CHECK(std::abs(vertical_flow(ramp, shifted, block) - least_squares_flow(ramp, shifted, block)(1)) < 1e-9);

  const auto flat = gray(40, 40, [](double, double) { return 77.0; });
  const auto brighter = gray(40, 40, [](double, double) { return 80.0; });
  CHECK(vertical_flow(flat, brighter, block) == 0.0);

  auto texture = [](double dy) {
    return gray(40, 40, [dy](double x, double y) {
      return 100.0 + 30.0 * std::sin(0.3 * x + 0.2 * (y - dy)) + 20.0 * std::cos(0.25 * (y - dy) - 0.1 * x);
    });
  };
  const auto t0 = texture(0.0), t1 = texture(0.4);
  const double v = vertical_flow(t0, t1, block);
  CHECK(std::abs(v - 0.4) < 0.05);
  CHECK(std::abs(v - least_squares_flow(t0, t1, block)(1)) < 1e-9);
  CHECK(std::abs(vertical_flow(t1, t0, block) + v) < 1e-3);
  CHECK(std::abs(vertical_flow(ramp, shifted, block) + vertical_flow(shifted, ramp, block)) < 1e-3);
}

TEST_CASE("flow map") {
  synth::SubjectSpec s;
  s.rr = {{0.0, 15.0}};
  s.resp_amplitude_px = 2.0;
  const auto video = synth::render_video(s, 20.0, 30.0);
  std::vector<GrayImage> frames;
  for (const auto& f : video.frames) frames.push_back(to_gray(f));
  const auto map = build_flow_map(frames, video.landmarks.front(), 30.0F);
  CHECK(map.channels == 1);
  CHECK(map.rois == 224);
  CHECK(map.frames == 600);
  for (int m = 0; m < 224; ++m) CHECK(map.at(0, m, 0) == 0.0F);
  for (int m : {0, 100, 223}) {
    std::vector<double> row(600);
    for (int t = 0; t < 600; ++t) row[static_cast<std::size_t>(t)] = map.at(0, m, t);
    CHECK(std::abs(spectrum::peak_frequency(row, 30.0, Band{0.05, 2.0}) - 0.25) <= 30.0 / 4096);
  }

  const std::vector<GrayImage> still(5, frames.front());
  for (float v : build_flow_map(still, video.landmarks.front(), 30.0F).data) CHECK(v == 0.0F);

  const std::vector<GrayImage> long_still(300, gray(320, 300, [](double x, double y) { return x + y; }));
  CHECK(build_flow_map(long_still, video.landmarks.front(), 30.0F).frames == 300);

  auto far = video.landmarks.front();
  far.chin.y = 290.0;
  CHECK_THROWS_AS(build_flow_map(still, far, 30.0F), Error);
}

TEST_CASE("STM files") {
  SpatioTemporalMap map(2, 3, 4, 29.97F);
  std::mt19937 rng(1);
  std::normal_distribution<float> n01;
  for (auto& v : map.data) v = n01(rng) * 1e3F;
  map.data[5] = -0.0F;
  map.data[6] = 1e-40F;  // subnormal
  const auto path = temp_path("map.stm");
  stm_write(map, path);
  const auto back = stm_read(path);
  CHECK(back.channels == 2);
  CHECK(back.fps == 29.97F);
  CHECK(std::memcmp(back.data.data(), map.data.data(), map.data.size() * 4) == 0);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
  CHECK_THROWS_WITH_AS(stm_read(path), doctest::Contains("truncated"), Error);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "XXXX0000000000000000";
  }
  CHECK_THROWS_WITH_AS(stm_read(path), "bad magic", Error);
  map.data[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(stm_write(map, path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("PPM and landmark files") {
  const auto dir = temp_path("frames");
  std::filesystem::create_directories(dir);
  const auto a = uniform(4, 3, 1, 2, 3), b = uniform(4, 3, 9, 8, 7);
  write_ppm(b, dir / "f002.ppm");
  write_ppm(a, dir / "f001.ppm");
  const auto seq = read_ppm_sequence(dir);
  REQUIRE(seq.size() == 2);
  CHECK(seq[0].pixels == a.pixels);
  CHECK(seq[1].pixels == b.pixels);

  std::vector<LandmarkFrame> lms{face(100, 260, 150, 290), face(101, 261, 151, 291)};
  lms[1].frame_index = 1;
  write_landmarks(lms, dir / "lm.jsonl");
  const auto back = read_landmarks(dir / "lm.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].frame_index == 1);
  CHECK(back[1].chin.y == 291.0);
  CHECK(back[0].left_eye.x == lms[0].left_eye.x);
  std::filesystem::remove_all(dir);
}
