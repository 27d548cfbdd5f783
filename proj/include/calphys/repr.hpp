#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "calphys/types.hpp"

namespace calphys {

inline constexpr int kGridCols = 16;
inline constexpr int kGridRows = 14;
inline constexpr int kGridRois = kGridCols * kGridRows;
/// Smaller-eigenvalue guard of the Lucas-Kanade structure tensor (per-pixel mean, gray levels squared).
inline constexpr double kLucasKanadeEps = 1e-4;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Five landmarks per frame in image coordinates (x right, y down). The
/// subject's left eye appears on the image right, so left_eye.x > right_eye.x.
struct LandmarkFrame {
  int frame_index = 0;
  Point2 left_eye;
  Point2 right_eye;
  Point2 chin;
  Point2 face_left;
  Point2 face_right;

  double pupil_distance() const;
  double eye_y() const { return 0.5 * (left_eye.y + right_eye.y); }
  /// Checks the geometric invariants, and frame bounds when width/height > 0.
  void validate(int width = 0, int height = 0) const;
};

struct PixelRect {
  int left = 0;
  int top = 0;
  int width = 0;
  int height = 0;

  int right() const { return left + width; }
  int bottom() const { return top + height; }
  bool operator==(const PixelRect&) const = default;
};

/// 16 x 14 block tiling of a rectangle, flattened row-major from the top-left
/// block. Remainder pixels at the right and bottom edges are dropped.
struct RoiGrid {
  PixelRect origin;
  int cols = kGridCols;
  int rows = kGridRows;

  int block_width() const { return origin.width / cols; }
  int block_height() const { return origin.height / rows; }
  int rois() const { return cols * rows; }
  PixelRect block(int m) const;
};

struct ChestRect {
  PixelRect rect;
  bool clamped = false;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

GrayImage to_gray(const RgbImage& image);

/// Face grid spanning [face_right.x, face_left.x] x [mean eye y, chin y].
RoiGrid face_roi_grid(const LandmarkFrame& lm);

/// Chest rectangle [x_right - PD/2, x_left + PD/2] x [y_chin + PD, y_chin + 2 PD],
/// clamped to the frame.
ChestRect chest_rect(const LandmarkFrame& lm, int frame_width, int frame_height);

/// 3 x 224 x T map of per-block channel means; the grid follows each frame's landmarks.
SpatioTemporalMap build_rgb_map(std::span<const RgbImage> frames, std::span<const LandmarkFrame> landmarks,
                                float fps);

/// Vertical component (pixels/frame, down positive) of a single Lucas-Kanade
/// solve over `block`. Textureless blocks give 0; when only one gradient
/// direction is present the normal-flow (minimum-norm) solution is used.
double vertical_flow(const GrayImage& prev, const GrayImage& next, const PixelRect& block);

/// 1 x 224 x T map of vertical flow over the chest grid located in frame 0.
/// Column 0 is zero; column t holds the flow from frame t-1 to frame t.
SpatioTemporalMap build_flow_map(std::span<const GrayImage> frames, const LandmarkFrame& first_landmarks, float fps);

/// Portable map file: "STM1", u32 C, u32 M, u32 T, f32 fps, then C*M*T f32,
/// all little-endian.
void stm_write(const SpatioTemporalMap& map, const std::filesystem::path& path);
SpatioTemporalMap stm_read(const std::filesystem::path& path);

/// Binary PPM (P6, maxval 255).
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const RgbImage& image, const std::filesystem::path& path);
/// All *.ppm files in `dir`, sorted lexicographically by file name.
std::vector<RgbImage> read_ppm_sequence(const std::filesystem::path& dir);

/// JSON Lines landmarks, one object per frame.
std::vector<LandmarkFrame> read_landmarks(const std::filesystem::path& path);
void write_landmarks(std::span<const LandmarkFrame> frames, const std::filesystem::path& path);

}  // namespace calphys
