#include "calphys/repr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace calphys {

double LandmarkFrame::pupil_distance() const { return std::hypot(left_eye.x - right_eye.x, left_eye.y - right_eye.y); }

void LandmarkFrame::validate(int width, int height) const {
  if (!(left_eye.x > right_eye.x)) throw Error("landmarks: left eye must lie right of the right eye in the image");
  if (!(chin.y > eye_y())) throw Error("landmarks: chin must lie below the eyes");
  if (width > 0 && height > 0) {
    for (const auto& p : {left_eye, right_eye, chin, face_left, face_right}) {
      if (p.x < 0.0 || p.y < 0.0 || p.x > width || p.y > height) throw Error("landmarks outside frame");
    }
  }
}

PixelRect RoiGrid::block(int m) const {
  const int bw = block_width();
  const int bh = block_height();
  const int r = m / cols;
  const int c = m % cols;
  return {origin.left + c * bw, origin.top + r * bh, bw, bh};
}

GrayImage to_gray(const RgbImage& image) {
  GrayImage g{image.width, image.height, std::vector<float>(static_cast<std::size_t>(image.width) * image.height)};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    g.pixels[i] = 0.299F * image.pixels[3 * i] + 0.587F * image.pixels[3 * i + 1] + 0.114F * image.pixels[3 * i + 2];
  }
  return g;
}

RoiGrid face_roi_grid(const LandmarkFrame& lm) {
  lm.validate();
  const auto left = static_cast<int>(std::lround(lm.face_right.x));
  const auto right = static_cast<int>(std::lround(lm.face_left.x));
  const auto top = static_cast<int>(std::lround(lm.eye_y()));
  const auto bottom = static_cast<int>(std::lround(lm.chin.y));
  RoiGrid grid;
  grid.origin = {left, top, right - left, bottom - top};
  if (grid.origin.width < kGridCols || grid.origin.height < kGridRows) throw Error("face too small");
  return grid;
}

ChestRect chest_rect(const LandmarkFrame& lm, int frame_width, int frame_height) {
  const double pd = lm.pupil_distance();
  if (!(pd > 0.0)) throw Error("pupil distance must be positive");
  const auto x0 = static_cast<int>(std::lround(lm.face_right.x - pd / 2.0));
  const auto x1 = static_cast<int>(std::lround(lm.face_left.x + pd / 2.0));
  const auto y0 = static_cast<int>(std::lround(lm.chin.y + pd));
  const auto y1 = static_cast<int>(std::lround(lm.chin.y + 2.0 * pd));
  const int cx0 = std::clamp(x0, 0, frame_width);
  const int cx1 = std::clamp(x1, 0, frame_width);
  const int cy0 = std::clamp(y0, 0, frame_height);
  const int cy1 = std::clamp(y1, 0, frame_height);
  if (cx1 <= cx0 || cy1 <= cy0) throw Error("chest rect outside frame");
  ChestRect out;
  out.rect = {cx0, cy0, cx1 - cx0, cy1 - cy0};
  out.clamped = cx0 != x0 || cx1 != x1 || cy0 != y0 || cy1 != y1;
  return out;
}

SpatioTemporalMap build_rgb_map(std::span<const RgbImage> frames, std::span<const LandmarkFrame> landmarks,
                                float fps) {
  if (frames.size() != landmarks.size()) throw Error("frame/landmark count mismatch");
  if (frames.empty()) throw Error("no frames");
  const int width = frames[0].width;
  const int height = frames[0].height;
  SpatioTemporalMap map(3, kGridRois, static_cast<std::uint32_t>(frames.size()), fps);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& img = frames[t];
    if (img.width != width || img.height != height) throw Error("frames differ in size");
    landmarks[t].validate(width, height);
    const auto grid = face_roi_grid(landmarks[t]);
    if (grid.origin.left < 0 || grid.origin.top < 0 || grid.origin.right() > width || grid.origin.bottom() > height) {
      throw Error("face grid outside frame");
    }
    for (int m = 0; m < kGridRois; ++m) {
      const auto b = grid.block(m);
      double acc[3] = {0.0, 0.0, 0.0};
      for (int y = b.top; y < b.bottom(); ++y) {
        for (int x = b.left; x < b.right(); ++x) {
          for (int c = 0; c < 3; ++c) acc[c] += img.at(x, y, c);
        }
      }
      const double count = static_cast<double>(b.width) * b.height;
      for (int c = 0; c < 3; ++c) map.at(static_cast<std::size_t>(c), static_cast<std::size_t>(m), t) = static_cast<float>(acc[c] / count);
    }
  }
  return map;
}

double vertical_flow(const GrayImage& prev, const GrayImage& next, const PixelRect& block) {
  if (prev.width != next.width || prev.height != next.height) throw Error("flow frames differ in size");
  if (block.left < 0 || block.top < 0 || block.right() > prev.width || block.bottom() > prev.height) {
    throw Error("flow block outside frame");
  }
  if (block.width <= 0 || block.height <= 0) return 0.0;

  // Gradients of the frame average; central differences, one-sided at the image border.
  auto avg = [&](int x, int y) { return 0.5 * (static_cast<double>(prev.at(x, y)) + next.at(x, y)); };
  auto diff = [&](int a, int b, int limit, auto sample) {
    const int lo = std::max(a - 1, 0);
    const int hi = std::min(a + 1, limit - 1);
    if (hi == lo) return 0.0;
    return (sample(hi, b) - sample(lo, b)) / static_cast<double>(hi - lo);
  };

  double sxx = 0.0, sxy = 0.0, syy = 0.0, sxt = 0.0, syt = 0.0;
  for (int y = block.top; y < block.bottom(); ++y) {
    for (int x = block.left; x < block.right(); ++x) {
      const double ix = diff(x, y, prev.width, [&](int xx, int yy) { return avg(xx, yy); });
      const double iy = diff(y, x, prev.height, [&](int yy, int xx) { return avg(xx, yy); });
      const double it = static_cast<double>(next.at(x, y)) - prev.at(x, y);
      sxx += ix * ix;
      sxy += ix * iy;
      syy += iy * iy;
      sxt += ix * it;
      syt += iy * it;
    }
  }
  const double count = static_cast<double>(block.width) * block.height;
  sxx /= count;
  sxy /= count;
  syy /= count;
  sxt /= count;
  syt /= count;

  // Eigen-decomposition of the symmetric 2x2 structure tensor.
  const double tr = sxx + syy;
  const double det = sxx * syy - sxy * sxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double lmax = tr / 2.0 + disc;
  const double lmin = tr / 2.0 - disc;
  if (lmax < kLucasKanadeEps) return 0.0;
  if (lmin < kLucasKanadeEps) {
    // Aperture case: project onto the dominant gradient direction.
    double ex = sxy;
    double ey = lmax - sxx;
    if (std::abs(ex) + std::abs(ey) < 1e-300) {
      ex = sxx >= syy ? 1.0 : 0.0;
      ey = sxx >= syy ? 0.0 : 1.0;
    }
    const double norm = std::hypot(ex, ey);
    ex /= norm;
    ey /= norm;
    const double proj = -(ex * sxt + ey * syt) / lmax;
    return proj * ey;
  }
  // [sxx sxy; sxy syy] [u v]^T = -[sxt syt]^T
  return (-sxx * syt + sxy * sxt) / det;
}

SpatioTemporalMap build_flow_map(std::span<const GrayImage> frames, const LandmarkFrame& first_landmarks, float fps) {
  if (frames.size() < 2) throw Error("flow map needs at least 2 frames");
  const int width = frames[0].width;
  const int height = frames[0].height;
  const auto chest = chest_rect(first_landmarks, width, height);
  RoiGrid grid;
  grid.origin = chest.rect;
  if (grid.block_width() < 1 || grid.block_height() < 1) throw Error("chest too small");
  SpatioTemporalMap map(1, kGridRois, static_cast<std::uint32_t>(frames.size()), fps);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    if (frames[t].width != width || frames[t].height != height) throw Error("frames differ in size");
    for (int m = 0; m < kGridRois; ++m) {
      map.at(0, static_cast<std::size_t>(m), t) = static_cast<float>(vertical_flow(frames[t - 1], frames[t], grid.block(m)));
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// STM files

namespace {

constexpr char kStmMagic[4] = {'S', 'T', 'M', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFFU), static_cast<char>((v >> 8) & 0xFFU),
                     static_cast<char>((v >> 16) & 0xFFU), static_cast<char>((v >> 24) & 0xFFU)};
  os.write(b, 4);
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void stm_write(const SpatioTemporalMap& map, const std::filesystem::path& path) {
  map.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open STM for writing: " + path.string());
  os.write(kStmMagic, 4);
  put_u32(os, map.channels);
  put_u32(os, map.rois);
  put_u32(os, map.frames);
  put_u32(os, std::bit_cast<std::uint32_t>(map.fps));
  std::string payload(map.data.size() * 4, '\0');
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    const auto v = std::bit_cast<std::uint32_t>(map.data[i]);
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((v >> (8 * b)) & 0xFFU);
  }
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os) throw Error("failed writing STM: " + path.string());
}

SpatioTemporalMap stm_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open STM: " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (blob.size() < 4 || std::memcmp(blob.data(), kStmMagic, 4) != 0) throw Error("bad magic");
  if (blob.size() < 20) throw Error("truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  SpatioTemporalMap map;
  map.channels = read_u32(p + 4);
  map.rois = read_u32(p + 8);
  map.frames = read_u32(p + 12);
  map.fps = std::bit_cast<float>(read_u32(p + 16));
  const std::uint64_t count = std::uint64_t{map.channels} * map.rois * map.frames;
  if (blob.size() - 20 < count * 4) throw Error("truncated");
  if (blob.size() - 20 > count * 4) throw Error("trailing bytes in STM");
  map.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) map.data[i] = std::bit_cast<float>(read_u32(p + 20 + 4 * i));
  map.validate();
  return map;
}

// ---------------------------------------------------------------------------
// PPM frames

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open frame: " + path.string());
  auto token = [&]() {
    std::string tok;
    char ch = 0;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  if (token() != "P6") throw Error("not a binary PPM: " + path.string());
  RgbImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw Error("PPM maxval must be 255: " + path.string());
  } catch (const std::logic_error&) {
    throw Error("malformed PPM header: " + path.string());
  }
  if (img.width <= 0 || img.height <= 0) throw Error("malformed PPM header: " + path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw Error("truncated PPM: " + path.string());
  }
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open frame for writing: " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

std::vector<RgbImage> read_ppm_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("frame directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  std::vector<RgbImage> frames;
  frames.reserve(files.size());
  for (const auto& f : files) frames.push_back(read_ppm(f));
  return frames;
}

// ---------------------------------------------------------------------------
// Landmarks

namespace {

Point2 point_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("landmark point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

std::vector<LandmarkFrame> read_landmarks(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open landmarks: " + path.string());
  std::vector<LandmarkFrame> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LandmarkFrame lm;
      lm.frame_index = j.at("frame").get<int>();
      lm.left_eye = point_from(j.at("left_eye"));
      lm.right_eye = point_from(j.at("right_eye"));
      lm.chin = point_from(j.at("chin"));
      lm.face_left = point_from(j.at("face_left"));
      lm.face_right = point_from(j.at("face_right"));
      out.push_back(lm);
    } catch (const nlohmann::json::exception& e) {
      throw Error("landmarks line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
  return out;
}

void write_landmarks(std::span<const LandmarkFrame> frames, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open landmarks for writing: " + path.string());
  auto pt = [](const Point2& p) { return nlohmann::json::array({p.x, p.y}); };
  for (const auto& lm : frames) {
    const nlohmann::json j = {{"frame", lm.frame_index},        {"left_eye", pt(lm.left_eye)},
                              {"right_eye", pt(lm.right_eye)},  {"chin", pt(lm.chin)},
                              {"face_left", pt(lm.face_left)},  {"face_right", pt(lm.face_right)}};
    os << j.dump() << '\n';
  }
}

}  // namespace calphys
