#pragma once

// Range-view conversion: spherical projection of Lidar point clouds into
// depth-reflectance images, lossless reconstruction back to 3D, network
// input normalization, and the .rimg file codec.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "coligen/core.hpp"

namespace coligen::rangeview {

struct SensorConfig {
  std::size_t height = 64;    // vertical beams
  std::size_t width = 1024;   // azimuth bins
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;
  double d_max = 80.0;
  double d_min = 0.5;

  void validate() const {
    if (height < 1 || width < 1)
      throw InputError("sensor: H and W must be >= 1");
    if (!(fov_down_deg < fov_up_deg))
      throw InputError("sensor: fov_down must be < fov_up");
    if (!(d_min >= 0.0 && d_min < d_max))
      throw InputError("sensor: need 0 <= d_min < d_max");
  }

  double fov_up_rad() const { return fov_up_deg * kPi / 180.0; }
  double fov_down_rad() const { return fov_down_deg * kPi / 180.0; }
};

struct Point {
  double x = 0, y = 0, z = 0;
  double reflectance = 0;
  std::vector<double> aux;  // M auxiliary channels (aux[0] = semantic id)
};

struct PointCloud {
  std::vector<Point> points;
  std::size_t aux_channels = 0;

  std::size_t size() const { return points.size(); }

  void validate() const {
    for (const Point& p : points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw InputError("point cloud: non-finite coordinate");
      if (!(p.reflectance >= 0.0 && p.reflectance <= 1.0))
        throw InputError("point cloud: reflectance outside [0,1]");
      if (p.aux.size() != aux_channels)
        throw InputError("point cloud: inconsistent aux channel count");
    }
  }
};

// Channel roles, in the fixed order used by the .rimg bitmap.
enum class Channel : std::uint16_t {
  depth = 0,
  reflectance = 1,
  raydrop_logit = 2,
  semantic = 3,
  azimuth = 4,
  elevation = 5,
};

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::depth: return "depth";
    case Channel::reflectance: return "reflectance";
    case Channel::raydrop_logit: return "raydrop_logit";
    case Channel::semantic: return "semantic";
    case Channel::azimuth: return "azimuth";
    case Channel::elevation: return "elevation";
  }
  return "?";
}

inline std::optional<Channel> channel_from_name(const std::string& s) {
  for (std::uint16_t i = 0; i < 6; ++i) {
    Channel c = static_cast<Channel>(i);
    if (s == channel_name(c)) return c;
  }
  return std::nullopt;
}

// H x W multichannel grid with a validity mask. Channels are stored planar,
// ordered by ascending Channel role; at most one plane per role.
class RangeImage {
 public:
  RangeImage() = default;

  RangeImage(std::size_t h, std::size_t w, std::vector<Channel> roles)
      : height_(h), width_(w), roles_(std::move(roles)),
        data_({roles_.size(), h, w}), valid_(h * w, 0) {
    for (std::size_t i = 1; i < roles_.size(); ++i)
      if (!(static_cast<int>(roles_[i - 1]) < static_cast<int>(roles_[i])))
        throw InputError("range image: channel roles must be strictly ascending");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return roles_.size(); }
  const std::vector<Channel>& roles() const { return roles_; }

  bool has(Channel c) const { return index_of(c) >= 0; }

  int index_of(Channel c) const {
    for (std::size_t i = 0; i < roles_.size(); ++i)
      if (roles_[i] == c) return static_cast<int>(i);
    return -1;
  }

  double& at(Channel c, std::size_t r, std::size_t col) {
    int i = index_of(c);
    if (i < 0) throw InputError(std::string("range image: missing channel ") + channel_name(c));
    return data_.at(static_cast<std::size_t>(i), r, col);
  }
  double at(Channel c, std::size_t r, std::size_t col) const {
    return const_cast<RangeImage*>(this)->at(c, r, col);
  }

  double& plane_at(std::size_t c, std::size_t r, std::size_t col) { return data_.at(c, r, col); }
  double plane_at(std::size_t c, std::size_t r, std::size_t col) const { return data_.at(c, r, col); }

  bool valid(std::size_t r, std::size_t c) const { return valid_[r * width_ + c] != 0; }
  void set_valid(std::size_t r, std::size_t c, bool v) { valid_[r * width_ + c] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& validity() const { return valid_; }
  std::vector<std::uint8_t>& validity() { return valid_; }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid_) n += v;
    return n;
  }

  const Tensor<double>& tensor() const { return data_; }
  Tensor<double>& tensor() { return data_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Channel> roles_;
  Tensor<double> data_;  // (C, H, W)
  std::vector<std::uint8_t> valid_;
};

struct ProjectionReport {
  std::size_t retained = 0;
  std::size_t collisions = 0;
  std::size_t out_of_fov = 0;
};

// ---------------------------------------------------------------------------
// Angles and projection
// ---------------------------------------------------------------------------

inline std::pair<double, double> spherical_angles(double x, double y, double z) {
  if (x == 0.0 && y == 0.0 && z == 0.0)
    throw DomainError("spherical_angles: zero vector has no direction");
  double theta = std::atan2(y, x);
  double phi = std::atan2(z, std::sqrt(x * x + y * y));
  return {theta, phi};
}

// col = floor(W * 0.5 * (1 - theta/pi)), row = floor(H * (1 - (phi - down)/span)),
// both clamped to the grid.
inline std::size_t azimuth_to_col(double theta, const SensorConfig& cfg) {
  double c = std::floor(static_cast<double>(cfg.width) * 0.5 * (1.0 - theta / kPi));
  c = std::clamp(c, 0.0, static_cast<double>(cfg.width - 1));
  return static_cast<std::size_t>(c);
}

inline std::size_t elevation_to_row(double phi, const SensorConfig& cfg) {
  double span = cfg.fov_up_rad() - cfg.fov_down_rad();
  double r = std::floor(static_cast<double>(cfg.height) *
                        (1.0 - (phi - cfg.fov_down_rad()) / span));
  r = std::clamp(r, 0.0, static_cast<double>(cfg.height - 1));
  return static_cast<std::size_t>(r);
}

inline double col_to_azimuth(std::size_t col, const SensorConfig& cfg) {
  return kPi * (1.0 - 2.0 * (static_cast<double>(col) + 0.5) / static_cast<double>(cfg.width));
}

inline double row_to_elevation(std::size_t row, const SensorConfig& cfg) {
  double span = cfg.fov_up_rad() - cfg.fov_down_rad();
  return cfg.fov_down_rad() +
         (1.0 - (static_cast<double>(row) + 0.5) / static_cast<double>(cfg.height)) * span;
}

inline std::pair<RangeImage, ProjectionReport> project(const PointCloud& cloud,
                                                       const SensorConfig& cfg) {
  cfg.validate();
  cloud.validate();
  if (cloud.aux_channels > 1)
    throw InputError("project: at most one auxiliary channel (semantic) is supported");

  std::vector<Channel> roles = {Channel::depth, Channel::reflectance};
  if (cloud.aux_channels == 1) roles.push_back(Channel::semantic);
  roles.push_back(Channel::azimuth);
  roles.push_back(Channel::elevation);

  RangeImage img(cfg.height, cfg.width, roles);
  ProjectionReport rep;
  // Winner bookkeeping per cell: depth + original index for the tie rule.
  std::vector<double> best_d(cfg.height * cfg.width,
                             std::numeric_limits<double>::infinity());
  std::vector<std::size_t> best_i(cfg.height * cfg.width, 0);

  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (d == 0.0) {  // no direction: cannot fall in any beam
      rep.out_of_fov++;
      continue;
    }
    auto [theta, phi] = spherical_angles(p.x, p.y, p.z);
    if (phi < cfg.fov_down_rad() || phi > cfg.fov_up_rad() ||
        d < cfg.d_min || d > cfg.d_max) {
      rep.out_of_fov++;
      continue;
    }
    std::size_t row = elevation_to_row(phi, cfg);
    std::size_t col = azimuth_to_col(theta, cfg);
    std::size_t cell = row * cfg.width + col;

    bool wins;
    if (!img.valid(row, col)) {
      wins = true;
      rep.retained++;
    } else {
      // Nearer point wins; exact ties go to the earliest index.
      wins = d < best_d[cell] || (d == best_d[cell] && i < best_i[cell]);
      rep.collisions++;
    }
    if (!wins) continue;

    best_d[cell] = d;
    best_i[cell] = i;
    img.set_valid(row, col, true);
    img.at(Channel::depth, row, col) = d;
    img.at(Channel::reflectance, row, col) = p.reflectance;
    if (cloud.aux_channels == 1) img.at(Channel::semantic, row, col) = p.aux[0];
    img.at(Channel::azimuth, row, col) = theta;
    img.at(Channel::elevation, row, col) = phi;
  }
  return {std::move(img), rep};
}

enum class AngleSource { stored, pixel_center };

inline PointCloud reconstruct(const RangeImage& img, const SensorConfig& cfg,
                              AngleSource src) {
  if (!img.has(Channel::depth))
    throw InputError("reconstruct: image has no depth channel");
  if (src == AngleSource::stored &&
      (!img.has(Channel::azimuth) || !img.has(Channel::elevation)))
    throw InputError("reconstruct: stored angle channels missing");

  PointCloud out;
  bool has_sem = img.has(Channel::semantic);
  out.aux_channels = has_sem ? 1 : 0;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      if (!img.valid(r, c)) continue;
      double d = img.at(Channel::depth, r, c);
      double theta, phi;
      if (src == AngleSource::stored) {
        theta = img.at(Channel::azimuth, r, c);
        phi = img.at(Channel::elevation, r, c);
      } else {
        theta = col_to_azimuth(c, cfg);
        phi = row_to_elevation(r, cfg);
      }
      Point p;
      p.x = d * std::cos(phi) * std::cos(theta);
      p.y = d * std::cos(phi) * std::sin(theta);
      p.z = d * std::sin(phi);
      if (img.has(Channel::reflectance))
        p.reflectance = std::clamp(img.at(Channel::reflectance, r, c), 0.0, 1.0);
      if (has_sem) p.aux.push_back(img.at(Channel::semantic, r, c));
      out.points.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization to the network's [-1, 1] range. Only depth and reflectance
// channels are touched; invalid cells encode as -1.
// ---------------------------------------------------------------------------

enum class DepthScale { linear, log };

struct NormalizeResult {
  RangeImage image;
  std::size_t clamped = 0;  // cells with depth > d_max, clamped before mapping
};

inline double normalize_depth(double d, const SensorConfig& cfg, DepthScale mode) {
  if (mode == DepthScale::linear) return 2.0 * (d / cfg.d_max) - 1.0;
  return 2.0 * (std::log1p(d) / std::log1p(cfg.d_max)) - 1.0;
}

inline double denormalize_depth(double v, const SensorConfig& cfg, DepthScale mode) {
  if (mode == DepthScale::linear) return (v + 1.0) * 0.5 * cfg.d_max;
  return std::expm1((v + 1.0) * 0.5 * std::log1p(cfg.d_max));
}

inline NormalizeResult normalize(const RangeImage& img, const SensorConfig& cfg,
                                 DepthScale mode) {
  NormalizeResult res{img, 0};
  RangeImage& out = res.image;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      if (!img.valid(r, c)) {
        if (out.has(Channel::depth)) out.at(Channel::depth, r, c) = -1.0;
        if (out.has(Channel::reflectance)) out.at(Channel::reflectance, r, c) = -1.0;
        continue;
      }
      if (out.has(Channel::depth)) {
        double d = img.at(Channel::depth, r, c);
        if (d > cfg.d_max) {
          d = cfg.d_max;
          res.clamped++;
        }
        out.at(Channel::depth, r, c) = normalize_depth(d, cfg, mode);
      }
      if (out.has(Channel::reflectance))
        out.at(Channel::reflectance, r, c) =
            2.0 * img.at(Channel::reflectance, r, c) - 1.0;
    }
  }
  return res;
}

inline RangeImage denormalize(const RangeImage& img, const SensorConfig& cfg,
                              DepthScale mode) {
  RangeImage out = img;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      if (!img.valid(r, c)) {
        if (out.has(Channel::depth)) out.at(Channel::depth, r, c) = 0.0;
        if (out.has(Channel::reflectance)) out.at(Channel::reflectance, r, c) = 0.0;
        continue;
      }
      if (out.has(Channel::depth)) {
        double d = denormalize_depth(img.at(Channel::depth, r, c), cfg, mode);
        out.at(Channel::depth, r, c) = std::clamp(d, 0.0, cfg.d_max);
      }
      if (out.has(Channel::reflectance)) {
        double v = (img.at(Channel::reflectance, r, c) + 1.0) * 0.5;
        out.at(Channel::reflectance, r, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .rimg codec.
//   "RIMG" | u16 version=1 | u16 role bitmap | u32 H | u32 W | u32 C |
//   H*W*C f32 LE (row-major, channel fastest) | H*W validity bytes (0/1)
// ---------------------------------------------------------------------------

inline void write_rimg(const RangeImage& img, std::ostream& os) {
  io::write_bytes(os, "RIMG", 4);
  io::write_le<std::uint16_t>(os, 1);
  std::uint16_t bitmap = 0;
  for (Channel c : img.roles()) bitmap |= static_cast<std::uint16_t>(1u << static_cast<int>(c));
  io::write_le<std::uint16_t>(os, bitmap);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.height()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.width()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.channels()));
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c)
      for (std::size_t ch = 0; ch < img.channels(); ++ch)
        io::write_f32(os, static_cast<float>(img.plane_at(ch, r, c)));
  for (std::uint8_t v : img.validity()) io::write_bytes(os, &v, 1);
}

inline void write_rimg(const RangeImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  write_rimg(img, f);
  if (!f) throw InputError("write failed: " + path);
}

inline RangeImage read_rimg(std::istream& is) {
  char magic[4];
  io::read_bytes(is, magic, 4, "rimg magic");
  if (std::memcmp(magic, "RIMG", 4) != 0)
    throw FormatError("rimg: bad magic");
  std::uint16_t version = io::read_le<std::uint16_t>(is, "rimg version");
  if (version != 1) throw FormatError("rimg: unsupported version");
  std::uint16_t bitmap = io::read_le<std::uint16_t>(is, "rimg bitmap");
  std::uint32_t h = io::read_le<std::uint32_t>(is, "rimg H");
  std::uint32_t w = io::read_le<std::uint32_t>(is, "rimg W");
  std::uint32_t c = io::read_le<std::uint32_t>(is, "rimg C");
  if (h == 0 || w == 0) throw FormatError("rimg: zero dimension");
  std::vector<Channel> roles;
  for (int bit = 0; bit < 6; ++bit)
    if (bitmap & (1u << bit)) roles.push_back(static_cast<Channel>(bit));
  if (bitmap >= (1u << 6)) throw FormatError("rimg: unknown bits in role bitmap");
  if (roles.size() != c)
    throw DimensionError("rimg: channel count disagrees with role bitmap");

  RangeImage img(h, w, roles);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < c; ++ch)
        img.plane_at(ch, r, col) = io::read_f32(is, "rimg payload");
  for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
    std::uint8_t v;
    io::read_bytes(is, &v, 1, "rimg validity");
    if (v > 1) throw FormatError("rimg: validity byte not 0/1");
    img.validity()[i] = v;
  }
  return img;
}

inline RangeImage read_rimg(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open file: " + path);
  return read_rimg(f);
}

// ---------------------------------------------------------------------------
// Grayscale rendering. Depth uses an inverse-depth map (near = bright);
// other channels map linearly between their valid min/max.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> render_gray(const RangeImage& img, Channel channel,
                                             const SensorConfig& cfg) {
  if (!img.has(channel))
    throw InputError(std::string("render: image lacks channel ") + channel_name(channel));
  std::vector<std::uint8_t> pix(img.height() * img.width(), 0);
  if (channel == Channel::depth) {
    double lo = 1.0 / cfg.d_max;
    double hi = 1.0 / std::max(cfg.d_min, 1e-3);
    for (std::size_t r = 0; r < img.height(); ++r)
      for (std::size_t c = 0; c < img.width(); ++c) {
        if (!img.valid(r, c)) continue;
        double d = std::max(img.at(channel, r, c), 1e-3);
        double t = (1.0 / d - lo) / (hi - lo);
        pix[r * img.width() + c] =
            static_cast<std::uint8_t>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5);
      }
    return pix;
  }
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c)
      if (img.valid(r, c)) {
        mn = std::min(mn, img.at(channel, r, c));
        mx = std::max(mx, img.at(channel, r, c));
      }
  if (!(mx > mn)) mx = mn + 1.0;
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c) {
      if (!img.valid(r, c)) continue;
      double t = (img.at(channel, r, c) - mn) / (mx - mn);
      pix[r * img.width() + c] =
          static_cast<std::uint8_t>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5);
    }
  return pix;
}

}  // namespace coligen::rangeview
