#pragma once

// Procedural desk-scale toy domain: smooth geometric street-like scenes
// rendered directly on the range-view grid. The "simulated" side has full
// returns; the "real-style" side perturbs depth and applies a structured
// raydrop whose keep-probability field is a known function of depth and
// reflectance. Scenes are drawn per (seed, domain, index), so the two
// domains are unpaired.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "coligen/core.hpp"
#include "coligen/dataio.hpp"
#include "coligen/rangeview.hpp"
#include "coligen/raydrop.hpp"

namespace coligen::toydomain {

namespace fs = std::filesystem;

struct ToyConfig {
  std::size_t height = 64;
  std::size_t width = 256;
  std::uint64_t seed = 1234;
  double real_depth_sigma = 0.05;  // meters, per-cell Gaussian on the real side
  std::size_t class_ground = 13;
  std::size_t class_building = 1;
  std::size_t class_vehicle = 10;

  rangeview::SensorConfig sensor() const {
    rangeview::SensorConfig s;
    s.height = height;
    s.width = width;
    return s;
  }
};

// Keep probability of the structured raydrop field (real-style domain).
inline double keep_probability(double depth, double reflectance) {
  return raydrop::sigmoid(2.2 - depth / 12.0 + 1.2 * (reflectance - 0.4));
}

// A full-return scan with depth, reflectance, semantic, and exact per-cell
// angles (pixel centers, so projection round-trips cleanly).
inline rangeview::RangeImage toy_scene(const ToyConfig& cfg, Rng& rng) {
  using rangeview::Channel;
  const rangeview::SensorConfig sensor = cfg.sensor();
  rangeview::RangeImage img(cfg.height, cfg.width,
                            {Channel::depth, Channel::reflectance, Channel::semantic,
                             Channel::azimuth, Channel::elevation});

  const double sensor_height = rng.uniform(1.6, 2.0);
  // Smooth periodic wall distance around the azimuth.
  double base = rng.uniform(20.0, 45.0);
  std::vector<double> amp(4), phase(4);
  for (std::size_t k = 0; k < 4; ++k) {
    amp[k] = rng.uniform(0.0, 6.0 / static_cast<double>(k + 1));
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
  }
  auto wall_range = [&](double theta) {
    double r = base;
    for (std::size_t k = 0; k < 4; ++k)
      r += amp[k] * std::sin(static_cast<double>(k + 1) * theta + phase[k]);
    return std::max(r, 8.0);
  };

  struct Box {
    double theta_c, half_width, dist, height, curve;
  };
  std::vector<Box> boxes;
  std::size_t n_boxes = 3 + static_cast<std::size_t>(rng.integer(6));
  for (std::size_t i = 0; i < n_boxes; ++i) {
    Box b;
    b.theta_c = rng.uniform(-kPi, kPi);
    b.half_width = rng.uniform(0.05, 0.25);
    b.dist = rng.uniform(4.0, 0.8 * wall_range(b.theta_c));
    b.height = rng.uniform(0.8, 2.6);
    b.curve = rng.uniform(0.1, 0.5);
    boxes.push_back(b);
  }
  double refl_phase = rng.uniform(0.0, 2.0 * kPi);

  for (std::size_t r = 0; r < cfg.height; ++r) {
    double phi = rangeview::row_to_elevation(r, sensor);
    for (std::size_t c = 0; c < cfg.width; ++c) {
      double theta = rangeview::col_to_azimuth(c, sensor);
      double d_wall = wall_range(theta) / std::max(std::cos(phi), 0.1);
      double d = d_wall;
      std::size_t cls = cfg.class_building;
      if (phi < -1e-3) {
        double d_ground = sensor_height / (-std::sin(phi));
        if (d_ground < d) {
          d = d_ground;
          cls = cfg.class_ground;
        }
      }
      for (const Box& b : boxes) {
        double dt = std::remainder(theta - b.theta_c, 2.0 * kPi);
        if (std::abs(dt) > b.half_width) continue;
        double u = dt / b.half_width;
        double d_box = b.dist + b.curve * u * u;
        double z = d_box * std::sin(phi);
        if (z >= -sensor_height && z <= -sensor_height + b.height && d_box < d) {
          d = d_box;
          cls = cfg.class_vehicle;
        }
      }
      d = std::clamp(d, sensor.d_min + 0.1, sensor.d_max - 2.0);
      double refl = cls == cfg.class_ground   ? 0.25 + 0.05 * std::sin(3.0 * theta + refl_phase)
                    : cls == cfg.class_vehicle ? 0.70 + 0.05 * std::sin(8.0 * theta)
                                               : 0.45 + 0.10 * std::sin(2.0 * theta + refl_phase);
      refl = std::clamp(refl, 0.05, 0.95);

      img.set_valid(r, c, true);
      img.at(Channel::depth, r, c) = d;
      img.at(Channel::reflectance, r, c) = refl;
      img.at(Channel::semantic, r, c) = static_cast<double>(cls);
      img.at(Channel::azimuth, r, c) = theta;
      img.at(Channel::elevation, r, c) = phi;
    }
  }
  return img;
}

// Scan `index` of a domain. Real-style scans get depth noise plus the
// structured raydrop and carry no semantic channel.
inline rangeview::RangeImage toy_scan(const ToyConfig& cfg, std::size_t index,
                                      bool real_style) {
  using rangeview::Channel;
  std::uint64_t tag = real_style ? 0x8EA1000000ULL : 0x51B0000000ULL;
  Rng rng(derive_seed(cfg.seed, tag + index));
  rangeview::RangeImage img = toy_scene(cfg, rng);
  if (!real_style) return img;

  rangeview::RangeImage out(cfg.height, cfg.width,
                            {Channel::depth, Channel::reflectance, Channel::azimuth,
                             Channel::elevation});
  const rangeview::SensorConfig sensor = cfg.sensor();
  for (std::size_t r = 0; r < cfg.height; ++r)
    for (std::size_t c = 0; c < cfg.width; ++c) {
      double d = img.at(Channel::depth, r, c);
      double refl = img.at(Channel::reflectance, r, c);
      double keep_p = keep_probability(d, refl);
      bool keep = rng.uniform() < keep_p;
      if (!keep) continue;
      d = std::clamp(d + cfg.real_depth_sigma * rng.normal(), sensor.d_min + 0.05,
                     sensor.d_max - 0.5);
      out.set_valid(r, c, true);
      out.at(Channel::depth, r, c) = d;
      out.at(Channel::reflectance, r, c) =
          std::clamp(refl + 0.02 * rng.normal(), 0.01, 0.99);
      out.at(Channel::azimuth, r, c) = img.at(Channel::azimuth, r, c);
      out.at(Channel::elevation, r, c) = img.at(Channel::elevation, r, c);
    }
  return out;
}

// Writes `count` scans in the semantic-KITTI layout under root/sequences/00.
inline void write_toy_dataset(const ToyConfig& cfg, bool real_style,
                              std::size_t count, const std::string& root) {
  fs::path vel = fs::path(root) / "sequences" / "00" / "velodyne";
  fs::create_directories(vel);
  fs::path lab = fs::path(root) / "sequences" / "00" / "labels";
  if (!real_style) fs::create_directories(lab);
  const rangeview::SensorConfig sensor = cfg.sensor();
  for (std::size_t i = 0; i < count; ++i) {
    rangeview::RangeImage img = toy_scan(cfg, i, real_style);
    rangeview::PointCloud cloud =
        rangeview::reconstruct(img, sensor, rangeview::AngleSource::stored);
    char name[16];
    std::snprintf(name, sizeof(name), "%06zu", i);
    dataio::write_scan(cloud, (vel / (std::string(name) + ".bin")).string());
    if (!real_style) {
      std::vector<std::int32_t> labels;
      labels.reserve(cloud.size());
      for (const auto& p : cloud.points)
        labels.push_back(static_cast<std::int32_t>(p.aux.at(0)));
      dataio::write_labels(labels, (lab / (std::string(name) + ".label")).string());
    }
  }
}

// Dataset spec for a generated toy root (single sequence 00 in split 'train').
inline dataio::DatasetSpec toy_dataset_spec(const std::string& root, bool real_style) {
  dataio::DatasetSpec spec;
  spec.root = root;
  spec.role = real_style ? dataio::DomainRole::real : dataio::DomainRole::simulated;
  spec.has_labels = !real_style;
  spec.splits["train"] = {"00"};
  return spec;
}

}  // namespace coligen::toydomain
