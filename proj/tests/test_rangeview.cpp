#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "coligen/pngio.hpp"
#include "coligen/rangeview.hpp"
#include "testutil.hpp"

using namespace coligen;
using namespace coligen::rangeview;

namespace {

PointCloud random_in_fov_cloud(std::size_t n, const SensorConfig& cfg, Rng& rng,
                               std::size_t aux = 0) {
  PointCloud cloud;
  cloud.aux_channels = aux;
  while (cloud.points.size() < n) {
    double theta = rng.uniform(-kPi, kPi);
    double phi = rng.uniform(cfg.fov_down_rad(), cfg.fov_up_rad());
    double d = rng.uniform(cfg.d_min + 0.01, cfg.d_max - 0.01);
    Point p;
    p.x = d * std::cos(phi) * std::cos(theta);
    p.y = d * std::cos(phi) * std::sin(theta);
    p.z = d * std::sin(phi);
    p.reflectance = rng.uniform();
    for (std::size_t a = 0; a < aux; ++a) p.aux.push_back(std::floor(rng.uniform(0, 5)));
    cloud.points.push_back(std::move(p));
  }
  return cloud;
}

}  // namespace

TEST_CASE("spherical_angles basics") {
  auto [t1, p1] = spherical_angles(10, 0, 0);
  REQUIRE(t1 == 0.0);
  REQUIRE(p1 == 0.0);
  auto [t2, p2] = spherical_angles(0, 5, 0);
  REQUIRE(t2 == Catch::Approx(kPi / 2));
  REQUIRE(p2 == 0.0);
  auto [t3, p3] = spherical_angles(1, 1, std::sqrt(2.0));
  REQUIRE(t3 == Catch::Approx(kPi / 4));
  REQUIRE(p3 == Catch::Approx(kPi / 4));
  REQUIRE_THROWS_AS(spherical_angles(0, 0, 0), DomainError);
}

TEST_CASE("project: single mid-FOV point lands in the expected cell") {
  SensorConfig cfg;  // W = 1024
  PointCloud cloud;
  double phi = 0.5 * (cfg.fov_up_rad() + cfg.fov_down_rad());
  Point p;
  p.x = 10 * std::cos(phi);
  p.y = 0;
  p.z = 10 * std::sin(phi);
  p.reflectance = 0.5;
  cloud.points.push_back(p);
  auto [img, rep] = project(cloud, cfg);
  REQUIRE(rep.retained == 1);
  REQUIRE(rep.collisions == 0);
  REQUIRE(rep.out_of_fov == 0);
  REQUIRE(img.valid_count() == 1);
  // theta = 0 -> col = floor(W * 0.5) = 512
  std::size_t row = elevation_to_row(phi, cfg);
  REQUIRE(img.valid(row, 512));
  REQUIRE(img.at(Channel::depth, row, 512) == Catch::Approx(10.0));
}

TEST_CASE("project: nearer point wins a collision") {
  SensorConfig cfg;
  PointCloud cloud;
  for (double d : {5.0, 9.0}) {
    Point p;
    p.x = d;
    p.reflectance = 0.1;
    cloud.points.push_back(p);
  }
  auto [img, rep] = project(cloud, cfg);
  REQUIRE(rep.retained == 1);
  REQUIRE(rep.collisions == 1);
  std::size_t row = elevation_to_row(0.0, cfg);
  REQUIRE(img.at(Channel::depth, row, 512) == Catch::Approx(5.0));
}

TEST_CASE("project: empty cloud") {
  SensorConfig cfg;
  auto [img, rep] = project(PointCloud{}, cfg);
  REQUIRE(img.valid_count() == 0);
  REQUIRE(rep.retained == 0);
  REQUIRE(rep.collisions == 0);
  REQUIRE(rep.out_of_fov == 0);
}

TEST_CASE("projection count identity over mixed in/out-of-range input") {
  SensorConfig cfg;
  Rng rng(99);
  PointCloud cloud = random_in_fov_cloud(500, cfg, rng);
  // out-of-range extras
  for (int i = 0; i < 50; ++i) {
    Point p;
    p.x = 100.0 + i;  // beyond d_max
    cloud.points.push_back(p);
  }
  for (int i = 0; i < 30; ++i) {
    Point p;
    p.z = 10.0;
    p.x = 1.0;  // elevation above fov_up
    cloud.points.push_back(p);
  }
  auto [img, rep] = project(cloud, cfg);
  REQUIRE(rep.retained + rep.collisions + rep.out_of_fov == cloud.size());
  REQUIRE(rep.out_of_fov >= 80);
  REQUIRE(img.valid_count() == rep.retained);
}

TEST_CASE("round-trip losslessness on 10k random in-FOV points") {
  SensorConfig cfg;
  Rng rng(2024);
  PointCloud cloud = random_in_fov_cloud(10000, cfg, rng);
  auto [img, rep] = project(cloud, cfg);
  PointCloud back = reconstruct(img, cfg, AngleSource::stored);
  REQUIRE(back.size() == rep.retained);

  // match reconstructed points to the winners by cell bookkeeping
  double worst = 0;
  std::size_t k = 0;
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c) {
      if (!img.valid(r, c)) continue;
      const Point& q = back.points[k++];
      auto [theta, phi] = spherical_angles(q.x, q.y, q.z);
      REQUIRE(std::abs(theta - img.at(Channel::azimuth, r, c)) < 1e-9);
      REQUIRE(std::abs(phi - img.at(Channel::elevation, r, c)) < 1e-9);
    }
  // and each original point either lost a collision or is recovered exactly
  std::size_t recovered = 0;
  for (const Point& p : cloud.points) {
    auto [theta, phi] = spherical_angles(p.x, p.y, p.z);
    std::size_t row = elevation_to_row(phi, cfg);
    std::size_t col = azimuth_to_col(theta, cfg);
    if (!img.valid(row, col)) continue;
    double d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (std::abs(img.at(Channel::depth, row, col) - d) > 1e-12) continue;  // lost
    double scale = std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z), 1e-9});
    double err = std::max({std::abs(img.at(Channel::azimuth, row, col) - theta),
                           std::abs(img.at(Channel::elevation, row, col) - phi)});
    REQUIRE(err < 1e-12);
    // reconstruct this cell by hand
    double dd = img.at(Channel::depth, row, col);
    double th = img.at(Channel::azimuth, row, col);
    double ph = img.at(Channel::elevation, row, col);
    worst = std::max(worst, std::abs(dd * std::cos(ph) * std::cos(th) - p.x) / scale);
    worst = std::max(worst, std::abs(dd * std::cos(ph) * std::sin(th) - p.y) / scale);
    worst = std::max(worst, std::abs(dd * std::sin(ph) - p.z) / scale);
    recovered++;
  }
  REQUIRE(recovered == rep.retained);
  REQUIRE(worst <= 1e-6);
}

TEST_CASE("projection is permutation invariant away from ties") {
  SensorConfig cfg;
  Rng rng(5);
  PointCloud cloud = random_in_fov_cloud(2000, cfg, rng);
  auto [img1, rep1] = project(cloud, cfg);
  Rng shuffle_rng(77);
  shuffle_rng.shuffle(cloud.points);
  auto [img2, rep2] = project(cloud, cfg);
  REQUIRE(rep1.retained == rep2.retained);
  REQUIRE(rep1.out_of_fov == rep2.out_of_fov);
  for (std::size_t i = 0; i < img1.tensor().size(); ++i)
    REQUIRE(img1.tensor()[i] == img2.tensor()[i]);
}

TEST_CASE("reconstruct basics") {
  SensorConfig cfg;
  RangeImage img(4, 8, {Channel::depth, Channel::azimuth, Channel::elevation});
  img.set_valid(1, 2, true);
  img.at(Channel::depth, 1, 2) = 2.0;
  img.at(Channel::azimuth, 1, 2) = kPi / 2;
  img.at(Channel::elevation, 1, 2) = 0.0;
  PointCloud back = reconstruct(img, cfg, AngleSource::stored);
  REQUIRE(back.size() == 1);
  REQUIRE(back.points[0].x == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(back.points[0].y == Catch::Approx(2.0));
  REQUIRE(back.points[0].z == Catch::Approx(0.0).margin(1e-15));

  RangeImage empty(4, 8, {Channel::depth});
  REQUIRE(reconstruct(empty, cfg, AngleSource::pixel_center).size() == 0);
  REQUIRE_THROWS_AS(reconstruct(empty, cfg, AngleSource::stored), InputError);
}

TEST_CASE("normalize endpoints, inverse, and clamping") {
  SensorConfig cfg;
  for (DepthScale mode : {DepthScale::linear, DepthScale::log}) {
    RangeImage img(2, 4, {Channel::depth, Channel::reflectance});
    img.set_valid(0, 0, true);
    img.at(Channel::depth, 0, 0) = cfg.d_max;
    img.at(Channel::reflectance, 0, 0) = 1.0;
    img.set_valid(0, 1, true);
    img.at(Channel::depth, 0, 1) = 0.0;
    img.set_valid(0, 2, true);
    img.at(Channel::depth, 0, 2) = cfg.d_max + 5.0;  // must clamp
    auto res = normalize(img, cfg, mode);
    REQUIRE(res.clamped == 1);
    REQUIRE(res.image.at(Channel::depth, 0, 0) == Catch::Approx(1.0));
    REQUIRE(res.image.at(Channel::depth, 0, 1) == Catch::Approx(-1.0));
    REQUIRE(res.image.at(Channel::depth, 0, 2) == Catch::Approx(1.0));
    REQUIRE(res.image.at(Channel::reflectance, 0, 0) == Catch::Approx(1.0));
    REQUIRE(res.image.at(Channel::depth, 1, 3) == -1.0);  // invalid encodes -1
  }
}

TEST_CASE("normalize/denormalize round-trip on random images") {
  SensorConfig cfg;
  Rng rng(8);
  for (DepthScale mode : {DepthScale::linear, DepthScale::log}) {
    RangeImage img(16, 32, {Channel::depth, Channel::reflectance});
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        if (rng.uniform() < 0.2) continue;
        img.set_valid(r, c, true);
        img.at(Channel::depth, r, c) = rng.uniform(0.0, cfg.d_max);
        img.at(Channel::reflectance, r, c) = rng.uniform();
      }
    RangeImage back = denormalize(normalize(img, cfg, mode).image, cfg, mode);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        if (!img.valid(r, c)) continue;
        double d0 = img.at(Channel::depth, r, c);
        double err = std::abs(back.at(Channel::depth, r, c) - d0) /
                     std::max(std::abs(d0), 1.0);
        REQUIRE(err <= 1e-6);
        REQUIRE(std::abs(back.at(Channel::reflectance, r, c) -
                         img.at(Channel::reflectance, r, c)) <= 1e-6);
      }
  }
}

TEST_CASE("rimg codec: byte-exact round-trip and typed failures") {
  Rng rng(3);
  RangeImage img(8, 16, {Channel::depth, Channel::reflectance, Channel::azimuth,
                         Channel::elevation});
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      if (rng.uniform() < 0.3) continue;
      img.set_valid(r, c, true);
      img.at(Channel::depth, r, c) = rng.uniform(0, 80);
      img.at(Channel::reflectance, r, c) = rng.uniform();
      img.at(Channel::azimuth, r, c) = rng.uniform(-kPi, kPi);
      img.at(Channel::elevation, r, c) = rng.uniform(-0.4, 0.03);
    }
  std::ostringstream os1(std::ios::binary);
  write_rimg(img, os1);
  std::string bytes = os1.str();
  std::istringstream is(bytes, std::ios::binary);
  RangeImage back = read_rimg(is);
  std::ostringstream os2(std::ios::binary);
  write_rimg(back, os2);
  REQUIRE(os2.str() == bytes);  // write -> read -> write is byte-identical
  REQUIRE(back.roles() == img.roles());
  REQUIRE(back.validity() == img.validity());

  SECTION("corrupt magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream s(bad, std::ios::binary);
    REQUIRE_THROWS_AS(read_rimg(s), FormatError);
  }
  SECTION("channel count disagrees with bitmap") {
    std::string bad = bytes;
    bad[14] = 9;  // C field (u32 at offset 14 after magic+ver+bitmap+H+W)
    std::istringstream s(bad, std::ios::binary);
    REQUIRE_THROWS_AS(read_rimg(s), DimensionError);
  }
  SECTION("truncated payload") {
    std::string bad = bytes.substr(0, bytes.size() / 2);
    std::istringstream s(bad, std::ios::binary);
    REQUIRE_THROWS_AS(read_rimg(s), TruncationError);
  }
  SECTION("bad validity byte") {
    std::string bad = bytes;
    bad[bad.size() - 1] = 7;
    std::istringstream s(bad, std::ios::binary);
    REQUIRE_THROWS_AS(read_rimg(s), FormatError);
  }
}

TEST_CASE("render: constant, invalid, and monotone ramp") {
  SensorConfig cfg;
  RangeImage img(4, 32, {Channel::depth});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      img.set_valid(r, c, true);
      img.at(Channel::depth, r, c) = 20.0;
    }
  auto pix = render_gray(img, Channel::depth, cfg);
  for (std::size_t i = 1; i < pix.size(); ++i) REQUIRE(pix[i] == pix[0]);
  REQUIRE(pix[0] > 0);

  RangeImage blank(4, 32, {Channel::depth});
  auto black = render_gray(blank, Channel::depth, cfg);
  for (auto v : black) REQUIRE(v == 0);

  // increasing depth along a row must give non-increasing brightness
  RangeImage ramp(1, 32, {Channel::depth});
  for (std::size_t c = 0; c < 32; ++c) {
    ramp.set_valid(0, c, true);
    ramp.at(Channel::depth, 0, c) = 2.0 + 2.0 * static_cast<double>(c);
  }
  auto rp = render_gray(ramp, Channel::depth, cfg);
  for (std::size_t c = 1; c < 32; ++c) REQUIRE(rp[c] < rp[c - 1]);

  REQUIRE_THROWS_AS(render_gray(ramp, Channel::semantic, cfg), InputError);

  // png writer emits a valid signature
  std::string dir = testutil::scratch_dir("render");
  pngio::write_gray8(rp, 32, 1, dir + "/ramp.png");
  auto bytes = io::read_file(dir + "/ramp.png");
  REQUIRE(bytes.size() > 8);
  REQUIRE(bytes[1] == 'P');
  REQUIRE(bytes[2] == 'N');
  REQUIRE(bytes[3] == 'G');
}
