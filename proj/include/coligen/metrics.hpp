#pragma once

// Realness and faithfulness metrics: FID over a pluggable feature extractor,
// sliced Wasserstein distance over depth patches, Jensen-Shannon divergence
// of BEV occupancy, minimum matching distance, Chamfer distance, and paired
// depth RMSE. Kernels are pure; per-image and per-pair work parallelizes.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coligen/core.hpp"
#include "coligen/dataio.hpp"
#include "coligen/kdtree.hpp"
#include "coligen/rangeview.hpp"

namespace coligen::metrics {

namespace fs = std::filesystem;

struct SwdConfig {
  std::size_t patch_size = 7;
  std::size_t pyramid_levels = 2;
  std::size_t projections = 512;
  std::size_t descriptors_per_image = 128;
};

struct BevConfig {
  std::size_t grid = 100;    // cells per side
  double half_range = 40.0;  // x, y in [-half_range, half_range] meters
};

struct MetricConfig {
  std::size_t sample_count = 5000;
  SwdConfig swd;
  BevConfig bev;
  std::size_t mmd_points_per_cloud = 2048;
  std::size_t mmd_max_clouds = 0;  // 0 = use all
  std::uint64_t seed = 0;
  bool use_reflectance = false;  // FID/SWD on depth only by default

  void validate() const {
    if (sample_count < 2) throw InputError("metrics: sample_count must be >= 2");
    if (bev.grid == 0) throw InputError("metrics: BEV grid must be > 0");
    if (swd.patch_size == 0 || swd.projections == 0 || swd.descriptors_per_image == 0)
      throw InputError("metrics: SWD parameters must be > 0");
  }

  std::uint64_t fingerprint() const {
    std::ostringstream os;
    os << sample_count << "|" << swd.patch_size << "," << swd.pyramid_levels << ","
       << swd.projections << "," << swd.descriptors_per_image << "|" << bev.grid
       << "," << bev.half_range << "|" << mmd_points_per_cloud << ","
       << mmd_max_clouds << "|" << seed << "|" << use_reflectance;
    return fnv1a64(os.str());
  }
};

namespace detail {

inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

struct FidResult {
  double value = 0;
  std::size_t clamp_hits = 0;  // genuinely negative eigenvalues floored at 0
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the trace of the product
// square root comes from the symmetric form Sa^{1/2} Sb Sa^{1/2}.
inline FidResult fid(const std::vector<std::vector<double>>& feats_a,
                     const std::vector<std::vector<double>>& feats_b) {
  if (feats_a.size() < 2 || feats_b.size() < 2)
    throw InputError("fid: need at least two feature vectors per set");
  const std::size_t dim = feats_a[0].size();
  for (const auto& f : feats_a)
    if (f.size() != dim) throw DimensionError("fid: inconsistent feature dims");
  for (const auto& f : feats_b)
    if (f.size() != dim) throw DimensionError("fid: feature dims differ between sets");

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  auto stats = [dim](const std::vector<std::vector<double>>& fs, Vec& mu, Mat& sigma) {
    const std::size_t n = fs.size();
    mu = Vec::Zero(static_cast<Eigen::Index>(dim));
    for (const auto& f : fs)
      for (std::size_t i = 0; i < dim; ++i) mu[static_cast<Eigen::Index>(i)] += f[i];
    mu /= static_cast<double>(n);
    sigma = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (const auto& f : fs) {
      Vec d(static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < dim; ++i)
        d[static_cast<Eigen::Index>(i)] = f[i] - mu[static_cast<Eigen::Index>(i)];
      sigma.noalias() += d * d.transpose();
    }
    sigma /= static_cast<double>(n - 1);
  };

  Vec mu_a, mu_b;
  Mat sig_a, sig_b;
  stats(feats_a, mu_a, sig_a);
  stats(feats_b, mu_b, sig_b);

  FidResult res;
  auto clamped_sqrt_eigs = [&res](const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    Vec ev = es.eigenvalues();
    double mx = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) mx = std::max(mx, std::abs(ev[i]));
    Vec out(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev[i] < -1e-9 * mx) res.clamp_hits++;
      out[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return std::make_pair(out, es.eigenvectors());
  };

  auto [root_a, vecs_a] = clamped_sqrt_eigs(sig_a);
  Mat sqrt_a = vecs_a * root_a.asDiagonal() * vecs_a.transpose();
  Mat inner = sqrt_a * sig_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize before eig
  auto [root_i, vecs_i] = clamped_sqrt_eigs(inner);
  double tr_sqrt = root_i.sum();

  double mean_term = (mu_a - mu_b).squaredNorm();
  res.value = mean_term + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
  return res;
}

// ---------------------------------------------------------------------------
// Feature extractor: versioned fixed-seed random conv stack
// ---------------------------------------------------------------------------

// Deterministic three-stage strided random convolutional embedding with
// global average pooling. Not a perceptual backbone; values are comparable
// only between runs of this extractor version.
class RandConvExtractor {
 public:
  static constexpr const char* kVersion = "randconv-v1";
  static constexpr std::size_t kDim = 32;

  explicit RandConvExtractor(bool use_reflectance = false)
      : use_reflectance_(use_reflectance) {
    Rng rng(0x5EEDFACEULL);
    std::size_t cin = use_reflectance_ ? 2 : 1;
    widths_ = {8, 16, kDim};
    for (std::size_t l = 0; l < widths_.size(); ++l) {
      std::size_t cout = widths_[l];
      Tensor<double> w({cout, cin, 3, 3});
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = rng.normal() / std::sqrt(static_cast<double>(cin) * 9.0);
      weights_.push_back(std::move(w));
      cin = cout;
    }
  }

  const char* version() const { return kVersion; }

  // Input channels are normalized depth (and optionally reflectance) in
  // [-1, 1] with invalid cells at -1, so raydrop structure is visible.
  std::vector<double> extract(const rangeview::RangeImage& img,
                              const rangeview::SensorConfig& sensor) const {
    using rangeview::Channel;
    std::size_t h = img.height(), w = img.width();
    std::size_t cin = use_reflectance_ ? 2 : 1;
    Tensor<double> x({cin, h, w});
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        if (!img.valid(r, c)) {
          x.at(0, r, c) = -1.0;
          if (cin > 1) x.at(1, r, c) = -1.0;
          continue;
        }
        double d = std::clamp(img.at(Channel::depth, r, c), 0.0, sensor.d_max);
        x.at(0, r, c) = 2.0 * (d / sensor.d_max) - 1.0;
        if (cin > 1)
          x.at(1, r, c) = 2.0 * std::clamp(img.at(Channel::reflectance, r, c), 0.0, 1.0) - 1.0;
      }
    for (const auto& w_l : weights_) {
      x = conv_stride2_relu(x, w_l);
    }
    std::vector<double> feat(kDim, 0.0);
    std::size_t hw = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < kDim; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += x[c * hw + i];
      feat[c] = s / static_cast<double>(hw);
    }
    return feat;
  }

 private:
  static Tensor<double> conv_stride2_relu(const Tensor<double>& x,
                                          const Tensor<double>& w) {
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t cout = w.dim(0);
    const std::size_t oh = (h + 2 - 3) / 2 + 1, ow = (wd + 2 - 3) / 2 + 1;
    Tensor<double> y({cout, oh, ow});
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oi = 0; oi < oh; ++oi)
        for (std::size_t oj = 0; oj < ow; ++oj) {
          double acc = 0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj) {
                std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * 2 + ki) - 1;
                std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * 2 + kj) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj < 0 ||
                    jj >= static_cast<std::ptrdiff_t>(wd))
                  continue;
                acc += x.at(ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                       w[((co * cin + ci) * 3 + ki) * 3 + kj];
              }
          y.at(co, oi, oj) = std::max(acc, 0.0);
        }
    return y;
  }

  bool use_reflectance_;
  std::vector<std::size_t> widths_;
  std::vector<Tensor<double>> weights_;
};

// Feature exchange file: u32 count, u32 dim, then count*dim f32 LE.
inline void write_features(const std::vector<std::vector<double>>& feats,
                           const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  io::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(feats.size()));
  io::write_le<std::uint32_t>(f, feats.empty() ? 0u
                                               : static_cast<std::uint32_t>(feats[0].size()));
  for (const auto& v : feats)
    for (double x : v) io::write_f32(f, static_cast<float>(x));
  if (!f) throw InputError("write failed: " + path);
}

inline std::vector<std::vector<double>> read_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open features: " + path);
  std::uint32_t n = io::read_le<std::uint32_t>(f, "feature count");
  std::uint32_t d = io::read_le<std::uint32_t>(f, "feature dim");
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& v : out)
    for (auto& x : v) x = io::read_f32(f, "feature data");
  return out;
}

// ---------------------------------------------------------------------------
// SWD
// ---------------------------------------------------------------------------

namespace detail {

// Normalized-depth grid (invalid = -1) for patch extraction.
inline Tensor<double> depth_grid(const rangeview::RangeImage& img,
                                 const rangeview::SensorConfig& sensor) {
  using rangeview::Channel;
  Tensor<double> g({img.height(), img.width()});
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c)
      g.at(r, c) = img.valid(r, c)
                       ? 2.0 * (std::clamp(img.at(Channel::depth, r, c), 0.0,
                                           sensor.d_max) /
                                sensor.d_max) -
                             1.0
                       : -1.0;
  return g;
}

inline Tensor<double> downsample2(const Tensor<double>& g) {
  std::size_t h = g.dim(0) / 2, w = g.dim(1) / 2;
  if (h == 0 || w == 0) throw InputError("swd: image too small to downsample");
  Tensor<double> out({h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.at(r, c) = 0.25 * (g.at(2 * r, 2 * c) + g.at(2 * r, 2 * c + 1) +
                             g.at(2 * r + 1, 2 * c) + g.at(2 * r + 1, 2 * c + 1));
  return out;
}

inline void extract_patches(const Tensor<double>& g, std::size_t patch,
                            std::size_t count, Rng& rng,
                            std::vector<std::vector<double>>& out) {
  if (g.dim(0) < patch || g.dim(1) < patch)
    throw InputError("swd: image smaller than patch at this pyramid level");
  std::size_t rows = g.dim(0) - patch + 1, cols = g.dim(1) - patch + 1;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t r0 = static_cast<std::size_t>(rng.integer(rows));
    std::size_t c0 = static_cast<std::size_t>(rng.integer(cols));
    std::vector<double> p(patch * patch);
    for (std::size_t r = 0; r < patch; ++r)
      for (std::size_t c = 0; c < patch; ++c)
        p[r * patch + c] = g.at(r0 + r, c0 + c);
    out.push_back(std::move(p));
  }
}

// Zero-mean unit-variance normalization across the whole descriptor set.
inline void normalize_set(std::vector<std::vector<double>>& descs) {
  double mean = 0;
  std::size_t n = 0;
  for (auto& d : descs)
    for (double v : d) {
      mean += v;
      ++n;
    }
  mean /= static_cast<double>(n);
  double var = 0;
  for (auto& d : descs)
    for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  double inv = 1.0 / std::sqrt(var + 1e-12);
  for (auto& d : descs)
    for (double& v : d) v = (v - mean) * inv;
}

}  // namespace detail

inline double swd(const std::vector<rangeview::RangeImage>& set_a,
                  const std::vector<rangeview::RangeImage>& set_b,
                  const rangeview::SensorConfig& sensor, const MetricConfig& cfg) {
  if (set_a.empty() || set_b.empty()) throw InputError("swd: empty image set");
  const SwdConfig& sc = cfg.swd;
  double total = 0;
  for (std::size_t level = 0; level < sc.pyramid_levels; ++level) {
    auto collect = [&](const std::vector<rangeview::RangeImage>& set,
                       std::uint64_t tag) {
      std::vector<std::vector<double>> descs;
      for (std::size_t i = 0; i < set.size(); ++i) {
        Tensor<double> g = detail::depth_grid(set[i], sensor);
        for (std::size_t l = 0; l < level; ++l) g = detail::downsample2(g);
        Rng rng(derive_seed(cfg.seed, (tag << 32) ^ (level << 24) ^ i));
        detail::extract_patches(g, sc.patch_size, sc.descriptors_per_image, rng, descs);
      }
      detail::normalize_set(descs);
      return descs;
    };
    auto descs_a = collect(set_a, 1);
    auto descs_b = collect(set_b, 2);

    // Sorted-projection 1D Wasserstein needs equal sample counts.
    Rng sub_rng(derive_seed(cfg.seed, 0xD0 + level));
    auto shrink_to = [&](std::vector<std::vector<double>>& v, std::size_t target) {
      auto keep = sub_rng.sample_without_replacement(v.size(), target);
      std::sort(keep.begin(), keep.end());
      std::vector<std::vector<double>> out;
      for (std::size_t k : keep) out.push_back(std::move(v[k]));
      v = std::move(out);
    };
    std::size_t n = std::min(descs_a.size(), descs_b.size());
    if (descs_a.size() != n) shrink_to(descs_a, n);
    if (descs_b.size() != n) shrink_to(descs_b, n);

    const std::size_t dim = sc.patch_size * sc.patch_size;
    Rng proj_rng(derive_seed(cfg.seed, 0xBEEF00 + level));
    double level_sum = 0;
    std::vector<double> dir(dim), pa(n), pb(n);
    for (std::size_t p = 0; p < sc.projections; ++p) {
      double norm = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        dir[i] = proj_rng.normal();
        norm += dir[i] * dir[i];
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < dim; ++i) dir[i] /= norm;
      for (std::size_t i = 0; i < n; ++i) {
        double sa = 0, sb = 0;
        for (std::size_t j = 0; j < dim; ++j) {
          sa += descs_a[i][j] * dir[j];
          sb += descs_b[i][j] * dir[j];
        }
        pa[i] = sa;
        pb[i] = sb;
      }
      std::sort(pa.begin(), pa.end());
      std::sort(pb.begin(), pb.end());
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += std::abs(pa[i] - pb[i]);
      level_sum += acc / static_cast<double>(n);
    }
    total += level_sum / static_cast<double>(sc.projections);
  }
  return total / static_cast<double>(sc.pyramid_levels);
}

// ---------------------------------------------------------------------------
// BEV histogram + JSD
// ---------------------------------------------------------------------------

struct BevHistogram {
  Tensor<double> cells;  // normalized to sum 1
  std::size_t out_of_range = 0;
};

inline BevHistogram bev_histogram(const std::vector<rangeview::PointCloud>& clouds,
                                  const BevConfig& cfg) {
  if (clouds.empty()) throw InputError("bev_histogram: empty cloud set");
  BevHistogram h;
  h.cells = Tensor<double>({cfg.grid, cfg.grid});
  std::uint64_t total = 0;
  double cell_size = 2.0 * cfg.half_range / static_cast<double>(cfg.grid);
  for (const auto& cloud : clouds)
    for (const auto& p : cloud.points) {
      double gx = (p.x + cfg.half_range) / cell_size;
      double gy = (p.y + cfg.half_range) / cell_size;
      if (gx < 0 || gy < 0 || gx >= static_cast<double>(cfg.grid) ||
          gy >= static_cast<double>(cfg.grid)) {
        h.out_of_range++;
        continue;
      }
      h.cells.at(static_cast<std::size_t>(gx), static_cast<std::size_t>(gy)) += 1.0;
      total++;
    }
  if (total == 0) throw InputError("bev_histogram: no points inside the grid");
  for (std::size_t i = 0; i < h.cells.size(); ++i)
    h.cells[i] /= static_cast<double>(total);
  return h;
}

// Jensen-Shannon divergence, natural log; in [0, ln 2].
inline double jsd(const Tensor<double>& p, const Tensor<double>& q) {
  if (!p.same_shape(q)) throw DimensionError("jsd: histogram shapes differ");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Chamfer, MMD, RMSE
// ---------------------------------------------------------------------------

inline std::vector<kdtree::Point3> to_points(const rangeview::PointCloud& c) {
  std::vector<kdtree::Point3> out;
  out.reserve(c.size());
  for (const auto& p : c.points) out.push_back({p.x, p.y, p.z});
  return out;
}

// 0.5 * mean_a min_b d^2 + 0.5 * mean_b min_a d^2 (exact nearest neighbors).
inline double chamfer(const rangeview::PointCloud& a, const rangeview::PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw InputError("chamfer: empty cloud");
  auto pa = to_points(a);
  auto pb = to_points(b);
  kdtree::KdTree ta(pa), tb(pb);
  double sa = 0;
  for (const auto& p : pa) sa += tb.nearest_squared(p);
  double sb = 0;
  for (const auto& p : pb) sb += ta.nearest_squared(p);
  return 0.5 * sa / static_cast<double>(pa.size()) +
         0.5 * sb / static_cast<double>(pb.size());
}

inline rangeview::PointCloud subsample_cloud(const rangeview::PointCloud& c,
                                             std::size_t target, Rng& rng) {
  if (c.size() <= target) return c;
  auto keep = rng.sample_without_replacement(c.size(), target);
  std::sort(keep.begin(), keep.end());
  rangeview::PointCloud out;
  out.aux_channels = c.aux_channels;
  for (std::size_t i : keep) out.points.push_back(c.points[i]);
  return out;
}

// Mean over reference clouds of the minimum Chamfer distance to any
// generated cloud; directional by definition.
inline double mmd(const std::vector<rangeview::PointCloud>& generated,
                  const std::vector<rangeview::PointCloud>& reference,
                  const MetricConfig& cfg, std::size_t threads = 1) {
  if (generated.empty() || reference.empty())
    throw InputError("mmd: empty cloud set");
  auto cap = [&](const std::vector<rangeview::PointCloud>& set, std::uint64_t tag) {
    std::vector<rangeview::PointCloud> out;
    std::vector<std::size_t> order(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) order[i] = i;
    if (cfg.mmd_max_clouds > 0 && set.size() > cfg.mmd_max_clouds) {
      Rng rng(derive_seed(cfg.seed, 0xCAFE + tag));
      order = rng.sample_without_replacement(set.size(), cfg.mmd_max_clouds);
      std::sort(order.begin(), order.end());
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
      Rng rng(derive_seed(cfg.seed, (tag << 40) ^ order[k]));
      out.push_back(subsample_cloud(set[order[k]], cfg.mmd_points_per_cloud, rng));
    }
    return out;
  };
  auto gen = cap(generated, 1);
  auto ref = cap(reference, 2);

  std::vector<double> mins(ref.size());
  detail::parallel_for(ref.size(), threads, [&](std::size_t r) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gen) best = std::min(best, chamfer(ref[r], g));
    mins[r] = best;
  });
  double s = 0;
  for (double v : mins) s += v;
  return s / static_cast<double>(ref.size());
}

struct RmseResult {
  double value = 0;
  std::size_t mismatched_validity = 0;
};

inline RmseResult rmse(const rangeview::RangeImage& a, const rangeview::RangeImage& b) {
  using rangeview::Channel;
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionError("rmse: image shapes differ");
  RmseResult res;
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.height(); ++r)
    for (std::size_t c = 0; c < a.width(); ++c) {
      bool va = a.valid(r, c), vb = b.valid(r, c);
      if (va != vb) res.mismatched_validity++;
      if (va && vb) {
        double d = a.at(Channel::depth, r, c) - b.at(Channel::depth, r, c);
        acc += d * d;
        n++;
      }
    }
  if (n == 0) throw InputError("rmse: no overlapping valid cells");
  res.value = std::sqrt(acc / static_cast<double>(n));
  return res;
}

// ---------------------------------------------------------------------------
// Report + evaluate
// ---------------------------------------------------------------------------

struct MetricReport {
  double fid_value = 0;
  double swd_value = 0;
  double jsd_value = 0;
  double mmd_value = 0;
  std::optional<double> cd_value;    // only with a pairing manifest
  std::optional<double> rmse_value;  // only with a pairing manifest
  std::size_t real_count = 0;
  std::size_t gen_count = 0;
  std::size_t paired_count = 0;
  std::string extractor_version;
  std::uint64_t config_fingerprint = 0;

  void validate() const {
    auto chk = [](double v, const char* name) {
      if (!std::isfinite(v) || v < -1e-9)
        throw Error(std::string("metric report: ") + name + " is not finite/non-negative");
    };
    chk(fid_value, "fid");
    chk(swd_value, "swd");
    chk(jsd_value, "jsd");
    chk(mmd_value, "mmd");
    if (cd_value) chk(*cd_value, "cd");
    if (rmse_value) chk(*rmse_value, "rmse");
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "fid = " << fid_value << "\n";
    os << "swd = " << swd_value << "\n";
    os << "jsd = " << jsd_value << "  # divergence, natural log (not sqrt)\n";
    os << "mmd = " << mmd_value << "\n";
    if (cd_value) os << "cd = " << *cd_value << "\n";
    if (rmse_value) os << "rmse = " << *rmse_value << "\n";
    os << "real_count = " << real_count << "\n";
    os << "gen_count = " << gen_count << "\n";
    os << "paired_count = " << paired_count << "\n";
    os << "extractor = " << extractor_version << "\n";
    os << "config_fingerprint = " << hex64(config_fingerprint) << "\n";
    return os.str();
  }

  std::string table_row() const {
    std::ostringstream os;
    os.precision(6);
    os << "FID " << fid_value << " | SWD " << swd_value << " | JSD " << jsd_value
       << " | MMD " << mmd_value;
    if (cd_value) os << " | CD " << *cd_value;
    if (rmse_value) os << " | RMSE " << *rmse_value;
    return os.str();
  }
};

inline std::vector<std::string> list_rimg_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rimg")
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

// Unpaired realness metrics over two .rimg directories, plus paired CD/RMSE
// when a manifest is supplied. Point clouds are reconstructed from pixel
// centers on both sides so quantization affects them equally.
inline MetricReport evaluate(const std::string& real_dir, const std::string& gen_dir,
                             const std::optional<std::string>& manifest_path,
                             const MetricConfig& cfg,
                             const rangeview::SensorConfig& sensor,
                             std::size_t threads = 1) {
  cfg.validate();
  auto load_set = [&](const std::string& dir, std::uint64_t tag) {
    std::vector<std::string> files = list_rimg_files(dir);
    if (files.empty()) throw InputError("no .rimg files in " + dir);
    if (files.size() > cfg.sample_count) {
      Rng rng(derive_seed(cfg.seed, 0x5A + tag));
      auto keep = rng.sample_without_replacement(files.size(), cfg.sample_count);
      std::sort(keep.begin(), keep.end());
      std::vector<std::string> sub;
      for (std::size_t k : keep) sub.push_back(files[k]);
      files = std::move(sub);
    }
    std::vector<rangeview::RangeImage> imgs(files.size());
    detail::parallel_for(files.size(), threads, [&](std::size_t i) {
      imgs[i] = rangeview::read_rimg(files[i]);
    });
    return imgs;
  };

  auto real_imgs = load_set(real_dir, 1);
  auto gen_imgs = load_set(gen_dir, 2);

  MetricReport rep;
  rep.real_count = real_imgs.size();
  rep.gen_count = gen_imgs.size();
  rep.config_fingerprint = cfg.fingerprint();

  RandConvExtractor extractor(cfg.use_reflectance);
  rep.extractor_version = extractor.version();
  auto featurize = [&](const std::vector<rangeview::RangeImage>& imgs) {
    std::vector<std::vector<double>> fs(imgs.size());
    detail::parallel_for(imgs.size(), threads, [&](std::size_t i) {
      fs[i] = extractor.extract(imgs[i], sensor);
    });
    return fs;
  };
  rep.fid_value = fid(featurize(gen_imgs), featurize(real_imgs)).value;
  rep.swd_value = swd(gen_imgs, real_imgs, sensor, cfg);

  auto clouds_of = [&](const std::vector<rangeview::RangeImage>& imgs) {
    std::vector<rangeview::PointCloud> cs(imgs.size());
    detail::parallel_for(imgs.size(), threads, [&](std::size_t i) {
      cs[i] = rangeview::reconstruct(imgs[i], sensor, rangeview::AngleSource::pixel_center);
    });
    return cs;
  };
  auto real_clouds = clouds_of(real_imgs);
  auto gen_clouds = clouds_of(gen_imgs);
  rep.jsd_value = jsd(bev_histogram(gen_clouds, cfg.bev).cells,
                      bev_histogram(real_clouds, cfg.bev).cells);
  rep.mmd_value = mmd(gen_clouds, real_clouds, cfg, threads);

  if (manifest_path) {
    auto pairs = dataio::read_manifest(*manifest_path, /*verify=*/true);
    rep.paired_count = pairs.size();
    if (!pairs.empty()) {
      std::vector<double> cds(pairs.size()), rmses(pairs.size());
      detail::parallel_for(pairs.size(), threads, [&](std::size_t i) {
        auto in_cloud = dataio::read_scan(pairs[i].input).cloud;
        auto out_img = rangeview::read_rimg(pairs[i].output);
        auto out_cloud =
            rangeview::reconstruct(out_img, sensor, rangeview::AngleSource::pixel_center);
        Rng rng(derive_seed(cfg.seed, 0xCD00 + i));
        auto a = subsample_cloud(in_cloud, cfg.mmd_points_per_cloud, rng);
        auto b = subsample_cloud(out_cloud, cfg.mmd_points_per_cloud, rng);
        cds[i] = chamfer(a, b);
        auto [in_img, rep2] = rangeview::project(in_cloud, sensor);
        (void)rep2;
        rmses[i] = rmse(in_img, out_img).value;
      });
      double cd_sum = 0, rmse_sum = 0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        cd_sum += cds[i];
        rmse_sum += rmses[i];
      }
      rep.cd_value = cd_sum / static_cast<double>(pairs.size());
      rep.rmse_value = rmse_sum / static_cast<double>(pairs.size());
    }
  }
  rep.validate();
  return rep;
}

}  // namespace coligen::metrics
