#pragma once

// Raydrop Synthesis primitives: Gumbel noise, the Gumbel-Sigmoid relaxation
// of Bernoulli mask sampling, straight-through binarization, and mask
// application to range images.
//
// The network emits unbounded logits l; p = sigmoid(l) is the Bernoulli keep
// probability. The relaxation sigmoid(((log p + g1) - (log(1-p) + g2)) / a)
// is evaluated in logit space as sigmoid((l + g1 - g2) / a), which is
// algebraically identical and avoids log(0).

#include <cmath>
#include <cstdint>
#include <vector>

#include "coligen/core.hpp"
#include "coligen/rangeview.hpp"

namespace coligen::raydrop {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Gumbel(0,1) from a uniform draw, with the double-log kept finite by
// clamping u into [eps, 1-eps].
inline double gumbel_from_uniform(double u, double eps = 1e-12) {
  u = std::clamp(u, eps, 1.0 - eps);
  return -std::log(-std::log(u));
}

inline Tensor<double> gumbel_sample(std::size_t h, std::size_t w, Rng& rng) {
  Tensor<double> g({h, w});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = gumbel_from_uniform(rng.uniform());
  return g;
}

// Relaxed mask y'_m in (0,1).
inline Tensor<double> relaxed_mask(const Tensor<double>& logits, double alpha,
                                   const Tensor<double>& g1, const Tensor<double>& g2) {
  if (!(alpha > 0.0)) throw InputError("relaxed_mask: alpha must be > 0");
  if (!logits.same_shape(g1) || !logits.same_shape(g2))
    throw DimensionError("relaxed_mask: logits and noise shapes differ");
  Tensor<double> out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = sigmoid((logits[i] + g1[i] - g2[i]) / alpha);
  return out;
}

// Hard mask: 1 where y'_m >= 0.5 (ties keep the ray).
inline IntImage hard_mask(const Tensor<double>& relaxed) {
  IntImage m(relaxed.dim(0), relaxed.dim(1));
  for (std::size_t i = 0; i < relaxed.size(); ++i) m.data[i] = relaxed[i] >= 0.5 ? 1 : 0;
  return m;
}

struct StraightThroughSample {
  IntImage mask;                 // forward value, exactly binary
  Tensor<double> relaxed;        // y'_m
  Tensor<double> dmask_dlogit;   // gradient contract: d relaxed / d logit
  Tensor<double> g1, g2;
};

// Forward = hard threshold of the relaxation; the propagated derivative is
// that of the relaxation itself (thresholding treated as identity).
inline StraightThroughSample straight_through(const Tensor<double>& logits,
                                              double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw InputError("straight_through: alpha must be > 0");
  StraightThroughSample s;
  s.g1 = gumbel_sample(logits.dim(0), logits.dim(1), rng);
  s.g2 = gumbel_sample(logits.dim(0), logits.dim(1), rng);
  s.relaxed = relaxed_mask(logits, alpha, s.g1, s.g2);
  s.mask = hard_mask(s.relaxed);
  s.dmask_dlogit = Tensor<double>(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i)
    s.dmask_dlogit[i] = s.relaxed[i] * (1.0 - s.relaxed[i]) / alpha;
  return s;
}

// Plain Bernoulli draws for inference.
inline IntImage bernoulli_mask(const Tensor<double>& p, Rng& rng) {
  IntImage m(p.dim(0), p.dim(1));
  for (std::size_t i = 0; i < p.size(); ++i) m.data[i] = rng.uniform() < p[i] ? 1 : 0;
  return m;
}

// yhat = mask (.) y_l on depth/reflectance; dropped cells get the invalid
// encoding (depth = 0, reflectance = 0) and validity = 0.
inline rangeview::RangeImage apply_mask(const rangeview::RangeImage& complete,
                                        const IntImage& mask) {
  using rangeview::Channel;
  if (mask.height != complete.height() || mask.width != complete.width())
    throw DimensionError("apply_mask: mask shape does not match image");
  rangeview::RangeImage out = complete;
  for (std::size_t r = 0; r < out.height(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) {
      bool keep = mask.at(r, c) != 0 && complete.valid(r, c);
      out.set_valid(r, c, keep);
      if (!keep) {
        if (out.has(Channel::depth)) out.at(Channel::depth, r, c) = 0.0;
        if (out.has(Channel::reflectance)) out.at(Channel::reflectance, r, c) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace coligen::raydrop
