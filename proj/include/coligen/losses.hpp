#pragma once

// Training objectives: adversarial loss (least-squares by default, the
// classic log form retained for ablations), the patch-wise contrastive
// PatchNCE loss with internal negatives, and the weighted total.
//
// Each objective exists twice: a plain scalar form on raw values (used by
// tests and as an independent route against the graph form) and a graph
// form used during training.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "coligen/autodiff.hpp"
#include "coligen/core.hpp"
#include "coligen/nets.hpp"

namespace coligen::losses {

enum class GanMode { vanilla, least_squares };
enum class GanRole { generator, discriminator };

struct LossConfig {
  double tau = 0.07;
  double lambda_nce = 1.0;
  double lambda_idt = 2.0;
  GanMode gan_mode = GanMode::least_squares;
  std::size_t patches_per_layer = 256;

  void validate() const {
    if (!(tau > 0.0)) throw InputError("loss: tau must be > 0");
    if (lambda_nce < 0.0 || lambda_idt < 0.0)
      throw InputError("loss: lambda weights must be >= 0");
    if (patches_per_layer < 1)
      throw InputError("loss: patches_per_layer must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Plain scalar forms
// ---------------------------------------------------------------------------

namespace detail {

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void check_unit(std::span<const double> v, const char* what) {
  double s = 0;
  for (double x : v) s += x * x;
  if (std::abs(std::sqrt(s) - 1.0) > 1e-4)
    throw InputError(std::string("patch_nce_single: ") + what + " is not unit-norm");
}

}  // namespace detail

// Discriminator: push real scores to the real label, fake to the fake label.
// Generator: non-saturating, push fake scores to the real label.
inline double gan_loss(std::span<const double> real_scores,
                       std::span<const double> fake_scores, GanRole role,
                       GanMode mode) {
  if (fake_scores.empty() || (role == GanRole::discriminator && real_scores.empty()))
    throw InputError("gan_loss: empty score map");
  if (mode == GanMode::least_squares) {
    if (role == GanRole::discriminator) {
      double lr = 0, lf = 0;
      for (double s : real_scores) lr += (s - 1.0) * (s - 1.0);
      for (double s : fake_scores) lf += s * s;
      return lr / static_cast<double>(real_scores.size()) +
             lf / static_cast<double>(fake_scores.size());
    }
    double lg = 0;
    for (double s : fake_scores) lg += (s - 1.0) * (s - 1.0);
    return lg / static_cast<double>(fake_scores.size());
  }
  if (role == GanRole::discriminator) {
    double lr = 0, lf = 0;
    for (double s : real_scores) lr += detail::softplus(-s);
    for (double s : fake_scores) lf += detail::softplus(s);
    return lr / static_cast<double>(real_scores.size()) +
           lf / static_cast<double>(fake_scores.size());
  }
  double lg = 0;
  for (double s : fake_scores) lg += detail::softplus(-s);
  return lg / static_cast<double>(fake_scores.size());
}

// Cross-entropy of the softmax over [positive; negatives] cosine similarities
// of unit vectors, scaled by 1/tau, with the positive as the target.
inline double patch_nce_single(std::span<const double> anchor,
                               std::span<const double> positive,
                               const std::vector<std::vector<double>>& negatives,
                               double tau) {
  if (!(tau > 0.0)) throw InputError("patch_nce_single: tau must be > 0");
  if (anchor.size() != positive.size())
    throw DimensionError("patch_nce_single: anchor/positive dim mismatch");
  detail::check_unit(anchor, "anchor");
  detail::check_unit(positive, "positive");
  double s_pos = 0;
  for (std::size_t i = 0; i < anchor.size(); ++i) s_pos += anchor[i] * positive[i];
  std::vector<double> logits;
  logits.push_back(s_pos / tau);
  for (const auto& n : negatives) {
    if (n.size() != anchor.size())
      throw DimensionError("patch_nce_single: negative dim mismatch");
    detail::check_unit(n, "negative");
    double s = 0;
    for (std::size_t i = 0; i < anchor.size(); ++i) s += anchor[i] * n[i];
    logits.push_back(s / tau);
  }
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) + mx - logits[0];
}

struct TotalLoss {
  double gan = 0, nce_x = 0, nce_y = 0;
  double total = 0;
};

inline TotalLoss total_loss(double gan, double nce_x, double nce_y,
                            const LossConfig& cfg) {
  TotalLoss t;
  t.gan = gan;
  t.nce_x = nce_x;
  t.nce_y = nce_y;
  t.total = gan + cfg.lambda_nce * nce_x + cfg.lambda_idt * nce_y;
  return t;
}

// ---------------------------------------------------------------------------
// Graph forms
// ---------------------------------------------------------------------------

template <typename T>
int gan_loss_node(ad::Graph<T>& g, int real_scores, int fake_scores, GanRole role,
                  GanMode mode) {
  if (mode == GanMode::least_squares) {
    if (role == GanRole::discriminator) {
      int lr = g.mse_to(real_scores, T(1));
      int lf = g.mse_to(fake_scores, T(0));
      return g.weighted_sum({{lr, T(1)}, {lf, T(1)}});
    }
    return g.mse_to(fake_scores, T(1));
  }
  if (role == GanRole::discriminator) {
    int lr = g.mean_all(g.softplus(g.scale(real_scores, T(-1))));
    int lf = g.mean_all(g.softplus(fake_scores));
    return g.weighted_sum({{lr, T(1)}, {lf, T(1)}});
  }
  return g.mean_all(g.softplus(g.scale(fake_scores, T(-1))));
}

// Uniform location sample (without replacement) per tap layer; the same
// locations must be applied to both stacks being compared.
inline std::vector<std::vector<std::size_t>> sample_locations(
    const std::vector<std::array<std::size_t, 3>>& tap_shapes,
    std::size_t per_layer, Rng& rng) {
  std::vector<std::vector<std::size_t>> locs;
  for (const auto& s : tap_shapes) {
    std::size_t u = s[1] * s[2];
    locs.push_back(rng.sample_without_replacement(u, std::min(per_layer, u)));
  }
  return locs;
}

// PatchNCE over feature stacks: anchors come from the translated image's
// encoder features, positives/negatives from the source image's features at
// the same sampled locations. Mean over locations and layers.
template <typename T>
int patch_nce_node(ad::Graph<T>& g, const nets::ProjectionHeads<T>& heads,
                   const nets::FeatureStack& source,
                   const nets::FeatureStack& translated,
                   const std::vector<std::vector<std::size_t>>& locations, T tau,
                   bool train) {
  if (source.taps.size() != translated.taps.size() ||
      source.taps.size() != locations.size())
    throw DimensionError("patch_nce: stack/location layer counts differ");
  std::vector<std::pair<int, T>> terms;
  const T layer_w = T(1) / static_cast<T>(locations.size());
  for (std::size_t l = 0; l < locations.size(); ++l) {
    int z_src = heads.project(g, l, source.taps[l], locations[l], train);
    int z_tr = heads.project(g, l, translated.taps[l], locations[l], train);
    int sims = g.matmul_nt(z_tr, z_src);
    terms.push_back({g.nce_diag_mean(sims, tau), layer_w});
  }
  return g.weighted_sum(terms);
}

}  // namespace coligen::losses
