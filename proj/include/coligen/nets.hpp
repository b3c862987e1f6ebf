#pragma once

// Network definitions: the depth-reflectance encoder G_enc, auxiliary class
// encoder E, decoder G_dec, PatchGAN discriminator D, and the per-tap
// projection heads H_l. Includes parameter storage with Adam moments and the
// checkpoint codec.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "coligen/autodiff.hpp"
#include "coligen/core.hpp"
#include "coligen/rangeview.hpp"
#include "coligen/raydrop.hpp"

namespace coligen::nets {

using ad::Graph;
using ad::ParamTensor;

// ---------------------------------------------------------------------------
// Parameter store with Adam state
// ---------------------------------------------------------------------------

template <typename T>
class ParamStore {
 public:
  ParamTensor<T>& create(const std::string& name, std::vector<std::size_t> shape) {
    if (by_name_.count(name)) throw StateError("duplicate parameter name: " + name);
    items_.push_back(std::make_unique<ParamTensor<T>>(name, std::move(shape)));
    by_name_[name] = items_.back().get();
    return *items_.back();
  }

  ParamTensor<T>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<ParamTensor<T>>>& all() const { return items_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto& p : items_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  std::uint64_t adam_t() const { return adam_t_; }
  void set_adam_t(std::uint64_t t) { adam_t_ = t; }

  void adam_step(T lr, T beta1, T beta2, T eps) {
    ++adam_t_;
    T bc1 = T(1) - std::pow(beta1, static_cast<T>(adam_t_));
    T bc2 = T(1) - std::pow(beta2, static_cast<T>(adam_t_));
    for (auto& p : items_) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        T g = p->grad[i];
        p->m[i] = beta1 * p->m[i] + (T(1) - beta1) * g;
        p->v[i] = beta2 * p->v[i] + (T(1) - beta2) * g * g;
        T mhat = p->m[i] / bc1;
        T vhat = p->v[i] / bc2;
        p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<std::unique_ptr<ParamTensor<T>>> items_;
  std::map<std::string, ParamTensor<T>*> by_name_;
  std::uint64_t adam_t_ = 0;
};

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct GeneratorSpec {
  std::size_t base_width = 16;
  std::size_t n_resblocks = 4;
  std::size_t n_downsample = 2;
  // Indices into the encoder output list: 0 = input image, 1 = stem,
  // 2..n_downsample+1 = after each downsample, then one per residual block.
  std::vector<std::size_t> tap_layers = {0, 1, 2, 3, 5};

  std::size_t enc_resblocks() const { return n_resblocks - n_resblocks / 2; }
  std::size_t dec_resblocks() const { return n_resblocks / 2; }
  std::size_t n_enc_layers() const { return 2 + n_downsample + enc_resblocks(); }
  std::size_t bottleneck_width() const { return base_width << n_downsample; }
  std::size_t downsample_factor() const { return std::size_t{1} << n_downsample; }

  // Channel count of encoder layer output `idx` given the image input width.
  std::size_t layer_channels(std::size_t idx, std::size_t in_channels) const {
    if (idx == 0) return in_channels;
    if (idx == 1) return base_width;
    if (idx <= 1 + n_downsample) return base_width << (idx - 1);
    return bottleneck_width();
  }

  // Spatial shrink factor of encoder layer output `idx`.
  std::size_t layer_stride(std::size_t idx) const {
    if (idx <= 1) return 1;
    std::size_t ds = std::min(idx - 1, n_downsample);
    return std::size_t{1} << ds;
  }

  void validate() const {
    if (base_width < 1) throw InputError("generator: base_width must be >= 1");
    if (n_resblocks < 1) throw InputError("generator: need at least one residual block");
    if (n_downsample < 1) throw InputError("generator: need at least one downsample");
    if (tap_layers.size() != 5)
      throw InputError("generator: exactly five tap layers required");
    for (std::size_t i = 1; i < tap_layers.size(); ++i)
      if (!(tap_layers[i - 1] < tap_layers[i]))
        throw InputError("generator: tap layers must be strictly increasing");
    if (tap_layers.back() >= n_enc_layers())
      throw InputError("generator: tap layer index beyond encoder depth");
  }

  static std::vector<std::size_t> default_taps(std::size_t n_resblocks,
                                               std::size_t n_downsample = 2) {
    // Input, stem, each downsample, and the middle residual block.
    std::vector<std::size_t> taps;
    for (std::size_t i = 0; i <= n_downsample + 1; ++i) taps.push_back(i);
    std::size_t enc_res = n_resblocks - n_resblocks / 2;
    taps.push_back(1 + n_downsample + enc_res);
    while (taps.size() > 5) taps.erase(taps.begin() + 1);
    return taps;
  }
};

struct AuxEncoderSpec {
  std::size_t embed_dim = 8;
  std::size_t n_classes = 17;  // 16 semantic classes + reserved 0 = unlabeled

  void validate() const {
    if (embed_dim < 1 || n_classes < 1)
      throw InputError("aux encoder: embed_dim and n_classes must be >= 1");
  }
};

struct DiscriminatorSpec {
  std::size_t base_width = 16;
  std::size_t n_layers = 3;  // stride-2 stages

  std::size_t receptive_field() const {
    std::size_t rf = 1, stride = 1;
    for (std::size_t i = 0; i < n_layers; ++i) {
      rf += 3 * stride;
      stride *= 2;
    }
    rf += 3 * stride;  // stride-1 widening conv
    rf += 3 * stride;  // stride-1 score conv
    return rf;
  }

  void validate() const {
    if (base_width < 1 || n_layers < 1)
      throw InputError("discriminator: base_width and n_layers must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Layer helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
struct Conv {
  ParamTensor<T>* w = nullptr;
  ParamTensor<T>* b = nullptr;
  std::size_t stride = 1, pad = 1;

  static Conv make(ParamStore<T>& ps, const std::string& name, std::size_t cin,
                   std::size_t cout, std::size_t k, std::size_t stride,
                   std::size_t pad, Rng& rng) {
    Conv c;
    c.w = &ps.create(name + ".w", {cout, cin, k, k});
    c.b = &ps.create(name + ".b", {cout});
    c.stride = stride;
    c.pad = pad;
    init_normal(c.w->value, rng, 0.02);
    return c;
  }

  int operator()(Graph<T>& g, int x, bool train) const {
    return g.conv2d(x, g.leaf(*w, train), g.leaf(*b, train), stride, pad);
  }
};

template <typename T>
struct Norm {
  ParamTensor<T>* gamma = nullptr;
  ParamTensor<T>* beta = nullptr;

  static Norm make(ParamStore<T>& ps, const std::string& name, std::size_t c) {
    Norm n;
    n.gamma = &ps.create(name + ".gamma", {c});
    n.beta = &ps.create(name + ".beta", {c});
    n.gamma->value.fill(T(1));
    return n;
  }

  int operator()(Graph<T>& g, int x, bool train) const {
    return g.instance_norm(x, g.leaf(*gamma, train), g.leaf(*beta, train), T(1e-5));
  }
};

template <typename T>
struct ResBlock {
  Conv<T> c1, c2;
  Norm<T> n1, n2;

  static ResBlock make(ParamStore<T>& ps, const std::string& name, std::size_t c,
                       Rng& rng) {
    ResBlock b;
    b.c1 = Conv<T>::make(ps, name + ".c1", c, c, 3, 1, 1, rng);
    b.n1 = Norm<T>::make(ps, name + ".n1", c);
    b.c2 = Conv<T>::make(ps, name + ".c2", c, c, 3, 1, 1, rng);
    b.n2 = Norm<T>::make(ps, name + ".n2", c);
    return b;
  }

  int operator()(Graph<T>& g, int x, bool train) const {
    int h = g.relu(n1(g, c1(g, x, train), train));
    h = n2(g, c2(g, h, train), train);
    return g.add(x, h);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator (G_enc + E + G_dec) and feature taps
// ---------------------------------------------------------------------------

enum class RsMode {
  straight_through,  // training: hard forward, relaxed backward
  relaxed,           // differentiable everywhere (gradient checks)
  bernoulli,         // inference sampling
  bypass,            // no raydrop: yhat = complete scan
};

struct FeatureStack {
  std::vector<int> taps;                          // graph node ids
  std::vector<std::array<std::size_t, 3>> shapes; // (C, H, W) per tap
};

template <typename T>
class Generator {
 public:
  Generator(GeneratorSpec spec, AuxEncoderSpec aux_spec, std::size_t in_channels,
            ParamStore<T>& ps, Rng& rng)
      : spec_(spec), aux_spec_(aux_spec), in_channels_(in_channels) {
    spec_.validate();
    aux_spec_.validate();
    const std::size_t w = spec_.base_width;

    stem_ = detail::Conv<T>::make(ps, "genc.stem", in_channels, w, 7, 1, 3, rng);
    stem_norm_ = detail::Norm<T>::make(ps, "genc.stem_n", w);
    for (std::size_t i = 0; i < spec_.n_downsample; ++i) {
      std::size_t cin = w << i, cout = w << (i + 1);
      down_.push_back(detail::Conv<T>::make(ps, "genc.down" + std::to_string(i),
                                            cin, cout, 3, 2, 1, rng));
      down_norm_.push_back(
          detail::Norm<T>::make(ps, "genc.down" + std::to_string(i) + "_n", cout));
    }
    const std::size_t bw = spec_.bottleneck_width();
    for (std::size_t i = 0; i < spec_.enc_resblocks(); ++i)
      enc_res_.push_back(
          detail::ResBlock<T>::make(ps, "genc.res" + std::to_string(i), bw, rng));

    embed_ = &ps.create("aux.embed", {aux_spec_.n_classes, aux_spec_.embed_dim});
    detail::init_normal(embed_->value, rng, 1.0);
    aux_stem_ = detail::Conv<T>::make(ps, "aux.stem", aux_spec_.embed_dim, w, 3, 1, 1, rng);
    aux_stem_norm_ = detail::Norm<T>::make(ps, "aux.stem_n", w);
    for (std::size_t i = 0; i < spec_.n_downsample; ++i) {
      std::size_t cin = w << i, cout = w << (i + 1);
      aux_down_.push_back(detail::Conv<T>::make(ps, "aux.down" + std::to_string(i),
                                                cin, cout, 3, 2, 1, rng));
      aux_down_norm_.push_back(
          detail::Norm<T>::make(ps, "aux.down" + std::to_string(i) + "_n", cout));
    }

    for (std::size_t i = 0; i < spec_.dec_resblocks(); ++i)
      dec_res_.push_back(
          detail::ResBlock<T>::make(ps, "gdec.res" + std::to_string(i), bw, rng));
    for (std::size_t i = 0; i < spec_.n_downsample; ++i) {
      std::size_t cin = bw >> i, cout = bw >> (i + 1);
      up_.push_back(detail::Conv<T>::make(ps, "gdec.up" + std::to_string(i),
                                          cin, cout, 3, 1, 1, rng));
      up_norm_.push_back(
          detail::Norm<T>::make(ps, "gdec.up" + std::to_string(i) + "_n", cout));
    }
    final_ = detail::Conv<T>::make(ps, "gdec.final", w, 3, 7, 1, 3, rng);
  }

  const GeneratorSpec& spec() const { return spec_; }
  const AuxEncoderSpec& aux_spec() const { return aux_spec_; }
  std::size_t in_channels() const { return in_channels_; }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(0) != in_channels_)
      throw DimensionError("generator: expected (" + std::to_string(in_channels_) +
                           ",H,W) input");
    std::size_t f = spec_.downsample_factor();
    if (x.dim(1) % f != 0 || x.dim(2) % f != 0)
      throw DimensionError("generator: H and W must be multiples of " + std::to_string(f));
  }

  // Encoder; optionally collects the configured feature taps.
  int encode(Graph<T>& g, int x, bool train, FeatureStack* stack = nullptr) const {
    std::vector<int> layer_out;
    layer_out.push_back(x);
    int h = g.relu(stem_norm_(g, stem_(g, x, train), train));
    layer_out.push_back(h);
    for (std::size_t i = 0; i < down_.size(); ++i) {
      h = g.relu(down_norm_[i](g, down_[i](g, h, train), train));
      layer_out.push_back(h);
    }
    for (const auto& r : enc_res_) {
      h = r(g, h, train);
      layer_out.push_back(h);
    }
    if (stack) {
      stack->taps.clear();
      stack->shapes.clear();
      for (std::size_t t : spec_.tap_layers) {
        int id = layer_out[t];
        const auto& s = g.value(id).shape();
        stack->taps.push_back(id);
        stack->shapes.push_back({s[0], s[1], s[2]});
      }
    }
    return h;
  }

  int encode_aux(Graph<T>& g, const IntImage& ids, bool train) const {
    int h = g.embedding(ids, g.leaf(*embed_, train));
    h = g.relu(aux_stem_norm_(g, aux_stem_(g, h, train), train));
    for (std::size_t i = 0; i < aux_down_.size(); ++i) {
      h = aux_down_[i](g, h, train);
      h = aux_down_norm_[i](g, h, train);
      if (i + 1 < aux_down_.size()) h = g.relu(h);
    }
    return h;
  }

  // Decoder output: (3,H,W) with tanh-bounded depth/reflectance and an
  // unbounded raydrop logit channel.
  int decode(Graph<T>& g, int z, bool train) const {
    int h = z;
    for (const auto& r : dec_res_) h = r(g, h, train);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = g.upsample_nearest2x(h);
      h = g.relu(up_norm_[i](g, up_[i](g, h, train), train));
    }
    int out = final_(g, h, train);
    int bounded = g.tanh_op(g.slice_channels(out, 0, 2));
    int logit = g.slice_channels(out, 2, 3);
    return g.concat2(bounded, logit);
  }

  struct GenOut {
    int yhat = -1;        // (2,H,W) masked output in normalized space
    int complete = -1;    // (2,H,W) complete scan \tilde{y}_l
    int logits = -1;      // (1,H,W) raydrop logits
    int mask = -1;        // (1,H,W) mask node
    IntImage hard_mask;   // binary mask as integers (st/bernoulli modes)
  };

  // Full Eq.-(3) composition: yhat = RS(G_dec(G_enc(d) + E(c))).
  // `ids` may be null; the reserved all-unlabeled map is used then.
  GenOut generate(Graph<T>& g, int x, const IntImage* ids, RsMode mode, T alpha,
                  Rng* noise_rng, bool train, FeatureStack* stack = nullptr) const {
    if (mode == RsMode::straight_through || mode == RsMode::relaxed) {
      if (!noise_rng) throw InputError("generate: stochastic mode needs an rng");
      const std::size_t h = g.value(x).dim(1), w = g.value(x).dim(2);
      Tensor<T> noise({1, h, w});
      for (std::size_t i = 0; i < noise.size(); ++i) {
        double g1 = raydrop::gumbel_from_uniform(noise_rng->uniform());
        double g2 = raydrop::gumbel_from_uniform(noise_rng->uniform());
        noise[i] = static_cast<T>(g1 - g2);
      }
      return generate_with_noise(g, x, ids, mode, alpha, noise, train, stack);
    }

    GenOut out = run_core(g, x, ids, train, stack);
    const std::size_t h = g.value(x).dim(1), w = g.value(x).dim(2);
    if (mode == RsMode::bypass) {
      out.yhat = out.complete;
      out.hard_mask = IntImage(h, w);
      std::fill(out.hard_mask.data.begin(), out.hard_mask.data.end(), 1);
      return out;
    }
    // Bernoulli inference path.
    if (!noise_rng) throw InputError("generate: bernoulli mode needs an rng");
    const Tensor<T>& lv = g.value(out.logits);
    Tensor<double> p({h, w});
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = raydrop::sigmoid(static_cast<double>(lv[i]));
    out.hard_mask = raydrop::bernoulli_mask(p, *noise_rng);
    Tensor<T> mv({1, h, w});
    for (std::size_t i = 0; i < mv.size(); ++i)
      mv[i] = static_cast<T>(out.hard_mask.data[i]);
    out.mask = g.constant(std::move(mv));
    apply_rs_mask(g, out);
    return out;
  }

  // Gumbel-Sigmoid path with externally drawn noise (g1 - g2 per cell), so
  // one draw can be shared between the discriminator and generator passes.
  GenOut generate_with_noise(Graph<T>& g, int x, const IntImage* ids, RsMode mode,
                             T alpha, const Tensor<T>& noise_diff, bool train,
                             FeatureStack* stack = nullptr) const {
    if (mode != RsMode::straight_through && mode != RsMode::relaxed)
      throw InputError("generate_with_noise: mode must be a Gumbel-Sigmoid mode");
    if (!(alpha > T(0))) throw InputError("generate: alpha must be > 0");
    GenOut out = run_core(g, x, ids, train, stack);
    const std::size_t h = g.value(x).dim(1), w = g.value(x).dim(2);
    if (noise_diff.rank() != 3 || noise_diff.dim(1) != h || noise_diff.dim(2) != w)
      throw DimensionError("generate: noise field shape mismatch");
    int u = g.scale(g.add(out.logits, g.constant(noise_diff)), T(1) / alpha);
    out.mask = mode == RsMode::straight_through ? g.st_threshold(u)
                                                : g.relaxed_threshold(u);
    const Tensor<T>& mv = g.value(out.mask);
    out.hard_mask = IntImage(h, w);
    for (std::size_t i = 0; i < mv.size(); ++i)
      out.hard_mask.data[i] = mv[i] >= T(0.5) ? 1 : 0;
    apply_rs_mask(g, out);
    return out;
  }

 private:
  // Shared encode-sum-decode core of Eq. (3).
  GenOut run_core(Graph<T>& g, int x, const IntImage* ids, bool train,
                  FeatureStack* stack) const {
    check_input(g.value(x));
    const std::size_t h = g.value(x).dim(1), w = g.value(x).dim(2);
    IntImage zero_ids(h, w);
    const IntImage& cmap = ids ? *ids : zero_ids;
    if (cmap.height != h || cmap.width != w)
      throw DimensionError("generate: semantic map shape mismatch");
    int zd = encode(g, x, train, stack);
    int zc = encode_aux(g, cmap, train);
    int dec = decode(g, g.add(zd, zc), train);
    GenOut out;
    out.complete = g.slice_channels(dec, 0, 2);
    out.logits = g.slice_channels(dec, 2, 3);
    return out;
  }

  // Masked compose keeping the invalid-cell encoding (-1) in network space:
  // yhat = (complete + 1) * mask - 1.
  static void apply_rs_mask(Graph<T>& g, GenOut& out) {
    int shifted = g.add_scalar(out.complete, T(1));
    int masked = g.mul_channel_broadcast(shifted, out.mask);
    out.yhat = g.add_scalar(masked, T(-1));
  }

  GeneratorSpec spec_;
  AuxEncoderSpec aux_spec_;
  std::size_t in_channels_;

  detail::Conv<T> stem_;
  detail::Norm<T> stem_norm_;
  std::vector<detail::Conv<T>> down_;
  std::vector<detail::Norm<T>> down_norm_;
  std::vector<detail::ResBlock<T>> enc_res_;

  ParamTensor<T>* embed_ = nullptr;
  detail::Conv<T> aux_stem_;
  detail::Norm<T> aux_stem_norm_;
  std::vector<detail::Conv<T>> aux_down_;
  std::vector<detail::Norm<T>> aux_down_norm_;

  std::vector<detail::ResBlock<T>> dec_res_;
  std::vector<detail::Conv<T>> up_;
  std::vector<detail::Norm<T>> up_norm_;
  detail::Conv<T> final_;
};

// ---------------------------------------------------------------------------
// PatchGAN discriminator
// ---------------------------------------------------------------------------

template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::size_t in_channels, ParamStore<T>& ps,
                Rng& rng)
      : spec_(spec) {
    spec_.validate();
    const std::size_t w = spec_.base_width;
    std::size_t cin = in_channels;
    for (std::size_t i = 0; i < spec_.n_layers; ++i) {
      std::size_t cout = w << i;
      convs_.push_back(detail::Conv<T>::make(ps, "disc.conv" + std::to_string(i),
                                             cin, cout, 4, 2, 1, rng));
      if (i > 0) norms_.push_back(detail::Norm<T>::make(
          ps, "disc.conv" + std::to_string(i) + "_n", cout));
      cin = cout;
    }
    std::size_t cw = w << spec_.n_layers;
    wide_ = detail::Conv<T>::make(ps, "disc.wide", cin, cw, 4, 1, 1, rng);
    wide_norm_ = detail::Norm<T>::make(ps, "disc.wide_n", cw);
    score_ = detail::Conv<T>::make(ps, "disc.score", cw, 1, 4, 1, 1, rng);
  }

  const DiscriminatorSpec& spec() const { return spec_; }

  // Patch score map (1, H', W'); no global pooling.
  int operator()(Graph<T>& g, int x, bool train) const {
    int h = g.leaky_relu(convs_[0](g, x, train), T(0.2));
    for (std::size_t i = 1; i < convs_.size(); ++i)
      h = g.leaky_relu(norms_[i - 1](g, convs_[i](g, h, train), train), T(0.2));
    h = g.leaky_relu(wide_norm_(g, wide_(g, h, train), train), T(0.2));
    return score_(g, h, train);
  }

 private:
  DiscriminatorSpec spec_;
  std::vector<detail::Conv<T>> convs_;
  std::vector<detail::Norm<T>> norms_;
  detail::Conv<T> wide_;
  detail::Norm<T> wide_norm_;
  detail::Conv<T> score_;
};

// ---------------------------------------------------------------------------
// Projection heads H_l: two-layer MLP (256 units) + L2 normalization
// ---------------------------------------------------------------------------

template <typename T>
class ProjectionHeads {
 public:
  static constexpr std::size_t kUnits = 256;

  ProjectionHeads(const GeneratorSpec& gspec, std::size_t in_channels,
                  ParamStore<T>& ps, Rng& rng) {
    for (std::size_t i = 0; i < gspec.tap_layers.size(); ++i) {
      std::size_t c = gspec.layer_channels(gspec.tap_layers[i], in_channels);
      Head h;
      h.w1 = &ps.create("head" + std::to_string(i) + ".w1", {kUnits, c});
      h.b1 = &ps.create("head" + std::to_string(i) + ".b1", {kUnits});
      h.w2 = &ps.create("head" + std::to_string(i) + ".w2", {kUnits, kUnits});
      h.b2 = &ps.create("head" + std::to_string(i) + ".b2", {kUnits});
      detail::init_normal(h.w1->value, rng, 0.02);
      detail::init_normal(h.w2->value, rng, 0.02);
      heads_.push_back(h);
    }
  }

  std::size_t count() const { return heads_.size(); }

  // Unit-norm embeddings for the sampled locations of tap `l`.
  int project(Graph<T>& g, std::size_t l, int tap,
              const std::vector<std::size_t>& locations, bool train) const {
    const Head& h = heads_.at(l);
    int x = g.gather_rows(tap, locations);
    x = g.relu(g.linear(x, g.leaf(*h.w1, train), g.leaf(*h.b1, train)));
    x = g.linear(x, g.leaf(*h.w2, train), g.leaf(*h.b2, train));
    return g.l2_normalize_rows(x);
  }

 private:
  struct Head {
    ParamTensor<T>*w1, *b1, *w2, *b2;
  };
  std::vector<Head> heads_;
};

// ---------------------------------------------------------------------------
// Model bundle + checkpoint codec
// ---------------------------------------------------------------------------

template <typename T>
struct Model {
  GeneratorSpec gen_spec;
  AuxEncoderSpec aux_spec;
  DiscriminatorSpec disc_spec;
  rangeview::SensorConfig sensor;
  std::size_t in_channels = 2;

  ParamStore<T> gen_params;   // G_enc + E + G_dec + heads
  ParamStore<T> disc_params;  // D

  std::unique_ptr<Generator<T>> generator;
  std::unique_ptr<Discriminator<T>> discriminator;
  std::unique_ptr<ProjectionHeads<T>> heads;

  static Model build(GeneratorSpec gs, AuxEncoderSpec as, DiscriminatorSpec ds,
                     rangeview::SensorConfig sensor, std::uint64_t init_seed) {
    Model m;
    m.gen_spec = gs;
    m.aux_spec = as;
    m.disc_spec = ds;
    m.sensor = sensor;
    Rng rng(derive_seed(init_seed, 0xC0DE));
    m.generator = std::make_unique<Generator<T>>(gs, as, m.in_channels, m.gen_params, rng);
    m.heads = std::make_unique<ProjectionHeads<T>>(gs, m.in_channels, m.gen_params, rng);
    m.discriminator = std::make_unique<Discriminator<T>>(ds, m.in_channels,
                                                         m.disc_params, rng);
    return m;
  }
};

struct LossRecord {
  std::uint64_t step = 0;
  double gan_d = 0, gan_g = 0, nce_x = 0, nce_y = 0, total = 0;
};

// Everything needed to resume training bit-exactly.
template <typename T>
struct CheckpointExtras {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::map<std::string, std::string> rng_states;
  std::vector<LossRecord> history;
};

namespace detail {

template <typename T>
void write_scalar(std::ostream& os, T v) {
  if constexpr (sizeof(T) == 4)
    io::write_f32(os, static_cast<float>(v));
  else
    io::write_f64(os, static_cast<double>(v));
}

template <typename T>
T read_scalar(std::istream& is, const char* what) {
  if constexpr (sizeof(T) == 4)
    return static_cast<T>(io::read_f32(is, what));
  else
    return static_cast<T>(io::read_f64(is, what));
}

template <typename T>
void write_store(std::ostream& os, const ParamStore<T>& ps) {
  io::write_le<std::uint64_t>(os, ps.adam_t());
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ps.all().size()));
  for (const auto& p : ps.all()) {
    io::write_string(os, p->name);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape())
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < p->value.size(); ++i) write_scalar<T>(os, p->value[i]);
    for (std::size_t i = 0; i < p->m.size(); ++i) write_scalar<T>(os, p->m[i]);
    for (std::size_t i = 0; i < p->v.size(); ++i) write_scalar<T>(os, p->v[i]);
  }
}

template <typename T>
void read_store(std::istream& is, ParamStore<T>& ps) {
  ps.set_adam_t(io::read_le<std::uint64_t>(is, "ckpt adam_t"));
  std::uint32_t n = io::read_le<std::uint32_t>(is, "ckpt tensor count");
  if (n != ps.all().size())
    throw StateError("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = io::read_string(is, "ckpt tensor name");
    ParamTensor<T>* p = ps.find(name);
    if (!p) throw StateError("checkpoint: unknown parameter " + name);
    std::uint32_t rank = io::read_le<std::uint32_t>(is, "ckpt tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(io::read_le<std::uint32_t>(is, "ckpt tensor dim"));
    if (shape != p->value.shape())
      throw StateError("checkpoint: shape mismatch for " + name);
    for (std::size_t j = 0; j < p->value.size(); ++j)
      p->value[j] = read_scalar<T>(is, "ckpt tensor data");
    for (std::size_t j = 0; j < p->m.size(); ++j)
      p->m[j] = read_scalar<T>(is, "ckpt tensor m");
    for (std::size_t j = 0; j < p->v.size(); ++j)
      p->v[j] = read_scalar<T>(is, "ckpt tensor v");
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& m, const CheckpointExtras<T>& ex,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  io::write_bytes(os, "CLGC", 4);
  io::write_le<std::uint16_t>(os, 1);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));

  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.gen_spec.base_width));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.gen_spec.n_resblocks));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.gen_spec.n_downsample));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.gen_spec.tap_layers.size()));
  for (std::size_t t : m.gen_spec.tap_layers)
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.aux_spec.embed_dim));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.aux_spec.n_classes));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.disc_spec.base_width));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.disc_spec.n_layers));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.sensor.height));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.sensor.width));
  io::write_f64(os, m.sensor.fov_up_deg);
  io::write_f64(os, m.sensor.fov_down_deg);
  io::write_f64(os, m.sensor.d_max);
  io::write_f64(os, m.sensor.d_min);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.in_channels));

  io::write_le<std::uint64_t>(os, ex.step);
  io::write_le<std::uint64_t>(os, ex.epoch);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ex.rng_states.size()));
  for (const auto& [k, v] : ex.rng_states) {
    io::write_string(os, k);
    io::write_string(os, v);
  }
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ex.history.size()));
  for (const LossRecord& r : ex.history) {
    io::write_le<std::uint64_t>(os, r.step);
    io::write_f64(os, r.gan_d);
    io::write_f64(os, r.gan_g);
    io::write_f64(os, r.nce_x);
    io::write_f64(os, r.nce_y);
    io::write_f64(os, r.total);
  }

  detail::write_store(os, m.gen_params);
  detail::write_store(os, m.disc_params);
  if (!os) throw InputError("write failed: " + path);
}

// Reads the header only; callers rebuild the model from it and then load the
// tensors with load_checkpoint.
struct CheckpointHeader {
  GeneratorSpec gen_spec;
  AuxEncoderSpec aux_spec;
  DiscriminatorSpec disc_spec;
  rangeview::SensorConfig sensor;
  std::size_t in_channels = 2;
  std::size_t scalar_width = 8;
};

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  char magic[4];
  io::read_bytes(is, magic, 4, "ckpt magic");
  if (std::memcmp(magic, "CLGC", 4) != 0) throw StateError("checkpoint: bad magic");
  std::uint16_t ver = io::read_le<std::uint16_t>(is, "ckpt version");
  if (ver != 1) throw StateError("checkpoint: unsupported version");
  CheckpointHeader h;
  h.scalar_width = io::read_le<std::uint8_t>(is, "ckpt scalar width");
  if (h.scalar_width != 4 && h.scalar_width != 8)
    throw StateError("checkpoint: invalid scalar width");
  h.gen_spec.base_width = io::read_le<std::uint32_t>(is, "ckpt gspec");
  h.gen_spec.n_resblocks = io::read_le<std::uint32_t>(is, "ckpt gspec");
  h.gen_spec.n_downsample = io::read_le<std::uint32_t>(is, "ckpt gspec");
  std::uint32_t ntaps = io::read_le<std::uint32_t>(is, "ckpt gspec taps");
  h.gen_spec.tap_layers.clear();
  for (std::uint32_t i = 0; i < ntaps; ++i)
    h.gen_spec.tap_layers.push_back(io::read_le<std::uint32_t>(is, "ckpt tap"));
  h.aux_spec.embed_dim = io::read_le<std::uint32_t>(is, "ckpt aspec");
  h.aux_spec.n_classes = io::read_le<std::uint32_t>(is, "ckpt aspec");
  h.disc_spec.base_width = io::read_le<std::uint32_t>(is, "ckpt dspec");
  h.disc_spec.n_layers = io::read_le<std::uint32_t>(is, "ckpt dspec");
  h.sensor.height = io::read_le<std::uint32_t>(is, "ckpt sensor");
  h.sensor.width = io::read_le<std::uint32_t>(is, "ckpt sensor");
  h.sensor.fov_up_deg = io::read_f64(is, "ckpt sensor");
  h.sensor.fov_down_deg = io::read_f64(is, "ckpt sensor");
  h.sensor.d_max = io::read_f64(is, "ckpt sensor");
  h.sensor.d_min = io::read_f64(is, "ckpt sensor");
  h.in_channels = io::read_le<std::uint32_t>(is, "ckpt in_channels");
  return h;
}

template <typename T>
CheckpointExtras<T> load_checkpoint(std::istream& is, Model<T>& m) {
  CheckpointExtras<T> ex;
  ex.step = io::read_le<std::uint64_t>(is, "ckpt step");
  ex.epoch = io::read_le<std::uint64_t>(is, "ckpt epoch");
  std::uint32_t nr = io::read_le<std::uint32_t>(is, "ckpt rng count");
  for (std::uint32_t i = 0; i < nr; ++i) {
    std::string k = io::read_string(is, "ckpt rng key");
    ex.rng_states[k] = io::read_string(is, "ckpt rng state");
  }
  std::uint32_t nh = io::read_le<std::uint32_t>(is, "ckpt history count");
  for (std::uint32_t i = 0; i < nh; ++i) {
    LossRecord r;
    r.step = io::read_le<std::uint64_t>(is, "ckpt history");
    r.gan_d = io::read_f64(is, "ckpt history");
    r.gan_g = io::read_f64(is, "ckpt history");
    r.nce_x = io::read_f64(is, "ckpt history");
    r.nce_y = io::read_f64(is, "ckpt history");
    r.total = io::read_f64(is, "ckpt history");
    ex.history.push_back(r);
  }
  detail::read_store(is, m.gen_params);
  detail::read_store(is, m.disc_params);
  return ex;
}

template <typename T>
std::pair<Model<T>, CheckpointExtras<T>> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StateError("cannot open checkpoint: " + path);
  CheckpointHeader h;
  try {
    h = read_checkpoint_header(is);
  } catch (const TruncationError& e) {
    throw StateError(std::string("checkpoint: ") + e.what());
  }
  if (h.scalar_width != sizeof(T))
    throw StateError("checkpoint: precision mismatch (file " +
                     std::to_string(h.scalar_width * 8) + "-bit)");
  Model<T> m = Model<T>::build(h.gen_spec, h.aux_spec, h.disc_spec, h.sensor, 0);
  CheckpointExtras<T> ex;
  try {
    ex = load_checkpoint(is, m);
  } catch (const TruncationError& e) {
    throw StateError(std::string("checkpoint: ") + e.what());
  }
  return {std::move(m), std::move(ex)};
}

}  // namespace coligen::nets
