#pragma once

// Unpaired adversarial training loop: discriminator-then-generator updates
// per step, Adam with stepwise learning-rate halving every 10 epochs,
// deterministic given (seed, data order), exact-resume checkpoints, and the
// batch translate pipeline.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coligen/core.hpp"
#include "coligen/dataio.hpp"
#include "coligen/losses.hpp"
#include "coligen/nets.hpp"
#include "coligen/rangeview.hpp"

namespace coligen::trainer {

namespace fs = std::filesystem;

struct TrainConfig {
  double learning_rate = 5e-5;
  double lr_decay = 0.5;             // applied every lr_decay_epochs
  std::size_t lr_decay_epochs = 10;
  std::size_t batch_size = 4;        // reference setting is 12; desk default 4
  std::size_t epochs = 80;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t crop_width = 256;      // azimuth crop during training; 0 = full
  double alpha = 1.0;                // Gumbel-Sigmoid temperature, fixed
  std::size_t checkpoint_every = 10; // epochs
  rangeview::DepthScale depth_scale = rangeview::DepthScale::linear;

  void validate() const {
    if (!(learning_rate > 0)) throw InputError("train: learning_rate must be > 0");
    if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
    if (epochs < 1) throw InputError("train: epochs must be >= 1");
    if (!(alpha > 0)) throw InputError("train: alpha must be > 0");
  }
};

// Stepwise schedule: lr * decay^(floor(epoch / decay_epochs)), epoch 0-based.
inline double lr_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.learning_rate *
         std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_epochs));
}

// A preprocessed training sample: normalized (2,H,W) image plus class map.
template <typename T>
struct Sample {
  Tensor<T> image;  // depth, reflectance in [-1,1]; invalid = -1
  IntImage labels;  // all-zero when the domain is unlabeled
};

template <typename T>
Sample<T> preprocess(const rangeview::PointCloud& cloud,
                     const rangeview::SensorConfig& sensor,
                     rangeview::DepthScale scale) {
  using rangeview::Channel;
  auto [img, rep] = rangeview::project(cloud, sensor);
  (void)rep;
  rangeview::RangeImage norm = rangeview::normalize(img, sensor, scale).image;
  Sample<T> s;
  s.image = Tensor<T>({2, sensor.height, sensor.width});
  s.labels = IntImage(sensor.height, sensor.width);
  for (std::size_t r = 0; r < sensor.height; ++r)
    for (std::size_t c = 0; c < sensor.width; ++c) {
      s.image.at(0, r, c) = static_cast<T>(norm.at(Channel::depth, r, c));
      s.image.at(1, r, c) = static_cast<T>(norm.at(Channel::reflectance, r, c));
      if (norm.has(Channel::semantic) && norm.valid(r, c))
        s.labels.at(r, c) = static_cast<std::int32_t>(norm.at(Channel::semantic, r, c));
    }
  return s;
}

template <typename T>
Sample<T> crop_azimuth(const Sample<T>& s, std::size_t offset, std::size_t crop_w) {
  const std::size_t h = s.image.dim(1), w = s.image.dim(2);
  if (crop_w == 0 || crop_w >= w) return s;
  Sample<T> out;
  out.image = Tensor<T>({2, h, crop_w});
  out.labels = IntImage(h, crop_w);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t j = 0; j < crop_w; ++j)
        out.image.at(c, r, j) = s.image.at(c, r, (offset + j) % w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t j = 0; j < crop_w; ++j)
      out.labels.at(r, j) = s.labels.at(r, (offset + j) % w);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

template <typename T>
class Trainer {
 public:
  Trainer(nets::Model<T>& model, TrainConfig tcfg, losses::LossConfig lcfg)
      : model_(model), tcfg_(tcfg), lcfg_(lcfg) {
    tcfg_.validate();
    lcfg_.validate();
    noise_rng_ = Rng(derive_seed(tcfg_.seed, 1));
    data_x_rng_ = Rng(derive_seed(tcfg_.seed, 2));
    data_y_rng_ = Rng(derive_seed(tcfg_.seed, 3));
    loc_rng_ = Rng(derive_seed(tcfg_.seed, 4));
  }

  std::uint64_t step() const { return step_; }
  std::uint64_t epoch() const { return epoch_; }
  const std::vector<nets::LossRecord>& history() const { return history_; }

  // One optimization step on unpaired batches: D on (real, detached fake),
  // then G_enc + E + G_dec + heads on the total objective.
  nets::LossRecord train_step(const std::vector<const Sample<T>*>& batch_x,
                              const std::vector<const Sample<T>*>& batch_y,
                              double lr) {
    if (batch_x.empty() || batch_y.empty())
      throw InputError("train_step: empty batch");
    const auto& gen = *model_.generator;
    const auto& disc = *model_.discriminator;
    const auto& heads = *model_.heads;

    // Per-item Gumbel noise and contrastive locations are drawn once per
    // step so the discriminator and generator passes see the same fake.
    std::vector<Tensor<T>> noise_x, noise_y;
    for (const Sample<T>* s : batch_x) noise_x.push_back(draw_noise(*s));
    for (const Sample<T>* s : batch_y) noise_y.push_back(draw_noise(*s));

    nets::LossRecord rec;
    rec.step = step_ + 1;

    // Generator-side forward first: translation of batch_x (taps collected
    // for PatchNCE) and the identity pass on batch_y. The same fakes are
    // then fed detached to the discriminator update, and the generator
    // objective is scored against the freshly updated discriminator.
    model_.gen_params.zero_grads();
    ad::Graph<T> g;
    const T wx = T(1) / static_cast<T>(batch_x.size());
    const T wy = T(1) / static_cast<T>(batch_y.size());
    std::vector<typename nets::Generator<T>::GenOut> out_x, out_y;
    std::vector<nets::FeatureStack> stack_x(batch_x.size()), stack_y(batch_y.size());
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
      int x = g.input(batch_x[i]->image, false);
      out_x.push_back(gen.generate_with_noise(g, x, &batch_x[i]->labels,
                                              nets::RsMode::straight_through,
                                              static_cast<T>(tcfg_.alpha), noise_x[i],
                                              /*train=*/true, &stack_x[i]));
    }
    for (std::size_t j = 0; j < batch_y.size(); ++j) {
      int y = g.input(batch_y[j]->image, false);
      out_y.push_back(gen.generate_with_noise(g, y, nullptr,
                                              nets::RsMode::straight_through,
                                              static_cast<T>(tcfg_.alpha), noise_y[j],
                                              /*train=*/true, &stack_y[j]));
    }

    {  // discriminator update on (real y, detached fakes)
      model_.disc_params.zero_grads();
      ad::Graph<T> gd;
      std::vector<std::pair<int, T>> terms;
      for (std::size_t i = 0; i < batch_x.size(); ++i) {
        int fake_scores = disc(gd, gd.input(g.value(out_x[i].yhat), false), true);
        terms.push_back({d_fake_term(gd, fake_scores), wx});
      }
      for (std::size_t j = 0; j < batch_y.size(); ++j) {
        int real_scores = disc(gd, gd.input(batch_y[j]->image, false), true);
        terms.push_back({d_real_term(gd, real_scores), wy});
      }
      int loss = gd.weighted_sum(terms);
      rec.gan_d = static_cast<double>(gd.value_scalar(loss));
      check_finite(rec.gan_d, "gan_d");
      gd.backward(loss);
      model_.disc_params.adam_step(static_cast<T>(lr), static_cast<T>(tcfg_.adam_beta1),
                                   static_cast<T>(tcfg_.adam_beta2),
                                   static_cast<T>(tcfg_.adam_eps));
    }

    // Generator objective: adversarial term against the updated D plus
    // PatchNCE on the translation and identity pairs.
    std::vector<std::pair<int, T>> gan_terms, nce_x_terms, nce_y_terms;
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
      int fake_scores = disc(g, out_x[i].yhat, false);
      gan_terms.push_back(
          {losses::gan_loss_node(g, -1, fake_scores, losses::GanRole::generator,
                                 lcfg_.gan_mode),
           wx});
      nets::FeatureStack stack_fake;
      gen.encode(g, out_x[i].yhat, true, &stack_fake);
      auto locs = losses::sample_locations(stack_x[i].shapes, lcfg_.patches_per_layer,
                                           loc_rng_);
      nce_x_terms.push_back(
          {losses::patch_nce_node(g, heads, stack_x[i], stack_fake, locs,
                                  static_cast<T>(lcfg_.tau), true),
           wx});
    }
    for (std::size_t j = 0; j < batch_y.size(); ++j) {
      nets::FeatureStack stack_idt;
      gen.encode(g, out_y[j].yhat, true, &stack_idt);
      auto locs = losses::sample_locations(stack_y[j].shapes, lcfg_.patches_per_layer,
                                           loc_rng_);
      nce_y_terms.push_back(
          {losses::patch_nce_node(g, heads, stack_y[j], stack_idt, locs,
                                  static_cast<T>(lcfg_.tau), true),
           wy});
    }
    int gan_g = g.weighted_sum(gan_terms);
    int nce_x = g.weighted_sum(nce_x_terms);
    int nce_y = g.weighted_sum(nce_y_terms);
    int total = g.weighted_sum({{gan_g, T(1)},
                                {nce_x, static_cast<T>(lcfg_.lambda_nce)},
                                {nce_y, static_cast<T>(lcfg_.lambda_idt)}});
    rec.gan_g = static_cast<double>(g.value_scalar(gan_g));
    rec.nce_x = static_cast<double>(g.value_scalar(nce_x));
    rec.nce_y = static_cast<double>(g.value_scalar(nce_y));
    rec.total = static_cast<double>(g.value_scalar(total));
    check_finite(rec.gan_g, "gan_g");
    check_finite(rec.nce_x, "patchnce_x");
    check_finite(rec.nce_y, "patchnce_y");
    g.backward(total);
    model_.gen_params.adam_step(static_cast<T>(lr), static_cast<T>(tcfg_.adam_beta1),
                                static_cast<T>(tcfg_.adam_beta2),
                                static_cast<T>(tcfg_.adam_eps));

    ++step_;
    history_.push_back(rec);
    return rec;
  }

  // Epoch loop over preprocessed samples. `log` (optional) receives
  // line-delimited "step=N term=name value=V" records.
  void fit(const std::vector<Sample<T>>& data_x, const std::vector<Sample<T>>& data_y,
           const std::string& checkpoint_dir, std::ostream* log = nullptr) {
    if (data_x.empty() || data_y.empty())
      throw InputError("fit: empty dataset");
    if (data_x[0].image.dim(1) != data_y[0].image.dim(1))
      throw InputError("fit: domains have incompatible sensor height");
    if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

    const std::size_t steps_per_epoch =
        (data_x.size() + tcfg_.batch_size - 1) / tcfg_.batch_size;
    for (; epoch_ < tcfg_.epochs; ) {
      double lr = lr_for_epoch(tcfg_, epoch_);
      std::vector<std::size_t> order_x(data_x.size()), order_y(data_y.size());
      for (std::size_t i = 0; i < order_x.size(); ++i) order_x[i] = i;
      for (std::size_t i = 0; i < order_y.size(); ++i) order_y[i] = i;
      data_x_rng_.shuffle(order_x);
      data_y_rng_.shuffle(order_y);

      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        std::vector<Sample<T>> cx, cy;
        for (std::size_t k = 0; k < tcfg_.batch_size; ++k) {
          const Sample<T>& sx = data_x[order_x[(s * tcfg_.batch_size + k) % data_x.size()]];
          const Sample<T>& sy = data_y[order_y[(s * tcfg_.batch_size + k) % data_y.size()]];
          cx.push_back(crop_sample(sx));
          cy.push_back(crop_sample(sy));
        }
        std::vector<const Sample<T>*> bx, by;
        for (const auto& s2 : cx) bx.push_back(&s2);
        for (const auto& s2 : cy) by.push_back(&s2);
        nets::LossRecord rec = train_step(bx, by, lr);
        if (log) {
          *log << "step=" << rec.step << " term=gan_d value=" << rec.gan_d << "\n"
               << "step=" << rec.step << " term=gan_g value=" << rec.gan_g << "\n"
               << "step=" << rec.step << " term=patchnce_x value=" << rec.nce_x << "\n"
               << "step=" << rec.step << " term=patchnce_y value=" << rec.nce_y << "\n"
               << "step=" << rec.step << " term=total value=" << rec.total << "\n";
        }
      }
      ++epoch_;
      if (!checkpoint_dir.empty() &&
          (epoch_ % tcfg_.checkpoint_every == 0 || epoch_ == tcfg_.epochs)) {
        char name[32];
        std::snprintf(name, sizeof(name), "ckpt_epoch%04zu.clgc",
                      static_cast<std::size_t>(epoch_));
        save((fs::path(checkpoint_dir) / name).string());
      }
    }
    if (!checkpoint_dir.empty())
      save((fs::path(checkpoint_dir) / "ckpt_final.clgc").string());
  }

  void save(const std::string& path) const {
    nets::CheckpointExtras<T> ex;
    ex.step = step_;
    ex.epoch = epoch_;
    ex.rng_states["noise"] = noise_rng_.serialize();
    ex.rng_states["data_x"] = data_x_rng_.serialize();
    ex.rng_states["data_y"] = data_y_rng_.serialize();
    ex.rng_states["loc"] = loc_rng_.serialize();
    ex.history = history_;
    nets::save_checkpoint(model_, ex, path);
  }

  void restore(const nets::CheckpointExtras<T>& ex) {
    step_ = ex.step;
    epoch_ = ex.epoch;
    history_ = ex.history;
    noise_rng_.deserialize(ex.rng_states.at("noise"));
    data_x_rng_.deserialize(ex.rng_states.at("data_x"));
    data_y_rng_.deserialize(ex.rng_states.at("data_y"));
    loc_rng_.deserialize(ex.rng_states.at("loc"));
  }

 private:
  Tensor<T> draw_noise(const Sample<T>& s) {
    const std::size_t h = s.image.dim(1);
    const std::size_t w = s.image.dim(2);
    Tensor<T> n({1, h, w});
    for (std::size_t i = 0; i < n.size(); ++i) {
      double g1 = raydrop::gumbel_from_uniform(noise_rng_.uniform());
      double g2 = raydrop::gumbel_from_uniform(noise_rng_.uniform());
      n[i] = static_cast<T>(g1 - g2);
    }
    return n;
  }

  Sample<T> crop_sample(const Sample<T>& s) {
    const std::size_t w = s.image.dim(2);
    if (tcfg_.crop_width == 0 || tcfg_.crop_width >= w) return s;
    std::size_t offset = static_cast<std::size_t>(data_x_rng_.integer(w));
    return crop_azimuth(s, offset, tcfg_.crop_width);
  }

  // Discriminator per-side terms under the configured GAN mode.
  int d_real_term(ad::Graph<T>& g, int real_scores) {
    if (lcfg_.gan_mode == losses::GanMode::least_squares)
      return g.mse_to(real_scores, T(1));
    return g.mean_all(g.softplus(g.scale(real_scores, T(-1))));
  }

  int d_fake_term(ad::Graph<T>& g, int fake_scores) {
    if (lcfg_.gan_mode == losses::GanMode::least_squares)
      return g.mse_to(fake_scores, T(0));
    return g.mean_all(g.softplus(fake_scores));
  }

  void check_finite(double v, const char* term) const {
    if (!std::isfinite(v))
      throw Error(std::string("train: non-finite loss term '") + term + "' at step " +
                  std::to_string(step_ + 1));
  }

  nets::Model<T>& model_;
  TrainConfig tcfg_;
  losses::LossConfig lcfg_;
  Rng noise_rng_, data_x_rng_, data_y_rng_, loc_rng_;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<nets::LossRecord> history_;
};

// ---------------------------------------------------------------------------
// Translate: batch inference over scans
// ---------------------------------------------------------------------------

struct TranslateOptions {
  std::uint64_t seed = 7;
  bool identity_stub = false;  // bypass the network: probe for the pipeline
  rangeview::DepthScale depth_scale = rangeview::DepthScale::linear;
};

struct TranslateResult {
  std::size_t count = 0;
  std::string manifest_path;
};

// project -> normalize -> generate(eval, Bernoulli raydrop) -> denormalize ->
// reconstruct(pixel centers); writes <stem>.rimg + <stem>.bin per scan plus a
// pairing manifest for the faithfulness metrics.
template <typename T>
TranslateResult translate(nets::Model<T>& model,
                          const std::vector<dataio::ScanEntry>& entries,
                          const dataio::ClassTable& classes,
                          const std::string& out_dir, const TranslateOptions& opts) {
  using rangeview::Channel;
  const rangeview::SensorConfig& sensor = model.sensor;
  fs::create_directories(out_dir);
  std::vector<dataio::ManifestPair> pairs;

  for (std::size_t idx = 0; idx < entries.size(); ++idx) {
    const auto& entry = entries[idx];
    dataio::LoadedScan scan = dataio::load_entry(entry, classes);
    Sample<T> sample = preprocess<T>(scan.cloud, sensor, opts.depth_scale);

    rangeview::RangeImage out_img(sensor.height, sensor.width,
                                  {Channel::depth, Channel::reflectance});
    if (opts.identity_stub) {
      auto [proj, prep] = rangeview::project(scan.cloud, sensor);
      (void)prep;
      auto norm = rangeview::normalize(proj, sensor, opts.depth_scale).image;
      for (std::size_t r = 0; r < sensor.height; ++r)
        for (std::size_t c = 0; c < sensor.width; ++c) {
          if (!proj.valid(r, c)) continue;
          out_img.set_valid(r, c, true);
          out_img.at(Channel::depth, r, c) = norm.at(Channel::depth, r, c);
          out_img.at(Channel::reflectance, r, c) = norm.at(Channel::reflectance, r, c);
        }
    } else {
      ad::Graph<T> g;
      int x = g.input(sample.image, false);
      Rng noise(derive_seed(opts.seed, idx));
      auto out = model.generator->generate(g, x, &sample.labels, nets::RsMode::bernoulli,
                                           T(1), &noise, false);
      const Tensor<T>& yv = g.value(out.complete);
      for (std::size_t r = 0; r < sensor.height; ++r)
        for (std::size_t c = 0; c < sensor.width; ++c) {
          if (!out.hard_mask.at(r, c)) continue;
          out_img.set_valid(r, c, true);
          out_img.at(Channel::depth, r, c) = static_cast<double>(yv.at(0, r, c));
          out_img.at(Channel::reflectance, r, c) = static_cast<double>(yv.at(1, r, c));
        }
    }
    rangeview::RangeImage denorm = rangeview::denormalize(out_img, sensor, opts.depth_scale);
    rangeview::PointCloud out_cloud =
        rangeview::reconstruct(denorm, sensor, rangeview::AngleSource::pixel_center);

    std::string stem = fs::path(entry.scan_path).stem().string();
    std::string rimg_path = (fs::path(out_dir) / (stem + ".rimg")).string();
    std::string bin_path = (fs::path(out_dir) / (stem + ".bin")).string();
    rangeview::write_rimg(denorm, rimg_path);
    dataio::write_scan(out_cloud, bin_path);
    pairs.push_back({entry.scan_path, rimg_path, dataio::file_checksum(rimg_path)});
  }

  TranslateResult res;
  res.count = pairs.size();
  res.manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  dataio::write_manifest(pairs, res.manifest_path);
  return res;
}

}  // namespace coligen::trainer
