#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "bevscan/ebc/ebc_block.hpp"
#include "bevscan/geometry/camera.hpp"
#include "bevscan/geometry/lift.hpp"
#include "bevscan/geometry/raster.hpp"
#include "bevscan/net/cioe.hpp"
#include "bevscan/net/decoder.hpp"
#include "bevscan/net/heads.hpp"

namespace bevscan {

inline constexpr std::size_t kFeatureStride = 4;

struct ModelConfig {
  BevGrid grid{};
  std::size_t image_h = 64, image_w = 112;
  EncoderConfig encoder = EncoderConfig::desk();
  std::size_t point_channels = 0;  // 0 = camera only, else kRasterChannels
  std::size_t bev_channels = 32;   // D
  EbcConfig ebc{};                 // channels forced to bev_channels; no branches = EBC off
  TrunkConfig trunk{};             // channels forced to bev_channels
  std::size_t head_width = 32;
  bool cioe_pv = true;
  bool cioe_bev = true;
  std::size_t pos_dim = 8;
  std::size_t key_dim = 16;

  /// Desk-scale defaults: D = 32, d = 4, n = 8.
  static ModelConfig desk() {
    ModelConfig c;
    c.ebc.inner = 32;
    c.ebc.state = 8;
    return c;
  }
};

template <typename T>
struct ModelOutputs {
  HeadOutputs<T> heads;
  Tensor<T> center_mask;  // (B, 1, Z, X), undefined when the BEV enhancement is off
};

/// Maps a raw point raster (count, mean height) to network inputs:
/// counts are log1p-compressed, heights pass through.
template <typename T>
Tensor<T> point_features(const Tensor<T>& raster) {
  Tensor<T> out = raster.clone();
  if (out.rank() < 3 || out.dim(out.rank() - 3) != kRasterChannels) {
    throw ShapeError("point_features: expected (..., 2, Z, X), got " + shape_str(raster.shape()));
  }
  const std::size_t plane = out.dim(out.rank() - 1) * out.dim(out.rank() - 2);
  const std::size_t groups = out.numel() / (kRasterChannels * plane);
  auto d = out.mutable_data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t s = 0; s < plane; ++s) {
      auto& c = d[g * kRasterChannels * plane + s];
      c = static_cast<T>(std::log1p(static_cast<double>(c)));
    }
  return out;
}

/// Multi-view camera (plus optional point raster) to BEV vehicle
/// segmentation, centerness, and offset.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, const CameraRig& image_rig, Rng& rng) : cfg_(cfg) {
    cfg_.ebc.channels = cfg_.bev_channels;
    cfg_.trunk.channels = cfg_.bev_channels;
    cfg_.grid.validate();
    if (cfg_.image_h % kFeatureStride || cfg_.image_w % kFeatureStride) {
      throw std::invalid_argument("image size must be a multiple of the feature stride");
    }
    if (cfg_.point_channels != 0 && cfg_.point_channels != kRasterChannels) {
      throw std::invalid_argument("point_channels must be 0 or " + std::to_string(kRasterChannels));
    }
    CameraRig feat_rig;
    for (const auto& cam : image_rig.cameras) feat_rig.cameras.push_back(cam.downscaled(double(kFeatureStride)));
    feat_rig.feat_h = cfg_.image_h / kFeatureStride;
    feat_rig.feat_w = cfg_.image_w / kFeatureStride;
    feat_rig.validate();
    views_ = feat_rig.cameras.size();
    plan_ = std::make_shared<const LiftPlan>(build_lift_plan(feat_rig, cfg_.grid));

    encoder_ = Encoder<T>(cfg_.encoder, rng);
    fusion_ = Fusion<T>(cfg_.encoder.lift_channels * cfg_.grid.ny, cfg_.point_channels, cfg_.bev_channels, rng);
    ebc_ = EbcBlock<T>(cfg_.ebc, cfg_.grid, rng);
    trunk_ = BevTrunk<T>(cfg_.trunk, rng);
    heads_ = Heads<T>(cfg_.bev_channels, cfg_.head_width, rng);
    if (cfg_.cioe_bev) mask_ = CenterMask<T>(rng);
    if (cfg_.cioe_pv) {
      AttentionConfig a;
      a.queries = cfg_.grid.cells();
      a.pos_dim = cfg_.pos_dim;
      a.key_dim = cfg_.key_dim;
      a.token_dim = cfg_.encoder.stages.back().out_channels;
      a.value_dim = cfg_.bev_channels;
      attention_ = CenterQueryAttention<T>(a, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t views() const { return views_; }
  const LiftPlan& lift_plan() const { return *plan_; }

  /// images (B, K, 3, H, W) in [0, 1]; points (B, 2, Z, X) network-ready
  /// features, required iff point_channels > 0.
  ModelOutputs<T> operator()(const Tensor<T>& images, const Tensor<T>& points = {}) const {
    if (images.rank() != 5 || images.dim(1) != views_ || images.dim(2) != 3 || images.dim(3) != cfg_.image_h ||
        images.dim(4) != cfg_.image_w) {
      throw ShapeError("model: images must be (B, " + std::to_string(views_) + ", 3, " +
                       std::to_string(cfg_.image_h) + ", " + std::to_string(cfg_.image_w) + "), got " +
                       shape_str(images.shape()));
    }
    const std::size_t B = images.dim(0);
    auto flat = add_scalar(reshape(images, Shape{B * views_, 3, cfg_.image_h, cfg_.image_w}), T(-0.5));
    auto enc = encoder_(flat);
    const auto& lf = enc.lift_features;
    auto per_view = reshape(lf, Shape{B, views_, lf.dim(1), lf.dim(2), lf.dim(3)});
    auto f_b = collapse_y(lift(per_view, plan_, cfg_.grid));
    auto fused = fusion_(f_b, points);
    auto f_eb = ebc_(fused);
    auto u0 = trunk_(f_eb);

    ModelOutputs<T> out;
    auto c_feat = heads_.center_feature(u0);
    out.heads.centerness = heads_.centerness_from(c_feat);
    if (cfg_.cioe_pv) {
      auto tokens = CenterQueryAttention<T>::tokens_from_views(enc.stage_out.back(), B);
      u0 = add(u0, attention_(out.heads.centerness, tokens));
    }
    auto seg_in = u0;
    if (cfg_.cioe_bev) {
      out.center_mask = mask_(c_feat);
      seg_in = mul_spatial(u0, out.center_mask);
    }
    out.heads.seg_logits = heads_.seg(seg_in);
    out.heads.offset = heads_.offset(u0);
    return out;
  }

  /// Every learned tensor, under enc.*, fuse.*, ebc.*, dec.*, cioe.*, heads.*.
  ParamList<T> parameters() const {
    ParamList<T> p;
    encoder_.collect("enc", p);
    fusion_.collect("fuse", p);
    ebc_.collect("ebc", p);
    trunk_.collect("dec", p);
    if (cfg_.cioe_bev) mask_.collect("cioe.mask", p);
    if (cfg_.cioe_pv) attention_.collect("cioe.attn", p);
    heads_.collect("heads", p);
    return p;
  }

  EbcBlock<T>& ebc() { return ebc_; }
  Heads<T>& heads() { return heads_; }
  CenterMask<T>& center_mask() { return mask_; }

 private:
  ModelConfig cfg_;
  std::size_t views_ = 0;
  std::shared_ptr<const LiftPlan> plan_;
  Encoder<T> encoder_;
  Fusion<T> fusion_;
  EbcBlock<T> ebc_;
  BevTrunk<T> trunk_;
  Heads<T> heads_;
  CenterMask<T> mask_;
  CenterQueryAttention<T> attention_;
};

}  // namespace bevscan
