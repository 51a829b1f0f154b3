#pragma once

#include <string>
#include <vector>

#include "bevscan/core/module.hpp"

namespace bevscan {

template <typename T>
struct ConvRelu {
  Conv2d<T> conv;

  ConvRelu() = default;
  ConvRelu(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng)
      : conv(in, out, k, stride, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return relu(conv(x)); }
  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix, out); }
};

/// Effective squeeze-excitation with residual:
///   w_c = hsigmoid(FC(avgpool(x))),  out = f_in + w_c * x  (per channel).
template <typename T>
Tensor<T> ese(const Tensor<T>& f_in, const Tensor<T>& x, const Linear<T>& fc) {
  if (f_in.shape() != x.shape()) {
    throw ShapeError("ese: shape mismatch " + shape_str(f_in.shape()) + " vs " + shape_str(x.shape()));
  }
  auto w = hsigmoid(fc(global_avg_pool(x)));
  return add(f_in, scale_channels(x, w));
}

struct OsaStageConfig {
  std::size_t in_channels;
  std::size_t layer_width;
  std::size_t layers;
  std::size_t out_channels;
  std::size_t blocks;
  bool downsample;  // 2x2 max-pool at stage entry
};

/// One-shot aggregation: a chain of 3x3 convs whose outputs, together with
/// the block input, are concatenated once at the end, projected by a 1x1
/// conv back to the input width, and merged through eSE.
template <typename T>
struct OsaBlock {
  std::vector<ConvRelu<T>> layers;
  ConvRelu<T> project;
  Linear<T> ese_fc;

  OsaBlock() = default;
  OsaBlock(std::size_t channels, std::size_t width, std::size_t n_layers, Rng& rng) {
    std::size_t in = channels;
    for (std::size_t l = 0; l < n_layers; ++l) {
      layers.emplace_back(in, width, 3, 1, rng);
      in = width;
    }
    project = ConvRelu<T>(aggregate_width(channels, width, n_layers), channels, 1, 1, rng);
    ese_fc = Linear<T>(channels, channels, rng);
  }

  static std::size_t aggregate_width(std::size_t channels, std::size_t width, std::size_t n_layers) {
    return channels + width * n_layers;
  }

  Tensor<T> operator()(const Tensor<T>& f_in) const {
    std::vector<Tensor<T>> outs{f_in};
    Tensor<T> cur = f_in;
    for (const auto& l : layers) {
      cur = l(cur);
      outs.push_back(cur);
    }
    auto x = project(concat(outs, 1));
    return ese(f_in, x, ese_fc);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".conv" + std::to_string(l), out);
    project.collect(prefix + ".project", out);
    ese_fc.collect(prefix + ".ese", out);
  }
};

template <typename T>
struct OsaStage {
  OsaStageConfig cfg{};
  ConvRelu<T> entry;  // 1x1 in -> out
  std::vector<OsaBlock<T>> blocks;

  OsaStage() = default;
  OsaStage(const OsaStageConfig& c, Rng& rng) : cfg(c), entry(c.in_channels, c.out_channels, 1, 1, rng) {
    for (std::size_t b = 0; b < c.blocks; ++b) blocks.emplace_back(c.out_channels, c.layer_width, c.layers, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = entry(cfg.downsample ? max_pool2x2(x) : x);
    for (const auto& b : blocks) y = b(y);
    return y;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    entry.collect(prefix + ".entry", out);
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".block" + std::to_string(b), out);
  }
};

struct EncoderConfig {
  std::size_t stem_width = 32;
  std::vector<OsaStageConfig> stages;
  std::size_t lift_channels = 4;  // d, per-pixel features handed to the lift

  /// Scaled-down stage widths used for CPU training.
  static EncoderConfig desk() {
    EncoderConfig c;
    c.stem_width = 32;
    c.stages = {{32, 16, 3, 64, 1, false}, {64, 24, 3, 96, 1, true}, {96, 32, 3, 128, 1, true}};
    return c;
  }

  /// Reference widths {256, 512, 768} with {1, 3, 9} OSA blocks.
  static EncoderConfig full() {
    EncoderConfig c;
    c.stem_width = 256;
    c.stages = {{256, 128, 5, 512, 1, false}, {512, 160, 5, 768, 3, true}, {768, 192, 5, 1024, 9, true}};
    c.lift_channels = 128;
    return c;
  }
};

/// Stem (3x3 convs, strides 2, 1, 2: quarter resolution) followed by OSA
/// stages, and a top-down neck that merges every stage back to the stem
/// resolution with `lift_channels` outputs.
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  ConvRelu<T> stem1, stem2, stem3;
  std::vector<OsaStage<T>> stages;
  std::vector<Conv2d<T>> laterals;

  struct Output {
    Tensor<T> lift_features;          // (N, d, H/4, W/4)
    std::vector<Tensor<T>> stage_out;  // per stage
  };

  Encoder() = default;
  Encoder(const EncoderConfig& c, Rng& rng)
      : cfg(c), stem1(3, c.stem_width / 2, 3, 2, rng), stem2(c.stem_width / 2, c.stem_width / 2, 3, 1, rng),
        stem3(c.stem_width / 2, c.stem_width, 3, 2, rng) {
    for (const auto& s : c.stages) {
      stages.emplace_back(s, rng);
      laterals.emplace_back(s.out_channels, c.lift_channels, 1, 1, rng);
    }
  }

  Tensor<T> stem(const Tensor<T>& images) const { return stem3(stem2(stem1(images))); }

  Output operator()(const Tensor<T>& images) const {
    Output out;
    Tensor<T> x = stem(images);
    for (const auto& s : stages) {
      x = s(x);
      out.stage_out.push_back(x);
    }
    Tensor<T> top = laterals.back()(out.stage_out.back());
    for (std::size_t i = stages.size() - 1; i-- > 0;) {
      auto lat = laterals[i](out.stage_out[i]);
      top = stages[i + 1].cfg.downsample ? add(upsample_bilinear2x(top), lat) : add(top, lat);
    }
    out.lift_features = top;
    return out;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    stem1.collect(prefix + ".stem1", out);
    stem2.collect(prefix + ".stem2", out);
    stem3.collect(prefix + ".stem3", out);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect(prefix + ".stage" + std::to_string(i), out);
      laterals[i].collect(prefix + ".lateral" + std::to_string(i), out);
    }
  }
};

}  // namespace bevscan
