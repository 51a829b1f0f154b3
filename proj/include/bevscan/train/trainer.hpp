#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bevscan/core/checkpoint.hpp"
#include "bevscan/net/model.hpp"
#include "bevscan/scene/dataset.hpp"
#include "bevscan/train/losses.hpp"
#include "bevscan/train/optim.hpp"

namespace bevscan {

/// Examples stacked along the batch axis, with supervision tensors.
template <typename T>
struct Batch {
  Tensor<T> images;      // (B, K, 3, H, W)
  Tensor<T> points;      // (B, 2, Z, X) network-ready, or undefined
  Tensor<T> seg;         // (B, 1, Z, X)
  Tensor<T> centerness;  // (B, 1, Z, X)
  Tensor<T> offset;      // (B, 2, Z, X)
  Tensor<T> instance;    // (B, 1, Z, X), 1 inside instances
};

template <typename T>
Batch<T> collate(const std::vector<const Example<T>*>& examples) {
  if (examples.empty()) throw std::invalid_argument("collate: empty batch");
  std::vector<Tensor<T>> imgs, pts, seg, cen, off, inst;
  for (const auto* ex : examples) {
    const auto& tg = ex->sample.targets;
    imgs.push_back(ex->images);
    if (ex->points.defined()) pts.push_back(point_features(ex->points));
    auto add_plane = [&](std::vector<Tensor<T>>& dst, const std::vector<float>& v, std::size_t ch) {
      dst.push_back(reshape(tg.template tensor<T>(v, ch), Shape{1, ch, tg.nz, tg.nx}));
    };
    add_plane(seg, tg.seg, 1);
    add_plane(cen, tg.centerness, 1);
    add_plane(off, tg.offset, 2);
    std::vector<float> m(tg.cells());
    for (std::size_t s = 0; s < m.size(); ++s) m[s] = tg.instance_ids[s] >= 0 ? 1.f : 0.f;
    add_plane(inst, m, 1);
  }
  auto cat = [](const std::vector<Tensor<T>>& v) { return v.size() == 1 ? v[0] : concat(v, 0); };
  NoGradGuard guard;
  Batch<T> b{cat(imgs), {}, cat(seg), cat(cen), cat(off), cat(inst)};
  if (!pts.empty()) {
    if (pts.size() != imgs.size()) throw std::invalid_argument("collate: mixed modalities in one batch");
    b.points = cat(pts);
  }
  return b;
}

struct LossValues {
  double seg = 0, center = 0, offset = 0, total = 0;
};

struct TrainConfig {
  std::size_t steps = 100;
  double lr_max = 5e-4;
  double weight_decay = 1e-2;
  std::size_t accumulation = 1;  // micro-batches per optimizer step
  std::size_t batch = 1;         // samples per micro-batch
  bool learned_weights = true;
  std::string log_path;          // CSV, empty = no log
  std::string checkpoint_dir;    // empty = no checkpoints
  std::size_t checkpoint_every = 0;
};

/// Model, task weighting, and optimizer bound together. Gradients of k
/// micro-batches are accumulated with each loss scaled by 1/k before one
/// optimizer step.
template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), optim_(make_params(model, weights_, cfg_), {0.9, 0.999, 1e-8, cfg_.weight_decay}) {
    weights_.learned = cfg_.learned_weights;
    if (cfg_.accumulation == 0 || cfg_.batch == 0) throw std::invalid_argument("accumulation and batch must be >= 1");
    if (!cfg_.log_path.empty()) {
      log_.open(cfg_.log_path);
      if (!log_) throw std::runtime_error("cannot write training log " + cfg_.log_path);
      log_ << "step,lr,l_seg,l_cen,l_off,total\n";
    }
  }

  const TrainConfig& config() const { return cfg_; }
  UncertaintyWeights<T>& weights() { return weights_; }
  AdamW<T>& optimizer() { return optim_; }

  /// Forward pass and the three task losses plus their weighted total.
  struct Losses {
    Tensor<T> seg, center, offset, total;
  };

  Losses losses(const Batch<T>& b) const {
    auto out = model_(b.images, b.points);
    Losses l;
    l.seg = seg_loss(out.heads.seg_logits, b.seg);
    l.center = center_loss(out.heads.centerness, b.centerness);
    l.offset = offset_loss(out.heads.offset, b.offset, b.instance);
    l.total = total_loss(l.seg, l.center, l.offset, weights_);
    return l;
  }

  /// One optimizer step over `micro` (size = accumulation) micro-batches.
  LossValues step(const std::vector<Batch<T>>& micro, double lr) {
    if (micro.size() != cfg_.accumulation) {
      throw std::invalid_argument("step: expected " + std::to_string(cfg_.accumulation) + " micro-batches, got " +
                                  std::to_string(micro.size()));
    }
    optim_.zero_grad();
    const T inv_k = T(1) / static_cast<T>(micro.size());
    LossValues v;
    for (const auto& b : micro) {
      auto l = losses(b);
      v.seg += double(l.seg.item()) / double(micro.size());
      v.center += double(l.center.item()) / double(micro.size());
      v.offset += double(l.offset.item()) / double(micro.size());
      v.total += double(l.total.item()) / double(micro.size());
      backward(micro.size() == 1 ? l.total : scale(l.total, inv_k));
    }
    optim_.step(lr);
    return v;
  }

  /// Full schedule over `data`, visiting samples in index order cyclically.
  template <typename Callback>
  void fit(const Dataset& data, Callback&& on_step) {
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < cfg_.steps; ++s) {
      std::vector<Example<T>> owned;
      owned.reserve(cfg_.accumulation * cfg_.batch);
      std::vector<Batch<T>> micro;
      for (std::size_t k = 0; k < cfg_.accumulation; ++k) {
        std::vector<const Example<T>*> ptrs;
        for (std::size_t i = 0; i < cfg_.batch; ++i) {
          owned.push_back(data.get<T>(cursor));
          cursor = (cursor + 1) % data.size();
        }
        for (std::size_t i = 0; i < cfg_.batch; ++i) ptrs.push_back(&owned[k * cfg_.batch + i]);
        micro.push_back(collate(ptrs));
      }
      const double lr = one_cycle_lr(s, cfg_.steps, cfg_.lr_max);
      const auto v = step(micro, lr);
      if (log_) log_ << s << ',' << lr << ',' << v.seg << ',' << v.center << ',' << v.offset << ',' << v.total << '\n';
      on_step(s, lr, v);
      if (!cfg_.checkpoint_dir.empty() && cfg_.checkpoint_every && (s + 1) % cfg_.checkpoint_every == 0) {
        save(cfg_.checkpoint_dir + "/step_" + std::to_string(s + 1) + ".ckpt");
      }
    }
    if (log_) log_.flush();
  }

  void fit(const Dataset& data) {
    fit(data, [](std::size_t, double, const LossValues&) {});
  }

  ParamList<T> checkpoint_params() const { return make_params(model_, weights_, cfg_); }

  void save(const std::string& path) const {
    const auto dir = std::filesystem::path(path).parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    save_params(path, checkpoint_params());
  }

 private:
  static ParamList<T> make_params(const Model<T>& model, const UncertaintyWeights<T>& w, const TrainConfig& cfg) {
    auto p = model.parameters();
    if (cfg.learned_weights) w.collect("loss", p);
    return p;
  }

  Model<T>& model_;
  TrainConfig cfg_;
  UncertaintyWeights<T> weights_;
  AdamW<T> optim_;
  std::ofstream log_;
};

}  // namespace bevscan
