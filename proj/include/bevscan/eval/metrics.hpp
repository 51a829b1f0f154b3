#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bevscan/geometry/grid.hpp"
#include "bevscan/net/model.hpp"
#include "bevscan/scene/dataset.hpp"

namespace bevscan {

/// Annulus lo <= r < hi by cell-center distance from the ego; the outermost
/// band is closed at hi so it reaches the grid edge.
struct DistanceBand {
  double lo, hi;
  bool closed = false;

  bool contains(double r) const { return r >= lo && (r < hi || (closed && r <= hi)); }
};

inline const std::array<DistanceBand, 3>& standard_bands() {
  static const std::array<DistanceBand, 3> b{{{0.0, 20.0, false}, {20.0, 35.0, false}, {35.0, 50.0, true}}};
  return b;
}

/// Intersection and union pixel counts; IoU of empty-vs-empty is 1.
struct IouCounts {
  std::size_t intersection = 0, union_ = 0;

  double iou() const { return union_ == 0 ? 1.0 : double(intersection) / double(union_); }
  IouCounts& operator+=(const IouCounts& o) {
    intersection += o.intersection;
    union_ += o.union_;
    return *this;
  }
};

/// Counts over (nz, nx) rasters. Predictions are positive only when
/// strictly above `threshold`; targets when > 0.5.
template <typename P, typename Q>
IouCounts iou_counts(std::span<const P> pred_prob, std::span<const Q> target, const BevGrid& grid,
                     double threshold = 0.5, std::optional<DistanceBand> band = std::nullopt) {
  if (pred_prob.size() != grid.cells() || target.size() != grid.cells()) {
    throw ShapeError("compute_iou: rasters of " + std::to_string(pred_prob.size()) + " and " +
                     std::to_string(target.size()) + " cells on a " + std::to_string(grid.cells()) + "-cell grid");
  }
  IouCounts c;
  for (std::size_t j = 0; j < grid.nz; ++j)
    for (std::size_t i = 0; i < grid.nx; ++i) {
      if (band && !band->contains(std::hypot(grid.x_center(i), grid.z_center(j)))) continue;
      const std::size_t s = j * grid.nx + i;
      const bool p = double(pred_prob[s]) > threshold;
      const bool t = double(target[s]) > 0.5;
      c.intersection += p && t;
      c.union_ += p || t;
    }
  return c;
}

template <typename P, typename Q>
double compute_iou(std::span<const P> pred_prob, std::span<const Q> target, const BevGrid& grid,
                   double threshold = 0.5, std::optional<DistanceBand> band = std::nullopt) {
  return iou_counts(pred_prob, target, grid, threshold, band).iou();
}

/// Dataset-level IoU: counts are summed over scenes before dividing.
struct MetricsReport {
  std::size_t scenes = 0;
  IouCounts overall, overall_filtered;
  std::array<IouCounts, 3> bands{}, bands_filtered{};

  void add(std::span<const float> pred_prob, const Targets& t, const BevGrid& grid) {
    const auto filtered = visible_only(t);
    const std::span<const float> seg(t.seg), fseg(filtered.seg);
    overall += iou_counts(pred_prob, seg, grid);
    overall_filtered += iou_counts(pred_prob, fseg, grid);
    for (std::size_t b = 0; b < 3; ++b) {
      bands[b] += iou_counts(pred_prob, seg, grid, 0.5, standard_bands()[b]);
      bands_filtered[b] += iou_counts(pred_prob, fseg, grid, 0.5, standard_bands()[b]);
    }
    ++scenes;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "metric,filtered,iou,intersection,union\n";
    auto row = [&](const std::string& name, bool filt, const IouCounts& c) {
      os << name << ',' << (filt ? 1 : 0) << ',' << c.iou() << ',' << c.intersection << ',' << c.union_ << '\n';
    };
    static const char* names[3] = {"band_0_20", "band_20_35", "band_35_50"};
    row("overall", false, overall);
    for (std::size_t b = 0; b < 3; ++b) row(names[b], false, bands[b]);
    row("overall", true, overall_filtered);
    for (std::size_t b = 0; b < 3; ++b) row(names[b], true, bands_filtered[b]);
    os << "scenes,0," << scenes << ",0,0\n";
    return os.str();
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write metrics " + path);
    os << to_csv();
  }
};

/// Sigmoid of the segmentation logits for one sample, as a flat raster.
template <typename T>
std::vector<float> predict_probability(const Model<T>& model, const Example<T>& ex) {
  NoGradGuard guard;
  Tensor<T> points;
  if (ex.points.defined()) points = point_features(ex.points);
  const auto out = model(ex.images, points);
  const auto logits = out.heads.seg_logits.data();
  std::vector<float> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(sigmoid_scalar(logits[i]));
  return p;
}

template <typename T>
MetricsReport evaluate(const Model<T>& model, const Dataset& data) {
  MetricsReport r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ex = data.get<T>(i);
    r.add(predict_probability(model, ex), ex.sample.targets, data.spec().grid);
  }
  return r;
}

}  // namespace bevscan
