#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/geometry/raster.hpp"
#include "bevscan/scene/render.hpp"

namespace bevscan {

enum class Split : std::uint64_t { Train = 0, Val = 1, Test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "' (train, val, test)");
}

/// Scene seed of sample `index`. The split occupies the top byte, so seed
/// ranges of different splits never intersect.
inline std::uint64_t sample_seed(Split split, std::uint64_t base_seed, std::size_t index) {
  return (static_cast<std::uint64_t>(split) << 56) | ((base_seed & 0xffffffULL) << 32) |
         static_cast<std::uint64_t>(index);
}

struct DatasetSpec {
  Split split = Split::Train;
  std::size_t size = 1;
  std::uint64_t seed = 0;
  SceneDistribution scenes{};
  RenderOptions render{};
  BevGrid grid{};
};

/// A generated sample in network-ready form (batch dimension of 1).
template <typename T>
struct Example {
  SceneSpec scene;
  Tensor<T> images;  // (1, K, 3, H, W)
  Tensor<T> points;  // (1, 2, nz, nx) raw raster; undefined for camera-only
  RenderedSample sample;
};

/// Deterministic, random-access synthetic dataset. Samples are rendered on
/// demand; the same index always yields bit-identical data.
class Dataset {
 public:
  explicit Dataset(DatasetSpec spec) : spec_(std::move(spec)) {
    if (spec_.size == 0) throw std::invalid_argument("dataset size must be positive");
    spec_.grid.validate();
  }

  std::size_t size() const { return spec_.size; }
  const DatasetSpec& spec() const { return spec_; }
  std::uint64_t seed_of(std::size_t index) const { return sample_seed(spec_.split, spec_.seed, index); }

  SceneSpec scene(std::size_t index) const { return generate_scene(seed_of(index), spec_.scenes); }

  template <typename T>
  Example<T> get(std::size_t index) const {
    if (index >= spec_.size) throw std::out_of_range("dataset index " + std::to_string(index));
    Example<T> ex;
    ex.scene = scene(index);
    ex.sample = render(ex.scene, spec_.grid, spec_.render);
    const auto& s = ex.sample;
    std::vector<T> img(s.images.begin(), s.images.end());
    ex.images = Tensor<T>(Shape{1, s.views, 3, s.height, s.width}, std::move(img));
    if (spec_.render.modality != Modality::Camera) {
      auto raster = rasterize_points<T>(s.points, spec_.grid).channels;
      ex.points = reshape(raster, Shape{1, kRasterChannels, spec_.grid.nz, spec_.grid.nx});
    }
    return ex;
  }

 private:
  DatasetSpec spec_;
};

/// Binary PPM (P6) of one view, 8 bits per channel.
inline void write_ppm(const std::string& path, const RenderedSample& s, std::size_t view) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P6\n" << s.width << ' ' << s.height << "\n255\n";
  const std::size_t plane = s.height * s.width;
  const float* img = s.images.data() + view * 3 * plane;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(img[c * plane + p], 0.f, 1.f);
      os.put(static_cast<char>(static_cast<unsigned char>(v * 255.f + 0.5f)));
    }
}

/// Binary PGM (P5) of a [0, 1] raster in (rows, cols) order.
inline void write_pgm(const std::string& path, const std::vector<float>& v, std::size_t rows, std::size_t cols) {
  if (v.size() < rows * cols) throw std::invalid_argument("write_pgm: raster smaller than " + std::to_string(rows) + "x" + std::to_string(cols));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t p = 0; p < rows * cols; ++p) {
    const float x = std::clamp(v[p], 0.f, 1.f);
    os.put(static_cast<char>(static_cast<unsigned char>(x * 255.f + 0.5f)));
  }
}

/// Reads a P5 PGM written by write_pgm back into [0, 1].
inline std::vector<float> read_pgm(const std::string& path, std::size_t& rows, std::size_t& cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int maxval = 0;
  is >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error(path + ": not an 8-bit P5 PGM");
  is.get();
  std::vector<float> v(rows * cols);
  for (auto& x : v) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error(path + ": truncated PGM");
    x = static_cast<float>(c) / 255.f;
  }
  return v;
}

}  // namespace bevscan
