#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ddtr/set_loss.hpp"
#include "ddtr/tensor.hpp"

namespace ddtr {

/// Smallest image extent the backbone accepts (one stride-64 cell).
inline constexpr std::size_t kMinImageExtent = 64;
inline constexpr unsigned kMaxObjectsPerImage = 5;

struct DatasetSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  double empty_fraction = 0.4;
  /// Mean object count of non-empty images; drawn as 1 + Poisson(mean − 1).
  double objects_mean = 1.15;
  /// Normalized object area (w·h) mean and SD.
  double size_mean = 0.01;
  double size_sd = 0.003;
  /// Peak amplitude of class-1 objects above the background.
  double contrast = 0.5;
  /// SD of the smoothed background texture.
  double noise = 0.05;
  int classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AnnotatedImage {
  std::string name;
  /// Grayscale values in [0, 1], multiples of 1/255.
  RowMatrix pixels;
  std::vector<GroundTruth> objects;

  bool operator==(const AnnotatedImage& other) const;
};

/// Images are independent given (spec.seed, index); image i of a larger
/// dataset equals image i of a smaller one.
std::vector<AnnotatedImage> generate(const DatasetSpec& spec, std::size_t count);
AnnotatedImage generate_one(const DatasetSpec& spec, std::size_t index);

/// Bilinear (half-pixel-centered) resampling to round(extent·scale) pixels.
/// Boxes are normalized and pass through unchanged.
RowMatrix resize_pixels(const RowMatrix& pixels, double scale);
AnnotatedImage resize(const AnnotatedImage& image, double scale);

inline double quantize_pixel(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<double>(static_cast<int>(c * 255.0 + 0.5)) / 255.0;
}

}  // namespace ddtr
