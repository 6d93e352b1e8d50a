#include "ddtr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "ddtr/random.hpp"

namespace ddtr {

namespace {

constexpr double kBackgroundLevel = 0.25;
constexpr double kMinAspect = 0.8;
constexpr double kMaxAspect = 1.25;
// Edge widths of the logistic radial profile, in units of the semi-axis.
constexpr double kSoftEdge = 0.25;
constexpr double kSharpEdge = 0.06;
constexpr double kDimAmplitude = 0.35;
// [1 4 6 4 1]/16 applied along both axes; scales unit white noise to this SD.
constexpr double kSmoothedSd = 0.2734;

RowMatrix smooth(const RowMatrix& in) {
  static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const Eigen::Index h = in.rows(), w = in.cols();
  auto clampi = [](Eigen::Index v, Eigen::Index n) { return v < 0 ? -v - 1 : (v >= n ? 2 * n - v - 1 : v); };
  RowMatrix tmp = RowMatrix::Zero(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j)
      for (int t = -2; t <= 2; ++t) tmp(i, j) += k[t + 2] * in(i, std::clamp(clampi(j + t, w), Eigen::Index{0}, w - 1));
  RowMatrix out = RowMatrix::Zero(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j)
      for (int t = -2; t <= 2; ++t) out(i, j) += k[t + 2] * tmp(std::clamp(clampi(i + t, h), Eigen::Index{0}, h - 1), j);
  return out;
}

void render_object(RowMatrix& img, const GroundTruth& obj, double contrast) {
  const double h = static_cast<double>(img.rows()), w = static_cast<double>(img.cols());
  const double cx = obj.box(0) * w, cy = obj.box(1) * h;
  const double rx = obj.box(2) * w / 2, ry = obj.box(3) * h / 2;
  const bool bright = obj.cls == 1;
  const double amplitude = contrast * (bright ? 1.0 : kDimAmplitude);
  const double edge = bright ? kSoftEdge : kSharpEdge;
  // profile normalized so the center reaches the full amplitude
  const double peak = 1.0 / (1.0 + std::exp(-1.0 / edge));
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    const double dy = (static_cast<double>(i) + 0.5 - cy) / ry;
    for (Eigen::Index j = 0; j < img.cols(); ++j) {
      const double dx = (static_cast<double>(j) + 0.5 - cx) / rx;
      const double rho = std::sqrt(dx * dx + dy * dy);
      if (rho > 3.0) continue;
      img(i, j) += amplitude * (1.0 / (1.0 + std::exp((rho - 1.0) / edge))) / peak;
    }
  }
}

}  // namespace

void DatasetSpec::validate() const {
  if (height < kMinImageExtent || width < kMinImageExtent) {
    throw std::invalid_argument("dataset: image extents must be at least " + std::to_string(kMinImageExtent));
  }
  if (!(empty_fraction >= 0.0 && empty_fraction <= 1.0)) throw std::invalid_argument("dataset: empty_fraction must lie in [0, 1]");
  if (!(objects_mean >= 1.0)) throw std::invalid_argument("dataset: objects_mean must be at least 1");
  if (!(size_mean > 0.0)) throw std::invalid_argument("dataset: size_mean must be positive");
  if (!(size_sd >= 0.0)) throw std::invalid_argument("dataset: size_sd must be non-negative");
  if (size_mean * kMaxAspect >= 1.0) throw std::invalid_argument("dataset: mean object does not fit inside the image");
  if (!(contrast > 0.0)) throw std::invalid_argument("dataset: contrast must be positive");
  if (!(noise >= 0.0)) throw std::invalid_argument("dataset: noise must be non-negative");
  if (classes != 1 && classes != 2) throw std::invalid_argument("dataset: classes must be 1 or 2");
}

bool AnnotatedImage::operator==(const AnnotatedImage& other) const {
  if (name != other.name || pixels.rows() != other.pixels.rows() || pixels.cols() != other.pixels.cols()) return false;
  if (pixels != other.pixels || objects.size() != other.objects.size()) return false;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].cls != other.objects[i].cls || objects[i].box != other.objects[i].box) return false;
  }
  return true;
}

AnnotatedImage generate_one(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, index));
  const auto h = static_cast<Eigen::Index>(spec.height), w = static_cast<Eigen::Index>(spec.width);

  AnnotatedImage image;
  char name[32];
  std::snprintf(name, sizeof name, "img_%06zu.pgm", index);
  image.name = name;

  RowMatrix noise(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) noise(i, j) = rng.normal();
  image.pixels = RowMatrix::Constant(h, w, kBackgroundLevel) + smooth(noise) * (spec.noise / kSmoothedSd);

  if (!rng.bernoulli(spec.empty_fraction)) {
    unsigned count = 1 + rng.poisson(spec.objects_mean - 1.0);
    if (count > kMaxObjectsPerImage) count = kMaxObjectsPerImage;
    for (unsigned n = 0; n < count; ++n) {
      double area = rng.normal(spec.size_mean, spec.size_sd);
      while (!(area > 0.0)) area = rng.normal(spec.size_mean, spec.size_sd);
      const double aspect = std::exp(rng.uniform(std::log(kMinAspect), std::log(kMaxAspect)));
      const double bw = std::sqrt(area * aspect), bh = std::sqrt(area / aspect);
      if (bw > 1.0 || bh > 1.0) {
        throw std::invalid_argument("dataset: sampled object " + std::to_string(bw) + "×" + std::to_string(bh) +
                                    " is larger than the image");
      }
      GroundTruth obj;
      obj.cls = spec.classes == 1 ? 1 : 1 + static_cast<int>(rng.index(2));
      obj.box = Boxd(rng.uniform(bw / 2, 1.0 - bw / 2), rng.uniform(bh / 2, 1.0 - bh / 2), bw, bh);
      render_object(image.pixels, obj, spec.contrast);
      image.objects.push_back(obj);
    }
  }
  image.pixels = image.pixels.unaryExpr([](double v) { return quantize_pixel(v); });
  return image;
}

std::vector<AnnotatedImage> generate(const DatasetSpec& spec, std::size_t count) {
  if (count == 0) throw std::invalid_argument("dataset: count must be at least 1");
  std::vector<AnnotatedImage> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) images.push_back(generate_one(spec, i));
  return images;
}

RowMatrix resize_pixels(const RowMatrix& pixels, double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("resize: scale must lie in (0, 1]");
  if (scale == 1.0) return pixels;
  const auto oh = static_cast<Eigen::Index>(std::lround(static_cast<double>(pixels.rows()) * scale));
  const auto ow = static_cast<Eigen::Index>(std::lround(static_cast<double>(pixels.cols()) * scale));
  if (oh < static_cast<Eigen::Index>(kMinImageExtent) || ow < static_cast<Eigen::Index>(kMinImageExtent)) {
    throw std::invalid_argument("resize: " + std::to_string(pixels.rows()) + "×" + std::to_string(pixels.cols()) +
                                " at scale " + std::to_string(scale) + " falls below the " +
                                std::to_string(kMinImageExtent) + "-pixel backbone minimum");
  }
  const double sy = static_cast<double>(pixels.rows()) / static_cast<double>(oh);
  const double sx = static_cast<double>(pixels.cols()) / static_cast<double>(ow);
  const double ymax = static_cast<double>(pixels.rows() - 1), xmax = static_cast<double>(pixels.cols() - 1);
  RowMatrix out(oh, ow);
  for (Eigen::Index i = 0; i < oh; ++i) {
    const double py = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, ymax);
    const auto y0 = static_cast<Eigen::Index>(py);
    const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, pixels.rows() - 1);
    const double fy = py - static_cast<double>(y0);
    for (Eigen::Index j = 0; j < ow; ++j) {
      const double px = std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, xmax);
      const auto x0 = static_cast<Eigen::Index>(px);
      const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, pixels.cols() - 1);
      const double fx = px - static_cast<double>(x0);
      out(i, j) = (1 - fy) * ((1 - fx) * pixels(y0, x0) + fx * pixels(y0, x1)) +
                  fy * ((1 - fx) * pixels(y1, x0) + fx * pixels(y1, x1));
    }
  }
  return out;
}

AnnotatedImage resize(const AnnotatedImage& image, double scale) {
  AnnotatedImage out;
  out.name = image.name;
  out.pixels = resize_pixels(image.pixels, scale);
  out.objects = image.objects;
  return out;
}

}  // namespace ddtr
