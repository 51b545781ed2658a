#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "lgps/core.hpp"

namespace lgps::imaging {

// 0/1 per pixel.
using BinaryMask = Image<std::uint8_t>;
// Three channels (nx, ny, nz) per pixel, unit length.
using NormalMap = Image<double>;

std::size_t count(const BinaryMask& mask);
BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);
GrayImage mask_to_gray(const BinaryMask& mask);

BinaryMask erode3(const BinaryMask& mask);
BinaryMask dilate3(const BinaryMask& mask);
BinaryMask open3(const BinaryMask& mask);
BinaryMask close3(const BinaryMask& mask);

// Keeps only the largest 8-connected component (ties: the one found first in scan order).
BinaryMask largest_component(const BinaryMask& mask);

struct SegmenterConfig {
  // Distance in the HSV cone (unit-scaled S and V) from the border-ring background color.
  double color_threshold = 0.15;
  // Height above the fitted background plane, meters.
  double depth_threshold = 0.01;
  // Width of the border ring used to estimate the background.
  int border = 4;
  bool use_color = true;
  bool use_depth = true;
};

// Pluggable foreground segmentation. Implementations return a non-empty mask
// or throw kSegmentationFailed.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual BinaryMask segment(const Scene& scene) const = 0;
};

// Background-color distance (HSV) OR height above the border-fitted depth
// plane, then open/close and largest component.
class PlainBackgroundSegmenter : public Segmenter {
 public:
  explicit PlainBackgroundSegmenter(SegmenterConfig config = {}) : config_(config) {}
  BinaryMask segment(const Scene& scene) const override;

 private:
  SegmenterConfig config_;
};

BinaryMask segment_foreground(const Scene& scene, const SegmenterConfig& config = {});

struct CannyConfig {
  double sigma = 1.4;
  // Thresholds relative to the maximum gradient magnitude.
  double low_ratio = 0.1;
  double high_ratio = 0.3;
};

GrayImage gaussian_blur(const GrayImage& image, double sigma);

// Canny with absolute hysteresis thresholds. Requires 0 <= low <= high.
BinaryMask canny_edges(const GrayImage& image, double low, double high, double sigma = 1.4);
// Canny with thresholds taken relative to the image's maximum gradient.
BinaryMask canny_edges(const GrayImage& image, const CannyConfig& config = {});
// Edges of a binary mask, restricted to the foreground side of the boundary so
// the result is a one-pixel-wide inner contour.
BinaryMask mask_edges(const BinaryMask& mask, const CannyConfig& config = {});

// Zhang-Suen thinning. Empty input gives empty output.
BinaryMask skeletonize(const BinaryMask& mask);

// normalize(-dz/dx, -dz/dy, 1) from central differences on depth * depth_scale
// (depth_scale converts meters into pixel units). Missing depth gives (0, 0, 1).
NormalMap normals_from_depth(const GrayImage& depth, double depth_scale = 1.0);

struct Hsv {
  double h = 0.0;  // radians
  double s = 0.0;
  double v = 0.0;
};
Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);

}  // namespace lgps::imaging
