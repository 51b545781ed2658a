#include "lgps/imaging.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <vector>

namespace lgps::imaging {
namespace {

constexpr std::array<int, 8> kDx{1, 1, 0, -1, -1, -1, 0, 1};
constexpr std::array<int, 8> kDy{0, 1, 1, 1, 0, -1, -1, -1};

std::uint8_t get(const BinaryMask& m, int x, int y) {
  return m.contains(x, y) ? m.at(x, y) : 0;
}

template <typename T>
T median_of(std::vector<T> values) {
  if (values.empty()) return T{};
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

bool in_border(int x, int y, int w, int h, int border) {
  return x < border || y < border || x >= w - border || y >= h - border;
}

// HSV cone embedding so that hue distance is damped for unsaturated colors.
std::array<double, 3> cone(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const Hsv hsv = rgb_to_hsv(r, g, b);
  return {hsv.s * hsv.v * std::cos(hsv.h), hsv.s * hsv.v * std::sin(hsv.h), hsv.v};
}

}  // namespace

Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta > 0.0) {
    double h;
    if (mx == r) {
      h = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    out.h = h * kPi / 3.0;
  }
  return out;
}

std::size_t count(const BinaryMask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(), [](std::uint8_t v) { return v != 0; }));
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = (a.data()[i] && b.data()[i]) ? 1 : 0;
  return out;
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = (a.data()[i] || b.data()[i]) ? 1 : 0;
  return out;
}

GrayImage mask_to_gray(const BinaryMask& mask) {
  GrayImage out(mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = mask.data()[i] ? 1.0 : 0.0;
  return out;
}

BinaryMask erode3(const BinaryMask& mask) {
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      std::uint8_t v = mask.at(x, y);
      for (int k = 0; k < 8 && v; ++k) v = get(mask, x + kDx[k], y + kDy[k]);
      out.at(x, y) = v ? 1 : 0;
    }
  }
  return out;
}

BinaryMask dilate3(const BinaryMask& mask) {
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      std::uint8_t v = mask.at(x, y);
      for (int k = 0; k < 8 && !v; ++k) v = get(mask, x + kDx[k], y + kDy[k]);
      out.at(x, y) = v ? 1 : 0;
    }
  }
  return out;
}

BinaryMask open3(const BinaryMask& mask) { return dilate3(erode3(mask)); }
BinaryMask close3(const BinaryMask& mask) { return erode3(dilate3(mask)); }

BinaryMask largest_component(const BinaryMask& mask) {
  const int w = mask.width(), h = mask.height();
  Image<int> labels(w, h, 1, 0);
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y) || labels.at(x, y)) continue;
      ++next;
      std::size_t size = 0;
      stack.assign(1, {x, y});
      labels.at(x, y) = next;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++size;
        for (int k = 0; k < 8; ++k) {
          const int nx = cx + kDx[k], ny = cy + kDy[k];
          if (get(mask, nx, ny) && !labels.at(nx, ny)) {
            labels.at(nx, ny) = next;
            stack.emplace_back(nx, ny);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = next;
      }
    }
  }
  BinaryMask out(w, h);
  if (best_label == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = labels.data()[i] == best_label;
  return out;
}

BinaryMask PlainBackgroundSegmenter::segment(const Scene& scene) const {
  const int w = scene.width(), h = scene.height();
  const int border = std::clamp(config_.border, 1, std::min(w, h) / 4);
  BinaryMask color_fg(w, h), depth_fg(w, h);

  if (config_.use_color) {
    std::array<std::vector<std::uint8_t>, 3> ring;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!in_border(x, y, w, h, border)) continue;
        for (int c = 0; c < 3; ++c) ring[c].push_back(scene.rgb.at(x, y, c));
      }
    }
    const auto bg = cone(median_of(ring[0]), median_of(ring[1]), median_of(ring[2]));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto p = cone(scene.rgb.at(x, y, 0), scene.rgb.at(x, y, 1), scene.rgb.at(x, y, 2));
        const double d = std::hypot(p[0] - bg[0], p[1] - bg[1], p[2] - bg[2]);
        color_fg.at(x, y) = d > config_.color_threshold;
      }
    }
  }

  std::size_t plane_samples = 0;
  if (config_.use_depth) {
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double z = scene.depth.at(x, y);
        if (!in_border(x, y, w, h, border) || z <= 0.0) continue;
        const Eigen::Vector3d a(x, y, 1.0);
        ata += a * a.transpose();
        atb += a * z;
        ++plane_samples;
      }
    }
    if (plane_samples >= 3) {
      const Eigen::Vector3d plane = ata.ldlt().solve(atb);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double z = scene.depth.at(x, y);
          if (z <= 0.0) continue;
          const double expected = plane[0] * x + plane[1] * y + plane[2];
          depth_fg.at(x, y) = expected - z > config_.depth_threshold;
        }
      }
    }
  }

  const BinaryMask raw = mask_or(color_fg, depth_fg);
  BinaryMask mask = largest_component(close3(open3(raw)));
  if (count(mask) == 0) {
    std::ostringstream msg;
    msg << "scene " << scene.id << ": no foreground found (color pixels=" << count(color_fg)
        << ", depth pixels=" << count(depth_fg) << ", plane samples=" << plane_samples << ")";
    fail(ErrorKind::kSegmentationFailed, msg.str());
  }
  return mask;
}

BinaryMask segment_foreground(const Scene& scene, const SegmenterConfig& config) {
  return PlainBackgroundSegmenter(config).segment(scene);
}

GrayImage gaussian_blur(const GrayImage& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  const int w = image.width(), h = image.height();
  GrayImage tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * image.at(std::clamp(x + i, 0, w - 1), y);
      }
      tmp.at(x, y) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

namespace {

struct Gradients {
  GrayImage gx, gy, mag;
  double max_mag = 0.0;
};

Gradients sobel(const GrayImage& image) {
  const int w = image.width(), h = image.height();
  Gradients g{GrayImage(w, h), GrayImage(w, h), GrayImage(w, h), 0.0};
  auto px = [&](int x, int y) { return image.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      g.gx.at(x, y) = gx;
      g.gy.at(x, y) = gy;
      // Quantize so mirror-symmetric steps tie exactly and constant offsets are invariant.
      const double m = std::round(std::hypot(gx, gy) * 1e9) * 1e-9;
      g.mag.at(x, y) = m < 1e-9 ? 0.0 : m;
      g.max_mag = std::max(g.max_mag, g.mag.at(x, y));
    }
  }
  return g;
}

// Non-maximum suppression along the quantized gradient direction. With
// `strict_forward` the pixel must beat its forward neighbor strictly, which
// resolves two-pixel plateaus of step edges to a single pixel.
GrayImage suppress(const Gradients& g, bool strict_forward) {
  const int w = g.mag.width(), h = g.mag.height();
  GrayImage out(w, h);
  auto mag = [&](int x, int y) { return g.mag.contains(x, y) ? g.mag.at(x, y) : 0.0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = g.mag.at(x, y);
      if (m <= 0.0) continue;
      double angle = std::atan2(g.gy.at(x, y), g.gx.at(x, y));
      if (angle < 0) angle += kPi;
      int dx, dy;
      if (angle < kPi / 8 || angle >= 7 * kPi / 8) {
        dx = 1; dy = 0;
      } else if (angle < 3 * kPi / 8) {
        dx = 1; dy = 1;
      } else if (angle < 5 * kPi / 8) {
        dx = 0; dy = 1;
      } else {
        dx = -1; dy = 1;
      }
      const double fwd = mag(x + dx, y + dy);
      const double back = mag(x - dx, y - dy);
      const bool keep = (strict_forward ? m > fwd : m >= fwd) && m >= back;
      if (keep) out.at(x, y) = m;
    }
  }
  return out;
}

BinaryMask hysteresis(const GrayImage& nms, double low, double high) {
  const int w = nms.width(), h = nms.height();
  BinaryMask out(w, h);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = nms.at(x, y);
      if (m > 0.0 && m >= high && !out.at(x, y)) {
        out.at(x, y) = 1;
        stack.emplace_back(x, y);
      }
    }
  }
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    for (int k = 0; k < 8; ++k) {
      const int nx = x + kDx[k], ny = y + kDy[k];
      if (!nms.contains(nx, ny) || out.at(nx, ny)) continue;
      const double m = nms.at(nx, ny);
      if (m > 0.0 && m >= low) {
        out.at(nx, ny) = 1;
        stack.emplace_back(nx, ny);
      }
    }
  }
  return out;
}

void check_thresholds(double low, double high) {
  if (!(low >= 0.0 && low <= high)) {
    fail(ErrorKind::kInvalidArgument, "canny thresholds must satisfy 0 <= low <= high");
  }
}

}  // namespace

// Canny only sees differences, so shift the image to a zero minimum first; this
// makes the output exactly invariant to constant offsets of integer-valued data.
static GrayImage shift_to_zero(const GrayImage& image) {
  if (image.empty()) return image;
  const double mn = *std::min_element(image.data().begin(), image.data().end());
  GrayImage out = image;
  for (double& v : out.data()) v -= mn;
  return out;
}

BinaryMask canny_edges(const GrayImage& image, double low, double high, double sigma) {
  check_thresholds(low, high);
  const Gradients g = sobel(gaussian_blur(shift_to_zero(image), sigma));
  return hysteresis(suppress(g, true), low, high);
}

BinaryMask canny_edges(const GrayImage& image, const CannyConfig& config) {
  check_thresholds(config.low_ratio, config.high_ratio);
  const Gradients g = sobel(gaussian_blur(shift_to_zero(image), config.sigma));
  return hysteresis(suppress(g, true), config.low_ratio * g.max_mag, config.high_ratio * g.max_mag);
}

BinaryMask mask_edges(const BinaryMask& mask, const CannyConfig& config) {
  check_thresholds(config.low_ratio, config.high_ratio);
  const Gradients g = sobel(gaussian_blur(mask_to_gray(mask), config.sigma));
  // Both sides of a binary step have equal magnitude; keep both, then retain the inner one.
  const BinaryMask edges =
      hysteresis(suppress(g, false), config.low_ratio * g.max_mag, config.high_ratio * g.max_mag);
  return mask_and(edges, mask);
}

BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask img = mask;
  for (auto& v : img.data()) v = v ? 1 : 0;
  const int w = img.width(), h = img.height();
  std::vector<std::pair<int, int>> to_clear;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      to_clear.clear();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!img.at(x, y)) continue;
          // P2..P9 clockwise starting north.
          const int p2 = get(img, x, y - 1), p3 = get(img, x + 1, y - 1), p4 = get(img, x + 1, y),
                    p5 = get(img, x + 1, y + 1), p6 = get(img, x, y + 1), p7 = get(img, x - 1, y + 1),
                    p8 = get(img, x - 1, y), p9 = get(img, x - 1, y - 1);
          const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
          if (b < 2 || b > 6) continue;
          const int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
          int a = 0;
          for (int i = 0; i < 8; ++i) a += (seq[i] == 0 && seq[i + 1] == 1);
          if (a != 1) continue;
          if (pass == 0) {
            if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
          } else {
            if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
          }
          to_clear.emplace_back(x, y);
        }
      }
      for (auto [x, y] : to_clear) img.at(x, y) = 0;
      changed = changed || !to_clear.empty();
    }
  }
  return img;
}

NormalMap normals_from_depth(const GrayImage& depth, double depth_scale) {
  const int w = depth.width(), h = depth.height();
  NormalMap out(w, h, 3);
  auto valid = [&](int x, int y) { return depth.contains(x, y) && depth.at(x, y) > 0.0; };
  // Central difference where both neighbors are valid, one-sided otherwise.
  auto derivative = [&](int x, int y, int dx, int dy) {
    const bool fwd = valid(x + dx, y + dy);
    const bool back = valid(x - dx, y - dy);
    const double z = depth.at(x, y);
    if (fwd && back) return (depth.at(x + dx, y + dy) - depth.at(x - dx, y - dy)) / 2.0;
    if (fwd) return depth.at(x + dx, y + dy) - z;
    if (back) return z - depth.at(x - dx, y - dy);
    return 0.0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!valid(x, y)) {
        out.at(x, y, 0) = 0.0;
        out.at(x, y, 1) = 0.0;
        out.at(x, y, 2) = 1.0;
        continue;
      }
      const double nx = -derivative(x, y, 1, 0) * depth_scale;
      const double ny = -derivative(x, y, 0, 1) * depth_scale;
      const double n = std::sqrt(nx * nx + ny * ny + 1.0);
      out.at(x, y, 0) = nx / n;
      out.at(x, y, 1) = ny / n;
      out.at(x, y, 2) = 1.0 / n;
    }
  }
  return out;
}

}  // namespace lgps::imaging
