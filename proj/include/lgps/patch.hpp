#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lgps/core.hpp"
#include "lgps/imaging.hpp"

namespace lgps::patch {

inline constexpr int kChannels = 7;  // R, G, B, depth, nx, ny, nz

// Dataset-level depth range used to map depth onto [-1, 1].
struct NormalizationStats {
  double depth_min = 0.0;
  double depth_max = 1.0;
};

// 2nd and 98th percentiles of all valid (non-zero) depths.
NormalizationStats compute_depth_stats(std::span<const Scene* const> scenes);
NormalizationStats compute_depth_stats(const std::vector<Scene>& scenes);

struct PatchConfig {
  int size = 128;
  // Source pixels per patch pixel; 1 gives a plain crop.
  double scale = 1.0;
  // Converts depth (m) into pixel units before the normal computation.
  double normal_depth_scale = 1000.0;
};

// 7 x P x P values in [-1, 1], channel-major: data[(c * P + v) * P + u].
struct Patch {
  std::vector<double> data;
  GraspPose pose;
  std::string scene_id;
  int size = 0;

  double at(int c, int v, int u) const {
    return data[(static_cast<std::size_t>(c) * size + v) * size + u];
  }
};

// Per-channel map of a raw 7-channel image (RGB in 0..255, depth in meters
// with 0 = missing, unit normals) onto [-1, 1]. Degenerate depth stats
// (max <= min) set the depth channel to 0. Missing depth takes `missing_depth`.
void normalize_channels(std::span<double> raw, std::size_t pixels, const NormalizationStats& stats,
                        double missing_depth);

// Scene-level resampling source: the normalized 7-channel scene plus the
// background fill (per-channel median of the border ring).
class PatchExtractor {
 public:
  PatchExtractor(const Scene& scene, const imaging::NormalMap& normals,
                 const NormalizationStats& stats, PatchConfig config = {});
  PatchExtractor(const Scene& scene, const NormalizationStats& stats, PatchConfig config = {});

  // Samples at pose + R(theta) * ((u - P/2) * scale, (v - P/2) * scale) with
  // bilinear interpolation; out-of-image samples take the fill value.
  // half_turn samples at theta + pi, i.e. the same grasp seen from the other
  // jaw; the returned pose is unchanged.
  // Throws kInvalidPose if the grasp center is outside the image.
  Patch extract(const GraspPose& pose, bool half_turn = false) const;

  const PatchConfig& config() const { return config_; }
  const std::vector<double>& fill() const { return fill_; }
  const Image<double>& normalized() const { return image_; }

 private:
  void init(const Scene& scene, const imaging::NormalMap& normals, const NormalizationStats& stats);
  double sample(double x, double y, int c) const;

  std::string scene_id_;
  PatchConfig config_;
  Image<double> image_;  // 7 channels, normalized
  std::vector<double> fill_;
};

Patch extract_patch(const Scene& scene, const imaging::NormalMap& normals, const GraspPose& pose,
                    const NormalizationStats& stats, const PatchConfig& config = {});

// Flat float32 corpus for encoder training.
struct PatchCorpus {
  int size = 0;
  int channels = kChannels;
  std::vector<float> data;

  std::size_t count() const;
  std::size_t stride() const { return static_cast<std::size_t>(channels) * size * size; }
  void add(const Patch& patch);
  std::span<const float> sample(std::size_t i) const { return {data.data() + i * stride(), stride()}; }
};

// Little-endian container: "LGPSPTCH", u32 version (1), u32 P, u32 channels,
// u64 count, then count * channels * P * P float32 values, row-major.
void write_corpus(const std::filesystem::path& path, const PatchCorpus& corpus);
PatchCorpus read_corpus(const std::filesystem::path& path);

}  // namespace lgps::patch
