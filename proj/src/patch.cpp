#include "lgps/patch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lgps/binary_io.hpp"

namespace lgps::patch {
namespace {

constexpr char kCorpusMagic[8] = {'L', 'G', 'P', 'S', 'P', 'T', 'C', 'H'};
constexpr std::uint32_t kCorpusVersion = 1;
constexpr std::size_t kMaxDepthSamples = 4'000'000;

double percentile(std::vector<double>& values, double q) {
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  return percentile(values, 0.5);
}

}  // namespace

NormalizationStats compute_depth_stats(std::span<const Scene* const> scenes) {
  std::size_t total = 0;
  for (const Scene* s : scenes) total += s->depth.size();
  const std::size_t stride = std::max<std::size_t>(1, total / kMaxDepthSamples);
  std::vector<double> values;
  std::size_t i = 0;
  for (const Scene* s : scenes) {
    for (double d : s->depth.data()) {
      if (i++ % stride == 0 && d > 0.0) values.push_back(d);
    }
  }
  if (values.empty()) return {};
  NormalizationStats stats;
  stats.depth_min = percentile(values, 0.02);
  stats.depth_max = percentile(values, 0.98);
  return stats;
}

NormalizationStats compute_depth_stats(const std::vector<Scene>& scenes) {
  std::vector<const Scene*> ptrs;
  for (const Scene& s : scenes) ptrs.push_back(&s);
  return compute_depth_stats(std::span<const Scene* const>(ptrs));
}

void normalize_channels(std::span<double> raw, std::size_t pixels, const NormalizationStats& stats,
                        double missing_depth) {
  if (raw.size() != pixels * kChannels) {
    fail(ErrorKind::kInvalidArgument, "raw tensor must have 7 channels");
  }
  if (!std::isfinite(stats.depth_min) || !std::isfinite(stats.depth_max)) {
    fail(ErrorKind::kInvalidArgument, "depth statistics must be finite");
  }
  const double range = stats.depth_max - stats.depth_min;
  for (std::size_t p = 0; p < pixels; ++p) {
    double* px = raw.data() + p * kChannels;
    for (int c = 0; c < 3; ++c) px[c] = px[c] / 127.5 - 1.0;
    if (range <= 0.0) {
      px[3] = 0.0;
    } else {
      const double d = px[3] > 0.0 ? px[3] : missing_depth;
      const double clamped = std::clamp(d, stats.depth_min, stats.depth_max);
      px[3] = 2.0 * (clamped - stats.depth_min) / range - 1.0;
    }
    for (int c = 4; c < 7; ++c) px[c] = std::clamp(px[c], -1.0, 1.0);
  }
}

PatchExtractor::PatchExtractor(const Scene& scene, const imaging::NormalMap& normals,
                               const NormalizationStats& stats, PatchConfig config)
    : scene_id_(scene.id), config_(config) {
  init(scene, normals, stats);
}

PatchExtractor::PatchExtractor(const Scene& scene, const NormalizationStats& stats,
                               PatchConfig config)
    : scene_id_(scene.id), config_(config) {
  init(scene, imaging::normals_from_depth(scene.depth, config.normal_depth_scale), stats);
}

void PatchExtractor::init(const Scene& scene, const imaging::NormalMap& normals,
                          const NormalizationStats& stats) {
  if (config_.size <= 0 || !(config_.scale > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "patch size and scale must be positive");
  }
  const int w = scene.width(), h = scene.height();
  if (!normals.same_shape(w, h) || normals.channels() != 3) {
    fail(ErrorKind::kInvalidArgument, "normal map does not match the scene");
  }
  image_ = Image<double>(w, h, kChannels);
  const int border = std::max(1, std::min({4, w / 4, h / 4}));
  std::vector<double> border_depth;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) image_.at(x, y, c) = scene.rgb.at(x, y, c);
      image_.at(x, y, 3) = scene.depth.at(x, y);
      for (int c = 0; c < 3; ++c) image_.at(x, y, 4 + c) = normals.at(x, y, c);
      const bool ring = x < border || y < border || x >= w - border || y >= h - border;
      if (ring && scene.depth.at(x, y) > 0.0) border_depth.push_back(scene.depth.at(x, y));
    }
  }
  const double missing = border_depth.empty() ? stats.depth_max : median(border_depth);
  normalize_channels(image_.data(), static_cast<std::size_t>(w) * h, stats, missing);

  fill_.assign(kChannels, 0.0);
  for (int c = 0; c < kChannels; ++c) {
    std::vector<double> ring;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x < border || y < border || x >= w - border || y >= h - border) {
          ring.push_back(image_.at(x, y, c));
        }
      }
    }
    fill_[c] = median(ring);
  }
}

double PatchExtractor::sample(double x, double y, int c) const {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int xi, int yi) {
    return image_.contains(xi, yi) ? image_.at(xi, yi, c) : fill_[c];
  };
  if (ax == 0.0 && ay == 0.0) return px(x0, y0);
  const double top = (1.0 - ax) * px(x0, y0) + ax * px(x0 + 1, y0);
  const double bottom = (1.0 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1);
  return (1.0 - ay) * top + ay * bottom;
}

Patch PatchExtractor::extract(const GraspPose& pose, bool half_turn) const {
  if (!(pose.x >= 0.0 && pose.y >= 0.0 && pose.x <= image_.width() - 1 &&
        pose.y <= image_.height() - 1)) {
    fail(ErrorKind::kInvalidPose, "grasp center outside the image");
  }
  const int p = config_.size;
  Patch out;
  out.pose = pose;
  out.scene_id = scene_id_;
  out.size = p;
  out.data.resize(static_cast<std::size_t>(kChannels) * p * p);
  const double angle = half_turn ? pose.theta + kPi : pose.theta;
  const double c = std::cos(angle), s = std::sin(angle);
  const double half = p / 2;
  for (int v = 0; v < p; ++v) {
    for (int u = 0; u < p; ++u) {
      const double du = (u - half) * config_.scale;
      const double dv = (v - half) * config_.scale;
      // Snap to the grid when rotation is exact so axis-aligned poses give plain crops.
      double x = pose.x + c * du - s * dv;
      double y = pose.y + s * du + c * dv;
      if (std::abs(x - std::round(x)) < 1e-9) x = std::round(x);
      if (std::abs(y - std::round(y)) < 1e-9) y = std::round(y);
      for (int ch = 0; ch < kChannels; ++ch) {
        out.data[(static_cast<std::size_t>(ch) * p + v) * p + u] = sample(x, y, ch);
      }
    }
  }
  return out;
}

Patch extract_patch(const Scene& scene, const imaging::NormalMap& normals, const GraspPose& pose,
                    const NormalizationStats& stats, const PatchConfig& config) {
  return PatchExtractor(scene, normals, stats, config).extract(pose);
}

std::size_t PatchCorpus::count() const { return stride() == 0 ? 0 : data.size() / stride(); }

void PatchCorpus::add(const Patch& patch) {
  if (size == 0) size = patch.size;
  if (patch.size != size || patch.data.size() != stride()) {
    fail(ErrorKind::kInvalidArgument, "patch size does not match corpus");
  }
  for (double v : patch.data) data.push_back(static_cast<float>(v));
}

void write_corpus(const std::filesystem::path& path, const PatchCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kCorpusMagic, sizeof(kCorpusMagic));
  binary::write<std::uint32_t>(out, kCorpusVersion);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.size));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.channels));
  binary::write<std::uint64_t>(out, corpus.count());
  for (float v : corpus.data) binary::write<float>(out, v);
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

PatchCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kCorpusMagic)) {
    fail(ErrorKind::kData, path.string() + " is not a patch corpus");
  }
  const auto version = binary::read<std::uint32_t>(in);
  if (version != kCorpusVersion) fail(ErrorKind::kData, "unsupported corpus version");
  PatchCorpus corpus;
  corpus.size = static_cast<int>(binary::read<std::uint32_t>(in));
  corpus.channels = static_cast<int>(binary::read<std::uint32_t>(in));
  const auto count = binary::read<std::uint64_t>(in);
  corpus.data.resize(count * corpus.stride());
  for (float& v : corpus.data) v = binary::read<float>(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::kData, "corpus body longer than the header count");
  }
  return corpus;
}

}  // namespace lgps::patch
