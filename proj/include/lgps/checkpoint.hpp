#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace lgps {

// Named-tensor container used for encoder and preference-model files.
//
// Layout (little-endian):
//   "LGPSCKPT"            8-byte magic
//   u32 version           currently 1
//   string kind           e.g. "vae", "pca", "preference"
//   string metadata       JSON text
//   u32 tensor_count
//   per tensor: string name, u32 dtype (1 = float32, 2 = float64), u32 rank,
//               u64 dims[rank], then prod(dims) values in column-major order
// Strings are a u32 byte length followed by the bytes.
struct Checkpoint {
  enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

  struct Tensor {
    DType dtype = DType::kFloat32;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
  };

  std::string kind;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  void put(const std::string& name, const Eigen::MatrixXd& m, DType dtype = DType::kFloat32);
  void put(const std::string& name, const Eigen::MatrixXf& m);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  // Throws kData for a missing tensor or a shape other than rows x cols.
  Eigen::MatrixXd get(const std::string& name) const;
  Eigen::MatrixXd get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  // Reads only the header (kind and metadata).
  static Checkpoint peek(const std::filesystem::path& path);
};

}  // namespace lgps
