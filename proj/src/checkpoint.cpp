#include "lgps/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "lgps/binary_io.hpp"
#include "lgps/error.hpp"

namespace lgps {
namespace {

constexpr char kMagic[8] = {'L', 'G', 'P', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

Checkpoint read_checkpoint(const std::filesystem::path& path, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    fail(ErrorKind::kData, path.string() + " is not a checkpoint file");
  }
  if (binary::read<std::uint32_t>(in) != kVersion) {
    fail(ErrorKind::kData, "unsupported checkpoint version in " + path.string());
  }
  Checkpoint ckpt;
  ckpt.kind = binary::read_string(in);
  try {
    ckpt.metadata = nlohmann::json::parse(binary::read_string(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("bad checkpoint metadata: ") + e.what());
  }
  if (header_only) return ckpt;
  const auto count = binary::read<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = binary::read_string(in);
    Checkpoint::Tensor tensor;
    const auto dtype = binary::read<std::uint32_t>(in);
    if (dtype != 1 && dtype != 2) fail(ErrorKind::kData, "unknown tensor dtype for " + name);
    tensor.dtype = static_cast<Checkpoint::DType>(dtype);
    const auto rank = binary::read<std::uint32_t>(in);
    if (rank > 8) fail(ErrorKind::kData, "tensor rank out of range for " + name);
    std::uint64_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      tensor.dims.push_back(binary::read<std::uint64_t>(in));
      total *= tensor.dims.back();
    }
    if (total > (std::uint64_t{1} << 32)) fail(ErrorKind::kData, "tensor too large: " + name);
    tensor.values.resize(total);
    for (double& v : tensor.values) {
      v = tensor.dtype == Checkpoint::DType::kFloat32 ? binary::read<float>(in)
                                                      : binary::read<double>(in);
    }
    ckpt.tensors.emplace(name, std::move(tensor));
  }
  return ckpt;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& m, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.assign(m.data(), m.data() + m.size());
  if (dtype == DType::kFloat32) {
    for (double& v : t.values) v = static_cast<float>(v);
  }
  tensors[name] = std::move(t);
}

void Checkpoint::put(const std::string& name, const Eigen::MatrixXf& m) {
  put(name, Eigen::MatrixXd(m.cast<double>()), DType::kFloat32);
}

Eigen::MatrixXd Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::kData, "checkpoint has no tensor '" + name + "'");
  const Tensor& t = it->second;
  Eigen::Index rows = t.dims.empty() ? 1 : static_cast<Eigen::Index>(t.dims[0]);
  Eigen::Index cols = t.dims.size() < 2 ? 1 : static_cast<Eigen::Index>(t.values.size() / std::max<std::size_t>(1, t.dims[0]));
  Eigen::MatrixXd m(rows, cols);
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

Eigen::MatrixXd Checkpoint::get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  Eigen::MatrixXd m = get(name);
  if (m.rows() != rows || m.cols() != cols) {
    fail(ErrorKind::kData, "tensor '" + name + "' has an unexpected shape");
  }
  return m;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  binary::write<std::uint32_t>(out, kVersion);
  binary::write_string(out, kind);
  binary::write_string(out, metadata.dump());
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    binary::write_string(out, name);
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.dtype));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) binary::write<std::uint64_t>(out, d);
    for (double v : t.values) {
      if (t.dtype == DType::kFloat32) {
        binary::write<float>(out, static_cast<float>(v));
      } else {
        binary::write<double>(out, v);
      }
    }
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return read_checkpoint(path, false); }

Checkpoint Checkpoint::peek(const std::filesystem::path& path) { return read_checkpoint(path, true); }

}  // namespace lgps
