#ifndef DMSA_IO_WEIGHTS_HPP
#define DMSA_IO_WEIGHTS_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dmsa/tensor.hpp"

// Binary tensor container, little-endian throughout:
//
//   "DMSW" | u16 version | u32 count
//   count x { u16 name_len | name (UTF-8) | u8 dtype (0 f32, 1 f64) | u8 rank
//             | rank x u32 dim | payload }
//   u32 CRC-32 of every preceding byte
namespace dmsa::io {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::variant<TensorF, TensorD> value;

  const Shape& shape() const;
  bool is_double() const { return value.index() == 1; }
};

struct WeightFile {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  /// Adds a tensor; throws FormatError on a duplicate name.
  template <typename Scalar>
  void add(std::string name, const Tensor<Scalar>& t);
};

std::vector<std::uint8_t> encode(const WeightFile& file);
/// Throws FormatError on bad magic, version, truncation, CRC or names.
WeightFile decode(std::span<const std::uint8_t> bytes);

void save_weights(const std::filesystem::path& path, const WeightFile& file);
WeightFile load_weights(const std::filesystem::path& path);

/// Tensors a bundle visits via `visit(bundle, f)`, e.g. for_each or for_each_state.
template <typename Scalar, typename Visit>
WeightFile to_weight_file(Visit&& visit) {
  WeightFile f;
  visit([&](const std::string& name, const Tensor<Scalar>& t) { f.add(name, t); });
  return f;
}

/// Copies stored tensors into the visited ones by name, converting element
/// type when needed. A missing name or a shape difference throws
/// ShapeMismatch naming the tensor.
template <typename Scalar, typename Visit>
void assign_from(const WeightFile& file, Visit&& visit) {
  std::size_t used = 0;
  visit([&](const std::string& name, Tensor<Scalar>& t) {
    const NamedTensor* nt = file.find(name);
    if (nt == nullptr) throw ShapeMismatch("weights: missing tensor '" + name + "'");
    if (nt->shape() != t.shape()) {
      throw ShapeMismatch("weights: '" + name + "' stored as " + nt->shape().str() + ", expected " + t.shape().str());
    }
    t = std::visit([](const auto& v) { return v.template cast<Scalar>(); }, nt->value);
    ++used;
  });
  if (used != file.tensors.size()) {
    throw ShapeMismatch("weights: file holds " + std::to_string(file.tensors.size()) + " tensors, model uses " +
                        std::to_string(used));
  }
}

}  // namespace dmsa::io

#endif  // DMSA_IO_WEIGHTS_HPP
