#ifndef DMSA_PARAM_SET_HPP
#define DMSA_PARAM_SET_HPP

#include <string>
#include <vector>

#include "dmsa/tensor.hpp"

namespace dmsa {

/// Ordered, named view over learnable tensors owned elsewhere.
///
/// The set stores pointers; it is valid only while the owning bundle or
/// network is alive and not moved.
template <typename Scalar>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar>* tensor;
  };

  void add(std::string name, Tensor<Scalar>& t) {
    if (find(name) != nullptr) throw InvalidConfig("duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), &t});
  }

  /// Adds every tensor a bundle visits, prefixing its names.
  template <typename Bundle>
  void add_bundle(const std::string& prefix, Bundle& bundle) {
    bundle.for_each([&](const std::string& name, Tensor<Scalar>& t) { add(prefix + name, t); });
  }

  Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    return nullptr;
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Index total_elements() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

template <typename Scalar, typename Bundle>
ParamSet<Scalar> collect_params(Bundle& bundle, const std::string& prefix = "") {
  ParamSet<Scalar> set;
  set.add_bundle(prefix, bundle);
  return set;
}

/// Number of scalars a bundle visits.
template <typename Bundle>
Index bundle_numel(const Bundle& bundle) {
  Index n = 0;
  bundle.for_each([&](const auto&, const auto& t) { n += t.numel(); });
  return n;
}

}  // namespace dmsa

#endif  // DMSA_PARAM_SET_HPP
