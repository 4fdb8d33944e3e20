#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmh/tensor.hpp"

namespace dmh {

// Named parameter store for a model: the optimizer walks it, checkpoints
// serialize it. Registration order is fixed and determines update order.
template <typename Real>
class ParameterRegistry {
 public:
  Tensor<Real>& add(const std::string& name, Tensor<Real> t, bool trainable = true) {
    for (const auto& e : entries_)
      DMH_CHECK(e.name != name, "duplicate parameter name: ", name);
    t.set_requires_grad(trainable);
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
  }

  Tensor<Real>& get(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw ContractError("unknown parameter: " + name);
  }

  struct Entry {
    std::string name;
    Tensor<Real> tensor;
  };

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Tensor<Real>> trainable() const {
    std::vector<Tensor<Real>> out;
    for (const auto& e : entries_)
      if (e.tensor.requires_grad()) out.push_back(e.tensor);
    return out;
  }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.tensor.requires_grad()) e.tensor.zero_grad();
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  // FNV-1a over the raw bytes of every parameter, in registration order.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : entries_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(e.tensor.data());
      size_t nb = static_cast<size_t>(e.tensor.size()) * sizeof(Real);
      for (size_t i = 0; i < nb; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
      }
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace dmh
