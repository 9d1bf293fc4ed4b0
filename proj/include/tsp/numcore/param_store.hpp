#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsp/numcore/tensor.hpp"

namespace tsp::num {

struct AdamMoments {
  Tensor first;
  Tensor second;
  std::uint64_t step = 0;
};

/// Named trainable parameters plus their optimizer state. Iteration order is
/// lexicographic by name, which fixes the order of every reduction over
/// parameters (gradient norms, checkpoint layout).
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  AdamMoments& moments(const std::string& name);
  const AdamMoments& moments(const std::string& name) const;

  std::vector<std::string> names() const;
  // Names beginning with `prefix`.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  bool all_finite() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, AdamMoments> moments_;
};

using Gradients = std::map<std::string, Tensor>;

}  // namespace tsp::num
