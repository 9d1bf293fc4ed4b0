#include "tsp/numcore/param_store.hpp"

#include "tsp/error.hpp"

namespace tsp::num {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  require(!name.empty(), "parameter name must be non-empty");
  require(!contains(name), "duplicate parameter name '" + name + "'");
  AdamMoments m{Tensor(init.shape()), Tensor(init.shape()), 0};
  moments_.emplace(name, std::move(m));
  return params_.emplace(name, std::move(init)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

AdamMoments& ParamStore::moments(const std::string& name) {
  auto it = moments_.find(name);
  require(it != moments_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

const AdamMoments& ParamStore::moments(const std::string& name) const {
  auto it = moments_.find(name);
  require(it != moments_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
    out.push_back(it->first);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [_, t] : params_)
    if (!t.all_finite()) return false;
  return true;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.params_ != b.params_) return false;
  if (a.moments_.size() != b.moments_.size()) return false;
  for (const auto& [k, m] : a.moments_) {
    auto it = b.moments_.find(k);
    if (it == b.moments_.end()) return false;
    if (!(m.first == it->second.first) || !(m.second == it->second.second) || m.step != it->second.step)
      return false;
  }
  return true;
}

}  // namespace tsp::num
