#pragma once

// Ordered, named parameter registry. Every trainable tensor is registered
// exactly once and tagged theta (vanilla model parameters) or sigma
// (adversarial perturbation scales); the partition drives optimizer
// filtering, weight-decay exclusion, and checkpoint layout.

#include <string>
#include <unordered_map>
#include <vector>

#include "advstyle/tensor.hpp"

namespace advstyle {

enum class ParamTag { theta, sigma };

inline const char* tag_name(ParamTag t) { return t == ParamTag::theta ? "theta" : "sigma"; }

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  ParamTag tag;
};

template <typename T>
class ParameterRegistry {
public:
  void add(const std::string& name, Tensor<T> t, ParamTag tag) {
    if (index_.count(name)) throw ValueError("registry: duplicate parameter name '" + name + "'");
    if (!t.requires_grad())
      throw ValueError("registry: parameter '" + name + "' must require grad");
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t), tag});
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  std::vector<ParamEntry<T>> by_tag(ParamTag tag) const {
    std::vector<ParamEntry<T>> out;
    for (const auto& e : entries_)
      if (e.tag == tag) out.push_back(e);
    return out;
  }

  Tensor<T> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("registry: no parameter named '" + name + "'");
    return entries_[it->second].tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace advstyle
