#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "entrack/rng.hpp"
#include "entrack/tensor.hpp"

namespace entrack {

// One trainable tensor plus its optimizer state.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> m;  // first-moment accumulator
  std::vector<double> v;  // second-moment accumulator
};

// Ordered, name-addressable parameter set. Order is insertion order and is
// part of the training determinism contract.
class ParamStore {
 public:
  Param& add(const std::string& name, const Shape& shape) {
    if (index_.count(name)) {
      throw std::invalid_argument("param '" + name + "' already exists");
    }
    Param p;
    p.name = name;
    p.shape = shape;
    p.value.assign(numel(shape), 0.0);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Param& add_uniform(const std::string& name, const Shape& shape, Rng& rng,
                     double radius) {
    Param& p = add(name, shape);
    for (double& x : p.value) x = rng.uniform(-radius, radius);
    return p;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("unknown param '" + name + "'");
    }
    return it->second;
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("unknown param '" + name + "'");
    }
    return params_[it->second];
  }

  const Param& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  int64_t value_count() const {
    int64_t n = 0;
    for (const Param& p : params_) n += static_cast<int64_t>(p.value.size());
    return n;
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, int> index_;
};

// Leaves for one forward pass, aligned with the store's parameter order.
struct BoundParams {
  std::vector<Tensor> leaves;

  const Tensor& operator[](size_t i) const { return leaves[i]; }
};

inline BoundParams bind(Tape& tape, const ParamStore& store,
                        bool requires_grad = true) {
  BoundParams bound;
  bound.leaves.reserve(store.size());
  for (const Param& p : store.all()) {
    bound.leaves.push_back(tape.leaf(p.shape, p.value, requires_grad));
  }
  return bound;
}

}  // namespace entrack
