#ifndef PIN_PARAMS_H_
#define PIN_PARAMS_H_

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pin/tensor.h"

namespace pin {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value; accumulated by Tape::backward
};

// Named trainable parameters. Iteration is ordered by name, which fixes the
// order of gradients, optimizer state and checkpoint records.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (params_.count(name) != 0) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
    Tensor<T> grad(init.shape());
    auto [it, _] = params_.emplace(name, Parameter<T>{name, std::move(init), std::move(grad)});
    return it->second;
  }

  // Draws every element uniformly from [lo, hi) with the store's generator.
  Parameter<T>& add_uniform(const std::string& name, const Shape& shape, double lo,
                            double hi) {
    Tensor<T> init(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (T& v : init.values()) v = static_cast<T>(dist(rng_));
    return add(name, std::move(init));
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(T(0));
  }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }
  void reseed(std::uint64_t seed) {
    seed_ = seed;
    rng_.seed(seed);
  }

 private:
  Map params_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
};

}  // namespace pin

#endif  // PIN_PARAMS_H_
