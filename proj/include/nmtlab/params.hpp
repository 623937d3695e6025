#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nmtlab/autodiff.hpp"
#include "nmtlab/rng.hpp"

namespace nmtlab {

/// Named parameter blocks in creation order. Tensor addresses are stable for
/// the lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& o) : names_(o.names_), tensors_(o.tensors_), index_(o.index_) {}
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) {
      names_ = o.names_;
      tensors_ = o.tensors_;
      index_ = o.index_;
    }
    return *this;
  }

  Tensor& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ContractError("duplicate parameter block '" + name + "'");
    tensors_.emplace_back(std::move(shape));
    tensors_.back().enable_grad();
    names_.push_back(name);
    index_.emplace(name, names_.size() - 1);
    return tensors_.back();
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  Tensor& get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("no parameter block '" + std::string(name) + "'");
    return tensors_[it->second];
  }
  const Tensor& get(std::string_view name) const { return const_cast<ParamStore*>(this)->get(name); }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) {
      if (t.has_grad()) t.zero_grad();
      else t.enable_grad();
    }
  }

 private:
  std::vector<std::string> names_;
  std::deque<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); rows are
/// fan_out, columns fan_in.
inline void init_scaled_uniform(Tensor& t, Rng& rng, double gain = 1.0) {
  const double fan_out = static_cast<double>(t.rows());
  const double fan_in = static_cast<double>(t.rank() >= 2 ? t.cols() : 1);
  const double a = gain * std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = rng.uniform(-a, a);
}

}  // namespace nmtlab
