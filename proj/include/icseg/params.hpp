#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "icseg/autodiff.hpp"

namespace icseg {

using ad::Parameter;

/// Named parameters in registration order. Addresses are stable for the
/// lifetime of the store, so layers keep raw pointers.
template <typename S>
class ParameterStore {
 public:
  Parameter<S>& add(const std::string& path, Matrix<S> init) {
    if (index_.count(path)) throw std::invalid_argument("duplicate parameter path " + path);
    auto p = std::make_unique<Parameter<S>>();
    p->value = std::move(init);
    p->zero_grad();
    index_[path] = entries_.size();
    entries_.push_back({path, std::move(p)});
    return *entries_.back().second;
  }

  bool contains(const std::string& path) const { return index_.count(path) > 0; }

  Parameter<S>& get(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw std::out_of_range("no parameter " + path);
    return *entries_[it->second].second;
  }
  const Parameter<S>& get(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw std::out_of_range("no parameter " + path);
    return *entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Parameter<S>& at(std::size_t i) { return *entries_[i].second; }
  const Parameter<S>& at(std::size_t i) const { return *entries_[i].second; }

  /// Total scalar count, optionally restricted to paths starting with prefix.
  std::int64_t count(const std::string& prefix = "") const {
    std::int64_t n = 0;
    for (const auto& [path, p] : entries_)
      if (path.compare(0, prefix.size(), prefix) == 0) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Parameter<S>>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Weight initialisers.
template <typename S>
Matrix<S> truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v = n(rng);
    while (v < -2.0 || v > 2.0) v = n(rng);
    m.data()[i] = static_cast<S>(v * stddev);
  }
  return m;
}

/// He-normal for ReLU layers with the given fan-in.
template <typename S>
Matrix<S> he_normal(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

/// Binary checkpoint: "ICSGCKP1", u32 count, then per parameter
/// u32 name length, name bytes, u32 rows, u32 cols, rows*cols float32 (row-major).
void save_checkpoint(const ParameterStore<float>& store, const std::string& path);
/// Loads values into an existing store; every stored name and shape must match.
void load_checkpoint(ParameterStore<float>& store, const std::string& path);

template <typename From, typename To>
void copy_parameters(const ParameterStore<From>& from, ParameterStore<To>& to) {
  if (from.size() != to.size()) throw std::invalid_argument("parameter stores differ in size");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from.name(i) != to.name(i)) throw std::invalid_argument("parameter order differs at " + from.name(i));
    to.at(i).value = from.at(i).value.template cast<To>();
  }
}

}  // namespace icseg
