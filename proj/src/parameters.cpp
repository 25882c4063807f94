#include "memsum/autodiff/parameters.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "memsum/errors.hpp"

namespace memsum::ad {

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32" || s == "float") return Precision::f32;
  if (s == "f64" || s == "double") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "'");
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, std::size_t rows, std::size_t cols,
                                     Init init, T constant, bool trainable) {
  Matrix<T> value(rows, cols);
  switch (init) {
    case Init::glorot_uniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::mt19937_64 rng(fnv1a(name, seed_));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : value.values()) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::zeros:
      break;
    case Init::ones:
      value.fill(T{1});
      break;
    case Init::constant:
      value.fill(constant);
      break;
  }
  return add(name, std::move(value), trainable);
}

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Matrix<T> value, bool trainable) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Matrix<T>(value.rows(), value.cols());
  p->value = std::move(value);
  p->trainable = trainable;
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return *params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return *params_[it->second];
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

template <typename T>
std::size_t ParameterStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->trainable ? 1 : 0;
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T{0});
}

template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state) {
  const auto& cfg = state.config;
  const std::uint64_t step = store.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (const auto& p : store.all()) {
    if (!p->trainable) continue;
    auto& m = state.first_moment[p->name];
    auto& v = state.second_moment[p->name];
    if (m.shape() != p->value.shape()) m = Matrix<T>(p->value.rows(), p->value.cols());
    if (v.shape() != p->value.shape()) v = Matrix<T>(p->value.rows(), p->value.cols());
    const bool has_grad = p->grad.shape() == p->value.shape();
    auto w = p->value.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has_grad ? static_cast<double>(p->grad[i]) : 0.0;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon);
      const double wi = static_cast<double>(w[i]);
      w[i] = static_cast<T>(wi - cfg.learning_rate * (update + cfg.weight_decay * wi));
    }
    if (has_grad) p->grad.fill(T{0});
    else p->grad = Matrix<T>(p->value.rows(), p->value.cols());
  }
  store.set_step(step);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step<float>(ParameterStore<float>&, AdamState<float>&);
template void adam_step<double>(ParameterStore<double>&, AdamState<double>&);

}  // namespace memsum::ad
