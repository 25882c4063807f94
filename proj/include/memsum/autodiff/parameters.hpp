#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "memsum/autodiff/matrix.hpp"

namespace memsum::ad {

enum class Precision { f32, f64 };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

/// Stable 64-bit FNV-1a, used to derive per-parameter seeds from names.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0);

enum class Init { glorot_uniform, zeros, ones, constant };

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;  // same shape as value; zero after every optimizer step
  bool trainable = true;
};

/// Named trainable tensors of the policy. Shapes are fixed at creation and the
/// store owns the parameters, so references handed out stay valid.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, std::size_t rows, std::size_t cols,
                    Init init = Init::glorot_uniform, T constant = T{0}, bool trainable = true);
  Parameter<T>& add(const std::string& name, Matrix<T> value, bool trainable);

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  /// Insertion order, which is also the checkpoint order.
  const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }
  std::size_t trainable_count() const;

  void zero_grad();

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }
  std::uint64_t seed() const noexcept { return seed_; }
  static constexpr Precision precision() { return precision_of<T>(); }

 private:
  std::uint64_t seed_;
  std::uint64_t step_ = 0;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-6;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::map<std::string, Matrix<T>, std::less<>> first_moment;
  std::map<std::string, Matrix<T>, std::less<>> second_moment;
};

/// Adam with bias correction and decoupled weight decay. Missing gradients
/// count as zero. Increments the store's step counter and clears gradients.
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template void adam_step<float>(ParameterStore<float>&, AdamState<float>&);
extern template void adam_step<double>(ParameterStore<double>&, AdamState<double>&);

}  // namespace memsum::ad
