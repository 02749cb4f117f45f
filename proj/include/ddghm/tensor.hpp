// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace ddghm {

/// Dense row-major matrix of 64-bit reals. Scalars are 1x1, row vectors 1xn,
/// column vectors nx1. All model numerics live in this type.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline bool is_scalar(const Tensor& t) { return t.rows() == 1 && t.cols() == 1; }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
  }
}

/// A learnable tensor with a gradient slot of identical shape. Gradients
/// accumulate across backward calls until explicitly zeroed.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named, shape-checked parameters. Iteration order is the sorted name order
/// so that optimizer updates and checkpoints are deterministic.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

  /// Registers a parameter initialized uniform(-init_bound, init_bound) from
  /// the store RNG (zeros when init_bound == 0). Names must be unique.
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 double init_bound) {
    if (params_.count(name) != 0) {
      throw std::invalid_argument("parameter already registered: " + name);
    }
    Parameter p;
    p.name = name;
    p.value.resize(rows, cols);
    if (init_bound > 0.0) {
      std::uniform_real_distribution<double> dist(-init_bound, init_bound);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) p.value(i, j) = dist(rng_);
    } else {
      p.value.setZero();
    }
    p.grad = Tensor::Zero(rows, cols);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("no such parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("no such parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grads() {
    for (auto& [name, p] : params_) p.grad.setZero();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  std::map<std::string, Parameter>& params() { return params_; }
  const std::map<std::string, Parameter>& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::map<std::string, Parameter> params_;
};

/// Adam optimizer state: per-parameter first/second moments plus step count.
class AdamState {
 public:
  AdamState(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  double learning_rate() const { return lr_; }
  long step_count() const { return step_; }

  /// Bias-corrected Adam update over every parameter, then zeroes gradients.
  void step(ParameterStore& store) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto& [name, p] : store.params()) {
      auto& mom = moments_[name];
      if (mom.first.size() == 0) {
        mom.first = Tensor::Zero(p.value.rows(), p.value.cols());
        mom.second = Tensor::Zero(p.value.rows(), p.value.cols());
      }
      require_same_shape(mom.first, p.grad, "adam_step");
      mom.first = beta1_ * mom.first + (1.0 - beta1_) * p.grad;
      mom.second = beta2_ * mom.second + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      const Tensor m_hat = mom.first / bc1;
      const Tensor v_hat = mom.second / bc2;
      p.value.array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
      p.grad.setZero();
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

inline void adam_step(ParameterStore& store, AdamState& state) { state.step(store); }

}  // namespace ddghm
