#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ddtr/random.hpp"
#include "ddtr/tensor.hpp"

namespace ddtr {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool backbone = false;  // trained at the scaled backbone learning rate
};

/// Ordered registry of trainable tensors; the order defines serialization.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor, bool backbone = false);

  std::vector<NamedParameter>& items() { return items_; }
  const std::vector<NamedParameter>& items() const { return items_; }
  const NamedParameter& find(const std::string& name) const;
  std::size_t scalar_count() const;

 private:
  std::vector<NamedParameter> items_;
};

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor zeros_parameter(Shape shape);

/// y = x·W + b, W: [in×out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool backbone = false);
  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return weight.extent(0); }
  std::size_t out() const { return weight.extent(1); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

/// Two-layer ReLU feed-forward block.
struct FeedForward {
  Linear hidden;
  Linear output;

  static FeedForward create(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t hidden_dim,
                            Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Three fully connected layers with ReLU between them.
struct Mlp3 {
  Linear l1, l2, l3;

  static Mlp3 create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                     std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// 3×3 (or k×k) convolution with bias.
struct Conv2d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, bool backbone);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace ddtr
