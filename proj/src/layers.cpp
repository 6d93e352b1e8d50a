#include "ddtr/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "ddtr/ops.hpp"

namespace ddtr {

Tensor ParameterSet::add(std::string name, Tensor tensor, bool backbone) {
  for (const auto& p : items_) {
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  tensor.set_requires_grad(true);
  items_.push_back(NamedParameter{std::move(name), tensor, backbone});
  return tensor;
}

const NamedParameter& ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.size();
  return n;
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(element_count(shape));
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::parameter(std::move(shape), std::move(data));
}

Tensor zeros_parameter(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool backbone) {
  Linear l;
  l.weight = params.add(name + ".weight", xavier_uniform({in, out}, in, out, rng), backbone);
  l.bias = params.add(name + ".bias", zeros_parameter({out}), backbone);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t dim) {
  LayerNorm n;
  n.gain = params.add(name + ".gain", Tensor(Shape{dim}, 1.0));
  n.bias = params.add(name + ".bias", zeros_parameter({dim}));
  return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, x.dim() - 1, gain, bias); }

FeedForward FeedForward::create(ParameterSet& params, const std::string& name, std::size_t dim,
                                std::size_t hidden_dim, Rng& rng) {
  return FeedForward{Linear::create(params, name + ".hidden", dim, hidden_dim, rng),
                     Linear::create(params, name + ".output", hidden_dim, dim, rng)};
}

Tensor FeedForward::operator()(const Tensor& x) const { return output(relu(hidden(x))); }

Mlp3 Mlp3::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, Rng& rng) {
  Mlp3 m;
  m.l1 = Linear::create(params, name + ".l1", in, hidden, rng);
  m.l2 = Linear::create(params, name + ".l2", hidden, hidden, rng);
  m.l3 = Linear::create(params, name + ".l3", hidden, out, rng);
  return m;
}

Tensor Mlp3::operator()(const Tensor& x) const { return l3(relu(l2(relu(l1(x))))); }

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, bool backbone) {
  Conv2d c;
  // He-uniform for ReLU stacks
  const std::size_t fan_in = in * kernel * kernel;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(out * fan_in);
  for (double& v : w) v = rng.uniform(-limit, limit);
  c.weight = params.add(name + ".weight", Tensor::parameter({out, in, kernel, kernel}, std::move(w)), backbone);
  c.bias = params.add(name + ".bias", zeros_parameter({out}), backbone);
  c.stride = stride;
  c.pad = pad;
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

}  // namespace ddtr
