#include "mufasa/nn/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "mufasa/nn/tape.hpp"

namespace mufasa::nn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("tensor of shape " + shape_string(shape_) + " given " +
                                std::to_string(data_.size()) + " values");
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (const auto it = params_.find(name); it != params_.end()) return Var{it->second};
  const Var v = record(value, true, nullptr);
  nodes_[v.id].param_name = name;
  params_.emplace(name, v.id);
  return v;
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), requires_grad, {}});
  return Var{nodes_.size() - 1};
}

std::vector<double>& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  if (value(loss).size() != 1) throw std::invalid_argument("backward() needs a scalar loss");
  consumed_ = true;
  grad(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.value, n.grad);
  }
}

Parameters Tape::gradients() const {
  Parameters out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (n.grad.empty())
      out.emplace(name, Tensor(n.value.shape(), 0.0));
    else
      out.emplace(name, Tensor(n.value.shape(), n.grad));
  }
  return out;
}

}  // namespace mufasa::nn
