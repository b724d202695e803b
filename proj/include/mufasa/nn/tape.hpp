#pragma once

#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "mufasa/nn/tensor.hpp"

namespace mufasa::nn {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Records one forward pass. Nodes are appended in evaluation order, so a reverse sweep is a
/// valid topological order for backward(). A tape is single-threaded and single-use.
class Tape {
 public:
  using Backward =
      std::function<void(Tape&, const Tensor& out_value, const std::vector<double>& out_grad)>;

  Var constant(Tensor value);
  /// Each name maps to one node per tape; repeated lookups reuse it.
  Var parameter(const std::string& name, const Tensor& value);
  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulator for v, zero-initialized on first access.
  std::vector<double>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss);

  /// Gradients of every parameter recorded on this tape (zeros where unreached).
  Parameters gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    bool requires_grad = false;
    std::string param_name;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  bool consumed_ = false;
};

}  // namespace mufasa::nn
