#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/mat.hpp"

namespace socl::ten {

// A named trainable array living outside any tape. Tapes bind to it by
// reference; backward() accumulates into `grad` unless `frozen` is set.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool frozen = false;
  bool decay = true;  // subject to decoupled weight decay

  Param() = default;
  Param(std::string n, Mat v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(wd) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Mat(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
};

// Reverse-mode recorder. Ops append nodes eagerly; node ids are therefore a
// topological order and backward() walks them in reverse exactly once.
class Tape {
 public:
  // Receives the gradient flowing into the node's output and the output value.
  using BackwardFn = std::function<void(Tape&, const Mat&, const Mat&)>;

  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value) { return push(Node{std::move(value), nullptr, false, {}, nullptr}); }

  // A free input whose gradient is readable after backward().
  Var leaf(Mat value) {
    return push(Node{std::move(value), nullptr, grad_enabled_, {}, nullptr});
  }

  // Binds a parameter without copying its value. The parameter must outlive
  // the tape and must not be modified while the tape is alive.
  Var param(Param& p) {
    const bool rg = grad_enabled_ && !p.frozen;
    return push(Node{Mat{}, &p.value, rg, {}, rg ? &p : nullptr});
  }
  Var param(const Param& p) { return push(Node{Mat{}, &p.value, false, {}, nullptr}); }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first touch.
  Mat& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != value(id).shape()) n.grad = Mat(value(id).rows(), value(id).cols());
    return n.grad;
  }

  // Gradient of a node after backward(); zeros when nothing reached it.
  Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.shape() == value(v.id).shape()) return n.grad;
    return Mat(value(v.id).rows(), value(v.id).cols());
  }

  // Records an op result. `fn` is kept only if some input requires grad.
  Var record(Mat out, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
    return record(std::move(out), std::vector<std::size_t>(inputs), std::move(fn));
  }
  Var record(Mat out, const std::vector<std::size_t>& inputs, BackwardFn fn) {
    bool rg = false;
    for (std::size_t i : inputs) rg = rg || nodes_[i].requires_grad;
    return push(Node{std::move(out), nullptr, rg, rg ? std::move(fn) : BackwardFn{}, nullptr});
  }

  // Seeds d(root)/d(root) = 1 and propagates. Parameter gradients are added
  // to Param::grad.
  void backward(Var root) {
    if (root.tape != this) throw Error("backward: variable belongs to another tape");
    if (value(root.id).size() != 1) {
      throw ShapeError("backward: root must be scalar, got " + value(root.id).shape().str());
    }
    if (!nodes_[root.id].requires_grad) return;
    grad_buffer(root.id)[0] += 1.0;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad, n.value);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external;
    bool requires_grad;
    BackwardFn backward;
    Param* param;
    Mat grad{};
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }
inline double Var::item() const {
  const Mat& v = value();
  if (v.size() != 1) throw ShapeError("item: not a scalar " + v.shape().str());
  return v[0];
}

}  // namespace socl::ten
