#pragma once

// Named parameters and a reverse-mode tape over the layer primitives.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wnet/layers.hpp"

namespace wnet {

/// Ordered collection of named tensors, each paired with a gradient buffer.
template <typename T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
  };

  Tensor4<T>& add(const std::string& name, int n, int h, int w, int c) {
    detail::require(!index_.count(name), "duplicate parameter name '", name, "'");
    index_[name] = entries_.size();
    entries_.push_back({name, Tensor4<T>(n, h, w, c), Tensor4<T>(n, h, w, c)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    detail::require(it != index_.end(), "unknown parameter '", name, "'");
    return it->second;
  }

  Tensor4<T>& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor4<T>& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor4<T>& grad(const std::string& name) { return entries_[index_of(name)].grad; }
  const Tensor4<T>& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.value.n, e.value.h, e.value.w, e.value.c) = e.value.template cast<U>();
    }
    return out;
  }

  bool values_equal(const ModelParams& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != o.entries_[i].name || !(entries_[i].value == o.entries_[i].value)) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records forward operations and replays their derivatives in reverse.
/// Parameter gradients accumulate into the ModelParams buffers.
template <typename T>
class Tape {
 public:
  Var input(Tensor4<T> t) {
    Node n;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Var parameter(ModelParams<T>& params, const std::string& name) {
    auto& e = params.entries()[params.index_of(name)];
    Node n;
    n.ext_value = &e.value;
    n.ext_grad = &e.grad;
    n.requires_grad = true;
    return push(std::move(n));
  }

  Var conv2d(Var x, Var w, Var b) {
    Node n = op({x, w, b});
    n.value = conv2d_forward(value(x), value(w), value(b));
    n.backward = [x, w, b](Tape& t, const Tensor4<T>& g) {
      auto grads = conv2d_backward(t.value(x), t.value(w), g);
      t.accumulate(x, std::move(grads.input));
      t.accumulate(w, std::move(grads.weight));
      t.accumulate(b, std::move(grads.bias));
    };
    return push(std::move(n));
  }

  Var relu(Var x) {
    Node n = op({x});
    n.value = relu_forward(value(x));
    n.backward = [x](Tape& t, const Tensor4<T>& g) { t.accumulate(x, relu_backward(t.value(x), g)); };
    return push(std::move(n));
  }

  Var maxpool2(Var x) {
    Node n = op({x});
    n.value = maxpool2_forward(value(x));
    n.backward = [x](Tape& t, const Tensor4<T>& g) { t.accumulate(x, maxpool2_backward(t.value(x), g)); };
    return push(std::move(n));
  }

  Var upsample2(Var x) {
    Node n = op({x});
    n.value = upsample2_forward(value(x));
    n.backward = [x](Tape& t, const Tensor4<T>& g) { t.accumulate(x, upsample2_backward(t.value(x), g)); };
    return push(std::move(n));
  }

  Var concat(Var a, Var b) {
    Node n = op({a, b});
    n.value = concat_forward(value(a), value(b));
    n.backward = [a, b](Tape& t, const Tensor4<T>& g) {
      auto [ga, gb] = concat_backward(t.value(a), t.value(b), g);
      t.accumulate(a, std::move(ga));
      t.accumulate(b, std::move(gb));
    };
    return push(std::move(n));
  }

  Var l2_normalize(Var x, double eps = 1e-8) {
    Node n = op({x});
    n.value = l2_normalize_channels(value(x), eps);
    n.backward = [x, eps](Tape& t, const Tensor4<T>& g) {
      t.accumulate(x, l2_normalize_channels_backward(t.value(x), g, eps));
    };
    return push(std::move(n));
  }

  /// Same value, no gradient flows back through it.
  Var detach(Var x) {
    Node n;
    n.value = value(x);
    return push(std::move(n));
  }

  const Tensor4<T>& value(Var v) const {
    detail::require(v.valid() && v.id < static_cast<int>(nodes_.size()), "tape variable ", v.id, " out of range");
    const Node& n = nodes_[v.id];
    return n.ext_value ? *n.ext_value : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool empty() const { return nodes_.empty(); }
  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(var) for each output and propagates to every parameter.
  /// A tape can be replayed once.
  void backward(std::vector<std::pair<Var, Tensor4<T>>> seeds) {
    detail::require(!nodes_.empty(), "backward called on an empty tape (no forward pass recorded)");
    detail::require(!consumed_, "backward already ran on this tape");
    consumed_ = true;
    for (auto& [v, g] : seeds) {
      detail::require(value(v).same_shape(g), "seed gradient ", g.shape_string(), " does not match output ",
                      value(v).shape_string());
      accumulate(v, std::move(g));
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      Tensor4<T> g = std::move(n.grad);
      n.grad = Tensor4<T>();
      n.backward(*this, g);
    }
  }

 private:
  struct Node {
    Tensor4<T> value;
    const Tensor4<T>* ext_value = nullptr;
    Tensor4<T>* ext_grad = nullptr;
    Tensor4<T> grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Tensor4<T>&)> backward;
  };

  Node op(std::initializer_list<Var> inputs) const {
    Node n;
    for (Var v : inputs) n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
    return n;
  }

  Var push(Node n) {
    detail::require(!consumed_, "cannot record on a tape after backward");
    if (!n.requires_grad) n.backward = nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(Var v, Tensor4<T>&& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.ext_grad) {
      add_into(*n.ext_grad, g);
    } else if (n.grad.empty()) {
      n.grad = std::move(g);
    } else {
      add_into(n.grad, g);
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace wnet
