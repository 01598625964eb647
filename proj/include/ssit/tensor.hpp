#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ssit/rng.hpp"

namespace ssit {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;
using NodeRef = std::shared_ptr<TensorNode>;

// One node of the reverse-mode graph. Ops link output nodes to their
// inputs; backward() walks the links in reverse topological order.
struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or downstream of a leaf that does
  std::vector<NodeRef> inputs;
  std::function<void(TensorNode&)> backward_fn;

  size_t numel() const { return data.size(); }
  void ensure_grad();
};

// Value-semantics handle onto a graph node. Copying a Tensor aliases the
// node; clone() makes an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, float sigma = 1.0f,
                      bool requires_grad = false);
  static Tensor trunc_normal(Shape shape, Rng& rng, float sigma,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->data.size(); }
  size_t rank() const { return node_->shape.size(); }
  size_t dim(size_t i) const { return node_->shape[i]; }

  const std::vector<float>& data() const { return node_->data; }
  // Leaf-only mutation (optimizer updates, test perturbations).
  std::vector<float>& mutable_data();
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg);
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<float>& grad() const;
  void zero_grad();

  Tensor clone(bool requires_grad = false) const;
  Tensor detach() const;  // shares nothing with the graph

  NodeRef node() const { return node_; }
  static Tensor wrap(NodeRef n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodeRef node_;
};

// ---- ops (all return fresh tensors; inputs are never mutated) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // [m x n] + [n]
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor sum(const Tensor& a);   // scalar, 64-bit accumulation
Tensor mean(const Tensor& a);  // scalar
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-6f);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& a, const std::vector<size_t>& rows);
Tensor slice_cols(const Tensor& a, size_t start, size_t len);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor l2_normalize_rows(const Tensor& a, float eps = 1e-12f);
// Flat-element gather: out.flat[i] = a.flat[index[i]]. Backward
// scatter-adds, so duplicate indices are fine.
Tensor gather_elements(const Tensor& a, const std::vector<size_t>& index,
                       Shape out_shape);
// mean over rows of -log softmax(logits)[i, target[i]]
Tensor cross_entropy_index(const Tensor& logits,
                           const std::vector<size_t>& targets);
// pixel-mean binary cross entropy, logs clamped at 1e-7
Tensor bce_mean(const Tensor& pred, const std::vector<float>& target);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every requires_grad leaf reachable from it.
void backward(const Tensor& loss);

// ---- serialization: "SSTN" little-endian tensor record ----
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace ssit
