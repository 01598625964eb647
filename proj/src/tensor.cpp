#include "ssit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ssit {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

NodeRef make_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return n;
}

NodeRef make_op(Shape shape, std::vector<float> data,
                std::vector<NodeRef> inputs,
                std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  for (const auto& in : inputs)
    if (in->needs_grad) n->needs_grad = true;
  n->inputs = std::move(inputs);
  if (n->needs_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void check_finite_shape(const Shape& s) {
  for (size_t d : s)
    if (d == 0) throw std::invalid_argument("tensor: zero dimension");
}

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(const float* a, const float* b, float* c, size_t m, size_t k,
             size_t n) {
  for (size_t i = 0; i < m; ++i) {
    float* cr = c + i * n;
    const float* ar = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const float av = ar[p];
      const float* br = b + p * n;
      for (size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c (m x n) += a (m x k) * b^T, b stored (n x k)
void gemm_nt(const float* a, const float* b, float* c, size_t m, size_t k,
             size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const float* ar = a + i * k;
    float* cr = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const float* br = b + j * k;
      // Parallel partial sums keep the reduction vectorizable without
      // reassociation flags; the combine order is fixed, so results stay
      // deterministic.
      float lanes[16] = {0};
      size_t p = 0;
      for (; p + 16 <= k; p += 16)
        for (size_t u = 0; u < 16; ++u) lanes[u] += ar[p + u] * br[p + u];
      float acc = 0.0f;
      for (size_t u = 0; u < 16; ++u) acc += lanes[u];
      for (; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

// c (m x n) += a^T * b, a stored (k x m), b stored (k x n)
void gemm_tn(const float* a, const float* b, float* c, size_t m, size_t k,
             size_t n) {
  for (size_t p = 0; p < k; ++p) {
    const float* ar = a + p * m;
    const float* br = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const float av = ar[i];
      if (av == 0.0f) continue;
      float* cr = c + i * n;
      for (size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
  check_finite_shape(shape);
  size_t n = shape_numel(shape);
  node_ = make_leaf(std::move(shape), std::vector<float>(n, fill),
                    requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  check_finite_shape(shape);
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("from_data: " + shape_str(shape) +
                                " does not hold " + std::to_string(data.size()) +
                                " values");
  Tensor t;
  t.node_ = make_leaf(std::move(shape), std::move(data), requires_grad);
  return t;
}

Tensor Tensor::scalar(float v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float sigma, bool requires_grad) {
  size_t n = shape_numel(shape);
  std::vector<float> d(n);
  for (auto& v : d) v = static_cast<float>(rng.normal() * sigma);
  return from_data(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, float sigma,
                            bool requires_grad) {
  size_t n = shape_numel(shape);
  std::vector<float> d(n);
  for (auto& v : d) v = static_cast<float>(rng.truncated_normal(sigma));
  return from_data(std::move(shape), std::move(d), requires_grad);
}

std::vector<float>& Tensor::mutable_data() {
  if (node_->backward_fn)
    throw std::logic_error("mutable_data: only leaves may be mutated");
  return node_->data;
}

float Tensor::item() const {
  if (numel() != 1)
    throw std::logic_error("item: tensor has " + std::to_string(numel()) +
                           " elements");
  return node_->data[0];
}

void Tensor::set_requires_grad(bool rg) {
  if (!node_->inputs.empty())
    throw std::logic_error("set_requires_grad: not a leaf");
  node_->requires_grad = rg;
  node_->needs_grad = rg;
}

const std::vector<float>& Tensor::grad() const {
  if (node_->grad.empty())
    throw std::logic_error("grad: no gradient accumulated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone(bool requires_grad) const {
  return from_data(node_->shape, node_->data, requires_grad);
}

Tensor Tensor::detach() const { return from_data(node_->shape, node_->data); }

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  NodeRef an = a.node(), bn = b.node();
  return Tensor::wrap(make_op(
      {m, n}, std::move(out), {an, bn}, [m, k, n](TensorNode& node) {
        const auto& an = node.inputs[0];
        const auto& bn = node.inputs[1];
        if (an->needs_grad) {
          an->ensure_grad();
          gemm_nt(node.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
        }
        if (bn->needs_grad) {
          bn->ensure_grad();
          gemm_tn(an->data.data(), node.grad.data(), bn->grad.data(), k, m, n);
        }
      }));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
  const size_t m = a.dim(0), n = a.dim(1);
  std::vector<float> out(m * n);
  const auto& src = a.data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return Tensor::wrap(
      make_op({n, m}, std::move(out), {a.node()}, [m, n](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j)
            in->grad[i * n + j] += node.grad[j * m + i];
      }));
}

// ------------------------------------------------------------ elementwise

namespace {

Tensor binary_same_shape(const char* name, const Tensor& a, const Tensor& b,
                         float (*fwd)(float, float),
                         void (*bwd)(float, float, float, float&, float&)) {
  if (a.shape() != b.shape()) shape_error(name, a.shape(), b.shape());
  const size_t n = a.numel();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  return Tensor::wrap(make_op(
      a.shape(), std::move(out), {a.node(), b.node()}, [bwd](TensorNode& node) {
        auto& an = node.inputs[0];
        auto& bn = node.inputs[1];
        const bool ga = an->needs_grad, gb = bn->needs_grad;
        if (ga) an->ensure_grad();
        if (gb) bn->ensure_grad();
        float dummy = 0.0f;
        for (size_t i = 0; i < node.data.size(); ++i) {
          float da = 0.0f, db = 0.0f;
          bwd(an->data[i], bn->data[i], node.grad[i], da, db);
          if (ga) an->grad[i] += da;
          if (gb) bn->grad[i] += db;
        }
        (void)dummy;
      }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](float x, float y) { return x + y; },
      [](float, float, float g, float& da, float& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](float x, float y) { return x - y; },
      [](float, float, float g, float& da, float& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "mul", a, b, [](float x, float y) { return x * y; },
      [](float x, float y, float g, float& da, float& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.dim(0) != a.dim(1))
    shape_error("add_rowvec", a.shape(), bias.shape());
  const size_t m = a.dim(0), n = a.dim(1);
  std::vector<float> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      out[i * n + j] = a.data()[i * n + j] + bias.data()[j];
  return Tensor::wrap(make_op({m, n}, std::move(out), {a.node(), bias.node()},
                              [m, n](TensorNode& node) {
                                auto& an = node.inputs[0];
                                auto& bn = node.inputs[1];
                                if (an->needs_grad) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < m * n; ++i)
                                    an->grad[i] += node.grad[i];
                                }
                                if (bn->needs_grad) {
                                  bn->ensure_grad();
                                  for (size_t i = 0; i < m; ++i)
                                    for (size_t j = 0; j < n; ++j)
                                      bn->grad[j] += node.grad[i * n + j];
                                }
                              }));
}

Tensor scale(const Tensor& a, float c) {
  const size_t n = a.numel();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  return Tensor::wrap(
      make_op(a.shape(), std::move(out), {a.node()}, [c](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        for (size_t i = 0; i < node.data.size(); ++i)
          in->grad[i] += node.grad[i] * c;
      }));
}

Tensor add_scalar(const Tensor& a, float c) {
  const size_t n = a.numel();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] + c;
  return Tensor::wrap(
      make_op(a.shape(), std::move(out), {a.node()}, [](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        for (size_t i = 0; i < node.data.size(); ++i)
          in->grad[i] += node.grad[i];
      }));
}

// ------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return Tensor::wrap(make_op({1}, {static_cast<float>(acc)}, {a.node()},
                              [](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                const float g = node.grad[0];
                                for (auto& gv : in->grad) gv += g;
                              }));
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const size_t n = a.numel();
  acc /= static_cast<double>(n);
  return Tensor::wrap(make_op({1}, {static_cast<float>(acc)}, {a.node()},
                              [n](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                const float g =
                                    node.grad[0] / static_cast<float>(n);
                                for (auto& gv : in->grad) gv += g;
                              }));
}

// ------------------------------------------------------------ activations

Tensor gelu(const Tensor& a) {
  constexpr float kS = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kC = 0.044715f;
  const size_t n = a.numel();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) {
    const float x = a.data()[i];
    out[i] = 0.5f * x * (1.0f + std::tanh(kS * (x + kC * x * x * x)));
  }
  return Tensor::wrap(
      make_op(a.shape(), std::move(out), {a.node()}, [](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        for (size_t i = 0; i < node.data.size(); ++i) {
          const float x = in->data[i];
          const float u = kS * (x + kC * x * x * x);
          const float t = std::tanh(u);
          const float du = kS * (1.0f + 3.0f * kC * x * x);
          const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
          in->grad[i] += node.grad[i] * d;
        }
      }));
}

Tensor sigmoid(const Tensor& a) {
  const size_t n = a.numel();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i)
    out[i] = 1.0f / (1.0f + std::exp(-a.data()[i]));
  return Tensor::wrap(
      make_op(a.shape(), std::move(out), {a.node()}, [](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        for (size_t i = 0; i < node.data.size(); ++i) {
          const float y = node.data[i];
          in->grad[i] += node.grad[i] * y * (1.0f - y);
        }
      }));
}

Tensor softmax(const Tensor& a, int axis) {
  const int rank = static_cast<int>(a.rank());
  int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank)
    throw std::invalid_argument("softmax: axis out of range");
  if (ax != rank - 1) {
    if (rank != 2)
      throw std::invalid_argument("softmax: non-last axis only for rank 2");
    return transpose(softmax(transpose(a), -1));
  }
  const size_t cols = a.dim(rank - 1);
  const size_t rows = a.numel() / cols;
  std::vector<float> out(a.numel());
  for (size_t r = 0; r < rows; ++r) {
    const float* x = a.data().data() + r * cols;
    float* y = out.data() + r * cols;
    float mx = x[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      const double e = std::exp(static_cast<double>(x[j]) - mx);
      y[j] = static_cast<float>(e);
      s += e;
    }
    const double inv = 1.0 / s;
    for (size_t j = 0; j < cols; ++j)
      y[j] = static_cast<float>(y[j] * inv);
  }
  return Tensor::wrap(make_op(a.shape(), std::move(out), {a.node()},
                              [rows, cols](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                for (size_t r = 0; r < rows; ++r) {
                                  const float* y = node.data.data() + r * cols;
                                  const float* gy = node.grad.data() + r * cols;
                                  float* gx = in->grad.data() + r * cols;
                                  double dot = 0.0;
                                  for (size_t j = 0; j < cols; ++j)
                                    dot += static_cast<double>(y[j]) * gy[j];
                                  for (size_t j = 0; j < cols; ++j)
                                    gx[j] += y[j] * (gy[j] -
                                                     static_cast<float>(dot));
                                }
                              }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  const size_t cols = x.dim(x.rank() - 1);
  if (cols < 2)
    throw std::invalid_argument("layer_norm: normalized axis length >= 2");
  if (gamma.numel() != cols || beta.numel() != cols)
    shape_error("layer_norm", x.shape(), gamma.shape());
  const size_t rows = x.numel() / cols;
  std::vector<float> out(x.numel());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const float* xi = x.data().data() + r * cols;
    double m = 0.0;
    for (size_t j = 0; j < cols; ++j) m += xi[j];
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      const double d = xi[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<float>(is);
    for (size_t j = 0; j < cols; ++j) {
      const float h = static_cast<float>((xi[j] - m) * is);
      (*xhat)[r * cols + j] = h;
      out[r * cols + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return Tensor::wrap(make_op(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [rows, cols, xhat, inv_std](TensorNode& node) {
        auto& xn = node.inputs[0];
        auto& gn = node.inputs[1];
        auto& bn = node.inputs[2];
        if (gn->needs_grad) gn->ensure_grad();
        if (bn->needs_grad) bn->ensure_grad();
        if (xn->needs_grad) xn->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
          const float* gy = node.grad.data() + r * cols;
          const float* h = xhat->data() + r * cols;
          if (gn->needs_grad || bn->needs_grad) {
            for (size_t j = 0; j < cols; ++j) {
              if (gn->needs_grad) gn->grad[j] += gy[j] * h[j];
              if (bn->needs_grad) bn->grad[j] += gy[j];
            }
          }
          if (xn->needs_grad) {
            // dx = (g*gy - mean(g*gy) - h * mean(g*gy*h)) * inv_std
            double m1 = 0.0, m2 = 0.0;
            for (size_t j = 0; j < cols; ++j) {
              const double t = static_cast<double>(gn->data[j]) * gy[j];
              m1 += t;
              m2 += t * h[j];
            }
            m1 /= static_cast<double>(cols);
            m2 /= static_cast<double>(cols);
            float* gx = xn->grad.data() + r * cols;
            const float is = (*inv_std)[r];
            for (size_t j = 0; j < cols; ++j) {
              const double t = static_cast<double>(gn->data[j]) * gy[j];
              gx[j] += static_cast<float>((t - m1 - h[j] * m2) * is);
            }
          }
        }
      }));
}

// --------------------------------------------------------------- shaping

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_error("reshape", a.shape(), shape);
  std::vector<float> out = a.data();
  return Tensor::wrap(
      make_op(std::move(shape), std::move(out), {a.node()},
              [](TensorNode& node) {
                auto& in = node.inputs[0];
                in->ensure_grad();
                for (size_t i = 0; i < node.data.size(); ++i)
                  in->grad[i] += node.grad[i];
              }));
}

Tensor gather_rows(const Tensor& a, const std::vector<size_t>& rows) {
  if (a.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 only");
  const size_t n = a.dim(1);
  for (size_t r : rows)
    if (r >= a.dim(0))
      throw std::out_of_range("gather_rows: index " + std::to_string(r) +
                              " out of range for " + shape_str(a.shape()));
  std::vector<float> out(rows.size() * n);
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.data() + i * n, a.data().data() + rows[i] * n,
                n * sizeof(float));
  auto idx = std::make_shared<std::vector<size_t>>(rows);
  return Tensor::wrap(make_op({rows.size(), n}, std::move(out), {a.node()},
                              [idx, n](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                for (size_t i = 0; i < idx->size(); ++i) {
                                  float* dst = in->grad.data() + (*idx)[i] * n;
                                  const float* g = node.grad.data() + i * n;
                                  for (size_t j = 0; j < n; ++j) dst[j] += g[j];
                                }
                              }));
}

Tensor slice_cols(const Tensor& a, size_t start, size_t len) {
  if (a.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 only");
  const size_t m = a.dim(0), n = a.dim(1);
  if (start + len > n)
    throw std::out_of_range("slice_cols: [" + std::to_string(start) + "," +
                            std::to_string(start + len) + ") exceeds " +
                            std::to_string(n));
  std::vector<float> out(m * len);
  for (size_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * len, a.data().data() + i * n + start,
                len * sizeof(float));
  return Tensor::wrap(make_op({m, len}, std::move(out), {a.node()},
                              [m, n, start, len](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                for (size_t i = 0; i < m; ++i) {
                                  float* dst = in->grad.data() + i * n + start;
                                  const float* g = node.grad.data() + i * len;
                                  for (size_t j = 0; j < len; ++j)
                                    dst[j] += g[j];
                                }
                              }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const size_t n = parts[0].dim(1);
  size_t m = 0;
  std::vector<NodeRef> nodes;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != n)
      shape_error("concat_rows", parts[0].shape(), p.shape());
    m += p.dim(0);
    nodes.push_back(p.node());
  }
  std::vector<float> out;
  out.reserve(m * n);
  for (const auto& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::wrap(
      make_op({m, n}, std::move(out), std::move(nodes), [](TensorNode& node) {
        size_t off = 0;
        for (auto& in : node.inputs) {
          if (in->needs_grad) {
            in->ensure_grad();
            for (size_t i = 0; i < in->data.size(); ++i)
              in->grad[i] += node.grad[off + i];
          }
          off += in->data.size();
        }
      }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const size_t m = parts[0].dim(0);
  size_t n = 0;
  std::vector<NodeRef> nodes;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m)
      shape_error("concat_cols", parts[0].shape(), p.shape());
    n += p.dim(1);
    nodes.push_back(p.node());
  }
  std::vector<float> out(m * n);
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t w = p.dim(1);
    for (size_t i = 0; i < m; ++i)
      std::memcpy(out.data() + i * n + off, p.data().data() + i * w,
                  w * sizeof(float));
    off += w;
  }
  return Tensor::wrap(
      make_op({m, n}, std::move(out), std::move(nodes), [m, n](TensorNode& node) {
        size_t off = 0;
        for (auto& in : node.inputs) {
          const size_t w = in->shape[1];
          if (in->needs_grad) {
            in->ensure_grad();
            for (size_t i = 0; i < m; ++i) {
              const float* g = node.grad.data() + i * n + off;
              float* dst = in->grad.data() + i * w;
              for (size_t j = 0; j < w; ++j) dst[j] += g[j];
            }
          }
          off += w;
        }
      }));
}

Tensor l2_normalize_rows(const Tensor& a, float eps) {
  if (a.rank() != 2)
    throw std::invalid_argument("l2_normalize_rows: rank-2 only");
  const size_t m = a.dim(0), n = a.dim(1);
  std::vector<float> out(m * n);
  auto norms = std::make_shared<std::vector<float>>(m);
  for (size_t i = 0; i < m; ++i) {
    const float* x = a.data().data() + i * n;
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += static_cast<double>(x[j]) * x[j];
    const float nr = std::max(static_cast<float>(std::sqrt(s)), eps);
    (*norms)[i] = nr;
    for (size_t j = 0; j < n; ++j) out[i * n + j] = x[j] / nr;
  }
  return Tensor::wrap(make_op({m, n}, std::move(out), {a.node()},
                              [m, n, norms](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                for (size_t i = 0; i < m; ++i) {
                                  const float* y = node.data.data() + i * n;
                                  const float* gy = node.grad.data() + i * n;
                                  float* gx = in->grad.data() + i * n;
                                  double dot = 0.0;
                                  for (size_t j = 0; j < n; ++j)
                                    dot += static_cast<double>(y[j]) * gy[j];
                                  const float nr = (*norms)[i];
                                  for (size_t j = 0; j < n; ++j)
                                    gx[j] += (gy[j] -
                                              y[j] * static_cast<float>(dot)) /
                                             nr;
                                }
                              }));
}

Tensor gather_elements(const Tensor& a, const std::vector<size_t>& index,
                       Shape out_shape) {
  if (shape_numel(out_shape) != index.size())
    throw std::invalid_argument("gather_elements: index count vs shape");
  for (size_t i : index)
    if (i >= a.numel())
      throw std::out_of_range("gather_elements: flat index out of range");
  std::vector<float> out(index.size());
  for (size_t i = 0; i < index.size(); ++i) out[i] = a.data()[index[i]];
  auto idx = std::make_shared<std::vector<size_t>>(index);
  return Tensor::wrap(make_op(std::move(out_shape), std::move(out), {a.node()},
                              [idx](TensorNode& node) {
                                auto& in = node.inputs[0];
                                in->ensure_grad();
                                for (size_t i = 0; i < idx->size(); ++i)
                                  in->grad[(*idx)[i]] += node.grad[i];
                              }));
}

Tensor cross_entropy_index(const Tensor& logits,
                           const std::vector<size_t>& targets) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy_index: rank-2 only");
  const size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b)
    throw std::invalid_argument("cross_entropy_index: " + std::to_string(b) +
                                " rows vs " + std::to_string(targets.size()) +
                                " targets");
  for (size_t t : targets)
    if (t >= c) throw std::out_of_range("cross_entropy_index: target class");
  auto probs = std::make_shared<std::vector<float>>(b * c);
  double total = 0.0;
  for (size_t i = 0; i < b; ++i) {
    const float* x = logits.data().data() + i * c;
    float mx = x[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (size_t j = 0; j < c; ++j)
      s += std::exp(static_cast<double>(x[j]) - mx);
    const double lse = std::log(s) + mx;
    total += lse - x[targets[i]];
    for (size_t j = 0; j < c; ++j)
      (*probs)[i * c + j] =
          static_cast<float>(std::exp(static_cast<double>(x[j]) - lse));
  }
  total /= static_cast<double>(b);
  auto tgt = std::make_shared<std::vector<size_t>>(targets);
  return Tensor::wrap(make_op(
      {1}, {static_cast<float>(total)}, {logits.node()},
      [b, c, probs, tgt](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        const float g = node.grad[0] / static_cast<float>(b);
        for (size_t i = 0; i < b; ++i) {
          float* gx = in->grad.data() + i * c;
          const float* p = probs->data() + i * c;
          for (size_t j = 0; j < c; ++j) gx[j] += g * p[j];
          gx[(*tgt)[i]] -= g;
        }
      }));
}

Tensor bce_mean(const Tensor& pred, const std::vector<float>& target) {
  constexpr float kClamp = 1e-7f;
  const size_t n = pred.numel();
  if (target.size() != n)
    throw std::invalid_argument("bce_mean: prediction " +
                                shape_str(pred.shape()) + " vs " +
                                std::to_string(target.size()) + " targets");
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double p = pred.data()[i];
    const double y = target[i];
    total -= y * std::log(std::max(p, static_cast<double>(kClamp))) +
             (1.0 - y) * std::log(std::max(1.0 - p,
                                           static_cast<double>(kClamp)));
  }
  total /= static_cast<double>(n);
  auto tgt = std::make_shared<std::vector<float>>(target);
  return Tensor::wrap(make_op(
      {1}, {static_cast<float>(total)}, {pred.node()},
      [n, tgt](TensorNode& node) {
        auto& in = node.inputs[0];
        in->ensure_grad();
        const float g = node.grad[0] / static_cast<float>(n);
        for (size_t i = 0; i < n; ++i) {
          const float p = in->data[i];
          const float y = (*tgt)[i];
          float d = 0.0f;
          if (p > kClamp) d -= y / p;
          if (1.0f - p > kClamp) d += (1.0f - y) / (1.0f - p);
          in->grad[i] += g * d;
        }
      }));
}

// --------------------------------------------------------------- backward

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                           shape_str(loss.shape()));
  if (!loss.node()->needs_grad) return;  // nothing requires grad

  // Post-order DFS; the resulting order is topological and fully
  // determined by graph structure, so replays are bit-identical.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next++].get();
      if (child->needs_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ----------------------------------------------------------- serialization

namespace {

constexpr char kTensorMagic[4] = {'S', 'S', 'T', 'N'};
constexpr uint32_t kTensorVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("tensor record: truncated");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  write_le<uint32_t>(os, kTensorVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (size_t d : t.shape()) write_le<uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw std::runtime_error("tensor record: bad magic");
  const uint32_t version = read_le<uint32_t>(is);
  if (version != kTensorVersion)
    throw std::runtime_error("tensor record: unsupported version " +
                             std::to_string(version));
  const uint32_t rank = read_le<uint32_t>(is);
  if (rank > 8) throw std::runtime_error("tensor record: implausible rank");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<size_t>(read_le<uint64_t>(is));
  const size_t n = shape_numel(shape);
  std::vector<float> data(n);
  if (!is.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(n * sizeof(float))))
    throw std::runtime_error("tensor record: truncated payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_tensor(is);
}

}  // namespace ssit
