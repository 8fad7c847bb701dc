#include "arci/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace arci {

using detail::Node;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

// Result node wiring: needs_grad propagates from parents; the backward
// closure is dropped entirely when no parent needs gradients.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  for (const auto& t : inputs) {
    n->parents.push_back(t.node());
    if (t.node()->needs_grad) n->needs_grad = true;
  }
  if (n->needs_grad) n->backward = std::move(backward);
  return Tensor::wrap(std::move(n));
}

int norm_axis(int axis, int ndim) {
  int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(ndim));
  }
  return a;
}

// Decomposes a shape around `axis` into [outer, n, inner] strides.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  s.n = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

}  // namespace

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::constant(Shape shape, double value) {
  check_shape(shape);
  std::size_t n = numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return wrap(make_leaf(std::move(shape), std::move(values)));
}

int Tensor::dim(int axis) const { return node_->shape[norm_axis(axis, ndim())]; }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() requires a scalar, got shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->parents.empty()) throw std::invalid_argument("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  node_->needs_grad = on;
  return *this;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

// ---- Rng ----

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return mean + stddev * z;
}

int Rng::index(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::index needs n > 0");
  return static_cast<int>(next() % static_cast<std::uint64_t>(n));
}

// ---- structural ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw std::invalid_argument("matmul needs rank >= 2 inputs, got " + shape_str(sa) + " x " + shape_str(sb));
  }
  const int m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  Shape abatch(sa.begin(), sa.end() - 2);
  Shape bbatch(sb.begin(), sb.end() - 2);
  const bool a_shared = abatch.empty() && !bbatch.empty();
  const bool b_shared = bbatch.empty() && !abatch.empty();
  if (ka != kb || (!a_shared && !b_shared && abatch != bbatch)) {
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  Shape batch = a_shared ? bbatch : abatch;
  const std::size_t nb = numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(nb * static_cast<std::size_t>(m) * n);
  const std::size_t a_step = a_shared ? 0 : static_cast<std::size_t>(m) * ka;
  const std::size_t b_step = b_shared ? 0 : static_cast<std::size_t>(ka) * n;
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < nb; ++i) {
    ConstMatMap ma(pa + i * a_step, m, ka);
    ConstMatMap mb(pb + i * b_step, ka, n);
    MatMap mo(out.data() + i * static_cast<std::size_t>(m) * n, m, n);
    mo.noalias() = ma * mb;
  }

  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [an, bn, nb, m, ka, n, a_step, b_step](Node& self) {
                   const double* g = self.grad.data();
                   const std::size_t g_step = static_cast<std::size_t>(m) * n;
                   if (an->needs_grad) {
                     auto& da = an->grad_buffer();
                     for (std::size_t i = 0; i < nb; ++i) {
                       ConstMatMap mg(g + i * g_step, m, n);
                       ConstMatMap mb(bn->values.data() + i * b_step, ka, n);
                       MatMap mda(da.data() + i * a_step, m, ka);
                       mda.noalias() += mg * mb.transpose();
                     }
                   }
                   if (bn->needs_grad) {
                     auto& db = bn->grad_buffer();
                     for (std::size_t i = 0; i < nb; ++i) {
                       ConstMatMap mg(g + i * g_step, m, n);
                       ConstMatMap ma(an->values.data() + i * a_step, m, ka);
                       MatMap mdb(db.data() + i * b_step, ka, n);
                       mdb.noalias() += ma.transpose() * mg;
                     }
                   }
                 });
}

Tensor transpose_last2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("transpose_last2 needs rank >= 2, got " + shape_str(s));
  const int m = s[s.size() - 2], n = s[s.size() - 1];
  Shape out_shape = s;
  out_shape[s.size() - 2] = n;
  out_shape[s.size() - 1] = m;
  const std::size_t nb = x.size() / (static_cast<std::size_t>(m) * n);

  std::vector<double> out(x.size());
  const double* px = x.values().data();
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(m) * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[base + static_cast<std::size_t>(j) * m + i] = px[base + static_cast<std::size_t>(i) * n + j];
  }
  auto xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {x}, [xn, nb, m, n](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t base = b * static_cast<std::size_t>(m) * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
          dx[base + static_cast<std::size_t>(i) * n + j] += g[base + static_cast<std::size_t>(j) * m + i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  }
  auto xn = x.node();
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x}, [xn](Node& self) {
    if (xn->needs_grad) xn->accumulate(self.grad);
  });
}

Tensor narrow(const Tensor& x, int axis, int start, int length) {
  const int a = norm_axis(axis, x.ndim());
  const Shape& s = x.shape();
  if (start < 0 || length <= 0 || start + length > s[a]) {
    throw std::invalid_argument("narrow [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of range for axis size " +
                                std::to_string(s[a]));
  }
  Shape out_shape = s;
  out_shape[a] = length;
  const AxisSplit sp = split_axis(s, a);

  std::vector<double> out(numel(out_shape));
  const double* px = x.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = px + (o * sp.n + start) * sp.inner;
    std::copy(src, src + static_cast<std::size_t>(length) * sp.inner,
              out.data() + o * length * sp.inner);
  }
  auto xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {x}, [xn, sp, start, length](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = dx.data() + (o * sp.n + start) * sp.inner;
      const double* src = g + o * length * sp.inner;
      for (std::size_t i = 0; i < static_cast<std::size_t>(length) * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat needs at least one input");
  const int a = norm_axis(axis, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size())
      throw std::invalid_argument("concat rank mismatch: " + shape_str(s) + " vs " + shape_str(out_shape));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != a && s[i] != out_shape[i])
        throw std::invalid_argument("concat shape mismatch: " + shape_str(s) + " vs " + shape_str(out_shape));
    }
    total += s[a];
  }
  out_shape[a] = total;
  const AxisSplit osp = split_axis(out_shape, a);

  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;  // in units of axis entries
  for (const auto& p : parts) {
    const std::size_t pn = static_cast<std::size_t>(p.shape()[a]);
    const double* src = p.values().data();
    for (std::size_t o = 0; o < osp.outer; ++o) {
      std::copy(src + o * pn * osp.inner, src + (o + 1) * pn * osp.inner,
                out.data() + (o * osp.n + offset) * osp.inner);
    }
    offset += pn;
  }

  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    sizes.push_back(static_cast<std::size_t>(p.shape()[a]));
  }
  return make_op(std::move(out_shape), std::move(out), parts, [nodes, sizes, osp](Node& self) {
    const double* g = self.grad.data();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->needs_grad) {
        auto& dp = nodes[k]->grad_buffer();
        for (std::size_t o = 0; o < osp.outer; ++o) {
          const double* src = g + (o * osp.n + offset) * osp.inner;
          double* dst = dp.data() + o * sizes[k] * osp.inner;
          for (std::size_t i = 0; i < sizes[k] * osp.inner; ++i) dst[i] += src[i];
        }
      }
      offset += sizes[k];
    }
  });
}

// ---- elementwise ops ----

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->needs_grad) an->accumulate(self.grad);
    if (bn->needs_grad) bn->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->needs_grad) an->accumulate(self.grad);
    if (bn->needs_grad) {
      auto& db = bn->grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->needs_grad) {
      auto& da = an->grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn->values[i];
    }
    if (bn->needs_grad) {
      auto& db = bn->grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an->values[i];
    }
  });
}

Tensor affine(const Tensor& x, double a, double b) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.values()[i] + b;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, a](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += a * self.grad[i];
  });
}

Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(-1)) {
    throw std::invalid_argument("add_rowvec bias " + shape_str(bias.shape()) + " does not match " +
                                shape_str(x.shape()));
  }
  const std::size_t d = static_cast<std::size_t>(bias.dim(0));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + bias.values()[i % d];
  auto xn = x.node();
  auto bn = bias.node();
  return make_op(x.shape(), std::move(out), {x, bias}, [xn, bn, d](Node& self) {
    if (xn->needs_grad) xn->accumulate(self.grad);
    if (bn->needs_grad) {
      auto& db = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i % d] += self.grad[i];
    }
  });
}

Tensor broadcast_mul(const Tensor& x, const Tensor& m) {
  const Shape& sx = x.shape();
  const Shape& sm = m.shape();
  if (sm.size() > sx.size() || !std::equal(sm.begin(), sm.end(), sx.begin())) {
    throw std::invalid_argument("broadcast_mul mask " + shape_str(sm) + " is not a prefix of " +
                                shape_str(sx));
  }
  std::size_t tail = 1;
  for (std::size_t i = sm.size(); i < sx.size(); ++i) tail *= static_cast<std::size_t>(sx[i]);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * m.values()[i / tail];
  auto xn = x.node();
  auto mn = m.node();
  return make_op(sx, std::move(out), {x, m}, [xn, mn, tail](Node& self) {
    if (xn->needs_grad) {
      auto& dx = xn->grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * mn->values[i / tail];
    }
    if (mn->needs_grad) {
      auto& dm = mn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dm[i / tail] += self.grad[i] * xn->values[i];
    }
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd_from_out_and_in) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, bwd_from_out_and_in](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] += self.grad[i] * bwd_from_out_and_in(self.values[i], xn->values[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, stable_sigmoid, [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, [](double v) { return std::tanh(v); },
                  [](double y, double) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double y, double) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double, double v) { return 1.0 / v; });
}

Tensor softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisSplit sp = split_axis(x.shape(), a);
  std::vector<double> out(x.size());
  const double* px = x.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) mx = std::max(mx, px[base + i * sp.inner]);
      if (mx < kNegMask / 2) {
        for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] = 0.0;
        continue;
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(px[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= sum;
    }
  }
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, sp](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    const double* y = self.values.data();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) dot += g[base + i * sp.inner] * y[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.n; ++i) {
          const std::size_t k = base + i * sp.inner;
          dx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor sum_axis(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisSplit sp = split_axis(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + a);
  if (out_shape.empty()) out_shape = {1};

  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double* px = x.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += px[(o * sp.n + i) * sp.inner + in];

  auto xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {x}, [xn, sp](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.n; ++i)
        for (std::size_t in = 0; in < sp.inner; ++in)
          dx[(o * sp.n + i) * sp.inner + in] += g[o * sp.inner + in];
  });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return make_op({1}, {s}, {x}, [xn](Node& self) {
    if (!xn->needs_grad) return;
    auto& dx = xn->grad_buffer();
    for (double& v : dx) v += self.grad[0];
  });
}

Tensor masked_sum(const Tensor& x, const Tensor& mask, int axis) {
  const int a = norm_axis(axis, x.ndim());
  if (mask.ndim() != a + 1) {
    throw std::invalid_argument("masked_sum mask rank " + std::to_string(mask.ndim()) +
                                " must equal axis+1 = " + std::to_string(a + 1));
  }
  return sum_axis(broadcast_mul(x, mask), a);
}

Tensor embedding_lookup(const Tensor& table, const IndexGrid& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding table must be 2-D");
  const int rows = table.dim(0);
  const int d = table.dim(1);
  if (numel(ids.shape) != ids.ids.size()) throw std::invalid_argument("IndexGrid shape/ids mismatch");

  Shape out_shape = ids.shape;
  out_shape.push_back(d);
  std::vector<double> out(ids.ids.size() * static_cast<std::size_t>(d));
  std::vector<int> resolved(ids.ids.size());
  for (std::size_t i = 0; i < ids.ids.size(); ++i) {
    int id = ids.ids[i];
    if (id == -1) {
      id = rows - 1;  // reserved pad row
    } else if (id < 0 || id >= rows - 1) {
      throw std::invalid_argument("code id " + std::to_string(id) + " out of range [0, " +
                                  std::to_string(rows - 1) + ")");
    }
    resolved[i] = id;
    const double* src = table.values().data() + static_cast<std::size_t>(id) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  auto tn = table.node();
  return make_op(std::move(out_shape), std::move(out), {table}, [tn, resolved, d](Node& self) {
    if (!tn->needs_grad) return;
    auto& dt = tn->grad_buffer();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < resolved.size(); ++i) {
      double* dst = dt.data() + static_cast<std::size_t>(resolved[i]) * d;
      for (int j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "cosine_similarity");
  if (a.ndim() != 2) throw std::invalid_argument("cosine_similarity expects [N, d] inputs");
  const int n = a.dim(0), d = a.dim(1);
  constexpr double kNormFloor = 1e-12;

  std::vector<double> out(n), na(n), nb(n);
  for (int r = 0; r < n; ++r) {
    const double* pa = a.values().data() + static_cast<std::size_t>(r) * d;
    const double* pb = b.values().data() + static_cast<std::size_t>(r) * d;
    double dot = 0, qa = 0, qb = 0;
    for (int j = 0; j < d; ++j) {
      dot += pa[j] * pb[j];
      qa += pa[j] * pa[j];
      qb += pb[j] * pb[j];
    }
    na[r] = std::max(std::sqrt(qa), kNormFloor);
    nb[r] = std::max(std::sqrt(qb), kNormFloor);
    out[r] = dot / (na[r] * nb[r]);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op({n}, std::move(out), {a, b}, [an, bn, n, d, na, nb](Node& self) {
    for (int r = 0; r < n; ++r) {
      const double g = self.grad[r];
      if (g == 0.0) continue;
      const double c = self.values[r];
      const double* pa = an->values.data() + static_cast<std::size_t>(r) * d;
      const double* pb = bn->values.data() + static_cast<std::size_t>(r) * d;
      const double inv = 1.0 / (na[r] * nb[r]);
      if (an->needs_grad) {
        auto& da = an->grad_buffer();
        double* pda = da.data() + static_cast<std::size_t>(r) * d;
        const bool clamped = na[r] <= kNormFloor;
        for (int j = 0; j < d; ++j)
          pda[j] += g * (pb[j] * inv - (clamped ? 0.0 : c * pa[j] / (na[r] * na[r])));
      }
      if (bn->needs_grad) {
        auto& db = bn->grad_buffer();
        double* pdb = db.data() + static_cast<std::size_t>(r) * d;
        const bool clamped = nb[r] <= kNormFloor;
        for (int j = 0; j < d; ++j)
          pdb[j] += g * (pa[j] * inv - (clamped ? 0.0 : c * pb[j] / (nb[r] * nb[r])));
      }
    }
  });
}

// ---- GRU ----

GruParams GruParams::init(int dim, Rng& rng) {
  auto mat = [&](int r, int c) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(r));
    std::vector<double> v(static_cast<std::size_t>(r) * c);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from({r, c}, std::move(v)).set_requires_grad();
  };
  GruParams p;
  p.w_update = mat(dim, dim);
  p.w_reset = mat(dim, dim);
  p.w_cand = mat(dim, dim);
  p.u_update = mat(dim, dim);
  p.u_reset = mat(dim, dim);
  p.u_cand = mat(dim, dim);
  p.b_update = Tensor::zeros({dim}).set_requires_grad();
  p.b_reset = Tensor::zeros({dim}).set_requires_grad();
  p.b_cand = Tensor::zeros({dim}).set_requires_grad();
  return p;
}

GruParams GruParams::zeros(int dim) {
  GruParams p;
  for (Tensor* t : {&p.w_update, &p.w_reset, &p.w_cand, &p.u_update, &p.u_reset, &p.u_cand}) {
    *t = Tensor::zeros({dim, dim}).set_requires_grad();
  }
  for (Tensor* t : {&p.b_update, &p.b_reset, &p.b_cand}) {
    *t = Tensor::zeros({dim}).set_requires_grad();
  }
  return p;
}

std::vector<Tensor> GruParams::parameters() const {
  return {w_update, w_reset, w_cand, u_update, u_reset, u_cand, b_update, b_reset, b_cand};
}

Tensor gru_sequence(const Tensor& x, const GruParams& params, const Tensor& step_mask) {
  if (x.ndim() != 3) throw std::invalid_argument("gru_sequence expects [B, T, d], got " + shape_str(x.shape()));
  const int batch = x.dim(0), steps = x.dim(1), dim = x.dim(2);
  if (step_mask.ndim() != 2 || step_mask.dim(0) != batch || step_mask.dim(1) != steps) {
    throw std::invalid_argument("gru_sequence mask " + shape_str(step_mask.shape()) +
                                " does not match input " + shape_str(x.shape()));
  }
  Tensor h = Tensor::zeros({batch, dim});
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    Tensor xt = reshape(narrow(x, 1, t, 1), {batch, dim});
    Tensor mt = reshape(narrow(step_mask, 1, t, 1), {batch});
    Tensor z = sigmoid(add_rowvec(add(matmul(xt, params.w_update), matmul(h, params.u_update)),
                                  params.b_update));
    Tensor r = sigmoid(add_rowvec(add(matmul(xt, params.w_reset), matmul(h, params.u_reset)),
                                  params.b_reset));
    Tensor cand = tanh(add_rowvec(add(matmul(xt, params.w_cand), matmul(mul(r, h), params.u_cand)),
                                  params.b_cand));
    Tensor h_next = add(mul(affine(z, -1.0, 1.0), h), mul(z, cand));
    // Masked steps carry the previous state forward.
    h = add(broadcast_mul(h_next, mt), broadcast_mul(h, affine(mt, -1.0, 1.0)));
    outputs.push_back(reshape(h, {batch, 1, dim}));
  }
  return concat(outputs, 1);
}

// ---- objectives (fused kernels) ----

Tensor bce_with_logits(const Tensor& scores, const Tensor& targets) {
  check_same_shape(scores, targets, "bce_with_logits");
  if (scores.ndim() != 2) throw std::invalid_argument("bce_with_logits expects [B, H]");
  const int batch = scores.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores.values()[i];
    const double y = targets.values()[i];
    total += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  total /= batch;
  auto sn = scores.node();
  auto tn = targets.node();
  return make_op({1}, {total}, {scores, targets}, [sn, tn, batch](Node& self) {
    if (!sn->needs_grad) return;
    auto& ds = sn->grad_buffer();
    const double g = self.grad[0] / batch;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      ds[i] += g * (stable_sigmoid(sn->values[i]) - tn->values[i]);
    }
  });
}

Tensor pairwise_hinge(const Tensor& probs, const Tensor& targets) {
  check_same_shape(probs, targets, "pairwise_hinge");
  if (probs.ndim() != 2) throw std::invalid_argument("pairwise_hinge expects [B, H]");
  const int batch = probs.dim(0), width = probs.dim(1);

  int valid_rows = 0;
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double* p = probs.values().data() + static_cast<std::size_t>(b) * width;
    const double* y = targets.values().data() + static_cast<std::size_t>(b) * width;
    bool has_pos = false;
    for (int i = 0; i < width; ++i) has_pos = has_pos || y[i] == 1.0;
    if (!has_pos) continue;
    ++valid_rows;
    for (int i = 0; i < width; ++i) {
      if (y[i] != 1.0) continue;
      for (int j = 0; j < width; ++j) {
        if (y[j] != 0.0) continue;
        total += std::max(0.0, 1.0 - (p[i] - p[j]));
      }
    }
  }
  const double denom = valid_rows > 0 ? static_cast<double>(valid_rows) * width : 1.0;
  total /= denom;

  auto pn = probs.node();
  auto tn = targets.node();
  return make_op({1}, {total}, {probs, targets}, [pn, tn, batch, width, denom](Node& self) {
    if (!pn->needs_grad) return;
    auto& dp = pn->grad_buffer();
    const double g = self.grad[0] / denom;
    for (int b = 0; b < batch; ++b) {
      const double* p = pn->values.data() + static_cast<std::size_t>(b) * width;
      const double* y = tn->values.data() + static_cast<std::size_t>(b) * width;
      bool has_pos = false;
      for (int i = 0; i < width; ++i) has_pos = has_pos || y[i] == 1.0;
      if (!has_pos) continue;
      double* d = dp.data() + static_cast<std::size_t>(b) * width;
      for (int i = 0; i < width; ++i) {
        if (y[i] != 1.0) continue;
        for (int j = 0; j < width; ++j) {
          if (y[j] != 0.0) continue;
          if (1.0 - (p[i] - p[j]) > 0.0) {
            d[i] -= g;
            d[j] += g;
          }
        }
      }
    }
  });
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (!root->needs_grad) return;

  // Iterative post-order DFS over parents that need gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->needs_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(std::vector<double>{1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Contract: every reachable requires_grad tensor ends with a full-shape grad.
  for (Node* node : order) {
    if (node->requires_grad) node->grad_buffer();
  }
}

// ---- Adam ----

Adam::Adam(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++step_count_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto vals = params_[i].values_mut();
    auto grad = params_[i].grad();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m_[i][k] = kBeta1 * m_[i][k] + (1.0 - kBeta1) * g;
      v_[i][k] = kBeta2 * v_[i][k] + (1.0 - kBeta2) * g * g;
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      vals[k] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

}  // namespace arci
