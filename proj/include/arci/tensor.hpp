#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace arci {

using Shape = std::vector<int>;

// Additive mask sentinel. Large negative but finite: masked softmax logits
// underflow to exact zero weight instead of producing NaN/inf.
inline constexpr double kNegMask = -1e9;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // requires_grad or downstream of one
  std::vector<double> grad;    // sized on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
  void accumulate(std::span<const double> g);
};

}  // namespace detail

/// Dense row-major array of 64-bit floats with optional reverse-mode
/// gradient tracking. Cheap to copy (shared handle). Values are treated
/// as immutable once a tensor has been consumed by an operation; grad
/// buffers are the only state mutated afterwards.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;  // negative axis counts from the back
  std::size_t size() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> values_mut() { return node_->values; }
  double item() const;

  Tensor& set_requires_grad(bool on = true);
  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Integer grid (e.g. code ids). -1 is the pad sentinel.
struct IndexGrid {
  Shape shape;
  std::vector<int> ids;
};

/// Deterministic random source. All distributions are derived from raw
/// mt19937_64 draws by fixed arithmetic, so sequences are identical across
/// platforms for the same seed (std:: distributions are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean, double stddev);  // Box-Muller, two draws per call
  int index(int n);                           // [0, n)

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[static_cast<std::size_t>(index(i + 1))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ---- Operations. All differentiable unless noted. ----

// a [.., m, k] x b [.., k, n] -> [.., m, n]. Batch dims must match exactly,
// or either operand may omit them entirely (shared across the batch).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor narrow(const Tensor& x, int axis, int start, int length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor affine(const Tensor& x, double scale, double shift);
Tensor scale(const Tensor& x, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& bias);  // bias [d] over x [.., d]
// m.shape must be a leading prefix of x.shape; m broadcasts over the rest.
Tensor broadcast_mul(const Tensor& x, const Tensor& m);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Along `axis`: subtract-max softmax. Entries below kNegMask/2 are treated
// as masked; a fully masked slice yields all zeros (not NaN).
Tensor softmax(const Tensor& x, int axis);
Tensor sum_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
// mask.shape == x.shape truncated after `axis`; zeroes masked entries then
// sums away `axis`.
Tensor masked_sum(const Tensor& x, const Tensor& mask, int axis);

// Gathers rows of table [V, d]; ids in [0, V-1) or -1 for the reserved last
// row. Output shape = ids.shape + [d]. Gradient scatters into the table.
Tensor embedding_lookup(const Tensor& table, const IndexGrid& ids);

// Row-wise cosine similarity of a, b [N, d] -> [N]. Norms are clamped below
// at 1e-12; clamped norms are treated as constants in the gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

struct GruParams {
  Tensor w_update, w_reset, w_cand;  // input weights [d, d]
  Tensor u_update, u_reset, u_cand;  // recurrent weights [d, d]
  Tensor b_update, b_reset, b_cand;  // [d]

  static GruParams init(int dim, Rng& rng);
  static GruParams zeros(int dim);
  std::vector<Tensor> parameters() const;
};

// Standard GRU over x [B, T, d] with hidden size d and zero initial state.
// step_mask [B, T]: steps with mask 0 copy the previous hidden state.
Tensor gru_sequence(const Tensor& x, const GruParams& params, const Tensor& step_mask);

// Mean over rows of the per-row sum of stable binary cross entropy on raw
// scores: max(s,0) - s*y + log(1 + e^{-|s|}).
Tensor bce_with_logits(const Tensor& scores, const Tensor& targets);

// Mean over rows with >=1 positive of
//   sum_{i: y=1, j: y=0} max(0, 1 - (p_i - p_j)) / H,
// H = number of columns. Rows without positives are excluded.
Tensor pairwise_hinge(const Tensor& probs, const Tensor& targets);

// Reverse pass from a scalar. Accumulates into grad buffers of every
// reachable tensor that needs one; repeated calls keep accumulating.
// No-op when nothing in the graph requires gradients.
void backward(const Tensor& loss);

/// Adam over a fixed parameter list (beta1 0.9, beta2 0.999, eps 1e-8,
/// no weight decay). Missing grads count as zero.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  double lr_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace arci
