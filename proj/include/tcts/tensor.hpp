#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tcts::ad {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);

// Dense double-precision tensor. Values are written once by the op that
// creates the tensor; the gradient buffer is allocated lazily during the
// backward pass and accumulates additively across uses (and across graphs,
// until sgd_step clears it).
class Tensor {
public:
  Tensor(Shape shape, std::vector<double> values);

  static std::shared_ptr<Tensor> zeros(Shape shape);
  static std::shared_ptr<Tensor> full(Shape shape, double v);
  static std::shared_ptr<Tensor> from(Shape shape, std::vector<double> values);
  static std::shared_ptr<Tensor> scalar(double v);

  const Shape& shape() const { return shape_; }
  size_t size() const { return values_.size(); }
  size_t rank() const { return shape_.size(); }
  size_t rows() const;  // rank-2 helper
  size_t cols() const;

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  double item() const;  // scalar-shaped only

  bool has_grad() const { return grad_.has_value(); }
  std::vector<double>& grad();              // allocates zeros on first touch
  const std::vector<double>& grad_view() const;  // throws if absent
  std::vector<double> grad_or_zeros() const;
  void clear_grad() { grad_.reset(); }

  // Constants (inputs, masks, labels) opt out of gradient accumulation.
  bool is_const = false;

private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

using TensorPtr = std::shared_ptr<Tensor>;

// Tape of executed differentiable operations, rebuilt per forward pass.
// Single-threaded; distinct Graphs may live on distinct threads.
class Graph {
public:
  // Elementwise / linear algebra primitives -------------------------------
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr scale(const TensorPtr& a, double c);
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr add_rows(const TensorPtr& m, const TensorPtr& row);  // [N,C]+[1,C]
  TensorPtr tanh_(const TensorPtr& a);
  TensorPtr sigmoid_(const TensorPtr& a);
  TensorPtr relu_(const TensorPtr& a);
  TensorPtr exp_(const TensorPtr& a);
  TensorPtr log_(const TensorPtr& a);
  TensorPtr softmax(const TensorPtr& a);      // rank-1, or row-wise on rank-2
  TensorPtr log_softmax(const TensorPtr& a);  // same layout rule
  TensorPtr concat(const TensorPtr& a, const TensorPtr& b);  // rank-1
  TensorPtr slice(const TensorPtr& a, size_t row0, size_t rows,
                  size_t col0, size_t cols);
  TensorPtr slice(const TensorPtr& a, size_t i0, size_t n);  // rank-1
  TensorPtr sum(const TensorPtr& a);
  TensorPtr mean(const TensorPtr& a);
  TensorPtr stack_rows(const std::vector<TensorPtr>& rows);  // k x [1,C] -> [k,C]
  TensorPtr rows_select(const TensorPtr& table, const std::vector<size_t>& idx);
  // Flattens every input row-major and concatenates into one [1,N] row.
  TensorPtr concat_flat(const std::vector<TensorPtr>& parts);

  // Fused cells (hand-derived backward; covered by the same finite-difference
  // harness as the primitives) --------------------------------------------
  TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
  TensorPtr gru_cell(const TensorPtr& x, const TensorPtr& h,
                     const TensorPtr& wx, const TensorPtr& wh,
                     const TensorPtr& bx, const TensorPtr& bh);
  // Softmax attention over the first `len` rows of projected keys/values:
  //   out = sum_i alpha_i vp_i,  alpha = softmax over i<=len of (q wq) . kp_i
  // When `alpha_out` is non-null the padded weight vector (zeros past `len`)
  // is written there.
  TensorPtr attn_prefix(const TensorPtr& q, const TensorPtr& kp,
                        const TensorPtr& vp, const TensorPtr& wq, size_t len,
                        std::vector<double>* alpha_out = nullptr);
  // Summed cross entropy: -sum_i log softmax(logits_i)[targets_i].
  TensorPtr cross_entropy_sum(const TensorPtr& logits,
                              const std::vector<size_t>& targets);

  // Name-dispatched entry for the attribute-free primitives.
  TensorPtr forward_op(std::string_view name, const std::vector<TensorPtr>& inputs);

  // Reverse pass from a scalar root. Visits each recorded node exactly once,
  // in reverse execution order.
  void backward(const TensorPtr& root);

  size_t node_count() const { return nodes_.size(); }

  // Finiteness validation after each op is cheap at desk scale; tests may
  // disable it to time raw kernels.
  static bool check_finite;

private:
  struct Node {
    TensorPtr out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;

  TensorPtr record(TensorPtr out, std::function<void()> back);
};

// SGD update: w -= lr * grad for every parameter, then clears gradients.
// clip_norm > 0 rescales all gradients jointly when the global L2 norm
// exceeds the threshold.
void sgd_step(const std::vector<TensorPtr>& params, double lr,
              double clip_norm = 0.0);

double grad_global_norm(const std::vector<TensorPtr>& params);

// SGD with optional heavy-ball momentum. momentum == 0 reduces to the plain
// sgd_step update (same clipping rule, applied to the raw gradient).
class SgdOptimizer {
 public:
  explicit SgdOptimizer(std::vector<TensorPtr> params, double momentum = 0.0);
  void step(double lr, double clip_norm = 0.0);

 private:
  std::vector<TensorPtr> params_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace tcts::ad
