#pragma once

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ta3n::ad {

using Matrix = Eigen::MatrixXd;

/// A named, trainable tensor. Owned by the model; the tape only borrows it.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; invalid once the tape dies.
struct Value {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode computation tape over dense double matrices.
///
/// Nodes are appended in construction order, which is a topological order,
/// so backward() walks the node list in reverse. Single-owner,
/// single-threaded; independent tapes share no state.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---
  Value constant(Matrix m);
  Value constant_scalar(double x) { return constant(Matrix::Constant(1, 1, x)); }
  Value param(Parameter& p);

  // --- elementwise / linear ---
  Value matmul(Value a, Value b);
  // same-shape add, or row-broadcast when b is 1 x cols(a)
  Value add(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise, same shape
  Value relu(Value a);
  Value tanh(Value a);
  Value scale(Value a, double c);
  // s is 1x1; out = s * a
  Value smul(Value s, Value a);

  // --- reductions / shaping ---
  Value mean_axis(Value a, int axis);  // axis 0: over rows -> 1 x cols
  Value sum_axis(Value a, int axis);
  Value sum_all(Value a);  // 1x1
  Value hstack(std::span<const Value> parts);
  Value transpose(Value a);
  Value slice_rows(Value a, int start, int count);
  Value slice_cols(Value a, int start, int count);
  // concatenate the given rows of a into a single 1 x (n*cols) row
  Value gather_rows_concat(Value a, std::span<const int> rows);
  // out = (1/rows) * sum_j (w[j] + 1) * row_j(a); weights are constants
  Value weighted_mean_rows(Value a, std::span<const double> w);

  // --- softmax family ---
  Value softmax_rows(Value a);
  Value log_softmax_rows(Value a);
  // -log softmax(logits)[label] for a 1 x C row, log-sum-exp stabilized
  Value cross_entropy(Value logits, int label);
  // base-2 entropy of a probability row; rejects non-normalized input
  Value entropy_bits(Value p);

  // --- gradient plumbing ---
  // forward identity; backward multiplies the incoming gradient by -lambda
  Value grl(Value a, double lambda);
  // forward identity; no gradient flows upstream
  Value detach(Value a);

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every Parameter's grad.
  /// Repeated calls without zero_grad accumulate.
  void backward(Value loss);

  const Matrix& value(Value v) const;
  const Matrix& grad(Value v) const;
  double scalar(Value v) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Matrix val;
    Matrix grad;
    std::function<void()> back;  // may be empty for leaves
    Parameter* param = nullptr;
  };

  Value push(Matrix val, std::function<void()> back = {}, Parameter* p = nullptr);
  Node& at(Value v);
  const Node& at(Value v) const;
  void check_same_tape(Value v, const char* op) const;

  std::vector<Node> nodes_;
};

/// Max relative error between analytic gradients (already accumulated in the
/// parameters' grad fields) and central finite differences of loss_value,
/// over up to max_coords sampled coordinates per parameter.
double finite_difference_check(const std::function<double()>& loss_value,
                               std::span<Parameter* const> params,
                               double epsilon, int max_coords = 64,
                               unsigned seed = 0);

}  // namespace ta3n::ad
