#include "ta3n/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ta3n::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes (" << a.rows() << "x" << a.cols()
     << ") and (" << b.rows() << "x" << b.cols() << ")";
  throw std::invalid_argument(os.str());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const std::string& why) {
  std::ostringstream os;
  os << op << ": bad shape (" << a.rows() << "x" << a.cols() << "): " << why;
  throw std::invalid_argument(os.str());
}

Matrix row_log_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mx = a.row(i).maxCoeff();
    const double lse = std::log((a.row(i).array() - mx).exp().sum()) + mx;
    out.row(i) = a.row(i).array() - lse;
  }
  return out;
}

}  // namespace

Value Tape::push(Matrix val, std::function<void()> back, Parameter* p) {
  Node n;
  n.val = std::move(val);
  n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
  n.back = std::move(back);
  n.param = p;
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::at(Value v) { return nodes_[static_cast<size_t>(v.id)]; }
const Tape::Node& Tape::at(Value v) const { return nodes_[static_cast<size_t>(v.id)]; }

void Tape::check_same_tape(Value v, const char* op) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw std::invalid_argument(std::string(op) + ": value does not belong to this tape");
}

Value Tape::constant(Matrix m) { return push(std::move(m)); }

Value Tape::param(Parameter& p) {
  return push(p.value, {}, &p);
}

Value Tape::matmul(Value a, Value b) {
  check_same_tape(a, "matmul");
  check_same_tape(b, "matmul");
  const Matrix& A = at(a).val;
  const Matrix& B = at(b).val;
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  return push(A * B, [this, a, b, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    at(a).grad.noalias() += g * at(b).val.transpose();
    at(b).grad.noalias() += at(a).val.transpose() * g;
  });
}

Value Tape::add(Value a, Value b) {
  check_same_tape(a, "add");
  check_same_tape(b, "add");
  const Matrix& A = at(a).val;
  const Matrix& B = at(b).val;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    return push(A + B, [this, a, b, out = size()]() {
      const Matrix& g = nodes_[out].grad;
      at(a).grad += g;
      at(b).grad += g;
    });
  }
  if (B.rows() == 1 && B.cols() == A.cols()) {  // row broadcast (bias)
    return push(A.rowwise() + B.row(0), [this, a, b, out = size()]() {
      const Matrix& g = nodes_[out].grad;
      at(a).grad += g;
      at(b).grad += g.colwise().sum();
    });
  }
  shape_error("add", A, B);
}

Value Tape::mul(Value a, Value b) {
  check_same_tape(a, "mul");
  check_same_tape(b, "mul");
  const Matrix& A = at(a).val;
  const Matrix& B = at(b).val;
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  return push(A.cwiseProduct(B), [this, a, b, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    at(a).grad += g.cwiseProduct(at(b).val);
    at(b).grad += g.cwiseProduct(at(a).val);
  });
}

Value Tape::relu(Value a) {
  check_same_tape(a, "relu");
  const Matrix& A = at(a).val;
  return push(A.cwiseMax(0.0), [this, a, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    at(a).grad.array() += g.array() * (at(a).val.array() > 0.0).cast<double>();
  });
}

Value Tape::tanh(Value a) {
  check_same_tape(a, "tanh");
  Matrix t = at(a).val.array().tanh();
  return push(std::move(t), [this, a, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    at(a).grad.array() += g.array() * (1.0 - nodes_[out].val.array().square());
  });
}

Value Tape::scale(Value a, double c) {
  check_same_tape(a, "scale");
  return push(c * at(a).val, [this, a, c, out = size()]() {
    at(a).grad += c * nodes_[out].grad;
  });
}

Value Tape::smul(Value s, Value a) {
  check_same_tape(s, "smul");
  check_same_tape(a, "smul");
  const Matrix& S = at(s).val;
  if (S.rows() != 1 || S.cols() != 1) shape_error("smul", S, "scalar factor must be 1x1");
  return push(S(0, 0) * at(a).val, [this, s, a, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    at(s).grad(0, 0) += (g.array() * at(a).val.array()).sum();
    at(a).grad += at(s).val(0, 0) * g;
  });
}

Value Tape::mean_axis(Value a, int axis) {
  check_same_tape(a, "mean_axis");
  const Matrix& A = at(a).val;
  if (axis == 0) {
    const double n = static_cast<double>(A.rows());
    Matrix m = A.colwise().sum() / n;
    return push(std::move(m), [this, a, n, out = size()]() {
      const Matrix& g = nodes_[out].grad;
      at(a).grad.rowwise() += (g.row(0) / n).eval();
    });
  }
  if (axis == 1) {
    const double n = static_cast<double>(A.cols());
    Matrix m = A.rowwise().sum() / n;
    return push(std::move(m), [this, a, n, out = size()]() {
      const Matrix& g = nodes_[out].grad;
      at(a).grad.colwise() += (g.col(0) / n).eval();
    });
  }
  throw std::invalid_argument("mean_axis: axis must be 0 or 1");
}

Value Tape::sum_axis(Value a, int axis) {
  check_same_tape(a, "sum_axis");
  const Matrix& A = at(a).val;
  if (axis == 0) {
    Matrix m = A.colwise().sum();
    return push(std::move(m), [this, a, out = size()]() {
      at(a).grad.rowwise() += nodes_[out].grad.row(0);
    });
  }
  if (axis == 1) {
    Matrix m = A.rowwise().sum();
    return push(std::move(m), [this, a, out = size()]() {
      at(a).grad.colwise() += nodes_[out].grad.col(0);
    });
  }
  throw std::invalid_argument("sum_axis: axis must be 0 or 1");
}

Value Tape::sum_all(Value a) {
  check_same_tape(a, "sum_all");
  return push(Matrix::Constant(1, 1, at(a).val.sum()), [this, a, out = size()]() {
    at(a).grad.array() += nodes_[out].grad(0, 0);
  });
}

Value Tape::hstack(std::span<const Value> parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: no inputs");
  Eigen::Index rows = at(parts[0]).val.rows();
  Eigen::Index cols = 0;
  for (Value p : parts) {
    check_same_tape(p, "hstack");
    if (at(p).val.rows() != rows) shape_error("hstack", at(p).val, "row count mismatch");
    cols += at(p).val.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (Value p : parts) {
    out.middleCols(off, at(p).val.cols()) = at(p).val;
    off += at(p).val.cols();
  }
  std::vector<Value> owned(parts.begin(), parts.end());
  return push(std::move(out), [this, owned = std::move(owned), out = size()]() {
    const Matrix& g = nodes_[out].grad;
    Eigen::Index off = 0;
    for (Value p : owned) {
      at(p).grad += g.middleCols(off, at(p).val.cols());
      off += at(p).val.cols();
    }
  });
}

Value Tape::transpose(Value a) {
  check_same_tape(a, "transpose");
  return push(at(a).val.transpose(), [this, a, out = size()]() {
    at(a).grad += nodes_[out].grad.transpose();
  });
}

Value Tape::slice_rows(Value a, int start, int count) {
  check_same_tape(a, "slice_rows");
  const Matrix& A = at(a).val;
  if (start < 0 || count < 1 || start + count > A.rows())
    shape_error("slice_rows", A, "row range out of bounds");
  return push(A.middleRows(start, count), [this, a, start, count, out = size()]() {
    at(a).grad.middleRows(start, count) += nodes_[out].grad;
  });
}

Value Tape::slice_cols(Value a, int start, int count) {
  check_same_tape(a, "slice_cols");
  const Matrix& A = at(a).val;
  if (start < 0 || count < 1 || start + count > A.cols())
    shape_error("slice_cols", A, "column range out of bounds");
  return push(A.middleCols(start, count), [this, a, start, count, out = size()]() {
    at(a).grad.middleCols(start, count) += nodes_[out].grad;
  });
}

Value Tape::gather_rows_concat(Value a, std::span<const int> rows) {
  check_same_tape(a, "gather_rows_concat");
  const Matrix& A = at(a).val;
  const Eigen::Index F = A.cols();
  for (int r : rows)
    if (r < 0 || r >= A.rows()) shape_error("gather_rows_concat", A, "row index out of bounds");
  Matrix out(1, static_cast<Eigen::Index>(rows.size()) * F);
  for (size_t j = 0; j < rows.size(); ++j)
    out.middleCols(static_cast<Eigen::Index>(j) * F, F) = A.row(rows[j]);
  std::vector<int> idx(rows.begin(), rows.end());
  return push(std::move(out), [this, a, idx = std::move(idx), F, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    for (size_t j = 0; j < idx.size(); ++j)
      at(a).grad.row(idx[j]) += g.middleCols(static_cast<Eigen::Index>(j) * F, F);
  });
}

Value Tape::weighted_mean_rows(Value a, std::span<const double> w) {
  check_same_tape(a, "weighted_mean_rows");
  const Matrix& A = at(a).val;
  if (static_cast<Eigen::Index>(w.size()) != A.rows())
    shape_error("weighted_mean_rows", A, "one weight per row required");
  const double inv = 1.0 / static_cast<double>(A.rows());
  Matrix out = Matrix::Zero(1, A.cols());
  for (Eigen::Index j = 0; j < A.rows(); ++j)
    out += inv * (w[static_cast<size_t>(j)] + 1.0) * A.row(j);
  std::vector<double> ws(w.begin(), w.end());
  return push(std::move(out), [this, a, ws = std::move(ws), inv, out = size()]() {
    const Matrix& g = nodes_[out].grad;
    for (size_t j = 0; j < ws.size(); ++j)
      at(a).grad.row(static_cast<Eigen::Index>(j)) += inv * (ws[j] + 1.0) * g.row(0);
  });
}

Value Tape::softmax_rows(Value a) {
  check_same_tape(a, "softmax_rows");
  // scalar exp underflows to exactly 0 for saturated logits, where Eigen's
  // vectorized exp clamps and leaves denormal-scale probabilities behind
  Matrix p = row_log_softmax(at(a).val).unaryExpr(
      [](double x) { return std::exp(x); });
  return push(std::move(p), [this, a, out = size()]() {
    const Matrix& p = nodes_[out].val;
    const Matrix& g = nodes_[out].grad;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double dot = (g.row(i).array() * p.row(i).array()).sum();
      at(a).grad.row(i).array() += p.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

Value Tape::log_softmax_rows(Value a) {
  check_same_tape(a, "log_softmax_rows");
  Matrix ls = row_log_softmax(at(a).val);
  return push(std::move(ls), [this, a, out = size()]() {
    const Matrix& ls = nodes_[out].val;
    const Matrix& g = nodes_[out].grad;
    for (Eigen::Index i = 0; i < ls.rows(); ++i) {
      const double gsum = g.row(i).sum();
      at(a).grad.row(i).array() +=
          g.row(i).array() - gsum * ls.row(i).array().exp();
    }
  });
}

Value Tape::cross_entropy(Value logits, int label) {
  check_same_tape(logits, "cross_entropy");
  const Matrix& L = at(logits).val;
  if (L.rows() != 1) shape_error("cross_entropy", L, "expected a 1xC logits row");
  if (label < 0 || label >= L.cols()) {
    std::ostringstream os;
    os << "cross_entropy: label " << label << " out of range for " << L.cols()
       << " classes";
    throw std::invalid_argument(os.str());
  }
  Matrix ls = row_log_softmax(L);
  Matrix p = ls.array().exp();
  return push(Matrix::Constant(1, 1, -ls(0, label)),
              [this, logits, label, p = std::move(p), out = size()]() {
                const double g = nodes_[out].grad(0, 0);
                Matrix d = p;
                d(0, label) -= 1.0;
                at(logits).grad += g * d;
              });
}

Value Tape::entropy_bits(Value pv) {
  check_same_tape(pv, "entropy_bits");
  const Matrix& p = at(pv).val;
  if (p.rows() != 1) shape_error("entropy_bits", p, "expected a 1xN probability row");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    if (p(0, k) < -1e-12 || p(0, k) > 1.0 + 1e-12)
      shape_error("entropy_bits", p, "entries must lie in [0,1]");
    sum += p(0, k);
  }
  if (std::abs(sum - 1.0) > 1e-6)
    shape_error("entropy_bits", p, "entries must sum to 1");
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.cols(); ++k)
    if (p(0, k) > 0.0) h -= p(0, k) * std::log2(p(0, k));
  return push(Matrix::Constant(1, 1, h), [this, pv, out = size()]() {
    const double g = nodes_[out].grad(0, 0);
    const Matrix& p = at(pv).val;
    const double inv_ln2 = 1.0 / std::log(2.0);
    for (Eigen::Index k = 0; k < p.cols(); ++k)
      if (p(0, k) > 0.0)
        at(pv).grad(0, k) += g * (-(std::log2(p(0, k)) + inv_ln2));
  });
}

Value Tape::grl(Value a, double lambda) {
  check_same_tape(a, "grl");
  if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be nonnegative");
  return push(at(a).val, [this, a, lambda, out = size()]() {
    at(a).grad -= lambda * nodes_[out].grad;
  });
}

Value Tape::detach(Value a) {
  check_same_tape(a, "detach");
  return push(at(a).val);
}

void Tape::backward(Value loss) {
  check_same_tape(loss, "backward");
  const Matrix& L = at(loss).val;
  if (L.rows() != 1 || L.cols() != 1)
    shape_error("backward", L, "loss must be scalar");
  for (Node& n : nodes_) n.grad.setZero();
  at(loss).grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i)
    if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back();
  for (Node& n : nodes_)
    if (n.param) n.param->grad += n.grad;
}

const Matrix& Tape::value(Value v) const {
  check_same_tape(v, "value");
  return at(v).val;
}

const Matrix& Tape::grad(Value v) const {
  check_same_tape(v, "grad");
  return at(v).grad;
}

double Tape::scalar(Value v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) shape_error("scalar", m, "not a scalar");
  return m(0, 0);
}

double finite_difference_check(const std::function<double()>& loss_value,
                               std::span<Parameter* const> params,
                               double epsilon, int max_coords, unsigned seed) {
  if (epsilon <= 0.0 || epsilon > 1e-2)
    throw std::invalid_argument("finite_difference_check: epsilon must be in (0, 1e-2]");
  std::mt19937 rng(seed);
  double max_rel = 0.0;
  for (Parameter* p : params) {
    const Eigen::Index n = p->value.size();
    std::vector<Eigen::Index> coords(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    if (n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(max_coords));
    }
    for (Eigen::Index c : coords) {
      const double saved = p->value.data()[c];
      p->value.data()[c] = saved + epsilon;
      const double up = loss_value();
      p->value.data()[c] = saved - epsilon;
      const double down = loss_value();
      p->value.data()[c] = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double analytic = p->grad.data()[c];
      const double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ta3n::ad
