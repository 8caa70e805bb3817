#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mstdp/params.hpp"
#include "mstdp/tensor.hpp"

namespace mstdp {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
class Value {
 public:
  Value() = default;
  bool valid() const { return tape_ != nullptr; }
  const Tensor& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Reverse-mode automatic differentiation over an arena of tensor nodes.
// Operations record a closure that propagates the output gradient to the
// inputs; backward() runs the closures in reverse creation order and then
// flushes leaf gradients into the ParameterStore they came from.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Value constant(Tensor v);
  Value zeros(Eigen::Index rows, Eigen::Index cols);
  Value param(ParameterStore& store, const std::string& name);

  // Arithmetic.
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b); // elementwise
  Value scale(Value a, double k);
  Value add_const(Value a, const Tensor& c);
  Value matmul(Value a, Value b);
  Value transpose(Value a);

  // Broadcasts.
  Value add_rows(Value a, Value row);        // row is 1 x c, added to every row
  Value mul_cols(Value a, Value col);        // col is m x 1, scales each row
  Value broadcast_rows(Value row, Eigen::Index m);

  // Shape.
  Value concat_cols(const std::vector<Value>& parts);
  Value concat_rows(const std::vector<Value>& parts);
  Value slice_cols(Value a, Eigen::Index c0, Eigen::Index n);
  Value slice_rows(Value a, Eigen::Index r0, Eigen::Index n);
  Value gather_rows(Value a, std::vector<int> idx);
  Value scatter_add_rows(Value a, std::vector<int> dst, Eigen::Index n_rows);

  // Fixed sparse matrix times node (the matrix is not differentiated).
  Value spmm(std::shared_ptr<const SparseTensor> m, Value x);

  // Nonlinearities and reductions.
  Value relu(Value a);
  Value leaky_relu(Value a, double slope);
  // Softmax over each row; entries where keep(r, c) <= 0.5 get exactly 0 and
  // the kept entries sum to 1. keep == nullptr means all kept. A row with
  // nothing kept becomes all zeros.
  Value row_softmax(Value a, const Tensor* keep = nullptr);
  // Softmax of a column vector within each segment: seg[i] in [0, n_segments).
  Value segment_softmax(Value a, std::vector<int> seg, int n_segments);
  Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5);
  // Weighted mean of rows -> 1 x c. Weights are fixed (not differentiated);
  // empty means uniform.
  Value mean_rows(Value a, std::vector<double> weights = {});
  Value mean_all(Value a); // 1 x 1

  // Losses (targets fixed).
  Value cross_entropy_mean(Value logits, std::vector<int> targets);
  Value huber_mean(Value pred, std::vector<double> targets);

  // Runs reverse accumulation from a 1 x 1 loss node, then adds leaf
  // gradients into their ParameterStore. May be called once per tape.
  void backward(Value loss);

  // Gradient of a node after backward(); for tests.
  const Tensor& grad_of(Value v) const;

  void clear();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Value;
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, std::string>> leaves_;
  ParameterStore* store_ = nullptr;
  std::unordered_map<std::string, std::size_t> leaf_cache_;
  bool backward_done_ = false;

  Value make(Tensor value, bool needs_grad, std::function<void()> back);
  Node& node(Value v);
  const Node& node(Value v) const;
  Tensor& grad_buf(std::size_t idx);
  void check_same_tape(Value v) const;
};

} // namespace mstdp
