#include "mstdp/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mstdp/types.hpp"

namespace mstdp {

namespace {
void require(bool ok, const char* msg) {
  if (!ok) throw ContractError(std::string("tape: ") + msg);
}
} // namespace

const Tensor& Value::val() const {
  if (!tape_) throw ContractError("tape: empty value handle");
  return tape_->node(*this).value;
}

Value Tape::make(Tensor value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Value(this, nodes_.size() - 1);
}

Tape::Node& Tape::node(Value v) {
  check_same_tape(v);
  return nodes_[v.idx_];
}

const Tape::Node& Tape::node(Value v) const {
  check_same_tape(v);
  return nodes_[v.idx_];
}

void Tape::check_same_tape(Value v) const {
  require(v.tape_ == this, "value belongs to a different tape");
  require(v.idx_ < nodes_.size(), "value index out of range");
}

Tensor& Tape::grad_buf(std::size_t idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) n.grad = Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Value Tape::constant(Tensor v) { return make(std::move(v), false, nullptr); }

Value Tape::zeros(Eigen::Index rows, Eigen::Index cols) {
  return make(Tensor::Zero(rows, cols), false, nullptr);
}

Value Tape::param(ParameterStore& store, const std::string& name) {
  require(store_ == nullptr || store_ == &store, "one tape cannot mix parameter stores");
  store_ = &store;
  auto it = leaf_cache_.find(name);
  if (it != leaf_cache_.end()) return Value(this, it->second);
  Value v = make(store.value(name), true, nullptr);
  leaf_cache_.emplace(name, v.idx_);
  leaves_.emplace_back(v.idx_, name);
  return v;
}

Value Tape::add(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  std::size_t ai = a.idx_, bi = b.idx_;
  Value out = make(av + bv, ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, bi, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad) grad_buf(ai) += g;
    if (nodes_[bi].needs_grad) grad_buf(bi) += g;
  };
  return out;
}

Value Tape::sub(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  std::size_t ai = a.idx_, bi = b.idx_;
  Value out = make(av - bv, ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, bi, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad) grad_buf(ai) += g;
    if (nodes_[bi].needs_grad) grad_buf(bi) -= g;
  };
  return out;
}

Value Tape::mul(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  std::size_t ai = a.idx_, bi = b.idx_;
  Value out = make(av.cwiseProduct(bv), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, bi, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad) grad_buf(ai) += g.cwiseProduct(nodes_[bi].value);
    if (nodes_[bi].needs_grad) grad_buf(bi) += g.cwiseProduct(nodes_[ai].value);
  };
  return out;
}

Value Tape::scale(Value a, double k) {
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(node(a).value * k, ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, k] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ai) += k * g;
  };
  return out;
}

Value Tape::add_const(Value a, const Tensor& c) {
  const Tensor& av = node(a).value;
  require(av.rows() == c.rows() && av.cols() == c.cols(), "add_const: shape mismatch");
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(av + c, ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ai) += g;
  };
  return out;
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  std::size_t ai = a.idx_, bi = b.idx_;
  Value out = make(av * bv, ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, bi, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad) grad_buf(ai) += g * nodes_[bi].value.transpose();
    if (nodes_[bi].needs_grad) grad_buf(bi) += nodes_[ai].value.transpose() * g;
  };
  return out;
}

Value Tape::transpose(Value a) {
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(node(a).value.transpose(), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ai) += g.transpose();
  };
  return out;
}

Value Tape::add_rows(Value a, Value row) {
  const Tensor& av = node(a).value;
  const Tensor& rv = node(row).value;
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_rows: need 1 x cols row");
  bool ng = node(a).needs_grad || node(row).needs_grad;
  std::size_t ai = a.idx_, ri = row.idx_;
  Tensor out_v = av;
  out_v.rowwise() += rv.row(0);
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, ri, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad) grad_buf(ai) += g;
    if (nodes_[ri].needs_grad) grad_buf(ri) += g.colwise().sum();
  };
  return out;
}

Value Tape::mul_cols(Value a, Value col) {
  const Tensor& av = node(a).value;
  const Tensor& cv = node(col).value;
  require(cv.cols() == 1 && cv.rows() == av.rows(), "mul_cols: need rows x 1 column");
  bool ng = node(a).needs_grad || node(col).needs_grad;
  std::size_t ai = a.idx_, ci = col.idx_;
  Tensor out_v = (av.array().colwise() * cv.col(0).array()).matrix();
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, ci, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    if (nodes_[ai].needs_grad)
      grad_buf(ai) += (g.array().colwise() * nodes_[ci].value.col(0).array()).matrix();
    if (nodes_[ci].needs_grad)
      grad_buf(ci) += g.cwiseProduct(nodes_[ai].value).rowwise().sum();
  };
  return out;
}

Value Tape::broadcast_rows(Value row, Eigen::Index m) {
  const Tensor& rv = node(row).value;
  require(rv.rows() == 1, "broadcast_rows: need a 1 x c row");
  bool ng = node(row).needs_grad;
  std::size_t ri = row.idx_;
  Tensor out_v(m, rv.cols());
  out_v.rowwise() = rv.row(0);
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ri, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ri) += g.colwise().sum();
  };
  return out;
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index rows = node(parts[0]).value.rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Value p : parts) {
    require(node(p).value.rows() == rows, "concat_cols: row mismatch");
    cols += node(p).value.cols();
    ng = ng || node(p).needs_grad;
  }
  Tensor out_v(rows, cols);
  Eigen::Index at = 0;
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> offs, widths;
  for (Value p : parts) {
    Eigen::Index w = node(p).value.cols();
    out_v.middleCols(at, w) = node(p).value;
    idx.push_back(p.idx_);
    offs.push_back(at);
    widths.push_back(w);
    at += w;
  }
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, idx = std::move(idx), offs = std::move(offs),
                             widths = std::move(widths), oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (nodes_[idx[i]].needs_grad) grad_buf(idx[i]) += g.middleCols(offs[i], widths[i]);
  };
  return out;
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index cols = node(parts[0]).value.cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (Value p : parts) {
    require(node(p).value.cols() == cols, "concat_rows: column mismatch");
    rows += node(p).value.rows();
    ng = ng || node(p).needs_grad;
  }
  Tensor out_v(rows, cols);
  Eigen::Index at = 0;
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> offs, heights;
  for (Value p : parts) {
    Eigen::Index h = node(p).value.rows();
    out_v.middleRows(at, h) = node(p).value;
    idx.push_back(p.idx_);
    offs.push_back(at);
    heights.push_back(h);
    at += h;
  }
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, idx = std::move(idx), offs = std::move(offs),
                             heights = std::move(heights), oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (nodes_[idx[i]].needs_grad) grad_buf(idx[i]) += g.middleRows(offs[i], heights[i]);
  };
  return out;
}

Value Tape::slice_cols(Value a, Eigen::Index c0, Eigen::Index n) {
  const Tensor& av = node(a).value;
  require(c0 >= 0 && n >= 0 && c0 + n <= av.cols(), "slice_cols: out of range");
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(av.middleCols(c0, n), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, c0, n] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ai).middleCols(c0, n) += g;
  };
  return out;
}

Value Tape::slice_rows(Value a, Eigen::Index r0, Eigen::Index n) {
  const Tensor& av = node(a).value;
  require(r0 >= 0 && n >= 0 && r0 + n <= av.rows(), "slice_rows: out of range");
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(av.middleRows(r0, n), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, r0, n] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    grad_buf(ai).middleRows(r0, n) += g;
  };
  return out;
}

Value Tape::gather_rows(Value a, std::vector<int> idx) {
  const Tensor& av = node(a).value;
  for (int i : idx)
    require(i >= 0 && i < av.rows(), "gather_rows: index out of range");
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Tensor out_v(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    out_v.row(static_cast<Eigen::Index>(r)) = av.row(idx[r]);
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, idx = std::move(idx)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor& ga = grad_buf(ai);
    for (std::size_t r = 0; r < idx.size(); ++r)
      ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
  };
  return out;
}

Value Tape::scatter_add_rows(Value a, std::vector<int> dst, Eigen::Index n_rows) {
  const Tensor& av = node(a).value;
  require(static_cast<Eigen::Index>(dst.size()) == av.rows(), "scatter_add_rows: index count");
  for (int i : dst)
    require(i >= 0 && i < n_rows, "scatter_add_rows: index out of range");
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Tensor out_v = Tensor::Zero(n_rows, av.cols());
  for (std::size_t r = 0; r < dst.size(); ++r)
    out_v.row(dst[r]) += av.row(static_cast<Eigen::Index>(r));
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, dst = std::move(dst)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor& ga = grad_buf(ai);
    for (std::size_t r = 0; r < dst.size(); ++r)
      ga.row(static_cast<Eigen::Index>(r)) += g.row(dst[r]);
  };
  return out;
}

Value Tape::spmm(std::shared_ptr<const SparseTensor> m, Value x) {
  require(m != nullptr, "spmm: null matrix");
  const Tensor& xv = node(x).value;
  require(m->cols() == xv.rows(), "spmm: inner dimension mismatch");
  bool ng = node(x).needs_grad;
  std::size_t xi = x.idx_;
  Value out = make(Tensor((*m) * xv), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, xi, oi, m = std::move(m)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor delta = m->transpose() * g;
    grad_buf(xi) += delta;
  };
  return out;
}

Value Tape::relu(Value a) {
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(node(a).value.cwiseMax(0.0), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor mask = nodes_[ai].value.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    grad_buf(ai) += mask.cwiseProduct(g);
  };
  return out;
}

Value Tape::leaky_relu(Value a, double slope) {
  const Tensor& av = node(a).value;
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Tensor out_v = av.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, slope] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor mask = nodes_[ai].value.unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    grad_buf(ai) += mask.cwiseProduct(g);
  };
  return out;
}

Value Tape::row_softmax(Value a, const Tensor* keep) {
  const Tensor& av = node(a).value;
  if (keep)
    require(keep->rows() == av.rows() && keep->cols() == av.cols(),
            "row_softmax: mask shape mismatch");
  Tensor y = Tensor::Zero(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    double max_v = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < av.cols(); ++c)
      if (!keep || (*keep)(r, c) > 0.5) max_v = std::max(max_v, av(r, c));
    if (!std::isfinite(max_v)) continue; // nothing kept in this row
    double denom = 0.0;
    for (Eigen::Index c = 0; c < av.cols(); ++c)
      if (!keep || (*keep)(r, c) > 0.5) denom += std::exp(av(r, c) - max_v);
    for (Eigen::Index c = 0; c < av.cols(); ++c)
      if (!keep || (*keep)(r, c) > 0.5) y(r, c) = std::exp(av(r, c) - max_v) / denom;
  }
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(std::move(y), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    const Tensor& yv = nodes_[oi].value;
    Tensor& ga = grad_buf(ai);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(yv.row(r)).sum();
      ga.row(r) += yv.row(r).cwiseProduct(g.row(r) - Eigen::RowVectorXd::Constant(yv.cols(), dot));
    }
  };
  return out;
}

Value Tape::segment_softmax(Value a, std::vector<int> seg, int n_segments) {
  const Tensor& av = node(a).value;
  require(av.cols() == 1, "segment_softmax: need a column vector");
  require(static_cast<Eigen::Index>(seg.size()) == av.rows(), "segment_softmax: segment count");
  for (int s : seg)
    require(s >= 0 && s < n_segments, "segment_softmax: segment id out of range");
  std::vector<double> max_v(static_cast<std::size_t>(n_segments),
                            -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < seg.size(); ++i)
    max_v[static_cast<std::size_t>(seg[i])] =
        std::max(max_v[static_cast<std::size_t>(seg[i])], av(static_cast<Eigen::Index>(i), 0));
  std::vector<double> denom(static_cast<std::size_t>(n_segments), 0.0);
  Tensor y(av.rows(), 1);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    double e = std::exp(av(static_cast<Eigen::Index>(i), 0) -
                        max_v[static_cast<std::size_t>(seg[i])]);
    y(static_cast<Eigen::Index>(i), 0) = e;
    denom[static_cast<std::size_t>(seg[i])] += e;
  }
  for (std::size_t i = 0; i < seg.size(); ++i)
    y(static_cast<Eigen::Index>(i), 0) /= denom[static_cast<std::size_t>(seg[i])];
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(std::move(y), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, seg = std::move(seg), n_segments] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    const Tensor& yv = nodes_[oi].value;
    std::vector<double> dot(static_cast<std::size_t>(n_segments), 0.0);
    for (std::size_t i = 0; i < seg.size(); ++i)
      dot[static_cast<std::size_t>(seg[i])] +=
          g(static_cast<Eigen::Index>(i), 0) * yv(static_cast<Eigen::Index>(i), 0);
    Tensor& ga = grad_buf(ai);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      auto r = static_cast<Eigen::Index>(i);
      ga(r, 0) += yv(r, 0) * (g(r, 0) - dot[static_cast<std::size_t>(seg[i])]);
    }
  };
  return out;
}

Value Tape::layer_norm(Value x, Value gamma, Value beta, double eps) {
  const Tensor& xv = node(x).value;
  const Tensor& gv = node(gamma).value;
  const Tensor& bv = node(beta).value;
  require(gv.rows() == 1 && gv.cols() == xv.cols(), "layer_norm: gamma shape");
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "layer_norm: beta shape");
  Eigen::Index m = xv.rows(), c = xv.cols();
  Tensor xhat(m, c);
  Eigen::VectorXd inv(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv(r);
  }
  Tensor out_v =
      ((xhat.array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array()).matrix();
  bool ng = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  std::size_t xi = x.idx_, gi = gamma.idx_, bi = beta.idx_;
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, xi, gi, bi, oi, xhat = std::move(xhat),
                             inv = std::move(inv)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    const Tensor& gv2 = nodes_[gi].value;
    if (nodes_[bi].needs_grad) grad_buf(bi) += g.colwise().sum();
    if (nodes_[gi].needs_grad) grad_buf(gi) += g.cwiseProduct(xhat).colwise().sum();
    if (nodes_[xi].needs_grad) {
      Tensor& gx = grad_buf(xi);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv2.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) += inv(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
      }
    }
  };
  return out;
}

Value Tape::mean_rows(Value a, std::vector<double> weights) {
  const Tensor& av = node(a).value;
  Eigen::Index m = av.rows();
  if (weights.empty()) weights.assign(static_cast<std::size_t>(m), 1.0);
  require(static_cast<Eigen::Index>(weights.size()) == m, "mean_rows: weight count");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "mean_rows: negative weight");
    total += w;
  }
  require(total > 0.0, "mean_rows: weights sum to zero");
  for (double& w : weights) w /= total;
  Tensor out_v = Tensor::Zero(1, av.cols());
  for (Eigen::Index r = 0; r < m; ++r)
    out_v.row(0) += weights[static_cast<std::size_t>(r)] * av.row(r);
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, weights = std::move(weights)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor& ga = grad_buf(ai);
    for (Eigen::Index r = 0; r < ga.rows(); ++r)
      ga.row(r) += weights[static_cast<std::size_t>(r)] * g.row(0);
  };
  return out;
}

Value Tape::mean_all(Value a) {
  const Tensor& av = node(a).value;
  double denom = static_cast<double>(av.size());
  require(denom > 0, "mean_all: empty tensor");
  Tensor out_v(1, 1);
  out_v(0, 0) = av.sum() / denom;
  bool ng = node(a).needs_grad;
  std::size_t ai = a.idx_;
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, ai, oi, denom] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    Tensor& ga = grad_buf(ai);
    ga.array() += g(0, 0) / denom;
  };
  return out;
}

Value Tape::cross_entropy_mean(Value logits, std::vector<int> targets) {
  const Tensor& lv = node(logits).value;
  Eigen::Index m = lv.rows(), v = lv.cols();
  require(static_cast<Eigen::Index>(targets.size()) == m, "cross_entropy: target count");
  for (int t : targets)
    require(t >= 0 && t < v, "cross_entropy: target out of range");
  Tensor p(m, v);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    double max_v = lv.row(r).maxCoeff();
    Eigen::RowVectorXd e = (lv.row(r).array() - max_v).exp();
    double denom = e.sum();
    p.row(r) = e / denom;
    double lse = max_v + std::log(denom);
    loss += lse - lv(r, targets[static_cast<std::size_t>(r)]);
  }
  Tensor out_v(1, 1);
  out_v(0, 0) = loss / static_cast<double>(m);
  bool ng = node(logits).needs_grad;
  std::size_t li = logits.idx_;
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, li, oi, p = std::move(p), targets = std::move(targets)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    double k = g(0, 0) / static_cast<double>(p.rows());
    Tensor& gl = grad_buf(li);
    gl += k * p;
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      gl(r, targets[static_cast<std::size_t>(r)]) -= k;
  };
  return out;
}

Value Tape::huber_mean(Value pred, std::vector<double> targets) {
  const Tensor& pv = node(pred).value;
  require(pv.cols() == 1, "huber: need a column vector");
  Eigen::Index m = pv.rows();
  require(static_cast<Eigen::Index>(targets.size()) == m, "huber: target count");
  double loss = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    double e = pv(r, 0) - targets[static_cast<std::size_t>(r)];
    loss += std::abs(e) < 1.0 ? e * e : std::abs(e) - 0.5;
  }
  Tensor out_v(1, 1);
  out_v(0, 0) = loss / static_cast<double>(m);
  bool ng = node(pred).needs_grad;
  std::size_t pi = pred.idx_;
  Value out = make(std::move(out_v), ng, nullptr);
  std::size_t oi = out.idx_;
  if (ng) nodes_[oi].back = [this, pi, oi, targets = std::move(targets)] {
    const Tensor& g = nodes_[oi].grad;
    if (g.size() == 0) return;
    const Tensor& pv2 = nodes_[pi].value;
    double k = g(0, 0) / static_cast<double>(pv2.rows());
    Tensor& gp = grad_buf(pi);
    for (Eigen::Index r = 0; r < pv2.rows(); ++r) {
      double e = pv2(r, 0) - targets[static_cast<std::size_t>(r)];
      gp(r, 0) += k * (std::abs(e) < 1.0 ? 2.0 * e : (e > 0 ? 1.0 : -1.0));
    }
  };
  return out;
}

void Tape::backward(Value loss) {
  check_same_tape(loss);
  require(!backward_done_, "backward already ran on this tape");
  const Tensor& lv = node(loss).value;
  require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be 1 x 1");
  backward_done_ = true;
  grad_buf(loss.idx_).setConstant(1.0);
  for (std::size_t i = loss.idx_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.grad.size() != 0 && n.back) n.back();
  }
  if (store_) {
    for (const auto& [idx, name] : leaves_) {
      if (nodes_[idx].grad.size() != 0) store_->grad(name) += nodes_[idx].grad;
    }
  }
}

const Tensor& Tape::grad_of(Value v) const {
  const Node& n = node(v);
  require(n.grad.size() != 0, "grad_of: no gradient on this node");
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
  leaf_cache_.clear();
  store_ = nullptr;
  backward_done_ = false;
}

} // namespace mstdp
