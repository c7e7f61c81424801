#include "ift/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "ift/error.hpp"
#include "ift/parallel.hpp"

namespace ift::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

constexpr int64_t kParallelGemmFlops = 2'000'000;

void gemm_raw(const double* a, int64_t ar, int64_t ac, bool ta, const double* b, int64_t br,
              int64_t bc, bool tb, double* c, int64_t m, int64_t n, bool accumulate) {
  CMap A(a, ar, ac);
  CMap B(b, br, bc);
  const int64_t k = ta ? ar : ac;
  const bool parallel = 2 * m * n * k >= kParallelGemmFlops && max_threads() > 1;

  auto run = [&](int64_t r0, int64_t r1) {
    MMap C(c, m, n);
    auto cb = C.middleRows(r0, r1 - r0);
    if (!ta && !tb) {
      if (accumulate)
        cb.noalias() += A.middleRows(r0, r1 - r0) * B;
      else
        cb.noalias() = A.middleRows(r0, r1 - r0) * B;
    } else if (!ta && tb) {
      if (accumulate)
        cb.noalias() += A.middleRows(r0, r1 - r0) * B.transpose();
      else
        cb.noalias() = A.middleRows(r0, r1 - r0) * B.transpose();
    } else if (ta && !tb) {
      if (accumulate)
        cb.noalias() += A.middleCols(r0, r1 - r0).transpose() * B;
      else
        cb.noalias() = A.middleCols(r0, r1 - r0).transpose() * B;
    } else {
      if (accumulate)
        cb.noalias() += A.middleCols(r0, r1 - r0).transpose() * B.transpose();
      else
        cb.noalias() = A.middleCols(r0, r1 - r0).transpose() * B.transpose();
    }
  };

  if (parallel)
    parallel_for(m, run);
  else
    run(0, m);
}

std::vector<int64_t> drop_last(const std::vector<int64_t>& s) {
  std::vector<int64_t> out(s.begin(), s.end() - 1);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

void gemm(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b, Tensor& c,
          bool accumulate) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error(ErrorKind::Data,
                "gemm expects rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
  }
  const int64_t m = transpose_a ? a.shape[1] : a.shape[0];
  const int64_t ka = transpose_a ? a.shape[0] : a.shape[1];
  const int64_t kb = transpose_b ? b.shape[1] : b.shape[0];
  const int64_t n = transpose_b ? b.shape[0] : b.shape[1];
  if (ka != kb) {
    throw Error(ErrorKind::Data,
                "gemm inner dimensions differ: " + std::to_string(ka) + " vs " + std::to_string(kb));
  }
  if (c.rank() != 2 || c.shape[0] != m || c.shape[1] != n) {
    throw Error(ErrorKind::Data, "gemm output shape " + c.shape_str() + " does not match " +
                                     std::to_string(m) + "x" + std::to_string(n));
  }
  gemm_raw(a.data.data(), a.shape[0], a.shape[1], transpose_a, b.data.data(), b.shape[0],
           b.shape[1], transpose_b, c.data.data(), m, n, accumulate);
}

// ---------------------------------------------------------------------------
// Tape plumbing
// ---------------------------------------------------------------------------

int32_t Tape::push(Tensor val, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.val = std::move(val);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int32_t>(nodes_.size()) - 1;
}

Var Tape::leaf(const Tensor& external) { return leaf(external, external.requires_grad); }

Var Tape::leaf(const Tensor& external, bool requires_grad) {
  Node n;
  n.view = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor owned) { return {push(std::move(owned), false, nullptr)}; }

const Tensor& Tape::val_of(int32_t id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.view ? *n.view : n.val;
}

const Tensor& Tape::value(Var v) const { return val_of(v.id); }

Tensor& Tape::grad_buf(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_touched) {
    const Tensor& v = val_of(id);
    n.grad.shape = v.shape;
    n.grad.data.assign(v.data.size(), 0.0);
    n.grad_touched = true;
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad_touched; }

const Tensor& Tape::grad(Var v) { return grad_buf(v.id); }

void Tape::backward(Var loss) {
  const Tensor& l = val_of(loss.id);
  if (l.size() != 1) {
    throw Error(ErrorKind::Data, "backward requires a scalar loss, got shape " + l.shape_str());
  }
  grad_buf(loss.id).data[0] += 1.0;
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_touched && n.requires_grad && n.back) n.back(*this);
  }
}

void Tape::zero_grads() {
  for (auto& n : nodes_) {
    n.grad_touched = false;
    n.grad = Tensor();
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural primitives
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& x = val_of(a.id);
  const Tensor& y = val_of(b.id);
  require_same_shape(x, y, "add");
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(std::move(out), needs(ai) || needs(bi), nullptr);
  nodes_.back().back = [ai, bi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    if (t.needs(ai)) {
      Tensor& ga = t.grad_buf(ai);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return {id};
}

Var Tape::sub(Var a, Var b) {
  const Tensor& x = val_of(a.id);
  const Tensor& y = val_of(b.id);
  require_same_shape(x, y, "sub");
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(std::move(out), needs(ai) || needs(bi), nullptr);
  nodes_.back().back = [ai, bi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    if (t.needs(ai)) {
      Tensor& ga = t.grad_buf(ai);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return {id};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& x = val_of(a.id);
  const Tensor& y = val_of(b.id);
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(std::move(out), needs(ai) || needs(bi), nullptr);
  nodes_.back().back = [ai, bi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(ai);
    const Tensor& y = t.val_of(bi);
    if (t.needs(ai)) {
      Tensor& ga = t.grad_buf(ai);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  };
  return {id};
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double c) {
  const Tensor& x = val_of(a.id);
  Tensor out = x;
  for (auto& v : out.data) v *= c;
  const int32_t ai = a.id;
  const int32_t id = push(std::move(out), needs(ai), nullptr);
  nodes_.back().back = [ai, c, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& ga = t.grad_buf(ai);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  };
  return {id};
}

Var Tape::add_rowvec(Var xv, Var bv) {
  const Tensor& x = val_of(xv.id);
  const Tensor& b = val_of(bv.id);
  if (x.rank() != 2 || b.rank() != 1 || b.shape[0] != x.shape[1]) {
    throw Error(ErrorKind::Data,
                "add_rowvec: incompatible shapes " + x.shape_str() + " and " + b.shape_str());
  }
  const int64_t rows = x.shape[0], cols = x.shape[1];
  Tensor out = x;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  const int32_t xi = xv.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(xi) || needs(bi), nullptr);
  nodes_.back().back = [xi, bi, id, rows, cols](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    if (t.needs(xi)) {
      Tensor& gx = t.grad_buf(xi);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  };
  return {id};
}

Var Tape::add_const_broadcast(Var xv, Tensor tile) {
  const Tensor& x = val_of(xv.id);
  const int64_t tsize = tile.size();
  if (tsize == 0 || x.size() % tsize != 0) {
    throw Error(ErrorKind::Data, "add_const_broadcast: tile size " + std::to_string(tsize) +
                                     " does not divide " + std::to_string(x.size()));
  }
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += tile[i % tsize];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return {id};
}

Var Tape::relu(Var xv) {
  const Tensor& x = val_of(xv.id);
  Tensor out = x;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(xi);
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
  };
  return {id};
}

Var Tape::sin(Var xv) {
  const Tensor& x = val_of(xv.id);
  Tensor out = x;
  for (auto& v : out.data) v = std::sin(v);
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(xi);
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * std::cos(x[i]);
  };
  return {id};
}

Var Tape::cos(Var xv) {
  const Tensor& x = val_of(xv.id);
  Tensor out = x;
  for (auto& v : out.data) v = std::cos(v);
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(xi);
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * std::sin(x[i]);
  };
  return {id};
}

Var Tape::sqrt_guarded(Var xv) {
  const Tensor& x = val_of(xv.id);
  Tensor out = x;
  for (auto& v : out.data) v = v > 0.0 ? std::sqrt(v) : 0.0;
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Node& self = t.nodes_[static_cast<size_t>(id)];
    const Tensor& g = self.grad;
    const Tensor& y = self.val;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) {
      if (y[i] > 0.0) gx[i] += g[i] * 0.5 / y[i];
    }
  };
  return {id};
}

Var Tape::dropout(Var xv, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) {
    throw Error(ErrorKind::Config, "dropout probability must be in [0,1), got " + std::to_string(p));
  }
  if (!train || p == 0.0) return xv;
  const Tensor& x = val_of(xv.id);
  Tensor mask(x.shape);
  const double keep = 1.0 - p;
  const double inv_keep = 1.0 / keep;
  for (auto& m : mask.data) m = rng.uniform() < keep ? inv_keep : 0.0;
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, mask = std::move(mask)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  };
  return {id};
}

Var Tape::reshape(Var xv, std::vector<int64_t> new_shape) {
  const Tensor& x = val_of(xv.id);
  if (shape_product(new_shape) != x.size()) {
    throw Error(ErrorKind::Data, "reshape: " + x.shape_str() + " has " + std::to_string(x.size()) +
                                     " elements, target " + shape_to_string(new_shape));
  }
  Tensor out(std::move(new_shape), x.data);
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return {id};
}

Var Tape::transpose_12(Var xv) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 3) throw Error(ErrorKind::Data, "transpose_12 expects rank 3, got " + x.shape_str());
  const int64_t B = x.shape[0], C = x.shape[1], L = x.shape[2];
  Tensor out({B, L, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t l = 0; l < L; ++l) out[(b * L + l) * C + c] = x[(b * C + c) * L + l];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, B, C, L](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t l = 0; l < L; ++l) gx[(b * C + c) * L + l] += g[(b * L + l) * C + c];
  };
  return {id};
}

Var Tape::permute_0213(Var xv) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 4) throw Error(ErrorKind::Data, "permute_0213 expects rank 4, got " + x.shape_str());
  const int64_t A = x.shape[0], B = x.shape[1], C = x.shape[2], D = x.shape[3];
  Tensor out({A, C, B, D});
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t d = 0; d < D; ++d)
          out[((a * C + c) * B + b) * D + d] = x[((a * B + b) * C + c) * D + d];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, A, B, C, D](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t a = 0; a < A; ++a)
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t d = 0; d < D; ++d)
            gx[((a * B + b) * C + c) * D + d] += g[((a * C + c) * B + b) * D + d];
  };
  return {id};
}

Var Tape::select_time(Var xv, int64_t step) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 3) throw Error(ErrorKind::Data, "select_time expects rank 3, got " + x.shape_str());
  const int64_t B = x.shape[0], T = x.shape[1], D = x.shape[2];
  if (step < 0 || step >= T) {
    throw Error(ErrorKind::Data, "select_time: step " + std::to_string(step) + " out of range [0," +
                                     std::to_string(T) + ")");
  }
  Tensor out({B, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t d = 0; d < D; ++d) out[b * D + d] = x[(b * T + step) * D + d];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, T, D, step](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    const int64_t B = g.shape[0];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t d = 0; d < D; ++d) gx[(b * T + step) * D + d] += g[b * D + d];
  };
  return {id};
}

Var Tape::gather_rows(Var xv, std::vector<int64_t> rows) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 2) throw Error(ErrorKind::Data, "gather_rows expects rank 2, got " + x.shape_str());
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t M = static_cast<int64_t>(rows.size());
  Tensor out({M, C});
  for (int64_t m = 0; m < M; ++m) {
    const int64_t r = rows[static_cast<size_t>(m)];
    if (r < 0 || r >= N) {
      throw Error(ErrorKind::Data,
                  "gather_rows: index " + std::to_string(r) + " out of range [0," + std::to_string(N) + ")");
    }
    for (int64_t c = 0; c < C; ++c) out[m * C + c] = x[r * C + c];
  }
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, C, rows = std::move(rows)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (size_t m = 0; m < rows.size(); ++m)
      for (int64_t c = 0; c < C; ++c) gx[rows[m] * C + c] += g[static_cast<int64_t>(m) * C + c];
  };
  return {id};
}

Var Tape::scale_rows(Var xv, Tensor row_weights) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 2 || row_weights.size() != x.shape[0]) {
    throw Error(ErrorKind::Data, "scale_rows: weights " + row_weights.shape_str() +
                                     " incompatible with " + x.shape_str());
  }
  const int64_t N = x.shape[0], C = x.shape[1];
  Tensor out = x;
  for (int64_t r = 0; r < N; ++r)
    for (int64_t c = 0; c < C; ++c) out[r * C + c] *= row_weights[r];
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, C, w = std::move(row_weights)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    const int64_t N = w.size();
    for (int64_t r = 0; r < N; ++r)
      for (int64_t c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * w[r];
  };
  return {id};
}

Var Tape::mul_scalar(Var xv, Var sv) {
  const Tensor& x = val_of(xv.id);
  const Tensor& s = val_of(sv.id);
  if (s.size() != 1) throw Error(ErrorKind::Data, "mul_scalar: scalar operand has shape " + s.shape_str());
  Tensor out = x;
  for (auto& v : out.data) v *= s[0];
  const int32_t xi = xv.id, si = sv.id;
  const int32_t id = push(std::move(out), needs(xi) || needs(si), nullptr);
  nodes_.back().back = [xi, si, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(xi);
    const Tensor& s = t.val_of(si);
    if (t.needs(xi)) {
      Tensor& gx = t.grad_buf(xi);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[0];
    }
    if (t.needs(si)) {
      Tensor& gs = t.grad_buf(si);
      double acc = 0.0;
      for (int64_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      gs[0] += acc;
    }
  };
  return {id};
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var Tape::sum_all(Var xv) {
  const Tensor& x = val_of(xv.id);
  double acc = 0.0;
  for (double v : x.data) acc += v;
  const int32_t xi = xv.id;
  const int32_t id = push(Tensor::scalar(acc), needs(xi), nullptr);
  nodes_.back().back = [xi, id](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad[0];
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return {id};
}

Var Tape::mean_all(Var xv) {
  const Tensor& x = val_of(xv.id);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.data) acc += v;
  const int32_t xi = xv.id;
  const int32_t id = push(Tensor::scalar(acc * inv_n), needs(xi), nullptr);
  nodes_.back().back = [xi, id, inv_n](Tape& t) {
    const double g = t.nodes_[static_cast<size_t>(id)].grad[0] * inv_n;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return {id};
}

Var Tape::sum_last(Var xv) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() < 1) throw Error(ErrorKind::Data, "sum_last expects rank >= 1");
  const int64_t D = x.shape.back();
  const int64_t rows = x.size() / D;
  Tensor out(drop_last(x.shape));
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t d = 0; d < D; ++d) acc += x[r * D + d];
    out[r] = acc;
  }
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, D, rows](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t d = 0; d < D; ++d) gx[r * D + d] += g[r];
  };
  return {id};
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var Tape::matmul(Var av, Var bv) {
  const Tensor& a = val_of(av.id);
  const Tensor& b = val_of(bv.id);
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw Error(ErrorKind::Data, "matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor out({a.shape[0], b.shape[1]});
  gemm(a, false, b, false, out, false);
  const int32_t ai = av.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(ai) || needs(bi), nullptr);
  nodes_.back().back = [ai, bi, id](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& a = t.val_of(ai);
    const Tensor& b = t.val_of(bi);
    if (t.needs(ai)) gemm(g, false, b, true, t.grad_buf(ai), true);
    if (t.needs(bi)) gemm(a, true, g, false, t.grad_buf(bi), true);
  };
  return {id};
}

Var Tape::bmm(Var av, Var bv, bool transpose_b) {
  const Tensor& a = val_of(av.id);
  const Tensor& b = val_of(bv.id);
  if (a.rank() != 3 || b.rank() != 3 || a.shape[0] != b.shape[0]) {
    throw Error(ErrorKind::Data, "bmm: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
  }
  const int64_t G = a.shape[0], M = a.shape[1], K = a.shape[2];
  const int64_t bk = transpose_b ? b.shape[2] : b.shape[1];
  const int64_t N = transpose_b ? b.shape[1] : b.shape[2];
  if (bk != K) {
    throw Error(ErrorKind::Data, "bmm: inner dimensions differ in " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor out({G, M, N});
  const double* ap = a.data.data();
  const double* bp = b.data.data();
  double* op = out.data.data();
  const int64_t asz = M * K, bsz = b.shape[1] * b.shape[2], osz = M * N;
  parallel_for(G, [&](int64_t g0, int64_t g1) {
    for (int64_t g = g0; g < g1; ++g) {
      CMap A(ap + g * asz, M, K);
      MMap C(op + g * osz, M, N);
      if (transpose_b) {
        CMap B(bp + g * bsz, N, K);
        C.noalias() = A * B.transpose();
      } else {
        CMap B(bp + g * bsz, K, N);
        C.noalias() = A * B;
      }
    }
  });
  const int32_t ai = av.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(ai) || needs(bi), nullptr);
  nodes_.back().back = [ai, bi, id, G, M, K, N, asz, bsz, osz, transpose_b](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& a = t.val_of(ai);
    const Tensor& b = t.val_of(bi);
    const bool na = t.needs(ai), nb = t.needs(bi);
    const double* gp = g.data.data();
    const double* ap = a.data.data();
    const double* bp = b.data.data();
    double* gap = na ? t.grad_buf(ai).data.data() : nullptr;
    double* gbp = nb ? t.grad_buf(bi).data.data() : nullptr;
    parallel_for(G, [&](int64_t g0, int64_t g1) {
      for (int64_t i = g0; i < g1; ++i) {
        CMap G_(gp + i * osz, M, N);
        CMap A(ap + i * asz, M, K);
        if (transpose_b) {
          CMap B(bp + i * bsz, N, K);
          if (na) MMap(gap + i * asz, M, K).noalias() += G_ * B;
          if (nb) MMap(gbp + i * bsz, N, K).noalias() += G_.transpose() * A;
        } else {
          CMap B(bp + i * bsz, K, N);
          if (na) MMap(gap + i * asz, M, K).noalias() += G_ * B.transpose();
          if (nb) MMap(gbp + i * bsz, K, N).noalias() += A.transpose() * G_;
        }
      }
    });
  };
  return {id};
}

// ---------------------------------------------------------------------------
// Neural-network layers
// ---------------------------------------------------------------------------

Var Tape::linear(Var xv, Var wv, Var bv) {
  const Tensor& x = val_of(xv.id);
  const Tensor& w = val_of(wv.id);
  if (x.rank() < 2) throw Error(ErrorKind::Data, "linear expects rank >= 2 input, got " + x.shape_str());
  const int64_t din = x.shape.back();
  if (w.rank() != 2 || w.shape[0] != din) {
    throw Error(ErrorKind::Data, "linear: weight " + w.shape_str() + " incompatible with input " + x.shape_str());
  }
  std::vector<int64_t> out_shape = x.shape;
  out_shape.back() = w.shape[1];
  Var flat = xv;
  if (x.rank() != 2) flat = reshape(xv, {x.size() / din, din});
  Var y = matmul(flat, wv);
  y = add_rowvec(y, bv);
  if (x.rank() != 2) y = reshape(y, std::move(out_shape));
  return y;
}

Var Tape::conv1d_same(Var xv, Var wv, Var bv) {
  const Tensor& x_in = val_of(xv.id);
  Var x2 = xv;
  const bool lifted = x_in.rank() == 2;
  if (lifted) x2 = reshape(xv, {1, x_in.shape[0], x_in.shape[1]});
  const Tensor& x = val_of(x2.id);
  const Tensor& w = val_of(wv.id);
  const Tensor& b = val_of(bv.id);
  if (x.rank() != 3 || w.rank() != 3) {
    throw Error(ErrorKind::Data, "conv1d: input " + x.shape_str() + " weight " + w.shape_str());
  }
  const int64_t B = x.shape[0], Cin = x.shape[1], L = x.shape[2];
  const int64_t Cout = w.shape[0], K = w.shape[2];
  if (w.shape[1] != Cin) {
    throw Error(ErrorKind::Data, "conv1d: input channels " + std::to_string(Cin) +
                                     " do not match kernel channels " + std::to_string(w.shape[1]));
  }
  if (K % 2 == 0) throw Error(ErrorKind::Config, "conv1d same padding requires odd kernel, got " + std::to_string(K));
  if (b.size() != Cout) {
    throw Error(ErrorKind::Data, "conv1d: bias size " + std::to_string(b.size()) +
                                     " does not match output channels " + std::to_string(Cout));
  }
  const int64_t pad = K / 2;

  // im2col: rows indexed by (batch, position), columns by (channel, tap)
  Tensor col({B * L, Cin * K});
  for (int64_t bb = 0; bb < B; ++bb) {
    for (int64_t l = 0; l < L; ++l) {
      double* row = col.data.data() + (bb * L + l) * Cin * K;
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const double* src = x.data.data() + (bb * Cin + ci) * L;
        for (int64_t k = 0; k < K; ++k) {
          const int64_t li = l + k - pad;
          row[ci * K + k] = (li >= 0 && li < L) ? src[li] : 0.0;
        }
      }
    }
  }

  Tensor w_flat({Cout, Cin * K}, w.data);  // same layout, reinterpreted
  Tensor out_mat({B * L, Cout});
  gemm(col, false, w_flat, true, out_mat, false);

  Tensor out({B, Cout, L});
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t co = 0; co < Cout; ++co) {
      const double bias = b[co];
      for (int64_t l = 0; l < L; ++l) out[(bb * Cout + co) * L + l] = out_mat[(bb * L + l) * Cout + co] + bias;
    }

  const int32_t xi = x2.id, wi = wv.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(xi) || needs(wi) || needs(bi), nullptr);
  nodes_.back().back = [xi, wi, bi, id, B, Cin, Cout, L, K, pad, col = std::move(col)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    Tensor g_mat({B * L, Cout});
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t co = 0; co < Cout; ++co)
        for (int64_t l = 0; l < L; ++l) g_mat[(bb * L + l) * Cout + co] = g[(bb * Cout + co) * L + l];

    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t r = 0; r < B * L; ++r)
        for (int64_t co = 0; co < Cout; ++co) gb[co] += g_mat[r * Cout + co];
    }
    if (t.needs(wi)) {
      Tensor& gw = t.grad_buf(wi);
      Tensor gw_flat({Cout, Cin * K}, std::move(gw.data));
      gemm(g_mat, true, col, false, gw_flat, true);
      gw.data = std::move(gw_flat.data);
    }
    if (t.needs(xi)) {
      const Tensor& w = t.val_of(wi);
      Tensor w_flat({Cout, Cin * K}, w.data);
      Tensor g_col({B * L, Cin * K});
      gemm(g_mat, false, w_flat, false, g_col, false);
      Tensor& gx = t.grad_buf(xi);
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t l = 0; l < L; ++l) {
          const double* row = g_col.data.data() + (bb * L + l) * Cin * K;
          for (int64_t ci = 0; ci < Cin; ++ci) {
            double* dst = gx.data.data() + (bb * Cin + ci) * L;
            for (int64_t k = 0; k < K; ++k) {
              const int64_t li = l + k - pad;
              if (li >= 0 && li < L) dst[li] += row[ci * K + k];
            }
          }
        }
    }
  };
  Var y{id};
  if (lifted) y = reshape(y, {Cout, L});
  return y;
}

Var Tape::batch_norm(Var xv, Var gv, Var bv, Tensor* running_mean, Tensor* running_var, bool train,
                     double eps, double momentum) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() != 3) throw Error(ErrorKind::Data, "batch_norm expects [B,C,L], got " + x.shape_str());
  const int64_t B = x.shape[0], C = x.shape[1], L = x.shape[2];
  const Tensor& gamma = val_of(gv.id);
  const Tensor& beta = val_of(bv.id);
  if (gamma.size() != C || beta.size() != C) {
    throw Error(ErrorKind::Data, "batch_norm: affine parameters must have size C=" + std::to_string(C));
  }
  const int64_t n = B * L;
  if (train && n < 2) {
    throw Error(ErrorKind::Data, "batch_norm train mode needs at least 2 values per channel, got " +
                                     std::to_string(n));
  }

  Tensor xhat({B, C, L});
  Tensor inv_std({C});
  if (train) {
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0.0;
      for (int64_t bb = 0; bb < B; ++bb) {
        const double* src = x.data.data() + (bb * C + c) * L;
        for (int64_t l = 0; l < L; ++l) mean += src[l];
      }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t bb = 0; bb < B; ++bb) {
        const double* src = x.data.data() + (bb * C + c) * L;
        for (int64_t l = 0; l < L; ++l) {
          const double d = src[l] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[c] = is;
      for (int64_t bb = 0; bb < B; ++bb) {
        const double* src = x.data.data() + (bb * C + c) * L;
        double* dst = xhat.data.data() + (bb * C + c) * L;
        for (int64_t l = 0; l < L; ++l) dst[l] = (src[l] - mean) * is;
      }
      if (running_mean && running_var) {
        const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
        (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * mean;
        (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * unbiased;
      }
    }
  } else {
    if (!running_mean || !running_var) {
      throw Error(ErrorKind::Prerequisite, "batch_norm eval mode requires running statistics");
    }
    for (int64_t c = 0; c < C; ++c) {
      const double mean = (*running_mean)[c];
      const double is = 1.0 / std::sqrt((*running_var)[c] + eps);
      inv_std[c] = is;
      for (int64_t bb = 0; bb < B; ++bb) {
        const double* src = x.data.data() + (bb * C + c) * L;
        double* dst = xhat.data.data() + (bb * C + c) * L;
        for (int64_t l = 0; l < L; ++l) dst[l] = (src[l] - mean) * is;
      }
    }
  }

  Tensor out({B, C, L});
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t c = 0; c < C; ++c) {
      const double ga = gamma[c], be = beta[c];
      const double* src = xhat.data.data() + (bb * C + c) * L;
      double* dst = out.data.data() + (bb * C + c) * L;
      for (int64_t l = 0; l < L; ++l) dst[l] = ga * src[l] + be;
    }

  const int32_t xi = xv.id, gi = gv.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(xi) || needs(gi) || needs(bi), nullptr);
  nodes_.back().back = [xi, gi, bi, id, B, C, L, n, train, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& gamma = t.val_of(gi);
    if (t.needs(gi)) {
      Tensor& gg = t.grad_buf(gi);
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const double* gp = g.data.data() + (bb * C + c) * L;
          const double* xp = xhat.data.data() + (bb * C + c) * L;
          double acc = 0.0;
          for (int64_t l = 0; l < L; ++l) acc += gp[l] * xp[l];
          gg[c] += acc;
        }
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const double* gp = g.data.data() + (bb * C + c) * L;
          double acc = 0.0;
          for (int64_t l = 0; l < L; ++l) acc += gp[l];
          gb[c] += acc;
        }
    }
    if (t.needs(xi)) {
      Tensor& gx = t.grad_buf(xi);
      if (train) {
        // dX = gamma*inv_std*(dY - mean(dY) - xhat*mean(dY*xhat)) per channel
        for (int64_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int64_t bb = 0; bb < B; ++bb) {
            const double* gp = g.data.data() + (bb * C + c) * L;
            const double* xp = xhat.data.data() + (bb * C + c) * L;
            for (int64_t l = 0; l < L; ++l) {
              sum_g += gp[l];
              sum_gx += gp[l] * xp[l];
            }
          }
          const double mg = sum_g / static_cast<double>(n);
          const double mgx = sum_gx / static_cast<double>(n);
          const double scale = gamma[c] * inv_std[c];
          for (int64_t bb = 0; bb < B; ++bb) {
            const double* gp = g.data.data() + (bb * C + c) * L;
            const double* xp = xhat.data.data() + (bb * C + c) * L;
            double* dst = gx.data.data() + (bb * C + c) * L;
            for (int64_t l = 0; l < L; ++l) dst[l] += scale * (gp[l] - mg - xp[l] * mgx);
          }
        }
      } else {
        for (int64_t c = 0; c < C; ++c) {
          const double scale = gamma[c] * inv_std[c];
          for (int64_t bb = 0; bb < B; ++bb) {
            const double* gp = g.data.data() + (bb * C + c) * L;
            double* dst = gx.data.data() + (bb * C + c) * L;
            for (int64_t l = 0; l < L; ++l) dst[l] += scale * gp[l];
          }
        }
      }
    }
  };
  return {id};
}

Var Tape::layer_norm(Var xv, Var gv, Var bv, double eps) {
  const Tensor& x = val_of(xv.id);
  if (x.rank() < 1) throw Error(ErrorKind::Data, "layer_norm expects rank >= 1");
  const int64_t D = x.shape.back();
  if (D < 2) throw Error(ErrorKind::Data, "layer_norm needs at least 2 elements on the last axis");
  const int64_t rows = x.size() / D;
  const Tensor& gamma = val_of(gv.id);
  const Tensor& beta = val_of(bv.id);
  if (gamma.size() != D || beta.size() != D) {
    throw Error(ErrorKind::Data, "layer_norm: affine parameters must have size D=" + std::to_string(D));
  }

  Tensor xhat(x.shape);
  Tensor inv_std({rows});
  Tensor out(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data.data() + r * D;
    double mean = 0.0;
    for (int64_t d = 0; d < D; ++d) mean += src[d];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      const double dd = src[d] - mean;
      var += dd * dd;
    }
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* xh = xhat.data.data() + r * D;
    double* dst = out.data.data() + r * D;
    for (int64_t d = 0; d < D; ++d) {
      xh[d] = (src[d] - mean) * is;
      dst[d] = gamma[d] * xh[d] + beta[d];
    }
  }

  const int32_t xi = xv.id, gi = gv.id, bi = bv.id;
  const int32_t id = push(std::move(out), needs(xi) || needs(gi) || needs(bi), nullptr);
  nodes_.back().back = [xi, gi, bi, id, D, rows, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& gamma = t.val_of(gi);
    if (t.needs(gi)) {
      Tensor& gg = t.grad_buf(gi);
      for (int64_t r = 0; r < rows; ++r) {
        const double* gp = g.data.data() + r * D;
        const double* xp = xhat.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) gg[d] += gp[d] * xp[d];
      }
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_buf(bi);
      for (int64_t r = 0; r < rows; ++r) {
        const double* gp = g.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) gb[d] += gp[d];
      }
    }
    if (t.needs(xi)) {
      Tensor& gx = t.grad_buf(xi);
      for (int64_t r = 0; r < rows; ++r) {
        const double* gp = g.data.data() + r * D;
        const double* xp = xhat.data.data() + r * D;
        double m1 = 0.0, m2 = 0.0;
        for (int64_t d = 0; d < D; ++d) {
          const double dyh = gp[d] * gamma[d];
          m1 += dyh;
          m2 += dyh * xp[d];
        }
        m1 /= static_cast<double>(D);
        m2 /= static_cast<double>(D);
        double* dst = gx.data.data() + r * D;
        const double is = inv_std[r];
        for (int64_t d = 0; d < D; ++d) {
          const double dyh = gp[d] * gamma[d];
          dst[d] += is * (dyh - m1 - xp[d] * m2);
        }
      }
    }
  };
  return {id};
}

Var Tape::softmax_last(Var xv) {
  const Tensor& x = val_of(xv.id);
  const int64_t D = x.shape.back();
  const int64_t rows = x.size() / D;
  Tensor out(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data.data() + r * D;
    double* dst = out.data.data() + r * D;
    double mx = src[0];
    for (int64_t d = 1; d < D; ++d) mx = std::max(mx, src[d]);
    double sum = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      dst[d] = std::exp(src[d] - mx);
      sum += dst[d];
    }
    const double inv = 1.0 / sum;
    for (int64_t d = 0; d < D; ++d) dst[d] *= inv;
  }
  const int32_t xi = xv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, D, rows](Tape& t) {
    const Node& self = t.nodes_[static_cast<size_t>(id)];
    const Tensor& g = self.grad;
    const Tensor& y = self.val;
    Tensor& gx = t.grad_buf(xi);
    for (int64_t r = 0; r < rows; ++r) {
      const double* gp = g.data.data() + r * D;
      const double* yp = y.data.data() + r * D;
      double dot = 0.0;
      for (int64_t d = 0; d < D; ++d) dot += gp[d] * yp[d];
      double* dst = gx.data.data() + r * D;
      for (int64_t d = 0; d < D; ++d) dst[d] += yp[d] * (gp[d] - dot);
    }
  };
  return {id};
}

Var Tape::wing(Var dv, double w, double eps) {
  if (w <= 0.0 || eps <= 0.0) {
    throw Error(ErrorKind::Config, "wing parameters must be positive (w=" + std::to_string(w) +
                                       ", eps=" + std::to_string(eps) + ")");
  }
  const double C = w - w * std::log(1.0 + w / eps);
  const Tensor& x = val_of(dv.id);
  Tensor out = x;
  for (auto& v : out.data) v = v < w ? w * std::log(1.0 + v / eps) : v - C;
  const int32_t xi = dv.id;
  const int32_t id = push(std::move(out), needs(xi), nullptr);
  nodes_.back().back = [xi, id, w, eps](Tape& t) {
    const Tensor& g = t.nodes_[static_cast<size_t>(id)].grad;
    const Tensor& x = t.val_of(xi);
    Tensor& gx = t.grad_buf(xi);
    for (int64_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * (x[i] < w ? w / (eps + x[i]) : 1.0);
    }
  };
  return {id};
}

// ---------------------------------------------------------------------------
// Composed attention
// ---------------------------------------------------------------------------

Var multi_head_attention(Tape& t, Var x, const AttentionVars& w, int n_head, Tensor* attn_probs) {
  const Tensor& xt = t.value(x);
  const bool lifted = xt.rank() == 2;
  Var x3 = lifted ? t.reshape(x, {1, xt.shape[0], xt.shape[1]}) : x;
  const Tensor& x3t = t.value(x3);
  if (x3t.rank() != 3) {
    throw Error(ErrorKind::Data, "attention expects [B,T,D] or [T,D], got " + xt.shape_str());
  }
  const int64_t B = x3t.shape[0], T = x3t.shape[1], D = x3t.shape[2];
  if (n_head <= 0 || D % n_head != 0) {
    throw Error(ErrorKind::Config, "attention: d_model " + std::to_string(D) +
                                       " not divisible by n_head " + std::to_string(n_head));
  }
  const int64_t H = n_head, dh = D / H;

  auto heads = [&](Var q) {
    // [B,T,D] -> [B*H, T, dh]
    Var r = t.reshape(q, {B, T, H, dh});
    r = t.permute_0213(r);  // [B,H,T,dh]
    return t.reshape(r, {B * H, T, dh});
  };

  Var q = heads(t.linear(x3, w.wq, w.bq));
  Var k = heads(t.linear(x3, w.wk, w.bk));
  Var v = heads(t.linear(x3, w.wv, w.bv));

  Var scores = t.scale(t.bmm(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var probs = t.softmax_last(scores);
  if (attn_probs) *attn_probs = t.value(probs);

  Var ctx = t.bmm(probs, v);                       // [B*H, T, dh]
  ctx = t.reshape(ctx, {B, H, T, dh});
  ctx = t.permute_0213(ctx);                       // [B,T,H,dh]
  ctx = t.reshape(ctx, {B, T, D});
  Var out = t.linear(ctx, w.wo, w.bo);
  if (lifted) out = t.reshape(out, {T, D});
  return out;
}

}  // namespace ift::nn
