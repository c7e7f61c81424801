#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ift/rng.hpp"
#include "ift/tensor.hpp"

namespace ift::nn {

// Handle to a node on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over a linear record of primitive
// operations. Nodes are appended in execution order, so the record is
// topologically sorted by construction; backward() walks it once in reverse.
//
// Leaves reference external tensors (no copy); interior nodes own their
// values. Gradients are accumulated per node and read back via grad().
// One tape is single-threaded; distinct tapes are independent.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- node construction -------------------------------------------------
  Var leaf(const Tensor& external);                      // honors external.requires_grad
  Var leaf(const Tensor& external, bool requires_grad);  // explicit override
  Var constant(Tensor owned);                            // never differentiated

  // --- access -------------------------------------------------------------
  const Tensor& value(Var v) const;
  const Tensor& grad(Var v);  // allocates zeros if backward never touched it
  bool has_grad(Var v) const;
  size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // requires-grad node. `loss` must be scalar (exactly one element).
  void backward(Var loss);
  void zero_grads();

  // --- elementwise and structural primitives ------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double c);
  Var add_rowvec(Var x, Var b);                  // x [R,C] + b [C]
  Var add_const_broadcast(Var x, Tensor tile);   // x + tile repeated along axis 0
  Var relu(Var x);
  Var sin(Var x);
  Var cos(Var x);
  Var sqrt_guarded(Var x);                       // d/dx at 0 defined as 0
  Var dropout(Var x, double p, Rng& rng, bool train);  // inverted dropout
  Var reshape(Var x, std::vector<int64_t> new_shape);
  Var transpose_12(Var x);                       // [B,C,L] -> [B,L,C]
  Var permute_0213(Var x);                       // [A,B,C,D] -> [A,C,B,D]
  Var select_time(Var x, int64_t t);             // [B,T,D] -> [B,D] at step t
  Var gather_rows(Var x, std::vector<int64_t> rows);
  Var scale_rows(Var x, Tensor row_weights);     // diag(w) * x, w constant
  Var mul_scalar(Var x, Var s);                  // s holds exactly one element

  // --- reductions -----------------------------------------------------------
  Var sum_all(Var x);
  Var mean_all(Var x);
  Var sum_last(Var x);  // [..., D] -> [...]

  // --- linear algebra -------------------------------------------------------
  Var matmul(Var a, Var b);                         // [M,K] x [K,N]
  Var bmm(Var a, Var b, bool transpose_b = false);  // [G,M,K] x [G,K,N] / [G,N,K]

  // --- neural-network layers -------------------------------------------------
  // y = x W + b over the last axis; x may have any leading shape.
  Var linear(Var x, Var w, Var b);
  // Same-padded stride-1 1D convolution, odd K. x [B,Cin,L] or [Cin,L].
  Var conv1d_same(Var x, Var w, Var b);
  // Per-channel normalization of x [B,C,L]. Train mode uses batch statistics
  // and updates running stats in place (exponential moving average); eval
  // mode reads the running stats.
  Var batch_norm(Var x, Var gamma, Var beta, Tensor* running_mean, Tensor* running_var,
                 bool train, double eps, double momentum);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var softmax_last(Var x);
  // Piecewise wing transform of nonnegative distances:
  //   x < w : w*log(1 + x/eps),  else x - C  with C = w - w*log(1 + w/eps).
  Var wing(Var dist, double w, double eps);

private:
  struct Node {
    const Tensor* view = nullptr;  // leaves alias external storage
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_touched = false;
    std::function<void(Tape&)> back;
  };

  int32_t push(Tensor val, bool requires_grad, std::function<void(Tape&)> back);
  const Tensor& val_of(int32_t id) const;
  Tensor& grad_buf(int32_t id);  // lazily allocates zeros
  bool needs(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  std::vector<Node> nodes_;
};

// Multi-head self-attention over x [B,T,D] (or [T,D]); weight matrices are
// [D,D] with y = x W + b convention. If attn_probs is non-null it receives a
// copy of the softmaxed attention matrix, shaped [B*n_head, T, T].
struct AttentionVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};
Var multi_head_attention(Tape& t, Var x, const AttentionVars& w, int n_head,
                         Tensor* attn_probs = nullptr);

// C = op(A) op(B) (+C when accumulate); thin wrapper over Eigen with a
// deterministic row-split across worker threads.
void gemm(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b, Tensor& c,
          bool accumulate);

}  // namespace ift::nn
