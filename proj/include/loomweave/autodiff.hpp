#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "loomweave/tensor.hpp"

namespace loomweave {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the eager computation graph. Forward results are computed at
/// construction; `backprop` scatters this node's grad into its parents.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward()
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;
    std::string name;  // set for parameters only

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
    }
    void accumulate(const Tensor& g) {
        ensure_grad();
        grad.add_scaled(g, 1.0);
    }
};

Var constant(Tensor v);
Var parameter(Tensor v, std::string name);

/// Graph-recording toggle; sampling loops disable recording to skip the
/// backward bookkeeping entirely.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

/// Create an op node. Parents and backprop are dropped when grad recording is
/// off or no parent carries gradient.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

/// Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

// ---- elementwise & broadcast ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);                 // same shape
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
/// b broadcast against a: b.shape must equal a.shape with some dims == 1.
Var mul_bcast(const Var& a, const Var& b);
/// v (C,) added to / multiplied into every row of x (..., C).
Var add_rowbcast(const Var& x, const Var& v);
Var mul_rowbcast(const Var& x, const Var& v);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var permute(const Var& a, std::vector<int> order);
Var concat_last(const std::vector<Var>& xs);
Var slice_last(const Var& a, int start, int len);
/// Stack K same-shape (R, C) tensors into (R, K, C).
Var stack_mid(const std::vector<Var>& xs);
Var gather_rows(const Var& x, std::vector<int> indices);      // (R,C) -> (K,C)
Var scatter_rows(const Var& base, const Var& rows, std::vector<int> indices);
Var repeat_rows(const Var& x, int times);                     // (R,C) -> (R*times,C)
Var sum_mid(const Var& x);                                    // (R,M,C) -> (R,C)

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                       // (m,k)x(k,n)
Var bmm(const Var& a, const Var& b, bool trans_b = false);    // (B,m,k)x(B,k,n) or (B,n,k)^T
Var linear(const Var& x, const Var& w, const Var& b);         // x(...,in) @ w(in,out) + b
Var linear_nobias(const Var& x, const Var& w);

// ---- normalization / attention pieces ----
Var softmax_last(const Var& a);
Var layer_norm_last(const Var& x, double eps = 1e-5);         // no affine

// ---- convolution (single image, H x W x C layout) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int ksize, int stride, int pad);
Var upsample_nearest2x(const Var& x);
Var avg_pool2d(const Var& x, int k);  // (H,W,C) -> (H/k, W/k, C)

// ---- reductions / losses ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mse(const Var& a, const Var& b);
/// Mean over channels and valid neighbor pairs of squared forward differences
/// (horizontal + vertical) on an H x W x C plane.
Var tv_plane(const Var& plane);

// Raw BLAS-backed matmul on tensors (row-major). C = alpha*op(A)op(B) + beta*C.
void gemm_raw(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc);

}  // namespace loomweave
