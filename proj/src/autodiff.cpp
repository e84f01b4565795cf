#include "loomweave/autodiff.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

extern "C" {
void cblas_dgemm(int order, int trans_a, int trans_b, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);
}

namespace loomweave {

// CBLAS row-major order = 101, NoTrans = 111, Trans = 112.
void gemm_raw(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc) {
    cblas_dgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111, m, n, k, alpha,
                a, lda, b, ldb, beta, c, ldc);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var parameter(Tensor v, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents)
            if (p->requires_grad) any = true;
        if (any) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backprop = std::move(backprop);
        }
    }
    return n;
}

void backward(const Var& root) {
    LW_CHECK(root->value.numel() == 1, "backward root must be scalar");
    // Post-order DFS: parents appear before their consumers.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.numel() == n->value.numel()) n->backprop(*n);
        if (n->name.empty()) n->grad = Tensor();  // keep grads on parameters only
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    LW_CHECK(a->value.same_shape(b->value), "add shape mismatch");
    Tensor out = a->value;
    out.add_scaled(b->value, 1.0);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (int i = 0; i < 2; ++i)
            if (self.parents[i]->requires_grad) self.parents[i]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    LW_CHECK(a->value.same_shape(b->value), "sub shape mismatch");
    Tensor out = a->value;
    out.add_scaled(b->value, -1.0);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            self.parents[1]->grad.add_scaled(self.grad, -1.0);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    LW_CHECK(a->value.same_shape(b->value), "mul shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad();
            Tensor& g = self.parents[0]->grad;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            Tensor& g = self.parents[1]->grad;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        self.parents[0]->ensure_grad();
        self.parents[0]->grad.add_scaled(self.grad, s);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    return make_op(std::move(out), {a}, [](Node& self) {
        self.parents[0]->accumulate(self.grad);
    });
}

Var silu(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = out[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    return make_op(std::move(out), {a}, [](Node& self) {
        const Tensor& x = self.parents[0]->value;
        self.parents[0]->ensure_grad();
        Tensor& g = self.parents[0]->grad;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-x[i]));
            g[i] += self.grad[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
}

namespace {
// Strides for a shape, row-major.
std::vector<int64_t> strides_of(const std::vector<int>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * shape[i + 1];
    return st;
}
}  // namespace

Var mul_bcast(const Var& a, const Var& b) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    LW_CHECK(as.size() == bs.size(), "mul_bcast rank mismatch");
    for (size_t i = 0; i < as.size(); ++i)
        LW_CHECK(bs[i] == as[i] || bs[i] == 1, "mul_bcast dim mismatch");
    auto ast = strides_of(as);
    auto bst = strides_of(bs);
    std::vector<int64_t> bmap(as.size());
    for (size_t i = 0; i < as.size(); ++i) bmap[i] = (bs[i] == 1) ? 0 : bst[i];
    Tensor out(a->value.shape());
    const int nd = static_cast<int>(as.size());
    std::vector<int> idx(nd, 0);
    for (int64_t lin = 0; lin < out.numel(); ++lin) {
        int64_t boff = 0;
        int64_t rem = lin;
        for (int d = 0; d < nd; ++d) {
            int64_t q = rem / ast[d];
            rem -= q * ast[d];
            boff += q * bmap[d];
        }
        out[lin] = a->value[lin] * b->value[boff];
    }
    return make_op(std::move(out), {a, b}, [ast, bmap, nd](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        bool need_a = self.parents[0]->requires_grad;
        bool need_b = self.parents[1]->requires_grad;
        if (need_a) self.parents[0]->ensure_grad();
        if (need_b) self.parents[1]->ensure_grad();
        for (int64_t lin = 0; lin < av.numel(); ++lin) {
            int64_t boff = 0;
            int64_t rem = lin;
            for (int d = 0; d < nd; ++d) {
                int64_t q = rem / ast[d];
                rem -= q * ast[d];
                boff += q * bmap[d];
            }
            if (need_a) self.parents[0]->grad[lin] += self.grad[lin] * bv[boff];
            if (need_b) self.parents[1]->grad[boff] += self.grad[lin] * av[lin];
        }
    });
}

Var add_rowbcast(const Var& x, const Var& v) {
    int c = v->value.dim(v->value.ndim() - 1);
    LW_CHECK(v->value.numel() == c, "add_rowbcast expects a vector");
    LW_CHECK(x->value.dim(x->value.ndim() - 1) == c, "add_rowbcast channel mismatch");
    Tensor out = x->value;
    int64_t rows = out.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) out[r * c + i] += v->value[i];
    return make_op(std::move(out), {x, v}, [c, rows](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            Tensor& g = self.parents[1]->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i) g[i] += self.grad[r * c + i];
        }
    });
}

Var mul_rowbcast(const Var& x, const Var& v) {
    int c = v->value.dim(v->value.ndim() - 1);
    LW_CHECK(v->value.numel() == c, "mul_rowbcast expects a vector");
    LW_CHECK(x->value.dim(x->value.ndim() - 1) == c, "mul_rowbcast channel mismatch");
    Tensor out = x->value;
    int64_t rows = out.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) out[r * c + i] *= v->value[i];
    return make_op(std::move(out), {x, v}, [c, rows](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& vv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad();
            Tensor& g = self.parents[0]->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i) g[r * c + i] += self.grad[r * c + i] * vv[i];
        }
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            Tensor& g = self.parents[1]->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i) g[i] += self.grad[r * c + i] * xv[r * c + i];
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        p->grad.add_scaled(self.grad.reshaped(p->value.shape()), 1.0);
    });
}

Var permute(const Var& a, std::vector<int> order) {
    const auto& s = a->value.shape();
    LW_CHECK(order.size() == s.size(), "permute order size mismatch");
    std::vector<int> os(order.size());
    for (size_t i = 0; i < order.size(); ++i) os[i] = s[order[i]];
    auto in_st = strides_of(s);
    auto out_st = strides_of(os);
    Tensor out(os);
    const int nd = static_cast<int>(s.size());
    for (int64_t lin = 0; lin < out.numel(); ++lin) {
        int64_t rem = lin, src = 0;
        for (int d = 0; d < nd; ++d) {
            int64_t q = rem / out_st[d];
            rem -= q * out_st[d];
            src += q * in_st[order[d]];
        }
        out[lin] = a->value[src];
    }
    return make_op(std::move(out), {a}, [order, in_st, out_st, nd](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int64_t lin = 0; lin < self.grad.numel(); ++lin) {
            int64_t rem = lin, src = 0;
            for (int d = 0; d < nd; ++d) {
                int64_t q = rem / out_st[d];
                rem -= q * out_st[d];
                src += q * in_st[order[d]];
            }
            p->grad[src] += self.grad[lin];
        }
    });
}

Var concat_last(const std::vector<Var>& xs) {
    LW_CHECK(!xs.empty(), "concat_last needs inputs");
    auto lead = xs[0]->value.shape();
    int total = 0;
    std::vector<int> widths;
    for (const auto& x : xs) {
        const auto& s = x->value.shape();
        LW_CHECK(s.size() == lead.size(), "concat rank mismatch");
        for (size_t i = 0; i + 1 < s.size(); ++i)
            LW_CHECK(s[i] == lead[i], "concat leading dim mismatch");
        widths.push_back(s.back());
        total += s.back();
    }
    std::vector<int> os = lead;
    os.back() = total;
    Tensor out(os);
    int64_t rows = out.numel() / total;
    int off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
        int w = widths[k];
        const Tensor& v = xs[k]->value;
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * total + off, v.data() + r * w,
                        sizeof(double) * w);
        off += w;
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    return make_op(std::move(out), std::move(parents), [widths, total, rows](Node& self) {
        int off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            int w = widths[k];
            Node* p = self.parents[k].get();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int i = 0; i < w; ++i)
                        p->grad[r * w + i] += self.grad[r * total + off + i];
            }
            off += w;
        }
    });
}

Var slice_last(const Var& a, int start, int len) {
    const auto& s = a->value.shape();
    int c = s.back();
    LW_CHECK(start >= 0 && start + len <= c, "slice_last out of range");
    std::vector<int> os = s;
    os.back() = len;
    Tensor out(os);
    int64_t rows = out.numel() / len;
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * len, a->value.data() + r * c + start,
                    sizeof(double) * len);
    return make_op(std::move(out), {a}, [start, len, c, rows](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
            for (int i = 0; i < len; ++i)
                p->grad[r * c + start + i] += self.grad[r * len + i];
    });
}

Var stack_mid(const std::vector<Var>& xs) {
    LW_CHECK(!xs.empty(), "stack_mid needs inputs");
    int rows = xs[0]->value.dim(0), c = xs[0]->value.dim(1);
    for (const auto& x : xs)
        LW_CHECK(x->value.ndim() == 2 && x->value.dim(0) == rows && x->value.dim(1) == c,
                 "stack_mid shape mismatch");
    int k = static_cast<int>(xs.size());
    Tensor out({rows, k, c});
    for (int i = 0; i < k; ++i)
        for (int r = 0; r < rows; ++r)
            std::memcpy(out.data() + (static_cast<int64_t>(r) * k + i) * c,
                        xs[i]->value.data() + static_cast<int64_t>(r) * c,
                        sizeof(double) * c);
    std::vector<Var> parents(xs.begin(), xs.end());
    return make_op(std::move(out), std::move(parents), [rows, k, c](Node& self) {
        for (int i = 0; i < k; ++i) {
            Node* p = self.parents[i].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < c; ++j)
                    p->grad[static_cast<int64_t>(r) * c + j] +=
                        self.grad[(static_cast<int64_t>(r) * k + i) * c + j];
        }
    });
}

Var gather_rows(const Var& x, std::vector<int> indices) {
    LW_CHECK(x->value.ndim() == 2, "gather_rows expects 2-d input");
    int c = x->value.dim(1);
    Tensor out({static_cast<int>(indices.size()), c});
    for (size_t i = 0; i < indices.size(); ++i) {
        LW_CHECK(indices[i] >= 0 && indices[i] < x->value.dim(0), "gather index out of range");
        std::memcpy(out.data() + i * c, x->value.data() + static_cast<int64_t>(indices[i]) * c,
                    sizeof(double) * c);
    }
    return make_op(std::move(out), {x}, [indices = std::move(indices), c](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < indices.size(); ++i)
            for (int j = 0; j < c; ++j)
                p->grad[static_cast<int64_t>(indices[i]) * c + j] += self.grad[i * c + j];
    });
}

Var scatter_rows(const Var& base, const Var& rows, std::vector<int> indices) {
    LW_CHECK(base->value.ndim() == 2 && rows->value.ndim() == 2, "scatter_rows expects 2-d");
    LW_CHECK(rows->value.dim(0) == static_cast<int>(indices.size()), "scatter_rows count mismatch");
    LW_CHECK(rows->value.dim(1) == base->value.dim(1), "scatter_rows width mismatch");
    int c = base->value.dim(1);
    Tensor out = base->value;
    for (size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + static_cast<int64_t>(indices[i]) * c,
                    rows->value.data() + i * c, sizeof(double) * c);
    return make_op(std::move(out), {base, rows}, [indices = std::move(indices), c](Node& self) {
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            Tensor masked = self.grad;
            for (int idx : indices)
                std::memset(masked.data() + static_cast<int64_t>(idx) * c, 0, sizeof(double) * c);
            p->grad.add_scaled(masked, 1.0);
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i)
                for (int j = 0; j < c; ++j)
                    p->grad[i * c + j] += self.grad[static_cast<int64_t>(indices[i]) * c + j];
        }
    });
}

Var repeat_rows(const Var& x, int times) {
    LW_CHECK(x->value.ndim() == 2 && times >= 1, "repeat_rows expects 2-d input");
    int r = x->value.dim(0), c = x->value.dim(1);
    Tensor out({r * times, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < times; ++j)
            std::memcpy(out.data() + (static_cast<int64_t>(i) * times + j) * c,
                        x->value.data() + static_cast<int64_t>(i) * c, sizeof(double) * c);
    return make_op(std::move(out), {x}, [r, c, times](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < times; ++j)
                for (int k = 0; k < c; ++k)
                    p->grad[static_cast<int64_t>(i) * c + k] +=
                        self.grad[(static_cast<int64_t>(i) * times + j) * c + k];
    });
}

Var sum_mid(const Var& x) {
    LW_CHECK(x->value.ndim() == 3, "sum_mid expects 3-d input");
    int r = x->value.dim(0), m = x->value.dim(1), c = x->value.dim(2);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < c; ++k)
                out[static_cast<int64_t>(i) * c + k] +=
                    x->value[(static_cast<int64_t>(i) * m + j) * c + k];
    return make_op(std::move(out), {x}, [r, m, c](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < c; ++k)
                    p->grad[(static_cast<int64_t>(i) * m + j) * c + k] +=
                        self.grad[static_cast<int64_t>(i) * c + k];
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    LW_CHECK(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul expects 2-d");
    int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    LW_CHECK(b->value.dim(0) == k, "matmul inner dim mismatch");
    Tensor out({m, n});
    gemm_raw(false, false, m, n, k, 1.0, a->value.data(), k, b->value.data(), n, 0.0,
             out.data(), n);
    return make_op(std::move(out), {a, b}, [m, n, k](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            gemm_raw(false, true, m, k, n, 1.0, self.grad.data(), n, bv.data(), n, 1.0,
                     p->grad.data(), k);
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            gemm_raw(true, false, k, n, m, 1.0, av.data(), k, self.grad.data(), n, 1.0,
                     p->grad.data(), n);
        }
    });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
    LW_CHECK(a->value.ndim() == 3 && b->value.ndim() == 3, "bmm expects 3-d");
    int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    LW_CHECK(b->value.dim(0) == bs, "bmm batch mismatch");
    int n = trans_b ? b->value.dim(1) : b->value.dim(2);
    LW_CHECK((trans_b ? b->value.dim(2) : b->value.dim(1)) == k, "bmm inner dim mismatch");
    Tensor out({bs, m, n});
    int64_t sa = static_cast<int64_t>(m) * k, sb = static_cast<int64_t>(b->value.dim(1)) * b->value.dim(2);
    int64_t so = static_cast<int64_t>(m) * n;
    int ldb = b->value.dim(2);
    for (int i = 0; i < bs; ++i)
        gemm_raw(false, trans_b, m, n, k, 1.0, a->value.data() + i * sa, k,
                 b->value.data() + i * sb, ldb, 0.0, out.data() + i * so, n);
    return make_op(std::move(out), {a, b}, [bs, m, n, k, sa, sb, so, ldb, trans_b](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            // dA = dY * op(B)^T
            for (int i = 0; i < bs; ++i)
                gemm_raw(false, !trans_b, m, k, n, 1.0, self.grad.data() + i * so, n,
                         bv.data() + i * sb, ldb, 1.0, p->grad.data() + i * sa, k);
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            if (!trans_b) {
                // dB = A^T * dY
                for (int i = 0; i < bs; ++i)
                    gemm_raw(true, false, k, n, m, 1.0, av.data() + i * sa, k,
                             self.grad.data() + i * so, n, 1.0, p->grad.data() + i * sb, ldb);
            } else {
                // B stored as (n, k): dB = dY^T * A
                for (int i = 0; i < bs; ++i)
                    gemm_raw(true, false, n, k, m, 1.0, self.grad.data() + i * so, n,
                             av.data() + i * sa, k, 1.0, p->grad.data() + i * sb, ldb);
            }
        }
    });
}

namespace {
Var linear_impl(const Var& x, const Var& w, const Var* b) {
    const auto& xs = x->value.shape();
    int in = xs.back();
    LW_CHECK(w->value.ndim() == 2 && w->value.dim(0) == in, "linear weight shape mismatch");
    int out_c = w->value.dim(1);
    int64_t rows = x->value.numel() / in;
    std::vector<int> os = xs;
    os.back() = out_c;
    Tensor out(os);
    gemm_raw(false, false, static_cast<int>(rows), out_c, in, 1.0, x->value.data(), in,
             w->value.data(), out_c, 0.0, out.data(), out_c);
    if (b) {
        LW_CHECK((*b)->value.numel() == out_c, "linear bias shape mismatch");
        for (int64_t r = 0; r < rows; ++r)
            for (int i = 0; i < out_c; ++i) out[r * out_c + i] += (*b)->value[i];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, *b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents), [rows, in, out_c](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        int m = static_cast<int>(rows);
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            gemm_raw(false, true, m, in, out_c, 1.0, self.grad.data(), out_c, wv.data(),
                     out_c, 1.0, p->grad.data(), in);
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            gemm_raw(true, false, in, out_c, m, 1.0, xv.data(), in, self.grad.data(), out_c,
                     1.0, p->grad.data(), out_c);
        }
        if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
            Node* p = self.parents[2].get();
            p->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < out_c; ++i) p->grad[i] += self.grad[r * out_c + i];
        }
    });
}
}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }
Var linear_nobias(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

Var softmax_last(const Var& a) {
    int c = a->value.dim(a->value.ndim() - 1);
    int64_t rows = a->value.numel() / c;
    Tensor out = a->value;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * c;
        double mx = p[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, p[i]);
        double sum = 0.0;
        for (int i = 0; i < c; ++i) {
            p[i] = std::exp(p[i] - mx);
            sum += p[i];
        }
        for (int i = 0; i < c; ++i) p[i] /= sum;
    }
    return make_op(std::move(out), {a}, [c, rows](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * c;
            const double* dy = self.grad.data() + r * c;
            double dot = 0.0;
            for (int i = 0; i < c; ++i) dot += y[i] * dy[i];
            double* g = p->grad.data() + r * c;
            for (int i = 0; i < c; ++i) g[i] += y[i] * (dy[i] - dot);
        }
    });
}

Var layer_norm_last(const Var& x, double eps) {
    int c = x->value.dim(x->value.ndim() - 1);
    int64_t rows = x->value.numel() / c;
    Tensor out(x->value.shape());
    Tensor inv_std({static_cast<int>(rows)});
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = x->value.data() + r * c;
        double mean = 0.0;
        for (int i = 0; i < c; ++i) mean += p[i];
        mean /= c;
        double var = 0.0;
        for (int i = 0; i < c; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= c;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* o = out.data() + r * c;
        for (int i = 0; i < c; ++i) o[i] = (p[i] - mean) * inv;
    }
    return make_op(std::move(out), {x},
                   [c, rows, inv_std = std::move(inv_std)](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * c;
            const double* dy = self.grad.data() + r * c;
            double mean_dy = 0.0, mean_dyy = 0.0;
            for (int i = 0; i < c; ++i) {
                mean_dy += dy[i];
                mean_dyy += dy[i] * y[i];
            }
            mean_dy /= c;
            mean_dyy /= c;
            double* g = p->grad.data() + r * c;
            for (int i = 0; i < c; ++i)
                g[i] += inv_std[r] * (dy[i] - mean_dy - y[i] * mean_dyy);
        }
    });
}

// ---------------------------------------------------------------------------
// conv / resize
// ---------------------------------------------------------------------------

namespace {
// im2col for H x W x C input, square kernel, zero padding.
Tensor im2col(const Tensor& x, int ksize, int stride, int pad, int oh, int ow) {
    int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
    Tensor col({oh * ow, ksize * ksize * cin});
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = col.data() + (static_cast<int64_t>(oy) * ow + ox) * ksize * ksize * cin;
            for (int ky = 0; ky < ksize; ++ky) {
                int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < ksize; ++kx) {
                    int ix = ox * stride + kx - pad;
                    double* d = dst + (static_cast<int64_t>(ky) * ksize + kx) * cin;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        std::memcpy(d, x.data() + (static_cast<int64_t>(iy) * w + ix) * cin,
                                    sizeof(double) * cin);
                    } else {
                        std::memset(d, 0, sizeof(double) * cin);
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(Tensor& dx, const Tensor& dcol, int ksize, int stride, int pad, int oh, int ow) {
    int h = dx.dim(0), w = dx.dim(1), cin = dx.dim(2);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const double* src =
                dcol.data() + (static_cast<int64_t>(oy) * ow + ox) * ksize * ksize * cin;
            for (int ky = 0; ky < ksize; ++ky) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < ksize; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* s = src + (static_cast<int64_t>(ky) * ksize + kx) * cin;
                    double* d = dx.data() + (static_cast<int64_t>(iy) * w + ix) * cin;
                    for (int ci = 0; ci < cin; ++ci) d[ci] += s[ci];
                }
            }
        }
    }
}
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int ksize, int stride, int pad) {
    LW_CHECK(x->value.ndim() == 3, "conv2d expects HxWxC input");
    int h = x->value.dim(0), wd = x->value.dim(1), cin = x->value.dim(2);
    LW_CHECK(w->value.ndim() == 2 && w->value.dim(0) == ksize * ksize * cin,
             "conv2d weight must be (k*k*cin, cout)");
    int cout = w->value.dim(1);
    int oh = (h + 2 * pad - ksize) / stride + 1;
    int ow = (wd + 2 * pad - ksize) / stride + 1;
    Tensor col = im2col(x->value, ksize, stride, pad, oh, ow);
    Tensor out({oh, ow, cout});
    int rows = oh * ow, kdim = ksize * ksize * cin;
    gemm_raw(false, false, rows, cout, kdim, 1.0, col.data(), kdim, w->value.data(), cout,
             0.0, out.data(), cout);
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < cout; ++i) out[static_cast<int64_t>(r) * cout + i] += b->value[i];
    return make_op(std::move(out), {x, w, b},
                   [col = std::move(col), ksize, stride, pad, oh, ow, rows, kdim, cout](Node& self) {
        if (self.parents[2]->requires_grad) {
            Node* p = self.parents[2].get();
            p->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int i = 0; i < cout; ++i)
                    p->grad[i] += self.grad[static_cast<int64_t>(r) * cout + i];
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            gemm_raw(true, false, kdim, cout, rows, 1.0, col.data(), kdim, self.grad.data(),
                     cout, 1.0, p->grad.data(), cout);
        }
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            Tensor dcol({rows, kdim});
            gemm_raw(false, true, rows, kdim, cout, 1.0, self.grad.data(), cout,
                     self.parents[1]->value.data(), cout, 0.0, dcol.data(), kdim);
            col2im_add(p->grad, dcol, ksize, stride, pad, oh, ow);
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    LW_CHECK(x->value.ndim() == 3, "upsample expects HxWxC input");
    int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    Tensor out({2 * h, 2 * w, c});
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
            std::memcpy(out.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c,
                        x->value.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c,
                        sizeof(double) * c);
    return make_op(std::move(out), {x}, [h, w, c](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) {
                const double* s = self.grad.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c;
                double* d = p->grad.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c;
                for (int i = 0; i < c; ++i) d[i] += s[i];
            }
    });
}

Var avg_pool2d(const Var& x, int k) {
    LW_CHECK(x->value.ndim() == 3, "avg_pool2d expects HxWxC input");
    int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    LW_CHECK(k >= 1 && h % k == 0 && w % k == 0, "avg_pool2d kernel must divide the input");
    int oh = h / k, ow = w / k;
    double inv = 1.0 / (k * k);
    Tensor out({oh, ow, c});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double* s = x->value.data() + (static_cast<int64_t>(y) * w + xx) * c;
            double* d = out.data() + (static_cast<int64_t>(y / k) * ow + xx / k) * c;
            for (int i = 0; i < c; ++i) d[i] += s[i] * inv;
        }
    return make_op(std::move(out), {x}, [h, w, c, k, ow, inv](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double* d = p->grad.data() + (static_cast<int64_t>(y) * w + xx) * c;
                const double* s =
                    self.grad.data() + (static_cast<int64_t>(y / k) * ow + xx / k) * c;
                for (int i = 0; i < c; ++i) d[i] += s[i] * inv;
            }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_op(Tensor::scalar(s), {a}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        double g = self.grad[0];
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
    });
}

Var mean_all(const Var& a) {
    int64_t n = a->value.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a->value[i];
    return make_op(Tensor::scalar(s / n), {a}, [n](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        double g = self.grad[0] / n;
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
    });
}

Var mse(const Var& a, const Var& b) {
    LW_CHECK(a->value.same_shape(b->value), "mse shape mismatch");
    int64_t n = a->value.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a->value[i] - b->value[i];
        s += d * d;
    }
    return make_op(Tensor::scalar(s / n), {a, b}, [n](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        double g = 2.0 * self.grad[0] / n;
        if (self.parents[0]->requires_grad) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            for (int64_t i = 0; i < n; ++i) p->grad[i] += g * (av[i] - bv[i]);
        }
        if (self.parents[1]->requires_grad) {
            Node* p = self.parents[1].get();
            p->ensure_grad();
            for (int64_t i = 0; i < n; ++i) p->grad[i] -= g * (av[i] - bv[i]);
        }
    });
}

Var tv_plane(const Var& plane) {
    LW_CHECK(plane->value.ndim() == 3, "tv_plane expects HxWxC");
    int h = plane->value.dim(0), w = plane->value.dim(1), c = plane->value.dim(2);
    int64_t pairs = static_cast<int64_t>(h) * (w - 1) * c + static_cast<int64_t>(h - 1) * w * c;
    if (pairs == 0) return constant(Tensor::scalar(0.0));
    const Tensor& v = plane->value;
    auto at = [&](int y, int x, int ch) {
        return v[(static_cast<int64_t>(y) * w + x) * c + ch];
    };
    double s = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double d = at(y, x + 1, ch) - at(y, x, ch);
                s += d * d;
            }
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double d = at(y + 1, x, ch) - at(y, x, ch);
                s += d * d;
            }
    return make_op(Tensor::scalar(s / pairs), {plane}, [h, w, c, pairs](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const Tensor& v = p->value;
        double g = 2.0 * self.grad[0] / pairs;
        auto idx = [&](int y, int x, int ch) {
            return (static_cast<int64_t>(y) * w + x) * c + ch;
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double d = v[idx(y, x + 1, ch)] - v[idx(y, x, ch)];
                    p->grad[idx(y, x + 1, ch)] += g * d;
                    p->grad[idx(y, x, ch)] -= g * d;
                }
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double d = v[idx(y + 1, x, ch)] - v[idx(y, x, ch)];
                    p->grad[idx(y + 1, x, ch)] += g * d;
                    p->grad[idx(y, x, ch)] -= g * d;
                }
    });
}

}  // namespace loomweave
