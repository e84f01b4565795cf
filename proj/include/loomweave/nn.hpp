#pragma once

#include <string>
#include <vector>

#include "loomweave/autodiff.hpp"

namespace loomweave {

/// Flat registry of named parameters; registration order is the optimizer
/// and checkpoint order.
struct ParamStore {
    std::vector<Var> params;

    Var add(Tensor t, const std::string& name) {
        for (const auto& p : params)
            LW_CHECK(p->name != name, "duplicate parameter name: " + name);
        Var v = parameter(std::move(t), name);
        params.push_back(v);
        return v;
    }
    Var find(const std::string& name) const {
        for (const auto& p : params)
            if (p->name == name) return p;
        LW_CHECK(false, "parameter not found: " + name);
        return nullptr;
    }
    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p->value.numel();
        return n;
    }
    void zero_grads() {
        for (auto& p : params)
            if (p->grad.numel() > 0) p->grad.fill(0.0);
    }
};

struct Linear {
    Var w;  // (in, out)
    Var b;  // (out) or null

    /// std_dev 0 picks 1/sqrt(in). zero_init zeroes weight and bias.
    static Linear create(ParamStore& store, const std::string& name, int in, int out,
                         RandomStream& rng, double std_dev = 0.0, bool zero_init = false,
                         bool bias = true);
    Var operator()(const Var& x) const { return b ? linear(x, w, b) : linear_nobias(x, w); }
};

/// Sinusoidal position/timestep embedding, shape (1, dim).
Tensor sinusoidal_embedding(double t, int dim);

/// Sinusoidal timestep embedding followed by a two-layer MLP. Timesteps are
/// 1-based; values outside [1, max_timestep] are validation errors.
struct TimestepEmbedder {
    int max_timestep = 0;
    int dim = 0;
    Linear l1, l2;

    static TimestepEmbedder create(ParamStore& store, const std::string& name,
                                   int max_timestep, int dim, RandomStream& rng);
    Var embed(int timestep) const;
};

/// Adam with optional global-norm gradient clipping and a trainable mask
/// (used by --freeze-backbone). Consumes and zeroes gradients each step.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables
    int64_t t = 0;
    std::vector<Tensor> m, v;
    std::vector<bool> trainable;

    explicit Adam(const ParamStore& store, double lr_, double clip = 0.0);
    void step(ParamStore& store);
    // Serialized alongside checkpoints for exact resume.
    void save_state(std::vector<Tensor>& out_m, std::vector<Tensor>& out_v) const {
        out_m = m;
        out_v = v;
    }
};

}  // namespace loomweave
