#include "loomweave/nn.hpp"

namespace loomweave {

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out,
                      RandomStream& rng, double std_dev, bool zero_init, bool bias) {
    Linear l;
    if (zero_init) {
        l.w = store.add(Tensor::zeros({in, out}), name + ".w");
    } else {
        double sd = std_dev > 0.0 ? std_dev : 1.0 / std::sqrt(static_cast<double>(in));
        l.w = store.add(randn({in, out}, rng, sd), name + ".w");
    }
    if (bias) l.b = store.add(Tensor::zeros({out}), name + ".b");
    return l;
}

Tensor sinusoidal_embedding(double t, int dim) {
    LW_CHECK(dim >= 2 && dim % 2 == 0, "sinusoidal embedding dim must be even");
    int half = dim / 2;
    Tensor out({1, dim});
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

TimestepEmbedder TimestepEmbedder::create(ParamStore& store, const std::string& name,
                                          int max_timestep, int dim, RandomStream& rng) {
    TimestepEmbedder e;
    e.max_timestep = max_timestep;
    e.dim = dim;
    e.l1 = Linear::create(store, name + ".l1", dim, dim, rng);
    e.l2 = Linear::create(store, name + ".l2", dim, dim, rng);
    return e;
}

Var TimestepEmbedder::embed(int timestep) const {
    LW_CHECK(timestep >= 1 && timestep <= max_timestep,
             "timestep " + std::to_string(timestep) + " outside schedule range [1, " +
                 std::to_string(max_timestep) + "]");
    Var s = constant(sinusoidal_embedding(static_cast<double>(timestep), dim));
    return l2(silu(l1(s)));
}

Adam::Adam(const ParamStore& store, double lr_, double clip) : lr(lr_), clip_norm(clip) {
    m.reserve(store.params.size());
    v.reserve(store.params.size());
    for (const auto& p : store.params) {
        m.push_back(Tensor::zeros(p->value.shape()));
        v.push_back(Tensor::zeros(p->value.shape()));
        trainable.push_back(true);
    }
}

void Adam::step(ParamStore& store) {
    LW_CHECK(m.size() == store.params.size(), "optimizer/parameter count mismatch");
    ++t;
    double scale_g = 1.0;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (size_t i = 0; i < store.params.size(); ++i) {
            if (!trainable[i]) continue;
            const Tensor& g = store.params[i]->grad;
            for (int64_t j = 0; j < g.numel(); ++j) sq += g[j] * g[j];
        }
        double gn = std::sqrt(sq);
        if (gn > clip_norm) scale_g = clip_norm / gn;
    }
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < store.params.size(); ++i) {
        Var& p = store.params[i];
        if (p->grad.numel() == 0) p->ensure_grad();
        if (trainable[i]) {
            Tensor& g = p->grad;
            for (int64_t j = 0; j < g.numel(); ++j) {
                double gj = g[j] * scale_g;
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
                double mh = m[i][j] / bc1;
                double vh = v[i][j] / bc2;
                p->value[j] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
        p->grad.fill(0.0);
    }
}

}  // namespace loomweave
