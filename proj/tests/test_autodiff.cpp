#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "loomweave/autodiff.hpp"
#include "loomweave/nn.hpp"

using namespace loomweave;

namespace {

// Central finite differences through an arbitrary graph builder. Perturbs
// every entry of every input; compares against the recorded backward pass.
void check_gradients(const std::vector<Tensor>& inputs,
                     const std::function<Var(const std::vector<Var>&)>& build,
                     double h = 1e-5, double tol = 1e-6) {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(parameter(t, "x" + std::to_string(vars.size())));
    Var out = build(vars);
    REQUIRE(out->value.numel() == 1);
    backward(out);

    for (size_t vi = 0; vi < vars.size(); ++vi) {
        Tensor analytic = vars[vi]->grad;
        REQUIRE(analytic.numel() == inputs[vi].numel());
        for (int64_t j = 0; j < inputs[vi].numel(); ++j) {
            auto eval = [&](double delta) {
                NoGradGuard no_grad;
                std::vector<Var> probe;
                for (size_t k = 0; k < inputs.size(); ++k) {
                    Tensor t = inputs[k];
                    if (k == vi) t[j] += delta;
                    probe.push_back(constant(std::move(t)));
                }
                return build(probe)->value[0];
            };
            double fd = (eval(h) - eval(-h)) / (2.0 * h);
            double got = analytic[j];
            double denom = std::max({std::abs(fd), std::abs(got), 1.0});
            CHECK(std::abs(fd - got) / denom < tol);
        }
    }
}

Tensor make(std::vector<int> shape, uint64_t seed) {
    RandomStream rng(seed);
    return randn(std::move(shape), rng, 0.7);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    check_gradients({make({2, 3}, 1), make({2, 3}, 2)}, [](const std::vector<Var>& v) {
        return mean_all(mul(silu(add(v[0], v[1])), sub(v[0], scale(v[1], 0.3))));
    });
}

TEST_CASE("broadcast ops match finite differences") {
    check_gradients({make({2, 3, 4}, 3), make({2, 3, 1}, 4)}, [](const std::vector<Var>& v) {
        return sum_all(mul_bcast(v[0], v[1]));
    });
    check_gradients({make({5, 3}, 5), make({3}, 6), make({3}, 7)},
                    [](const std::vector<Var>& v) {
                        return mean_all(add_rowbcast(mul_rowbcast(v[0], v[1]), v[2]));
                    });
}

TEST_CASE("matmul and linear match finite differences") {
    check_gradients({make({3, 4}, 8), make({4, 2}, 9)}, [](const std::vector<Var>& v) {
        return sum_all(matmul(v[0], v[1]));
    });
    check_gradients({make({3, 4}, 10), make({4, 2}, 11), make({2}, 12)},
                    [](const std::vector<Var>& v) {
                        return mean_all(silu(linear(v[0], v[1], v[2])));
                    });
}

TEST_CASE("bmm with and without transpose matches finite differences") {
    check_gradients({make({2, 3, 4}, 13), make({2, 4, 5}, 14)},
                    [](const std::vector<Var>& v) { return sum_all(bmm(v[0], v[1])); });
    check_gradients({make({2, 3, 4}, 15), make({2, 5, 4}, 16)},
                    [](const std::vector<Var>& v) { return sum_all(bmm(v[0], v[1], true)); });
}

TEST_CASE("softmax and layer norm match finite differences") {
    check_gradients({make({4, 5}, 17)}, [](const std::vector<Var>& v) {
        return mean_all(mul(softmax_last(v[0]), v[0]));
    });
    check_gradients({make({4, 6}, 18)}, [](const std::vector<Var>& v) {
        return mean_all(mul(layer_norm_last(v[0]), v[0]));
    }, 1e-5, 5e-6);
}

TEST_CASE("softmax rows sum to one") {
    Var s = softmax_last(constant(make({7, 9}, 19)));
    for (int r = 0; r < 7; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 9; ++c) sum += s->value[r * 9 + c];
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("shape ops match finite differences") {
    check_gradients({make({2, 3, 4}, 20)}, [](const std::vector<Var>& v) {
        return sum_all(mul(permute(v[0], {2, 0, 1}), permute(v[0], {2, 0, 1})));
    });
    check_gradients({make({3, 4}, 21), make({3, 2}, 22)}, [](const std::vector<Var>& v) {
        Var c = concat_last({v[0], v[1]});
        return mean_all(mul(slice_last(c, 2, 3), slice_last(c, 1, 3)));
    });
    check_gradients({make({4, 3}, 23)}, [](const std::vector<Var>& v) {
        return sum_all(mul(repeat_rows(v[0], 3), repeat_rows(v[0], 3)));
    });
    check_gradients({make({5, 2}, 24)}, [](const std::vector<Var>& v) {
        Var g = gather_rows(v[0], {4, 0, 2, 2});
        return mean_all(mul(g, g));
    });
    check_gradients({make({5, 3}, 25), make({2, 3}, 26)}, [](const std::vector<Var>& v) {
        Var s = scatter_rows(v[0], v[1], {1, 3});
        return mean_all(mul(s, s));
    });
    check_gradients({make({2, 3}, 27), make({2, 3}, 28)}, [](const std::vector<Var>& v) {
        Var s = stack_mid({v[0], v[1]});
        return sum_all(mul(s, s));
    });
    check_gradients({make({2, 4, 3}, 29)}, [](const std::vector<Var>& v) {
        Var s = sum_mid(v[0]);
        return mean_all(mul(s, s));
    });
}

TEST_CASE("conv2d upsample and avg_pool match finite differences") {
    check_gradients({make({4, 4, 2}, 30), make({9 * 2, 3}, 31), make({3}, 32)},
                    [](const std::vector<Var>& v) {
                        return mean_all(silu(conv2d(v[0], v[1], v[2], 3, 1, 1)));
                    });
    check_gradients({make({5, 5, 2}, 33), make({9 * 2, 3}, 34), make({3}, 35)},
                    [](const std::vector<Var>& v) {
                        return sum_all(conv2d(v[0], v[1], v[2], 3, 2, 1));
                    });
    check_gradients({make({3, 3, 2}, 36)}, [](const std::vector<Var>& v) {
        Var u = upsample_nearest2x(v[0]);
        return mean_all(mul(u, u));
    });
    check_gradients({make({4, 4, 3}, 37)}, [](const std::vector<Var>& v) {
        Var p = avg_pool2d(v[0], 2);
        return sum_all(mul(p, p));
    });
}

TEST_CASE("losses match finite differences") {
    check_gradients({make({3, 4}, 38), make({3, 4}, 39)},
                    [](const std::vector<Var>& v) { return mse(v[0], v[1]); });
    check_gradients({make({3, 4, 2}, 40)},
                    [](const std::vector<Var>& v) { return tv_plane(v[0]); });
}

TEST_CASE("conv2d stride-2 shape contract") {
    RandomStream rng(41);
    Var x = constant(randn({32, 32, 3}, rng));
    Var w = constant(randn({9 * 3, 8}, rng, 0.1));
    Var b = constant(Tensor::zeros({8}));
    Var y = conv2d(x, w, b, 3, 2, 1);
    CHECK(y->value.dim(0) == 16);
    CHECK(y->value.dim(1) == 16);
    CHECK(y->value.dim(2) == 8);
}

TEST_CASE("grad recording is disabled under NoGradGuard") {
    Var p = parameter(make({2, 2}, 42), "p");
    NoGradGuard guard;
    Var y = mul(p, p);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("adam converges on a quadratic") {
    ParamStore store;
    RandomStream rng(43);
    Var p = store.add(randn({4}, rng), "p");
    Adam opt(store, 0.05);
    Tensor target = Tensor::from({4}, {1.0, -2.0, 0.5, 3.0});
    for (int i = 0; i < 400; ++i) {
        Var loss = mse(p, constant(target));
        backward(loss);
        opt.step(store);
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(p->value[i] - target[i]) < 1e-3);
}

TEST_CASE("timestep embedder validates range") {
    ParamStore store;
    RandomStream rng(44);
    TimestepEmbedder emb = TimestepEmbedder::create(store, "t", 100, 16, rng);
    CHECK_NOTHROW(emb.embed(1));
    CHECK_NOTHROW(emb.embed(100));
    CHECK_THROWS(emb.embed(0));
    CHECK_THROWS(emb.embed(101));
}
