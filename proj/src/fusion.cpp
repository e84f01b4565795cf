#include "loomweave/fusion.hpp"

namespace loomweave {

FusionParams FusionParams::create(ParamStore& store, const std::string& name, int plane_res,
                                  int channels, int c_splat, int num_heads, int head_dim,
                                  RandomStream& rng) {
    FusionParams p;
    p.num_heads = num_heads;
    p.head_dim = head_dim;
    p.channels = channels;
    p.c_splat = c_splat;
    int d = num_heads * head_dim;
    const char* names[3] = {"xy", "yz", "xz"};
    for (int o = 0; o < 3; ++o)
        p.learnable[o] = store.add(randn({plane_res, plane_res, channels}, rng, 0.02),
                                   name + ".plane_" + names[o]);
    double sd = 1.0 / std::sqrt(static_cast<double>(channels));
    p.w_q = store.add(randn({channels, d}, rng, sd), name + ".w_q");
    p.w_k = store.add(randn({channels, d}, rng, sd), name + ".w_k");
    p.w_v = store.add(randn({channels, d}, rng, sd), name + ".w_v");
    p.w_o = store.add(randn({d, channels}, rng, 1.0 / std::sqrt(static_cast<double>(d))),
                      name + ".w_o");
    p.input_proj = Linear::create(store, name + ".input_proj", c_splat, channels, rng);
    return p;
}

Var project_plane(const FusionParams& params, const Var& splat_plane) {
    LW_CHECK(splat_plane->value.ndim() == 3, "splat plane must be H x W x C");
    LW_CHECK(splat_plane->value.dim(2) == params.c_splat,
             "splat plane channels do not match fusion input projection");
    return params.input_proj(splat_plane);
}

Var fuse_planes_attention(const FusionParams& params, const std::vector<Var>& views,
                          int orientation, const Var& query_override, Tensor* softmax_out) {
    LW_CHECK(!views.empty(), "fusion needs at least one view plane");
    const Var& query_plane =
        query_override ? query_override : params.learnable[orientation];
    int h = query_plane->value.dim(0), w = query_plane->value.dim(1);
    int c = params.channels;
    LW_CHECK(query_plane->value.dim(2) == c, "query plane channel mismatch");
    for (const auto& v : views)
        LW_CHECK(v->value.ndim() == 3 && v->value.dim(0) == h && v->value.dim(1) == w &&
                     v->value.dim(2) == c,
                 "view plane shape mismatch");
    int n = static_cast<int>(views.size());
    int heads = params.num_heads, dh = params.head_dim;
    int d = heads * dh;
    int pixels = h * w;

    Var q = linear_nobias(reshape(query_plane, {pixels, c}), params.w_q);  // (P, d)
    std::vector<Var> ks, vs;
    ks.reserve(views.size());
    vs.reserve(views.size());
    for (const auto& view : views) {
        Var flat = reshape(view, {pixels, c});
        ks.push_back(linear_nobias(flat, params.w_k));
        vs.push_back(linear_nobias(flat, params.w_v));
    }
    // (P, N, d) -> (P, heads, N, dh) -> (P*heads, N, dh)
    auto to_batched = [&](const std::vector<Var>& xs) {
        Var stacked = stack_mid(xs);                                  // (P, N, d)
        Var split = reshape(stacked, {pixels, n, heads, dh});
        Var per_head = permute(split, {0, 2, 1, 3});                  // (P, heads, N, dh)
        return reshape(per_head, {pixels * heads, n, dh});
    };
    Var kb = to_batched(ks);
    Var vb = to_batched(vs);
    Var qb = reshape(q, {pixels * heads, 1, dh});
    Var scores = scale(bmm(qb, kb, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = softmax_last(scores);  // (P*heads, 1, N), softmax over the N views
    if (softmax_out) *softmax_out = attn->value.reshaped({h, w, heads, n});
    Var mixed = bmm(attn, vb);                         // (P*heads, 1, dh)
    Var merged = reshape(mixed, {pixels, d});
    Var out = linear_nobias(merged, params.w_o);       // (P, C)
    return reshape(out, {h, w, c});
}

Var fuse_planes_mean(const std::vector<Var>& views) {
    LW_CHECK(!views.empty(), "mean fusion needs at least one plane");
    for (const auto& v : views)
        LW_CHECK(v->value.same_shape(views[0]->value), "mean fusion shape mismatch");
    Var acc = views[0];
    for (size_t i = 1; i < views.size(); ++i) acc = add(acc, views[i]);
    return scale(acc, 1.0 / static_cast<double>(views.size()));
}

namespace {
Tensor mean_weight_grid(const std::vector<FeaturePlane>& views) {
    Tensor w = views[0].weight_grid;
    for (size_t i = 1; i < views.size(); ++i) w.add_scaled(views[i].weight_grid, 1.0);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] /= static_cast<double>(views.size());
    return w;
}
}  // namespace

FeaturePlane fuse_planes(FusionParams& params, const std::vector<FeaturePlane>& views,
                         Tensor* softmax_out) {
    LW_CHECK(!views.empty(), "fusion needs at least one view plane");
    NoGradGuard no_grad;
    std::vector<Var> projected;
    projected.reserve(views.size());
    for (const auto& v : views) projected.push_back(project_plane(params, constant(v.grid)));
    int orientation = static_cast<int>(views[0].orientation);
    Var fused = fuse_planes_attention(params, projected, orientation, nullptr, softmax_out);
    FeaturePlane out;
    out.orientation = views[0].orientation;
    out.grid = fused->value;
    out.weight_grid = mean_weight_grid(views);
    return out;
}

FeaturePlane fuse_planes_mean(const std::vector<FeaturePlane>& views) {
    LW_CHECK(!views.empty(), "mean fusion needs at least one plane");
    NoGradGuard no_grad;
    std::vector<Var> vars;
    vars.reserve(views.size());
    for (const auto& v : views) vars.push_back(constant(v.grid));
    Var fused = fuse_planes_mean(vars);
    FeaturePlane out;
    out.orientation = views[0].orientation;
    out.grid = fused->value;
    out.weight_grid = mean_weight_grid(views);
    return out;
}

}  // namespace loomweave
