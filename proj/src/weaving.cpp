#include "loomweave/weaving.hpp"

namespace loomweave {

WeaveBlockParams WeaveBlockParams::create(ParamStore& store, const std::string& name,
                                          int channels, int num_heads, int head_dim,
                                          int mlp_widening, int temb_dim, int num_tokens,
                                          bool positional_encoding, RandomStream& rng,
                                          bool random_init) {
    LW_CHECK(mlp_widening >= 1, "mlp widening must be >= 1");
    WeaveBlockParams p;
    p.num_heads = num_heads;
    p.head_dim = head_dim;
    p.channels = channels;
    int d = num_heads * head_dim;
    bool zero = !random_init;
    p.adaln1_mod = Linear::create(store, name + ".adaln1", temb_dim, 2 * channels, rng, 0.02,
                                  zero);
    p.adaln2_mod = Linear::create(store, name + ".adaln2", temb_dim, 2 * channels, rng, 0.02,
                                  zero);
    p.qkv = Linear::create(store, name + ".qkv", channels, 3 * d, rng);
    p.attn_out = Linear::create(store, name + ".attn_out", d, channels, rng, 0.02, zero);
    p.mlp1 = Linear::create(store, name + ".mlp1", channels, mlp_widening * channels, rng);
    p.mlp2 = Linear::create(store, name + ".mlp2", mlp_widening * channels, channels, rng,
                            0.02, zero);
    if (positional_encoding)
        p.pos_embedding = store.add(randn({num_tokens, channels}, rng, 0.02), name + ".pos");
    return p;
}

TriplaneTokens tokens_from_planes(const std::array<Var, 3>& planes) {
    int h = planes[0]->value.dim(0), w = planes[0]->value.dim(1), c = planes[0]->value.dim(2);
    std::vector<Var> flat;
    for (int o = 0; o < 3; ++o) {
        LW_CHECK(planes[o]->value.ndim() == 3 && planes[o]->value.dim(0) == h &&
                     planes[o]->value.dim(1) == w && planes[o]->value.dim(2) == c,
                 "triplane planes must share shape");
        flat.push_back(reshape(planes[o], {1, h * w * c}));
    }
    TriplaneTokens out;
    out.tokens = reshape(concat_last(flat), {3 * h * w, c});
    out.plane_rows = h;
    out.plane_cols = w;
    return out;
}

std::array<Var, 3> planes_from_tokens(const TriplaneTokens& tokens) {
    int h = tokens.plane_rows, w = tokens.plane_cols;
    int c = tokens.tokens->value.dim(1);
    LW_CHECK(tokens.tokens->value.dim(0) == 3 * h * w, "token count must be 3*H*W");
    Var rows = reshape(tokens.tokens, {3, h * w * c});
    std::array<Var, 3> out;
    for (int o = 0; o < 3; ++o)
        out[o] = reshape(gather_rows(rows, {o}), {h, w, c});
    return out;
}

namespace {
/// LayerNorm then per-channel scale/shift from the timestep embedding.
Var adaln(const Var& x, const Var& temb_silu, const Linear& mod, int channels) {
    Var ms = mod(temb_silu);  // (1, 2C)
    Var scale_v = reshape(slice_last(ms, 0, channels), {channels});
    Var shift_v = reshape(slice_last(ms, channels, channels), {channels});
    Var normed = layer_norm_last(x);
    return add_rowbcast(mul_rowbcast(normed, add_scalar(scale_v, 1.0)), shift_v);
}

Var self_attention(const WeaveBlockParams& p, const Var& x) {
    int s = x->value.dim(0);
    int heads = p.num_heads, dh = p.head_dim, d = heads * dh;
    Var qkv = p.qkv(x);  // (S, 3d)
    auto head_split = [&](const Var& v) {
        return permute(reshape(v, {s, heads, dh}), {1, 0, 2});  // (heads, S, dh)
    };
    Var q = head_split(slice_last(qkv, 0, d));
    Var k = head_split(slice_last(qkv, d, d));
    Var v = head_split(slice_last(qkv, 2 * d, d));
    Var scores = scale(bmm(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = softmax_last(scores);             // (heads, S, S)
    Var mixed = bmm(attn, v);                    // (heads, S, dh)
    Var merged = reshape(permute(mixed, {1, 0, 2}), {s, d});
    return p.attn_out(merged);
}
}  // namespace

TriplaneTokens weave_block(const WeaveBlockParams& params, const TriplaneTokens& tokens,
                           int timestep, const TimestepEmbedder& temb) {
    const Var& x = tokens.tokens;
    LW_CHECK(x->value.ndim() == 2 && x->value.dim(1) == params.channels,
             "token shape does not match block parameters");
    Var t = silu(temb.embed(timestep));
    Var attn_in = adaln(x, t, params.adaln1_mod, params.channels);
    if (params.pos_embedding) {
        LW_CHECK(params.pos_embedding->value.dim(0) == x->value.dim(0),
                 "positional table size does not match token count");
        attn_in = add(attn_in, params.pos_embedding);
    }
    Var x1 = add(x, self_attention(params, attn_in));
    Var mlp_in = adaln(x1, t, params.adaln2_mod, params.channels);
    Var x2 = add(x1, params.mlp2(silu(params.mlp1(mlp_in))));
    return TriplaneTokens{x2, tokens.plane_rows, tokens.plane_cols};
}

WeaveSite WeaveSite::create(ParamStore& store, const std::string& name, int plane_res,
                            int channels, int c_splat, int num_heads, int head_dim,
                            int mlp_widening, int temb_dim, int max_timestep, int iterations,
                            bool positional_encoding, RandomStream& rng) {
    LW_CHECK(iterations >= 1, "site iterations must be >= 1");
    WeaveSite site;
    site.fusion = FusionParams::create(store, name + ".fusion", plane_res, channels, c_splat,
                                       num_heads, head_dim, rng);
    site.temb = TimestepEmbedder::create(store, name + ".temb", max_timestep, temb_dim, rng);
    int tokens = 3 * plane_res * plane_res;
    for (int i = 0; i < iterations; ++i)
        site.blocks.push_back(WeaveBlockParams::create(
            store, name + ".block" + std::to_string(i), channels, num_heads, head_dim,
            mlp_widening, temb_dim, tokens, positional_encoding, rng));
    return site;
}

std::array<Var, 3> weave_stack(const WeaveSite& site,
                               const std::vector<std::array<Var, 3>>& view_splat_planes,
                               int timestep, const std::array<Var, 3>* carried,
                               int iterations, FusionMode mode) {
    LW_CHECK(iterations >= 1, "weave_stack needs iterations >= 1");
    LW_CHECK(iterations <= static_cast<int>(site.blocks.size()),
             "weave_stack has fewer blocks than iterations");
    LW_CHECK(!view_splat_planes.empty(), "weave_stack needs at least one view");

    std::array<std::vector<Var>, 3> projected;
    for (const auto& view : view_splat_planes)
        for (int o = 0; o < 3; ++o)
            projected[o].push_back(project_plane(site.fusion, view[o]));

    std::array<Var, 3> woven;
    if (mode == FusionMode::Attention) {
        std::array<Var, 3> query;
        for (int o = 0; o < 3; ++o) {
            query[o] = site.fusion.learnable[o];
            if (carried) query[o] = add(query[o], (*carried)[o]);
        }
        for (int it = 0; it < iterations; ++it) {
            std::array<Var, 3> fused;
            for (int o = 0; o < 3; ++o)
                fused[o] = fuse_planes_attention(site.fusion, projected[o], o, query[o]);
            TriplaneTokens tokens = tokens_from_planes(fused);
            tokens = weave_block(site.blocks[it], tokens, timestep, site.temb);
            woven = planes_from_tokens(tokens);
            query = woven;
        }
    } else {
        // Mean fusion has no query; fuse once, then iterate the blocks.
        std::array<Var, 3> fused;
        for (int o = 0; o < 3; ++o) {
            fused[o] = fuse_planes_mean(projected[o]);
            if (carried) fused[o] = add(fused[o], (*carried)[o]);
        }
        TriplaneTokens tokens = tokens_from_planes(fused);
        for (int it = 0; it < iterations; ++it)
            tokens = weave_block(site.blocks[it], tokens, timestep, site.temb);
        woven = planes_from_tokens(tokens);
    }
    return woven;
}

}  // namespace loomweave
