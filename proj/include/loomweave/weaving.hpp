#pragma once

#include "loomweave/fusion.hpp"
#include "loomweave/nn.hpp"

namespace loomweave {

/// One timestep-modulated self-attention + MLP block over triplane tokens.
/// Output projections (attention out, MLP second layer, AdaLN modulation)
/// start at zero so a fresh block is the identity map.
struct WeaveBlockParams {
    Linear adaln1_mod;   // temb_dim -> 2C (scale, shift)
    Linear adaln2_mod;
    Linear qkv;          // C -> 3d
    Linear attn_out;     // d -> C
    Linear mlp1;         // C -> widening*C
    Linear mlp2;         // widening*C -> C
    Var pos_embedding;   // (3*H*W, C), null when positional encoding is off
    int num_heads = 1;
    int head_dim = 1;
    int channels = 0;

    /// random_init replaces the zero initialization of the output projections
    /// and AdaLN modulation with small Gaussians (used by conditioning tests).
    static WeaveBlockParams create(ParamStore& store, const std::string& name, int channels,
                                   int num_heads, int head_dim, int mlp_widening, int temb_dim,
                                   int num_tokens, bool positional_encoding, RandomStream& rng,
                                   bool random_init = false);
};

/// Concatenated plane tokens in fixed XY, YZ, XZ order; (3*H*W) x C.
struct TriplaneTokens {
    Var tokens;
    int plane_rows = 0;
    int plane_cols = 0;
};

TriplaneTokens tokens_from_planes(const std::array<Var, 3>& planes);
std::array<Var, 3> planes_from_tokens(const TriplaneTokens& tokens);

/// x' = x + SelfAttn(AdaLN(x, t) [+ pos]); x'' = x' + MLP(AdaLN(x', t)).
TriplaneTokens weave_block(const WeaveBlockParams& params, const TriplaneTokens& tokens,
                           int timestep, const TimestepEmbedder& temb);

/// One communication site: fusion parameters plus its stack of weave blocks
/// and the site-local timestep embedder.
struct WeaveSite {
    FusionParams fusion;
    std::vector<WeaveBlockParams> blocks;
    TimestepEmbedder temb;

    static WeaveSite create(ParamStore& store, const std::string& name, int plane_res,
                            int channels, int c_splat, int num_heads, int head_dim,
                            int mlp_widening, int temb_dim, int max_timestep, int iterations,
                            bool positional_encoding, RandomStream& rng);
};

/// Alternates fusion and weaving `iterations` times over the site's blocks.
/// Iteration k > 1 queries fusion with iteration k-1's woven planes; the
/// first iteration queries with the learnable planes plus `carried` (the
/// previous site's woven output), when given. In mean mode the carry is added
/// to the fused planes once and fusion runs a single time.
std::array<Var, 3> weave_stack(const WeaveSite& site,
                               const std::vector<std::array<Var, 3>>& view_splat_planes,
                               int timestep, const std::array<Var, 3>* carried,
                               int iterations, FusionMode mode);

}  // namespace loomweave
