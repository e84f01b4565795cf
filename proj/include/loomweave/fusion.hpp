#pragma once

#include <optional>

#include "loomweave/nn.hpp"
#include "loomweave/splatting.hpp"

namespace loomweave {

enum class FusionMode { Attention, Mean };

/// Learnable pieces of the per-orientation cross-view fusion: a query plane
/// per orientation, shared Q/K/V/O projections, and the input projection
/// mapping splat channels to the triplane width.
struct FusionParams {
    std::array<Var, 3> learnable;  // (H, W, C) per orientation
    Var w_q, w_k, w_v;             // (C, d), d = num_heads * head_dim
    Var w_o;                       // (d, C)
    Linear input_proj;             // C_splat -> C
    int num_heads = 1;
    int head_dim = 1;
    int channels = 0;   // C
    int c_splat = 0;

    static FusionParams create(ParamStore& store, const std::string& name, int plane_res,
                               int channels, int c_splat, int num_heads, int head_dim,
                               RandomStream& rng);
};

/// Splat-channel to triplane-channel projection applied to one plane.
Var project_plane(const FusionParams& params, const Var& splat_plane);

/// Pixel-wise multi-head cross-attention over the N views of one orientation.
/// `views` must already be projected to C channels. The query plane defaults
/// to params.learnable[orientation]; iteration/carry logic passes an override.
/// softmax_out, when non-null, receives the attention weights as
/// (H, W, heads, N).
Var fuse_planes_attention(const FusionParams& params, const std::vector<Var>& views,
                          int orientation, const Var& query_override = nullptr,
                          Tensor* softmax_out = nullptr);

/// Per-pixel arithmetic mean of same-shape planes (Table-4 mean-fusion path).
Var fuse_planes_mean(const std::vector<Var>& views);

// Value-level wrappers matching the plane-in/plane-out contract; inputs are
// raw splat planes (projection applied inside the attention path). The fused
// weight grid is the mean of the view weight grids (coverage bookkeeping).
FeaturePlane fuse_planes(FusionParams& params, const std::vector<FeaturePlane>& views,
                         Tensor* softmax_out = nullptr);
FeaturePlane fuse_planes_mean(const std::vector<FeaturePlane>& views);

}  // namespace loomweave
