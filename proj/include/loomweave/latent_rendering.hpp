#pragma once

#include "loomweave/nn.hpp"
#include "loomweave/splatting.hpp"

namespace loomweave {

/// Post-weaving shared triplane (no weight grids), value level.
struct Triplane {
    std::array<Tensor, 3> planes;  // H x W x C each, XY/YZ/XZ order
};

/// MLP decoder refining per-pixel features from triplane context, plus the
/// linear importance head that weights the M samples of a ray.
struct RenderParams {
    Linear l1, l2, l3;   // (C_pix + C_tri) -> hidden -> hidden -> C_pix
    Linear importance;   // C_pix -> 1, zero-initialized (uniform weights at start)
    int c_pix = 0;
    int c_tri = 0;

    static RenderParams create(ParamStore& store, const std::string& name, int c_pix,
                               int c_tri, RandomStream& rng, bool random_importance = false);
};

/// Bilinear lookup on each plane at the point's projection, combined by
/// elementwise sum (EG3D convention). Coordinates clamp to the grid edge, so
/// constant planes sample exactly to their constant everywhere in the cube.
std::vector<double> sample_triplane(const Triplane& tri, const Vec3& position, double side);

/// Batched autodiff version: (P, C_tri) features for constant positions.
Var sample_triplane_op(const std::array<Var, 3>& planes, const std::vector<Vec3>& positions,
                       double side);

/// f~_m = D([f_p || g_m]); softmax importance over m; weighted average.
std::vector<double> correct_ray_feature(const RenderParams& params,
                                        const std::vector<double>& pixel_feature,
                                        const std::vector<std::vector<double>>& samples);

/// Batched core: pix (R, C_pix) with M triplane samples each -> (R, C_pix).
Var correct_rays_op(const RenderParams& params, const Var& pix_rows, const Var& tri_rows,
                    int m);

/// Full per-view correction: rays from the precomputed geometry, triplane
/// sampling at the shared ray samples, decoder + importance aggregation.
/// Pixels whose rays miss the cube pass through bit-identically.
Var render_feature_map_op(const RenderParams& params, const std::array<Var, 3>& planes,
                          const Var& feature_map, const SplatGeometry& geom, double side,
                          int samples_per_ray);

/// Value-level composition over explicit camera inputs (test surface).
Tensor render_feature_map(const RenderParams& params, const Triplane& tri,
                          const Tensor& feature_map, const CameraPose& pose,
                          const Intrinsics& intr, double side, int samples_per_ray);

}  // namespace loomweave
