#include "loomweave/latent_rendering.hpp"

namespace loomweave {

RenderParams RenderParams::create(ParamStore& store, const std::string& name, int c_pix,
                                  int c_tri, RandomStream& rng, bool random_importance) {
    RenderParams p;
    p.c_pix = c_pix;
    p.c_tri = c_tri;
    int hidden = 4 * c_pix;
    p.l1 = Linear::create(store, name + ".l1", c_pix + c_tri, hidden, rng);
    p.l2 = Linear::create(store, name + ".l2", hidden, hidden, rng);
    p.l3 = Linear::create(store, name + ".l3", hidden, c_pix, rng);
    p.importance = Linear::create(store, name + ".importance", c_pix, 1, rng, 0.02,
                                  /*zero_init=*/!random_importance);
    return p;
}

namespace {
struct PlaneTap {
    int64_t idx[4];
    double w[4];
};

/// Clamped bilinear taps for sampling: coordinates clamp to the grid interior
/// so the four weights always sum to 1.
PlaneTap sample_taps(double u, double v, int rows, int cols) {
    u = std::clamp(u, 0.0, static_cast<double>(cols - 1));
    v = std::clamp(v, 0.0, static_cast<double>(rows - 1));
    int c0 = std::min(static_cast<int>(std::floor(u)), cols - 2 >= 0 ? cols - 2 : 0);
    int r0 = std::min(static_cast<int>(std::floor(v)), rows - 2 >= 0 ? rows - 2 : 0);
    if (cols == 1) c0 = 0;
    if (rows == 1) r0 = 0;
    double fu = u - c0, fv = v - r0;
    int c1 = std::min(c0 + 1, cols - 1), r1 = std::min(r0 + 1, rows - 1);
    PlaneTap t;
    t.idx[0] = static_cast<int64_t>(r0) * cols + c0;
    t.idx[1] = static_cast<int64_t>(r0) * cols + c1;
    t.idx[2] = static_cast<int64_t>(r1) * cols + c0;
    t.idx[3] = static_cast<int64_t>(r1) * cols + c1;
    t.w[0] = (1 - fu) * (1 - fv);
    t.w[1] = fu * (1 - fv);
    t.w[2] = (1 - fu) * fv;
    t.w[3] = fu * fv;
    return t;
}
}  // namespace

std::vector<double> sample_triplane(const Triplane& tri, const Vec3& position, double side) {
    int c = tri.planes[0].dim(2);
    std::vector<double> out(static_cast<size_t>(c), 0.0);
    for (int o = 0; o < 3; ++o) {
        const Tensor& plane = tri.planes[o];
        LW_CHECK(plane.dim(2) == c, "triplane channel mismatch");
        int rows = plane.dim(0), cols = plane.dim(1);
        auto [u, v] = project_point(position, static_cast<PlaneOrientation>(o), side, rows, cols);
        PlaneTap taps = sample_taps(u, v, rows, cols);
        for (int t = 0; t < 4; ++t) {
            const double* src = plane.data() + taps.idx[t] * c;
            for (int i = 0; i < c; ++i) out[static_cast<size_t>(i)] += taps.w[t] * src[i];
        }
    }
    return out;
}

Var sample_triplane_op(const std::array<Var, 3>& planes, const std::vector<Vec3>& positions,
                       double side) {
    int c = planes[0]->value.dim(2);
    int rows = planes[0]->value.dim(0), cols = planes[0]->value.dim(1);
    for (int o = 0; o < 3; ++o)
        LW_CHECK(planes[o]->value.dim(0) == rows && planes[o]->value.dim(1) == cols &&
                     planes[o]->value.dim(2) == c,
                 "triplane planes must share shape");
    int p = static_cast<int>(positions.size());
    // Precompute taps once; reused by forward and backward.
    auto taps = std::make_shared<std::vector<std::array<PlaneTap, 3>>>();
    taps->reserve(positions.size());
    for (const auto& pos : positions) {
        std::array<PlaneTap, 3> per_plane;
        for (int o = 0; o < 3; ++o) {
            auto [u, v] = project_point(pos, static_cast<PlaneOrientation>(o), side, rows, cols);
            per_plane[o] = sample_taps(u, v, rows, cols);
        }
        taps->push_back(per_plane);
    }
    Tensor out({p, c});
    for (int i = 0; i < p; ++i) {
        double* dst = out.data() + static_cast<int64_t>(i) * c;
        for (int o = 0; o < 3; ++o) {
            const PlaneTap& t = (*taps)[i][o];
            const double* plane = planes[o]->value.data();
            for (int k = 0; k < 4; ++k) {
                const double* src = plane + t.idx[k] * c;
                for (int j = 0; j < c; ++j) dst[j] += t.w[k] * src[j];
            }
        }
    }
    return make_op(std::move(out), {planes[0], planes[1], planes[2]},
                   [taps, p, c](Node& self) {
        for (int o = 0; o < 3; ++o) {
            Node* plane = self.parents[o].get();
            if (!plane->requires_grad) continue;
            plane->ensure_grad();
            for (int i = 0; i < p; ++i) {
                const PlaneTap& t = (*taps)[i][o];
                const double* g = self.grad.data() + static_cast<int64_t>(i) * c;
                for (int k = 0; k < 4; ++k) {
                    double* dst = plane->grad.data() + t.idx[k] * c;
                    for (int j = 0; j < c; ++j) dst[j] += t.w[k] * g[j];
                }
            }
        }
    });
}

Var correct_rays_op(const RenderParams& params, const Var& pix_rows, const Var& tri_rows,
                    int m) {
    LW_CHECK(m >= 1, "correct_rays needs at least one sample per ray");
    int r = pix_rows->value.dim(0);
    LW_CHECK(tri_rows->value.dim(0) == r * m, "triplane sample count mismatch");
    LW_CHECK(pix_rows->value.dim(1) == params.c_pix, "pixel feature width mismatch");
    LW_CHECK(tri_rows->value.dim(1) == params.c_tri, "triplane feature width mismatch");
    Var rep = repeat_rows(pix_rows, m);                       // (R*M, C_pix)
    Var x = concat_last({rep, tri_rows});                     // (R*M, C_pix + C_tri)
    Var f = params.l3(silu(params.l2(silu(params.l1(x)))));   // (R*M, C_pix)
    Var logits = reshape(params.importance(f), {r, m});
    Var weights = reshape(softmax_last(logits), {r, m, 1});
    Var f3 = reshape(f, {r, m, params.c_pix});
    return sum_mid(mul_bcast(f3, weights));                   // (R, C_pix)
}

std::vector<double> correct_ray_feature(const RenderParams& params,
                                        const std::vector<double>& pixel_feature,
                                        const std::vector<std::vector<double>>& samples) {
    LW_CHECK(!samples.empty(), "correct_ray_feature needs M >= 1 samples");
    NoGradGuard no_grad;
    int m = static_cast<int>(samples.size());
    Tensor tri({m, params.c_tri});
    for (int i = 0; i < m; ++i) {
        LW_CHECK(static_cast<int>(samples[i].size()) == params.c_tri,
                 "triplane sample width mismatch");
        for (int j = 0; j < params.c_tri; ++j) tri[static_cast<int64_t>(i) * params.c_tri + j] =
            samples[i][static_cast<size_t>(j)];
    }
    Var pix = constant(Tensor::from({1, params.c_pix},
                                    std::vector<double>(pixel_feature.begin(), pixel_feature.end())));
    Var out = correct_rays_op(params, pix, constant(std::move(tri)), m);
    return {out->value.data(), out->value.data() + out->value.numel()};
}

Var render_feature_map_op(const RenderParams& params, const std::array<Var, 3>& planes,
                          const Var& feature_map, const SplatGeometry& geom, double side,
                          int samples_per_ray) {
    int h = feature_map->value.dim(0), w = feature_map->value.dim(1);
    int c_pix = feature_map->value.dim(2);
    LW_CHECK(h == geom.rows && w == geom.cols, "feature map does not match render geometry");
    LW_CHECK(c_pix == params.c_pix, "render decoder expects different pixel width");
    Var flat = reshape(feature_map, {h * w, c_pix});
    if (geom.covered_pixels.empty()) return reshape(flat, {h, w, c_pix});
    LW_CHECK(geom.covered_positions.size() ==
                 geom.covered_pixels.size() * static_cast<size_t>(samples_per_ray),
             "render geometry sample count mismatch");
    Var pix = gather_rows(flat, geom.covered_pixels);
    Var tri = sample_triplane_op(planes, geom.covered_positions, side);
    Var corrected = correct_rays_op(params, pix, tri, samples_per_ray);
    Var out = scatter_rows(flat, corrected, geom.covered_pixels);
    return reshape(out, {h, w, c_pix});
}

Tensor render_feature_map(const RenderParams& params, const Triplane& tri,
                          const Tensor& feature_map, const CameraPose& pose,
                          const Intrinsics& intr, double side, int samples_per_ray) {
    NoGradGuard no_grad;
    SplatConfig cfg;
    cfg.side = side;
    cfg.samples_per_ray = samples_per_ray;
    cfg.plane_resolution = tri.planes[0].dim(0);
    SplatGeometry geom = build_splat_geometry(pose, intr, cfg);
    std::array<Var, 3> planes = {constant(tri.planes[0]), constant(tri.planes[1]),
                                 constant(tri.planes[2])};
    Var out = render_feature_map_op(params, planes, constant(feature_map), geom, side,
                                    samples_per_ray);
    return out->value;
}

}  // namespace loomweave
