#include "loomweave/splatting.hpp"

#include <cstring>

namespace loomweave {

std::pair<double, double> project_point(const Vec3& position, PlaneOrientation orientation,
                                        double side, int rows, int cols) {
    LW_CHECK(side > 0.0, "plane side must be positive");
    double half = 0.5 * side + 1e-9;
    LW_CHECK(std::abs(position.x) <= half && std::abs(position.y) <= half &&
                 std::abs(position.z) <= half,
             "position outside cube");
    double a, b;
    switch (orientation) {
        case PlaneOrientation::XY: a = position.x; b = position.y; break;
        case PlaneOrientation::YZ: a = position.y; b = position.z; break;
        default:                   a = position.x; b = position.z; break;
    }
    double u = (a / side + 0.5) * cols - 0.5;
    double v = (b / side + 0.5) * rows - 0.5;
    return {u, v};
}

int bilinear_taps(double u, double v, int rows, int cols, BilinearTap out[4]) {
    int c0 = static_cast<int>(std::floor(u));
    int r0 = static_cast<int>(std::floor(v));
    double fu = u - c0, fv = v - r0;
    const double w[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
    const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
    const int cc[4] = {c0, c0 + 1, c0, c0 + 1};
    int n = 0;
    for (int i = 0; i < 4; ++i) {
        if (rr[i] < 0 || rr[i] >= rows || cc[i] < 0 || cc[i] >= cols) continue;
        out[n++] = BilinearTap{rr[i], cc[i], w[i]};
    }
    return n;
}

FeaturePlane splat_points(const std::vector<RaySample>& samples, PlaneOrientation orientation,
                          double side, int rows, int cols, double eps) {
    FeaturePlane plane;
    plane.orientation = orientation;
    plane.weight_grid = Tensor({rows, cols});
    if (samples.empty()) {
        plane.grid = Tensor({rows, cols, 0});
        return plane;
    }
    int c = static_cast<int>(samples[0].feature.size());
    for (const auto& s : samples)
        LW_CHECK(static_cast<int>(s.feature.size()) == c, "splat features must share length");
    plane.grid = Tensor({rows, cols, c});
    BilinearTap taps[4];
    for (const auto& s : samples) {
        auto [u, v] = project_point(s.position, orientation, side, rows, cols);
        int n = bilinear_taps(u, v, rows, cols, taps);
        for (int t = 0; t < n; ++t) {
            int64_t p = static_cast<int64_t>(taps[t].row) * cols + taps[t].col;
            double w = taps[t].weight;
            double* dst = plane.grid.data() + p * c;
            for (int i = 0; i < c; ++i) dst[i] += w * s.feature[i];
            plane.weight_grid[p] += w;
        }
    }
    for (int64_t p = 0; p < static_cast<int64_t>(rows) * cols; ++p) {
        double denom = plane.weight_grid[p] + eps;
        double* dst = plane.grid.data() + p * c;
        for (int i = 0; i < c; ++i) dst[i] /= denom;
    }
    return plane;
}

SplatGeometry build_splat_geometry(const CameraPose& pose, const Intrinsics& intr,
                                   const SplatConfig& cfg) {
    LW_CHECK(cfg.samples_per_ray >= 1, "samples_per_ray must be >= 1");
    SplatGeometry geom;
    geom.rows = intr.rows;
    geom.cols = intr.cols;
    geom.plane_res = cfg.plane_resolution;
    geom.eps = cfg.eps;
    int plucker_dim = cfg.positional_encoding ? cfg.harmonic.output_dim(6) : 0;
    int depth_dim = cfg.positional_encoding ? cfg.harmonic.output_dim(1) : 0;
    geom.embed_dim = plucker_dim + depth_dim;

    auto rays = make_rays(pose, intr);
    for (const auto& ray : rays) {
        CubeHit hit = intersect_cube(ray, cfg.side);
        if (!hit.hit) continue;
        int pixel = ray.pixel_row * intr.cols + ray.pixel_col;
        geom.covered_pixels.push_back(pixel);
        std::vector<double> shared;
        if (cfg.positional_encoding) {
            auto pl = plucker_encode(ray);
            shared = harmonic_embed({pl.begin(), pl.end()}, cfg.harmonic);
        }
        auto points = sample_along_ray(ray, hit, cfg.samples_per_ray);
        for (const auto& [pos, depth] : points) {
            geom.covered_positions.push_back(pos);
            SplatGeometry::Sample s;
            s.pixel_index = pixel;
            s.position = pos;
            s.depth = depth;
            s.embed_offset = static_cast<int64_t>(geom.embed_data.size());
            geom.embed_data.insert(geom.embed_data.end(), shared.begin(), shared.end());
            if (cfg.positional_encoding) {
                auto de = harmonic_embed({depth}, cfg.harmonic);
                geom.embed_data.insert(geom.embed_data.end(), de.begin(), de.end());
            }
            for (int o = 0; o < 3; ++o) {
                auto [u, v] = project_point(pos, static_cast<PlaneOrientation>(o), cfg.side,
                                            cfg.plane_resolution, cfg.plane_resolution);
                s.tap_count[o] = bilinear_taps(u, v, cfg.plane_resolution, cfg.plane_resolution,
                                               s.taps[o].data());
            }
            geom.samples.push_back(std::move(s));
        }
    }
    return geom;
}

namespace {
void splat_forward(const SplatGeometry& geom, const double* features, int c_pix,
                   std::array<Tensor, 3>& grids, std::array<Tensor, 3>& weights) {
    int res = geom.plane_res;
    int c_splat = c_pix + geom.embed_dim;
    for (int o = 0; o < 3; ++o) {
        grids[o] = Tensor({res, res, c_splat});
        weights[o] = Tensor({res, res});
    }
    for (const auto& s : geom.samples) {
        const double* pix = features + static_cast<int64_t>(s.pixel_index) * c_pix;
        const double* emb = geom.embed_data.data() + s.embed_offset;
        for (int o = 0; o < 3; ++o) {
            for (int t = 0; t < s.tap_count[o]; ++t) {
                const BilinearTap& tap = s.taps[o][t];
                int64_t p = static_cast<int64_t>(tap.row) * res + tap.col;
                double w = tap.weight;
                double* dst = grids[o].data() + p * c_splat;
                for (int i = 0; i < c_pix; ++i) dst[i] += w * pix[i];
                for (int i = 0; i < geom.embed_dim; ++i) dst[c_pix + i] += w * emb[i];
                weights[o][p] += w;
            }
        }
    }
    for (int o = 0; o < 3; ++o) {
        for (int64_t p = 0; p < static_cast<int64_t>(res) * res; ++p) {
            double denom = weights[o][p] + geom.eps;
            double* dst = grids[o].data() + p * c_splat;
            for (int i = 0; i < c_splat; ++i) dst[i] /= denom;
        }
    }
}
}  // namespace

PerViewTriplane splat_view(const Tensor& feature_map, const CameraPose& pose,
                           const Intrinsics& intr, const SplatConfig& cfg) {
    LW_CHECK(feature_map.ndim() == 3, "feature map must be H x W x C");
    LW_CHECK(feature_map.dim(0) == intr.rows && feature_map.dim(1) == intr.cols,
             "feature map shape does not match intrinsics");
    SplatGeometry geom = build_splat_geometry(pose, intr, cfg);
    int c_pix = feature_map.dim(2);
    std::array<Tensor, 3> grids, weights;
    splat_forward(geom, feature_map.data(), c_pix, grids, weights);
    PerViewTriplane out;
    for (int o = 0; o < 3; ++o) {
        out.planes[o].orientation = static_cast<PlaneOrientation>(o);
        out.planes[o].grid = std::move(grids[o]);
        out.planes[o].weight_grid = std::move(weights[o]);
    }
    return out;
}

std::array<Var, 3> splat_view_op(const Var& feature_map,
                                 const std::shared_ptr<const SplatGeometry>& geom,
                                 std::array<Tensor, 3>* weight_grids_out) {
    const Tensor& fm = feature_map->value;
    LW_CHECK(fm.ndim() == 3, "feature map must be H x W x C");
    LW_CHECK(fm.dim(0) == geom->rows && fm.dim(1) == geom->cols,
             "feature map shape does not match splat geometry");
    int c_pix = fm.dim(2);
    std::array<Tensor, 3> grids, weights;
    splat_forward(*geom, fm.data(), c_pix, grids, weights);
    if (weight_grids_out) *weight_grids_out = weights;

    std::array<Var, 3> out;
    for (int o = 0; o < 3; ++o) {
        // Denominators are feature-independent, so each plane is linear in the
        // pixel features with fixed coefficients w / (sum_w + eps).
        Tensor wsum = weights[o];
        double eps = geom->eps;
        int res = geom->plane_res;
        out[o] = make_op(std::move(grids[o]), {feature_map},
                         [geom, wsum = std::move(wsum), eps, o, c_pix, res](Node& self) {
            Node* p = self.parents[0].get();
            p->ensure_grad();
            int c_splat = c_pix + geom->embed_dim;
            for (const auto& s : geom->samples) {
                double* gpix = p->grad.data() + static_cast<int64_t>(s.pixel_index) * c_pix;
                for (int t = 0; t < s.tap_count[o]; ++t) {
                    const BilinearTap& tap = s.taps[o][t];
                    int64_t pi = static_cast<int64_t>(tap.row) * res + tap.col;
                    double coeff = tap.weight / (wsum[pi] + eps);
                    const double* gout = self.grad.data() + pi * c_splat;
                    for (int i = 0; i < c_pix; ++i) gpix[i] += coeff * gout[i];
                }
            }
        });
    }
    return out;
}

FeaturePlane resize_plane(const FeaturePlane& plane, int target_rows, int target_cols) {
    int h = plane.grid.dim(0), w = plane.grid.dim(1), c = plane.grid.dim(2);
    LW_CHECK(target_rows >= 1 && target_cols >= 1, "resize target must be positive");
    LW_CHECK(h % target_rows == 0 && w % target_cols == 0,
             "resize target must divide the source resolution");
    int kh = h / target_rows, kw = w / target_cols;
    FeaturePlane out;
    out.orientation = plane.orientation;
    out.grid = Tensor({target_rows, target_cols, c});
    out.weight_grid = Tensor({target_rows, target_cols});
    double inv = 1.0 / (kh * kw);
    for (int r = 0; r < target_rows; ++r) {
        for (int col = 0; col < target_cols; ++col) {
            double wacc = 0.0;
            double* dst = out.grid.data() + (static_cast<int64_t>(r) * target_cols + col) * c;
            for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx) {
                    int64_t src = static_cast<int64_t>(r * kh + dy) * w + (col * kw + dx);
                    const double* s = plane.grid.data() + src * c;
                    for (int i = 0; i < c; ++i) dst[i] += s[i] * inv;
                    wacc += plane.weight_grid[src];
                }
            }
            out.weight_grid[static_cast<int64_t>(r) * target_cols + col] = wacc * inv;
        }
    }
    return out;
}

}  // namespace loomweave
