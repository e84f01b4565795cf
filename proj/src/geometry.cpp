#include "loomweave/geometry.hpp"

#include <algorithm>
#include <limits>

namespace loomweave {

void CameraPose::validate() const {
    const auto& m = rotation.m;
    // R^T R = I within 1e-6
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += m[k * 3 + i] * m[k * 3 + j];
            double want = (i == j) ? 1.0 : 0.0;
            LW_CHECK(std::abs(s - want) < 1e-6, "camera rotation is not orthonormal");
        }
    }
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    LW_CHECK(std::abs(det - 1.0) < 1e-6, "camera rotation determinant is not +1");
}

CameraPose CameraPose::look_at_origin(double azimuth, double elevation, double radius) {
    LW_CHECK(radius > 0.0, "camera radius must be positive");
    Vec3 center{radius * std::cos(elevation) * std::sin(azimuth),
                radius * std::sin(elevation),
                radius * std::cos(elevation) * std::cos(azimuth)};
    Vec3 forward = normalize(center * -1.0);  // toward origin
    Vec3 up_world{0.0, 1.0, 0.0};
    Vec3 right = cross(forward, up_world);
    double rn = norm(right);
    if (rn < 1e-9) {
        // Looking straight up/down; pick a stable right axis.
        right = Vec3{1.0, 0.0, 0.0};
    } else {
        right = right * (1.0 / rn);
    }
    Vec3 up = cross(right, forward);
    CameraPose pose;
    // Rows: camera x (right), y (up), z (backward) — camera looks down -z.
    pose.rotation.m = {right.x,    right.y,    right.z,
                       up.x,       up.y,       up.z,
                       -forward.x, -forward.y, -forward.z};
    pose.translation = pose.rotation.apply(center) * -1.0;
    return pose;
}

void Intrinsics::validate() const {
    LW_CHECK(focal > 0.0, "focal must be positive");
    LW_CHECK(rows >= 1 && cols >= 1, "resolution components must be >= 1");
}

Intrinsics Intrinsics::from_fov(int rows, int cols, double vertical_fov_radians) {
    LW_CHECK(rows >= 1 && cols >= 1, "resolution components must be >= 1");
    LW_CHECK(vertical_fov_radians > 0.0 && vertical_fov_radians < kPi,
             "vertical fov out of range");
    Intrinsics intr;
    intr.rows = rows;
    intr.cols = cols;
    intr.focal = 0.5 * rows / std::tan(0.5 * vertical_fov_radians);
    intr.principal_row = 0.5 * (rows - 1);
    intr.principal_col = 0.5 * (cols - 1);
    return intr;
}

std::vector<Ray> make_rays(const CameraPose& pose, const Intrinsics& intr) {
    pose.validate();
    intr.validate();
    Vec3 center = pose.center();
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(intr.rows) * intr.cols);
    for (int r = 0; r < intr.rows; ++r) {
        for (int c = 0; c < intr.cols; ++c) {
            // Pixel rows grow downward while camera y points up.
            Vec3 dir_cam{(c - intr.principal_col) / intr.focal,
                         -(r - intr.principal_row) / intr.focal, -1.0};
            Vec3 dir_world = normalize(pose.rotation.apply_transposed(dir_cam));
            rays.push_back(Ray{center, dir_world, r, c});
        }
    }
    return rays;
}

CubeHit intersect_cube(const Ray& ray, double side) {
    LW_CHECK(side > 0.0, "cube side must be positive");
    double half = 0.5 * side;
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        double o = ray.origin[axis];
        double d = ray.direction[axis];
        if (std::abs(d) < 1e-300) {
            if (o < -half || o > half) return CubeHit{};
            continue;
        }
        double ta = (-half - o) / d;
        double tb = (half - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t1 < 0.0) return CubeHit{};
    CubeHit hit;
    hit.t_near = std::max(t0, 0.0);
    hit.t_far = t1;
    hit.hit = hit.t_near < hit.t_far;
    return hit;
}

std::vector<std::pair<Vec3, double>> sample_along_ray(const Ray& ray, const CubeHit& hit,
                                                      int m, RandomStream* jitter_rng) {
    LW_CHECK(hit.hit, "sample_along_ray requires a cube hit");
    LW_CHECK(m >= 1, "sample count must be >= 1");
    std::vector<std::pair<Vec3, double>> out;
    out.reserve(static_cast<size_t>(m));
    double span = (hit.t_far - hit.t_near) / m;
    for (int i = 0; i < m; ++i) {
        double offset = jitter_rng ? jitter_rng->uniform() : 0.5;
        double depth = hit.t_near + (i + offset) * span;
        out.push_back({ray.origin + ray.direction * depth, depth});
    }
    return out;
}

std::array<double, 6> plucker_encode(const Ray& ray) {
    LW_CHECK(std::abs(norm(ray.direction) - 1.0) < 1e-9, "plucker needs a unit direction");
    Vec3 moment = cross(ray.origin, ray.direction);
    return {ray.direction.x, ray.direction.y, ray.direction.z, moment.x, moment.y, moment.z};
}

std::vector<double> harmonic_embed(const std::vector<double>& x, const HarmonicConfig& cfg) {
    LW_CHECK(cfg.num_frequencies >= 1, "harmonic config needs num_frequencies >= 1");
    for (double v : x) LW_CHECK(std::isfinite(v), "harmonic input must be finite");
    std::vector<double> out;
    out.reserve(static_cast<size_t>(cfg.output_dim(static_cast<int>(x.size()))));
    if (cfg.include_input) out.insert(out.end(), x.begin(), x.end());
    double freq = 1.0;
    for (int j = 0; j < cfg.num_frequencies; ++j) {
        for (double v : x) out.push_back(std::sin(freq * v));
        for (double v : x) out.push_back(std::cos(freq * v));
        freq *= 2.0;
    }
    return out;
}

std::vector<RaySample> build_point_features(const std::vector<std::pair<Vec3, double>>& samples,
                                            const std::vector<double>& pixel_feature,
                                            const std::array<double, 6>& plucker,
                                            const HarmonicConfig& cfg) {
    LW_CHECK(!samples.empty(), "build_point_features needs at least one sample");
    std::vector<double> plucker_vec(plucker.begin(), plucker.end());
    std::vector<double> shared = harmonic_embed(plucker_vec, cfg);
    std::vector<RaySample> out;
    out.reserve(samples.size());
    for (const auto& [pos, depth] : samples) {
        RaySample s;
        s.position = pos;
        s.depth = depth;
        s.feature.reserve(pixel_feature.size() + shared.size() +
                          static_cast<size_t>(cfg.output_dim(1)));
        s.feature.insert(s.feature.end(), pixel_feature.begin(), pixel_feature.end());
        s.feature.insert(s.feature.end(), shared.begin(), shared.end());
        std::vector<double> depth_embed = harmonic_embed({depth}, cfg);
        s.feature.insert(s.feature.end(), depth_embed.begin(), depth_embed.end());
        out.push_back(std::move(s));
    }
    return out;
}

std::array<double, 3> camera_spherical(const CameraPose& pose) {
    Vec3 c = pose.center();
    double radius = norm(c);
    double elevation = std::asin(std::clamp(c.y / std::max(radius, 1e-12), -1.0, 1.0));
    double azimuth = std::atan2(c.x, c.z);
    return {azimuth, elevation, radius};
}

}  // namespace loomweave
