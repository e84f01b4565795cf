#pragma once

#include <array>
#include <vector>

#include "loomweave/common.hpp"

namespace loomweave {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(const Vec3& a) {
    double n = norm(a);
    LW_CHECK(n > 0.0, "cannot normalize zero vector");
    return a * (1.0 / n);
}

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};
    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Vec3 apply_transposed(const Vec3& v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
};

/// World-to-camera extrinsics. Right-handed, camera looks down -z;
/// x_cam = R * x_world + t, so the camera center is -R^T t.
struct CameraPose {
    Mat3 rotation;
    Vec3 translation;

    void validate() const;             // orthonormal within 1e-6, det = +1
    Vec3 center() const { return rotation.apply_transposed(translation) * -1.0; }

    /// Camera on a sphere of `radius` at (azimuth, elevation), looking at the origin.
    /// Azimuth rotates around +y (up); elevation raises toward +y. Radians.
    static CameraPose look_at_origin(double azimuth, double elevation, double radius);
};

/// Pinhole intrinsics of the feature grid (pixels).
struct Intrinsics {
    double focal = 0.0;
    double principal_row = 0.0;
    double principal_col = 0.0;
    int rows = 0;
    int cols = 0;

    void validate() const;

    /// Vertical-FOV construction with principal point at the grid center.
    static Intrinsics from_fov(int rows, int cols, double vertical_fov_radians);
};

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit
    int pixel_row = 0;
    int pixel_col = 0;
};

struct CubeHit {
    double t_near = 0.0;
    double t_far = 0.0;
    bool hit = false;
};

struct RaySample {
    Vec3 position;
    double depth = 0.0;
    std::vector<double> feature;  // f_q
};

struct HarmonicConfig {
    int num_frequencies = 4;
    bool include_input = false;

    int output_dim(int input_dim) const {
        LW_CHECK(num_frequencies >= 1, "harmonic config needs num_frequencies >= 1");
        return input_dim * (2 * num_frequencies + (include_input ? 1 : 0));
    }
};

/// One ray per feature pixel, row-major. Origins at the camera center.
std::vector<Ray> make_rays(const CameraPose& pose, const Intrinsics& intr);

/// Slab-method intersection with the axis-aligned cube of side `side` centered
/// at the origin. t_near clamps to 0 when the origin is inside.
CubeHit intersect_cube(const Ray& ray, double side);

/// Midpoints of m equal sub-intervals of [t_near, t_far]. With jitter_rng,
/// each depth is drawn uniformly inside its sub-interval instead.
std::vector<std::pair<Vec3, double>> sample_along_ray(const Ray& ray, const CubeHit& hit,
                                                      int m, RandomStream* jitter_rng = nullptr);

/// (direction, origin x direction).
std::array<double, 6> plucker_encode(const Ray& ray);

/// Concatenated sin(2^j x), cos(2^j x) for j = 0..F-1, optionally prefixed by x.
std::vector<double> harmonic_embed(const std::vector<double>& x, const HarmonicConfig& cfg);

/// f_q = concat(pixel_feature, H(plucker), H(depth)); shared prefix per ray.
std::vector<RaySample> build_point_features(const std::vector<std::pair<Vec3, double>>& samples,
                                            const std::vector<double>& pixel_feature,
                                            const std::array<double, 6>& plucker,
                                            const HarmonicConfig& cfg);

/// Spherical coordinates (azimuth, elevation, radius) of the camera center.
std::array<double, 3> camera_spherical(const CameraPose& pose);

}  // namespace loomweave
