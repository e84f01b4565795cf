#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "loomweave/geometry.hpp"

using namespace loomweave;

namespace {

CameraPose identity_cam_at(double x, double y, double z) {
    CameraPose p;
    p.rotation = Mat3::identity();
    p.translation = p.rotation.apply(Vec3{x, y, z}) * -1.0;
    return p;
}

// Brute-force cube membership marcher, independent of the slab method.
struct MarchResult {
    bool hit = false;
    double t_first = 0.0, t_last = 0.0;
};
MarchResult march_cube(const Ray& ray, double side, double t_max, double step) {
    double half = 0.5 * side;
    MarchResult r;
    for (double t = 0.0; t <= t_max; t += step) {
        Vec3 p = ray.origin + ray.direction * t;
        bool in = std::abs(p.x) <= half && std::abs(p.y) <= half && std::abs(p.z) <= half;
        if (in) {
            if (!r.hit) {
                r.hit = true;
                r.t_first = t;
            }
            r.t_last = t;
        }
    }
    return r;
}

}  // namespace

TEST_CASE("make_rays: optical axis and ray count") {
    CameraPose pose = identity_cam_at(0, 0, 2);
    Intrinsics intr;
    intr.focal = 8.0;
    intr.rows = 8;
    intr.cols = 8;
    intr.principal_row = 3.0;
    intr.principal_col = 3.0;
    auto rays = make_rays(pose, intr);
    CHECK(rays.size() == 64);
    const Ray& center = rays[3 * 8 + 3];  // principal pixel
    CHECK(center.direction.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(center.direction.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(center.direction.z == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(norm(center.origin - Vec3{0, 0, 2}) < 1e-12);
}

TEST_CASE("make_rays: pinhole back-projection oracle") {
    // Independent oracle: a pixel one column right of the principal point at
    // focal 8 back-projects to direction normalize((1/8, 0, -1)).
    CameraPose pose = identity_cam_at(0, 0, 2);
    Intrinsics intr;
    intr.focal = 8.0;
    intr.rows = 8;
    intr.cols = 8;
    intr.principal_row = 3.0;
    intr.principal_col = 3.0;
    auto rays = make_rays(pose, intr);
    const Ray& r = rays[3 * 8 + 4];
    double n = std::sqrt(1.0 / 64.0 + 1.0);
    Vec3 expect{(1.0 / 8.0) / n, 0.0, -1.0 / n};
    CHECK(norm(r.direction - expect) < 1e-12);
}

TEST_CASE("make_rays: all directions unit norm and origins at the camera center") {
    RandomStream rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        CameraPose pose = CameraPose::look_at_origin(rng.uniform(0, 2 * kPi),
                                                     rng.uniform(-1.2, 1.2), 2.0);
        Intrinsics intr = Intrinsics::from_fov(6, 6, 49.1 * kPi / 180.0);
        for (const auto& ray : make_rays(pose, intr)) {
            CHECK(std::abs(norm(ray.direction) - 1.0) < 1e-9);
            CHECK(norm(ray.origin - pose.center()) < 1e-9);
        }
    }
}

TEST_CASE("make_rays rejects a non-orthonormal rotation") {
    CameraPose pose = identity_cam_at(0, 0, 2);
    pose.rotation.m[0] = 1.5;
    Intrinsics intr = Intrinsics::from_fov(4, 4, 1.0);
    CHECK_THROWS(make_rays(pose, intr));
}

TEST_CASE("intersect_cube: axis-aligned slab arithmetic") {
    Ray r{{0, 0, 2}, {0, 0, -1}, 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    CHECK(hit.hit);
    CHECK(hit.t_near == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(hit.t_far == doctest::Approx(2.75).epsilon(1e-12));
}

TEST_CASE("intersect_cube: parallel offset miss") {
    Ray r{{5, 5, 5}, {0, 0, -1}, 0, 0};
    CHECK_FALSE(intersect_cube(r, 1.5).hit);
}

TEST_CASE("intersect_cube: origin inside clamps t_near to zero") {
    Ray r{{0, 0, 0}, {1, 0, 0}, 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    CHECK(hit.hit);
    CHECK(hit.t_near == 0.0);
    CHECK(hit.t_far == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("intersect_cube agrees with the marching oracle on 1000 random rays") {
    RandomStream rng(1234);
    const double side = 1.5, step = 1e-4, t_max = 8.0;
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
        Vec3 origin{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        Vec3 dir = normalize({rng.gaussian(), rng.gaussian(), rng.gaussian()});
        Ray ray{origin, dir, 0, 0};
        CubeHit slab = intersect_cube(ray, side);
        MarchResult march = march_cube(ray, side, t_max, step);
        if (slab.hit && slab.t_far - slab.t_near > 5.0 * step) {
            ++hits;
            REQUIRE(march.hit);
            CHECK(std::abs(march.t_first - slab.t_near) <= 2e-4);
            CHECK(std::abs(march.t_last - slab.t_far) <= 2e-4);
        } else if (!slab.hit) {
            // A marcher can only flag sub-step grazing intervals spuriously.
            if (march.hit) CHECK(march.t_last - march.t_first <= 2.0 * step);
        }
    }
    CHECK(hits > 100);  // the sampling box actually exercises the cube
}

TEST_CASE("sample_along_ray: paper M=16 midpoints") {
    Ray r{{0, 0, 2}, {0, 0, -1}, 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    auto samples = sample_along_ray(r, hit, 16);
    REQUIRE(samples.size() == 16);
    CHECK(samples.front().second == doctest::Approx(1.296875).epsilon(1e-12));
    CHECK(samples.back().second == doctest::Approx(2.703125).epsilon(1e-12));
}

TEST_CASE("sample_along_ray: m=1 midpoint, monotonic depths, containment") {
    Ray r{{0.2, 1.9, 1.1}, normalize({-0.1, -0.9, -0.5}), 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    REQUIRE(hit.hit);
    auto one = sample_along_ray(r, hit, 1);
    CHECK(one[0].second == doctest::Approx(0.5 * (hit.t_near + hit.t_far)).epsilon(1e-12));
    auto many = sample_along_ray(r, hit, 9);
    for (size_t i = 0; i < many.size(); ++i) {
        if (i > 0) CHECK(many[i].second > many[i - 1].second);
        CHECK(std::abs(many[i].first.x) <= 0.75 + 1e-9);
        CHECK(std::abs(many[i].first.y) <= 0.75 + 1e-9);
        CHECK(std::abs(many[i].first.z) <= 0.75 + 1e-9);
        CHECK(many[i].second >= hit.t_near);
        CHECK(many[i].second <= hit.t_far);
    }
    CHECK_THROWS(sample_along_ray(r, hit, 0));
    CHECK_THROWS(sample_along_ray(r, CubeHit{}, 4));
}

TEST_CASE("sample_along_ray: jittered samples stay inside their sub-intervals") {
    Ray r{{0, 0, 2}, {0, 0, -1}, 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    RandomStream rng(5);
    auto samples = sample_along_ray(r, hit, 8, &rng);
    double span = (hit.t_far - hit.t_near) / 8;
    for (int i = 0; i < 8; ++i) {
        CHECK(samples[i].second >= hit.t_near + i * span);
        CHECK(samples[i].second <= hit.t_near + (i + 1) * span);
    }
}

TEST_CASE("plucker_encode: examples and translation invariance") {
    Ray through_origin{{0, 0, 2}, {0, 0, -1}, 0, 0};
    auto p1 = plucker_encode(through_origin);
    std::array<double, 6> want1 = {0, 0, -1, 0, 0, 0};
    for (int i = 0; i < 6; ++i) CHECK(p1[i] == doctest::Approx(want1[i]).epsilon(1e-12));

    Ray offset{{1, 0, 0}, {0, 1, 0}, 0, 0};
    auto p2 = plucker_encode(offset);
    std::array<double, 6> want2 = {0, 1, 0, 0, 0, 1};
    for (int i = 0; i < 6; ++i) CHECK(p2[i] == doctest::Approx(want2[i]).epsilon(1e-12));

    RandomStream rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Vec3 o{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        Vec3 d = normalize({rng.gaussian(), rng.gaussian(), rng.gaussian()});
        auto a = plucker_encode(Ray{o, d, 0, 0});
        auto b = plucker_encode(Ray{o + d * rng.uniform(-5, 5), d, 0, 0});
        for (int i = 0; i < 6; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
    }
}

TEST_CASE("harmonic_embed: analytic values and lengths") {
    auto e0 = harmonic_embed({0.0}, HarmonicConfig{2, true});
    REQUIRE(e0.size() == 5);
    CHECK(e0[0] == 0.0);  // input passthrough
    CHECK(e0[1] == 0.0);  // sin(0)
    CHECK(e0[2] == 1.0);  // cos(0)
    CHECK(e0[3] == 0.0);
    CHECK(e0[4] == 1.0);

    HarmonicConfig six{4, false};
    CHECK(six.output_dim(6) == 48);
    CHECK(harmonic_embed(std::vector<double>(6, 0.3), six).size() == 48);

    auto half_pi = harmonic_embed({kPi / 2}, HarmonicConfig{1, false});
    CHECK(half_pi[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(half_pi[1]) < 1e-12);
}

TEST_CASE("harmonic_embed: norm identity ||H(x)||^2 = k * F") {
    RandomStream rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        int k = 1 + rng.next_int(6);
        int f = 1 + rng.next_int(5);
        std::vector<double> x;
        for (int i = 0; i < k; ++i) x.push_back(rng.uniform(-4, 4));
        auto h = harmonic_embed(x, HarmonicConfig{f, false});
        double sq = 0.0;
        for (double v : h) sq += v * v;
        CHECK(std::abs(sq - static_cast<double>(k) * f) < 1e-9);
    }
}

TEST_CASE("build_point_features: layout and shared prefix") {
    Ray r{{0, 0, 2}, {0, 0, -1}, 0, 0};
    CubeHit hit = intersect_cube(r, 1.5);
    auto pts = sample_along_ray(r, hit, 2);
    std::vector<double> pix = {0.1, -0.2, 0.3, 0.4};
    HarmonicConfig cfg{4, false};
    auto samples = build_point_features(pts, pix, plucker_encode(r), cfg);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].feature.size() == 4 + 48 + 8);  // 60
    for (int i = 0; i < 4 + 48; ++i) CHECK(samples[0].feature[i] == samples[1].feature[i]);
    CHECK(samples[0].feature[52] != samples[1].feature[52]);  // depth embeds differ
    CHECK_THROWS(build_point_features({}, pix, plucker_encode(r), cfg));
}

TEST_CASE("build_point_features: zero pixel block and x=0 harmonic pattern") {
    // Ray through the origin sampled at the origin, depth 0.
    std::vector<std::pair<Vec3, double>> pts = {{Vec3{0, 0, 0}, 0.0}};
    std::vector<double> pix(4, 0.0);
    Ray r{{0, 0, 0}, {0, 0, 1}, 0, 0};
    HarmonicConfig cfg{4, false};
    auto samples = build_point_features(pts, pix, plucker_encode(r), cfg);
    const auto& f = samples[0].feature;
    for (int i = 0; i < 4; ++i) CHECK(f[i] == 0.0);
    // Plucker is (0,0,1,0,0,0); per frequency the embed is sin block then cos block.
    std::vector<double> expect;
    double freq = 1.0;
    std::array<double, 6> pl = {0, 0, 1, 0, 0, 0};
    for (int j = 0; j < 4; ++j) {
        for (double v : pl) expect.push_back(std::sin(freq * v));
        for (double v : pl) expect.push_back(std::cos(freq * v));
        freq *= 2.0;
    }
    for (int i = 0; i < 48; ++i) CHECK(f[4 + i] == doctest::Approx(expect[i]).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) {
        CHECK(f[52 + 2 * j] == 0.0);      // sin(2^j * 0)
        CHECK(f[52 + 2 * j + 1] == 1.0);  // cos(2^j * 0)
    }
}

TEST_CASE("look_at_origin: spherical round trip and origin targeting") {
    RandomStream rng(33);
    for (int trial = 0; trial < 30; ++trial) {
        double az = rng.uniform(-kPi, kPi);
        double el = rng.uniform(-1.4, 1.4);
        double radius = rng.uniform(1.5, 4.0);
        CameraPose pose = CameraPose::look_at_origin(az, el, radius);
        pose.validate();
        auto [a2, e2, r2] = camera_spherical(pose);
        CHECK(std::abs(a2 - az) < 1e-9);
        CHECK(std::abs(e2 - el) < 1e-9);
        CHECK(std::abs(r2 - radius) < 1e-9);
        // The optical axis (camera -z in world) points at the origin.
        Vec3 axis = pose.rotation.apply_transposed(Vec3{0, 0, -1});
        CHECK(norm(axis - normalize(pose.center() * -1.0)) < 1e-9);
    }
}
