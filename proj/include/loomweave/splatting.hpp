#pragma once

#include <array>
#include <memory>
#include <utility>
#include <vector>

#include "loomweave/autodiff.hpp"
#include "loomweave/geometry.hpp"
#include "loomweave/tensor.hpp"

namespace loomweave {

enum class PlaneOrientation { XY = 0, YZ = 1, XZ = 2 };
inline const char* orientation_name(PlaneOrientation o) {
    switch (o) {
        case PlaneOrientation::XY: return "xy";
        case PlaneOrientation::YZ: return "yz";
        default: return "xz";
    }
}

/// H x W x C feature grid plus the accumulated bilinear mass per pixel.
struct FeaturePlane {
    PlaneOrientation orientation = PlaneOrientation::XY;
    Tensor grid;         // H x W x C
    Tensor weight_grid;  // H x W
};

struct PerViewTriplane {
    std::array<FeaturePlane, 3> planes;  // indexed by PlaneOrientation
    int view_index = 0;
};

/// Continuous plane coordinate (u, v): u from the orientation's first named
/// axis (indexes columns), v from the second (indexes rows). The cube face
/// range [-side/2, side/2] maps to [-0.5, size-0.5] with pixel centers at
/// integer coordinates. Positions outside the cube are validation errors.
std::pair<double, double> project_point(const Vec3& position, PlaneOrientation orientation,
                                        double side, int rows, int cols);

struct BilinearTap {
    int row = 0, col = 0;
    double weight = 0.0;
};
/// Up to four in-grid taps; out-of-grid taps are dropped without renormalizing.
int bilinear_taps(double u, double v, int rows, int cols, BilinearTap out[4]);

constexpr double kSplatEpsilon = 1e-8;

/// Weight-normalized bilinear scatter of sample features onto one plane.
FeaturePlane splat_points(const std::vector<RaySample>& samples, PlaneOrientation orientation,
                          double side, int rows, int cols, double eps = kSplatEpsilon);

struct SplatConfig {
    double side = 1.5;
    int samples_per_ray = 8;
    int plane_resolution = 16;
    HarmonicConfig harmonic;          // used for both plucker and depth
    bool positional_encoding = true;  // off: f_q is the bare pixel feature
    double eps = kSplatEpsilon;
};

/// Precomputed, feature-independent splat geometry for one (pose, intrinsics,
/// config): ray/sample taps on the three planes plus the constant harmonic
/// blocks of f_q. Reused across training steps.
struct SplatGeometry {
    int rows = 0, cols = 0;          // feature map shape
    int plane_res = 0;
    int embed_dim = 0;               // per-sample constant block width
    double eps = kSplatEpsilon;
    struct Sample {
        int pixel_index = 0;         // row-major index into the feature map
        int64_t embed_offset = 0;    // into embed_data
        std::array<std::array<BilinearTap, 4>, 3> taps{};
        std::array<int, 3> tap_count{};
        Vec3 position;
        double depth = 0.0;
    };
    std::vector<Sample> samples;
    std::vector<double> embed_data;  // [H(plucker) | H(depth)] per sample
    // Per-pixel ray info for latent rendering (shared geometry).
    std::vector<int> covered_pixels;             // pixels whose ray hits the cube
    std::vector<Vec3> covered_positions;         // covered_pixels.size() * M positions
};

SplatGeometry build_splat_geometry(const CameraPose& pose, const Intrinsics& intr,
                                   const SplatConfig& cfg);

/// Full per-view splat: rays, cube sampling, feature enrichment, scatter onto
/// the three planes. Rays that miss the cube contribute nothing.
PerViewTriplane splat_view(const Tensor& feature_map, const CameraPose& pose,
                           const Intrinsics& intr, const SplatConfig& cfg);

/// Autodiff version on precomputed geometry; gradient flows to the pixel
/// features only (harmonic blocks are constants). Planes returned as
/// (H, W, C_splat) Vars; weight grids optionally exposed.
std::array<Var, 3> splat_view_op(const Var& feature_map,
                                 const std::shared_ptr<const SplatGeometry>& geom,
                                 std::array<Tensor, 3>* weight_grids_out = nullptr);

/// k x k average pooling of grid and weight grid; target must divide source.
FeaturePlane resize_plane(const FeaturePlane& plane, int target_rows, int target_cols);

}  // namespace loomweave
