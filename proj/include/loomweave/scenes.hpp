#pragma once

#include "loomweave/geometry.hpp"
#include "loomweave/tensor.hpp"

namespace loomweave {

struct Primitive {
    enum class Kind { Box, Sphere };
    Kind kind = Kind::Box;
    Vec3 center;
    Vec3 half_size;  // spheres use half_size.x as radius
    std::array<double, 3> color{};
};

/// Procedural scene: 1-5 colored primitives inside the cube, plus background.
struct SceneSpec {
    std::vector<Primitive> primitives;
    std::array<double, 3> background{};
    uint64_t seed = 0;
};

struct RenderOptions {
    enum class Light { World, Camera };
    Light light = Light::World;
    Vec3 world_light_dir{0.4, 0.6, 0.7};  // normalized at use
    double ambient = 0.3;
    int supersample = 1;  // 1 or 2
};

constexpr double kSceneCubeSide = 1.5;

/// Deterministic scene from seed; primitives rejection-sampled so none is
/// fully contained in another and all sit inside the S=1.5 cube.
SceneSpec generate_scene(uint64_t seed);

/// Nearest-hit flat-shaded render (Lambert + ambient), HxWx3 in [0,1].
Tensor raycast_render(const SceneSpec& scene, const CameraPose& pose, const Intrinsics& intr,
                      const RenderOptions& options = {});

struct DatasetManifest {
    int scenes = 1;
    int views = 4;
    int resolution = 32;
    std::string elevation_mode = "fixed";  // fixed | variable
    double fixed_elevation_deg = 30.0;
    double elevation_min_deg = -10.0;
    double elevation_max_deg = 40.0;
    std::string azimuth_mode = "even";  // even | random
    double camera_radius = 2.0;
    double fov_degrees = 49.1;
    uint64_t seed = 1234;
    int format_version = 1;

    void validate() const;
    std::string serialize() const;
    static DatasetManifest parse(const std::string& text);
};

/// dataset/<scene_id>/view_<k>.png + cameras.txt + scene.json, dataset/manifest.txt.
void build_dataset(const DatasetManifest& manifest, const std::string& output_dir);

struct SceneData {
    std::vector<Tensor> images;       // views x (H, W, 3) in [0,1]
    std::vector<CameraPose> poses;
    Intrinsics intrinsics;
    SceneSpec spec;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<SceneData> scenes;
    static Dataset load(const std::string& dir);
};

// Camera record serialization shared by build/load (cameras.txt).
std::string serialize_cameras(const std::vector<CameraPose>& poses, const Intrinsics& intr,
                              const std::vector<std::array<double, 3>>& spherical);
void parse_cameras(const std::string& text, std::vector<CameraPose>& poses, Intrinsics& intr);

}  // namespace loomweave
