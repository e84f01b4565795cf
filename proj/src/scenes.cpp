#include "loomweave/scenes.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "loomweave/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace loomweave {

namespace {
constexpr double kMargin = 0.03;

Vec3 primitive_extent(const Primitive& p) {
    if (p.kind == Primitive::Kind::Sphere)
        return {p.half_size.x, p.half_size.x, p.half_size.x};
    return p.half_size;
}

bool inside_primitive(const Primitive& p, const Vec3& q) {
    Vec3 d = q - p.center;
    if (p.kind == Primitive::Kind::Sphere) return dot(d, d) <= p.half_size.x * p.half_size.x;
    return std::abs(d.x) <= p.half_size.x && std::abs(d.y) <= p.half_size.y &&
           std::abs(d.z) <= p.half_size.z;
}

/// a fully inside b: all corners of a's bounding box inside b.
bool fully_contained(const Primitive& a, const Primitive& b) {
    Vec3 e = primitive_extent(a);
    for (int mask = 0; mask < 8; ++mask) {
        Vec3 corner{a.center.x + ((mask & 1) ? e.x : -e.x),
                    a.center.y + ((mask & 2) ? e.y : -e.y),
                    a.center.z + ((mask & 4) ? e.z : -e.z)};
        if (!inside_primitive(b, corner)) return false;
    }
    return true;
}
}  // namespace

SceneSpec generate_scene(uint64_t seed) {
    RandomStream rng(RandomStream::mix(seed, 0x5ce9e5));
    SceneSpec scene;
    scene.seed = seed;
    double shade = rng.uniform(0.05, 0.25);
    scene.background = {shade, shade, rng.uniform(0.05, 0.3)};
    int count = 1 + rng.next_int(5);
    double half_cube = 0.5 * kSceneCubeSide - kMargin;
    for (int i = 0; i < count; ++i) {
        Primitive p;
        for (int attempt = 0; attempt < 100; ++attempt) {
            p.kind = rng.uniform() < 0.5 ? Primitive::Kind::Box : Primitive::Kind::Sphere;
            if (p.kind == Primitive::Kind::Sphere) {
                double r = rng.uniform(0.12, 0.34);
                p.half_size = {r, r, r};
            } else {
                p.half_size = {rng.uniform(0.1, 0.32), rng.uniform(0.1, 0.32),
                               rng.uniform(0.1, 0.32)};
            }
            Vec3 e = primitive_extent(p);
            p.center = {rng.uniform(-(half_cube - e.x), half_cube - e.x),
                        rng.uniform(-(half_cube - e.y), half_cube - e.y),
                        rng.uniform(-(half_cube - e.z), half_cube - e.z)};
            p.color = {rng.uniform(0.15, 1.0), rng.uniform(0.15, 1.0), rng.uniform(0.15, 1.0)};
            bool contained = false;
            for (const auto& other : scene.primitives)
                if (fully_contained(p, other) || fully_contained(other, p)) contained = true;
            if (!contained) break;
        }
        scene.primitives.push_back(p);
    }
    return scene;
}

namespace {
struct Hit {
    double t = 0.0;
    Vec3 normal;
    int primitive = -1;
};

bool hit_sphere(const Primitive& p, const Ray& ray, Hit& hit) {
    Vec3 oc = ray.origin - p.center;
    double r = p.half_size.x;
    double b = dot(oc, ray.direction);
    double c = dot(oc, oc) - r * r;
    double disc = b * b - c;
    if (disc < 0.0) return false;
    double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < 1e-6) t = -b + sq;
    if (t < 1e-6) return false;
    hit.t = t;
    hit.normal = normalize(ray.origin + ray.direction * t - p.center);
    return true;
}

bool hit_box(const Primitive& p, const Ray& ray, Hit& hit) {
    double t0 = -1e300, t1 = 1e300;
    int axis0 = -1;
    for (int axis = 0; axis < 3; ++axis) {
        double o = ray.origin[axis] - p.center[axis];
        double d = ray.direction[axis];
        double e = axis == 0 ? p.half_size.x : (axis == 1 ? p.half_size.y : p.half_size.z);
        if (std::abs(d) < 1e-300) {
            if (o < -e || o > e) return false;
            continue;
        }
        double ta = (-e - o) / d, tb = (e - o) / d;
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            axis0 = axis;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t1 < 1e-6) return false;
    double t = t0 > 1e-6 ? t0 : t1;
    if (t0 <= 1e-6) {
        // Origin inside the box; normal of the exit face (unused by datasets).
        axis0 = 0;
    }
    hit.t = t;
    Vec3 n{0, 0, 0};
    double sign = ray.direction[axis0] > 0 ? -1.0 : 1.0;
    if (axis0 == 0) n.x = sign;
    else if (axis0 == 1) n.y = sign;
    else n.z = sign;
    hit.normal = n;
    return true;
}

std::array<double, 3> shade_pixel(const SceneSpec& scene, const Ray& ray,
                                  const RenderOptions& opt) {
    Hit best;
    best.t = 1e300;
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        Hit h;
        bool ok = scene.primitives[i].kind == Primitive::Kind::Sphere
                      ? hit_sphere(scene.primitives[i], ray, h)
                      : hit_box(scene.primitives[i], ray, h);
        if (ok && h.t < best.t) {
            best = h;
            best.primitive = static_cast<int>(i);
        }
    }
    if (best.primitive < 0) return scene.background;
    Vec3 light = opt.light == RenderOptions::Light::Camera ? ray.direction * -1.0
                                                           : normalize(opt.world_light_dir);
    double lambert = std::max(0.0, dot(best.normal, light));
    double k = opt.ambient + (1.0 - opt.ambient) * lambert;
    const auto& c = scene.primitives[static_cast<size_t>(best.primitive)].color;
    return {std::clamp(c[0] * k, 0.0, 1.0), std::clamp(c[1] * k, 0.0, 1.0),
            std::clamp(c[2] * k, 0.0, 1.0)};
}
}  // namespace

Tensor raycast_render(const SceneSpec& scene, const CameraPose& pose, const Intrinsics& intr,
                      const RenderOptions& options) {
    LW_CHECK(options.supersample == 1 || options.supersample == 2,
             "supersample must be 1 or 2");
    Tensor img({intr.rows, intr.cols, 3});
    if (options.supersample == 1) {
        auto rays = make_rays(pose, intr);
        for (const auto& ray : rays) {
            auto c = shade_pixel(scene, ray, options);
            int64_t idx = (static_cast<int64_t>(ray.pixel_row) * intr.cols + ray.pixel_col) * 3;
            img[idx] = c[0];
            img[idx + 1] = c[1];
            img[idx + 2] = c[2];
        }
        return img;
    }
    // 2x supersampling: render at double resolution and box-filter down.
    Intrinsics hi = intr;
    hi.rows *= 2;
    hi.cols *= 2;
    hi.focal *= 2.0;
    hi.principal_row = 0.5 * (hi.rows - 1);
    hi.principal_col = 0.5 * (hi.cols - 1);
    RenderOptions one = options;
    one.supersample = 1;
    Tensor big = raycast_render(scene, pose, hi, one);
    for (int r = 0; r < intr.rows; ++r)
        for (int c = 0; c < intr.cols; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += big[(static_cast<int64_t>(2 * r + dy) * hi.cols + 2 * c + dx) * 3 +
                                   ch];
                img[(static_cast<int64_t>(r) * intr.cols + c) * 3 + ch] = 0.25 * acc;
            }
    return img;
}

void DatasetManifest::validate() const {
    LW_CHECK(scenes >= 1, "manifest needs at least one scene");
    LW_CHECK(views >= 1, "manifest needs at least one view per scene");
    LW_CHECK(resolution >= 8, "resolution must be >= 8");
    LW_CHECK(elevation_mode == "fixed" || elevation_mode == "variable",
             "elevation_mode must be fixed or variable");
    LW_CHECK(fixed_elevation_deg >= -90.0 && fixed_elevation_deg <= 90.0,
             "fixed elevation out of [-90, 90]");
    LW_CHECK(elevation_min_deg >= -90.0 && elevation_max_deg <= 90.0 &&
                 elevation_min_deg <= elevation_max_deg,
             "elevation range out of [-90, 90]");
    LW_CHECK(azimuth_mode == "even" || azimuth_mode == "random",
             "azimuth_mode must be even or random");
    LW_CHECK(camera_radius > 0.5 * kSceneCubeSide * std::sqrt(3.0),
             "camera_radius must sit outside the scene cube");
    LW_CHECK(fov_degrees > 1.0 && fov_degrees < 179.0, "fov out of range");
}

std::string DatasetManifest::serialize() const {
    std::ostringstream os;
    char buf[64];
    auto d = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "format_version = " << format_version << "\n";
    os << "scenes = " << scenes << "\n";
    os << "views = " << views << "\n";
    os << "resolution = " << resolution << "\n";
    os << "elevation_mode = " << elevation_mode << "\n";
    os << "fixed_elevation_deg = " << d(fixed_elevation_deg) << "\n";
    os << "elevation_min_deg = " << d(elevation_min_deg) << "\n";
    os << "elevation_max_deg = " << d(elevation_max_deg) << "\n";
    os << "azimuth_mode = " << azimuth_mode << "\n";
    os << "camera_radius = " << d(camera_radius) << "\n";
    os << "fov_degrees = " << d(fov_degrees) << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
    DatasetManifest m;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        LW_CHECK(eq != std::string::npos, "manifest line missing '=': " + line);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (k == "format_version") m.format_version = std::stoi(v);
        else if (k == "scenes") m.scenes = std::stoi(v);
        else if (k == "views") m.views = std::stoi(v);
        else if (k == "resolution") m.resolution = std::stoi(v);
        else if (k == "elevation_mode") m.elevation_mode = v;
        else if (k == "fixed_elevation_deg") m.fixed_elevation_deg = std::stod(v);
        else if (k == "elevation_min_deg") m.elevation_min_deg = std::stod(v);
        else if (k == "elevation_max_deg") m.elevation_max_deg = std::stod(v);
        else if (k == "azimuth_mode") m.azimuth_mode = v;
        else if (k == "camera_radius") m.camera_radius = std::stod(v);
        else if (k == "fov_degrees") m.fov_degrees = std::stod(v);
        else if (k == "seed") m.seed = std::stoull(v);
        else LW_CHECK(false, "unknown manifest key: " + k);
    }
    m.validate();
    return m;
}

std::string serialize_cameras(const std::vector<CameraPose>& poses, const Intrinsics& intr,
                              const std::vector<std::array<double, 3>>& spherical) {
    std::ostringstream os;
    char buf[64];
    auto d = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "views = " << poses.size() << "\n";
    os << "focal = " << d(intr.focal) << "\n";
    os << "principal = " << d(intr.principal_row) << " " << d(intr.principal_col) << "\n";
    os << "resolution = " << intr.rows << " " << intr.cols << "\n";
    for (size_t i = 0; i < poses.size(); ++i) {
        os << "view = " << i << "\n";
        os << "rotation =";
        for (double v : poses[i].rotation.m) os << " " << d(v);
        os << "\n";
        os << "translation = " << d(poses[i].translation.x) << " "
           << d(poses[i].translation.y) << " " << d(poses[i].translation.z) << "\n";
        os << "azimuth_deg = " << d(spherical[i][0] * 180.0 / kPi) << "\n";
        os << "elevation_deg = " << d(spherical[i][1] * 180.0 / kPi) << "\n";
        os << "radius = " << d(spherical[i][2]) << "\n";
    }
    return os.str();
}

void parse_cameras(const std::string& text, std::vector<CameraPose>& poses, Intrinsics& intr) {
    std::istringstream is(text);
    std::string key, eq;
    poses.clear();
    CameraPose current;
    bool have_view = false;
    while (is >> key >> eq) {
        LW_CHECK(eq == "=", "camera record parse error near " + key);
        if (key == "views") {
            size_t n;
            is >> n;
            poses.reserve(n);
        } else if (key == "focal") {
            is >> intr.focal;
        } else if (key == "principal") {
            is >> intr.principal_row >> intr.principal_col;
        } else if (key == "resolution") {
            is >> intr.rows >> intr.cols;
        } else if (key == "view") {
            int idx;
            is >> idx;
            if (have_view) poses.push_back(current);
            current = CameraPose{};
            have_view = true;
        } else if (key == "rotation") {
            for (double& v : current.rotation.m) is >> v;
        } else if (key == "translation") {
            is >> current.translation.x >> current.translation.y >> current.translation.z;
        } else if (key == "azimuth_deg" || key == "elevation_deg" || key == "radius") {
            double ignored;
            is >> ignored;
        } else {
            LW_CHECK(false, "unknown camera record key: " + key);
        }
    }
    if (have_view) poses.push_back(current);
    intr.validate();
    for (const auto& p : poses) p.validate();
}

namespace {
json scene_to_json(const SceneSpec& scene) {
    json j;
    j["seed"] = scene.seed;
    j["background"] = scene.background;
    j["primitives"] = json::array();
    for (const auto& p : scene.primitives) {
        json pj;
        pj["kind"] = p.kind == Primitive::Kind::Box ? "box" : "sphere";
        pj["center"] = {p.center.x, p.center.y, p.center.z};
        pj["half_size"] = {p.half_size.x, p.half_size.y, p.half_size.z};
        pj["color"] = p.color;
        j["primitives"].push_back(pj);
    }
    return j;
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<uint64_t>();
    auto bg = j.at("background");
    s.background = {bg[0], bg[1], bg[2]};
    for (const auto& pj : j.at("primitives")) {
        Primitive p;
        p.kind = pj.at("kind") == "box" ? Primitive::Kind::Box : Primitive::Kind::Sphere;
        auto c = pj.at("center");
        p.center = {c[0], c[1], c[2]};
        auto hs = pj.at("half_size");
        p.half_size = {hs[0], hs[1], hs[2]};
        auto col = pj.at("color");
        p.color = {col[0], col[1], col[2]};
        s.primitives.push_back(p);
    }
    return s;
}

std::vector<std::array<double, 3>> scene_cameras(const DatasetManifest& m, int scene_index) {
    RandomStream rng(RandomStream::mix(m.seed, 0xca3e7a + static_cast<uint64_t>(scene_index)));
    std::vector<std::array<double, 3>> out;
    for (int k = 0; k < m.views; ++k) {
        double az = m.azimuth_mode == "even"
                        ? 2.0 * kPi * k / m.views
                        : rng.uniform(0.0, 2.0 * kPi);
        double el = m.elevation_mode == "fixed"
                        ? m.fixed_elevation_deg * kPi / 180.0
                        : rng.uniform(m.elevation_min_deg, m.elevation_max_deg) * kPi / 180.0;
        out.push_back({az, el, m.camera_radius});
    }
    return out;
}
}  // namespace

void build_dataset(const DatasetManifest& manifest, const std::string& output_dir) {
    manifest.validate();
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    LW_CHECK(!ec, "cannot create dataset directory: " + output_dir);
    {
        std::ofstream mf(output_dir + "/manifest.txt");
        LW_CHECK(mf.good(), "cannot write dataset manifest");
        mf << manifest.serialize();
    }
    Intrinsics intr = Intrinsics::from_fov(manifest.resolution, manifest.resolution,
                                           manifest.fov_degrees * kPi / 180.0);
    for (int s = 0; s < manifest.scenes; ++s) {
        std::string scene_dir = output_dir + "/scene_" + std::to_string(s);
        fs::create_directories(scene_dir, ec);
        LW_CHECK(!ec, "cannot create scene directory: " + scene_dir);
        SceneSpec scene = generate_scene(RandomStream::mix(manifest.seed, static_cast<uint64_t>(s)));
        auto sph = scene_cameras(manifest, s);
        std::vector<CameraPose> poses;
        for (const auto& [az, el, r] : sph)
            poses.push_back(CameraPose::look_at_origin(az, el, r));
        for (int k = 0; k < manifest.views; ++k) {
            Tensor img = raycast_render(scene, poses[static_cast<size_t>(k)], intr);
            write_png(scene_dir + "/view_" + std::to_string(k) + ".png", to_image8(img));
        }
        std::ofstream cf(scene_dir + "/cameras.txt");
        cf << serialize_cameras(poses, intr, sph);
        std::ofstream sf(scene_dir + "/scene.json");
        sf << scene_to_json(scene).dump(2) << "\n";
    }
}

Dataset Dataset::load(const std::string& dir) {
    Dataset ds;
    std::ifstream mf(dir + "/manifest.txt");
    LW_CHECK(mf.good(), "missing dataset manifest in " + dir);
    std::stringstream ss;
    ss << mf.rdbuf();
    ds.manifest = DatasetManifest::parse(ss.str());
    for (int s = 0; s < ds.manifest.scenes; ++s) {
        std::string scene_dir = dir + "/scene_" + std::to_string(s);
        SceneData data;
        std::ifstream cf(scene_dir + "/cameras.txt");
        LW_CHECK(cf.good(), "missing cameras.txt in " + scene_dir);
        std::stringstream cs;
        cs << cf.rdbuf();
        parse_cameras(cs.str(), data.poses, data.intrinsics);
        for (int k = 0; k < ds.manifest.views; ++k)
            data.images.push_back(
                to_tensor01(read_png(scene_dir + "/view_" + std::to_string(k) + ".png")));
        std::ifstream sf(scene_dir + "/scene.json");
        if (sf.good()) {
            json j;
            sf >> j;
            data.spec = scene_from_json(j);
        }
        ds.scenes.push_back(std::move(data));
    }
    return ds;
}

}  // namespace loomweave
