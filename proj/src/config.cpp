#include "loomweave/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace loomweave {

namespace {
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        LW_CHECK(!item.empty(), "empty entry in integer list");
        out.push_back(std::stoi(item));
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    LW_CHECK(false, "invalid boolean value: " + v);
    return false;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

void RunConfig::validate() const {
    LW_CHECK(scale == "desk" || scale == "paper", "scale must be desk or paper");
    LW_CHECK(image_size >= 8, "image_size must be >= 8");
    LW_CHECK(latent_channels >= 1, "latent_channels must be >= 1");
    LW_CHECK(views >= 1, "views must be >= 1");
    LW_CHECK(samples_per_ray >= 1, "samples_per_ray must be >= 1");
    LW_CHECK(cube_side > 0.0, "cube_side must be positive");
    LW_CHECK(fov_degrees > 1.0 && fov_degrees < 179.0, "fov_degrees out of range");
    LW_CHECK(camera_radius > cube_side * 0.5 * std::sqrt(3.0),
             "camera_radius must place cameras outside the cube");
    LW_CHECK(triplane_resolution >= 2, "triplane_resolution must be >= 2");
    LW_CHECK(triplane_channels >= 1, "triplane_channels must be >= 1");
    LW_CHECK(splat_resolution >= triplane_resolution,
             "splat_resolution must be >= triplane_resolution");
    LW_CHECK(splat_resolution % triplane_resolution == 0,
             "splat_resolution must be a multiple of triplane_resolution");
    LW_CHECK(fusion_mode == "attention" || fusion_mode == "mean",
             "fusion_mode must be attention or mean");
    LW_CHECK(latent_render_placement == "final" || latent_render_placement == "all",
             "latent_render_placement must be final or all");
    LW_CHECK(!site_iterations.empty(), "site_iterations must not be empty");
    for (int it : site_iterations) LW_CHECK(it >= 1, "site iteration counts must be >= 1");
    LW_CHECK(static_cast<int>(site_iterations.size()) - 1 >= 1 &&
                 static_cast<int>(site_iterations.size()) - 1 <= unet_levels,
             "site count must be 1 (bottleneck) + [1, unet_levels] decoder sites");
    LW_CHECK(num_heads >= 1 && head_dim >= 1, "attention dims must be >= 1");
    LW_CHECK(mlp_widening >= 1, "mlp_widening must be >= 1");
    LW_CHECK(harmonic_frequencies >= 1, "harmonic_frequencies must be >= 1");
    LW_CHECK(base_width >= 4, "base_width must be >= 4");
    LW_CHECK(unet_levels >= 1 && unet_levels <= 5, "unet_levels must be in [1, 5]");
    LW_CHECK(image_size % (1 << unet_levels) == 0,
             "image_size must be divisible by 2^unet_levels");
    LW_CHECK(schedule_steps >= 1, "schedule_steps must be >= 1");
    LW_CHECK(beta_start > 0.0 && beta_start < 1.0, "beta_start must be in (0,1)");
    LW_CHECK(beta_end > 0.0 && beta_end < 1.0 && beta_end >= beta_start,
             "beta_end must be in (0,1) and >= beta_start");
    LW_CHECK(sampler == "ddim" || sampler == "ancestral",
             "sampler must be ddim or ancestral");
    LW_CHECK(sampler_steps >= 1 && sampler_steps <= schedule_steps,
             "sampler_steps must be in [1, schedule_steps]");
    LW_CHECK(lambda_tv >= 0.0, "lambda_tv must be >= 0");
    LW_CHECK(learning_rate > 0.0, "learning_rate must be positive");
    LW_CHECK(grad_clip >= 0.0, "grad_clip must be >= 0");
    LW_CHECK(batch_size >= 1, "batch_size must be >= 1");
    LW_CHECK(train_steps >= 0, "train_steps must be >= 0");
    LW_CHECK(checkpoint_every >= 1, "checkpoint_every must be >= 1");
    LW_CHECK(log_every >= 1, "log_every must be >= 1");
    LW_CHECK(eval_every >= 0, "eval_every must be >= 0");
    LW_CHECK(threads >= 0, "threads must be >= 0");
}

RunConfig RunConfig::preset(const std::string& scale) {
    RunConfig c;
    if (scale == "desk") {
        // defaults above are the desk preset
    } else if (scale == "paper") {
        c.scale = "paper";
        c.image_size = 32;  // LDM latent side; the VAE codec is out of scope
        c.latent_channels = 4;
        c.views = 16;
        c.samples_per_ray = 16;
        c.triplane_resolution = 32;
        c.triplane_channels = 512;
        c.splat_resolution = 64;
        c.site_iterations = {3, 4, 6, 8};
        c.num_heads = 8;
        c.head_dim = 64;
        c.mlp_widening = 4;
        c.base_width = 64;
        c.unet_levels = 4;
        c.schedule_steps = 1000;
        c.sampler_steps = 50;
        c.learning_rate = 1e-5;
        c.train_steps = 100000;
    } else {
        LW_CHECK(false, "unknown scale preset: " + scale);
    }
    c.validate();
    return c;
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "scale = " << scale << "\n";
    os << "image_size = " << image_size << "\n";
    os << "latent_channels = " << latent_channels << "\n";
    os << "views = " << views << "\n";
    os << "samples_per_ray = " << samples_per_ray << "\n";
    os << "cube_side = " << fmt_double(cube_side) << "\n";
    os << "fov_degrees = " << fmt_double(fov_degrees) << "\n";
    os << "camera_radius = " << fmt_double(camera_radius) << "\n";
    os << "triplane_resolution = " << triplane_resolution << "\n";
    os << "triplane_channels = " << triplane_channels << "\n";
    os << "splat_resolution = " << splat_resolution << "\n";
    os << "fusion_mode = " << fusion_mode << "\n";
    os << "positional_encoding = " << (positional_encoding ? "true" : "false") << "\n";
    os << "latent_render_placement = " << latent_render_placement << "\n";
    os << "site_iterations = " << join_ints(site_iterations) << "\n";
    os << "num_heads = " << num_heads << "\n";
    os << "head_dim = " << head_dim << "\n";
    os << "mlp_widening = " << mlp_widening << "\n";
    os << "harmonic_frequencies = " << harmonic_frequencies << "\n";
    os << "base_width = " << base_width << "\n";
    os << "unet_levels = " << unet_levels << "\n";
    os << "schedule_steps = " << schedule_steps << "\n";
    os << "beta_start = " << fmt_double(beta_start) << "\n";
    os << "beta_end = " << fmt_double(beta_end) << "\n";
    os << "sampler = " << sampler << "\n";
    os << "sampler_steps = " << sampler_steps << "\n";
    os << "lambda_tv = " << fmt_double(lambda_tv) << "\n";
    os << "learning_rate = " << fmt_double(learning_rate) << "\n";
    os << "grad_clip = " << fmt_double(grad_clip) << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "train_steps = " << train_steps << "\n";
    os << "checkpoint_every = " << checkpoint_every << "\n";
    os << "log_every = " << log_every << "\n";
    os << "eval_every = " << eval_every << "\n";
    os << "freeze_backbone = " << (freeze_backbone ? "true" : "false") << "\n";
    os << "random_reference = " << (random_reference ? "true" : "false") << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    os << "dataset_path = " << dataset_path << "\n";
    os << "output_path = " << output_path << "\n";
    return os.str();
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "scale") scale = value;
    else if (key == "image_size") image_size = std::stoi(value);
    else if (key == "latent_channels") latent_channels = std::stoi(value);
    else if (key == "views") views = std::stoi(value);
    else if (key == "samples_per_ray") samples_per_ray = std::stoi(value);
    else if (key == "cube_side") cube_side = std::stod(value);
    else if (key == "fov_degrees") fov_degrees = std::stod(value);
    else if (key == "camera_radius") camera_radius = std::stod(value);
    else if (key == "triplane_resolution") triplane_resolution = std::stoi(value);
    else if (key == "triplane_channels") triplane_channels = std::stoi(value);
    else if (key == "splat_resolution") splat_resolution = std::stoi(value);
    else if (key == "fusion_mode") fusion_mode = value;
    else if (key == "positional_encoding") positional_encoding = parse_bool(value);
    else if (key == "latent_render_placement") latent_render_placement = value;
    else if (key == "site_iterations") site_iterations = parse_ints(value);
    else if (key == "num_heads") num_heads = std::stoi(value);
    else if (key == "head_dim") head_dim = std::stoi(value);
    else if (key == "mlp_widening") mlp_widening = std::stoi(value);
    else if (key == "harmonic_frequencies") harmonic_frequencies = std::stoi(value);
    else if (key == "base_width") base_width = std::stoi(value);
    else if (key == "unet_levels") unet_levels = std::stoi(value);
    else if (key == "schedule_steps") schedule_steps = std::stoi(value);
    else if (key == "beta_start") beta_start = std::stod(value);
    else if (key == "beta_end") beta_end = std::stod(value);
    else if (key == "sampler") sampler = value;
    else if (key == "sampler_steps") sampler_steps = std::stoi(value);
    else if (key == "lambda_tv") lambda_tv = std::stod(value);
    else if (key == "learning_rate") learning_rate = std::stod(value);
    else if (key == "grad_clip") grad_clip = std::stod(value);
    else if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "train_steps") train_steps = std::stoi(value);
    else if (key == "checkpoint_every") checkpoint_every = std::stoi(value);
    else if (key == "log_every") log_every = std::stoi(value);
    else if (key == "eval_every") eval_every = std::stoi(value);
    else if (key == "freeze_backbone") freeze_backbone = parse_bool(value);
    else if (key == "random_reference") random_reference = parse_bool(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "threads") threads = std::stoi(value);
    else if (key == "dataset_path") dataset_path = value;
    else if (key == "output_path") output_path = value;
    else LW_CHECK(false, "unknown config key: " + key);
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    LW_CHECK(in.good(), "cannot open config file: " + path);
    // The scale key selects the preset baseline; read it first.
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        LW_CHECK(eq != std::string::npos, "config line missing '=': " + t);
        entries.push_back({trim(t.substr(0, eq)), trim(t.substr(eq + 1))});
    }
    std::string scale = "desk";
    for (const auto& [k, v] : entries)
        if (k == "scale") scale = v;
    RunConfig c = preset(scale);
    for (const auto& [k, v] : entries) c.apply_override(k, v);
    c.validate();
    return c;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    LW_CHECK(out.good(), "cannot write config file: " + path);
    out << serialize();
}

uint64_t RunConfig::hash() const {
    // FNV-1a over the canonical serialization, paths excluded (a run moved to
    // a different directory still matches its checkpoints).
    std::string s = serialize();
    std::string filtered;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("dataset_path", 0) == 0 || line.rfind("output_path", 0) == 0) continue;
        filtered += line;
        filtered += '\n';
    }
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : filtered) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace loomweave
