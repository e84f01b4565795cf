#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loomweave/common.hpp"

namespace loomweave {

/// Full run configuration. Plain key-value text on disk; unknown keys are
/// rejected and every field is validated on load.
struct RunConfig {
    std::string scale = "desk";  // desk | paper (preset the run started from)

    // data / geometry
    int image_size = 32;
    int latent_channels = 3;
    int views = 4;          // N
    int samples_per_ray = 8;  // M, both splatting and latent rendering
    double cube_side = 1.5;
    double fov_degrees = 49.1;
    double camera_radius = 2.0;

    // triplane / communication
    int triplane_resolution = 16;
    int triplane_channels = 128;
    int splat_resolution = 16;
    std::string fusion_mode = "attention";  // attention | mean
    bool positional_encoding = true;
    std::string latent_render_placement = "final";  // final | all
    std::vector<int> site_iterations = {3, 4, 6};
    int num_heads = 2;
    int head_dim = 16;
    int mlp_widening = 2;
    int harmonic_frequencies = 4;

    // backbone
    int base_width = 32;
    int unet_levels = 2;

    // diffusion
    int schedule_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::string sampler = "ddim";  // ddim | ancestral
    int sampler_steps = 20;

    // training
    double lambda_tv = 0.001;
    double learning_rate = 3e-4;
    double grad_clip = 1.0;
    int batch_size = 2;
    int train_steps = 2000;
    int checkpoint_every = 500;
    int log_every = 10;
    int eval_every = 0;  // 0: no mid-training sampling, psnr logged as nan
    bool freeze_backbone = false;
    bool random_reference = false;
    uint64_t seed = 1234;
    int threads = 0;  // 0: auto

    std::string dataset_path;
    std::string output_path;

    void validate() const;
    static RunConfig preset(const std::string& scale);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
    std::string serialize() const;  // canonical order, round-trip stable
    uint64_t hash() const;          // over serialize(); stored in checkpoints
    void apply_override(const std::string& key, const std::string& value);

    int temb_dim() const { return 4 * base_width; }
    int num_sites() const { return static_cast<int>(site_iterations.size()); }
};

}  // namespace loomweave
