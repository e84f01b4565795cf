#pragma once

#include <optional>
#include <unordered_map>

#include "loomweave/config.hpp"
#include "loomweave/latent_rendering.hpp"
#include "loomweave/weaving.hpp"

namespace loomweave {

/// Linear-beta forward process; timesteps are 1-based, alpha_bar(0) = 1.
struct NoiseSchedule {
    int num_steps = 0;
    std::vector<double> betas;       // size T
    std::vector<double> alpha_bars;  // size T, strictly decreasing

    static NoiseSchedule linear(int steps, double beta_start, double beta_end);
    void validate() const;
    double alpha_bar(int t) const {  // t in [0, T]
        LW_CHECK(t >= 0 && t <= num_steps, "alpha_bar timestep out of range");
        return t == 0 ? 1.0 : alpha_bars[static_cast<size_t>(t - 1)];
    }
};

/// sqrt(abar_t) * clean + sqrt(1 - abar_t) * noise, caller-supplied noise.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& clean_latent, int timestep,
                const Tensor& noise);

/// Per-step denoiser inputs. Poses are absolute world (cube-frame) cameras;
/// the relative [R,T]^i conditioning is derived against reference_pose.
struct DenoiserState {
    std::vector<Tensor> latents;  // N x (H, W, C)
    int timestep = 1;
    Tensor reference_latent;      // (H, W, C)
    std::vector<CameraPose> poses;
    CameraPose reference_pose;

    void validate() const;
};

struct ConvLayer {
    Var w;  // (k*k*cin, cout)
    Var b;  // (cout)
    int ksize = 3, stride = 1, pad = 1;

    static ConvLayer create(ParamStore& store, const std::string& name, int ksize, int cin,
                            int cout, int stride, int pad, RandomStream& rng,
                            double std_dev = 0.0);
    Var operator()(const Var& x) const { return conv2d(x, w, b, ksize, stride, pad); }
};

/// Pre-norm residual conv block with additive timestep conditioning.
struct ResBlockParams {
    Var ln1_g, ln1_b;
    ConvLayer conv1;
    Linear temb_proj;
    Var ln2_g, ln2_b;
    ConvLayer conv2;
    ConvLayer skip;  // 1x1 when cin != cout; null otherwise
    int cin = 0, cout = 0;

    static ResBlockParams create(ParamStore& store, const std::string& name, int cin, int cout,
                                 int temb_dim, RandomStream& rng);
    Var forward(const Var& x, const Var& temb) const;
};

/// One communication site: splat -> fuse -> weave (+ latent rendering where
/// placed). c_pix is the UNet channel width feeding the site.
struct CommSite {
    WeaveSite weave;
    std::optional<RenderParams> render;
    int iterations = 1;
    int c_pix = 0;
};

struct PredictAux {
    std::array<Tensor, 3> final_triplane;                  // woven planes, final site
    std::vector<std::array<Tensor, 3>> splat_planes;       // final site, per view
    std::array<Tensor, 3> splat_weights;                   // final site, view 0
};

/// The N-parallel denoiser: one shared UNet, communication sites at the
/// bottleneck and decoder levels, conditioning on the reference latent and
/// relative pose.
class Backbone {
public:
    Backbone(const RunConfig& cfg, uint64_t init_seed);

    std::vector<Var> predict_noise(const DenoiserState& state, PredictAux* aux = nullptr) const;

    /// Mean over views of || noise_i - predicted_i ||^2 (per-element mean).
    Var diffusion_loss(const std::vector<Tensor>& clean_latents, const Tensor& reference,
                       const std::vector<CameraPose>& poses, const CameraPose& reference_pose,
                       int timestep, const std::vector<Tensor>& noise) const;

    /// Sum of tv_plane over each site's three learnable fusion planes.
    Var tv_loss_var() const;

    /// diffusion_loss + lambda_tv * tv_loss.
    Var total_loss(const std::vector<Tensor>& clean_latents, const Tensor& reference,
                   const std::vector<CameraPose>& poses, const CameraPose& reference_pose,
                   int timestep, const std::vector<Tensor>& noise, double lambda_tv) const;

    /// Reverse process from seeded pure noise; deterministic given seed and
    /// config. Returns N images in [0,1] (identity codec with final clamp).
    std::vector<Tensor> sample_multiview(const Tensor& reference_image,
                                         const std::vector<CameraPose>& poses,
                                         const CameraPose& reference_pose,
                                         uint64_t rng_seed, PredictAux* aux = nullptr) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const RunConfig& config() const { return cfg_; }
    const Intrinsics& latent_intrinsics() const { return intr_; }
    /// Parameter names owned by communication sites (everything else is the
    /// shared UNet trunk; used by --freeze-backbone and the weight audit).
    bool is_site_param(const std::string& name) const;

private:
    struct Level {
        ResBlockParams enc;
        ConvLayer down;
        ResBlockParams dec_a;
        ResBlockParams dec_b;
        ConvLayer up;
        int width = 0;
    };

    Var pose_embedding(const CameraPose& pose, const CameraPose& reference) const;
    std::shared_ptr<const SplatGeometry> splat_geometry(const CameraPose& pose,
                                                        int rows, int cols) const;

    RunConfig cfg_;
    ParamStore params_;
    NoiseSchedule schedule_;
    Intrinsics intr_;

    ConvLayer conv_in_;
    std::vector<Level> levels_;
    ResBlockParams mid_a_, mid_b_;
    Var ln_out_g_, ln_out_b_;
    ConvLayer conv_out_;
    TimestepEmbedder unet_temb_;
    Linear pose_l1_, pose_l2_;
    std::vector<CommSite> sites_;
    HarmonicConfig pose_harmonic_;

    mutable std::unordered_map<uint64_t, std::shared_ptr<const SplatGeometry>> geom_cache_;
};

/// Value-level tv loss over one triple of planes (test surface).
double tv_loss(const std::array<Tensor, 3>& planes);

}  // namespace loomweave
