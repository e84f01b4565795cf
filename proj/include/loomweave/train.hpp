#pragma once

#include <functional>

#include "loomweave/checkpoint.hpp"
#include "loomweave/diffusion.hpp"
#include "loomweave/metrics.hpp"
#include "loomweave/scenes.hpp"

namespace loomweave {

struct EvalRow {
    int scene = 0;
    int view = 0;
    PsnrResult psnr;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    int identical_count = 0;
    double mean_psnr = 0.0;  // over finite rows
    double mean_ssim = 0.0;
    uint64_t config_hash = 0;
    int64_t checkpoint_step = 0;

    void finalize();
    std::string to_table() const;
    std::string to_keyvalue() const;
};

struct TrainResult {
    int64_t final_step = 0;
    double final_loss = 0.0;
    std::string metrics_log;      // full text of what was appended
    std::string checkpoint_path;  // final checkpoint
};

/// Runs the training loop: per step it samples a scene, a timestep and fresh
/// noise per view, takes one Adam step on total_loss, and appends
/// `step=<n> loss=<f> tv=<f> psnr=<f>` records to <output>/metrics.log.
/// Fully deterministic given (config, seed); resumable from a checkpoint.
TrainResult train(const RunConfig& cfg, Backbone& model, const Dataset& dataset,
                  const std::string& resume_checkpoint = "");

/// Condition on view 0 of each scene, sample the remaining views, score them.
EvalReport evaluate(const Backbone& model, const Dataset& dataset);

/// Same scoring against an arbitrary generator (oracle/passthrough tests).
EvalReport evaluate_views(const Dataset& dataset,
                          const std::function<std::vector<Tensor>(int scene)>& generate);

/// Mean PSNR of views 1..N-1 of one scene under the model sampler.
double quick_scene_psnr(const Backbone& model, const SceneData& scene, uint64_t seed);

}  // namespace loomweave
