#include "loomweave/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace loomweave {

void EvalReport::finalize() {
    identical_count = 0;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    int finite = 0;
    for (const auto& r : rows) {
        ssim_sum += r.ssim;
        if (r.psnr.identical) {
            ++identical_count;
        } else {
            psnr_sum += r.psnr.db;
            ++finite;
        }
    }
    mean_psnr = finite > 0 ? psnr_sum / finite : 0.0;
    mean_ssim = rows.empty() ? 0.0 : ssim_sum / static_cast<double>(rows.size());
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    char buf[128];
    os << "scene  view  psnr_db    ssim\n";
    for (const auto& r : rows) {
        if (r.psnr.identical)
            std::snprintf(buf, sizeof(buf), "%5d  %4d  identical  %.6f\n", r.scene, r.view,
                          r.ssim);
        else
            std::snprintf(buf, sizeof(buf), "%5d  %4d  %9.4f  %.6f\n", r.scene, r.view,
                          r.psnr.db, r.ssim);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean over %zu rows: psnr %.4f dB, ssim %.6f",
                  rows.size(), mean_psnr, mean_ssim);
    os << buf;
    if (identical_count > 0) os << " (" << identical_count << " identical rows)";
    os << "\n";
    return os.str();
}

std::string EvalReport::to_keyvalue() const {
    std::ostringstream os;
    char buf[160];
    for (const auto& r : rows) {
        if (r.psnr.identical)
            std::snprintf(buf, sizeof(buf), "scene=%d view=%d psnr=identical ssim=%.10g\n",
                          r.scene, r.view, r.ssim);
        else
            std::snprintf(buf, sizeof(buf), "scene=%d view=%d psnr=%.10g ssim=%.10g\n",
                          r.scene, r.view, r.psnr.db, r.ssim);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "rows=%zu identical=%d mean_psnr=%.10g mean_ssim=%.10g step=%lld\n",
                  rows.size(), identical_count, mean_psnr, mean_ssim,
                  static_cast<long long>(checkpoint_step));
    os << buf;
    return os.str();
}

namespace {
void check_dataset(const RunConfig& cfg, const Dataset& ds) {
    LW_CHECK(!ds.scenes.empty(), "dataset has no scenes: " + cfg.dataset_path);
    LW_CHECK(ds.manifest.views == cfg.views,
             "dataset views do not match config (expected " + std::to_string(cfg.views) + ")");
    LW_CHECK(ds.manifest.resolution == cfg.image_size,
             "dataset resolution does not match config image_size");
}
}  // namespace

double quick_scene_psnr(const Backbone& model, const SceneData& scene, uint64_t seed) {
    auto generated = model.sample_multiview(scene.images[0], scene.poses, scene.poses[0], seed);
    double sum = 0.0;
    int count = 0;
    for (size_t k = 1; k < scene.images.size(); ++k) {
        PsnrResult r = psnr(generated[k], scene.images[k]);
        sum += r.identical ? 100.0 : r.db;
        ++count;
    }
    return count > 0 ? sum / count : 0.0;
}

TrainResult train(const RunConfig& cfg, Backbone& model, const Dataset& dataset,
                  const std::string& resume_checkpoint) {
    cfg.validate();
    Threading::configure(cfg.threads);
    check_dataset(cfg, dataset);
    LW_CHECK(!cfg.output_path.empty(), "output_path must be set for training");
    std::error_code ec;
    fs::create_directories(cfg.output_path, ec);
    LW_CHECK(!ec, "cannot create output directory: " + cfg.output_path);

    Adam opt(model.params(), cfg.learning_rate, cfg.grad_clip);
    if (cfg.freeze_backbone)
        for (size_t i = 0; i < model.params().params.size(); ++i)
            opt.trainable[i] = model.is_site_param(model.params().params[i]->name);

    int64_t start_step = 0;
    if (!resume_checkpoint.empty()) {
        CheckpointInfo info = load_checkpoint(resume_checkpoint, cfg.hash(), model.params(), &opt);
        start_step = info.step;
    }

    std::string log_path = cfg.output_path + "/metrics.log";
    std::ofstream log(log_path, std::ios::app);
    LW_CHECK(log.good(), "cannot open metrics log: " + log_path);

    int num_scenes = static_cast<int>(dataset.scenes.size());
    TrainResult result;
    char line[256];
    for (int64_t step = start_step; step < cfg.train_steps; ++step) {
        RandomStream rs(RandomStream::mix(cfg.seed, 0x57e9000ULL + static_cast<uint64_t>(step)));
        Var loss;
        for (int item = 0; item < cfg.batch_size; ++item) {
            int scene_idx = rs.next_int(num_scenes);
            const SceneData& scene = dataset.scenes[static_cast<size_t>(scene_idx)];
            int timestep = 1 + rs.next_int(cfg.schedule_steps);
            int ref = cfg.random_reference ? rs.next_int(cfg.views) : 0;
            std::vector<Tensor> noise;
            noise.reserve(scene.images.size());
            for (size_t i = 0; i < scene.images.size(); ++i)
                noise.push_back(randn(scene.images[i].shape(), rs));
            Var item_loss = model.diffusion_loss(scene.images, scene.images[static_cast<size_t>(ref)],
                                                 scene.poses, scene.poses[static_cast<size_t>(ref)],
                                                 timestep, noise);
            loss = loss ? add(loss, item_loss) : item_loss;
        }
        loss = scale(loss, 1.0 / cfg.batch_size);
        Var tv = model.tv_loss_var();
        double tv_value = tv->value[0];
        if (cfg.lambda_tv > 0.0) loss = add(loss, scale(tv, cfg.lambda_tv));
        double loss_value = loss->value[0];
        backward(loss);
        opt.step(model.params());
        result.final_loss = loss_value;

        int64_t done = step + 1;
        bool do_eval = cfg.eval_every > 0 && done % cfg.eval_every == 0;
        if (done % cfg.log_every == 0 || done == cfg.train_steps || do_eval) {
            double psnr_value = std::nan("");
            if (do_eval)
                psnr_value = quick_scene_psnr(model, dataset.scenes[0],
                                              RandomStream::mix(cfg.seed, 0xeba1000ULL));
            std::snprintf(line, sizeof(line), "step=%lld loss=%.10g tv=%.10g psnr=%.10g\n",
                          static_cast<long long>(done), loss_value, tv_value, psnr_value);
            log << line;
            log.flush();
            result.metrics_log += line;
        }
        if (done % cfg.checkpoint_every == 0 && done != cfg.train_steps) {
            save_checkpoint(cfg.output_path + "/checkpoint_" + std::to_string(done) + ".ckpt",
                            cfg.hash(), done, model.params(), &opt);
        }
        result.final_step = done;
    }
    result.checkpoint_path = cfg.output_path + "/checkpoint_final.ckpt";
    save_checkpoint(result.checkpoint_path, cfg.hash(), result.final_step, model.params(), &opt);
    return result;
}

EvalReport evaluate_views(const Dataset& dataset,
                          const std::function<std::vector<Tensor>(int scene)>& generate) {
    EvalReport report;
    for (int s = 0; s < static_cast<int>(dataset.scenes.size()); ++s) {
        const SceneData& scene = dataset.scenes[static_cast<size_t>(s)];
        std::vector<Tensor> generated = generate(s);
        LW_CHECK(generated.size() == scene.images.size(),
                 "generator returned wrong view count");
        for (size_t k = 1; k < scene.images.size(); ++k) {
            EvalRow row;
            row.scene = s;
            row.view = static_cast<int>(k);
            row.psnr = psnr(generated[k], scene.images[k]);
            row.ssim = ssim(generated[k], scene.images[k]);
            report.rows.push_back(row);
        }
    }
    report.finalize();
    return report;
}

EvalReport evaluate(const Backbone& model, const Dataset& dataset) {
    const RunConfig& cfg = model.config();
    check_dataset(cfg, dataset);
    EvalReport report = evaluate_views(dataset, [&](int s) {
        const SceneData& scene = dataset.scenes[static_cast<size_t>(s)];
        return model.sample_multiview(scene.images[0], scene.poses, scene.poses[0],
                                      RandomStream::mix(cfg.seed, 0xeba1000ULL +
                                                                     static_cast<uint64_t>(s)));
    });
    report.config_hash = cfg.hash();
    return report;
}

}  // namespace loomweave
