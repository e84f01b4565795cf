#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "loomweave/image_io.hpp"
#include "loomweave/train.hpp"

namespace fs = std::filesystem;
using namespace loomweave;

namespace {

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides, const std::string& dataset,
                         const std::string& out, int64_t seed_flag) {
    RunConfig cfg = config_path.empty() ? RunConfig::preset("desk") : RunConfig::load(config_path);
    for (const auto& kv : overrides) {
        size_t eq = kv.find('=');
        LW_CHECK(eq != std::string::npos, "override must be key=value: " + kv);
        cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!dataset.empty()) cfg.dataset_path = dataset;
    if (!out.empty()) cfg.output_path = out;
    if (seed_flag >= 0) cfg.seed = static_cast<uint64_t>(seed_flag);
    cfg.validate();
    return cfg;
}

void dump_plane_blob(const std::string& path, int orientation, const Tensor& grid) {
    std::ofstream out(path, std::ios::binary);
    LW_CHECK(out.good(), "cannot write " + path);
    int32_t header[4] = {static_cast<int32_t>(orientation), static_cast<int32_t>(grid.dim(0)),
                         static_cast<int32_t>(grid.dim(1)), static_cast<int32_t>(grid.dim(2))};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<float> data(static_cast<size_t>(grid.numel()));
    for (int64_t i = 0; i < grid.numel(); ++i) data[static_cast<size_t>(i)] =
        static_cast<float>(grid[i]);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(sizeof(float) * data.size()));
}

void dump_plane_pngs(const std::string& stem, const Tensor& grid) {
    int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
    for (int ch = 0; ch < std::min(3, c); ++ch) {
        Tensor slice({h, w});
        for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
            slice[p] = grid[p * c + ch];
        write_png_gray_normalized(stem + "_c" + std::to_string(ch) + ".png", slice);
    }
}

int run_ablate(const std::string& dataset_dir, const std::string& out_dir, int steps,
               int64_t seed_flag) {
    struct Variant {
        const char* name;
        void (*tweak)(RunConfig&);
    };
    const Variant variants[] = {
        {"reference", [](RunConfig&) {}},
        {"lr_all_layers", [](RunConfig& c) { c.latent_render_placement = "all"; }},
        {"mean_fusion", [](RunConfig& c) { c.fusion_mode = "mean"; }},
        {"half_m", [](RunConfig& c) { c.samples_per_ray /= 2; }},
        {"no_pe", [](RunConfig& c) { c.positional_encoding = false; }},
    };
    Dataset ds = Dataset::load(dataset_dir);
    for (const auto& v : variants) {
        RunConfig cfg = RunConfig::preset("desk");
        cfg.dataset_path = dataset_dir;
        cfg.output_path = out_dir + "/" + v.name;
        cfg.train_steps = steps;
        cfg.views = ds.manifest.views;
        cfg.image_size = ds.manifest.resolution;
        if (seed_flag >= 0) cfg.seed = static_cast<uint64_t>(seed_flag);
        v.tweak(cfg);
        cfg.validate();
        Backbone model(cfg, RandomStream::mix(cfg.seed, 0x1417));
        train(cfg, model, ds);
        EvalReport report = evaluate(model, ds);
        std::printf("variant=%s mean_psnr=%.4f mean_ssim=%.6f\n", v.name, report.mean_psnr,
                    report.mean_ssim);
        std::ofstream rf(cfg.output_path + "/eval.kv");
        rf << report.to_keyvalue();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loomweave: shared-latent-space multi-view diffusion at desk scale"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
    int g_scenes = 10, g_views = 4, g_res = 32;
    std::string g_out, g_elev = "fixed", g_azimuth = "even";
    double g_fixed_elev = 30.0, g_radius = 2.0, g_fov = 49.1;
    int64_t g_seed = 1234;
    gen->add_option("--scenes", g_scenes, "number of scenes");
    gen->add_option("--views", g_views, "views per scene");
    gen->add_option("--resolution", g_res, "image resolution");
    gen->add_option("--out", g_out, "output directory")->required();
    gen->add_option("--elevation", g_elev, "fixed | variable");
    gen->add_option("--fixed-elevation-deg", g_fixed_elev, "elevation for fixed mode");
    gen->add_option("--azimuth", g_azimuth, "even | random");
    gen->add_option("--radius", g_radius, "camera ring radius");
    gen->add_option("--fov", g_fov, "vertical fov degrees");
    gen->add_option("--seed", g_seed, "dataset seed");

    // shared train/eval/sample options
    std::string t_config, t_dataset, t_out, t_resume, t_checkpoint;
    std::vector<std::string> t_set;
    int64_t t_seed = -1;

    auto* tr = app.add_subcommand("train", "train the model");
    tr->add_option("--config", t_config, "config file");
    tr->add_option("--dataset", t_dataset, "dataset directory");
    tr->add_option("--out", t_out, "output directory");
    tr->add_option("--resume", t_resume, "checkpoint to resume from");
    tr->add_option("--set", t_set, "config override key=value (repeatable)");
    tr->add_option("--seed", t_seed, "seed override");

    std::string e_config, e_dataset, e_out, e_checkpoint;
    std::vector<std::string> e_set;
    int64_t e_seed = -1;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", e_checkpoint, "checkpoint file")->required();
    ev->add_option("--config", e_config, "config file");
    ev->add_option("--dataset", e_dataset, "dataset directory");
    ev->add_option("--out", e_out, "report output directory");
    ev->add_option("--set", e_set, "config override key=value");
    ev->add_option("--seed", e_seed, "seed override");

    std::string s_config, s_dataset, s_out, s_checkpoint;
    std::vector<std::string> s_set;
    int s_scene = 0;
    int64_t s_seed = -1;
    auto* sa = app.add_subcommand("sample", "sample novel views conditioned on view 0");
    sa->add_option("--checkpoint", s_checkpoint, "checkpoint file")->required();
    sa->add_option("--config", s_config, "config file");
    sa->add_option("--dataset", s_dataset, "dataset directory");
    sa->add_option("--scene", s_scene, "scene index");
    sa->add_option("--out", s_out, "output directory")->required();
    sa->add_option("--set", s_set, "config override key=value");
    sa->add_option("--seed", s_seed, "seed override");

    std::string d_config, d_dataset, d_out, d_checkpoint;
    std::vector<std::string> d_set;
    int d_scene = 0, d_timestep = 50;
    bool d_splat = false;
    int64_t d_seed = -1;
    auto* du = app.add_subcommand("dump-triplane",
                                  "run one denoise pass and export the shared triplane");
    du->add_option("--config", d_config, "config file");
    du->add_option("--checkpoint", d_checkpoint, "checkpoint (optional: fresh init if absent)");
    du->add_option("--dataset", d_dataset, "dataset directory")->required();
    du->add_option("--scene", d_scene, "scene index");
    du->add_option("--timestep", d_timestep, "diffusion timestep for the pass");
    du->add_option("--out", d_out, "output directory")->required();
    du->add_flag("--splat", d_splat, "also dump view-0 splat planes of the final site");
    du->add_option("--set", d_set, "config override key=value");
    du->add_option("--seed", d_seed, "seed override");

    std::string a_dataset, a_out;
    int a_steps = 300;
    int64_t a_seed = -1;
    auto* ab = app.add_subcommand("ablate", "run the desk-scale ablation grid");
    ab->add_option("--dataset", a_dataset, "dataset directory")->required();
    ab->add_option("--out", a_out, "output directory")->required();
    ab->add_option("--steps", a_steps, "training steps per variant");
    ab->add_option("--seed", a_seed, "seed override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            DatasetManifest m;
            m.scenes = g_scenes;
            m.views = g_views;
            m.resolution = g_res;
            m.elevation_mode = g_elev;
            m.fixed_elevation_deg = g_fixed_elev;
            m.azimuth_mode = g_azimuth;
            m.camera_radius = g_radius;
            m.fov_degrees = g_fov;
            m.seed = static_cast<uint64_t>(g_seed);
            build_dataset(m, g_out);
            std::printf("wrote %d scenes x %d views to %s\n", m.scenes, m.views, g_out.c_str());
        } else if (tr->parsed()) {
            RunConfig cfg = resolve_config(t_config, t_set, t_dataset, t_out, t_seed);
            LW_CHECK(!cfg.dataset_path.empty(), "train needs --dataset or dataset_path");
            Dataset ds = Dataset::load(cfg.dataset_path);
            Backbone model(cfg, RandomStream::mix(cfg.seed, 0x1417));
            TrainResult result = train(cfg, model, ds, t_resume);
            cfg.save(cfg.output_path + "/config.txt");
            std::printf("trained to step %lld, final loss %.6f, checkpoint %s\n",
                        static_cast<long long>(result.final_step), result.final_loss,
                        result.checkpoint_path.c_str());
        } else if (ev->parsed()) {
            RunConfig cfg = resolve_config(e_config, e_set, e_dataset, e_out, e_seed);
            Dataset ds = Dataset::load(cfg.dataset_path);
            Backbone model(cfg, RandomStream::mix(cfg.seed, 0x1417));
            CheckpointInfo info = load_checkpoint(e_checkpoint, cfg.hash(), model.params());
            EvalReport report = evaluate(model, ds);
            report.checkpoint_step = info.step;
            std::printf("%s", report.to_table().c_str());
            if (!cfg.output_path.empty()) {
                fs::create_directories(cfg.output_path);
                std::ofstream tf(cfg.output_path + "/eval_report.txt");
                tf << report.to_table();
                std::ofstream kf(cfg.output_path + "/eval_report.kv");
                kf << report.to_keyvalue();
            }
        } else if (sa->parsed()) {
            RunConfig cfg = resolve_config(s_config, s_set, s_dataset, "", s_seed);
            Dataset ds = Dataset::load(cfg.dataset_path);
            LW_CHECK(s_scene >= 0 && s_scene < static_cast<int>(ds.scenes.size()),
                     "scene index out of range");
            Backbone model(cfg, RandomStream::mix(cfg.seed, 0x1417));
            load_checkpoint(s_checkpoint, cfg.hash(), model.params());
            const SceneData& scene = ds.scenes[static_cast<size_t>(s_scene)];
            auto images = model.sample_multiview(scene.images[0], scene.poses, scene.poses[0],
                                                 RandomStream::mix(cfg.seed, 0x5a3b1e));
            fs::create_directories(s_out);
            for (size_t k = 0; k < images.size(); ++k)
                write_png(s_out + "/sample_" + std::to_string(k) + ".png", to_image8(images[k]));
            std::printf("wrote %zu sampled views to %s\n", images.size(), s_out.c_str());
        } else if (du->parsed()) {
            RunConfig cfg = resolve_config(d_config, d_set, d_dataset, "", d_seed);
            Dataset ds = Dataset::load(cfg.dataset_path);
            LW_CHECK(d_scene >= 0 && d_scene < static_cast<int>(ds.scenes.size()),
                     "scene index out of range");
            Backbone model(cfg, RandomStream::mix(cfg.seed, 0x1417));
            if (!d_checkpoint.empty()) load_checkpoint(d_checkpoint, cfg.hash(), model.params());
            const SceneData& scene = ds.scenes[static_cast<size_t>(d_scene)];
            RandomStream rng(RandomStream::mix(cfg.seed, 0xd0d0));
            DenoiserState state;
            state.timestep = d_timestep;
            state.reference_latent = scene.images[0];
            state.poses = scene.poses;
            state.reference_pose = scene.poses[0];
            for (const auto& img : scene.images)
                state.latents.push_back(
                    q_sample(model.schedule(), img, d_timestep, randn(img.shape(), rng)));
            PredictAux aux;
            {
                NoGradGuard no_grad;
                model.predict_noise(state, &aux);
            }
            fs::create_directories(d_out);
            const char* names[3] = {"xy", "yz", "xz"};
            for (int o = 0; o < 3; ++o) {
                std::string stem = d_out + "/triplane_" + names[o];
                dump_plane_blob(stem + ".bin", o, aux.final_triplane[o]);
                dump_plane_pngs(stem, aux.final_triplane[o]);
            }
            if (d_splat && !aux.splat_planes.empty()) {
                for (int o = 0; o < 3; ++o) {
                    std::string stem = d_out + "/splat_view0_" + names[o];
                    dump_plane_blob(stem + ".bin", o, aux.splat_planes[0][o]);
                    dump_plane_pngs(stem, aux.splat_planes[0][o]);
                }
            }
            std::printf("dumped triplane for scene %d at timestep %d to %s\n", d_scene,
                        d_timestep, d_out.c_str());
        } else if (ab->parsed()) {
            return run_ablate(a_dataset, a_out, a_steps, a_seed);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
