#include "loomweave/diffusion.hpp"

#include <cstring>

namespace loomweave {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    LW_CHECK(steps >= 1, "schedule needs at least one step");
    NoiseSchedule s;
    s.num_steps = steps;
    s.betas.resize(static_cast<size_t>(steps));
    s.alpha_bars.resize(static_cast<size_t>(steps));
    double abar = 1.0;
    for (int t = 0; t < steps; ++t) {
        double beta = steps == 1 ? beta_start
                                 : beta_start + (beta_end - beta_start) * t / (steps - 1);
        s.betas[static_cast<size_t>(t)] = beta;
        abar *= (1.0 - beta);
        s.alpha_bars[static_cast<size_t>(t)] = abar;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    LW_CHECK(num_steps >= 1 && static_cast<int>(betas.size()) == num_steps &&
                 static_cast<int>(alpha_bars.size()) == num_steps,
             "schedule arrays inconsistent");
    double prev = 1.0;
    for (int t = 0; t < num_steps; ++t) {
        double b = betas[static_cast<size_t>(t)];
        LW_CHECK(b > 0.0 && b < 1.0, "betas must be strictly in (0,1)");
        double a = alpha_bars[static_cast<size_t>(t)];
        LW_CHECK(a < prev, "cumulative alpha products must strictly decrease");
        prev = a;
    }
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& clean_latent, int timestep,
                const Tensor& noise) {
    LW_CHECK(timestep >= 1 && timestep <= schedule.num_steps,
             "q_sample timestep out of range");
    LW_CHECK(clean_latent.same_shape(noise), "noise must match latent shape");
    double abar = schedule.alpha_bar(timestep);
    double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Tensor out = clean_latent;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * out[i] + b * noise[i];
    return out;
}

void DenoiserState::validate() const {
    LW_CHECK(!latents.empty(), "denoiser state needs at least one view");
    LW_CHECK(latents.size() == poses.size(), "latent/pose count mismatch");
    for (const auto& l : latents)
        LW_CHECK(l.same_shape(reference_latent), "latents must share the reference shape");
    for (const auto& p : poses) p.validate();
    reference_pose.validate();
}

ConvLayer ConvLayer::create(ParamStore& store, const std::string& name, int ksize, int cin,
                            int cout, int stride, int pad, RandomStream& rng, double std_dev) {
    ConvLayer c;
    c.ksize = ksize;
    c.stride = stride;
    c.pad = pad;
    double sd = std_dev > 0.0 ? std_dev : 1.0 / std::sqrt(static_cast<double>(ksize * ksize * cin));
    c.w = store.add(randn({ksize * ksize * cin, cout}, rng, sd), name + ".w");
    c.b = store.add(Tensor::zeros({cout}), name + ".b");
    return c;
}

namespace {
Var ln_affine(const Var& x, const Var& g, const Var& b) {
    return add_rowbcast(mul_rowbcast(layer_norm_last(x), g), b);
}
}  // namespace

ResBlockParams ResBlockParams::create(ParamStore& store, const std::string& name, int cin,
                                      int cout, int temb_dim, RandomStream& rng) {
    ResBlockParams r;
    r.cin = cin;
    r.cout = cout;
    r.ln1_g = store.add(Tensor::full({cin}, 1.0), name + ".ln1.g");
    r.ln1_b = store.add(Tensor::zeros({cin}), name + ".ln1.b");
    r.conv1 = ConvLayer::create(store, name + ".conv1", 3, cin, cout, 1, 1, rng);
    r.temb_proj = Linear::create(store, name + ".temb", temb_dim, cout, rng);
    r.ln2_g = store.add(Tensor::full({cout}, 1.0), name + ".ln2.g");
    r.ln2_b = store.add(Tensor::zeros({cout}), name + ".ln2.b");
    r.conv2 = ConvLayer::create(store, name + ".conv2", 3, cout, cout, 1, 1, rng);
    if (cin != cout) r.skip = ConvLayer::create(store, name + ".skip", 1, cin, cout, 1, 0, rng);
    return r;
}

Var ResBlockParams::forward(const Var& x, const Var& temb) const {
    Var h = conv1(silu(ln_affine(x, ln1_g, ln1_b)));
    Var shift = reshape(temb_proj(silu(temb)), {cout});
    h = add_rowbcast(h, shift);
    h = conv2(silu(ln_affine(h, ln2_g, ln2_b)));
    Var residual = skip.w ? skip(x) : x;
    return add(h, residual);
}

Backbone::Backbone(const RunConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    RandomStream rng(init_seed);
    schedule_ = NoiseSchedule::linear(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    intr_ = Intrinsics::from_fov(cfg.image_size, cfg.image_size,
                                 cfg.fov_degrees * kPi / 180.0);
    pose_harmonic_ = HarmonicConfig{cfg.harmonic_frequencies, true};

    int temb_dim = cfg_.temb_dim();
    int levels = cfg.unet_levels;
    auto width_at = [&](int i) { return cfg.base_width << i; };

    unet_temb_ = TimestepEmbedder::create(params_, "unet.temb", cfg.schedule_steps, temb_dim, rng);
    int pose_in = pose_harmonic_.output_dim(3);
    pose_l1_ = Linear::create(params_, "unet.pose_l1", pose_in, temb_dim, rng);
    pose_l2_ = Linear::create(params_, "unet.pose_l2", temb_dim, temb_dim, rng);

    conv_in_ = ConvLayer::create(params_, "unet.conv_in", 3, cfg.latent_channels * 2,
                                 width_at(0), 1, 1, rng);
    for (int i = 0; i < levels; ++i) {
        Level lev;
        lev.width = width_at(i);
        std::string base = "unet.l" + std::to_string(i);
        lev.enc = ResBlockParams::create(params_, base + ".enc", lev.width, lev.width,
                                         temb_dim, rng);
        lev.down = ConvLayer::create(params_, base + ".down", 3, lev.width, width_at(i + 1),
                                     2, 1, rng);
        lev.up = ConvLayer::create(params_, base + ".up", 3, width_at(i + 1), lev.width, 1, 1,
                                   rng);
        lev.dec_a = ResBlockParams::create(params_, base + ".dec_a", 2 * lev.width, lev.width,
                                           temb_dim, rng);
        lev.dec_b = ResBlockParams::create(params_, base + ".dec_b", lev.width, lev.width,
                                           temb_dim, rng);
        levels_.push_back(std::move(lev));
    }
    int mid_width = width_at(levels);
    mid_a_ = ResBlockParams::create(params_, "unet.mid_a", mid_width, mid_width, temb_dim, rng);
    mid_b_ = ResBlockParams::create(params_, "unet.mid_b", mid_width, mid_width, temb_dim, rng);
    ln_out_g_ = params_.add(Tensor::full({width_at(0)}, 1.0), "unet.ln_out.g");
    ln_out_b_ = params_.add(Tensor::zeros({width_at(0)}), "unet.ln_out.b");
    // Small nonzero init keeps step-0 loss near 1 while letting the
    // cross-view perturbation probe observe a strict signal.
    conv_out_ = ConvLayer::create(params_, "unet.conv_out", 3, width_at(0),
                                  cfg.latent_channels, 1, 1, rng, 1e-2);

    int embed_dim = cfg.positional_encoding
                        ? HarmonicConfig{cfg.harmonic_frequencies, false}.output_dim(6) +
                              HarmonicConfig{cfg.harmonic_frequencies, false}.output_dim(1)
                        : 0;
    int num_sites = cfg.num_sites();
    for (int s = 0; s < num_sites; ++s) {
        int c_pix = (s == 0) ? mid_width : width_at(levels - s);
        CommSite site;
        site.c_pix = c_pix;
        site.iterations = cfg.site_iterations[static_cast<size_t>(s)];
        std::string name = "site" + std::to_string(s);
        site.weave = WeaveSite::create(params_, name, cfg.triplane_resolution,
                                       cfg.triplane_channels, c_pix + embed_dim, cfg.num_heads,
                                       cfg.head_dim, cfg.mlp_widening, temb_dim,
                                       cfg.schedule_steps, site.iterations,
                                       cfg.positional_encoding, rng);
        bool is_final = (s == num_sites - 1);
        bool renders = (s >= 1) && (is_final || cfg.latent_render_placement == "all");
        if (renders)
            site.render = RenderParams::create(params_, name + ".render", c_pix,
                                               cfg.triplane_channels, rng);
        sites_.push_back(std::move(site));
    }
}

bool Backbone::is_site_param(const std::string& name) const {
    return name.rfind("site", 0) == 0;
}

Var Backbone::pose_embedding(const CameraPose& pose, const CameraPose& reference) const {
    auto [az, el, r] = camera_spherical(pose);
    auto [raz, rel, rr] = camera_spherical(reference);
    double daz = az - raz;
    while (daz > kPi) daz -= 2.0 * kPi;
    while (daz <= -kPi) daz += 2.0 * kPi;
    std::vector<double> rel_pose = harmonic_embed({daz, el - rel, r - rr}, pose_harmonic_);
    Tensor t({1, static_cast<int>(rel_pose.size())});
    std::memcpy(t.data(), rel_pose.data(), sizeof(double) * rel_pose.size());
    return pose_l2_(silu(pose_l1_(constant(std::move(t)))));
}

std::shared_ptr<const SplatGeometry> Backbone::splat_geometry(const CameraPose& pose,
                                                              int rows, int cols) const {
    uint64_t h = 1469598103934665603ULL;
    auto mix_bytes = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    mix_bytes(pose.rotation.m.data(), sizeof(double) * 9);
    double tr[3] = {pose.translation.x, pose.translation.y, pose.translation.z};
    mix_bytes(tr, sizeof(tr));
    int meta[4] = {rows, cols, cfg_.samples_per_ray, cfg_.positional_encoding ? 1 : 0};
    mix_bytes(meta, sizeof(meta));
    auto it = geom_cache_.find(h);
    if (it != geom_cache_.end()) return it->second;

    SplatConfig scfg;
    scfg.side = cfg_.cube_side;
    scfg.samples_per_ray = cfg_.samples_per_ray;
    scfg.plane_resolution = cfg_.splat_resolution;
    scfg.harmonic = HarmonicConfig{cfg_.harmonic_frequencies, false};
    scfg.positional_encoding = cfg_.positional_encoding;
    Intrinsics intr = Intrinsics::from_fov(rows, cols, cfg_.fov_degrees * kPi / 180.0);
    auto geom = std::make_shared<SplatGeometry>(build_splat_geometry(pose, intr, scfg));
    geom_cache_.emplace(h, geom);
    return geom;
}

std::vector<Var> Backbone::predict_noise(const DenoiserState& state, PredictAux* aux) const {
    state.validate();
    LW_CHECK(state.reference_latent.dim(0) == cfg_.image_size &&
                 state.reference_latent.dim(2) == cfg_.latent_channels,
             "latent shape does not match config");
    int n = static_cast<int>(state.latents.size());
    int levels = cfg_.unet_levels;
    Var reference = constant(state.reference_latent);

    std::vector<Var> temb(n);
    for (int i = 0; i < n; ++i)
        temb[i] = add(unet_temb_.embed(state.timestep),
                      pose_embedding(state.poses[i], state.reference_pose));

    // Encoders up to the first bottleneck block.
    std::vector<Var> hidden(n);
    std::vector<std::vector<Var>> skips(n);
    for (int i = 0; i < n; ++i) {
        Var h = conv_in_(concat_last({constant(state.latents[i]), reference}));
        for (int l = 0; l < levels; ++l) {
            h = levels_[l].enc.forward(h, temb[i]);
            skips[i].push_back(h);
            h = levels_[l].down(h);
        }
        hidden[i] = mid_a_.forward(h, temb[i]);
    }

    int num_sites = cfg_.num_sites();
    FusionMode mode = cfg_.fusion_mode == "mean" ? FusionMode::Mean : FusionMode::Attention;
    int pool = cfg_.splat_resolution / cfg_.triplane_resolution;

    auto splat_all_views = [&](bool capture,
                               std::vector<std::shared_ptr<const SplatGeometry>>* geoms_out) {
        std::vector<std::array<Var, 3>> view_planes;
        view_planes.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            auto geom = splat_geometry(state.poses[static_cast<size_t>(i)],
                                       hidden[static_cast<size_t>(i)]->value.dim(0),
                                       hidden[static_cast<size_t>(i)]->value.dim(1));
            if (geoms_out) geoms_out->push_back(geom);
            std::array<Tensor, 3> wg;
            auto planes = splat_view_op(hidden[static_cast<size_t>(i)], geom,
                                        capture ? &wg : nullptr);
            if (pool > 1)
                for (int o = 0; o < 3; ++o) planes[o] = avg_pool2d(planes[o], pool);
            if (capture) {
                aux->splat_planes.push_back(
                    {planes[0]->value, planes[1]->value, planes[2]->value});
                if (i == 0) aux->splat_weights = wg;
            }
            view_planes.push_back(planes);
        }
        return view_planes;
    };

    // Bottleneck site between the two mid blocks.
    std::array<Var, 3> carried{};
    {
        const CommSite& site = sites_[0];
        bool capture = (num_sites == 1) && aux;
        auto view_planes = splat_all_views(capture, nullptr);
        carried = weave_stack(site.weave, view_planes, state.timestep, nullptr,
                              site.iterations, mode);
        if (capture)
            aux->final_triplane = {carried[0]->value, carried[1]->value, carried[2]->value};
    }
    for (int i = 0; i < n; ++i) hidden[i] = mid_b_.forward(hidden[i], temb[i]);

    // Decoder levels; site j sits between dec_a and dec_b of level L-j.
    for (int j = 1; j <= levels; ++j) {
        int l = levels - j;
        for (int i = 0; i < n; ++i) {
            Var h = levels_[l].up(upsample_nearest2x(hidden[i]));
            h = concat_last({h, skips[i][static_cast<size_t>(l)]});
            hidden[i] = levels_[l].dec_a.forward(h, temb[i]);
        }
        if (j <= num_sites - 1) {
            const CommSite& site = sites_[static_cast<size_t>(j)];
            bool is_final_site = (j == num_sites - 1);
            std::vector<std::shared_ptr<const SplatGeometry>> geoms;
            auto view_planes = splat_all_views(is_final_site && aux, &geoms);
            carried = weave_stack(site.weave, view_planes, state.timestep, &carried,
                                  site.iterations, mode);
            if (is_final_site && aux)
                aux->final_triplane = {carried[0]->value, carried[1]->value, carried[2]->value};
            if (site.render) {
                for (int i = 0; i < n; ++i)
                    hidden[i] = render_feature_map_op(*site.render, carried, hidden[i],
                                                      *geoms[static_cast<size_t>(i)],
                                                      cfg_.cube_side, cfg_.samples_per_ray);
            }
        }
        for (int i = 0; i < n; ++i) hidden[i] = levels_[l].dec_b.forward(hidden[i], temb[i]);
    }

    std::vector<Var> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] =
            conv_out_(silu(ln_affine(hidden[i], ln_out_g_, ln_out_b_)));
    return out;
}

Var Backbone::diffusion_loss(const std::vector<Tensor>& clean_latents, const Tensor& reference,
                             const std::vector<CameraPose>& poses,
                             const CameraPose& reference_pose, int timestep,
                             const std::vector<Tensor>& noise) const {
    LW_CHECK(clean_latents.size() == noise.size(), "noise count must match latent count");
    DenoiserState state;
    state.timestep = timestep;
    state.reference_latent = reference;
    state.poses = poses;
    state.reference_pose = reference_pose;
    for (size_t i = 0; i < clean_latents.size(); ++i) {
        LW_CHECK(clean_latents[i].same_shape(noise[i]), "noise must match latent shape");
        state.latents.push_back(q_sample(schedule_, clean_latents[i], timestep, noise[i]));
    }
    std::vector<Var> pred = predict_noise(state);
    Var loss;
    for (size_t i = 0; i < pred.size(); ++i) {
        Var term = mse(pred[i], constant(noise[i]));
        loss = loss ? add(loss, term) : term;
    }
    return scale(loss, 1.0 / static_cast<double>(pred.size()));
}

Var Backbone::tv_loss_var() const {
    Var total;
    for (const auto& site : sites_) {
        for (int o = 0; o < 3; ++o) {
            Var term = tv_plane(site.weave.fusion.learnable[o]);
            total = total ? add(total, term) : term;
        }
    }
    return total;
}

Var Backbone::total_loss(const std::vector<Tensor>& clean_latents, const Tensor& reference,
                         const std::vector<CameraPose>& poses,
                         const CameraPose& reference_pose, int timestep,
                         const std::vector<Tensor>& noise, double lambda_tv) const {
    LW_CHECK(lambda_tv >= 0.0, "lambda_tv must be >= 0");
    Var loss = diffusion_loss(clean_latents, reference, poses, reference_pose, timestep, noise);
    if (lambda_tv > 0.0) loss = add(loss, scale(tv_loss_var(), lambda_tv));
    return loss;
}

std::vector<Tensor> Backbone::sample_multiview(const Tensor& reference_image,
                                               const std::vector<CameraPose>& poses,
                                               const CameraPose& reference_pose,
                                               uint64_t rng_seed, PredictAux* aux) const {
    LW_CHECK(!poses.empty(), "sample_multiview needs at least one pose");
    LW_CHECK(cfg_.sampler == "ddim" || cfg_.sampler == "ancestral",
             "unsupported sampler: " + cfg_.sampler);
    NoGradGuard no_grad;
    RandomStream rng(rng_seed);
    int n = static_cast<int>(poses.size());
    int t_max = schedule_.num_steps;

    DenoiserState state;
    state.reference_latent = reference_image;
    state.poses = poses;
    state.reference_pose = reference_pose;
    for (int i = 0; i < n; ++i)
        state.latents.push_back(randn(reference_image.shape(), rng));

    auto predict = [&](int t, bool last) {
        state.timestep = t;
        std::vector<Var> out = predict_noise(state, last ? aux : nullptr);
        std::vector<Tensor> eps;
        eps.reserve(out.size());
        for (auto& v : out) eps.push_back(v->value);
        return eps;
    };

    if (cfg_.sampler == "ddim") {
        int s = cfg_.sampler_steps;
        for (int k = 0; k < s; ++k) {
            int t = t_max - static_cast<int>(static_cast<int64_t>(k) * t_max / s);
            int t_prev = t_max - static_cast<int>(static_cast<int64_t>(k + 1) * t_max / s);
            std::vector<Tensor> eps = predict(t, k == s - 1);
            double abar_t = schedule_.alpha_bar(t);
            double abar_p = schedule_.alpha_bar(t_prev);
            double sa = std::sqrt(abar_t), sb = std::sqrt(1.0 - abar_t);
            double pa = std::sqrt(abar_p), pb = std::sqrt(1.0 - abar_p);
            for (int i = 0; i < n; ++i) {
                Tensor& z = state.latents[static_cast<size_t>(i)];
                const Tensor& e = eps[static_cast<size_t>(i)];
                for (int64_t j = 0; j < z.numel(); ++j) {
                    double x0 = (z[j] - sb * e[j]) / sa;
                    z[j] = pa * x0 + pb * e[j];
                }
            }
        }
    } else {
        for (int t = t_max; t >= 1; --t) {
            std::vector<Tensor> eps = predict(t, t == 1);
            double beta = schedule_.betas[static_cast<size_t>(t - 1)];
            double alpha = 1.0 - beta;
            double abar_t = schedule_.alpha_bar(t);
            double abar_p = schedule_.alpha_bar(t - 1);
            double sigma = t > 1 ? std::sqrt((1.0 - abar_p) / (1.0 - abar_t) * beta) : 0.0;
            for (int i = 0; i < n; ++i) {
                Tensor& z = state.latents[static_cast<size_t>(i)];
                const Tensor& e = eps[static_cast<size_t>(i)];
                for (int64_t j = 0; j < z.numel(); ++j) {
                    double mean = (z[j] - beta / std::sqrt(1.0 - abar_t) * e[j]) /
                                  std::sqrt(alpha);
                    z[j] = mean + (t > 1 ? sigma * rng.gaussian() : 0.0);
                }
            }
        }
    }

    // Identity codec: clamp to the image range.
    std::vector<Tensor> images;
    images.reserve(state.latents.size());
    for (auto& z : state.latents) {
        Tensor img = z;
        for (int64_t j = 0; j < img.numel(); ++j) img[j] = std::clamp(img[j], 0.0, 1.0);
        images.push_back(std::move(img));
    }
    return images;
}

double tv_loss(const std::array<Tensor, 3>& planes) {
    NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& p : planes) {
        LW_CHECK(p.all_finite(), "tv_loss expects finite planes");
        total += tv_plane(constant(p))->value[0];
    }
    return total;
}

}  // namespace loomweave
