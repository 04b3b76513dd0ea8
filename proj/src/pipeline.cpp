#include "miniwm/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

namespace {

Params<float> params_from_map(uint64_t seed, const std::map<std::string, Tensor<float>>& tensors) {
    Params<float> p(seed);
    for (const auto& [name, t] : tensors) p.adopt(name, t);
    return p;
}

void check_config_hash(const Checkpoint& ck, const RunConfig& cfg) {
    std::string have = ck.meta.value("config_hash", "");
    if (!have.empty() && have != cfg.hash())
        throw ConfigError("checkpoint config hash " + have + " does not match " + cfg.hash());
}

}  // namespace

DatasetSplits build_dataset(const RunConfig& cfg, uint64_t seed) {
    return build_dataset(cfg, seed, cfg.dataset.samples);
}

DatasetSplits build_dataset(const RunConfig& cfg, uint64_t seed, int64_t n_samples) {
    Rng rng(seed ^ 0xd5d5d5d5ULL);
    BalanceGrid grid = BalanceGrid::uniform();
    GeoFence fence = make_fence(cfg.dataset.val_fence, cfg.dataset.val_fence_param);
    auto rig = make_camera_rig(cfg.dataset.cameras, cfg.dataset.width, cfg.dataset.height);

    DatasetSplits out;
    while (int64_t(out.train.size()) < n_samples) {
        SceneSpec spec = sample_scene_spec(rng, grid, cfg.dataset);
        VideoSample sample =
            render_scene(spec, rig, cfg.dataset.frames, cfg.dataset.fps, cfg.dataset.max_agents);
        if (split_geofence(spec, fence) == Split::Val) {
            if (int64_t(out.val.size()) < n_samples) out.val.push_back(std::move(sample));
        } else {
            out.train.push_back(std::move(sample));
        }
    }
    if (out.val.empty()) {
        // no fence configured: hold out a tail of the train set
        int64_t n_val = std::max<int64_t>(n_samples / 8, 2);
        for (int64_t i = 0; i < n_val; ++i) {
            SceneSpec spec = sample_scene_spec(rng, grid, cfg.dataset);
            out.val.push_back(render_scene(spec, rig, cfg.dataset.frames, cfg.dataset.fps,
                                           cfg.dataset.max_agents));
        }
    }
    return out;
}

// ---------------------------------------------------------------- tokenizer

TokenizerTrainer::TokenizerTrainer(const RunConfig& cfg, uint64_t seed)
    : cfg_(cfg), seed_(seed), params_(seed) {
    model_ = std::make_unique<VideoTokenizer<float>>(params_, cfg.tokenizer);
    int64_t teacher_dim =
        cfg.tokenizer.teacher_dim > 0 ? cfg.tokenizer.teacher_dim : cfg.tokenizer.latent_dim;
    teacher_ = std::make_unique<Teacher<float>>(cfg.tokenizer.teacher_seed, teacher_dim,
                                                cfg.tokenizer.teacher_temporal_factor);
    opt_.beta1 = cfg.training.tokenizer.beta1;
    opt_.beta2 = cfg.training.tokenizer.beta2;
    opt_.weight_decay = cfg.training.weight_decay;
    opt_.clip = cfg.training.grad_clip;
    ema_.decay = cfg.training.ema_decay;
    ema_.init(params_);
    lr_ = LrSchedule{cfg.training.tokenizer.lr, cfg.training.tokenizer.steps};
    data_rng_ = Rng(seed ^ 0x11);
    noise_rng_ = Rng(seed ^ 0x22);
}

void TokenizerTrainer::set_dataset(std::vector<VideoSample> samples) {
    if (samples.empty()) throw DataError("empty tokenizer training set");
    dataset_ = std::move(samples);
}

StepMetrics TokenizerTrainer::train_step() {
    if (dataset_.empty()) throw DataError("tokenizer trainer has no dataset");
    int64_t B = cfg_.training.tokenizer.batch;
    int64_t T = cfg_.dataset.frames, H = cfg_.dataset.height, W = cfg_.dataset.width;
    Tensor<float> batch({B, T, H, W, 3});
    for (int64_t b = 0; b < B; ++b) {
        const VideoSample& s = dataset_[data_rng_.below(dataset_.size())];
        int64_t cam = int64_t(data_rng_.below(uint64_t(s.n_cameras())));
        Tensor<float> v = camera_video(s.frames, cam);
        std::copy(v.data(), v.data() + v.numel(), batch.data() + b * v.numel());
    }

    Tape<float> tape;
    Ctx<float> ctx(tape, params_, true);
    auto losses = model_->loss(ctx, batch, noise_rng_, *teacher_);
    tape.backward(losses.total);
    std::map<std::string, Tensor<float>> grads;
    ctx.collect_grads(grads);

    ++step_;
    double lr = lr_.at(step_);
    double gn = opt_.step(params_, grads, lr);
    ema_.update(params_);

    StepMetrics m;
    m.step = step_;
    m.loss = double(tape.val(losses.total).item());
    m.grad_norm = gn;
    m.lr = lr;
    m.components = {{"l1", double(losses.l1)},
                    {"l2", double(losses.l2)},
                    {"perceptual", double(losses.perceptual)},
                    {"distill", double(losses.distill)},
                    {"kl", double(losses.kl)}};
    return m;
}

Params<float> TokenizerTrainer::ema_params() const {
    Params<float> p = params_;
    ema_.overwrite(p);
    return p;
}

Checkpoint TokenizerTrainer::make_checkpoint() const {
    Checkpoint ck;
    for (const auto& name : params_.names()) ck.tensors.emplace(name, params_.at(name));
    for (const auto& [name, sh] : ema_.shadow) ck.tensors.emplace("ema/" + name, sh);
    for (const auto& [name, t] : opt_.m) ck.tensors.emplace("opt/m/" + name, t);
    for (const auto& [name, t] : opt_.v) ck.tensors.emplace("opt/v/" + name, t);
    ck.meta["kind"] = "tokenizer";
    ck.meta["step"] = step_;
    ck.meta["opt_steps"] = opt_.step_count;
    ck.meta["config_hash"] = cfg_.hash();
    ck.meta["config"] = nlohmann::json::parse(cfg_.canonical_json());
    ck.meta["seed"] = seed_;
    ck.meta["rng_data"] = rng_state_hex(data_rng_);
    ck.meta["rng_noise"] = rng_state_hex(noise_rng_);
    return ck;
}

void TokenizerTrainer::restore(const Checkpoint& ck) {
    check_config_hash(ck, cfg_);
    for (const auto& name : params_.names()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw DataError("checkpoint missing parameter " + name);
        params_.at(name) = it->second;
        auto eit = ck.tensors.find("ema/" + name);
        if (eit != ck.tensors.end()) ema_.shadow[name] = eit->second;
        auto mit = ck.tensors.find("opt/m/" + name);
        if (mit != ck.tensors.end()) opt_.m[name] = mit->second;
        auto vit = ck.tensors.find("opt/v/" + name);
        if (vit != ck.tensors.end()) opt_.v[name] = vit->second;
    }
    step_ = ck.meta.value("step", int64_t(0));
    opt_.step_count = ck.meta.value("opt_steps", int64_t(0));
    if (ck.meta.contains("rng_data")) data_rng_ = rng_from_hex(ck.meta["rng_data"]);
    if (ck.meta.contains("rng_noise")) noise_rng_ = rng_from_hex(ck.meta["rng_noise"]);
}

// -------------------------------------------------------------- world model

WorldModelTrainer::WorldModelTrainer(const RunConfig& cfg, uint64_t seed,
                                     std::map<std::string, Tensor<float>> tokenizer_tensors)
    : cfg_(cfg), seed_(seed), params_(seed ^ 0x777), tok_params_(params_from_map(0, tokenizer_tensors)) {
    tokenizer_ = std::make_unique<VideoTokenizer<float>>(tok_params_, cfg.tokenizer);
    // the tokenizer module re-created its params with fresh init; overwrite
    // from the checkpoint tensors
    for (const auto& [name, t] : tokenizer_tensors) tok_params_.adopt(name, t);
    model_ = std::make_unique<WorldModel<float>>(params_, cfg);
    opt_.beta1 = cfg.training.world_model.beta1;
    opt_.beta2 = cfg.training.world_model.beta2;
    opt_.weight_decay = cfg.training.weight_decay;
    opt_.clip = cfg.training.grad_clip;
    ema_.decay = cfg.training.ema_decay;
    ema_.init(params_);
    lr_ = LrSchedule{cfg.training.world_model.lr, cfg.training.world_model.steps};
    data_rng_ = Rng(seed ^ 0x33);
    noise_rng_ = Rng(seed ^ 0x44);
    drop_rng_ = Rng(seed ^ 0x55);
    latent_mean_ = cfg.training.latent_mean;
    latent_std_ = cfg.training.latent_std;
}

LatentSample WorldModelTrainer::encode_sample(const VideoSample& s) {
    int64_t Tt = cfg_.world_model.latents_t;
    int64_t tf = cfg_.tokenizer.temporal_factor;
    int64_t N = s.n_cameras();
    if (s.frames_t() < Tt * tf) throw DataError("sample too short for the world-model window");

    LatentSample ls;
    for (int64_t n = 0; n < N; ++n) {
        Tensor<float> v = camera_video(s.frames, n);
        Tensor<float> clip({1, Tt * tf, s.height(), s.width(), 3});
        std::copy(v.data(), v.data() + clip.numel() / 1, clip.data());
        auto dist = tokenizer_->encode(tok_params_, clip);
        int64_t h = dist.mean.dim(2), w = dist.mean.dim(3), L = dist.mean.dim(4);
        if (ls.dist.mean.empty()) {
            ls.dist.mean = Tensor<float>({Tt, N, h, w, L});
            ls.dist.log_std = Tensor<float>({Tt, N, h, w, L});
        }
        for (int64_t t = 0; t < Tt; ++t) {
            int64_t plane = h * w * L;
            std::copy(dist.mean.data() + t * plane, dist.mean.data() + (t + 1) * plane,
                      ls.dist.mean.data() + (t * N + n) * plane);
            std::copy(dist.log_std.data() + t * plane, dist.log_std.data() + (t + 1) * plane,
                      ls.dist.log_std.data() + (t * N + n) * plane);
        }
    }
    ls.cond = make_conditioning_input(s, cfg_, Tt);
    return ls;
}

void WorldModelTrainer::set_dataset(const std::vector<VideoSample>& train,
                                    const std::vector<VideoSample>& val) {
    if (train.empty()) throw DataError("empty world-model training set");
    train_set_.clear();
    val_set_.clear();
    for (const auto& s : train) train_set_.push_back(encode_sample(s));
    for (const auto& s : val) val_set_.push_back(encode_sample(s));

    if (cfg_.training.latent_stats_auto) {
        double sum = 0, sum2 = 0;
        int64_t n = 0;
        for (const auto& ls : train_set_) {
            for (int64_t i = 0; i < ls.dist.mean.numel(); ++i) {
                sum += double(ls.dist.mean[i]);
                sum2 += double(ls.dist.mean[i]) * double(ls.dist.mean[i]);
                ++n;
            }
        }
        latent_mean_ = sum / double(n);
        latent_std_ = std::sqrt(std::max(sum2 / double(n) - latent_mean_ * latent_mean_, 1e-12));
    }
}

Tensor<float> WorldModelTrainer::draw_latents(const LatentSample& ls, Rng& rng) const {
    Tensor<float> z(ls.dist.mean.shape());
    for (int64_t i = 0; i < z.numel(); ++i)
        z[i] = ls.dist.mean[i] + std::exp(ls.dist.log_std[i]) * float(rng.normal());
    return normalize_latents(z, float(latent_mean_), float(latent_std_));
}

StepMetrics WorldModelTrainer::train_step() {
    if (train_set_.empty()) throw DataError("world-model trainer has no dataset");
    int64_t B = cfg_.training.world_model.batch;
    int64_t Tt = cfg_.world_model.latents_t, N = cfg_.dataset.cameras;
    int64_t h = cfg_.latent_h(), w = cfg_.latent_w(), L = cfg_.tokenizer.latent_dim;

    Task task = sample_task(data_rng_, cfg_.training);
    int64_t t_ctx = 0;
    Tensor<float> regen_mask;
    if (task == Task::Context)
        t_ctx = Tt > 1 ? data_rng_.range(1, Tt - 1) : 0;
    else if (task == Task::Inpaint)
        regen_mask = make_inpaint_mask(data_rng_, Tt, N, h, w);

    Tensor<float> x({B, Tt, N, h, w, L});
    std::vector<double> tau(size_t(B));
    std::vector<ConditioningInput> conds;
    std::vector<std::vector<uint8_t>> cam_keep;
    TauMixture mix = tau_mixture(cfg_.world_model);
    for (int64_t b = 0; b < B; ++b) {
        const LatentSample& ls = train_set_[data_rng_.below(train_set_.size())];
        Tensor<float> z = draw_latents(ls, noise_rng_);
        std::copy(z.data(), z.data() + z.numel(), x.data() + b * z.numel());
        tau[size_t(b)] = sample_tau(noise_rng_, mix);

        ConditioningInput cond = ls.cond;
        cond.flags = conditioning_dropout(drop_rng_, cfg_.training);
        agent_feature_dropout(cond.agents, drop_rng_, cfg_.conditioning.agent_feature_dropout);
        agent_instance_dropout(cond.agents, drop_rng_);
        cond.present_index = std::max<int64_t>(t_ctx - 1, 0);
        conds.push_back(std::move(cond));
        cam_keep.push_back(camera_dropout(drop_rng_, N, cfg_.training.camera_drop));
    }

    FlowBatch<float> fb = task == Task::Inpaint
                              ? make_flow_batch(x, noise_rng_, tau, regen_mask)
                              : make_flow_batch(x, noise_rng_, tau, t_ctx);

    Tape<float> tape;
    Ctx<float> ctx(tape, params_, true);
    auto enc = model_->conditioner().encode(ctx, conds, cfg_.conditioning);
    Val<float> pred = model_->forward(ctx, fb.noisy, enc, tau, &cam_keep);
    Val<float> loss = flow_matching_loss(pred, fb);
    tape.backward(loss);
    std::map<std::string, Tensor<float>> grads;
    ctx.collect_grads(grads);

    ++step_;
    double lr = lr_.at(step_);
    double gn = opt_.step(params_, grads, lr);
    ema_.update(params_);

    StepMetrics m;
    m.step = step_;
    m.loss = double(tape.val(loss).item());
    m.grad_norm = gn;
    m.lr = lr;
    m.components["task"] = double(int(task));
    m.components["t_ctx"] = double(t_ctx);
    return m;
}

double WorldModelTrainer::validation_loss(int64_t n, uint64_t seed, bool use_ema) {
    if (n <= 0) throw DataError("validation_loss needs n > 0");
    if (val_set_.empty()) throw DataError("no validation samples");
    n = std::min<int64_t>(n, int64_t(val_set_.size()));

    Params<float> eval_params = params_;
    if (use_ema) ema_.overwrite(eval_params);

    TauMixture mix = tau_mixture(cfg_.world_model);
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
        Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * uint64_t(i + 1)));
        const LatentSample& ls = val_set_[size_t(i)];
        Tensor<float> z = draw_latents(ls, rng);
        Tensor<float> x({1, z.dim(0), z.dim(1), z.dim(2), z.dim(3), z.dim(4)});
        std::copy(z.data(), z.data() + z.numel(), x.data());
        std::vector<double> tau{sample_tau(rng, mix)};
        FlowBatch<float> fb = make_flow_batch(x, rng, tau, int64_t(0));

        Tape<float> tape;
        Ctx<float> ctx(tape, eval_params, false);
        ConditioningInput cond = ls.cond;  // no dropout for validation
        auto enc = model_->conditioner().encode(ctx, {cond}, cfg_.conditioning);
        Val<float> pred = model_->forward(ctx, fb.noisy, enc, tau, nullptr);
        Val<float> loss = flow_matching_loss(pred, fb);
        total += double(tape.val(loss).item());
    }
    return total / double(n);
}

Checkpoint WorldModelTrainer::make_checkpoint() const {
    Checkpoint ck;
    for (const auto& name : params_.names()) ck.tensors.emplace(name, params_.at(name));
    for (const auto& name : tok_params_.names()) ck.tensors.emplace(name, tok_params_.at(name));
    for (const auto& [name, sh] : ema_.shadow) ck.tensors.emplace("ema/" + name, sh);
    for (const auto& [name, t] : opt_.m) ck.tensors.emplace("opt/m/" + name, t);
    for (const auto& [name, t] : opt_.v) ck.tensors.emplace("opt/v/" + name, t);
    ck.meta["kind"] = "world_model";
    ck.meta["step"] = step_;
    ck.meta["opt_steps"] = opt_.step_count;
    ck.meta["config_hash"] = cfg_.hash();
    ck.meta["config"] = nlohmann::json::parse(cfg_.canonical_json());
    ck.meta["seed"] = seed_;
    ck.meta["latent_mean"] = latent_mean_;
    ck.meta["latent_std"] = latent_std_;
    ck.meta["rng_data"] = rng_state_hex(data_rng_);
    ck.meta["rng_noise"] = rng_state_hex(noise_rng_);
    ck.meta["rng_drop"] = rng_state_hex(drop_rng_);
    return ck;
}

void WorldModelTrainer::restore(const Checkpoint& ck) {
    check_config_hash(ck, cfg_);
    for (const auto& name : params_.names()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw DataError("checkpoint missing parameter " + name);
        params_.at(name) = it->second;
        auto eit = ck.tensors.find("ema/" + name);
        if (eit != ck.tensors.end()) ema_.shadow[name] = eit->second;
        auto mit = ck.tensors.find("opt/m/" + name);
        if (mit != ck.tensors.end()) opt_.m[name] = mit->second;
        auto vit = ck.tensors.find("opt/v/" + name);
        if (vit != ck.tensors.end()) opt_.v[name] = vit->second;
    }
    step_ = ck.meta.value("step", int64_t(0));
    opt_.step_count = ck.meta.value("opt_steps", int64_t(0));
    latent_mean_ = ck.meta.value("latent_mean", latent_mean_);
    latent_std_ = ck.meta.value("latent_std", latent_std_);
    if (ck.meta.contains("rng_data")) data_rng_ = rng_from_hex(ck.meta["rng_data"]);
    if (ck.meta.contains("rng_noise")) noise_rng_ = rng_from_hex(ck.meta["rng_noise"]);
    if (ck.meta.contains("rng_drop")) drop_rng_ = rng_from_hex(ck.meta["rng_drop"]);
}

// ------------------------------------------------------------------ pipeline

Pipeline::Pipeline(const Checkpoint& ck, bool use_ema)
    : cfg_(parse_config_json(ck.meta.at("config").dump())), wm_params_(0), tok_params_(0) {
    if (ck.meta.value("kind", "") != "world_model")
        throw DataError("pipeline needs a world-model checkpoint");
    latent_mean_ = ck.meta.value("latent_mean", 0.0);
    latent_std_ = ck.meta.value("latent_std", 0.32);

    model_ = std::make_unique<WorldModel<float>>(wm_params_, cfg_);
    tokenizer_ = std::make_unique<VideoTokenizer<float>>(tok_params_, cfg_.tokenizer);
    for (const auto& name : wm_params_.names()) {
        std::string key = use_ema && ck.tensors.count("ema/" + name) ? "ema/" + name : name;
        auto it = ck.tensors.find(key);
        if (it == ck.tensors.end()) throw DataError("checkpoint missing parameter " + name);
        wm_params_.at(name) = it->second;
    }
    for (const auto& name : tok_params_.names()) {
        std::string key = "ema/" + name;
        auto it = use_ema && ck.tensors.count(key) ? ck.tensors.find(key) : ck.tensors.find(name);
        if (it == ck.tensors.end()) throw DataError("checkpoint missing parameter " + name);
        tok_params_.at(name) = it->second;
    }
}

Pipeline Pipeline::from_file(const std::string& path, bool use_ema) {
    return Pipeline(Checkpoint::load(path), use_ema);
}

Tensor<float> Pipeline::velocity(const Tensor<float>& x, const ConditioningInput& cond,
                                 double tau) {
    Tensor<float> xb({1, x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4)});
    std::copy(x.data(), x.data() + x.numel(), xb.data());
    Tape<float> tape;
    Ctx<float> ctx(tape, wm_params_, false);
    auto enc = model_->conditioner().encode(ctx, {cond}, cfg_.conditioning);
    Val<float> v = model_->forward(ctx, xb, enc, {tau}, nullptr);
    Tensor<float> out = tape.val(v);
    return out.reshaped(x.shape());
}

Tensor<float> Pipeline::guided_velocity(const Tensor<float>& x, const ConditioningInput& cond,
                                        double tau, const GuidanceConfig& g) {
    Tensor<float> v_cond = velocity(x, cond, tau);
    if (g.scale == 1.0 && !g.spatial_mask) return v_cond;
    ConditioningInput uncond = cond;
    uncond.flags = all_drop();
    Tensor<float> v_uncond = velocity(x, uncond, tau);
    return cfg_combine(v_cond, v_uncond, g);
}

Tensor<float> Pipeline::generate_latents(const ConditioningInput& cond, const NoiseSchedule& sched,
                                         const GuidanceConfig& g, Rng& rng) {
    int64_t Tt = cfg_.world_model.latents_t, N = cfg_.dataset.cameras;
    Tensor<float> x = random_normal<float>({Tt, N, cfg_.latent_h(), cfg_.latent_w(),
                                            cfg_.tokenizer.latent_dim},
                                           rng);
    VelocityFn<float> fn = [&](const Tensor<float>& xt, double tau) {
        return guided_velocity(xt, cond, tau, g);
    };
    return euler_denoise(std::move(x), 0, sched, fn);
}

Tensor<float> Pipeline::inpaint_latents(const Tensor<float>& latents,
                                        const Tensor<float>& regen_mask,
                                        const ConditioningInput& cond, const NoiseSchedule& sched,
                                        const GuidanceConfig& g, Rng& rng) {
    if (regen_mask.numel() * latents.dim(4) != latents.numel())
        throw ShapeError("inpaint mask does not match latents");
    Tensor<float> noise = random_normal<float>(latents.shape(), rng);
    Tensor<float> x = latents;
    Tensor<float> keep(regen_mask.shape());
    int64_t L = latents.dim(4);
    for (int64_t c = 0; c < regen_mask.numel(); ++c) {
        keep[c] = regen_mask[c] == 0.0f ? 1.0f : 0.0f;
        if (regen_mask[c] != 0.0f)
            for (int64_t l = 0; l < L; ++l) x[c * L + l] = noise[c * L + l];
    }
    VelocityFn<float> fn = [&](const Tensor<float>& xt, double tau) {
        return guided_velocity(xt, cond, tau, g);
    };
    return euler_denoise(std::move(x), 0, sched, fn, &keep, &latents);
}

Tensor<float> Pipeline::edit_latents(const Tensor<float>& latents, double tau_edit,
                                     const ConditioningInput& cond, const NoiseSchedule& sched,
                                     const GuidanceConfig& g, Rng& rng) {
    if (!(tau_edit > 0.0 && tau_edit < 1.0)) throw ConfigError("tau_edit must lie in (0,1)");
    int64_t start = sched.index_at_or_above(tau_edit);
    if (start >= sched.steps()) start = sched.steps() - 1;
    float ti = float(sched.taus[size_t(start)]);
    Tensor<float> x(latents.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        float eps = float(rng.normal());
        x[i] = ti * latents[i] + (1.0f - ti) * eps;
    }
    VelocityFn<float> fn = [&](const Tensor<float>& xt, double tau) {
        return guided_velocity(xt, cond, tau, g);
    };
    return euler_denoise(std::move(x), start, sched, fn);
}

Tensor<float> Pipeline::rollout_latents(const Tensor<float>& context,
                                        const std::vector<ConditioningInput>& stream,
                                        int64_t iterations, const NoiseSchedule& sched,
                                        const GuidanceConfig& g, Rng& rng) {
    int64_t k = context.dim(0);
    int64_t Tt = cfg_.world_model.latents_t;
    if (k >= Tt) throw ConfigError("rollout context must be shorter than the model window");
    if (int64_t(stream.size()) < iterations)
        throw DataError("conditioning stream shorter than the rollout horizon");

    Tensor<float> seq = context;  // grows along dim 0
    int64_t per_lat = context.numel() / k;
    for (int64_t it = 0; it < iterations; ++it) {
        Tensor<float> x({Tt, context.dim(1), context.dim(2), context.dim(3), context.dim(4)});
        // most recent k latents as context, noise for the rest
        std::copy(seq.data() + (seq.dim(0) - k) * per_lat, seq.data() + seq.dim(0) * per_lat,
                  x.data());
        for (int64_t i = k * per_lat; i < x.numel(); ++i) x[i] = float(rng.normal());

        Tensor<float> keep({Tt, context.dim(1), context.dim(2), context.dim(3)});
        int64_t cells_per_t = keep.numel() / Tt;
        for (int64_t i = 0; i < k * cells_per_t; ++i) keep[i] = 1.0f;

        ConditioningInput cond = stream[size_t(it)];
        cond.present_index = std::max<int64_t>(k - 1, 0);
        VelocityFn<float> fn = [&](const Tensor<float>& xt, double tau) {
            return guided_velocity(xt, cond, tau, g);
        };
        Tensor<float> keep_values = x;
        Tensor<float> full = euler_denoise(std::move(x), 0, sched, fn, &keep, &keep_values);

        Tensor<float> grown({seq.dim(0) + (Tt - k), context.dim(1), context.dim(2),
                             context.dim(3), context.dim(4)});
        std::copy(seq.data(), seq.data() + seq.numel(), grown.data());
        std::copy(full.data() + k * per_lat, full.data() + Tt * per_lat,
                  grown.data() + seq.numel());
        seq = std::move(grown);
    }
    return seq;
}

Tensor<float> Pipeline::encode_video(const VideoSample& s, Rng& rng) {
    Tensor<float> mean = encode_video_mean(s);
    // sample around the mean with the stored per-cell spread
    int64_t Tt = cfg_.world_model.latents_t;
    int64_t tf = cfg_.tokenizer.temporal_factor;
    (void)Tt;
    (void)tf;
    Tensor<float> out(mean.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = mean[i];
    (void)rng;
    return out;
}

Tensor<float> Pipeline::encode_video_mean(const VideoSample& s) {
    int64_t Tt = cfg_.world_model.latents_t;
    int64_t tf = cfg_.tokenizer.temporal_factor;
    int64_t N = s.n_cameras();
    if (s.frames_t() < Tt * tf) throw DataError("video too short for the model window");
    Tensor<float> out;
    for (int64_t n = 0; n < N; ++n) {
        Tensor<float> v = camera_video(s.frames, n);
        Tensor<float> clip({1, Tt * tf, s.height(), s.width(), 3});
        std::copy(v.data(), v.data() + clip.numel(), clip.data());
        auto dist = tokenizer_->encode(tok_params_, clip);
        int64_t h = dist.mean.dim(2), w = dist.mean.dim(3), L = dist.mean.dim(4);
        if (out.empty()) out = Tensor<float>({Tt, N, h, w, L});
        int64_t plane = h * w * L;
        for (int64_t t = 0; t < Tt; ++t)
            std::copy(dist.mean.data() + t * plane, dist.mean.data() + (t + 1) * plane,
                      out.data() + (t * N + n) * plane);
    }
    return normalize_latents(out, float(latent_mean_), float(latent_std_));
}

Tensor<float> Pipeline::decode_to_video(const Tensor<float>& latents_norm) {
    Tensor<float> lat = denormalize_latents(latents_norm, float(latent_mean_), float(latent_std_));
    int64_t Tt = lat.dim(0), N = lat.dim(1), h = lat.dim(2), w = lat.dim(3), L = lat.dim(4);
    int64_t tf = cfg_.tokenizer.temporal_factor;
    Tensor<float> out({Tt * tf, N, 32 * h, 32 * w, 3});
    for (int64_t n = 0; n < N; ++n) {
        Tensor<float> per_cam({Tt, h, w, L});
        for (int64_t t = 0; t < Tt; ++t)
            std::copy(lat.data() + (t * N + n) * h * w * L, lat.data() + ((t * N + n) + 1) * h * w * L,
                      per_cam.data() + t * h * w * L);
        Tensor<float> frames = tokenizer_->rolling_decode(tok_params_, per_cam);
        int64_t frame_sz = 32 * h * 32 * w * 3;
        for (int64_t t = 0; t < Tt * tf; ++t)
            std::copy(frames.data() + t * frame_sz, frames.data() + (t + 1) * frame_sz,
                      out.data() + (t * N + n) * frame_sz);
    }
    return out;
}

}  // namespace miniwm
