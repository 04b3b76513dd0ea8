#include "miniwm/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "miniwm/errors.hpp"
#include "miniwm/sha256.hpp"

using nlohmann::json;

namespace miniwm {

namespace taxonomy {
int64_t index_of(const std::vector<std::string>& values, const std::string& name) {
    for (size_t i = 0; i < values.size(); ++i)
        if (values[i] == name) return int64_t(i);
    throw DataError("unknown category value: " + name);
}
}  // namespace taxonomy

namespace {

// Drives both serialization and (unknown-key-rejecting) parsing from one
// field list per section.
class SectionIo {
public:
    SectionIo(json* out, const json* in, std::string section)
        : out_(out), in_(in), section_(std::move(section)) {
        if (in_ && !in_->is_object()) throw ConfigError("section " + section_ + " must be an object");
    }

    template <class T>
    void field(const char* key, T& v) {
        if (out_) (*out_)[key] = v;
        if (in_) {
            known_.insert(key);
            if (in_->contains(key)) {
                try {
                    v = in_->at(key).get<T>();
                } catch (const json::exception& e) {
                    throw ConfigError("bad value for " + section_ + "." + key + ": " + e.what());
                }
            }
        }
    }

    void sub(const char* key, const std::function<void(json*, const json*)>& f) {
        known_.insert(key);
        json* o = nullptr;
        if (out_) o = &(*out_)[key];
        const json* i = nullptr;
        if (in_ && in_->contains(key)) i = &in_->at(key);
        f(o, i);
    }

    ~SectionIo() noexcept(false) {
        if (in_) {
            for (auto it = in_->begin(); it != in_->end(); ++it)
                if (!known_.count(it.key()))
                    throw ConfigError("unknown config key: " + section_ + "." + it.key());
        }
    }

private:
    json* out_;
    const json* in_;
    std::string section_;
    std::set<std::string> known_;
};

void io_dataset(json* out, const json* in, DatasetConfig& c) {
    SectionIo io(out, in, "dataset");
    io.field("frames", c.frames);
    io.field("cameras", c.cameras);
    io.field("height", c.height);
    io.field("width", c.width);
    io.field("fps", c.fps);
    io.field("max_agents", c.max_agents);
    io.field("samples", c.samples);
    io.field("drive_frames", c.drive_frames);
    io.field("min_stride", c.min_stride);
    io.field("map_extent", c.map_extent);
    io.field("val_fence", c.val_fence);
    io.field("val_fence_param", c.val_fence_param);
    io.field("strict_fps", c.strict_fps);
}

void io_tokenizer(json* out, const json* in, TokenizerConfig& c) {
    SectionIo io(out, in, "tokenizer");
    io.field("temporal_factor", c.temporal_factor);
    io.field("spatial_factor", c.spatial_factor);
    io.field("stem_dim", c.stem_dim);
    io.field("embed_dim", c.embed_dim);
    io.field("heads", c.heads);
    io.field("encoder_blocks", c.encoder_blocks);
    io.field("decoder_blocks_mid", c.decoder_blocks_mid);
    io.field("decoder_blocks_hi", c.decoder_blocks_hi);
    io.field("latent_dim", c.latent_dim);
    io.field("decode_window", c.decode_window);
    io.field("temporal_attention", c.temporal_attention);
    io.field("logstd_min", c.logstd_min);
    io.field("logstd_max", c.logstd_max);
    io.field("teacher_dim", c.teacher_dim);
    io.field("teacher_seed", c.teacher_seed);
    io.field("teacher_temporal_factor", c.teacher_temporal_factor);
    io.field("w_distill", c.w_distill);
    io.field("w_kl", c.w_kl);
    io.field("w_l1", c.w_l1);
    io.field("w_l2", c.w_l2);
    io.field("w_perceptual", c.w_perceptual);
}

void io_conditioning(json* out, const json* in, ConditioningConfig& c) {
    SectionIo io(out, in, "conditioning");
    io.field("fourier_pairs", c.fourier_pairs);
    io.field("speed_s", c.speed_s);
    io.field("speed_max", c.speed_max);
    io.field("curvature_s", c.curvature_s);
    io.field("curvature_max", c.curvature_max);
    io.field("agent_center_s", c.agent_center_s);
    io.field("agent_center_max", c.agent_center_max);
    io.field("agent_dims_norm", c.agent_dims_norm);
    io.field("clip_dim", c.clip_dim);
    io.field("scenario_dim", c.scenario_dim);
    io.field("agent_feature_dropout", c.agent_feature_dropout);
    io.field("embedding_seed", c.embedding_seed);
}

void io_world_model(json* out, const json* in, WorldModelConfig& c) {
    SectionIo io(out, in, "world_model");
    io.field("blocks", c.blocks);
    io.field("dim", c.dim);
    io.field("heads", c.heads);
    io.field("latents_t", c.latents_t);
    io.field("mlp_ratio", c.mlp_ratio);
    io.field("tau_mu1", c.tau_mu1);
    io.field("tau_sigma1", c.tau_sigma1);
    io.field("tau_p1", c.tau_p1);
    io.field("tau_mu2", c.tau_mu2);
    io.field("tau_sigma2", c.tau_sigma2);
    io.field("tau_p2", c.tau_p2);
}

void io_lr(json* out, const json* in, const char* name, LrScheduleConfig& c) {
    SectionIo io(out, in, name);
    io.field("shape", c.shape);
    io.field("warmup", c.warmup);
    io.field("cooldown", c.cooldown);
    io.field("base_lr", c.base_lr);
    io.field("final_lr", c.final_lr);
}

void io_optim(json* out, const json* in, const char* name, OptimConfig& c) {
    SectionIo io(out, in, name);
    io.field("steps", c.steps);
    io.field("batch", c.batch);
    io.field("beta1", c.beta1);
    io.field("beta2", c.beta2);
    io.sub("lr", [&](json* o, const json* i) { io_lr(o, i, "lr", c.lr); });
}

void io_training(json* out, const json* in, TrainingConfig& c) {
    SectionIo io(out, in, "training");
    io.sub("tokenizer", [&](json* o, const json* i) { io_optim(o, i, "training.tokenizer", c.tokenizer); });
    io.sub("world_model",
           [&](json* o, const json* i) { io_optim(o, i, "training.world_model", c.world_model); });
    io.field("weight_decay", c.weight_decay);
    io.field("grad_clip", c.grad_clip);
    io.field("ema_decay", c.ema_decay);
    io.field("task_scratch", c.task_scratch);
    io.field("task_context", c.task_context);
    io.field("task_inpaint", c.task_inpaint);
    io.field("cond_drop_all", c.cond_drop_all);
    io.field("cond_drop_each", c.cond_drop_each);
    io.field("camera_drop", c.camera_drop);
    io.field("latent_mean", c.latent_mean);
    io.field("latent_std", c.latent_std);
    io.field("latent_stats_auto", c.latent_stats_auto);
    io.field("val_samples", c.val_samples);
    io.field("snapshot_fraction", c.snapshot_fraction);
    io.field("log_every", c.log_every);
}

void io_inference(json* out, const json* in, InferenceConfig& c) {
    SectionIo io(out, in, "inference");
    io.field("steps", c.steps);
    io.field("linear_steps", c.linear_steps);
    io.field("schedule_l", c.schedule_l);
    io.field("guidance_scale", c.guidance_scale);
    io.field("context_latents", c.context_latents);
}

void io_metrics(json* out, const json* in, MetricsConfig& c) {
    SectionIo io(out, in, "metrics");
    io.field("extractor_seed", c.extractor_seed);
    io.field("extractor_dim", c.extractor_dim);
}

void io_run(json* out, const json* in, RunConfig& c) {
    SectionIo io(out, in, "<root>");
    io.field("preset", c.preset);
    io.sub("dataset", [&](json* o, const json* i) { io_dataset(o, i, c.dataset); });
    io.sub("tokenizer", [&](json* o, const json* i) { io_tokenizer(o, i, c.tokenizer); });
    io.sub("conditioning", [&](json* o, const json* i) { io_conditioning(o, i, c.conditioning); });
    io.sub("world_model", [&](json* o, const json* i) { io_world_model(o, i, c.world_model); });
    io.sub("training", [&](json* o, const json* i) { io_training(o, i, c.training); });
    io.sub("inference", [&](json* o, const json* i) { io_inference(o, i, c.inference); });
    io.sub("metrics", [&](json* o, const json* i) { io_metrics(o, i, c.metrics); });
}

}  // namespace

int64_t RunConfig::cond_tokens() const {
    return kMetadataFields + 2 + dataset.cameras * dataset.max_agents;
}

int64_t RunConfig::world_model_tokens() const {
    return world_model.latents_t * dataset.cameras * latent_h() * latent_w();
}

std::string RunConfig::canonical_json() const {
    json j;
    RunConfig tmp = *this;
    io_run(&j, nullptr, tmp);
    return j.dump(2);  // nlohmann objects are key-sorted, so this is canonical
}

std::string RunConfig::hash() const { return Sha256::of(canonical_json()).substr(0, 16); }

void RunConfig::validate() const {
    if (tokenizer.temporal_factor != 8 || tokenizer.spatial_factor != 32)
        throw ConfigError("tokenizer stride ladder requires temporal_factor=8, spatial_factor=32");
    if (dataset.frames % tokenizer.temporal_factor)
        throw ConfigError("dataset.frames must be a multiple of the temporal factor");
    if (dataset.height % tokenizer.spatial_factor || dataset.width % tokenizer.spatial_factor)
        throw ConfigError("dataset dims must be multiples of the spatial factor");
    if (tokenizer.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (tokenizer.embed_dim % tokenizer.heads) throw ConfigError("tokenizer dim/head mismatch");
    if (world_model.dim % world_model.heads) throw ConfigError("world_model dim/head mismatch");
    if (dataset.cameras < 1 || dataset.frames < 8) throw ConfigError("degenerate dataset dims");
    if (dataset.max_agents < 0) throw ConfigError("max_agents must be >= 0");
    if (dataset.strict_fps && dataset.fps != 20.0 && dataset.fps != 25.0 && dataset.fps != 30.0)
        throw ConfigError("paper preset requires fps in {20,25,30}");
    if (dataset.fps <= 0) throw ConfigError("fps must be positive");
    double psum = world_model.tau_p1 + world_model.tau_p2;
    if (std::abs(psum - 1.0) > 1e-9 || world_model.tau_p1 < 0 || world_model.tau_p2 < 0)
        throw ConfigError("tau mixture probabilities must be nonnegative and sum to 1");
    if (world_model.tau_sigma1 <= 0 || world_model.tau_sigma2 <= 0)
        throw ConfigError("tau mixture sigmas must be positive");
    double tsum = training.task_scratch + training.task_context + training.task_inpaint;
    if (std::abs(tsum - 1.0) > 1e-9 || training.task_scratch < 0 || training.task_context < 0 ||
        training.task_inpaint < 0)
        throw ConfigError("task mixture must be nonnegative and sum to 1");
    for (double p : {training.cond_drop_all, training.cond_drop_each, training.camera_drop,
                     conditioning.agent_feature_dropout})
        if (p < 0 || p > 1) throw ConfigError("dropout probabilities must lie in [0,1]");
    if (training.latent_std <= 0) throw ConfigError("latent_std must be positive");
    if (inference.linear_steps >= inference.steps)
        throw ConfigError("inference.linear_steps must be < inference.steps");
    if (inference.steps < 1) throw ConfigError("inference.steps must be >= 1");
    if (inference.context_latents < 1 || inference.context_latents >= world_model.latents_t)
        throw ConfigError("context_latents must be in [1, latents_t)");
    if (preset == "toy" && world_model_tokens() > 2048)
        throw ConfigError("toy preset exceeds the 2048 world-model token budget");
}

RunConfig preset_config(const std::string& name) {
    RunConfig c;
    if (name == "toy") {
        c.preset = "toy";
        c.training.tokenizer = OptimConfig{
            2200, 2, 0.9, 0.95,
            LrScheduleConfig{"cooldown", 100, 400, 2e-3, 2e-4}};
        c.training.world_model = OptimConfig{
            5000, 4, 0.9, 0.99,
            LrScheduleConfig{"cosine", 200, 0, 1.5e-3, 1e-4}};
        c.training.ema_decay = 0.998;
        c.training.latent_stats_auto = true;
        c.dataset.samples = 256;
    } else if (name == "paper-shape") {
        c.preset = "paper-shape";
        c.dataset = DatasetConfig{24, 5, 448, 960, 25.0, 16, 256, 240, 24, 1000.0, "none", 0.0, true};
        c.tokenizer.stem_dim = 64;
        c.tokenizer.embed_dim = 512;
        c.tokenizer.heads = 16;
        c.tokenizer.encoder_blocks = 24;
        c.tokenizer.decoder_blocks_mid = 16;
        c.tokenizer.decoder_blocks_hi = 8;
        c.tokenizer.latent_dim = 64;
        c.world_model.blocks = 22;
        c.world_model.dim = 4096;
        c.world_model.heads = 32;
        c.world_model.latents_t = 6;
        c.conditioning.clip_dim = 512;
        c.conditioning.scenario_dim = 256;
        c.training.tokenizer = OptimConfig{
            300000, 128, 0.9, 0.95,
            LrScheduleConfig{"cooldown", 2500, 5000, 1e-4, 1e-5}};
        c.training.world_model = OptimConfig{
            460000, 256, 0.9, 0.99,
            LrScheduleConfig{"cosine", 2500, 0, 5e-5, 6.5e-6}};
        c.inference.context_latents = 3;
    } else {
        throw ConfigError("unknown preset: " + name + " (expected toy or paper-shape)");
    }
    c.validate();
    return c;
}

RunConfig parse_config_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    if (j.contains("preset")) c = preset_config(j.at("preset").get<std::string>());
    io_run(nullptr, &j, c);
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path_or_preset) {
    if (path_or_preset == "toy" || path_or_preset == "paper-shape")
        return preset_config(path_or_preset);
    std::ifstream f(path_or_preset);
    if (!f) throw ConfigError("cannot open config: " + path_or_preset);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_json(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    json j = json::parse(cfg.canonical_json());
    json* node = &j;
    std::string rest = key;
    size_t pos;
    while ((pos = rest.find('.')) != std::string::npos) {
        std::string head = rest.substr(0, pos);
        if (!node->contains(head)) throw ConfigError("unknown config key: " + key);
        node = &(*node)[head];
        rest = rest.substr(pos + 1);
    }
    if (!node->contains(rest)) throw ConfigError("unknown config key: " + key);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }
    (*node)[rest] = parsed;
    cfg = parse_config_json(j.dump());
}

}  // namespace miniwm
