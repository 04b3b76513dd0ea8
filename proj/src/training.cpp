#include "miniwm/training.hpp"

#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

double LrSchedule::at(int64_t step) const {
    if (total_steps <= 0) throw ConfigError("schedule needs total_steps");
    step = std::min(step, total_steps);
    if (cfg.warmup > 0 && step <= cfg.warmup)
        return cfg.base_lr * double(step) / double(cfg.warmup);
    if (cfg.shape == "cosine") {
        double span = double(std::max<int64_t>(total_steps - cfg.warmup, 1));
        double x = double(step - cfg.warmup) / span;
        return cfg.final_lr + (cfg.base_lr - cfg.final_lr) * 0.5 * (1.0 + std::cos(M_PI * x));
    }
    if (cfg.shape == "cooldown") {
        int64_t tail_start = total_steps - cfg.cooldown;
        if (step <= tail_start || cfg.cooldown <= 0) return cfg.base_lr;
        double x = double(step - tail_start) / double(cfg.cooldown);
        return cfg.base_lr + (cfg.final_lr - cfg.base_lr) * x;
    }
    throw ConfigError("unknown lr schedule shape: " + cfg.shape);
}

Task sample_task(Rng& rng, const TrainingConfig& cfg) {
    double total = cfg.task_scratch + cfg.task_context + cfg.task_inpaint;
    if (std::abs(total - 1.0) > 1e-9 || cfg.task_scratch < 0 || cfg.task_context < 0 ||
        cfg.task_inpaint < 0)
        throw ConfigError("task mixture must be nonnegative and sum to 1");
    double u = rng.uniform();
    if (u < cfg.task_scratch) return Task::Scratch;
    if (u < cfg.task_scratch + cfg.task_context) return Task::Context;
    return Task::Inpaint;
}

Tensor<float> make_inpaint_mask(Rng& rng, int64_t T, int64_t N, int64_t H, int64_t W) {
    Tensor<float> mask({T, N, H, W});
    // random camera subset (nonempty), random spatial rectangle, all of time
    std::vector<uint8_t> cams(size_t(N), 0);
    int64_t n_sel = rng.range(1, N);
    for (int64_t i = 0; i < n_sel; ++i) cams[size_t(rng.range(0, N - 1))] = 1;
    if (std::count(cams.begin(), cams.end(), 1) == 0) cams[0] = 1;
    int64_t y0 = rng.range(0, H - 1), y1 = rng.range(y0, H - 1);
    int64_t x0 = rng.range(0, W - 1), x1 = rng.range(x0, W - 1);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t n = 0; n < N; ++n) {
            if (!cams[size_t(n)]) continue;
            for (int64_t y = y0; y <= y1; ++y)
                for (int64_t x = x0; x <= x1; ++x) mask[((t * N + n) * H + y) * W + x] = 1.0f;
        }
    return mask;
}

CondFlags conditioning_dropout(Rng& rng, const TrainingConfig& cfg) {
    if (rng.bernoulli(cfg.cond_drop_all)) return all_drop();
    CondFlags f = no_drop();
    for (int i = 0; i < kCondVarCount; ++i) f[size_t(i)] = rng.bernoulli(cfg.cond_drop_each);
    return f;
}

std::vector<uint8_t> camera_dropout(Rng& rng, int64_t n_cams, double p) {
    std::vector<uint8_t> keep(size_t(n_cams), 1);
    for (auto& k : keep) k = rng.bernoulli(p) ? 0 : 1;
    if (std::count(keep.begin(), keep.end(), 1) == 0) keep[size_t(rng.below(uint64_t(n_cams)))] = 1;
    return keep;
}

void EmaState::init(const Params<float>& params) {
    shadow.clear();
    for (const auto& name : params.names()) shadow.emplace(name, params.at(name));
}

void EmaState::update(const Params<float>& params) {
    float d = float(decay);
    for (auto& [name, sh] : shadow) {
        const Tensor<float>& p = params.at(name);
        float* ps = sh.data();
        const float* pp = p.data();
        for (int64_t i = 0, n = sh.numel(); i < n; ++i) ps[i] = d * ps[i] + (1.0f - d) * pp[i];
    }
}

void EmaState::overwrite(Params<float>& params) const {
    for (const auto& [name, sh] : shadow) params.at(name) = sh;
}

double global_grad_norm(const std::map<std::string, Tensor<float>>& grads) {
    double acc = 0;
    for (const auto& [name, g] : grads)
        for (int64_t i = 0; i < g.numel(); ++i) acc += double(g[i]) * double(g[i]);
    return std::sqrt(acc);
}

double AdamW::step(Params<float>& params, std::map<std::string, Tensor<float>>& grads, double lr) {
    double gn = global_grad_norm(grads);
    double scale = (clip > 0 && gn > clip) ? clip / gn : 1.0;
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, double(step_count));
    double bc2 = 1.0 - std::pow(beta2, double(step_count));

    for (const auto& name : params.names()) {
        Tensor<float>& p = params.at(name);
        auto git = grads.find(name);
        Tensor<float> zero;
        const Tensor<float>* g = nullptr;
        if (git != grads.end() && !git->second.empty()) {
            g = &git->second;
        } else {
            zero = Tensor<float>::zeros(p.shape());
            g = &zero;
        }
        auto mit = m.find(name);
        if (mit == m.end()) {
            mit = m.emplace(name, Tensor<float>::zeros(p.shape())).first;
            v.emplace(name, Tensor<float>::zeros(p.shape()));
        }
        Tensor<float>& mm = mit->second;
        Tensor<float>& vv = v.at(name);
        float b1 = float(beta1), b2 = float(beta2);
        for (int64_t i = 0; i < p.numel(); ++i) {
            float gi = float(double((*g)[i]) * scale);
            mm[i] = b1 * mm[i] + (1.0f - b1) * gi;
            vv[i] = b2 * vv[i] + (1.0f - b2) * gi * gi;
            double mhat = double(mm[i]) / bc1;
            double vhat = double(vv[i]) / bc2;
            double update = mhat / (std::sqrt(vhat) + eps) + weight_decay * double(p[i]);
            p[i] = float(double(p[i]) - lr * update);
        }
    }
    return gn;
}

}  // namespace miniwm
