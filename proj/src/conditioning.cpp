#include "miniwm/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "miniwm/errors.hpp"

namespace miniwm {

double symlog(double y, const SymlogParams& p) {
    if (p.s <= 0 || p.y_max <= 0) throw ConfigError("symlog params must be positive");
    double mag = std::min(std::abs(y), p.y_max);
    double v = std::log(1.0 + p.s * mag) / std::log(1.0 + p.s * p.y_max);
    return y < 0 ? -v : v;
}

double symlog_inverse(double v, const SymlogParams& p) {
    double mag = std::min(std::abs(v), 1.0);
    double y = (std::exp(mag * std::log(1.0 + p.s * p.y_max)) - 1.0) / p.s;
    return v < 0 ? -y : y;
}

AgentFeatures build_agent_features(const std::vector<AgentTrack>& tracks,
                                   const std::vector<CameraSpec>& cams,
                                   const std::vector<int64_t>& latent_frames, int64_t width,
                                   int64_t height, int64_t max_boxes,
                                   const ConditioningConfig& cfg) {
    int64_t T = int64_t(latent_frames.size());
    int64_t N = int64_t(cams.size());
    AgentFeatures f;
    f.values = Tensor<float>({T, N, max_boxes, 13});
    f.validity.assign(size_t(T * N * max_boxes), 0);
    if (tracks.empty() || max_boxes == 0) return f;

    SymlogParams center_p{cfg.agent_center_s, cfg.agent_center_max};
    double n_cats = double(taxonomy::agent_categories().size());

    for (int64_t n = 0; n < N; ++n) {
        const CameraSpec& cam = cams[size_t(n)];
        // slots are depth-ordered per camera (nearest first) at the first
        // latent step; identity stays in its slot across time.
        std::vector<size_t> order(tracks.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        int64_t f0 = latent_frames[0];
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            double za = cam.to_camera(tracks[a].centers[size_t(f0)])[2];
            double zb = cam.to_camera(tracks[b].centers[size_t(f0)])[2];
            return za < zb;
        });
        int64_t slots = std::min<int64_t>(int64_t(order.size()), max_boxes);

        for (int64_t t = 0; t < T; ++t) {
            int64_t frame = latent_frames[size_t(t)];
            for (int64_t b = 0; b < slots; ++b) {
                const AgentTrack& tr = tracks[order[size_t(b)]];
                auto box = project_box(tr.at(frame), cam, width, height);
                if (!box) continue;
                float* dst = f.values.data() + ((t * N + n) * max_boxes + b) * 13;
                for (int k = 0; k < 4; ++k) dst[k] = float((*box)[k]);
                auto pc = cam.to_camera(tr.centers[size_t(frame)]);
                for (int k = 0; k < 3; ++k) dst[4 + k] = float(symlog(pc[k], center_p));
                for (int k = 0; k < 3; ++k)
                    dst[7 + k] = float(std::log(1.0 + tr.dims[size_t(k)]) / cfg.agent_dims_norm);
                dst[10] = float(std::sin(tr.yaws[size_t(frame)]));
                dst[11] = float(std::cos(tr.yaws[size_t(frame)]));
                dst[12] = float(double(tr.category + 1) / n_cats);
                f.validity[size_t((t * N + n) * max_boxes + b)] = 1;
            }
        }
    }
    return f;
}

void agent_feature_dropout(AgentFeatures& f, Rng& rng, double p) {
    if (p <= 0.0) return;
    int64_t T = f.values.dim(0), N = f.values.dim(1), B = f.values.dim(2);
    for (int64_t i = 0; i < T * N * B; ++i)
        for (int64_t d = 0; d < 13; ++d)
            if (rng.bernoulli(p)) f.values[i * 13 + d] = 0.0f;
}

void agent_instance_dropout(AgentFeatures& f, Rng& rng) {
    int64_t T = f.values.dim(0), N = f.values.dim(1), B = f.values.dim(2);
    for (int64_t n = 0; n < N; ++n) {
        int64_t t = rng.range(0, T - 1);
        int64_t n_inst = 0;
        for (int64_t b = 0; b < B; ++b)
            if (f.validity[size_t((t * N + n) * B + b)]) ++n_inst;
        int64_t keep = rng.range(0, std::min(B, n_inst));
        for (int64_t tt = 0; tt < T; ++tt)
            for (int64_t b = keep; b < B; ++b) {
                f.validity[size_t((tt * N + n) * B + b)] = 0;
                float* dst = f.values.data() + ((tt * N + n) * B + b) * 13;
                std::fill(dst, dst + 13, 0.0f);
            }
    }
}

Tensor<float> stub_embedding(const std::string& source, int64_t dim, uint64_t key) {
    Rng rng(fnv1a64(source) ^ (key * 0x9E3779B97F4A7C15ULL + 0x1234));
    Tensor<float> v({dim});
    double norm = 0;
    for (int64_t i = 0; i < dim; ++i) {
        v[i] = float(rng.normal());
        norm += double(v[i]) * double(v[i]);
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (int64_t i = 0; i < dim; ++i) v[i] = float(double(v[i]) / norm);
    return v;
}

std::vector<double> relative_times(const std::vector<double>& t_abs, int64_t present_index) {
    if (t_abs.empty()) return {};
    if (present_index < 0 || present_index >= int64_t(t_abs.size()))
        throw DataError("present index out of range");
    double tp = t_abs[size_t(present_index)];
    double span = 0;
    for (double t : t_abs) span = std::max(span, std::abs(t - tp));
    std::vector<double> rel(t_abs.size(), 0.0);
    if (span > 0)
        for (size_t i = 0; i < t_abs.size(); ++i) rel[i] = (t_abs[i] - tp) / span;
    return rel;
}

Tensor<float> timestamp_features(const std::vector<double>& t_abs, int64_t present_index,
                                 int64_t fourier_pairs) {
    std::vector<double> rel = relative_times(t_abs, present_index);
    int64_t T = int64_t(rel.size());
    Tensor<float> out({T, 2 * fourier_pairs});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t f = 0; f < fourier_pairs; ++f) {
            double w = std::pow(2.0, double(f));
            out[t * 2 * fourier_pairs + 2 * f] = float(std::sin(w * rel[size_t(t)]));
            out[t * 2 * fourier_pairs + 2 * f + 1] = float(std::cos(w * rel[size_t(t)]));
        }
    return out;
}

ConditioningInput make_conditioning_input(const VideoSample& sample, const RunConfig& cfg,
                                          int64_t latents_t) {
    int64_t tf = cfg.tokenizer.temporal_factor;
    int64_t T_v = sample.frames_t();
    if (latents_t * tf > T_v) throw DataError("not enough frames for requested latent steps");

    ConditioningInput in;
    std::vector<int64_t> latent_frames;
    for (int64_t t = 0; t < latents_t; ++t)
        latent_frames.push_back(std::min(t * tf + tf / 2, T_v - 1));

    const SceneSpec& sp = sample.spec;
    for (int64_t t = 0; t < latents_t; ++t) {
        int64_t fr = latent_frames[size_t(t)];
        std::array<int64_t, kMetadataFields> m{};
        m[kCountry] = sp.country;
        m[kWeather] = sp.weather;
        m[kTimeOfDay] = sp.time_of_day;
        m[kSpeedLimit] = sp.road.speed_limit;
        m[kLaneCount] = sp.road.lanes - 1;
        m[kOneWay] = sp.road.one_way ? 1 : 0;
        m[kCrossing] = sp.road.crossing ? 1 : 0;
        m[kLightState] = sp.road.light_states[size_t(fr)];
        m[kIntersection] = sp.road.intersection;
        in.metadata.push_back(m);

        double sp_sum = 0, cv_sum = 0;
        for (int64_t k = t * tf; k < (t + 1) * tf; ++k) {
            sp_sum += sp.speed[size_t(k)];
            cv_sum += sp.curvature[size_t(k)];
        }
        in.actions.push_back({sp_sum / double(tf), cv_sum / double(tf)});
        in.timestamps.push_back(sample.timestamps[size_t(fr)]);
    }

    in.clip_vec = stub_embedding("clip", cfg.conditioning.clip_dim,
                                 sp.seed ^ cfg.conditioning.embedding_seed);
    in.scenario_vec = stub_embedding("scenario", cfg.conditioning.scenario_dim,
                                     sp.seed ^ cfg.conditioning.embedding_seed);
    in.agents = build_agent_features(sp.agents, sample.cameras, latent_frames, sample.width(),
                                     sample.height(), cfg.dataset.max_agents, cfg.conditioning);
    in.cameras = sample.cameras;
    return in;
}

namespace {

const char* kMetaNames[kMetadataFields] = {"country",  "weather",  "time_of_day",
                                           "speed_limit", "lane_count", "one_way",
                                           "crossing", "light_state", "intersection"};

int64_t meta_vocab(int64_t field) {
    switch (field) {
        case kCountry: return int64_t(taxonomy::countries().size());
        case kWeather: return int64_t(taxonomy::weathers().size());
        case kTimeOfDay: return int64_t(taxonomy::times_of_day().size());
        case kSpeedLimit: return int64_t(taxonomy::speed_limits().size());
        case kLaneCount: return kLaneCountValues;
        case kOneWay: return 2;
        case kCrossing: return 2;
        case kLightState: return int64_t(taxonomy::light_states().size());
        case kIntersection: return int64_t(taxonomy::intersections().size());
        default: throw ConfigError("bad metadata field");
    }
}

}  // namespace

template <class T>
ConditioningEncoder<T>::ConditioningEncoder(Params<T>& P, const std::string& prefix,
                                            const RunConfig& cfg) {
    C = cfg.world_model.dim;
    n_cams = cfg.dataset.cameras;
    max_boxes = cfg.dataset.max_agents;
    fourier_pairs = cfg.conditioning.fourier_pairs;
    K = cfg.cond_tokens();

    for (int64_t f = 0; f < kMetadataFields; ++f)
        meta_tables.push_back(
            EmbeddingTable<T>(P, prefix + ".meta." + kMetaNames[f], meta_vocab(f), C));
    null_tokens = prefix + ".null.table";
    P.create(null_tokens, {kCondVarCount, C}, T(0.02));
    clip_proj = Linear<T>(P, prefix + ".clip_proj", cfg.conditioning.clip_dim, C);
    scenario_proj = Linear<T>(P, prefix + ".scenario_proj", cfg.conditioning.scenario_dim, C);
    agent_embed = Linear<T>(P, prefix + ".agent_embed", 13, C);
    agent_mlp = Linear<T>(P, prefix + ".agent_mlp", C, C);
    cam_intrinsics = Linear<T>(P, prefix + ".cam_intrinsics", 4, C);
    cam_extrinsics = Linear<T>(P, prefix + ".cam_extrinsics", 16, C);
    cam_distortion = Linear<T>(P, prefix + ".cam_distortion", 4, C);
    time_fc1 = Linear<T>(P, prefix + ".time_fc1", 2 * fourier_pairs, C);
    time_fc2 = Linear<T>(P, prefix + ".time_fc2", C, C);
    speed_fc = Linear<T>(P, prefix + ".speed_fc", 1, C);
    curv_fc = Linear<T>(P, prefix + ".curv_fc", 1, C);
    action_mlp = Mlp<T>(P, prefix + ".action_mlp", C, 2 * C);
}

namespace {

// mask * null + (1-mask) * token, with mask broadcast against the token.
template <class T>
Val<T> null_replace(Ctx<T>& ctx, Val<T> tokens, Val<T> null_row, Tensor<T> mask) {
    Val<T> m = ctx.tape.constant(std::move(mask));
    Val<T> keep = add_scalar(neg(m), T(1));
    return tokens * keep + null_row * m;
}

}  // namespace

template <class T>
typename ConditioningEncoder<T>::Encoded ConditioningEncoder<T>::encode(
    Ctx<T>& ctx, const std::vector<ConditioningInput>& batch,
    const ConditioningConfig& ccfg) const {
    int64_t B = int64_t(batch.size());
    if (B == 0) throw DataError("empty conditioning batch");
    int64_t Tt = int64_t(batch[0].metadata.size());
    for (const auto& in : batch)
        if (int64_t(in.metadata.size()) != Tt || int64_t(in.actions.size()) != Tt ||
            int64_t(in.timestamps.size()) != Tt)
            throw ShapeError("conditioning inputs disagree on T");

    Val<T> nulls = ctx.p(null_tokens);
    auto null_row = [&](int var) {
        return reshape(slice(nulls, 0, var, 1), {1, 1, 1, C});
    };
    auto flag_mask = [&](int var) {
        Tensor<T> m({B, 1, 1, 1});
        for (int64_t b = 0; b < B; ++b) m[b] = batch[size_t(b)].flags[size_t(var)] ? T(1) : T(0);
        return m;
    };

    std::vector<Val<T>> token_parts;

    // metadata: one token per field per timestep
    for (int64_t f = 0; f < kMetadataFields; ++f) {
        std::vector<int64_t> idx;
        idx.reserve(size_t(B * Tt));
        for (const auto& in : batch)
            for (int64_t t = 0; t < Tt; ++t) idx.push_back(in.metadata[size_t(t)][size_t(f)]);
        Val<T> tok = reshape(meta_tables[size_t(f)](ctx, idx), {B, Tt, 1, C});
        token_parts.push_back(null_replace(ctx, tok, null_row(int(f)), flag_mask(int(f))));
    }

    // external embeddings: one token per source, shared across timesteps
    auto external = [&](const Linear<T>& proj, int var, auto get_vec, int64_t dim) {
        Tensor<T> vecs({B, dim});
        for (int64_t b = 0; b < B; ++b) {
            const Tensor<float>& v = get_vec(batch[size_t(b)]);
            if (v.numel() != dim) throw ShapeError("external embedding dim mismatch");
            for (int64_t i = 0; i < dim; ++i) vecs[b * dim + i] = T(v[i]);
        }
        Val<T> tok = reshape(proj(ctx, ctx.tape.constant(std::move(vecs))), {B, 1, 1, C});
        tok = expand(tok, {B, Tt, 1, C});
        return null_replace(ctx, tok, null_row(var), flag_mask(var));
    };
    token_parts.push_back(external(
        clip_proj, kClip, [](const ConditioningInput& in) -> const Tensor<float>& { return in.clip_vec; },
        int64_t(ctx.params.at(clip_proj.w).dim(0))));
    token_parts.push_back(external(
        scenario_proj, kScenario,
        [](const ConditioningInput& in) -> const Tensor<float>& { return in.scenario_vec; },
        int64_t(ctx.params.at(scenario_proj.w).dim(0))));

    // agent tokens: one per (camera, box slot)
    int64_t slots = n_cams * max_boxes;
    {
        Tensor<T> feats({B * Tt * slots, 13});
        Tensor<T> slot_mask({B, Tt, slots, 1});
        for (int64_t b = 0; b < B; ++b) {
            const AgentFeatures& af = batch[size_t(b)].agents;
            if (af.values.dim(0) != Tt || af.values.dim(1) != n_cams ||
                af.values.dim(2) != max_boxes)
                throw ShapeError("agent feature tensor shape mismatch");
            bool drop_all = batch[size_t(b)].flags[kAgents];
            for (int64_t t = 0; t < Tt; ++t)
                for (int64_t s = 0; s < slots; ++s) {
                    int64_t src = (t * slots + s);
                    for (int64_t d = 0; d < 13; ++d)
                        feats[((b * Tt + t) * slots + s) * 13 + d] = T(af.values[src * 13 + d]);
                    bool use_null = drop_all || !af.validity[size_t(src)];
                    slot_mask[((b * Tt + t) * slots + s)] = use_null ? T(1) : T(0);
                }
        }
        Val<T> h = gelu(agent_embed(ctx, ctx.tape.constant(std::move(feats))));
        Val<T> tok = reshape(agent_mlp(ctx, h), {B, Tt, slots, C});
        token_parts.push_back(null_replace(ctx, tok, null_row(kAgents), std::move(slot_mask)));
    }

    Val<T> tokens = concat(token_parts, 2);  // [B, T, K, C]

    // action embedding per timestep through the adaptive-norm path
    Val<T> action_emb;
    {
        Tensor<T> sp({B, Tt, 1}), cv({B, Tt, 1});
        Tensor<T> sp_mask({B, 1, 1}), cv_mask({B, 1, 1});
        SymlogParams sp_p = speed_symlog(ccfg), cv_p = curvature_symlog(ccfg);
        for (int64_t b = 0; b < B; ++b) {
            sp_mask[b] = batch[size_t(b)].flags[kSpeed] ? T(1) : T(0);
            cv_mask[b] = batch[size_t(b)].flags[kCurvature] ? T(1) : T(0);
            for (int64_t t = 0; t < Tt; ++t) {
                sp[b * Tt + t] = T(symlog(batch[size_t(b)].actions[size_t(t)][0], sp_p));
                cv[b * Tt + t] = T(symlog(batch[size_t(b)].actions[size_t(t)][1], cv_p));
            }
        }
        Val<T> sp_tok = speed_fc(ctx, ctx.tape.constant(std::move(sp)));   // [B,T,C]
        Val<T> cv_tok = curv_fc(ctx, ctx.tape.constant(std::move(cv)));
        Val<T> null_sp = reshape(slice(nulls, 0, kSpeed, 1), {1, 1, C});
        Val<T> null_cv = reshape(slice(nulls, 0, kCurvature, 1), {1, 1, C});
        Val<T> m_sp = ctx.tape.constant(std::move(sp_mask));
        Val<T> m_cv = ctx.tape.constant(std::move(cv_mask));
        sp_tok = sp_tok * add_scalar(neg(m_sp), T(1)) + null_sp * m_sp;
        cv_tok = cv_tok * add_scalar(neg(m_cv), T(1)) + null_cv * m_cv;
        action_emb = action_mlp(ctx, sp_tok + cv_tok);
    }

    // camera geometry encoding
    Val<T> camera_enc;
    {
        Tensor<T> intr({B * n_cams, 4}), extr({B * n_cams, 16}), dist({B * n_cams, 4});
        for (int64_t b = 0; b < B; ++b) {
            const auto& cams = batch[size_t(b)].cameras;
            if (int64_t(cams.size()) != n_cams) throw ShapeError("camera count mismatch");
            for (int64_t n = 0; n < n_cams; ++n) {
                const CameraSpec& c = cams[size_t(n)];
                int64_t r = b * n_cams + n;
                intr[r * 4 + 0] = T(c.fx / 256.0);
                intr[r * 4 + 1] = T(c.fy / 256.0);
                intr[r * 4 + 2] = T(c.cx / 256.0);
                intr[r * 4 + 3] = T(c.cy / 256.0);
                for (int64_t k = 0; k < 16; ++k) extr[r * 16 + k] = T(c.extrinsics[size_t(k)]);
                for (int64_t k = 0; k < 4; ++k)
                    dist[r * 4 + k] =
                        k < int64_t(c.distortion.size()) ? T(c.distortion[size_t(k)]) : T(0);
            }
        }
        Val<T> enc = cam_intrinsics(ctx, ctx.tape.constant(std::move(intr))) +
                     cam_extrinsics(ctx, ctx.tape.constant(std::move(extr))) +
                     cam_distortion(ctx, ctx.tape.constant(std::move(dist)));
        camera_enc = reshape(enc, {B, n_cams, C});
    }

    // timestamp encoding
    Val<T> time_enc;
    {
        Tensor<T> feats({B, Tt, 2 * fourier_pairs});
        for (int64_t b = 0; b < B; ++b) {
            Tensor<float> f = timestamp_features(batch[size_t(b)].timestamps,
                                                 batch[size_t(b)].present_index, fourier_pairs);
            for (int64_t i = 0; i < f.numel(); ++i) feats[b * f.numel() + i] = T(f[i]);
        }
        time_enc = time_fc2(ctx, gelu(time_fc1(ctx, ctx.tape.constant(std::move(feats)))));
    }

    return {tokens, action_emb, camera_enc, time_enc};
}

template struct ConditioningEncoder<float>;
template struct ConditioningEncoder<double>;

}  // namespace miniwm
