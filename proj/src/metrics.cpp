#include "miniwm/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "miniwm/errors.hpp"
#include "miniwm/tokenizer.hpp"

namespace miniwm {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void gaussian_fit(const FeatureSet& s, Vec& mu, Mat& cov) {
    int64_t n = s.count(), d = s.dim();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        s.features.data(), n, d);
    mu = X.colwise().mean();
    Mat centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / double(n - 1);
}

Mat psd_sqrt(const Mat& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    Vec ev = es.eigenvalues();
    double scale = std::max(1.0, std::abs(ev.maxCoeff()));
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-8 * scale)
            throw NumericError(std::string(what) + ": eigenvalue below tolerance");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    if (a.count() < 2 || b.count() < 2)
        throw DataError("frechet distance needs at least 2 samples per set");
    if (a.dim() != b.dim()) throw ShapeError("feature dims disagree");
    if (!a.features.all_finite() || !b.features.all_finite())
        throw NumericError("non-finite features");

    Vec mu_a, mu_b;
    Mat cov_a, cov_b;
    gaussian_fit(a, mu_a, cov_a);
    gaussian_fit(b, mu_b, cov_b);

    double mean_term = (mu_a - mu_b).squaredNorm();
    // Tr sqrt(Sa Sb) = Tr sqrt(sqrt(Sa) Sb sqrt(Sa)), which is symmetric
    Mat ra = psd_sqrt(cov_a, "covariance a");
    Mat inner = ra * cov_b * ra;
    inner = 0.5 * (inner + inner.transpose());
    Mat cross = psd_sqrt(inner, "cross covariance");

    double d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    return std::max(d, 0.0);
}

FeatureSet extract_features(const Tensor<float>& frames, const MetricsConfig& cfg) {
    // frames [T,H,W,3] (one camera) or [T,N,H,W,3]
    std::vector<Tensor<float>> videos;
    if (frames.rank() == 5) {
        for (int64_t n = 0; n < frames.dim(1); ++n) videos.push_back(camera_video(frames, n));
    } else if (frames.rank() == 4) {
        videos.push_back(frames);
    } else {
        throw ShapeError("extract_features expects [T,H,W,3] or [T,N,H,W,3]");
    }
    return extract_features_many(videos, cfg);
}

FeatureSet extract_features_many(const std::vector<Tensor<float>>& videos,
                                 const MetricsConfig& cfg) {
    static thread_local std::map<std::pair<uint64_t, int64_t>, Teacher<float>> cache;
    auto key = std::make_pair(cfg.extractor_seed, cfg.extractor_dim);
    auto it = cache.find(key);
    if (it == cache.end())
        it = cache.emplace(key, Teacher<float>(cfg.extractor_seed, cfg.extractor_dim, 4)).first;
    const Teacher<float>& extractor = it->second;

    std::vector<std::vector<double>> rows;
    for (const auto& v : videos) {
        if (v.rank() != 4) throw ShapeError("extractor expects [T,H,W,3] videos");
        Tensor<float> batched = v.reshaped({1, v.dim(0), v.dim(1), v.dim(2), v.dim(3)});
        Tensor<float> f = extractor.features(batched);  // [1,Tt,h,w,d]
        int64_t Tt = f.dim(1), hw = f.dim(2) * f.dim(3), d = f.dim(4);
        for (int64_t t = 0; t < Tt; ++t) {
            std::vector<double> row(size_t(d), 0.0);
            for (int64_t p = 0; p < hw; ++p)
                for (int64_t k = 0; k < d; ++k) row[size_t(k)] += double(f[(t * hw + p) * d + k]);
            for (auto& x : row) x /= double(hw);
            rows.push_back(std::move(row));
        }
    }
    FeatureSet out;
    out.extractor_seed = cfg.extractor_seed;
    out.features = Tensor<double>({int64_t(rows.size()), cfg.extractor_dim});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), out.features.data() + int64_t(i) * cfg.extractor_dim);
    return out;
}

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    double inter = ix * iy;
    double area_a = (a[2] - a[0]) * (a[3] - a[1]);
    double area_b = (b[2] - b[0]) * (b[3] - b[1]);
    double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

IouReport conditioning_iou(const VideoSample& sample) {
    int64_t T = sample.frames_t(), N = sample.n_cameras(), H = sample.height(),
            W = sample.width();
    int64_t n_cats = int64_t(taxonomy::agent_categories().size());

    // rasterize the conditioned boxes per category
    std::vector<std::vector<uint8_t>> box_raster(size_t(n_cats),
                                                 std::vector<uint8_t>(size_t(T * N * H * W), 0));
    for (const auto& agent : sample.spec.agents) {
        for (int64_t t = 0; t < T; ++t)
            for (int64_t n = 0; n < N; ++n) {
                auto b = project_box(agent.at(t), sample.cameras[size_t(n)], W, H);
                if (!b) continue;
                int64_t x0 = int64_t((*b)[0] * double(W)), y0 = int64_t((*b)[1] * double(H));
                int64_t x1 = int64_t(std::ceil((*b)[2] * double(W)));
                int64_t y1 = int64_t(std::ceil((*b)[3] * double(H)));
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t x = x0; x < x1; ++x)
                        box_raster[size_t(agent.category)][size_t(((t * N + n) * H + y) * W + x)] = 1;
            }
    }

    IouReport report;
    for (int64_t c = 0; c < n_cats; ++c) {
        int64_t inter = 0, uni = 0;
        const auto& boxes = box_raster[size_t(c)];
        for (int64_t i = 0; i < T * N * H * W; ++i) {
            bool in_box = boxes[size_t(i)] != 0;
            bool in_mask = sample.masks[size_t(i)] == uint8_t(c + 1);
            if (in_box && in_mask) ++inter;
            if (in_box || in_mask) ++uni;
        }
        if (uni == 0) continue;  // category absent
        report.per_category[taxonomy::agent_categories()[size_t(c)]] =
            double(inter) / double(uni);
        report.support[taxonomy::agent_categories()[size_t(c)]] = uni;
    }
    return report;
}

}  // namespace miniwm
