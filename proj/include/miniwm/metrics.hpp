#pragma once

#include <map>
#include <string>
#include <vector>

#include "miniwm/config.hpp"
#include "miniwm/render.hpp"
#include "miniwm/tensor.hpp"

namespace miniwm {

struct FeatureSet {
    Tensor<double> features;  // [n, d]
    uint64_t extractor_seed = 0;

    int64_t count() const { return features.empty() ? 0 : features.dim(0); }
    int64_t dim() const { return features.empty() ? 0 : features.dim(1); }
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root
// goes through symmetric eigendecompositions, with eigenvalues above -1e-8
// clamped to zero.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Frozen seeded extractor (same family as the tokenizer teacher), spatially
// pooled to `extractor_dim` per temporal step per camera.
FeatureSet extract_features(const Tensor<float>& frames, const MetricsConfig& cfg);

// Accumulates rows from several videos into one set.
FeatureSet extract_features_many(const std::vector<Tensor<float>>& videos,
                                 const MetricsConfig& cfg);

struct IouReport {
    std::map<std::string, double> per_category;   // category name -> IoU
    std::map<std::string, int64_t> support;       // pixels in box union per category
};

// Rasterized conditioning boxes vs ground-truth masks, pooled globally per
// category across frames and cameras.
IouReport conditioning_iou(const VideoSample& sample);

// IoU of two axis-aligned boxes given as (x1,y1,x2,y2).
double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

}  // namespace miniwm
