#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pvdm/data/dataset.hpp"
#include "pvdm/eval/metrics.hpp"
#include "pvdm/nn/params.hpp"
#include "pvdm/tensor/nn_ops.hpp"
#include "pvdm/tensor/ops.hpp"

namespace pvdm::eval {

/// Frozen, seeded random 3D-conv pyramid. A clip's feature vector is the
/// spatio-temporal mean of every stage's activations, concatenated.
class ToyVideoExtractor {
public:
    explicit ToyVideoExtractor(uint64_t seed = 0, std::vector<int64_t> channels = {16, 32, 64})
        : seed_(seed), channels_(std::move(channels)) {
        if (channels_.empty()) throw std::invalid_argument("extractor needs at least one stage");
        Rng rng = derive_rng(seed, {0xFEA7});
        int64_t in = 3;
        for (size_t i = 0; i < channels_.size(); ++i) {
            const std::string name = "extractor.conv" + std::to_string(i);
            const float std = std::sqrt(2.0f / static_cast<float>(in * 27));
            params_.add(name + ".weight", Tensor<float>::randn({channels_[i], in, 3, 3, 3}, rng, std), false);
            params_.add(name + ".bias", Tensor<float>({channels_[i]}), false);
            in = channels_[i];
        }
    }

    uint64_t seed() const { return seed_; }
    const std::vector<int64_t>& channels() const { return channels_; }
    int64_t dim() const {
        int64_t d = 0;
        for (int64_t c : channels_) d += c;
        return d;
    }

    /// clips [B, 3, S, H, W] -> features [B, dim()].
    Eigen::MatrixXd operator()(const Tensor<float>& clips) const {
        if (clips.rank() != 5 || clips.dim(1) != 3) throw std::invalid_argument("extractor expects [B,3,S,H,W]");
        NoGradGuard ng;
        const int64_t B = clips.dim(0);
        Eigen::MatrixXd out(B, dim());
        Var<float> h = Var<float>::constant(clips);
        int64_t col = 0;
        for (size_t i = 0; i < channels_.size(); ++i) {
            const std::string name = "extractor.conv" + std::to_string(i);
            const std::array<int64_t, 3> stride = i == 0 ? std::array<int64_t, 3>{1, 1, 1} : std::array<int64_t, 3>{2, 2, 2};
            h = leaky_relu(conv3d(h, params_.get(name + ".weight"), params_.get(name + ".bias"), stride, {1, 1, 1}), 0.2f);
            const Tensor<float>& v = h.value();
            const int64_t C = v.dim(1), n = v.numel() / (B * C);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    double acc = 0;
                    const float* p = v.data() + (b * C + c) * n;
                    for (int64_t k = 0; k < n; ++k) acc += p[k];
                    out(b, col + c) = acc / static_cast<double>(n);
                }
            col += C;
        }
        return out;
    }

private:
    uint64_t seed_;
    std::vector<int64_t> channels_;
    ParamStore<float> params_;
};

using FeatureFn = std::function<Eigen::MatrixXd(const Tensor<float>&)>;
using ReconstructFn = std::function<Tensor<float>(const Tensor<float>&)>;

/// Features of clips [N, 3, S, H, W], extracted in batches.
inline Eigen::MatrixXd extract_features(const Tensor<float>& clips, const FeatureFn& extractor, int64_t batch = 16) {
    Eigen::MatrixXd out;
    for (int64_t i = 0; i < clips.dim(0); i += batch) {
        const int64_t n = std::min(batch, clips.dim(0) - i);
        Eigen::MatrixXd f = extractor(slice(clips, 0, i, n));
        if (out.size() == 0) out.resize(clips.dim(0), f.cols());
        out.middleRows(i, n) = f;
    }
    return out;
}

inline FeatureStats feature_stats(const Tensor<float>& clips, const FeatureFn& extractor) {
    if (clips.dim(0) < 2) throw std::invalid_argument("feature_stats: need at least two clips");
    return feature_stats(extract_features(clips, extractor));
}

/// Frechet distance between features of real clips and their reconstructions.
inline double r_fvd(const Tensor<float>& real, const ReconstructFn& reconstruct, const FeatureFn& extractor,
                    int64_t batch = 8) {
    std::vector<Tensor<float>> parts;
    for (int64_t i = 0; i < real.dim(0); i += batch) parts.push_back(reconstruct(slice(real, 0, i, std::min(batch, real.dim(0) - i))));
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    const Tensor<float> recon = concat(ptrs, 0);
    return frechet_distance(feature_stats(real, extractor), feature_stats(recon, extractor));
}

/// r_fvd over the fixed evaluation protocol of a dataset.
inline double r_fvd(const data::DatasetHandle& ds, const ReconstructFn& reconstruct, const FeatureFn& extractor, size_t n,
                    int64_t clip_length, uint64_t seed) {
    const auto clips = data::eval_clip_protocol(ds, n, clip_length, seed, true);
    return r_fvd(data::stack_clips(clips), reconstruct, extractor);
}

}  // namespace pvdm::eval
