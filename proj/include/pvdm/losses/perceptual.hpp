#pragma once

#include <string>
#include <vector>

#include "pvdm/nn/layers.hpp"
#include "pvdm/tensor/ops.hpp"

namespace pvdm::losses {

/// Frozen random convolutional pyramid used as the desk perceptual feature
/// network. Each stage is conv3x3 followed by leaky ReLU; all but the first
/// stage downsample by 2.
template <typename T>
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(uint64_t seed = 0, std::vector<int64_t> channels = {8, 16, 32}) : channels_(channels) {
        Rng rng = derive_rng(seed, {0x1F1F5});
        int64_t in = 3;
        for (size_t i = 0; i < channels.size(); ++i) {
            const std::string name = "lpips.conv" + std::to_string(i);
            // He-scaled normal init keeps activations from vanishing across stages.
            const T std = std::sqrt(T(2) / static_cast<T>(in * 9));
            Var<T> w = params_.add(name + ".weight", Tensor<T>::randn({channels[i], in, 3, 3}, rng, std), false);
            Var<T> b = params_.add(name + ".bias", Tensor<T>({channels[i]}), false);
            nn::Conv2d<T> conv;
            conv.weight = w;
            conv.bias = b;
            conv.stride = i == 0 ? 1 : 2;
            conv.pad = 1;
            convs_.push_back(conv);
            in = channels[i];
        }
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const std::vector<nn::Conv2d<T>>& stages() const { return convs_; }

    /// frames [N, 3, H, W] -> one feature map per stage.
    std::vector<Var<T>> features(const Var<T>& frames) const {
        std::vector<Var<T>> out;
        Var<T> h = frames;
        for (const auto& c : convs_) {
            h = leaky_relu(c(h), T(0.2));
            out.push_back(h);
        }
        return out;
    }

private:
    std::vector<int64_t> channels_;
    ParamStore<T> params_;
    std::vector<nn::Conv2d<T>> convs_;
};

/// Clips [B, 3, S, H, W] -> frames [B*S, 3, H, W].
template <typename T>
Var<T> clip_frames(const Var<T>& x) {
    if (x.rank() != 5 || x.dim(1) != 3) throw std::invalid_argument("expected clips [B,3,S,H,W], got " + shape_str(x.shape()));
    return reshape(permute(x, {0, 2, 1, 3, 4}), {x.dim(0) * x.dim(2), 3, x.dim(3), x.dim(4)});
}

/// LPIPS-style distance: at every stage unit-normalize features along
/// channels, take the squared difference summed over channels and averaged
/// over positions, then add the stages. Averaged over frames.
template <typename T>
Var<T> perceptual_loss(const Var<T>& x, const Var<T>& y, const PerceptualExtractor<T>& extractor) {
    if (x.shape() != y.shape()) throw std::invalid_argument("perceptual_loss: shape mismatch");
    auto fx = extractor.features(clip_frames(x));
    auto fy = extractor.features(clip_frames(y));
    Var<T> total;
    for (size_t l = 0; l < fx.size(); ++l) {
        const T channels = static_cast<T>(fx[l].dim(1));
        Var<T> d = scale(mean_sq_diff(normalize_channels(fx[l]), normalize_channels(fy[l])), channels);
        total = l == 0 ? d : add(total, d);
    }
    return total;
}

}  // namespace pvdm::losses
