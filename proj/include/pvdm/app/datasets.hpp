#pragma once

#include "pvdm/app/config.hpp"
#include "pvdm/data/dataset.hpp"
#include "pvdm/data/synthetic.hpp"
#include "pvdm/data/video_io.hpp"

namespace pvdm::app {

/// Opens the configured corpus for one split.
inline data::DatasetHandle open_dataset(const RunConfig& c, data::Split split) {
    if (c.data.source == "synthetic") return data::generate_synthetic_dataset(c.synthetic_spec(), split);
    return data::load_video_dataset(c.data.root, split, c.autoencoder.S, c.autoencoder.H, c.seed);
}

inline data::DatasetHandle open_dataset(const RunConfig& c) { return open_dataset(c, data::parse_split(c.data.split)); }

/// Every clip window of the dataset stacked into [N, 3, S, H, W].
inline Tensor<float> all_clips(const data::DatasetHandle& ds) {
    std::vector<data::VideoClip> clips;
    for (size_t i = 0; i < ds.num_clips(); ++i) clips.push_back(ds.clip(i));
    return data::stack_clips(clips);
}

/// Rows `idx` of a batch tensor.
inline Tensor<float> gather_rows(const Tensor<float>& all, const std::vector<int64_t>& idx) {
    std::vector<Tensor<float>> rows;
    for (int64_t i : idx) rows.push_back(slice(all, 0, i, 1));
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& r : rows) ptrs.push_back(&r);
    return concat(ptrs, 0);
}

}  // namespace pvdm::app
