#pragma once

#include <cstdint>
#include <string>

#include "pvdm/errors.hpp"

namespace pvdm::ae {

enum class ProjectionKind { transformer, mean };

struct AutoencoderConfig {
    // clip geometry
    int64_t S = 8, H = 64, W = 64;
    // d = patch * pool
    int64_t patch = 4;
    int64_t pool = 2;
    int64_t C = 4;

    int64_t width = 64;
    int heads = 4;
    int64_t mlp_hidden = 128;
    int depth_hi = 0;   // blocks at patch resolution, before pooling
    int depth = 2;      // factorized blocks at latent resolution
    int dec_depth = 2;
    int dec_depth_hi = 0;

    ProjectionKind projection = ProjectionKind::transformer;
    int proj_depth = 1;
    int64_t proj_width = 32;
    int proj_heads = 2;
    int64_t proj_mlp = 64;

    // Backbone attention restricted to each token itself; only for tests.
    bool local_attention = false;

    int64_t d() const { return patch * pool; }
    int64_t Hp() const { return H / d(); }
    int64_t Wp() const { return W / d(); }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("autoencoder: " + m); };
        if (S <= 0 || H <= 0 || W <= 0) fail("clip extents must be positive");
        if (patch <= 0 || pool <= 0) fail("patch and pool must be positive");
        if (d() <= 1) fail("downsampling factor d = patch * pool must exceed 1, got " + std::to_string(d()));
        if (H % d() != 0 || W % d() != 0)
            fail("H and W must be multiples of d = " + std::to_string(d()));
        if (C <= 0) fail("latent channels must be positive");
        if (width <= 0 || heads <= 0 || width % heads != 0) fail("width must be a positive multiple of heads");
        if (proj_width <= 0 || proj_heads <= 0 || proj_width % proj_heads != 0)
            fail("projection width must be a positive multiple of projection heads");
        if (mlp_hidden <= 0 || proj_mlp <= 0) fail("MLP widths must be positive");
        if (depth < 0 || depth_hi < 0 || dec_depth < 0 || dec_depth_hi < 0 || proj_depth < 0) fail("depths must be >= 0");
    }
};

/// Geometry of the full-scale 256x256x16 model: patch 4x4x1, extra 2x2
/// pooling (d = 8), C = 4, projection transformers 4 layers / 4 heads /
/// hidden 384 / MLP 512.
inline AutoencoderConfig reference_autoencoder_config() {
    AutoencoderConfig c;
    c.S = 16;
    c.H = c.W = 256;
    c.patch = 4;
    c.pool = 2;
    c.C = 4;
    c.width = 384;
    c.heads = 4;
    c.mlp_hidden = 1536;
    c.depth_hi = 2;
    c.depth = 6;
    c.dec_depth = 6;
    c.dec_depth_hi = 2;
    c.proj_depth = 4;
    c.proj_width = 384;
    c.proj_heads = 4;
    c.proj_mlp = 512;
    return c;
}

/// 64x64x8 desk model, d = 8, C = 4.
inline AutoencoderConfig desk_autoencoder_config() { return AutoencoderConfig{}; }

/// Scalars in one triplane latent: C * (H'W' + SW' + SH').
inline int64_t latent_dim(const AutoencoderConfig& c) {
    return c.C * (c.Hp() * c.Wp() + c.S * c.Wp() + c.S * c.Hp());
}

/// Scalars in the equivalent cubic latent: C * S * H' * W'.
inline int64_t cubic_latent_dim(const AutoencoderConfig& c) { return c.C * c.S * c.Hp() * c.Wp(); }

inline const char* to_string(ProjectionKind k) { return k == ProjectionKind::transformer ? "transformer" : "mean"; }

inline ProjectionKind parse_projection(const std::string& s) {
    if (s == "transformer") return ProjectionKind::transformer;
    if (s == "mean") return ProjectionKind::mean;
    throw ConfigError("unknown projection kind '" + s + "'");
}

}  // namespace pvdm::ae
