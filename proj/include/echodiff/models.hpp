// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "echodiff/ops.hpp"
#include "echodiff/rng.hpp"
#include "echodiff/tensor.hpp"

namespace echodiff {

/// Shared shape configuration for the conditional nets.
struct ModelConfig {
    int side = 64;          // square image side
    int z_dim = 8;          // latent vector length
    int total_steps = 1000; // normalizes the step-embedding plane to t/T
    bool onehot_mask = false;
    std::uint64_t seed = 1;

    int guide_channels() const { return onehot_mask ? 4 : 1; }
};

/// Constant plane holding t/T; t = 0 gives an all-zero plane.
template <typename T>
Tensor<T> time_plane(std::int64_t n, std::int64_t h, std::int64_t w, int t, int total_steps) {
    return Tensor<T>::full({n, 1, h, w}, static_cast<T>(static_cast<double>(t) / total_steps));
}

template <typename T>
struct ConvLayer {
    Tensor<T> weight;  // [co, ci, k, k]
    Tensor<T> bias;    // [co]; left undefined for layers feeding a norm,
                       // where a channel shift is a dead parameter
    std::int64_t stride = 1;
    std::int64_t pad = 1;

    static ConvLayer make(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t stride, std::int64_t pad,
                          bool with_bias = true) {
        ConvLayer l;
        l.weight = Tensor<T>::zeros({co, ci, k, k});
        if (with_bias) l.bias = Tensor<T>::zeros({co});
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return bias.defined() ? conv2d(x, weight, bias, stride, pad) : conv2d(x, weight, stride, pad);
    }
};

namespace detail {

template <typename T>
void init_normal(std::vector<Tensor<T>*> params, std::uint64_t seed, double stddev) {
    Rng rng(seed);
    for (auto* p : params) {
        for (auto& v : p->mutable_data()) v = static_cast<T>(rng.normal() * stddev);
        p->set_requires_grad(true);
    }
}

inline void check_side(const char* who, int side, int divisor) {
    if (side < 8 || side % divisor != 0) {
        throw UsageError(std::string(who) + ": image side " + std::to_string(side) +
                         " must be a positive multiple of " + std::to_string(divisor));
    }
}

}  // namespace detail

/// Encoder-decoder x0 predictor. Consumes the noisy image, the guide mask
/// plane(s) and a t/T plane; an 8-d latent draw is broadcast-concatenated at
/// the bottleneck; skip connections feed each upsampling stage.
template <typename T>
struct GeneratorNet {
    ModelConfig cfg;
    ConvLayer<T> down1, down2, down3;  // stride-2, widths 32 -> 64 -> 128
    ConvLayer<T> mid;                  // bottleneck after latent injection
    ConvLayer<T> up1, up2, up3;        // after nearest-neighbor 2x upsample + skip
    ConvLayer<T> head;                 // final 1-channel conv, tanh range

    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        const std::pair<const char*, ConvLayer<T>*> layers[] = {
            {"down1", &down1}, {"down2", &down2}, {"down3", &down3}, {"mid", &mid},
            {"up1", &up1},     {"up2", &up2},     {"up3", &up3},     {"head", &head}};
        for (const auto& [name, layer] : layers) {
            out.emplace_back(std::string(name) + ".w", &layer->weight);
            if (layer->bias.defined()) out.emplace_back(std::string(name) + ".b", &layer->bias);
        }
        return out;
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto* p : parameters()) n += p->numel();
        return n;
    }

    /// Deep copy: fresh parameter storage, no graph participation.
    GeneratorNet clone() const {
        GeneratorNet g = *this;
        auto src = const_cast<GeneratorNet*>(this)->parameters();
        auto dst = g.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            *dst[i] = src[i]->detached();
            dst[i]->set_requires_grad(true);
        }
        return g;
    }

    Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& guide, int t, const Tensor<T>& z) const {
        if (x_t.shape().size() != 4 || x_t.shape()[1] != 1 || x_t.shape()[2] != cfg.side ||
            x_t.shape()[3] != cfg.side) {
            throw UsageError("generator: expected input [N,1," + std::to_string(cfg.side) + "," +
                             std::to_string(cfg.side) + "], got " + shape_str(x_t.shape()));
        }
        if (guide.shape().size() != 4 || guide.shape()[0] != x_t.shape()[0] ||
            guide.shape()[1] != cfg.guide_channels() || guide.shape()[2] != cfg.side ||
            guide.shape()[3] != cfg.side) {
            throw UsageError("generator: guide shape " + shape_str(guide.shape()) + " does not match input " +
                             shape_str(x_t.shape()));
        }
        if (z.shape().size() != 2 || z.shape()[0] != x_t.shape()[0] || z.shape()[1] != cfg.z_dim) {
            throw UsageError("generator: latent shape " + shape_str(z.shape()) + " does not match configured size " +
                             std::to_string(cfg.z_dim));
        }
        const auto n = x_t.shape()[0];
        const std::int64_t s = cfg.side;
        auto tp = time_plane<T>(n, s, s, t, cfg.total_steps);
        auto h0 = concat_channels<T>({x_t, guide, tp});
        auto d1 = leaky_relu(instance_norm(down1(h0)));
        auto d2 = leaky_relu(instance_norm(down2(d1)));
        auto d3 = leaky_relu(instance_norm(down3(d2)));
        auto zb = broadcast_plane(z, s / 8, s / 8);
        auto b = leaky_relu(instance_norm(mid(concat_channels<T>({d3, zb}))));
        auto u1 = leaky_relu(instance_norm(up1(concat_channels<T>({upsample2x(b), d2}))));
        auto u2 = leaky_relu(instance_norm(up2(concat_channels<T>({upsample2x(u1), d1}))));
        auto u3 = leaky_relu(instance_norm(up3(concat_channels<T>({upsample2x(u2), h0}))));
        return tanh(head(u3));
    }
};

/// Patch classifier over (candidate x_{t-k}, conditioning x_t, t/T plane).
/// Four stride-2 blocks, widths 32 -> 256; final 1-channel logit map whose
/// spatial size is side/16 for sides divisible by 16 (ceil-halving rule with
/// pad 1 otherwise).
template <typename T>
struct DiscriminatorNet {
    ModelConfig cfg;
    ConvLayer<T> c1, c2, c3, c4, head;

    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        const std::pair<const char*, ConvLayer<T>*> layers[] = {
            {"c1", &c1}, {"c2", &c2}, {"c3", &c3}, {"c4", &c4}, {"head", &head}};
        for (const auto& [name, layer] : layers) {
            out.emplace_back(std::string(name) + ".w", &layer->weight);
            if (layer->bias.defined()) out.emplace_back(std::string(name) + ".b", &layer->bias);
        }
        return out;
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto* p : parameters()) n += p->numel();
        return n;
    }

    DiscriminatorNet clone() const {
        DiscriminatorNet d = *this;
        auto src = const_cast<DiscriminatorNet*>(this)->parameters();
        auto dst = d.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            *dst[i] = src[i]->detached();
            dst[i]->set_requires_grad(true);
        }
        return d;
    }

    Tensor<T> forward(const Tensor<T>& candidate, const Tensor<T>& x_t, int t) const {
        detail::check_same_shape("discriminator", candidate, x_t);
        if (candidate.shape().size() != 4 || candidate.shape()[1] != 1 || candidate.shape()[2] != cfg.side ||
            candidate.shape()[3] != cfg.side) {
            throw UsageError("discriminator: expected input [N,1," + std::to_string(cfg.side) + "," +
                             std::to_string(cfg.side) + "], got " + shape_str(candidate.shape()));
        }
        const auto n = candidate.shape()[0];
        auto tp = time_plane<T>(n, cfg.side, cfg.side, t, cfg.total_steps);
        auto h = concat_channels<T>({candidate, x_t, tp});
        h = leaky_relu(c1(h));
        h = leaky_relu(c2(h));
        h = leaky_relu(c3(h));
        h = leaky_relu(c4(h));
        return head(h);
    }
};

/// Builds the generator with parameters drawn from a seeded normal
/// (standard deviation 0.02). The side must be a multiple of 8.
template <typename T>
GeneratorNet<T> build_generator(const ModelConfig& cfg) {
    detail::check_side("build_generator", cfg.side, 8);
    if (cfg.z_dim < 1) throw UsageError("build_generator: z_dim must be positive");
    const std::int64_t in_ch = 2 + cfg.guide_channels();
    GeneratorNet<T> g;
    g.cfg = cfg;
    g.down1 = ConvLayer<T>::make(in_ch, 32, 3, 2, 1, false);
    g.down2 = ConvLayer<T>::make(32, 64, 3, 2, 1, false);
    g.down3 = ConvLayer<T>::make(64, 128, 3, 2, 1, false);
    g.mid = ConvLayer<T>::make(128 + cfg.z_dim, 128, 3, 1, 1, false);
    g.up1 = ConvLayer<T>::make(128 + 64, 64, 3, 1, 1, false);
    g.up2 = ConvLayer<T>::make(64 + 32, 32, 3, 1, 1, false);
    g.up3 = ConvLayer<T>::make(32 + in_ch, 32, 3, 1, 1, false);
    g.head = ConvLayer<T>::make(32, 1, 3, 1, 1);
    detail::init_normal<T>(g.parameters(), cfg.seed, 0.02);
    return g;
}

/// Builds the patch discriminator, seeded like the generator but from an
/// independent stream. The side must be a multiple of 8 (multiples of 16
/// give the exact side/16 logit map).
template <typename T>
DiscriminatorNet<T> build_discriminator(const ModelConfig& cfg) {
    detail::check_side("build_discriminator", cfg.side, 8);
    DiscriminatorNet<T> d;
    d.cfg = cfg;
    d.c1 = ConvLayer<T>::make(3, 32, 3, 2, 1);
    d.c2 = ConvLayer<T>::make(32, 64, 3, 2, 1);
    d.c3 = ConvLayer<T>::make(64, 128, 3, 2, 1);
    d.c4 = ConvLayer<T>::make(128, 256, 3, 2, 1);
    d.head = ConvLayer<T>::make(256, 1, 3, 1, 1);
    detail::init_normal<T>(d.parameters(), derive_seed(cfg.seed, "discriminator"), 0.02);
    return d;
}

/// Predicted clean image for one reverse step. Deterministic in
/// (parameters, x_t, guide, t, z); output lies in the tanh range.
template <typename T>
Tensor<T> generator_predict(const GeneratorNet<T>& gen, const Tensor<T>& x_t, const Tensor<T>& guide, int t,
                            const Tensor<T>& z) {
    Tensor<T> zb = z;
    if (z.defined() && z.shape().size() == 1) {
        zb = reshape(z, {1, z.shape()[0]});
    }
    return gen.forward(x_t, guide, t, zb);
}

/// Patch logit map; callers reduce it with mean_all for a scalar score.
template <typename T>
Tensor<T> discriminator_score(const DiscriminatorNet<T>& disc, const Tensor<T>& candidate, const Tensor<T>& x_t,
                              int t) {
    return disc.forward(candidate, x_t, t);
}

}  // namespace echodiff
