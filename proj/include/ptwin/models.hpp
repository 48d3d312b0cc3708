#pragma once

// The two predictors: a strided-conv regression network that maps a frame
// stack to a scalar pore count, and a factorized space/time transformer with
// a dense fusion head that maps the same stack to a 16x16 porosity grid.

#include <string>
#include <vector>

#include "ptwin/nn.hpp"
#include "ptwin/optim.hpp"

namespace ptwin {

// ---------------------------------------------------------------------------
// Count model: 4 x (conv 3x3 stride 2 pad 1 -> batchnorm -> relu), channels
// halving from the frame count, then two fully connected layers to a scalar.
// ---------------------------------------------------------------------------

struct CnnConfig {
    std::int64_t in_frames = 200;
    std::int64_t hw = 64;
    std::int64_t kernel = 3;
    std::int64_t stride = 2;
    std::int64_t pad = 1;
    std::int64_t conv_layers = 4;
    std::int64_t fc_hidden = 64;

    std::vector<std::int64_t> channel_schedule() const {
        std::vector<std::int64_t> ch{in_frames};
        for (std::int64_t i = 0; i < conv_layers; ++i)
            ch.push_back(std::max<std::int64_t>(1, ch.back() / 2));
        return ch;
    }
    std::vector<std::int64_t> spatial_schedule() const {
        std::vector<std::int64_t> s{hw};
        for (std::int64_t i = 0; i < conv_layers; ++i)
            s.push_back(conv_out_extent(s.back(), kernel, stride, pad));
        return s;
    }
    std::int64_t flat_dim() const {
        const auto ch = channel_schedule();
        const auto sp = spatial_schedule();
        return ch.back() * sp.back() * sp.back();
    }
    void validate() const {
        if (in_frames < 1 || hw < 1) throw ConfigError("count model needs frames and extent >= 1");
        if (fc_hidden < 1) throw ConfigError("fc_hidden must be >= 1");
    }
};

template <typename T>
class CnnModelT {
public:
    CnnModelT() = default;
    CnnModelT(const CnnConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const auto ch = cfg.channel_schedule();
        for (std::int64_t i = 0; i < cfg.conv_layers; ++i) {
            convs_.emplace_back(rng, ch[i], ch[i + 1], cfg.kernel, cfg.stride, cfg.pad);
            norms_.emplace_back(ch[i + 1]);
        }
        fc1_ = nn::Linear<T>(rng, cfg.flat_dim(), cfg.fc_hidden);
        fc2_ = nn::Linear<T>(rng, cfg.fc_hidden, 1);
    }

    // x: [N, frames, hw, hw] -> [N]
    TensorT<T> forward(const TensorT<T>& x, bool training) {
        const auto& s = x.shape();
        if (s.size() != 4 || s[1] != cfg_.in_frames || s[2] != cfg_.hw || s[3] != cfg_.hw)
            throw DimensionError("count model input must be [N, " +
                                 std::to_string(cfg_.in_frames) + ", " + std::to_string(cfg_.hw) +
                                 ", " + std::to_string(cfg_.hw) + "], got " + shape_str(s));
        TensorT<T> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i)
            h = relu(norms_[i].forward(convs_[i].forward(h), training));
        h = reshape(h, {s[0], cfg_.flat_dim()});
        h = relu(fc1_.forward(h));
        h = fc2_.forward(h);
        return reshape(h, {s[0]});
    }

    // inference: eval-mode statistics, no tape, rounded to whole pores
    std::vector<double> predict(const TensorT<T>& x) {
        NoGradGuard ng;
        TensorT<T> y = forward(x, false);
        std::vector<double> out(y.data().size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = std::nearbyint(static_cast<double>(y.data()[i]));
        return out;
    }

    nn::NamedTensors<T> named_tensors() const {
        nn::NamedTensors<T> all;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].collect(all, "cnn.conv" + std::to_string(i + 1));
            norms_[i].collect(all, "cnn.bn" + std::to_string(i + 1));
        }
        fc1_.collect(all, "cnn.fc1");
        fc2_.collect(all, "cnn.fc2");
        return all;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& nt : named_tensors())
            if (nt.trainable) n += nt.tensor.numel();
        return n;
    }

    const CnnConfig& config() const { return cfg_; }

private:
    CnnConfig cfg_;
    std::vector<nn::Conv2d<T>> convs_;
    std::vector<nn::BatchNorm2d<T>> norms_;
    nn::Linear<T> fc1_, fc2_;
};

using CnnModel = CnnModelT<float>;

// ---------------------------------------------------------------------------
// Locate model: patch tokens with learned space/time positions, per-frame
// spatial attention (with a class token) followed by per-position temporal
// attention, then a residual-convolution fusion head that upsamples the 4x4
// token grid to the 16x16 output.
// ---------------------------------------------------------------------------

struct VivitConfig {
    std::int64_t frames = 200;
    std::int64_t hw = 64;
    std::int64_t patch_px = 16;
    std::int64_t dim = 256;
    std::int64_t heads = 8;
    std::int64_t spatial_layers = 4;
    std::int64_t temporal_layers = 5;
    std::int64_t out_grid = 16;

    std::int64_t grid() const { return hw / patch_px; }
    std::int64_t patches_per_frame() const { return grid() * grid(); }
    void validate() const {
        if (hw % patch_px != 0) throw ConfigError("patch size must divide the frame extent");
        if (grid() != 4) throw ConfigError("the fusion head expects a 4x4 token grid");
        if (dim % heads != 0) throw ConfigError("attention heads must divide the model dimension");
        if (out_grid != 16) throw ConfigError("the dense head produces a 16x16 grid");
        if (frames < 1) throw ConfigError("at least one frame required");
    }
};

template <typename T>
class VivitModelT {
public:
    VivitModelT() = default;
    VivitModelT(const VivitConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        patch_proj_ = nn::Linear<T>(rng, cfg.patch_px * cfg.patch_px, cfg.dim);
        spatial_pos_ = TensorT<T>::random_normal(rng, {cfg.patches_per_frame(), cfg.dim}, 0, 0.02);
        temporal_pos_ = TensorT<T>::random_normal(rng, {cfg.frames, 1, cfg.dim}, 0, 0.02);
        spatial_cls_ = TensorT<T>::random_normal(rng, {1, 1, cfg.dim}, 0, 0.02);
        temporal_cls_ = TensorT<T>::random_normal(rng, {1, 1, cfg.dim}, 0, 0.02);
        spatial_pos_.set_requires_grad();
        temporal_pos_.set_requires_grad();
        spatial_cls_.set_requires_grad();
        temporal_cls_.set_requires_grad();
        for (std::int64_t i = 0; i < cfg.spatial_layers; ++i)
            spatial_blocks_.emplace_back(rng, cfg.dim, cfg.heads);
        for (std::int64_t i = 0; i < cfg.temporal_layers; ++i)
            temporal_blocks_.emplace_back(rng, cfg.dim, cfg.heads);

        const std::int64_t d = cfg.dim;
        auto half = [](std::int64_t v) { return std::max<std::int64_t>(1, v / 2); };
        res1_a_ = nn::Conv2d<T>(rng, d, d, 3, 1, 1);
        res1_b_ = nn::Conv2d<T>(rng, d, d, 3, 1, 1);
        res2_a_ = nn::Conv2d<T>(rng, d, d, 3, 1, 1);
        res2_b_ = nn::Conv2d<T>(rng, d, d, 3, 1, 1);
        const std::int64_t c1 = half(d), c2 = half(c1), c3 = half(c2);
        head1_ = nn::Conv2d<T>(rng, d, c1, 3, 1, 1);
        head2_ = nn::Conv2d<T>(rng, c1, c2, 3, 1, 1);
        head3_ = nn::Conv2d<T>(rng, c2, c3, 3, 1, 1);
        head4_ = nn::Conv2d<T>(rng, c3, 1, 3, 1, 1);
    }

    // x: [N, frames, hw, hw] -> tokens [N, frames, patches, dim]
    TensorT<T> tokenize(const TensorT<T>& x) const {
        const auto& s = x.shape();
        if (s.size() != 4 || s[1] != cfg_.frames || s[2] != cfg_.hw || s[3] != cfg_.hw)
            throw DimensionError("locate model input must be [N, " + std::to_string(cfg_.frames) +
                                 ", " + std::to_string(cfg_.hw) + ", " + std::to_string(cfg_.hw) +
                                 "], got " + shape_str(s));
        const std::int64_t n = s[0], f = cfg_.frames, g = cfg_.grid(), p = cfg_.patch_px;
        TensorT<T> t = reshape(x, {n, f, g, p, g, p});
        t = permute(t, {0, 1, 2, 4, 3, 5});                       // [N,F,gh,gw,p,p]
        t = reshape(t, {n * f * g * g, p * p});
        t = patch_proj_.forward(t);                               // [N*F*P, dim]
        t = reshape(t, {n, f, g * g, cfg_.dim});
        t = add(t, spatial_pos_);                                 // per patch position
        TensorT<T> tpos = expand(temporal_pos_, {cfg_.frames, cfg_.patches_per_frame(), cfg_.dim});
        return add(t, tpos);                                      // per frame position
    }

    // per-frame self attention over that frame's patch tokens plus a class
    // token; the class token is dropped on output
    TensorT<T> spatial_encode(const TensorT<T>& tokens) const {
        const auto& s = tokens.shape();
        const std::int64_t n = s[0], f = s[1], p = s[2], d = s[3];
        TensorT<T> h = reshape(tokens, {n * f, p, d});
        h = concat(expand(spatial_cls_, {n * f, 1, d}), h, 1);
        for (const auto& blk : spatial_blocks_) h = blk.forward(h);
        h = slice(h, 1, 1, p);  // remove the class token
        return reshape(h, {n, f, p, d});
    }

    // per-position self attention across time plus a class token; output is
    // the mean over the time tokens after the last block
    TensorT<T> temporal_encode(const TensorT<T>& tokens) const {
        const auto& s = tokens.shape();
        const std::int64_t n = s[0], f = s[1], p = s[2], d = s[3];
        TensorT<T> h = permute(tokens, {0, 2, 1, 3});  // [N,P,F,D]
        h = reshape(h, {n * p, f, d});
        h = concat(expand(temporal_cls_, {n * p, 1, d}), h, 1);
        for (const auto& blk : temporal_blocks_) h = blk.forward(h);
        h = slice(h, 1, 1, f);
        h = mean_axis(h, 1);  // collapse time
        return reshape(h, {n, p, d});
    }

    // residual fusion head: token grid 4x4 -> 8x8 -> 16x16 probability map
    TensorT<T> fuse_dense_head(const TensorT<T>& grid_tokens) const {
        const auto& s = grid_tokens.shape();
        const std::int64_t n = s[0], g = cfg_.grid(), d = cfg_.dim;
        TensorT<T> h = reshape(grid_tokens, {n, g, g, d});
        h = permute(h, {0, 3, 1, 2});  // [N,D,4,4]
        h = add(h, res1_b_.forward(relu(res1_a_.forward(h))));
        h = upsample_nearest2x(h);     // 8x8
        h = add(h, res2_b_.forward(relu(res2_a_.forward(h))));
        h = upsample_nearest2x(h);     // 16x16
        h = relu(head1_.forward(h));
        h = relu(head2_.forward(h));
        h = relu(head3_.forward(h));
        h = sigmoid(head4_.forward(h));
        return reshape(h, {n, cfg_.out_grid, cfg_.out_grid});
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return fuse_dense_head(temporal_encode(spatial_encode(tokenize(x))));
    }

    // binarized inference grids at the 0.5 decision level
    std::vector<Array2D<std::uint8_t>> predict(const TensorT<T>& x) const {
        NoGradGuard ng;
        TensorT<T> y = forward(x);
        const std::int64_t n = y.shape()[0];
        std::vector<Array2D<std::uint8_t>> grids;
        grids.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            Array2D<std::uint8_t> g(static_cast<std::size_t>(cfg_.out_grid),
                                    static_cast<std::size_t>(cfg_.out_grid));
            for (std::int64_t j = 0; j < cfg_.out_grid * cfg_.out_grid; ++j)
                g.raw()[static_cast<std::size_t>(j)] =
                    y.data()[static_cast<std::size_t>(i * cfg_.out_grid * cfg_.out_grid + j)] >
                            T(0.5)
                        ? 1
                        : 0;
            grids.push_back(std::move(g));
        }
        return grids;
    }

    nn::NamedTensors<T> named_tensors() const {
        nn::NamedTensors<T> all;
        patch_proj_.collect(all, "vivit.patch_proj");
        all.push_back({"vivit.spatial_pos", spatial_pos_, true});
        all.push_back({"vivit.temporal_pos", temporal_pos_, true});
        all.push_back({"vivit.spatial_cls", spatial_cls_, true});
        all.push_back({"vivit.temporal_cls", temporal_cls_, true});
        for (std::size_t i = 0; i < spatial_blocks_.size(); ++i)
            spatial_blocks_[i].collect(all, "vivit.spatial" + std::to_string(i + 1));
        for (std::size_t i = 0; i < temporal_blocks_.size(); ++i)
            temporal_blocks_[i].collect(all, "vivit.temporal" + std::to_string(i + 1));
        res1_a_.collect(all, "vivit.fuse.res1a");
        res1_b_.collect(all, "vivit.fuse.res1b");
        res2_a_.collect(all, "vivit.fuse.res2a");
        res2_b_.collect(all, "vivit.fuse.res2b");
        head1_.collect(all, "vivit.head1");
        head2_.collect(all, "vivit.head2");
        head3_.collect(all, "vivit.head3");
        head4_.collect(all, "vivit.head4");
        return all;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& nt : named_tensors())
            if (nt.trainable) n += nt.tensor.numel();
        return n;
    }

    const VivitConfig& config() const { return cfg_; }

private:
    VivitConfig cfg_;
    nn::Linear<T> patch_proj_;
    TensorT<T> spatial_pos_, temporal_pos_, spatial_cls_, temporal_cls_;
    std::vector<nn::TransformerBlock<T>> spatial_blocks_;
    std::vector<nn::TransformerBlock<T>> temporal_blocks_;
    nn::Conv2d<T> res1_a_, res1_b_, res2_a_, res2_b_;
    nn::Conv2d<T> head1_, head2_, head3_, head4_;
};

using VivitModel = VivitModelT<float>;

}  // namespace ptwin
