#pragma once

// Layers used by the two models. Each layer registers its tensors under a
// hierarchical name so checkpoints and the optimizer can address them.

#include <cmath>
#include <string>
#include <vector>

#include "ptwin/tensor.hpp"

namespace ptwin::nn {

template <typename T>
struct NamedTensor {
    std::string name;
    TensorT<T> tensor;
    bool trainable = true;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

template <typename T>
inline std::vector<TensorT<T>> trainable(const NamedTensors<T>& all) {
    std::vector<TensorT<T>> out;
    for (const auto& p : all)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

// Kaiming-uniform weight init for ReLU-family fan-in.
template <typename T>
inline TensorT<T> kaiming_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return TensorT<T>::random_uniform(rng, std::move(shape), -bound, bound);
}

template <typename T>
inline TensorT<T> bias_uniform(Rng& rng, std::int64_t n, std::int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return TensorT<T>::random_uniform(rng, {n}, -bound, bound);
}

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(Rng& rng, std::int64_t in, std::int64_t out)
        : weight(kaiming_uniform<T>(rng, {in, out}, in)), bias(bias_uniform<T>(rng, out, in)) {
        weight.set_requires_grad();
        bias.set_requires_grad();
    }

    TensorT<T> forward(const TensorT<T>& x) const { return add(matmul(x, weight), bias); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight, true});
        out.push_back({prefix + ".bias", bias, true});
    }

    TensorT<T> weight;  // [in, out]
    TensorT<T> bias;    // [out]
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Rng& rng, std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
           std::int64_t stride_, std::int64_t pad_)
        : stride(stride_), pad(pad_),
          weight(kaiming_uniform<T>(rng, {out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel)),
          bias(bias_uniform<T>(rng, out_ch, in_ch * kernel * kernel)) {
        weight.set_requires_grad();
        bias.set_requires_grad();
    }

    TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight, true});
        out.push_back({prefix + ".bias", bias, true});
    }

    std::int64_t stride = 2, pad = 1;
    TensorT<T> weight;  // [out, in, k, k]
    TensorT<T> bias;    // [out]
};

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(std::int64_t channels)
        : gamma(TensorT<T>::full({channels}, T(1))), beta(TensorT<T>::zeros({channels})) {
        gamma.set_requires_grad();
        beta.set_requires_grad();
        state.running_mean = TensorT<T>::zeros({channels});
        state.running_var = TensorT<T>::full({channels}, T(1));
    }

    TensorT<T> forward(const TensorT<T>& x, bool training) {
        return batch_norm(x, gamma, beta, state, training);
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma, true});
        out.push_back({prefix + ".beta", beta, true});
        out.push_back({prefix + ".running_mean", state.running_mean, false});
        out.push_back({prefix + ".running_var", state.running_var, false});
    }

    TensorT<T> gamma, beta;
    BatchNormState<T> state;
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::int64_t n)
        : gain(TensorT<T>::full({n}, T(1))), bias(TensorT<T>::zeros({n})) {
        gain.set_requires_grad();
        bias.set_requires_grad();
    }

    TensorT<T> forward(const TensorT<T>& x) const { return layer_norm(x, -1, gain, bias); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gain", gain, true});
        out.push_back({prefix + ".bias", bias, true});
    }

    TensorT<T> gain, bias;
};

// Multi-head self-attention over [B, n, dim] token sequences.
template <typename T>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(Rng& rng, std::int64_t dim_, std::int64_t heads_)
        : dim(dim_), heads(heads_), wq(rng, dim_, dim_), wk(rng, dim_, dim_),
          wv(rng, dim_, dim_), wo(rng, dim_, dim_) {
        if (dim % heads != 0) throw ConfigError("attention heads must divide the model dimension");
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        const auto& s = x.shape();
        if (s.size() != 3 || s[2] != dim)
            throw DimensionError("attention input must be [batch, tokens, dim]");
        const std::int64_t b = s[0], n = s[1];
        const std::int64_t dk = dim / heads;
        auto split = [&](const TensorT<T>& t) {
            // [B, n, dim] -> [B, heads, n, dk]
            return permute(reshape(t, {b, n, heads, dk}), {0, 2, 1, 3});
        };
        TensorT<T> q = split(wq.forward(x));
        TensorT<T> k = split(wk.forward(x));
        TensorT<T> v = split(wv.forward(x));
        TensorT<T> scores = scale(matmul(q, permute(k, {0, 1, 3, 2})),
                                  1.0 / std::sqrt(static_cast<double>(dk)));
        TensorT<T> alpha = softmax(scores, -1);
        TensorT<T> ctx = matmul(alpha, v);                        // [B, h, n, dk]
        ctx = reshape(permute(ctx, {0, 2, 1, 3}), {b, n, dim});   // back to [B, n, dim]
        return wo.forward(ctx);
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        wq.collect(out, prefix + ".wq");
        wk.collect(out, prefix + ".wk");
        wv.collect(out, prefix + ".wv");
        wo.collect(out, prefix + ".wo");
    }

    std::int64_t dim = 0, heads = 0;
    Linear<T> wq, wk, wv, wo;
};

// Pre-norm transformer block: x + MHA(LN(x)), then + MLP(LN(x)) with the
// usual 4x hidden expansion.
template <typename T>
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(Rng& rng, std::int64_t dim, std::int64_t heads)
        : ln1(dim), attn(rng, dim, heads), ln2(dim), fc1(rng, dim, 4 * dim), fc2(rng, 4 * dim, dim) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        TensorT<T> h = add(x, attn.forward(ln1.forward(x)));
        TensorT<T> m = fc2.forward(gelu(fc1.forward(ln2.forward(h))));
        return add(h, m);
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        ln1.collect(out, prefix + ".ln1");
        attn.collect(out, prefix + ".attn");
        ln2.collect(out, prefix + ".ln2");
        fc1.collect(out, prefix + ".mlp.fc1");
        fc2.collect(out, prefix + ".mlp.fc2");
    }

    LayerNorm<T> ln1;
    MultiHeadAttention<T> attn;
    LayerNorm<T> ln2;
    Linear<T> fc1, fc2;
};

}  // namespace ptwin::nn
