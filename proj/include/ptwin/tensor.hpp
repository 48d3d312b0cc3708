#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Scalar type is a template parameter: production code runs TensorT<float>
// (aliased to Tensor), gradient-check shadows run TensorT<double>. Storage is
// T; every reduction (matmul inner products, sums, statistics, loss totals)
// accumulates in double regardless of T. All loops are single-threaded with a
// fixed iteration order, so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptwin/common.hpp"

namespace ptwin {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) throw DimensionError("negative dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;   // empty until first write
    bool requires_grad = false;
    bool is_leaf = true;   // cleared when a tape node produces this tensor
    std::uint64_t id = 0;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

namespace detail {
inline std::uint64_t next_tensor_id() {
    static thread_local std::uint64_t counter = 0;
    return ++counter;
}
}  // namespace detail

// Global switch for tape recording (RAII via NoGradGuard).
struct GradMode {
    static bool& enabled() {
        static thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static TensorT full(Shape shape, T v) {
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), v);
        t.impl_->id = detail::next_tensor_id();
        return t;
    }

    static TensorT scalar(T v) { return full({}, v); }

    static TensorT from(std::vector<T> data, Shape shape) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw DimensionError("data length does not match shape " + shape_str(shape));
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(data);
        t.impl_->id = detail::next_tensor_id();
        return t;
    }

    static TensorT random_uniform(Rng& rng, Shape shape, double lo, double hi) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.impl_->value) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static TensorT random_normal(Rng& rng, Shape shape, double mean, double stddev) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.impl_->value) v = static_cast<T>(mean + stddev * rng.normal());
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t numel() const { return impl_->numel(); }
    std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }

    std::vector<T>& data() { return impl_->value; }
    const std::vector<T>& data() const { return impl_->value; }

    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<T>& grad() const {
        if (impl_->grad.empty()) throw ContractError("gradient not populated");
        return impl_->grad;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    TensorT& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        return *this;
    }
    bool requires_grad() const { return impl_->requires_grad; }
    bool is_leaf() const { return impl_->is_leaf; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->value[0];
    }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
struct BackwardPass {
    std::unordered_map<TensorImpl<T>*, std::vector<T>> adjoints;

    std::vector<T>* find(TensorImpl<T>* p) {
        auto it = adjoints.find(p);
        return it == adjoints.end() ? nullptr : &it->second;
    }
    std::vector<T>& at(TensorImpl<T>* p) {
        auto it = adjoints.find(p);
        if (it == adjoints.end())
            it = adjoints.emplace(p, std::vector<T>(p->value.size(), T(0))).first;
        return it->second;
    }
};

template <typename T>
struct TapeNode {
    const char* op;
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
    std::vector<std::shared_ptr<TensorImpl<T>>> tensors;  // keeps inputs/output alive
    std::function<void(BackwardPass<T>&)> backward;
};

template <typename T>
class TapeT {
public:
    static TapeT& active() {
        static thread_local TapeT tape;
        return tape;
    }

    void record(const char* op, std::initializer_list<TensorT<T>> inputs, const TensorT<T>& out,
                std::function<void(BackwardPass<T>&)> fn) {
        TapeNode<T> node;
        node.op = op;
        for (const auto& in : inputs) {
            node.input_ids.push_back(in.impl()->id);
            node.tensors.push_back(in.impl());
        }
        node.output_id = out.impl()->id;
        node.tensors.push_back(out.impl());
        node.backward = std::move(fn);
        out.impl()->is_leaf = false;
        nodes_.push_back(std::move(node));
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    const std::vector<TapeNode<T>>& nodes() const { return nodes_; }

    // Reverse sweep from a scalar loss; leaf tensors with requires_grad
    // accumulate into their grad buffers (call zero_grad between steps).
    void run_backward(const TensorT<T>& loss) {
        if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
        BackwardPass<T> bp;
        bp.at(loss.impl().get())[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(bp);
        for (auto& [impl, adj] : bp.adjoints) {
            if (!impl->requires_grad || !impl->is_leaf) continue;
            impl->ensure_grad();
            for (std::size_t i = 0; i < adj.size(); ++i) impl->grad[i] += adj[i];
        }
    }

private:
    std::vector<TapeNode<T>> nodes_;
};

template <typename T>
inline void backward(const TensorT<T>& loss) {
    TapeT<T>::active().run_backward(loss);
}

namespace detail {

template <typename T>
inline bool wants_tape(std::initializer_list<const TensorT<T>*> ins) {
    if (!GradMode::enabled()) return false;
    for (const auto* p : ins)
        if (p->requires_grad()) return true;
    return false;
}

template <typename T>
inline void mark_out(const TensorT<T>& out) {
    out.impl()->requires_grad = true;
}

// --- raw kernels; C is a double accumulator of length M*N -----------------

template <typename T>
inline void mm_acc_nn(const T* a, const T* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = static_cast<double>(arow[kk]);
            const T* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    }
}

// c[i,j] += sum_k a[i,k] * bt[j,k]   (bt laid out n x k)
template <typename T>
inline void mm_acc_nt(const T* a, const T* bt, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const T* brow = bt + j * k;
            double s = 0.0;
            for (std::int64_t kk = 0; kk < k; ++kk)
                s += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
            crow[j] += s;
        }
    }
}

// c[i,j] += sum_k at[k,i] * b[k,j]   (at laid out k x m)
template <typename T>
inline void mm_acc_tn(const T* at, const T* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
        const T* arow = at + kk * m;
        const T* brow = b + kk * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = static_cast<double>(arow[i]);
            double* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    }
}

template <typename T>
inline void add_from_acc(std::vector<T>& dst, const std::vector<double>& acc) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<T>(acc[i]);
}

template <typename T>
inline void store_from_acc(std::vector<T>& dst, const std::vector<double>& acc) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(acc[i]);
}

// Decompose a shape around one axis into (outer, n, inner).
inline void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& n,
                       std::int64_t& inner) {
    const int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range");
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Second operand may have the same shape, a shape that
// is a trailing suffix of the first (bias-style broadcast), or be a scalar.
// ---------------------------------------------------------------------------

namespace detail {
enum class BcKind { Same, Suffix, Scalar };

template <typename T>
inline BcKind broadcast_kind(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() == b.shape()) return BcKind::Same;
    if (b.numel() == 1) return BcKind::Scalar;
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() <= sa.size()) {
        bool suffix = true;
        for (std::size_t i = 0; i < sb.size(); ++i)
            if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) suffix = false;
        if (suffix) return BcKind::Suffix;
    }
    throw DimensionError("operands not broadcastable: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}
}  // namespace detail

template <typename T, typename FwdOp, typename BwdA, typename BwdB>
inline TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, FwdOp fwd,
                            BwdA dfda, BwdB dfdb) {
    using detail::BcKind;
    const BcKind kind = detail::broadcast_kind(a, b);
    const std::int64_t n = a.numel();
    const std::int64_t nb = b.numel();
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    {
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        for (std::int64_t i = 0; i < n; ++i) {
            const T bvi = (kind == BcKind::Same) ? bv[i] : bv[i % nb];
            ov[i] = fwd(av[i], bvi);
        }
    }
    if (detail::wants_tape<T>({&a, &b})) {
        detail::mark_out(out);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        TapeT<T>::active().record(name, {a, b}, out, [ai, bi, oi, kind, n, nb, dfda, dfdb](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            if (ai->requires_grad) {
                auto& ga = bp.at(ai.get());
                for (std::int64_t i = 0; i < n; ++i) {
                    const T bvi = (kind == BcKind::Same) ? bi->value[i] : bi->value[i % nb];
                    ga[i] += (*go)[i] * dfda(ai->value[i], bvi);
                }
            }
            if (bi->requires_grad) {
                auto& gb = bp.at(bi.get());
                if (kind == BcKind::Same) {
                    for (std::int64_t i = 0; i < n; ++i)
                        gb[i] += (*go)[i] * dfdb(ai->value[i], bi->value[i]);
                } else {
                    std::vector<double> acc(static_cast<std::size_t>(nb), 0.0);
                    for (std::int64_t i = 0; i < n; ++i)
                        acc[i % nb] += static_cast<double>((*go)[i]) *
                                       static_cast<double>(dfdb(ai->value[i], bi->value[i % nb]));
                    for (std::int64_t i = 0; i < nb; ++i) gb[i] += static_cast<T>(acc[i]);
                }
            }
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
inline TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
inline TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
inline TensorT<T> scale(const TensorT<T>& a, double c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = static_cast<T>(c * av[i]);
    if (detail::wants_tape<T>({&a})) {
        detail::mark_out(out);
        auto ai = a.impl(), oi = out.impl();
        TapeT<T>::active().record("scale", {a}, out, [ai, oi, c](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !ai->requires_grad) return;
            auto& ga = bp.at(ai.get());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<T>(c * (*go)[i]);
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> add_scalar(const TensorT<T>& a, double c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = static_cast<T>(av[i] + c);
    if (detail::wants_tape<T>({&a})) {
        detail::mark_out(out);
        auto ai = a.impl(), oi = out.impl();
        TapeT<T>::active().record("add_scalar", {a}, out, [ai, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !ai->requires_grad) return;
            auto& ga = bp.at(ai.get());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("relu", {x}, out, [xi, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xi->value[i] > T(0)) gx[i] += (*go)[i];
        });
    }
    return out;
}

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("sigmoid", {x}, out, [xi, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const T y = oi->value[i];
                gx[i] += (*go)[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        ov[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("gelu", {x}, out, [xi, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double v = static_cast<double>(xi->value[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += static_cast<T>(static_cast<double>((*go)[i]) * (cdf + v * pdf));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    TensorT<T> out = TensorT<T>::from(x.data(), std::move(new_shape));
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("reshape", {x}, out, [xi, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i];
        });
    }
    return out;
}

namespace detail {
inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// dst[i] = src[perm_map(i)]: walks destination coords, gathering from source.
template <typename Ts, typename Td>
inline void permute_copy(const Ts* src, Td* dst, const Shape& dst_shape,
                         const std::vector<std::int64_t>& src_strides_for_dst_axes) {
    const std::size_t r = dst_shape.size();
    const std::int64_t n = shape_numel(dst_shape);
    std::vector<std::int64_t> coord(r, 0);
    std::int64_t src_off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = static_cast<Td>(src[src_off]);
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            src_off += src_strides_for_dst_axes[d];
            if (++coord[d] < dst_shape[d]) break;
            src_off -= src_strides_for_dst_axes[d] * dst_shape[d];
            coord[d] = 0;
        }
    }
}
}  // namespace detail

template <typename T>
inline TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& perm) {
    const auto& s = x.shape();
    if (perm.size() != s.size()) throw DimensionError("permute rank mismatch");
    Shape out_shape(perm.size());
    auto src_strides = detail::row_major_strides(s);
    std::vector<std::int64_t> gather(perm.size());
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const int p = perm[i];
        if (p < 0 || p >= static_cast<int>(s.size()) || seen[p])
            throw DimensionError("invalid permutation");
        seen[p] = true;
        out_shape[i] = s[p];
        gather[i] = src_strides[p];
    }
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    if (out.numel() > 0)
        detail::permute_copy(x.data().data(), out.data().data(), out_shape, gather);
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        // inverse permutation routes the adjoint back
        std::vector<int> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
        TapeT<T>::active().record("permute", {x}, out, [xi, oi, inv](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            auto go_strides = detail::row_major_strides(oi->shape);
            std::vector<std::int64_t> gather2(inv.size());
            for (std::size_t i = 0; i < inv.size(); ++i) gather2[i] = go_strides[inv[i]];
            std::vector<T> tmp(gx.size());
            detail::permute_copy(go->data(), tmp.data(), xi->shape, gather2);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> slice(const TensorT<T>& x, int axis, std::int64_t start, std::int64_t len) {
    std::int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (start < 0 || len < 0 || start + len > n) throw DimensionError("slice out of range");
    Shape out_shape = x.shape();
    out_shape[axis < 0 ? axis + x.rank() : axis] = len;
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(ov.data() + o * len * inner, xv.data() + (o * n + start) * inner,
                    static_cast<std::size_t>(len * inner) * sizeof(T));
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("slice", {x}, out,
                                  [xi, oi, outer, n, inner, start, len](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* src = go->data() + o * len * inner;
                T* dst = gx.data() + (o * n + start) * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b, int axis) {
    if (a.rank() != b.rank()) throw DimensionError("concat rank mismatch");
    std::int64_t outer, na, inner;
    detail::axis_split(a.shape(), axis, outer, na, inner);
    std::int64_t outer_b, nb, inner_b;
    detail::axis_split(b.shape(), axis, outer_b, nb, inner_b);
    if (outer != outer_b || inner != inner_b) throw DimensionError("concat shape mismatch");
    const int ax = axis < 0 ? axis + static_cast<int>(a.rank()) : axis;
    Shape out_shape = a.shape();
    out_shape[ax] = na + nb;
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    auto& ov = out.data();
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(ov.data() + (o * (na + nb)) * inner, av.data() + o * na * inner,
                    static_cast<std::size_t>(na * inner) * sizeof(T));
        std::memcpy(ov.data() + (o * (na + nb) + na) * inner, bv.data() + o * nb * inner,
                    static_cast<std::size_t>(nb * inner) * sizeof(T));
    }
    if (detail::wants_tape<T>({&a, &b})) {
        detail::mark_out(out);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        TapeT<T>::active().record("concat", {a, b}, out,
                                  [ai, bi, oi, outer, na, nb, inner](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            if (ai->requires_grad) {
                auto& ga = bp.at(ai.get());
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = go->data() + (o * (na + nb)) * inner;
                    T* dst = ga.data() + o * na * inner;
                    for (std::int64_t i = 0; i < na * inner; ++i) dst[i] += src[i];
                }
            }
            if (bi->requires_grad) {
                auto& gb = bp.at(bi.get());
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = go->data() + (o * (na + nb) + na) * inner;
                    T* dst = gb.data() + o * nb * inner;
                    for (std::int64_t i = 0; i < nb * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

// Tile dimensions of size 1 up to the requested shape (same rank).
template <typename T>
inline TensorT<T> expand(const TensorT<T>& x, const Shape& out_shape) {
    const auto& s = x.shape();
    if (s.size() != out_shape.size()) throw DimensionError("expand rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] != out_shape[i] && s[i] != 1) throw DimensionError("expand needs size-1 dims");
    auto src_strides = detail::row_major_strides(s);
    std::vector<std::int64_t> gather(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) gather[i] = (s[i] == 1) ? 0 : src_strides[i];
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    if (out.numel() > 0)
        detail::permute_copy(x.data().data(), out.data().data(), out_shape, gather);
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("expand", {x}, out, [xi, oi, gather](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            std::vector<double> acc(gx.size(), 0.0);
            const auto& os = oi->shape;
            const std::size_t r = os.size();
            std::vector<std::int64_t> coord(r, 0);
            std::int64_t src_off = 0;
            const std::int64_t n = shape_numel(os);
            for (std::int64_t i = 0; i < n; ++i) {
                acc[src_off] += static_cast<double>((*go)[i]);
                for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
                    src_off += gather[d];
                    if (++coord[d] < os[d]) break;
                    src_off -= gather[d] * os[d];
                    coord[d] = 0;
                }
            }
            detail::add_from_acc(gx, acc);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> sum(const TensorT<T>& x) {
    double acc = 0.0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("sum", {x}, out, [xi, oi](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            const T g = (*go)[0];
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

template <typename T>
inline TensorT<T> mean(const TensorT<T>& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    double acc = 0.0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    const double inv_n = 1.0 / static_cast<double>(x.numel());
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc * inv_n));
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("mean", {x}, out, [xi, oi, inv_n](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            const T g = static_cast<T>(static_cast<double>((*go)[0]) * inv_n);
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

// Mean over one axis (the axis is dropped from the output shape).
template <typename T>
inline TensorT<T> mean_axis(const TensorT<T>& x, int axis) {
    std::int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (n == 0) throw DimensionError("mean over empty axis");
    const int ax = axis < 0 ? axis + static_cast<int>(x.rank()) : axis;
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (static_cast<int>(i) != ax) out_shape.push_back(x.shape()[i]);
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < n; ++k) acc += static_cast<double>(xv[(o * n + k) * inner + i]);
            ov[o * inner + i] = static_cast<T>(acc * inv_n);
        }
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("mean_axis", {x}, out,
                                  [xi, oi, outer, n, inner, inv_n](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t k = 0; k < n; ++k)
                    for (std::int64_t i = 0; i < inner; ++i)
                        gx[(o * n + k) * inner + i] +=
                            static_cast<T>(static_cast<double>((*go)[o * inner + i]) * inv_n);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> softmax(const TensorT<T>& x, int axis) {
    std::int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (n == 0) throw DimensionError("softmax over empty axis");
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            T mx = xv[base];
            for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                const double e = std::exp(static_cast<double>(xv[base + k * inner] - mx));
                ov[base + k * inner] = static_cast<T>(e);
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::int64_t k = 0; k < n; ++k)
                ov[base + k * inner] = static_cast<T>(static_cast<double>(ov[base + k * inner]) * inv);
        }
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("softmax", {x}, out,
                                  [xi, oi, outer, n, inner](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            const auto& y = oi->value;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * n * inner + i;
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < n; ++k)
                        dot += static_cast<double>((*go)[base + k * inner]) *
                               static_cast<double>(y[base + k * inner]);
                    for (std::int64_t k = 0; k < n; ++k) {
                        const std::int64_t idx = base + k * inner;
                        gx[idx] += static_cast<T>(static_cast<double>(y[idx]) *
                                                  (static_cast<double>((*go)[idx]) - dot));
                    }
                }
        });
    }
    return out;
}

// Normalizes over `axis`; gain/bias have length = extent of that axis.
template <typename T>
inline TensorT<T> layer_norm(const TensorT<T>& x, int axis, const TensorT<T>& gain,
                             const TensorT<T>& bias, double eps = 1e-5) {
    std::int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (gain.numel() != n || bias.numel() != n)
        throw DimensionError("layer_norm affine parameters must match the normalized axis");
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    auto& ov = out.data();
    auto normed = std::make_shared<std::vector<T>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            double m = 0.0;
            for (std::int64_t k = 0; k < n; ++k) m += static_cast<double>(xv[base + k * inner]);
            m /= static_cast<double>(n);
            double var = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                const double d = static_cast<double>(xv[base + k * inner]) - m;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double istd = 1.0 / std::sqrt(var + eps);
            (*inv_std)[o * inner + i] = istd;
            for (std::int64_t k = 0; k < n; ++k) {
                const std::int64_t idx = base + k * inner;
                const double yn = (static_cast<double>(xv[idx]) - m) * istd;
                (*normed)[idx] = static_cast<T>(yn);
                ov[idx] = static_cast<T>(yn * static_cast<double>(gv[k]) + static_cast<double>(bv[k]));
            }
        }
    if (detail::wants_tape<T>({&x, &gain, &bias})) {
        detail::mark_out(out);
        auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
        TapeT<T>::active().record("layer_norm", {x, gain, bias}, out,
                                  [xi, gi, bi, oi, outer, n, inner, normed, inv_std](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            if (gi->requires_grad || bi->requires_grad) {
                std::vector<double> gacc(static_cast<std::size_t>(n), 0.0);
                std::vector<double> bacc(static_cast<std::size_t>(n), 0.0);
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < inner; ++i) {
                        const std::int64_t base = o * n * inner + i;
                        for (std::int64_t k = 0; k < n; ++k) {
                            const std::int64_t idx = base + k * inner;
                            gacc[k] += static_cast<double>((*go)[idx]) * static_cast<double>((*normed)[idx]);
                            bacc[k] += static_cast<double>((*go)[idx]);
                        }
                    }
                if (gi->requires_grad) detail::add_from_acc(bp.at(gi.get()), gacc);
                if (bi->requires_grad) detail::add_from_acc(bp.at(bi.get()), bacc);
            }
            if (xi->requires_grad) {
                auto& gx = bp.at(xi.get());
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < inner; ++i) {
                        const std::int64_t base = o * n * inner + i;
                        double mean_g = 0.0, mean_gy = 0.0;
                        for (std::int64_t k = 0; k < n; ++k) {
                            const std::int64_t idx = base + k * inner;
                            const double gh = static_cast<double>((*go)[idx]) * static_cast<double>(gi->value[k]);
                            mean_g += gh;
                            mean_gy += gh * static_cast<double>((*normed)[idx]);
                        }
                        mean_g /= static_cast<double>(n);
                        mean_gy /= static_cast<double>(n);
                        const double istd = (*inv_std)[o * inner + i];
                        for (std::int64_t k = 0; k < n; ++k) {
                            const std::int64_t idx = base + k * inner;
                            const double gh = static_cast<double>((*go)[idx]) * static_cast<double>(gi->value[k]);
                            gx[idx] += static_cast<T>(istd * (gh - mean_g -
                                       static_cast<double>((*normed)[idx]) * mean_gy));
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matmul: [.., m, k] x [.., k, n]. A rank-2 right operand is shared across all
// leading batch dimensions of the left (the weight-matrix case); otherwise the
// leading dimensions must match exactly.
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) throw DimensionError("matmul needs rank >= 2 operands");
    const std::int64_t m = sa[sa.size() - 2];
    const std::int64_t k = sa[sa.size() - 1];
    const std::int64_t kb = sb[sb.size() - 2];
    const std::int64_t n = sb[sb.size() - 1];
    if (k != kb)
        throw DimensionError("matmul inner dimensions differ: " + shape_str(sa) + " x " +
                             shape_str(sb));

    const bool shared_b = (sb.size() == 2 && sa.size() >= 2);
    std::int64_t batch = 1;
    if (shared_b) {
        for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    } else {
        if (sa.size() != sb.size()) throw DimensionError("matmul batch rank mismatch");
        for (std::size_t i = 0; i + 2 < sa.size(); ++i) {
            if (sa[i] != sb[i]) throw DimensionError("matmul batch dimensions differ");
            batch *= sa[i];
        }
    }

    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    TensorT<T> out = TensorT<T>::zeros(out_shape);

    const T* av = a.data().data();
    const T* bv = b.data().data();
    T* ov = out.data().data();
    if (shared_b) {
        // one flattened GEMM keeps the double accumulation contiguous
        std::vector<double> acc(static_cast<std::size_t>(batch * m * n), 0.0);
        detail::mm_acc_nn(av, bv, acc.data(), batch * m, k, n);
        for (std::size_t i = 0; i < acc.size(); ++i) ov[i] = static_cast<T>(acc[i]);
    } else {
        std::vector<double> acc(static_cast<std::size_t>(m * n));
        for (std::int64_t s = 0; s < batch; ++s) {
            std::fill(acc.begin(), acc.end(), 0.0);
            detail::mm_acc_nn(av + s * m * k, bv + s * k * n, acc.data(), m, k, n);
            for (std::int64_t i = 0; i < m * n; ++i) ov[s * m * n + i] = static_cast<T>(acc[i]);
        }
    }

    if (detail::wants_tape<T>({&a, &b})) {
        detail::mark_out(out);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        TapeT<T>::active().record("matmul", {a, b}, out,
                                  [ai, bi, oi, m, k, n, batch, shared_b](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            const T* av = ai->value.data();
            const T* bv = bi->value.data();
            const T* gov = go->data();
            if (ai->requires_grad) {
                auto& ga = bp.at(ai.get());
                if (shared_b) {
                    std::vector<double> acc(ga.size(), 0.0);
                    detail::mm_acc_nt(gov, bv, acc.data(), batch * m, n, k);
                    detail::add_from_acc(ga, acc);
                } else {
                    std::vector<double> acc(static_cast<std::size_t>(m * k));
                    for (std::int64_t s = 0; s < batch; ++s) {
                        std::fill(acc.begin(), acc.end(), 0.0);
                        detail::mm_acc_nt(gov + s * m * n, bv + s * k * n, acc.data(), m, n, k);
                        for (std::int64_t i = 0; i < m * k; ++i)
                            ga[s * m * k + i] += static_cast<T>(acc[i]);
                    }
                }
            }
            if (bi->requires_grad) {
                auto& gb = bp.at(bi.get());
                if (shared_b) {
                    std::vector<double> acc(gb.size(), 0.0);
                    detail::mm_acc_tn(av, gov, acc.data(), k, batch * m, n);
                    detail::add_from_acc(gb, acc);
                } else {
                    std::vector<double> acc(static_cast<std::size_t>(k * n));
                    for (std::int64_t s = 0; s < batch; ++s) {
                        std::fill(acc.begin(), acc.end(), 0.0);
                        detail::mm_acc_tn(av + s * m * k, gov + s * m * n, acc.data(), k, m, n);
                        for (std::int64_t i = 0; i < k * n; ++i)
                            gb[s * k * n + i] += static_cast<T>(acc[i]);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: x [N, Cin, H, W], w [Cout, Cin, kh, kw], optional bias [Cout].
// Implemented as im2col + GEMM so the inner products share the double
// accumulation path.
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
inline void im2col(const T* x, std::int64_t ci, std::int64_t h, std::int64_t w, std::int64_t kh,
                   std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                   std::int64_t ow, T* col) {
    for (std::int64_t c = 0; c < ci; ++c)
        for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                T* crow = col + ((c * kh + ky) * kw + kx) * oh * ow;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(crow + oy * ow, crow + (oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* xrow = x + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        crow[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : xrow[ix];
                    }
                }
            }
}

template <typename T>
inline void col2im_add(const T* col, std::int64_t ci, std::int64_t h, std::int64_t w,
                       std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                       std::int64_t oh, std::int64_t ow, T* x) {
    for (std::int64_t c = 0; c < ci; ++c)
        for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const T* crow = col + ((c * kh + ky) * kw + kx) * oh * ow;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* xrow = x + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) xrow[ix] += crow[oy * ow + ox];
                    }
                }
            }
}
}  // namespace detail

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
inline TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                         std::int64_t stride = 2, std::int64_t pad = 1) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4) throw DimensionError("conv2d expects NCHW input and OIHW weights");
    const std::int64_t nb = sx[0], ci = sx[1], h = sx[2], wdt = sx[3];
    const std::int64_t co = sw[0], kh = sw[2], kw = sw[3];
    if (sw[1] != ci)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(sx) + " weights " +
                             shape_str(sw));
    if (h < 1 || wdt < 1) throw DimensionError("conv2d empty spatial extent");
    const bool has_bias = bias.defined() && bias.numel() > 0;
    if (has_bias && bias.numel() != co) throw DimensionError("conv2d bias length mismatch");
    const std::int64_t oh = conv_out_extent(h, kh, stride, pad);
    const std::int64_t ow = conv_out_extent(wdt, kw, stride, pad);
    if (oh < 1 || ow < 1) throw DimensionError("conv2d output would be empty");

    TensorT<T> out = TensorT<T>::zeros({nb, co, oh, ow});
    const std::int64_t kcols = ci * kh * kw;
    const std::int64_t pix = oh * ow;
    std::vector<T> col(static_cast<std::size_t>(kcols * pix));
    std::vector<double> acc(static_cast<std::size_t>(co * pix));
    const T* xv = x.data().data();
    T* ov = out.data().data();
    for (std::int64_t s = 0; s < nb; ++s) {
        detail::im2col(xv + s * ci * h * wdt, ci, h, wdt, kh, kw, stride, pad, oh, ow, col.data());
        std::fill(acc.begin(), acc.end(), 0.0);
        detail::mm_acc_nn(w.data().data(), col.data(), acc.data(), co, kcols, pix);
        T* orow = ov + s * co * pix;
        for (std::int64_t c = 0; c < co; ++c) {
            const double bv = has_bias ? static_cast<double>(bias.data()[c]) : 0.0;
            for (std::int64_t p = 0; p < pix; ++p)
                orow[c * pix + p] = static_cast<T>(acc[c * pix + p] + bv);
        }
    }

    const bool tape = has_bias ? detail::wants_tape<T>({&x, &w, &bias})
                               : detail::wants_tape<T>({&x, &w});
    if (tape) {
        detail::mark_out(out);
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        auto bi = has_bias ? bias.impl() : nullptr;
        auto fn = [xi, wi, bi, oi, nb, ci, h, wdt, co, kh, kw, stride, pad, oh,
                   ow](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            const std::int64_t kcols = ci * kh * kw;
            const std::int64_t pix = oh * ow;
            const T* gov = go->data();
            std::vector<T> col(static_cast<std::size_t>(kcols * pix));
            std::vector<double> wacc;
            if (wi->requires_grad) wacc.assign(wi->value.size(), 0.0);
            std::vector<double> bacc;
            if (bi && bi->requires_grad) bacc.assign(static_cast<std::size_t>(co), 0.0);
            std::vector<double> cacc;
            std::vector<T> colg;
            if (xi->requires_grad) {
                cacc.resize(static_cast<std::size_t>(kcols * pix));
                colg.resize(static_cast<std::size_t>(kcols * pix));
            }
            for (std::int64_t s = 0; s < nb; ++s) {
                const T* gslice = gov + s * co * pix;
                if (wi->requires_grad || bi) {
                    detail::im2col(xi->value.data() + s * ci * h * wdt, ci, h, wdt, kh, kw, stride,
                                   pad, oh, ow, col.data());
                }
                if (wi->requires_grad)
                    detail::mm_acc_nt(gslice, col.data(), wacc.data(), co, pix, kcols);
                if (bi && bi->requires_grad)
                    for (std::int64_t c = 0; c < co; ++c)
                        for (std::int64_t p = 0; p < pix; ++p)
                            bacc[c] += static_cast<double>(gslice[c * pix + p]);
                if (xi->requires_grad) {
                    std::fill(cacc.begin(), cacc.end(), 0.0);
                    detail::mm_acc_tn(wi->value.data(), gslice, cacc.data(), kcols, co, pix);
                    for (std::size_t i = 0; i < colg.size(); ++i) colg[i] = static_cast<T>(cacc[i]);
                    auto& gx = bp.at(xi.get());
                    detail::col2im_add(colg.data(), ci, h, wdt, kh, kw, stride, pad, oh, ow,
                                       gx.data() + s * ci * h * wdt);
                }
            }
            if (wi->requires_grad) detail::add_from_acc(bp.at(wi.get()), wacc);
            if (bi && bi->requires_grad) detail::add_from_acc(bp.at(bi.get()), bacc);
        };
        if (has_bias)
            TapeT<T>::active().record("conv2d", {x, w, bias}, out, std::move(fn));
        else
            TapeT<T>::active().record("conv2d", {x, w}, out, std::move(fn));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over [N, C, H, W]; statistics per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    TensorT<T> running_mean;
    TensorT<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

template <typename T>
inline TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                             BatchNormState<T>& state, bool training) {
    const auto& s = x.shape();
    if (s.size() != 4) throw DimensionError("batch_norm expects NCHW input");
    const std::int64_t nb = s[0], c = s[1], h = s[2], w = s[3];
    if (nb == 0) throw DimensionError("batch_norm on empty batch");
    if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
        state.running_var.numel() != c)
        throw DimensionError("batch_norm parameter length mismatch");
    const std::int64_t plane = h * w;
    const std::int64_t per_c = nb * plane;

    auto mean_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    auto istd_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    const auto& xv = x.data();
    if (training) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (std::int64_t n = 0; n < nb; ++n) {
                const T* p = xv.data() + (n * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) m += static_cast<double>(p[i]);
            }
            m /= static_cast<double>(per_c);
            double var = 0.0;
            for (std::int64_t n = 0; n < nb; ++n) {
                const T* p = xv.data() + (n * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(p[i]) - m;
                    var += d * d;
                }
            }
            var /= static_cast<double>(per_c);
            (*mean_c)[ch] = m;
            (*istd_c)[ch] = 1.0 / std::sqrt(var + state.eps);
            auto& rm = state.running_mean.data();
            auto& rv = state.running_var.data();
            rm[ch] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(rm[ch]) +
                                    state.momentum * m);
            rv[ch] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(rv[ch]) +
                                    state.momentum * var);
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            (*mean_c)[ch] = static_cast<double>(state.running_mean.data()[ch]);
            (*istd_c)[ch] =
                1.0 / std::sqrt(static_cast<double>(state.running_var.data()[ch]) + state.eps);
        }
    }

    TensorT<T> out = TensorT<T>::zeros(s);
    auto normed = std::make_shared<std::vector<T>>(xv.size());
    auto& ov = out.data();
    for (std::int64_t n = 0; n < nb; ++n)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double m = (*mean_c)[ch];
            const double istd = (*istd_c)[ch];
            const double g = static_cast<double>(gamma.data()[ch]);
            const double b = static_cast<double>(beta.data()[ch]);
            const std::int64_t base = (n * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const double yn = (static_cast<double>(xv[base + i]) - m) * istd;
                (*normed)[base + i] = static_cast<T>(yn);
                ov[base + i] = static_cast<T>(yn * g + b);
            }
        }

    if (detail::wants_tape<T>({&x, &gamma, &beta})) {
        detail::mark_out(out);
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        TapeT<T>::active().record("batch_norm", {x, gamma, beta}, out,
                                  [xi, gi, bi, oi, nb, c, plane, per_c, normed, istd_c,
                                   training](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            const T* gov = go->data();
            std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0);
            std::vector<double> sum_gy(static_cast<std::size_t>(c), 0.0);
            for (std::int64_t n = 0; n < nb; ++n)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t base = (n * c + ch) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sum_g[ch] += static_cast<double>(gov[base + i]);
                        sum_gy[ch] += static_cast<double>(gov[base + i]) *
                                      static_cast<double>((*normed)[base + i]);
                    }
                }
            if (gi->requires_grad) detail::add_from_acc(bp.at(gi.get()), sum_gy);
            if (bi->requires_grad) detail::add_from_acc(bp.at(bi.get()), sum_g);
            if (xi->requires_grad) {
                auto& gx = bp.at(xi.get());
                for (std::int64_t n = 0; n < nb; ++n)
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const double g = static_cast<double>(gi->value[ch]);
                        const double istd = (*istd_c)[ch];
                        const std::int64_t base = (n * c + ch) * plane;
                        if (training) {
                            const double mg = sum_g[ch] / static_cast<double>(per_c);
                            const double mgy = sum_gy[ch] / static_cast<double>(per_c);
                            for (std::int64_t i = 0; i < plane; ++i)
                                gx[base + i] += static_cast<T>(
                                    g * istd *
                                    (static_cast<double>(gov[base + i]) - mg -
                                     static_cast<double>((*normed)[base + i]) * mgy));
                        } else {
                            for (std::int64_t i = 0; i < plane; ++i)
                                gx[base + i] += static_cast<T>(
                                    g * istd * static_cast<double>(gov[base + i]));
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("mse_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    const std::int64_t n = pred.numel();
    if (n == 0) throw DimensionError("mse_loss on empty tensors");
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
        acc += d * d;
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (detail::wants_tape<T>({&pred, &target})) {
        detail::mark_out(out);
        auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
        TapeT<T>::active().record("mse_loss", {pred, target}, out, [pi, ti, oi, n](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            const double g = static_cast<double>((*go)[0]) * 2.0 / static_cast<double>(n);
            if (pi->requires_grad) {
                auto& gp = bp.at(pi.get());
                for (std::int64_t i = 0; i < n; ++i)
                    gp[i] += static_cast<T>(g * (static_cast<double>(pi->value[i]) -
                                                 static_cast<double>(ti->value[i])));
            }
            if (ti->requires_grad) {
                auto& gt = bp.at(ti.get());
                for (std::int64_t i = 0; i < n; ++i)
                    gt[i] -= static_cast<T>(g * (static_cast<double>(pi->value[i]) -
                                                 static_cast<double>(ti->value[i])));
            }
        });
    }
    return out;
}

inline constexpr double kBceEps = 1e-7;

template <typename T>
inline TensorT<T> bce_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("bce_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    const std::int64_t n = pred.numel();
    if (n == 0) throw DimensionError("bce_loss on empty tensors");
    constexpr double kEps = kBceEps;
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = std::clamp(static_cast<double>(pred.data()[i]), kEps, 1.0 - kEps);
        const double t = static_cast<double>(target.data()[i]);
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (detail::wants_tape<T>({&pred, &target})) {
        detail::mark_out(out);
        auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
        TapeT<T>::active().record("bce_loss", {pred, target}, out, [pi, ti, oi, n](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go) return;
            const double g = static_cast<double>((*go)[0]) / static_cast<double>(n);
            if (pi->requires_grad) {
                auto& gp = bp.at(pi.get());
                for (std::int64_t i = 0; i < n; ++i) {
                    const double raw = static_cast<double>(pi->value[i]);
                    if (raw <= kBceEps || raw >= 1.0 - kBceEps) continue;  // clamped region is flat
                    const double t = static_cast<double>(ti->value[i]);
                    gp[i] += static_cast<T>(g * (raw - t) / (raw * (1.0 - raw)));
                }
            }
            if (ti->requires_grad) {
                auto& gt = bp.at(ti.get());
                for (std::int64_t i = 0; i < n; ++i) {
                    const double p = std::clamp(static_cast<double>(pi->value[i]), kBceEps, 1.0 - kBceEps);
                    gt[i] += static_cast<T>(g * (std::log(1.0 - p) - std::log(p)));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsampling for [N, C, H, W].
// ---------------------------------------------------------------------------

template <typename T>
inline TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw DimensionError("upsample_nearest2x expects NCHW input");
    const std::int64_t nb = s[0], c = s[1], h = s[2], w = s[3];
    TensorT<T> out = TensorT<T>::zeros({nb, c, h * 2, w * 2});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t nc = 0; nc < nb * c; ++nc)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
                const T v = xv[(nc * h + y) * w + xx];
                const std::int64_t base = (nc * 2 * h + 2 * y) * 2 * w + 2 * xx;
                ov[base] = v;
                ov[base + 1] = v;
                ov[base + 2 * w] = v;
                ov[base + 2 * w + 1] = v;
            }
    if (detail::wants_tape<T>({&x})) {
        detail::mark_out(out);
        auto xi = x.impl(), oi = out.impl();
        TapeT<T>::active().record("upsample_nearest2x", {x}, out,
                                  [xi, oi, nb, c, h, w](BackwardPass<T>& bp) {
            auto* go = bp.find(oi.get());
            if (!go || !xi->requires_grad) return;
            auto& gx = bp.at(xi.get());
            for (std::int64_t nc = 0; nc < nb * c; ++nc)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xx = 0; xx < w; ++xx) {
                        const std::int64_t base = (nc * 2 * h + 2 * y) * 2 * w + 2 * xx;
                        const double s2 = static_cast<double>((*go)[base]) +
                                          static_cast<double>((*go)[base + 1]) +
                                          static_cast<double>((*go)[base + 2 * w]) +
                                          static_cast<double>((*go)[base + 2 * w + 1]);
                        gx[(nc * h + y) * w + xx] += static_cast<T>(s2);
                    }
        });
    }
    return out;
}

}  // namespace ptwin
