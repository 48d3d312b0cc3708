#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ptwin/tensor.hpp"

namespace ptwin {

// Adam with bias correction. Moment state is kept in double so the update is
// identical between the float and double tensor instantiations.
template <typename T>
class AdamT {
public:
    explicit AdamT(std::vector<TensorT<T>> params, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
            v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            auto& val = p.data();
            const auto& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                val[j] = static_cast<T>(static_cast<double>(val[j]) -
                                        lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::int64_t step_count() const { return t_; }

private:
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

using Adam = AdamT<float>;

// Linear warmup from lr_lo to lr_hi over `warmup` steps, then cosine decay
// from lr_hi to zero at `total`. Endpoints are exact: step==0 yields lr_lo and
// step==warmup takes the cosine branch where cos(0) makes it exactly lr_hi.
inline double cosine_warmup_lr(std::int64_t step, std::int64_t total, std::int64_t warmup,
                               double lr_lo = 1e-5, double lr_hi = 1e-4) {
    if (total < warmup) throw ConfigError("schedule shorter than its warmup");
    if (step < 0 || step > total) throw ContractError("scheduler step out of range");
    if (step < warmup)
        return lr_lo + (lr_hi - lr_lo) * (static_cast<double>(step) / static_cast<double>(warmup));
    if (total == warmup) return lr_hi;
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return lr_hi * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace ptwin
