#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "safeset/rng.hpp"

namespace safeset {

/// Top-layer activation of an Mlp. Clamp01 maps to [0,1] (critics), Tanh to
/// [-1,1] (actors) and LogClamp to [-10,6] (log-multiplier heads).
enum class Head { Clamp01, Tanh, LogClamp };

struct MlpCache {
    int n = 0;
    std::vector<std::vector<double>> pre;   // per layer, n x width
    std::vector<std::vector<double>> post;  // post[0] is the input, post[L] the output
};

/// Fully connected network with rectifier hidden units, a bounded top
/// activation and a flat parameter vector (all weights, then biases, layer by
/// layer) so optimizers, target blending and serialization can treat the
/// model as one array.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::vector<int> sizes, Head head) : sizes_(std::move(sizes)), head_(head) {
        if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least one layer");
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            w_off_.push_back(total);
            total += static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l];
            b_off_.push_back(total);
            total += sizes_[l + 1];
        }
        params_.assign(total, 0.0);
    }

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
    const std::vector<int>& sizes() const { return sizes_; }
    Head head() const { return head_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    /// Hidden layers get the usual 1/sqrt(fan_in) uniform weights; the final
    /// layer is drawn narrow so the initial output sits at its bias.
    void init_uniform(Rng& rng, double bias_value = 0.0, double final_scale = 3e-3) {
        const int L = num_layers();
        for (int l = 0; l < L; ++l) {
            const int in = sizes_[l], out = sizes_[l + 1];
            const double scale = l + 1 == L ? final_scale : 1.0 / std::sqrt(in);
            double* w = params_.data() + w_off_[l];
            for (int i = 0; i < out * in; ++i) w[i] = rng.uniform(-scale, scale);
            double* b = params_.data() + b_off_[l];
            for (int o = 0; o < out; ++o) b[o] = bias_value;
        }
    }

    void forward(std::span<const double> x, int n, MlpCache& cache) const {
        if (x.size() != static_cast<std::size_t>(n) * input_dim())
            throw std::invalid_argument("Mlp::forward: input size mismatch");
        const int L = num_layers();
        cache.n = n;
        cache.pre.resize(L);
        cache.post.resize(L + 1);
        cache.post[0].assign(x.begin(), x.end());

        for (int l = 0; l < L; ++l) {
            const int in = sizes_[l], out = sizes_[l + 1];
            const double* w = params_.data() + w_off_[l];
            const double* b = params_.data() + b_off_[l];
            auto& pre = cache.pre[l];
            auto& post = cache.post[l + 1];
            pre.assign(static_cast<std::size_t>(n) * out, 0.0);
            post.assign(static_cast<std::size_t>(n) * out, 0.0);
            const auto& prev = cache.post[l];
            for (int i = 0; i < n; ++i) {
                const double* xi = prev.data() + static_cast<std::size_t>(i) * in;
                double* zi = pre.data() + static_cast<std::size_t>(i) * out;
                for (int o = 0; o < out; ++o) {
                    const double* wo = w + static_cast<std::size_t>(o) * in;
                    double z = b[o];
                    for (int k = 0; k < in; ++k) z += wo[k] * xi[k];
                    zi[o] = z;
                }
                double* yi = post.data() + static_cast<std::size_t>(i) * out;
                if (l + 1 < L) {
                    for (int o = 0; o < out; ++o) yi[o] = zi[o] > 0.0 ? zi[o] : 0.0;
                } else {
                    for (int o = 0; o < out; ++o) yi[o] = apply_head(zi[o]);
                }
            }
        }
    }

    std::span<const double> output(const MlpCache& cache) const { return cache.post.back(); }

    /// Accumulates parameter gradients for the upstream derivative dY
    /// (n x output_dim) and optionally writes the input gradient.
    void backward(const MlpCache& cache, std::span<const double> dY, std::span<double> grad,
                  std::vector<double>* input_grad = nullptr) const {
        const int L = num_layers();
        const int n = cache.n;
        if (grad.size() != params_.size())
            throw std::invalid_argument("Mlp::backward: gradient buffer size mismatch");

        std::vector<double> delta(dY.begin(), dY.end());
        {   // top activation derivative
            const auto& pre = cache.pre[L - 1];
            for (std::size_t i = 0; i < delta.size(); ++i)
                delta[i] *= head_derivative(pre[i], cache.post[L][i]);
        }

        std::vector<double> prev_delta;
        for (int l = L - 1; l >= 0; --l) {
            const int in = sizes_[l], out = sizes_[l + 1];
            const double* w = params_.data() + w_off_[l];
            double* gw = grad.data() + w_off_[l];
            double* gb = grad.data() + b_off_[l];
            const auto& prev = cache.post[l];

            const bool need_input = l > 0 || input_grad != nullptr;
            if (need_input) prev_delta.assign(static_cast<std::size_t>(n) * in, 0.0);

            for (int i = 0; i < n; ++i) {
                const double* di = delta.data() + static_cast<std::size_t>(i) * out;
                const double* xi = prev.data() + static_cast<std::size_t>(i) * in;
                double* pdi = need_input ? prev_delta.data() + static_cast<std::size_t>(i) * in
                                         : nullptr;
                for (int o = 0; o < out; ++o) {
                    const double d = di[o];
                    if (d == 0.0) continue;
                    const double* wo = w + static_cast<std::size_t>(o) * in;
                    double* gwo = gw + static_cast<std::size_t>(o) * in;
                    for (int k = 0; k < in; ++k) gwo[k] += d * xi[k];
                    gb[o] += d;
                    if (pdi)
                        for (int k = 0; k < in; ++k) pdi[k] += d * wo[k];
                }
            }

            if (l > 0) {
                const auto& pre = cache.pre[l - 1];
                for (std::size_t i = 0; i < prev_delta.size(); ++i)
                    if (pre[i] <= 0.0) prev_delta[i] = 0.0;
                delta.swap(prev_delta);
            } else if (input_grad) {
                *input_grad = std::move(prev_delta);
            }
        }
    }

private:
    double apply_head(double z) const {
        switch (head_) {
            case Head::Clamp01: return z < 0.0 ? 0.0 : (z > 1.0 ? 1.0 : z);
            case Head::Tanh: return std::tanh(z);
            case Head::LogClamp: return z < -10.0 ? -10.0 : (z > 6.0 ? 6.0 : z);
        }
        return z;
    }

    double head_derivative(double z, double y) const {
        switch (head_) {
            case Head::Clamp01: return (z >= 0.0 && z <= 1.0) ? 1.0 : 0.0;
            case Head::Tanh: return 1.0 - y * y;
            case Head::LogClamp: return (z >= -10.0 && z <= 6.0) ? 1.0 : 0.0;
        }
        return 1.0;
    }

    std::vector<int> sizes_;
    Head head_ = Head::Clamp01;
    std::vector<double> params_;
    std::vector<std::size_t> w_off_, b_off_;
};

/// Adaptive moment estimation with the standard defaults. step() descends;
/// callers negate the gradient for ascent updates.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

    double learning_rate() const { return lr_; }

    void step(std::span<double> params, std::span<const double> grad) {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw std::invalid_argument("Adam::step: size mismatch");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < m_.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
    std::vector<double> m_, v_;
};

/// Polyak blend of target parameters: theta' = tau * theta + (1 - tau) * theta'.
inline void soft_update(Mlp& target, const Mlp& source, double tau) {
    auto& t = target.params();
    const auto& s = source.params();
    if (t.size() != s.size()) throw std::invalid_argument("soft_update: size mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * s[i] + (1.0 - tau) * t[i];
}

/// Mean-reverting exploration noise added to actor outputs.
struct OuNoise {
    double mu = 0.0;
    double theta = 0.1;
    double sigma = 0.05;
    std::vector<double> state;

    explicit OuNoise(int dim = 1) : state(dim, 0.0) {}

    void reset() { std::fill(state.begin(), state.end(), 0.0); }

    std::span<const double> step(Rng& rng) {
        for (double& x : state) x += theta * (mu - x) + sigma * rng.normal();
        return state;
    }
};

}  // namespace safeset
