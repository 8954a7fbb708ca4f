#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "oovx/rng.hpp"

namespace oovx {

struct AdapterConfig {
    std::vector<int> hidden_dims = {960};
    double init_sigma = 0.0;
    int io_dim = 200;
};

inline long long adapter_param_count(const AdapterConfig& cfg) {
    long long d = cfg.io_dim;
    long long total = 2 * d;  // LayerNorm scale + shift
    long long prev = d;
    for (int h : cfg.hidden_dims) {
        total += prev * h + h;
        prev = h;
    }
    total += prev * d + d;
    return total;
}

template <class T>
struct AdapterParams {
    std::vector<T> ln_scale, ln_shift;         // io_dim each
    std::vector<std::vector<T>> weights;       // L+1 linear layers, row-major out×in
    std::vector<std::vector<T>> biases;

    template <class F>
    void visit(F&& fn) {
        fn("adapter_ln_scale", ln_scale);
        fn("adapter_ln_shift", ln_shift);
        for (std::size_t l = 0; l < weights.size(); ++l) {
            fn("adapter_linear" + std::to_string(l) + "_weight", weights[l]);
            fn("adapter_linear" + std::to_string(l) + "_bias", biases[l]);
        }
    }
    template <class F>
    void visit(F&& fn) const {
        const_cast<AdapterParams*>(this)->visit(
            [&](const std::string& n, const std::vector<T>& v) { fn(n, v); });
    }
};

template <class T>
std::vector<int> adapter_layer_dims(const AdapterConfig& cfg) {
    std::vector<int> dims;
    dims.push_back(cfg.io_dim);
    for (int h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.io_dim);
    return dims;
}

// Linear weights and biases ~ N(0, sigma^2); LayerNorm starts as identity.
template <class T>
AdapterParams<T> init_adapter(const AdapterConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden_dims.empty()) throw std::invalid_argument("adapter needs >= 1 hidden dim");
    AdapterParams<T> p;
    p.ln_scale.assign(static_cast<std::size_t>(cfg.io_dim), T(1));
    p.ln_shift.assign(static_cast<std::size_t>(cfg.io_dim), T(0));
    Rng rng(seed);
    auto dims = adapter_layer_dims<T>(cfg);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        std::size_t in = static_cast<std::size_t>(dims[l]);
        std::size_t out = static_cast<std::size_t>(dims[l + 1]);
        std::vector<T> w(out * in), b(out);
        for (auto& x : w) x = static_cast<T>(cfg.init_sigma * rng.next_normal());
        for (auto& x : b) x = static_cast<T>(cfg.init_sigma * rng.next_normal());
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

template <class T>
AdapterParams<T> zeros_like(const AdapterParams<T>& p) {
    AdapterParams<T> g = p;
    g.visit([](const std::string&, std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); });
    return g;
}

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct AdapterForwardCache {
    // One entry per input row.
    std::vector<std::vector<T>> x;        // raw inputs
    std::vector<std::vector<T>> xhat;     // normalized inputs
    std::vector<T> rstd;                  // 1/sqrt(var + eps)
    std::vector<std::vector<std::vector<T>>> acts;  // [row][layer] post-ReLU activations
};

// y_r = x_r + MLP(LayerNorm(x_r)) per row; fills the cache for backward.
template <class T>
std::vector<std::vector<T>> adapt_embeddings(const std::vector<std::vector<T>>& raw,
                                             const AdapterParams<T>& p, const AdapterConfig& cfg,
                                             AdapterForwardCache<T>* cache = nullptr) {
    const std::size_t d = static_cast<std::size_t>(cfg.io_dim);
    const std::size_t n_lin = p.weights.size();
    std::vector<std::vector<T>> out(raw.size());
    if (cache) {
        cache->x = raw;
        cache->xhat.resize(raw.size());
        cache->rstd.resize(raw.size());
        cache->acts.assign(raw.size(), {});
    }
    auto dims = adapter_layer_dims<T>(cfg);
    for (std::size_t r = 0; r < raw.size(); ++r) {
        const auto& x = raw[r];
        if (x.size() != d) throw std::invalid_argument("adapter input dim mismatch");
        T mean = T(0);
        for (T v : x) mean += v;
        mean /= static_cast<T>(d);
        T var = T(0);
        for (T v : x) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        std::vector<T> cur(d);
        std::vector<T> xhat(d);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (x[i] - mean) * rstd;
            cur[i] = p.ln_scale[i] * xhat[i] + p.ln_shift[i];
        }
        if (cache) {
            cache->xhat[r] = xhat;
            cache->rstd[r] = rstd;
        }
        for (std::size_t l = 0; l < n_lin; ++l) {
            std::size_t in = static_cast<std::size_t>(dims[l]);
            std::size_t nout = static_cast<std::size_t>(dims[l + 1]);
            std::vector<T> next(nout);
            for (std::size_t o = 0; o < nout; ++o) {
                T acc = p.biases[l][o];
                const T* wr = p.weights[l].data() + o * in;
                for (std::size_t i = 0; i < in; ++i) acc += wr[i] * cur[i];
                // ReLU on hidden layers only.
                if (l + 1 < n_lin && acc < T(0)) acc = T(0);
                next[o] = acc;
            }
            if (cache) cache->acts[r].push_back(next);
            cur = std::move(next);
        }
        std::vector<T> y(d);
        for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + cur[i];
        out[r] = std::move(y);
    }
    return out;
}

// Backward through the residual adapter; returns d_raw and accumulates
// parameter gradients into `grad`.
template <class T>
std::vector<std::vector<T>> adapt_embeddings_backward(const std::vector<std::vector<T>>& d_out,
                                                      const AdapterForwardCache<T>& cache,
                                                      const AdapterParams<T>& p,
                                                      const AdapterConfig& cfg,
                                                      AdapterParams<T>& grad) {
    const std::size_t d = static_cast<std::size_t>(cfg.io_dim);
    const std::size_t n_lin = p.weights.size();
    auto dims = adapter_layer_dims<T>(cfg);
    std::vector<std::vector<T>> d_raw(d_out.size());
    for (std::size_t r = 0; r < d_out.size(); ++r) {
        std::vector<T> dcur = d_out[r];  // gradient on the MLP output
        for (std::size_t l = n_lin; l-- > 0;) {
            std::size_t in = static_cast<std::size_t>(dims[l]);
            std::size_t nout = static_cast<std::size_t>(dims[l + 1]);
            // Layer input: LN output for l == 0, previous post-ReLU otherwise.
            std::vector<T> layer_in(in);
            if (l == 0) {
                for (std::size_t i = 0; i < d; ++i)
                    layer_in[i] = p.ln_scale[i] * cache.xhat[r][i] + p.ln_shift[i];
            } else {
                layer_in = cache.acts[r][l - 1];
            }
            // ReLU mask on this layer's output (hidden layers only).
            if (l + 1 < n_lin) {
                for (std::size_t o = 0; o < nout; ++o)
                    if (cache.acts[r][l][o] <= T(0)) dcur[o] = T(0);
            }
            std::vector<T> din(in, T(0));
            for (std::size_t o = 0; o < nout; ++o) {
                T g = dcur[o];
                grad.biases[l][o] += g;
                T* wg = grad.weights[l].data() + o * in;
                const T* w = p.weights[l].data() + o * in;
                for (std::size_t i = 0; i < in; ++i) {
                    wg[i] += g * layer_in[i];
                    din[i] += g * w[i];
                }
            }
            dcur = std::move(din);
        }
        // LayerNorm backward; dcur is the gradient on (scale*xhat + shift).
        const auto& xhat = cache.xhat[r];
        std::vector<T> dxhat(d);
        T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            grad.ln_shift[i] += dcur[i];
            grad.ln_scale[i] += dcur[i] * xhat[i];
            dxhat[i] = dcur[i] * p.ln_scale[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
        }
        mean_dxhat /= static_cast<T>(d);
        mean_dxhat_xhat /= static_cast<T>(d);
        std::vector<T> dx(d);
        for (std::size_t i = 0; i < d; ++i) {
            dx[i] = cache.rstd[r] * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            dx[i] += d_out[r][i];  // residual branch
        }
        d_raw[r] = std::move(dx);
    }
    return d_raw;
}

// Inner-product OOV scores: entry (t, i) = <state_t, adapted_i>, no bias.
template <class T>
std::vector<std::vector<T>> oov_scores(const std::vector<std::vector<T>>& lstm_states,
                                       const std::vector<std::vector<T>>& adapted) {
    std::vector<std::vector<T>> scores(lstm_states.size());
    for (std::size_t t = 0; t < lstm_states.size(); ++t) {
        scores[t].resize(adapted.size());
        for (std::size_t i = 0; i < adapted.size(); ++i) {
            T acc = T(0);
            for (std::size_t k = 0; k < lstm_states[t].size(); ++k)
                acc += lstm_states[t][k] * adapted[i][k];
            scores[t][i] = acc;
        }
    }
    return scores;
}

// Concatenates vocabulary and OOV scores and applies LogSoftmax over the union.
template <class T>
std::vector<T> join_scores(const std::vector<T>& vocab_row, const std::vector<T>& oov_row) {
    std::vector<T> joined;
    joined.reserve(vocab_row.size() + oov_row.size());
    joined.insert(joined.end(), vocab_row.begin(), vocab_row.end());
    joined.insert(joined.end(), oov_row.begin(), oov_row.end());
    T mx = joined[0];
    for (T v : joined) mx = std::max(mx, v);
    T sum = T(0);
    for (T v : joined) sum += std::exp(v - mx);
    T lse = mx + std::log(sum);
    for (T& v : joined) v -= lse;
    return joined;
}

}  // namespace oovx
