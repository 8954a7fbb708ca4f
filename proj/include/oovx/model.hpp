#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "oovx/adapter.hpp"
#include "oovx/corpus.hpp"
#include "oovx/rng.hpp"
#include "oovx/vocab.hpp"

namespace oovx {

struct ModelConfig {
    int char_embed_dim = 100;  // E
    int hidden_dim = 200;      // D
    int kernel_width = 4;      // K
    int lstm_layers = 2;       // M
    int vocab_size = 0;        // scorable entries: word block + 3 specials
    int max_word_bytes = 20;
};

// Closed-form parameter count; asserted in tests against actual allocation.
inline long long param_count(const ModelConfig& c) {
    long long e = c.char_embed_dim, d = c.hidden_dim, k = c.kernel_width;
    long long m = c.lstm_layers, v = c.vocab_size;
    return 256 * e + d * e * k + d + m * 4 * (d * d + d * d + 2 * d) + d * v + v + 3 * d;
}

// Special-token rows in the learned special embedding table.
enum SpecialSlot { kSpecialUnk = 0, kSpecialBos = 1, kSpecialPad = 2 };

template <class T>
struct LstmLayerParams {
    std::vector<T> w_ih, w_hh;  // 4D x D, gate blocks ordered i, f, g, o
    std::vector<T> b_ih, b_hh;  // 4D
};

template <class T>
struct ModelParams {
    std::vector<T> char_embedding;  // 256 x E
    std::vector<T> conv_weight;     // D x E x K
    std::vector<T> conv_bias;       // D
    std::vector<T> special_embed;   // 3 x D
    std::vector<LstmLayerParams<T>> lstm;
    std::vector<T> decoder_weight;  // V x D row-major (one row per scored entry)
    std::vector<T> decoder_bias;    // V

    template <class F>
    void visit(F&& fn) {
        fn("char_embedding", char_embedding);
        fn("conv_weight", conv_weight);
        fn("conv_bias", conv_bias);
        fn("special_embed", special_embed);
        for (std::size_t l = 0; l < lstm.size(); ++l) {
            std::string pre = "lstm" + std::to_string(l) + "_";
            fn(pre + "w_ih", lstm[l].w_ih);
            fn(pre + "w_hh", lstm[l].w_hh);
            fn(pre + "b_ih", lstm[l].b_ih);
            fn(pre + "b_hh", lstm[l].b_hh);
        }
        fn("decoder_weight", decoder_weight);
        fn("decoder_bias", decoder_bias);
    }
    template <class F>
    void visit(F&& fn) const {
        const_cast<ModelParams*>(this)->visit(
            [&](const std::string& n, const std::vector<T>& v) { fn(n, v); });
    }

    long long scalar_count() const {
        long long n = 0;
        visit([&](const std::string&, const std::vector<T>& v) {
            n += static_cast<long long>(v.size());
        });
        return n;
    }
};

template <class T>
ModelParams<T> make_model_params(const ModelConfig& c) {
    ModelParams<T> p;
    std::size_t e = static_cast<std::size_t>(c.char_embed_dim);
    std::size_t d = static_cast<std::size_t>(c.hidden_dim);
    std::size_t k = static_cast<std::size_t>(c.kernel_width);
    std::size_t v = static_cast<std::size_t>(c.vocab_size);
    p.char_embedding.assign(256 * e, T(0));
    p.conv_weight.assign(d * e * k, T(0));
    p.conv_bias.assign(d, T(0));
    p.special_embed.assign(3 * d, T(0));
    p.lstm.resize(static_cast<std::size_t>(c.lstm_layers));
    for (auto& layer : p.lstm) {
        layer.w_ih.assign(4 * d * d, T(0));
        layer.w_hh.assign(4 * d * d, T(0));
        layer.b_ih.assign(4 * d, T(0));
        layer.b_hh.assign(4 * d, T(0));
    }
    p.decoder_weight.assign(v * d, T(0));
    p.decoder_bias.assign(v, T(0));
    return p;
}

template <class T>
ModelParams<T> init_model_params(const ModelConfig& c, std::uint64_t seed) {
    ModelParams<T> p = make_model_params<T>(c);
    Rng rng(seed);
    double d_scale = 1.0 / std::sqrt(static_cast<double>(c.hidden_dim));
    auto fill_uniform = [&](std::vector<T>& v, double a) {
        for (auto& x : v) x = static_cast<T>(a * (2.0 * rng.next_double() - 1.0));
    };
    fill_uniform(p.char_embedding, 0.1);
    fill_uniform(p.conv_weight, 1.0 / std::sqrt(static_cast<double>(c.char_embed_dim * c.kernel_width)));
    fill_uniform(p.special_embed, 0.1);
    for (auto& layer : p.lstm) {
        fill_uniform(layer.w_ih, d_scale);
        fill_uniform(layer.w_hh, d_scale);
        fill_uniform(layer.b_ih, d_scale);
        fill_uniform(layer.b_hh, d_scale);
    }
    fill_uniform(p.decoder_weight, d_scale);
    std::fill(p.decoder_bias.begin(), p.decoder_bias.end(), T(0));
    return p;
}

template <class T>
ModelParams<T> zeros_like_model(const ModelParams<T>& p) {
    ModelParams<T> g = p;
    g.visit([](const std::string&, std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); });
    return g;
}

// ---------------------------------------------------------------------------
// CharCNN word embedding
// ---------------------------------------------------------------------------

template <class T>
struct WordEmbedCache {
    std::vector<unsigned char> bytes;  // truncated, padded to >= kernel_width
    std::vector<int> argmax;           // winning conv position per channel
    std::vector<T> out;                // D, post tanh + max-over-time
};

// UTF-8 bytes, truncated to max_word_bytes, right-padded with byte 0 up to
// the kernel width; conv -> tanh -> max-over-time.
template <class T>
WordEmbedCache<T> char_embed_forward(const std::string& word, const ModelParams<T>& p,
                                     const ModelConfig& c) {
    WordEmbedCache<T> cache;
    std::size_t len = std::min(word.size(), static_cast<std::size_t>(c.max_word_bytes));
    cache.bytes.assign(word.begin(), word.begin() + static_cast<std::ptrdiff_t>(len));
    while (cache.bytes.size() < static_cast<std::size_t>(c.kernel_width)) cache.bytes.push_back(0);
    const int d = c.hidden_dim, e = c.char_embed_dim, k = c.kernel_width;
    const int n_pos = static_cast<int>(cache.bytes.size()) - k + 1;
    cache.argmax.assign(static_cast<std::size_t>(d), 0);
    cache.out.assign(static_cast<std::size_t>(d), T(0));
    std::vector<T> best(static_cast<std::size_t>(d), -std::numeric_limits<T>::infinity());
    for (int t = 0; t < n_pos; ++t) {
        for (int ch = 0; ch < d; ++ch) {
            T acc = p.conv_bias[static_cast<std::size_t>(ch)];
            const T* w = p.conv_weight.data() + static_cast<std::size_t>(ch) * e * k;
            for (int kk = 0; kk < k; ++kk) {
                const T* emb =
                    p.char_embedding.data() + static_cast<std::size_t>(cache.bytes[t + kk]) * e;
                for (int ei = 0; ei < e; ++ei) acc += w[ei * k + kk] * emb[ei];
            }
            if (acc > best[static_cast<std::size_t>(ch)]) {
                best[static_cast<std::size_t>(ch)] = acc;
                cache.argmax[static_cast<std::size_t>(ch)] = t;
            }
        }
    }
    for (int ch = 0; ch < d; ++ch)
        cache.out[static_cast<std::size_t>(ch)] = std::tanh(best[static_cast<std::size_t>(ch)]);
    return cache;
}

template <class T>
void char_embed_backward(const WordEmbedCache<T>& cache, const std::vector<T>& d_out,
                         const ModelParams<T>& p, const ModelConfig& c, ModelParams<T>& grad) {
    const int e = c.char_embed_dim, k = c.kernel_width;
    for (int ch = 0; ch < c.hidden_dim; ++ch) {
        T y = cache.out[static_cast<std::size_t>(ch)];
        T dpre = d_out[static_cast<std::size_t>(ch)] * (T(1) - y * y);
        if (dpre == T(0)) continue;
        int t = cache.argmax[static_cast<std::size_t>(ch)];
        grad.conv_bias[static_cast<std::size_t>(ch)] += dpre;
        const T* w = p.conv_weight.data() + static_cast<std::size_t>(ch) * e * k;
        T* wg = grad.conv_weight.data() + static_cast<std::size_t>(ch) * e * k;
        for (int kk = 0; kk < k; ++kk) {
            std::size_t b = cache.bytes[static_cast<std::size_t>(t + kk)];
            const T* emb = p.char_embedding.data() + b * e;
            T* embg = grad.char_embedding.data() + b * e;
            for (int ei = 0; ei < e; ++ei) {
                wg[ei * k + kk] += dpre * emb[ei];
                embg[ei] += dpre * w[ei * k + kk];
            }
        }
    }
}

// Public single-word embedding (the char_embed operation).
template <class T>
std::vector<T> char_embed(const std::string& word, const ModelParams<T>& p, const ModelConfig& c) {
    return char_embed_forward(word, p, c).out;
}

// ---------------------------------------------------------------------------
// Input token resolution
// ---------------------------------------------------------------------------

// An input position: a special-embedding slot, or a surface word run through
// the CharCNN. OOV surface words are mapped to [UNK] before this point.
struct InputToken {
    int special = -1;  // SpecialSlot or -1
    const std::string* word = nullptr;
};

inline std::vector<InputToken> input_tokens(const TokenizedSentence& sentence,
                                            const Vocabulary& vocab, std::size_t count) {
    std::vector<InputToken> toks;
    toks.reserve(count);
    toks.push_back({kSpecialBos, nullptr});
    for (std::size_t i = 0; i + 1 < count && i < sentence.size(); ++i) {
        if (vocab.contains(sentence[i]))
            toks.push_back({-1, &sentence[i]});
        else
            toks.push_back({kSpecialUnk, nullptr});
    }
    return toks;
}

// Per-batch CharCNN cache: each distinct surface word is embedded once and
// its output gradient accumulated across occurrences.
template <class T>
struct EmbedTable {
    std::unordered_map<std::string, std::size_t> index;
    std::vector<WordEmbedCache<T>> caches;
    std::vector<std::vector<T>> d_out;

    const std::vector<T>& get(const std::string& word, const ModelParams<T>& p,
                              const ModelConfig& c) {
        auto it = index.find(word);
        if (it == index.end()) {
            it = index.emplace(word, caches.size()).first;
            caches.push_back(char_embed_forward(word, p, c));
            d_out.emplace_back(static_cast<std::size_t>(c.hidden_dim), T(0));
        }
        return caches[it->second].out;
    }

    void accumulate(const std::string& word, const std::vector<T>& g) {
        auto& acc = d_out[index.at(word)];
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }

    void backward(const ModelParams<T>& p, const ModelConfig& c, ModelParams<T>& grad) {
        for (const auto& [word, idx] : index)
            char_embed_backward(caches[idx], d_out[idx], p, c, grad);
    }
};

// ---------------------------------------------------------------------------
// LSTM forward / backward
// ---------------------------------------------------------------------------

template <class T>
struct LstmCache {
    // [layer], each flat n_steps x D. Gates are post-activation.
    std::vector<std::vector<T>> gi, gf, gg, go, c, h;
    std::size_t n_steps = 0;
};

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
LstmCache<T> lstm_forward(const std::vector<std::vector<T>>& inputs, const ModelParams<T>& p,
                          const ModelConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t m = p.lstm.size();
    const std::size_t n = inputs.size();
    LstmCache<T> cache;
    cache.n_steps = n;
    cache.gi.assign(m, std::vector<T>(n * d));
    cache.gf.assign(m, std::vector<T>(n * d));
    cache.gg.assign(m, std::vector<T>(n * d));
    cache.go.assign(m, std::vector<T>(n * d));
    cache.c.assign(m, std::vector<T>(n * d));
    cache.h.assign(m, std::vector<T>(n * d));
    std::vector<T> gates(4 * d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::vector<T>* x = &inputs[t];
        for (std::size_t l = 0; l < m; ++l) {
            const auto& lp = p.lstm[l];
            const T* h_prev = t > 0 ? cache.h[l].data() + (t - 1) * d : nullptr;
            const T* c_prev = t > 0 ? cache.c[l].data() + (t - 1) * d : nullptr;
            for (std::size_t r = 0; r < 4 * d; ++r) {
                T acc = lp.b_ih[r] + lp.b_hh[r];
                const T* wi = lp.w_ih.data() + r * d;
                const T* wh = lp.w_hh.data() + r * d;
                const T* xv = (l == 0) ? x->data() : cache.h[l - 1].data() + t * d;
                for (std::size_t i = 0; i < d; ++i) acc += wi[i] * xv[i];
                if (h_prev)
                    for (std::size_t i = 0; i < d; ++i) acc += wh[i] * h_prev[i];
                gates[r] = acc;
            }
            for (std::size_t i = 0; i < d; ++i) {
                T gi = sigmoid(gates[i]);
                T gf = sigmoid(gates[d + i]);
                T gg = std::tanh(gates[2 * d + i]);
                T go = sigmoid(gates[3 * d + i]);
                T cc = gi * gg + (c_prev ? gf * c_prev[i] : T(0));
                cache.gi[l][t * d + i] = gi;
                cache.gf[l][t * d + i] = gf;
                cache.gg[l][t * d + i] = gg;
                cache.go[l][t * d + i] = go;
                cache.c[l][t * d + i] = cc;
                cache.h[l][t * d + i] = go * std::tanh(cc);
            }
        }
    }
    return cache;
}

// Backprop through time; d_top[t] is the gradient on the top layer's h_t.
// Returns gradients on the layer-0 inputs.
template <class T>
std::vector<std::vector<T>> lstm_backward(const std::vector<std::vector<T>>& inputs,
                                          const LstmCache<T>& cache,
                                          const std::vector<std::vector<T>>& d_top,
                                          const ModelParams<T>& p, const ModelConfig& cfg,
                                          ModelParams<T>& grad) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t m = p.lstm.size();
    const std::size_t n = cache.n_steps;
    std::vector<std::vector<T>> d_inputs(n, std::vector<T>(d, T(0)));
    std::vector<std::vector<T>> dh_next(m, std::vector<T>(d, T(0)));
    std::vector<std::vector<T>> dc_next(m, std::vector<T>(d, T(0)));
    std::vector<T> da(4 * d);
    for (std::size_t t = n; t-- > 0;) {
        std::vector<T> d_from_above;
        for (std::size_t l = m; l-- > 0;) {
            const auto& lp = p.lstm[l];
            auto& lg = grad.lstm[l];
            std::vector<T> dh = dh_next[l];
            if (l == m - 1) {
                if (t < d_top.size())
                    for (std::size_t i = 0; i < d; ++i) dh[i] += d_top[t][i];
            } else {
                for (std::size_t i = 0; i < d; ++i) dh[i] += d_from_above[i];
            }
            const T* c_prev = t > 0 ? cache.c[l].data() + (t - 1) * d : nullptr;
            for (std::size_t i = 0; i < d; ++i) {
                T gi = cache.gi[l][t * d + i];
                T gf = cache.gf[l][t * d + i];
                T gg = cache.gg[l][t * d + i];
                T go = cache.go[l][t * d + i];
                T cc = cache.c[l][t * d + i];
                T tc = std::tanh(cc);
                T dgo = dh[i] * tc;
                T dc = dc_next[l][i] + dh[i] * go * (T(1) - tc * tc);
                T dgi = dc * gg;
                T dgg = dc * gi;
                T dgf = c_prev ? dc * c_prev[i] : T(0);
                dc_next[l][i] = dc * gf;
                da[i] = dgi * gi * (T(1) - gi);
                da[d + i] = dgf * gf * (T(1) - gf);
                da[2 * d + i] = dgg * (T(1) - gg * gg);
                da[3 * d + i] = dgo * go * (T(1) - go);
            }
            const T* xv = (l == 0) ? inputs[t].data() : cache.h[l - 1].data() + t * d;
            const T* h_prev = t > 0 ? cache.h[l].data() + (t - 1) * d : nullptr;
            std::vector<T> dx(d, T(0));
            std::fill(dh_next[l].begin(), dh_next[l].end(), T(0));
            for (std::size_t r = 0; r < 4 * d; ++r) {
                T g = da[r];
                lg.b_ih[r] += g;
                lg.b_hh[r] += g;
                T* wig = lg.w_ih.data() + r * d;
                T* whg = lg.w_hh.data() + r * d;
                const T* wi = lp.w_ih.data() + r * d;
                const T* wh = lp.w_hh.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) {
                    wig[i] += g * xv[i];
                    dx[i] += g * wi[i];
                }
                if (h_prev) {
                    for (std::size_t i = 0; i < d; ++i) {
                        whg[i] += g * h_prev[i];
                        dh_next[l][i] += g * wh[i];
                    }
                }
            }
            if (l == 0) {
                d_inputs[t] = std::move(dx);
            } else {
                d_from_above = std::move(dx);
            }
        }
    }
    return d_inputs;
}

// ---------------------------------------------------------------------------
// Scoring, loss, prediction
// ---------------------------------------------------------------------------

// The OOV-Expansion scoring path for one client. `adapter` == nullptr means
// the identity block (raw CharCNN embeddings used directly).
template <class T>
struct ExpansionSpec {
    const std::vector<std::string>* oov_words = nullptr;
    const AdapterConfig* adapter_cfg = nullptr;
    const AdapterParams<T>* adapter = nullptr;

    std::size_t size() const { return oov_words ? oov_words->size() : 0; }
};

template <class T>
std::vector<T> decoder_row(const std::vector<T>& h, const ModelParams<T>& p,
                           const ModelConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
    std::vector<T> row(v);
    for (std::size_t j = 0; j < v; ++j) {
        T acc = p.decoder_bias[j];
        const T* w = p.decoder_weight.data() + j * d;
        for (std::size_t i = 0; i < d; ++i) acc += w[i] * h[i];
        row[j] = acc;
    }
    return row;
}

// Hidden states of the top LSTM layer over the prediction positions of one
// sentence: inputs are [BOS] + the first |S|-1 words (OOV -> [UNK]).
template <class T>
struct SentenceStates {
    std::vector<std::vector<T>> inputs;  // layer-0 inputs (embeddings)
    std::vector<InputToken> tokens;
    LstmCache<T> cache;

    std::vector<T> top_state(std::size_t t, const ModelConfig& cfg) const {
        const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
        const auto& h = cache.h.back();
        return std::vector<T>(h.begin() + static_cast<std::ptrdiff_t>(t * d),
                              h.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
    }
};

template <class T>
SentenceStates<T> sentence_states(const TokenizedSentence& sentence, std::size_t n_positions,
                                  const ModelParams<T>& p, const ModelConfig& cfg,
                                  const Vocabulary& vocab, EmbedTable<T>& table) {
    SentenceStates<T> st;
    st.tokens = input_tokens(sentence, vocab, n_positions);
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    st.inputs.reserve(st.tokens.size());
    for (const auto& tok : st.tokens) {
        if (tok.special >= 0) {
            const T* row = p.special_embed.data() + static_cast<std::size_t>(tok.special) * d;
            st.inputs.emplace_back(row, row + d);
        } else {
            st.inputs.push_back(table.get(*tok.word, p, cfg));
        }
    }
    st.cache = lstm_forward(st.inputs, p, cfg);
    return st;
}

// Vocabulary score rows for every prediction position (pre-LogSoftmax).
template <class T>
std::vector<std::vector<T>> forward(const TokenizedSentence& sentence, const ModelParams<T>& p,
                                    const ModelConfig& cfg, const Vocabulary& vocab) {
    std::vector<std::vector<T>> rows;
    if (sentence.empty()) return rows;
    EmbedTable<T> table;
    auto st = sentence_states(sentence, sentence.size(), p, cfg, vocab, table);
    rows.reserve(sentence.size());
    for (std::size_t t = 0; t < sentence.size(); ++t)
        rows.push_back(decoder_row(st.top_state(t, cfg), p, cfg));
    return rows;
}

// Grows the decoder for an oracle-expanded vocabulary (old word block is a
// prefix of the new one). Existing rows are copied; rows for appended words
// start from their CharCNN embeddings so the expanded model scores them from
// day one. Updates cfg.vocab_size.
template <class T>
ModelParams<T> expand_decoder(const ModelParams<T>& params, ModelConfig& cfg,
                              const Vocabulary& old_vocab, const Vocabulary& new_vocab) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t old_w = old_vocab.word_count();
    const std::size_t new_w = new_vocab.word_count();
    ModelConfig new_cfg = cfg;
    new_cfg.vocab_size = static_cast<int>(new_vocab.total_size());
    ModelParams<T> out = make_model_params<T>(new_cfg);
    out.char_embedding = params.char_embedding;
    out.conv_weight = params.conv_weight;
    out.conv_bias = params.conv_bias;
    out.special_embed = params.special_embed;
    out.lstm = params.lstm;
    for (std::size_t j = 0; j < new_w + 3; ++j) {
        std::size_t src;
        if (j < old_w) {
            src = j;  // shared word-block prefix
        } else if (j >= new_w) {
            src = old_w + (j - new_w);  // specials
        } else {
            auto emb = char_embed(new_vocab.word_at(static_cast<int>(j)), params, cfg);
            std::copy(emb.begin(), emb.end(), out.decoder_weight.begin() + static_cast<std::ptrdiff_t>(j * d));
            out.decoder_bias[j] = T(0);
            continue;
        }
        std::copy(params.decoder_weight.begin() + static_cast<std::ptrdiff_t>(src * d),
                  params.decoder_weight.begin() + static_cast<std::ptrdiff_t>((src + 1) * d),
                  out.decoder_weight.begin() + static_cast<std::ptrdiff_t>(j * d));
        out.decoder_bias[j] = params.decoder_bias[src];
    }
    cfg = new_cfg;
    return out;
}

// Target index for a position: vocabulary word, client OOV slot, or [UNK].
inline int target_index(const std::string& word, const Vocabulary& vocab,
                        const std::unordered_map<std::string, int>* oov_index) {
    if (auto idx = vocab.index_of(word)) return *idx;
    if (oov_index) {
        auto it = oov_index->find(word);
        if (it != oov_index->end())
            return static_cast<int>(vocab.total_size()) + it->second;
    }
    return vocab.unk_index();
}

template <class T>
struct BatchWorkspace {
    EmbedTable<T> table;                       // in-vocab input words
    EmbedTable<T> oov_table;                   // OOV-list words (expansion path)
    std::vector<std::vector<T>> raw_oov;       // n x D CharCNN outputs
    std::vector<std::vector<T>> adapted;       // n x D
    AdapterForwardCache<T> adapter_cache;
    std::vector<std::vector<T>> d_adapted;     // accumulated gradient
    std::unordered_map<std::string, int> oov_index;
};

// Mean next-word cross entropy over all prediction positions of the batch.
// When `grad` is non-null, accumulates model gradients (of the mean loss);
// the adapter gradient goes to `adapter_grad` when the expansion spec carries
// an adapter. Returns NaN-free loss or a non-finite value the caller checks.
template <class T>
T nll_loss_grad(const std::vector<TokenizedSentence>& batch, const ModelParams<T>& p,
                const ModelConfig& cfg, const Vocabulary& vocab, ModelParams<T>* grad,
                const ExpansionSpec<T>* exp = nullptr,
                AdapterParams<T>* adapter_grad = nullptr) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
    BatchWorkspace<T> ws;
    const std::size_t n_oov = exp ? exp->size() : 0;
    if (exp && n_oov > 0) {
        ws.raw_oov.reserve(n_oov);
        for (std::size_t i = 0; i < n_oov; ++i) {
            const std::string& w = (*exp->oov_words)[i];
            ws.oov_index.emplace(w, static_cast<int>(i));
            ws.raw_oov.push_back(ws.oov_table.get(w, p, cfg));
        }
        if (exp->adapter) {
            ws.adapted = adapt_embeddings(ws.raw_oov, *exp->adapter, *exp->adapter_cfg,
                                          grad ? &ws.adapter_cache : nullptr);
        } else {
            ws.adapted = ws.raw_oov;
        }
        ws.d_adapted.assign(n_oov, std::vector<T>(d, T(0)));
    }

    std::size_t total_positions = 0;
    for (const auto& s : batch) total_positions += s.size();
    if (total_positions == 0) return T(0);
    const T inv_n = T(1) / static_cast<T>(total_positions);

    T loss = T(0);
    for (const auto& sentence : batch) {
        if (sentence.empty()) continue;
        auto st = sentence_states(sentence, sentence.size(), p, cfg, vocab, ws.table);
        std::vector<std::vector<T>> d_top;
        if (grad) d_top.assign(sentence.size(), std::vector<T>(d, T(0)));
        for (std::size_t t = 0; t < sentence.size(); ++t) {
            auto h = st.top_state(t, cfg);
            std::vector<T> row = decoder_row(h, p, cfg);
            row.reserve(v + n_oov);
            for (std::size_t i = 0; i < n_oov; ++i) {
                T acc = T(0);
                for (std::size_t j = 0; j < d; ++j) acc += h[j] * ws.adapted[i][j];
                row.push_back(acc);
            }
            int target = target_index(sentence[t], vocab,
                                      n_oov > 0 ? &ws.oov_index : nullptr);
            // log-sum-exp
            T mx = row[0];
            for (T x : row) mx = std::max(mx, x);
            T sum = T(0);
            for (T x : row) sum += std::exp(x - mx);
            T lse = mx + std::log(sum);
            loss += (lse - row[static_cast<std::size_t>(target)]) * inv_n;
            if (!grad) continue;
            // d loss / d row = softmax - onehot, scaled by 1/N
            for (std::size_t j = 0; j < row.size(); ++j) {
                T pj = std::exp(row[j] - lse);
                T g = (pj - (static_cast<int>(j) == target ? T(1) : T(0))) * inv_n;
                if (j < v) {
                    grad->decoder_bias[j] += g;
                    T* wg = grad->decoder_weight.data() + j * d;
                    const T* w = p.decoder_weight.data() + j * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        wg[i] += g * h[i];
                        d_top[t][i] += g * w[i];
                    }
                } else {
                    std::size_t oi = j - v;
                    for (std::size_t i = 0; i < d; ++i) {
                        d_top[t][i] += g * ws.adapted[oi][i];
                        ws.d_adapted[oi][i] += g * h[i];
                    }
                }
            }
        }
        if (grad) {
            auto d_inputs = lstm_backward(st.inputs, st.cache, d_top, p, cfg, *grad);
            for (std::size_t t = 0; t < st.tokens.size(); ++t) {
                const auto& tok = st.tokens[t];
                if (tok.special >= 0) {
                    T* sg = grad->special_embed.data() + static_cast<std::size_t>(tok.special) * d;
                    for (std::size_t i = 0; i < d; ++i) sg[i] += d_inputs[t][i];
                } else {
                    ws.table.accumulate(*tok.word, d_inputs[t]);
                }
            }
        }
    }
    if (grad) {
        ws.table.backward(p, cfg, *grad);
        if (n_oov > 0) {
            std::vector<std::vector<T>> d_raw;
            if (exp->adapter) {
                if (!adapter_grad)
                    throw std::invalid_argument("adapter gradient sink required");
                d_raw = adapt_embeddings_backward(ws.d_adapted, ws.adapter_cache, *exp->adapter,
                                                  *exp->adapter_cfg, *adapter_grad);
            } else {
                d_raw = ws.d_adapted;
            }
            for (std::size_t i = 0; i < n_oov; ++i)
                ws.oov_table.accumulate((*exp->oov_words)[i], d_raw[i]);
            ws.oov_table.backward(p, cfg, *grad);
        }
    }
    return loss;
}

template <class T>
T nll_loss(const std::vector<TokenizedSentence>& batch, const ModelParams<T>& p,
           const ModelConfig& cfg, const Vocabulary& vocab,
           const ExpansionSpec<T>* exp = nullptr) {
    return nll_loss_grad<T>(batch, p, cfg, vocab, nullptr, exp, nullptr);
}

// Top-K candidate indices over a joined score row. Specials are never
// candidates; ties break toward the smaller index.
inline std::vector<int> topk_indices(const std::vector<double>& row, int k,
                                     const Vocabulary& vocab) {
    std::vector<int> best;
    auto better = [&](double s, int i, double s2, int i2) {
        if (s != s2) return s > s2;
        return i < i2;
    };
    for (int j = 0; j < static_cast<int>(row.size()); ++j) {
        if (j >= static_cast<int>(vocab.word_count()) && j < static_cast<int>(vocab.total_size()))
            continue;  // [UNK]/[BOS]/[PAD]
        double s = row[static_cast<std::size_t>(j)];
        std::size_t pos = best.size();
        while (pos > 0 &&
               better(s, j, row[static_cast<std::size_t>(best[pos - 1])], best[pos - 1]))
            --pos;
        if (pos < static_cast<std::size_t>(k)) {
            best.insert(best.begin() + static_cast<std::ptrdiff_t>(pos), j);
            if (best.size() > static_cast<std::size_t>(k)) best.pop_back();
        }
    }
    return best;
}

inline std::string candidate_word(int idx, const Vocabulary& vocab,
                                  const std::vector<std::string>* oov_words) {
    if (idx < static_cast<int>(vocab.total_size())) return vocab.word_at(idx);
    return (*oov_words)[static_cast<std::size_t>(idx) - vocab.total_size()];
}

// Per-position joined score rows (vocab + optional OOV path), as doubles for
// ranking stability.
template <class T>
std::vector<std::vector<double>> score_rows(const TokenizedSentence& sentence,
                                            std::size_t n_positions, const ModelParams<T>& p,
                                            const ModelConfig& cfg, const Vocabulary& vocab,
                                            const ExpansionSpec<T>* exp) {
    EmbedTable<T> table;
    auto st = sentence_states(sentence, n_positions, p, cfg, vocab, table);
    std::vector<std::vector<T>> adapted;
    const std::size_t n_oov = exp ? exp->size() : 0;
    if (n_oov > 0) {
        std::vector<std::vector<T>> raw;
        raw.reserve(n_oov);
        for (const auto& w : *exp->oov_words) raw.push_back(char_embed(w, p, cfg));
        adapted = exp->adapter ? adapt_embeddings(raw, *exp->adapter, *exp->adapter_cfg)
                               : std::move(raw);
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(n_positions);
    for (std::size_t t = 0; t < n_positions; ++t) {
        auto h = st.top_state(t, cfg);
        auto vrow = decoder_row(h, p, cfg);
        std::vector<double> row(vrow.begin(), vrow.end());
        for (std::size_t i = 0; i < n_oov; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < h.size(); ++j) acc += h[j] * adapted[i][j];
            row.push_back(static_cast<double>(acc));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Top-K next-word suggestions after the given prefix.
template <class T>
std::vector<std::string> predict_topk(const TokenizedSentence& prefix, int k,
                                      const ModelParams<T>& p, const ModelConfig& cfg,
                                      const Vocabulary& vocab,
                                      const ExpansionSpec<T>* exp = nullptr) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    // Positions = |prefix| + 1: the last row scores the word after the prefix.
    auto rows = score_rows(prefix, prefix.size() + 1, p, cfg, vocab, exp);
    auto idxs = topk_indices(rows.back(), k, vocab);
    std::vector<std::string> out;
    out.reserve(idxs.size());
    for (int i : idxs)
        out.push_back(candidate_word(i, vocab, exp ? exp->oov_words : nullptr));
    return out;
}

// One-pass EMR/KEMR counting over a set of sentences. KEMR restricts to
// targets inside `kemr_vocab` (the base closed vocabulary).
struct EvalCounts {
    long long hits = 0;
    long long positions = 0;
    long long known_hits = 0;
    long long known_positions = 0;

    double emr() const { return positions ? static_cast<double>(hits) / positions : 0.0; }
    double kemr() const {
        return known_positions ? static_cast<double>(known_hits) / known_positions : 0.0;
    }
};

template <class T>
EvalCounts evaluate_topk(const std::vector<TokenizedSentence>& sentences, int k,
                         const ModelParams<T>& p, const ModelConfig& cfg, const Vocabulary& vocab,
                         const ExpansionSpec<T>* exp = nullptr,
                         const Vocabulary* kemr_vocab = nullptr) {
    EvalCounts counts;
    for (const auto& sentence : sentences) {
        if (sentence.empty()) continue;
        auto rows = score_rows(sentence, sentence.size(), p, cfg, vocab, exp);
        for (std::size_t t = 0; t < sentence.size(); ++t) {
            auto idxs = topk_indices(rows[t], k, vocab);
            bool hit = false;
            for (int i : idxs) {
                if (candidate_word(i, vocab, exp ? exp->oov_words : nullptr) == sentence[t]) {
                    hit = true;
                    break;
                }
            }
            ++counts.positions;
            counts.hits += hit;
            if (kemr_vocab && kemr_vocab->contains(sentence[t])) {
                ++counts.known_positions;
                counts.known_hits += hit;
            }
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

template <class T>
bool all_finite(const ModelParams<T>& p) {
    bool ok = true;
    p.visit([&](const std::string&, const std::vector<T>& v) {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) ok = false;
    });
    return ok;
}

// One SGD step on the mean batch loss. Throws on non-finite loss/gradient.
template <class T>
T sgd_step(ModelParams<T>& p, const std::vector<TokenizedSentence>& batch, T lr,
           const ModelConfig& cfg, const Vocabulary& vocab,
           const ExpansionSpec<T>* exp = nullptr, AdapterParams<T>* adapter = nullptr) {
    if (!(lr > T(0))) throw std::invalid_argument("learning rate must be positive");
    ModelParams<T> grad = zeros_like_model(p);
    AdapterParams<T> agrad;
    ExpansionSpec<T> spec;
    if (exp) {
        spec = *exp;
        if (adapter) {
            spec.adapter = adapter;
            agrad = zeros_like(*adapter);
        }
    }
    T loss = nll_loss_grad(batch, p, cfg, vocab, &grad, exp ? &spec : nullptr,
                           (exp && adapter) ? &agrad : nullptr);
    if (!std::isfinite(static_cast<double>(loss)) || !all_finite(grad))
        throw std::runtime_error("non-finite loss or gradient; training aborted");
    auto apply = [lr](std::vector<T>& pv, const std::vector<T>& gv) {
        for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * gv[i];
    };
    {
        std::vector<std::vector<T>*> pv, gv;
        p.visit([&](const std::string&, std::vector<T>& v) { pv.push_back(&v); });
        grad.visit([&](const std::string&, std::vector<T>& v) { gv.push_back(&v); });
        for (std::size_t i = 0; i < pv.size(); ++i) apply(*pv[i], *gv[i]);
    }
    if (exp && adapter) {
        std::vector<std::vector<T>*> pv, gv;
        adapter->visit([&](const std::string&, std::vector<T>& v) { pv.push_back(&v); });
        agrad.visit([&](const std::string&, std::vector<T>& v) { gv.push_back(&v); });
        for (std::size_t i = 0; i < pv.size(); ++i) apply(*pv[i], *gv[i]);
    }
    return loss;
}

}  // namespace oovx
