#include "oovx/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <thread>

namespace oovx {

std::vector<std::string> sample_clients(const std::vector<std::string>& pool, int k, Rng& rng) {
    if (k > static_cast<int>(pool.size()))
        throw std::invalid_argument("clients_per_round exceeds train pool size");
    // Partial Fisher-Yates over a copy of the pool.
    std::vector<std::string> ids = pool;
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        std::size_t j = static_cast<std::size_t>(i) +
                        static_cast<std::size_t>(rng.next_below(ids.size() - static_cast<std::size_t>(i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
        out.push_back(ids[static_cast<std::size_t>(i)]);
    }
    return out;
}

namespace {

// Epoch-local SGD over shuffled batches; returns false on divergence.
bool run_sgd_epochs(std::vector<TokenizedSentence> sentences, ModelParams<float>& params,
                    const ModelConfig& cfg, const Vocabulary& vocab, int epochs, double lr,
                    int batch_size, Rng& rng, double* mean_loss_out) {
    double loss_sum = 0.0;
    long long steps = 0;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(sentences);
        for (std::size_t start = 0; start < sentences.size();
             start += static_cast<std::size_t>(batch_size)) {
            std::size_t end = std::min(sentences.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<TokenizedSentence> batch(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                                                 sentences.begin() + static_cast<std::ptrdiff_t>(end));
            bool empty = true;
            for (const auto& s : batch)
                if (!s.empty()) empty = false;
            if (empty) continue;
            float loss;
            try {
                loss = sgd_step<float>(params, batch, static_cast<float>(lr), cfg, vocab);
            } catch (const std::runtime_error&) {
                return false;
            }
            loss_sum += loss;
            ++steps;
        }
    }
    if (mean_loss_out) *mean_loss_out = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    return true;
}

}  // namespace

std::optional<ClientDelta> local_update(const ModelParams<float>& global_params,
                                        const ClientDataset& client, const FLConfig& fl,
                                        const ModelConfig& cfg, const Vocabulary& vocab,
                                        std::uint64_t shuffle_seed) {
    if (client.sentences.empty()) throw std::invalid_argument("client has no sentences");
    ClientDelta result;
    result.client_id = client.client_id;
    result.weight = static_cast<std::int64_t>(client.token_count());
    ModelParams<float> local = global_params;
    Rng rng(shuffle_seed);
    if (!run_sgd_epochs(client.sentences, local, cfg, vocab, fl.local_epochs, fl.client_lr,
                        fl.local_batch_size, rng, &result.mean_loss))
        return std::nullopt;
    result.delta = local;
    // delta = local - global
    std::vector<const std::vector<float>*> gv;
    global_params.visit(
        [&](const std::string&, const std::vector<float>& v) { gv.push_back(&v); });
    std::size_t idx = 0;
    result.delta.visit([&](const std::string&, std::vector<float>& v) {
        const auto& g = *gv[idx++];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= g[i];
    });
    return result;
}

void server_step(ServerState& state, const std::vector<ClientDelta>& deltas, const FLConfig& fl) {
    if (deltas.empty()) throw std::invalid_argument("server_step needs >= 1 delta");
    double total_weight = 0.0;
    for (const auto& d : deltas) total_weight += static_cast<double>(d.weight);
    if (total_weight <= 0.0) throw std::invalid_argument("non-positive total delta weight");

    // Pseudo-gradient g = -(weighted mean delta), reduced in given (sorted) order.
    ModelParams<float> pseudo = zeros_like_model(state.global_params);
    for (const auto& d : deltas) {
        float w = static_cast<float>(static_cast<double>(d.weight) / total_weight);
        std::vector<const std::vector<float>*> dv;
        d.delta.visit([&](const std::string&, const std::vector<float>& v) { dv.push_back(&v); });
        std::size_t idx = 0;
        pseudo.visit([&](const std::string&, std::vector<float>& v) {
            const auto& src = *dv[idx++];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= w * src[i];
        });
    }

    const double t = static_cast<double>(state.round_index + 1);
    const float bc1 = static_cast<float>(1.0 - std::pow(fl.beta1, t));
    const float bc2 = static_cast<float>(1.0 - std::pow(fl.beta2, t));
    const float b1 = static_cast<float>(fl.beta1), b2 = static_cast<float>(fl.beta2);
    const float lr = static_cast<float>(fl.server_lr), eps = static_cast<float>(fl.eps);
    const float wd = static_cast<float>(fl.weight_decay);

    std::vector<std::vector<float>*> gv, mv, vv;
    pseudo.visit([&](const std::string&, std::vector<float>& v) { gv.push_back(&v); });
    state.first_moment.visit([&](const std::string&, std::vector<float>& v) { mv.push_back(&v); });
    state.second_moment.visit([&](const std::string&, std::vector<float>& v) { vv.push_back(&v); });
    std::size_t idx = 0;
    state.global_params.visit([&](const std::string&, std::vector<float>& p) {
        auto& g = *gv[idx];
        auto& m = *mv[idx];
        auto& v = *vv[idx];
        ++idx;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            float mhat = m[i] / bc1;
            float vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
        }
    });
    ++state.round_index;
}

double pool_emr3(const FederatedCorpus& corpus, Pool pool, const ModelParams<float>& params,
                 const ModelConfig& cfg, const Vocabulary& vocab) {
    EvalCounts total;
    for (const auto* client : corpus.pool_clients(pool)) {
        auto counts = evaluate_topk(client->sentences, 3, params, cfg, vocab);
        total.hits += counts.hits;
        total.positions += counts.positions;
    }
    return total.emr();
}

FLResult run_fl(const FederatedCorpus& corpus, const Vocabulary& vocab, const ModelConfig& cfg,
                const FLConfig& fl, const ModelParams<float>& initial) {
    auto train_ids = corpus.pool_ids(Pool::Train);
    if (train_ids.empty()) throw std::invalid_argument("empty train pool");
    std::sort(train_ids.begin(), train_ids.end());

    FLResult result;
    result.state.global_params = initial;
    result.state.first_moment = zeros_like_model(initial);
    result.state.second_moment = zeros_like_model(initial);
    result.best_params = initial;

    const int k = std::min<int>(fl.clients_per_round, static_cast<int>(train_ids.size()));
    const long long rounds_per_epoch =
        (static_cast<long long>(train_ids.size()) + k - 1) / k;

    Rng sample_rng(splitmix64(fl.seed) ^ 0x5eedf00dULL);
    for (int epoch = 0; epoch < fl.global_epochs; ++epoch) {
        for (long long r = 0; r < rounds_per_epoch; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            RoundLog log;
            log.round_index = result.state.round_index;
            auto sampled = sample_clients(train_ids, k, sample_rng);
            std::sort(sampled.begin(), sampled.end());
            log.client_ids = sampled;

            std::vector<std::optional<ClientDelta>> deltas(sampled.size());
            auto worker = [&](std::size_t begin, std::size_t step) {
                for (std::size_t i = begin; i < sampled.size(); i += step) {
                    const auto& client = corpus.clients.at(sampled[i]);
                    std::uint64_t seed = splitmix64(fl.seed ^ splitmix64(
                        static_cast<std::uint64_t>(log.round_index) * 0x9e37ULL ^
                        fnv1a64(client.client_id)));
                    deltas[i] = local_update(result.state.global_params, client, fl, cfg, vocab,
                                             seed);
                }
            };
            int jobs = std::max(1, fl.jobs);
            if (jobs == 1) {
                worker(0, 1);
            } else {
                std::vector<std::thread> threads;
                for (int j = 0; j < jobs; ++j)
                    threads.emplace_back(worker, static_cast<std::size_t>(j),
                                         static_cast<std::size_t>(jobs));
                for (auto& th : threads) th.join();
            }

            std::vector<ClientDelta> surviving;
            double loss_sum = 0.0;
            for (auto& d : deltas) {
                if (d) {
                    loss_sum += d->mean_loss;
                    surviving.push_back(std::move(*d));
                } else {
                    std::cerr << "warning: client dropped from round " << log.round_index
                              << " (non-finite loss)\n";
                }
            }
            if (surviving.empty()) {
                std::cerr << "warning: all clients dropped; round " << log.round_index
                          << " skipped\n";
                ++result.state.round_index;
            } else {
                log.mean_client_loss = loss_sum / static_cast<double>(surviving.size());
                server_step(result.state, surviving, fl);
            }

            bool epoch_end = (r == rounds_per_epoch - 1);
            if (epoch_end) {
                log.val_emr3 = pool_emr3(corpus, Pool::Validation, result.state.global_params,
                                         cfg, vocab);
                if (log.val_emr3 > result.best_val_emr3) {
                    result.best_val_emr3 = log.val_emr3;
                    result.best_params = result.state.global_params;
                }
            }
            log.wall_time_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.rounds.push_back(std::move(log));
        }
    }
    if (result.best_val_emr3 < 0.0) result.best_params = result.state.global_params;
    return result;
}

double train_centralized(std::vector<TokenizedSentence> sentences, ModelParams<float>& params,
                         const ModelConfig& cfg, const Vocabulary& vocab, int epochs, double lr,
                         int batch_size, std::uint64_t seed) {
    Rng rng(seed);
    double mean_loss = 0.0;
    if (!run_sgd_epochs(std::move(sentences), params, cfg, vocab, epochs, lr, batch_size, rng,
                        &mean_loss))
        throw std::runtime_error("non-finite loss during centralized training");
    return mean_loss;
}

}  // namespace oovx
