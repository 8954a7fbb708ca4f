#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oovx/corpus.hpp"
#include "oovx/model.hpp"
#include "oovx/rng.hpp"
#include "oovx/vocab.hpp"

namespace oovx {

struct FLConfig {
    int clients_per_round = 96;
    int local_epochs = 1;
    int local_batch_size = 8;
    int global_epochs = 1;
    double client_lr = 0.1;
    double server_lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct ServerState {
    ModelParams<float> global_params;
    ModelParams<float> first_moment;
    ModelParams<float> second_moment;
    long long round_index = 0;
};

struct RoundLog {
    long long round_index = 0;
    std::vector<std::string> client_ids;
    double mean_client_loss = 0.0;
    double wall_time_s = 0.0;
    double val_emr3 = -1.0;  // -1 when not evaluated this round
};

struct ClientDelta {
    std::string client_id;
    ModelParams<float> delta;
    std::int64_t weight = 0;  // client token count
    double mean_loss = 0.0;
};

// Uniform sample of k client ids without replacement; deterministic in rng.
std::vector<std::string> sample_clients(const std::vector<std::string>& pool, int k, Rng& rng);

// Local SGD from a copy of the global parameters; nullopt when the client
// diverged (non-finite loss) and was dropped.
std::optional<ClientDelta> local_update(const ModelParams<float>& global_params,
                                        const ClientDataset& client, const FLConfig& fl,
                                        const ModelConfig& cfg, const Vocabulary& vocab,
                                        std::uint64_t shuffle_seed);

// FedAdam on the negative token-weighted mean delta, decoupled weight decay.
// Deltas must arrive sorted by client id.
void server_step(ServerState& state, const std::vector<ClientDelta>& deltas, const FLConfig& fl);

struct FLResult {
    ServerState state;
    std::vector<RoundLog> rounds;
    ModelParams<float> best_params;  // best validation EMR_3 checkpoint
    double best_val_emr3 = -1.0;
};

FLResult run_fl(const FederatedCorpus& corpus, const Vocabulary& vocab, const ModelConfig& cfg,
                const FLConfig& fl, const ModelParams<float>& initial);

// Centralized next-word training over a flat sentence list (the pretraining
// stand-in). Returns the final mean epoch loss.
double train_centralized(std::vector<TokenizedSentence> sentences, ModelParams<float>& params,
                         const ModelConfig& cfg, const Vocabulary& vocab, int epochs, double lr,
                         int batch_size, std::uint64_t seed);

// Validation-pool EMR_3 of a parameter snapshot.
double pool_emr3(const FederatedCorpus& corpus, Pool pool, const ModelParams<float>& params,
                 const ModelConfig& cfg, const Vocabulary& vocab);

}  // namespace oovx
