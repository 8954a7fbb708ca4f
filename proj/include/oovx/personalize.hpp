#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oovx/adapter.hpp"
#include "oovx/corpus.hpp"
#include "oovx/metrics.hpp"
#include "oovx/model.hpp"
#include "oovx/vocab.hpp"

namespace oovx {

enum class Strategy { OovAsUnk, OovOracle, OovExpansion };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct PersonalizationConfig {
    Strategy strategy = Strategy::OovAsUnk;
    int n_oov = 1000;
    std::vector<double> lr_grid = {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0};
    std::vector<double> sigma_grid = {0.0, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0};
    std::vector<std::vector<int>> h_grid = {{960}, {128, 256, 128}, {256, 512, 256}};
    int max_epochs = 10;
    int patience = 1;
    int batch_size = 8;
    bool freeze_base = false;
    bool use_adapter = true;  // false: identity block in the OOV path
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct ClientResult {
    std::string client_id;
    double chosen_lr = 0.0;
    double chosen_sigma = 0.0;
    std::vector<int> chosen_hidden_dims;
    int epochs_run = 0;
    double val_emr3 = 0.0;
    double emr3_before = 0.0, emr3_after = 0.0;
    double kemr3_before = 0.0, kemr3_after = 0.0;
    double oov_rate_before = 0.0, oov_rate_after = 0.0;
    std::int64_t test_tokens = 0;
    std::int64_t test_known_tokens = 0;
    std::size_t oov_list_size = 0;
    bool degenerate = false;    // excluded from aggregates
    bool empty_train = false;   // returned the global model unmodified
};

struct PersonalizedClient {
    ModelParams<float> params;
    std::optional<AdapterParams<float>> adapter;
    AdapterConfig adapter_config;
    OOVList oov_list;
    ClientResult result;
};

// Fine-tunes one test client under the configured strategy, running the
// hyperparameter grid with early-stopped epochs on the validation segment.
PersonalizedClient personalize_client(const ModelParams<float>& global_params,
                                      const ModelConfig& cfg, const Vocabulary& vocab,
                                      const ClientDataset& client,
                                      const PersonalizationConfig& pcfg);

struct PersonalizationRun {
    std::vector<ClientResult> clients;
    MetricsReport before;
    MetricsReport after;
};

// Personalizes every non-degenerate test client (optionally in parallel) and
// aggregates token-weighted metrics. When `out_dir` is non-empty, writes the
// per-client checkpoints, OOV lists, and result JSONs there.
PersonalizationRun personalize_all(const ModelParams<float>& global_params,
                                   const ModelConfig& cfg, const Vocabulary& vocab,
                                   const FederatedCorpus& corpus,
                                   const PersonalizationConfig& pcfg,
                                   const std::string& out_dir = "");

}  // namespace oovx
