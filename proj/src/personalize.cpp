#include "oovx/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <thread>

#include "oovx/checkpoint.hpp"
#include "oovx/rng.hpp"
#include "json.hpp"

namespace oovx {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::OovAsUnk: return "oov_as_unk";
        case Strategy::OovOracle: return "oov_oracle";
        case Strategy::OovExpansion: return "oov_expansion";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "oov_as_unk" || name == "as-unk" || name == "as_unk") return Strategy::OovAsUnk;
    if (name == "oov_oracle" || name == "oracle") return Strategy::OovOracle;
    if (name == "oov_expansion" || name == "expansion") return Strategy::OovExpansion;
    throw std::invalid_argument("unknown strategy: " + name);
}

namespace {

struct GridPoint {
    double lr;
    double sigma = 0.0;
    std::vector<int> hidden_dims;  // empty for non-expansion strategies

    // Tie order: smaller lr, then smaller sigma, then shorter H.
    bool tie_beats(const GridPoint& other) const {
        if (lr != other.lr) return lr < other.lr;
        if (sigma != other.sigma) return sigma < other.sigma;
        return hidden_dims.size() < other.hidden_dims.size();
    }
};

struct Candidate {
    ModelParams<float> params;
    std::optional<AdapterParams<float>> adapter;
    AdapterConfig adapter_cfg;
    double val_emr3 = -1.0;
    int epochs_run = 0;
    GridPoint point;
};

// One SGD step that honors freeze_base: adapter (when present) always trains,
// base parameters only when not frozen.
bool personalize_step(ModelParams<float>& params, std::optional<AdapterParams<float>>& adapter,
                      const AdapterConfig& acfg, const std::vector<TokenizedSentence>& batch,
                      float lr, const ModelConfig& cfg, const Vocabulary& vocab,
                      const std::vector<std::string>* oov_words, bool freeze_base) {
    ModelParams<float> grad = zeros_like_model(params);
    AdapterParams<float> agrad;
    ExpansionSpec<float> spec;
    ExpansionSpec<float>* spec_ptr = nullptr;
    if (oov_words && !oov_words->empty()) {
        spec.oov_words = oov_words;
        if (adapter) {
            spec.adapter_cfg = &acfg;
            spec.adapter = &*adapter;
            agrad = zeros_like(*adapter);
        }
        spec_ptr = &spec;
    }
    float loss = nll_loss_grad<float>(batch, params, cfg, vocab, &grad, spec_ptr,
                                      (spec_ptr && adapter) ? &agrad : nullptr);
    if (!std::isfinite(static_cast<double>(loss)) || !all_finite(grad)) return false;
    if (!freeze_base) {
        std::vector<std::vector<float>*> pv, gv;
        params.visit([&](const std::string&, std::vector<float>& v) { pv.push_back(&v); });
        grad.visit([&](const std::string&, std::vector<float>& v) { gv.push_back(&v); });
        for (std::size_t i = 0; i < pv.size(); ++i)
            for (std::size_t j = 0; j < pv[i]->size(); ++j) (*pv[i])[j] -= lr * (*gv[i])[j];
    }
    if (spec_ptr && adapter) {
        std::vector<std::vector<float>*> pv, gv;
        adapter->visit([&](const std::string&, std::vector<float>& v) { pv.push_back(&v); });
        agrad.visit([&](const std::string&, std::vector<float>& v) { gv.push_back(&v); });
        for (std::size_t i = 0; i < pv.size(); ++i)
            for (std::size_t j = 0; j < pv[i]->size(); ++j) (*pv[i])[j] -= lr * (*gv[i])[j];
    }
    return true;
}

double eval_emr3(const std::vector<TokenizedSentence>& sentences, const ModelParams<float>& params,
                 const ModelConfig& cfg, const Vocabulary& vocab,
                 const std::optional<AdapterParams<float>>& adapter, const AdapterConfig& acfg,
                 const std::vector<std::string>* oov_words) {
    ExpansionSpec<float> spec;
    ExpansionSpec<float>* spec_ptr = nullptr;
    if (oov_words && !oov_words->empty()) {
        spec.oov_words = oov_words;
        if (adapter) {
            spec.adapter_cfg = &acfg;
            spec.adapter = &*adapter;
        }
        spec_ptr = &spec;
    }
    return evaluate_topk(sentences, 3, params, cfg, vocab, spec_ptr).emr();
}

// Trains one grid point to its early-stopped best-validation checkpoint.
// Returns nullopt when every epoch diverged.
std::optional<Candidate> train_grid_point(const ModelParams<float>& global_params,
                                          const ModelConfig& cfg, const Vocabulary& vocab,
                                          const std::vector<TokenizedSentence>& train,
                                          const std::vector<TokenizedSentence>& val,
                                          const GridPoint& point,
                                          const PersonalizationConfig& pcfg,
                                          const std::vector<std::string>* oov_words,
                                          std::uint64_t seed) {
    Candidate cand;
    cand.point = point;
    cand.params = global_params;
    if (!point.hidden_dims.empty() && pcfg.use_adapter) {
        cand.adapter_cfg.hidden_dims = point.hidden_dims;
        cand.adapter_cfg.init_sigma = point.sigma;
        cand.adapter_cfg.io_dim = cfg.hidden_dim;
        cand.adapter = init_adapter<float>(cand.adapter_cfg, splitmix64(seed ^ 0xada7ULL));
    }

    ModelParams<float> cur = cand.params;
    std::optional<AdapterParams<float>> cur_adapter = cand.adapter;
    std::vector<TokenizedSentence> shuffled = train;
    Rng rng(seed);
    double best_val = -1.0;
    int best_epoch = 0;
    int bad_epochs = 0;
    for (int epoch = 1; epoch <= pcfg.max_epochs; ++epoch) {
        rng.shuffle(shuffled);
        bool ok = true;
        for (std::size_t start = 0; start < shuffled.size() && ok;
             start += static_cast<std::size_t>(pcfg.batch_size)) {
            std::size_t end =
                std::min(shuffled.size(), start + static_cast<std::size_t>(pcfg.batch_size));
            std::vector<TokenizedSentence> batch(
                shuffled.begin() + static_cast<std::ptrdiff_t>(start),
                shuffled.begin() + static_cast<std::ptrdiff_t>(end));
            bool empty = true;
            for (const auto& s : batch)
                if (!s.empty()) empty = false;
            if (empty) continue;
            ok = personalize_step(cur, cur_adapter, cand.adapter_cfg, batch,
                                  static_cast<float>(point.lr), cfg, vocab, oov_words,
                                  pcfg.freeze_base);
        }
        if (!ok) break;  // diverged; keep the best checkpoint so far, if any
        double val_emr = eval_emr3(val, cur, cfg, vocab, cur_adapter, cand.adapter_cfg, oov_words);
        if (val_emr > best_val) {
            best_val = val_emr;
            best_epoch = epoch;
            cand.params = cur;
            cand.adapter = cur_adapter;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= pcfg.patience) break;
        }
    }
    if (best_epoch == 0) return std::nullopt;
    cand.val_emr3 = best_val;
    cand.epochs_run = best_epoch;
    return cand;
}

std::vector<GridPoint> build_grid(const PersonalizationConfig& pcfg) {
    std::vector<GridPoint> grid;
    if (pcfg.strategy == Strategy::OovExpansion) {
        if (pcfg.use_adapter) {
            if (pcfg.sigma_grid.empty() || pcfg.h_grid.empty())
                throw std::invalid_argument("expansion strategy requires sigma and H grids");
            for (double lr : pcfg.lr_grid)
                for (double sigma : pcfg.sigma_grid)
                    for (const auto& h : pcfg.h_grid) grid.push_back({lr, sigma, h});
        } else {
            // Identity block: no adapter hyperparameters.
            for (double lr : pcfg.lr_grid) grid.push_back({lr, 0.0, {}});
        }
    } else {
        for (double lr : pcfg.lr_grid) grid.push_back({lr, 0.0, {}});
    }
    return grid;
}

}  // namespace

PersonalizedClient personalize_client(const ModelParams<float>& global_params,
                                      const ModelConfig& cfg, const Vocabulary& vocab,
                                      const ClientDataset& client,
                                      const PersonalizationConfig& pcfg) {
    if (client.pool != Pool::Test || client.segments.size() != client.sentences.size())
        throw std::invalid_argument("personalize_client requires a segmented test client");

    PersonalizedClient out;
    out.params = global_params;
    out.result.client_id = client.client_id;
    out.result.degenerate = client.degenerate;

    auto train = client.segment_sentences(Segment::PersonalizeTrain);
    auto val = client.segment_sentences(Segment::PersonalizeVal);
    auto test = client.segment_sentences(Segment::PersonalizeTest);

    const bool expansion = pcfg.strategy == Strategy::OovExpansion;
    const std::vector<std::string>* oov_words = nullptr;
    if (expansion) {
        out.oov_list = client_top_oov(client, vocab, static_cast<std::size_t>(pcfg.n_oov));
        out.result.oov_list_size = out.oov_list.size();
        oov_words = &out.oov_list.words;
    }

    // Before-metrics: the unmodified global model, plain vocabulary scoring.
    {
        auto counts = evaluate_topk<float>(test, 3, global_params, cfg, vocab, nullptr, &vocab);
        out.result.emr3_before = counts.emr();
        out.result.kemr3_before = counts.kemr();
        out.result.test_tokens = counts.positions;
        out.result.test_known_tokens = counts.known_positions;
        out.result.oov_rate_before = oov_rate(test, vocab);
    }

    bool trainable = !train.empty();
    if (trainable) {
        bool any_tokens = false;
        for (const auto& s : train)
            if (!s.empty()) any_tokens = true;
        trainable = any_tokens;
    }
    std::optional<Candidate> best;
    if (!trainable) {
        out.result.empty_train = true;
    } else {
        std::uint64_t client_seed = splitmix64(pcfg.seed ^ fnv1a64(client.client_id));
        for (const auto& point : build_grid(pcfg)) {
            auto cand = train_grid_point(global_params, cfg, vocab, train, val, point, pcfg,
                                         oov_words, client_seed);
            if (!cand) continue;
            bool wins = !best || cand->val_emr3 > best->val_emr3 ||
                        (cand->val_emr3 == best->val_emr3 && cand->point.tie_beats(best->point));
            if (wins) best = std::move(cand);
        }
    }

    if (best) {
        out.params = std::move(best->params);
        out.adapter = std::move(best->adapter);
        out.adapter_config = best->adapter_cfg;
        out.result.chosen_lr = best->point.lr;
        out.result.chosen_sigma = best->point.sigma;
        out.result.chosen_hidden_dims = best->point.hidden_dims;
        out.result.epochs_run = best->epochs_run;
        out.result.val_emr3 = best->val_emr3;
    }

    // After-metrics with the selected model (joined scoring under expansion).
    {
        ExpansionSpec<float> spec;
        ExpansionSpec<float>* spec_ptr = nullptr;
        if (expansion && oov_words && !oov_words->empty()) {
            spec.oov_words = oov_words;
            if (out.adapter) {
                spec.adapter_cfg = &out.adapter_config;
                spec.adapter = &*out.adapter;
            }
            spec_ptr = &spec;
        }
        auto counts = evaluate_topk(test, 3, out.params, cfg, vocab, spec_ptr, &vocab);
        out.result.emr3_after = counts.emr();
        out.result.kemr3_after = counts.kemr();
        out.result.oov_rate_after = oov_rate(test, vocab, expansion ? &out.oov_list : nullptr);
    }
    return out;
}

namespace {

nlohmann::json client_result_json(const ClientResult& r) {
    return {{"client_id", r.client_id},
            {"chosen_lr", r.chosen_lr},
            {"chosen_sigma", r.chosen_sigma},
            {"chosen_hidden_dims", r.chosen_hidden_dims},
            {"epochs_run", r.epochs_run},
            {"val_emr3", r.val_emr3},
            {"emr3_before", r.emr3_before},
            {"emr3_after", r.emr3_after},
            {"kemr3_before", r.kemr3_before},
            {"kemr3_after", r.kemr3_after},
            {"oov_rate_before", r.oov_rate_before},
            {"oov_rate_after", r.oov_rate_after},
            {"test_tokens", r.test_tokens},
            {"test_known_tokens", r.test_known_tokens},
            {"oov_list_size", r.oov_list_size},
            {"degenerate", r.degenerate},
            {"empty_train", r.empty_train}};
}

}  // namespace

PersonalizationRun personalize_all(const ModelParams<float>& global_params,
                                   const ModelConfig& cfg, const Vocabulary& vocab,
                                   const FederatedCorpus& corpus,
                                   const PersonalizationConfig& pcfg,
                                   const std::string& out_dir) {
    std::vector<const ClientDataset*> clients = corpus.pool_clients(Pool::Test);
    std::sort(clients.begin(), clients.end(),
              [](const ClientDataset* a, const ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    std::vector<PersonalizedClient> done(clients.size());
    auto worker = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < clients.size(); i += step)
            done[i] = personalize_client(global_params, cfg, vocab, *clients[i], pcfg);
    };
    int jobs = std::max(1, pcfg.jobs);
    if (jobs == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (int j = 0; j < jobs; ++j)
            threads.emplace_back(worker, static_cast<std::size_t>(j),
                                 static_cast<std::size_t>(jobs));
        for (auto& th : threads) th.join();
    }

    PersonalizationRun run;
    std::vector<ClientMetrics> before_metrics, after_metrics;
    for (auto& pc : done) {
        const auto& r = pc.result;
        run.clients.push_back(r);
        ClientMetrics base{r.client_id, r.emr3_before,     r.kemr3_before, r.oov_rate_before,
                           r.test_tokens, r.test_known_tokens, r.degenerate};
        ClientMetrics after{r.client_id, r.emr3_after,     r.kemr3_after, r.oov_rate_after,
                            r.test_tokens, r.test_known_tokens, r.degenerate};
        before_metrics.push_back(base);
        after_metrics.push_back(after);
        if (!out_dir.empty()) {
            std::filesystem::path dir = std::filesystem::path(out_dir) / r.client_id;
            std::filesystem::create_directories(dir);
            save_model_checkpoint(dir / "model", pc.params, cfg, "");
            if (pc.adapter) save_adapter_checkpoint(dir / "model", *pc.adapter, pc.adapter_config);
            if (pcfg.strategy == Strategy::OovExpansion)
                pc.oov_list.save((dir / "oov_list.txt").string());
            write_text_atomic(dir / "result.json", client_result_json(r).dump(2) + "\n");
        }
    }
    run.before = aggregate_report(before_metrics);
    run.after = aggregate_report(after_metrics);
    return run;
}

}  // namespace oovx
