// oovx: federated next-word-prediction sandbox with OOV-aware personalization.
//
// Subcommands: gen-data, build-vocab, pretrain, fl-train, personalize,
// evaluate, report, plot-tail, grid-search. Every subcommand accepts a JSON
// experiment config (--config) whose values are overridden by flags, and every
// option can also be set through an OOVX_-prefixed environment variable. Each
// run writes its resolved configuration beside its outputs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "oovx/checkpoint.hpp"
#include "oovx/corpus.hpp"
#include "oovx/fedsim.hpp"
#include "oovx/metrics.hpp"
#include "oovx/model.hpp"
#include "oovx/personalize.hpp"
#include "oovx/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oovx;

namespace {

// ---------------------------------------------------------------------------
// Option plumbing
// ---------------------------------------------------------------------------

std::string env_name_for(const std::string& flag) {
    std::string name = "OOVX_";
    for (char c : flag) {
        if (c == '-') {
            if (!name.empty() && name.back() != '_') name += '_';
        } else {
            name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
    }
    return name;
}

template <class T>
CLI::Option* opt(CLI::App* app, const std::string& flag, T& var, const std::string& desc) {
    auto* o = app->add_option(flag, var, desc);
    std::string first = flag.substr(flag.find("--") + 2);
    auto comma = first.find(',');
    if (comma != std::string::npos) first = first.substr(0, comma);
    o->envname(env_name_for(first));
    return o;
}

CLI::Option* flg(CLI::App* app, const std::string& flag, bool& var, const std::string& desc) {
    auto* o = app->add_flag(flag, var, desc);
    std::string first = flag.substr(flag.find("--") + 2);
    o->envname(env_name_for(first));
    return o;
}

PoolRatios parse_ratios(const std::string& text) {
    PoolRatios r;
    std::istringstream in(text);
    char c1, c2;
    if (!(in >> r.train >> c1 >> r.validation >> c2 >> r.test) || c1 != ',' || c2 != ',')
        throw CLI::ValidationError("--pool-ratios", "expected A,B,C");
    return r;
}

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

// H grids are semicolon-separated layer lists: "960;128,256,128".
std::vector<std::vector<int>> parse_h_grid(const std::string& text) {
    std::vector<std::vector<int>> out;
    std::istringstream in(text);
    std::string group;
    while (std::getline(in, group, ';')) {
        std::vector<int> dims;
        std::istringstream gi(group);
        std::string item;
        while (std::getline(gi, item, ','))
            if (!item.empty()) dims.push_back(std::stoi(item));
        if (!dims.empty()) out.push_back(dims);
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    return out.str();
}

std::string join_h_grid(const std::vector<std::vector<int>>& grid) {
    std::ostringstream out;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (g) out << ';';
        for (std::size_t i = 0; i < grid[g].size(); ++i) out << (i ? "," : "") << grid[g][i];
    }
    return out.str();
}

// Pre-scan for --config so JSON values become defaults that flags override.
json load_cli_config(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw std::runtime_error(std::string("cannot open config: ") + argv[i + 1]);
            json j;
            in >> j;
            return j;
        }
    }
    return json::object();
}

template <class T>
void cfg_get(const json& j, const char* section, const char* key, T& var) {
    if (j.contains(section) && j[section].contains(key)) var = j[section][key].get<T>();
}

void write_resolved_config(const fs::path& out_target, const json& resolved) {
    fs::path path;
    if (fs::is_directory(out_target) || out_target.extension().empty()) {
        fs::create_directories(out_target);
        path = out_target / "config.json";
    } else {
        if (out_target.has_parent_path()) fs::create_directories(out_target.parent_path());
        path = out_target;
        path += ".config.json";
    }
    write_text_atomic(path, resolved.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct CorpusArgs {
    std::string corpus;
    std::uint64_t split_seed = 0;
    std::string pool_ratios = "0.8,0.1,0.1";

    void wire(CLI::App* app, const json& cfg) {
        std::string c = corpus;
        cfg_get(cfg, "corpus", "path", c);
        corpus = c;
        cfg_get(cfg, "corpus", "split_seed", split_seed);
        cfg_get(cfg, "corpus", "pool_ratios", pool_ratios);
        opt(app, "--corpus", corpus, "JSONL corpus path")->required(corpus.empty());
        opt(app, "--split-seed", split_seed, "seed for the client pool split");
        opt(app, "--pool-ratios", pool_ratios, "train,validation,test ratios");
    }

    FederatedCorpus load() const {
        return load_corpus(corpus, split_seed, parse_ratios(pool_ratios));
    }

    json resolved() const {
        return {{"path", corpus}, {"split_seed", split_seed}, {"pool_ratios", pool_ratios}};
    }
};

struct ModelArgs {
    ModelConfig cfg;

    void wire(CLI::App* app, const json& j) {
        cfg_get(j, "model", "char_embed_dim", cfg.char_embed_dim);
        cfg_get(j, "model", "hidden_dim", cfg.hidden_dim);
        cfg_get(j, "model", "kernel_width", cfg.kernel_width);
        cfg_get(j, "model", "lstm_layers", cfg.lstm_layers);
        cfg_get(j, "model", "max_word_bytes", cfg.max_word_bytes);
        opt(app, "--char-embed-dim", cfg.char_embed_dim, "CharCNN byte-embedding size");
        opt(app, "--hidden-dim", cfg.hidden_dim, "word-embedding / LSTM width");
        opt(app, "--kernel-width", cfg.kernel_width, "CharCNN convolution width");
        opt(app, "--lstm-layers", cfg.lstm_layers, "number of stacked LSTM layers");
        opt(app, "--max-word-bytes", cfg.max_word_bytes, "per-word UTF-8 byte cap");
    }
};

struct FLArgs {
    FLConfig fl;

    void wire(CLI::App* app, const json& j) {
        cfg_get(j, "fl", "clients_per_round", fl.clients_per_round);
        cfg_get(j, "fl", "local_epochs", fl.local_epochs);
        cfg_get(j, "fl", "local_batch_size", fl.local_batch_size);
        cfg_get(j, "fl", "global_epochs", fl.global_epochs);
        cfg_get(j, "fl", "client_lr", fl.client_lr);
        cfg_get(j, "fl", "server_lr", fl.server_lr);
        cfg_get(j, "fl", "beta1", fl.beta1);
        cfg_get(j, "fl", "beta2", fl.beta2);
        cfg_get(j, "fl", "eps", fl.eps);
        cfg_get(j, "fl", "weight_decay", fl.weight_decay);
        cfg_get(j, "fl", "seed", fl.seed);
        cfg_get(j, "fl", "jobs", fl.jobs);
        opt(app, "--clients-per-round", fl.clients_per_round, "sampled clients per round");
        opt(app, "--local-epochs", fl.local_epochs, "client SGD epochs per round");
        opt(app, "--local-batch-size", fl.local_batch_size, "client batch size");
        opt(app, "--global-epochs", fl.global_epochs, "passes over the train pool");
        opt(app, "--client-lr", fl.client_lr, "client SGD learning rate");
        opt(app, "--server-lr", fl.server_lr, "FedAdam server learning rate");
        opt(app, "--beta1", fl.beta1, "FedAdam beta1");
        opt(app, "--beta2", fl.beta2, "FedAdam beta2");
        opt(app, "--adam-eps", fl.eps, "FedAdam epsilon");
        opt(app, "--weight-decay", fl.weight_decay, "decoupled server weight decay");
        opt(app, "--fl-seed", fl.seed, "federated sampling/shuffle seed");
        opt(app, "--jobs", fl.jobs, "parallel client workers");
    }

    json resolved() const {
        return {{"clients_per_round", fl.clients_per_round},
                {"local_epochs", fl.local_epochs},
                {"local_batch_size", fl.local_batch_size},
                {"global_epochs", fl.global_epochs},
                {"client_lr", fl.client_lr},
                {"server_lr", fl.server_lr},
                {"beta1", fl.beta1},
                {"beta2", fl.beta2},
                {"eps", fl.eps},
                {"weight_decay", fl.weight_decay},
                {"seed", fl.seed},
                {"jobs", fl.jobs}};
    }
};

// ---------------------------------------------------------------------------
// Model helpers
// ---------------------------------------------------------------------------

json report_json(const MetricsReport& r) {
    json j;
    for (const auto& [k, v] : r.emr_k) j["emr_k"][std::to_string(k)] = v;
    for (const auto& [k, v] : r.kemr_k) j["kemr_k"][std::to_string(k)] = v;
    j["oov_rate"] = r.oov_rate;
    j["total_tokens"] = r.total_tokens;
    j["known_tokens"] = r.known_tokens;
    j["empty"] = r.empty;
    return j;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    SyntheticSpec spec;
    std::string out, ratios = "0.8,0.1,0.1";
    int min_len = spec.sentence_length_range.first, max_len = spec.sentence_length_range.second;
    cfg_get(cfg, "generator", "n_clients", spec.n_clients);
    cfg_get(cfg, "generator", "shared_vocab_size", spec.shared_vocab_size);
    cfg_get(cfg, "generator", "tail_size_per_client", spec.tail_size_per_client);
    cfg_get(cfg, "generator", "zipf_exponent", spec.zipf_exponent);
    cfg_get(cfg, "generator", "tail_zipf_exponent", spec.tail_zipf_exponent);
    cfg_get(cfg, "generator", "sentences_per_client", spec.sentences_per_client);
    cfg_get(cfg, "generator", "private_mixture_weight", spec.private_mixture_weight);
    cfg_get(cfg, "generator", "seed", spec.seed);
    cfg_get(cfg, "generator", "min_sentence_len", min_len);
    cfg_get(cfg, "generator", "max_sentence_len", max_len);
    cfg_get(cfg, "corpus", "split_seed", spec.split_seed);
    cfg_get(cfg, "corpus", "pool_ratios", ratios);

    opt(app, "--n-clients", spec.n_clients, "number of synthetic clients");
    opt(app, "--shared-vocab", spec.shared_vocab_size, "shared Zipf head size");
    opt(app, "--tail-size", spec.tail_size_per_client, "private tail words per client");
    opt(app, "--zipf", spec.zipf_exponent, "shared-head Zipf exponent");
    opt(app, "--tail-zipf", spec.tail_zipf_exponent, "private-tail Zipf exponent");
    opt(app, "--sentences", spec.sentences_per_client, "sentences per client");
    opt(app, "--min-len", min_len, "minimum sentence length");
    opt(app, "--max-len", max_len, "maximum sentence length");
    opt(app, "--mixture", spec.private_mixture_weight, "private-word mixture weight");
    opt(app, "--seed", spec.seed, "generator seed");
    opt(app, "--split-seed", spec.split_seed, "pool split seed");
    opt(app, "--pool-ratios", ratios, "train,validation,test ratios");
    opt(app, "--out", out, "output JSONL path")->required();

    CLI11_PARSE(root, argc, argv);
    spec.sentence_length_range = {min_len, max_len};
    spec.ratios = parse_ratios(ratios);

    auto corpus = generate_synthetic(spec);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_corpus_jsonl(corpus, out);

    json resolved{{"command", "gen-data"},
                  {"generator",
                   {{"n_clients", spec.n_clients},
                    {"shared_vocab_size", spec.shared_vocab_size},
                    {"tail_size_per_client", spec.tail_size_per_client},
                    {"zipf_exponent", spec.zipf_exponent},
                    {"tail_zipf_exponent", spec.tail_zipf_exponent},
                    {"sentences_per_client", spec.sentences_per_client},
                    {"min_sentence_len", min_len},
                    {"max_sentence_len", max_len},
                    {"private_mixture_weight", spec.private_mixture_weight},
                    {"seed", spec.seed}}},
                  {"corpus", {{"path", out}, {"split_seed", spec.split_seed}, {"pool_ratios", ratios}}}};
    write_resolved_config(out, resolved);
    std::cout << "wrote " << corpus.clients.size() << " clients to " << out << "\n";
    return 0;
}

int cmd_build_vocab(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    std::size_t size = 5000;
    std::string out;
    corpus_args.wire(app, cfg);
    cfg_get(cfg, "vocab", "size", size);
    opt(app, "--size", size, "closed vocabulary size (word block)");
    opt(app, "--out", out, "vocabulary file path")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto vocab = build_vocab(corpus, size);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    vocab.save(out);

    json resolved{{"command", "build-vocab"},
                  {"corpus", corpus_args.resolved()},
                  {"vocab", {{"size", size}, {"path", out}}}};
    write_resolved_config(out, resolved);
    std::cout << "vocabulary: " << vocab.word_count() << " words + 3 specials -> " << out << "\n";
    return 0;
}

int cmd_pretrain(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    ModelArgs model_args;
    std::string vocab_path, out;
    int epochs = 1, batch_size = 8;
    double lr = 0.1;
    std::uint64_t seed = 0;
    corpus_args.wire(app, cfg);
    model_args.wire(app, cfg);
    cfg_get(cfg, "pretrain", "epochs", epochs);
    cfg_get(cfg, "pretrain", "batch_size", batch_size);
    cfg_get(cfg, "pretrain", "lr", lr);
    cfg_get(cfg, "pretrain", "seed", seed);
    cfg_get(cfg, "vocab", "path", vocab_path);
    opt(app, "--vocab", vocab_path, "vocabulary file")->required(vocab_path.empty());
    opt(app, "--epochs", epochs, "training epochs");
    opt(app, "--batch-size", batch_size, "batch size");
    opt(app, "--lr", lr, "SGD learning rate");
    opt(app, "--seed", seed, "init + shuffle seed");
    opt(app, "--out", out, "checkpoint output directory")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto vocab = Vocabulary::load(vocab_path);
    model_args.cfg.vocab_size = static_cast<int>(vocab.total_size());

    std::vector<TokenizedSentence> sentences;
    for (const auto* client : corpus.pool_clients(Pool::Train))
        for (const auto& s : client->sentences) sentences.push_back(s);

    auto params = init_model_params<float>(model_args.cfg, seed);
    double loss = train_centralized(sentences, params, model_args.cfg, vocab, epochs, lr,
                                    batch_size, seed);
    save_model_checkpoint(out, params, model_args.cfg, vocab_path);

    json resolved{{"command", "pretrain"},
                  {"corpus", corpus_args.resolved()},
                  {"vocab", {{"path", vocab_path}}},
                  {"model", model_config_json(model_args.cfg)},
                  {"pretrain",
                   {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}}}};
    write_resolved_config(out, resolved);
    std::cout << "pretrained " << param_count(model_args.cfg) << " params, final epoch loss "
              << loss << " -> " << out << "\n";
    return 0;
}

void write_round_log(const fs::path& path, const std::vector<RoundLog>& rounds) {
    std::ostringstream out;
    for (const auto& r : rounds) {
        json j{{"round_index", r.round_index},
               {"client_ids", r.client_ids},
               {"mean_client_loss", r.mean_client_loss},
               {"wall_time_s", r.wall_time_s}};
        if (r.val_emr3 >= 0.0) j["val_emr3"] = r.val_emr3;
        out << j.dump() << "\n";
    }
    write_text_atomic(path, out.str());
}

int cmd_fl_train(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    FLArgs fl_args;
    std::string checkpoint, out;
    corpus_args.wire(app, cfg);
    fl_args.wire(app, cfg);
    cfg_get(cfg, "fl", "checkpoint", checkpoint);
    opt(app, "--checkpoint", checkpoint, "initial model checkpoint directory")
        ->required(checkpoint.empty());
    opt(app, "--out", out, "output directory")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto loaded = load_model_checkpoint(checkpoint);
    auto model_cfg = loaded.config;
    auto vocab = Vocabulary::load(loaded.vocab_path);

    auto result = run_fl(corpus, vocab, model_cfg, fl_args.fl, loaded.params);

    fs::create_directories(out);
    save_model_checkpoint(fs::path(out) / "final", result.state.global_params, model_cfg,
                          loaded.vocab_path);
    save_model_checkpoint(fs::path(out) / "best", result.best_params, model_cfg,
                          loaded.vocab_path);
    write_round_log(fs::path(out) / "rounds.jsonl", result.rounds);

    json resolved{{"command", "fl-train"},
                  {"corpus", corpus_args.resolved()},
                  {"model", model_config_json(model_cfg)},
                  {"fl", fl_args.resolved()},
                  {"checkpoint", checkpoint}};
    write_resolved_config(out, resolved);
    std::cout << "fl-train: " << result.rounds.size() << " rounds, best val EMR_3 "
              << result.best_val_emr3 << " -> " << out << "\n";
    return 0;
}

int cmd_personalize(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    PersonalizationConfig pcfg;
    std::string checkpoint, out, strategy = "as-unk";
    std::string lr_grid = join_doubles(pcfg.lr_grid);
    std::string sigma_grid = join_doubles(pcfg.sigma_grid);
    std::string h_grid = join_h_grid(pcfg.h_grid);
    std::size_t oracle_n = 5000;
    bool no_adapter = false;

    corpus_args.wire(app, cfg);
    cfg_get(cfg, "personalize", "strategy", strategy);
    cfg_get(cfg, "personalize", "n_oov", pcfg.n_oov);
    cfg_get(cfg, "personalize", "lr_grid", lr_grid);
    cfg_get(cfg, "personalize", "sigma_grid", sigma_grid);
    cfg_get(cfg, "personalize", "h_grid", h_grid);
    cfg_get(cfg, "personalize", "max_epochs", pcfg.max_epochs);
    cfg_get(cfg, "personalize", "patience", pcfg.patience);
    cfg_get(cfg, "personalize", "batch_size", pcfg.batch_size);
    cfg_get(cfg, "personalize", "freeze_base", pcfg.freeze_base);
    cfg_get(cfg, "personalize", "seed", pcfg.seed);
    cfg_get(cfg, "personalize", "jobs", pcfg.jobs);
    cfg_get(cfg, "personalize", "oracle_n", oracle_n);
    cfg_get(cfg, "personalize", "checkpoint", checkpoint);

    opt(app, "--checkpoint", checkpoint, "global model checkpoint directory")
        ->required(checkpoint.empty());
    opt(app, "--strategy", strategy, "as-unk | oracle | expansion");
    opt(app, "--n-oov", pcfg.n_oov, "per-client OOV list cap (expansion)");
    opt(app, "--lr-grid", lr_grid, "comma-separated learning-rate grid");
    opt(app, "--sigma-grid", sigma_grid, "comma-separated adapter init sigmas");
    opt(app, "--h-grid", h_grid, "adapter hidden dims, e.g. 960;128,256,128");
    opt(app, "--max-epochs", pcfg.max_epochs, "per-grid-point epoch cap");
    opt(app, "--patience", pcfg.patience, "early-stopping patience");
    opt(app, "--batch-size", pcfg.batch_size, "fine-tuning batch size");
    opt(app, "--oracle-n", oracle_n, "oracle vocabulary expansion size");
    opt(app, "--seed", pcfg.seed, "personalization seed");
    opt(app, "--jobs", pcfg.jobs, "parallel client workers");
    flg(app, "--freeze-base", pcfg.freeze_base, "train only the adapter");
    flg(app, "--no-adapter", no_adapter, "identity block in the OOV path");
    opt(app, "--out", out, "output directory")->required();
    CLI11_PARSE(root, argc, argv);

    pcfg.strategy = strategy_from_name(strategy);
    pcfg.lr_grid = parse_doubles(lr_grid);
    pcfg.sigma_grid = parse_doubles(sigma_grid);
    pcfg.h_grid = parse_h_grid(h_grid);
    pcfg.use_adapter = !no_adapter;

    auto corpus = corpus_args.load();
    auto loaded = load_model_checkpoint(checkpoint);
    auto model_cfg = loaded.config;
    auto params = std::move(loaded.params);
    auto vocab = Vocabulary::load(loaded.vocab_path);

    fs::create_directories(out);
    if (pcfg.strategy == Strategy::OovOracle) {
        auto expanded = expand_vocab_oracle(vocab, corpus, oracle_n);
        params = expand_decoder(params, model_cfg, vocab, expanded);
        vocab = std::move(expanded);
        vocab.save((fs::path(out) / "oracle_vocab.txt").string());
    }

    auto run = personalize_all(params, model_cfg, vocab, corpus, pcfg, out);

    long long total_params = param_count(model_cfg);
    if (pcfg.strategy == Strategy::OovExpansion && pcfg.use_adapter && !pcfg.h_grid.empty()) {
        AdapterConfig acfg;
        acfg.hidden_dims = pcfg.h_grid.front();
        acfg.io_dim = model_cfg.hidden_dim;
        total_params += adapter_param_count(acfg);
    }

    json clients = json::array();
    for (const auto& c : run.clients)
        clients.push_back({{"client_id", c.client_id},
                           {"emr3_before", c.emr3_before},
                           {"emr3_after", c.emr3_after},
                           {"kemr3_before", c.kemr3_before},
                           {"kemr3_after", c.kemr3_after},
                           {"oov_rate_before", c.oov_rate_before},
                           {"oov_rate_after", c.oov_rate_after},
                           {"chosen_lr", c.chosen_lr},
                           {"chosen_sigma", c.chosen_sigma},
                           {"chosen_hidden_dims", c.chosen_hidden_dims},
                           {"epochs_run", c.epochs_run},
                           {"degenerate", c.degenerate},
                           {"empty_train", c.empty_train}});
    json run_json{{"strategy", strategy_name(pcfg.strategy)},
                  {"param_count", total_params},
                  {"before", report_json(run.before)},
                  {"after", report_json(run.after)},
                  {"clients", clients}};
    write_text_atomic(fs::path(out) / "run.json", run_json.dump(2) + "\n");
    write_text_atomic(fs::path(out) / "after_report.csv", metrics_report_csv(run.after));

    json resolved{{"command", "personalize"},
                  {"corpus", corpus_args.resolved()},
                  {"checkpoint", checkpoint},
                  {"personalize",
                   {{"strategy", strategy_name(pcfg.strategy)},
                    {"n_oov", pcfg.n_oov},
                    {"lr_grid", join_doubles(pcfg.lr_grid)},
                    {"sigma_grid", join_doubles(pcfg.sigma_grid)},
                    {"h_grid", join_h_grid(pcfg.h_grid)},
                    {"max_epochs", pcfg.max_epochs},
                    {"patience", pcfg.patience},
                    {"batch_size", pcfg.batch_size},
                    {"freeze_base", pcfg.freeze_base},
                    {"use_adapter", pcfg.use_adapter},
                    {"oracle_n", oracle_n},
                    {"seed", pcfg.seed},
                    {"jobs", pcfg.jobs}}}};
    write_resolved_config(out, resolved);
    std::cout << "personalize " << strategy_name(pcfg.strategy) << ": EMR_3 "
              << run.before.emr_k.at(3) << " -> " << run.after.emr_k.at(3) << " over "
              << run.after.per_client.size() << " clients -> " << out << "\n";
    return 0;
}

int cmd_evaluate(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    std::string checkpoint, out, pool_name_arg = "test", segment_arg;
    std::string ks = "1,3,5";
    corpus_args.wire(app, cfg);
    cfg_get(cfg, "evaluate", "checkpoint", checkpoint);
    cfg_get(cfg, "evaluate", "pool", pool_name_arg);
    cfg_get(cfg, "evaluate", "segment", segment_arg);
    cfg_get(cfg, "evaluate", "k", ks);
    opt(app, "--checkpoint", checkpoint, "model checkpoint directory")
        ->required(checkpoint.empty());
    opt(app, "--pool", pool_name_arg, "train | validation | test");
    opt(app, "--segment", segment_arg,
        "test-pool segment filter: personalize_train | personalize_val | personalize_test");
    opt(app, "--k", ks, "comma-separated top-K values");
    opt(app, "--out", out, "metrics JSON output path")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto loaded = load_model_checkpoint(checkpoint);
    auto vocab = Vocabulary::load(loaded.vocab_path);

    Pool pool;
    if (pool_name_arg == "train") pool = Pool::Train;
    else if (pool_name_arg == "validation") pool = Pool::Validation;
    else if (pool_name_arg == "test") pool = Pool::Test;
    else throw CLI::ValidationError("--pool", "unknown pool: " + pool_name_arg);

    std::optional<Segment> segment;
    if (!segment_arg.empty()) {
        if (segment_arg == "personalize_train") segment = Segment::PersonalizeTrain;
        else if (segment_arg == "personalize_val") segment = Segment::PersonalizeVal;
        else if (segment_arg == "personalize_test") segment = Segment::PersonalizeTest;
        else throw CLI::ValidationError("--segment", "unknown segment: " + segment_arg);
    }

    std::vector<int> k_values;
    for (double v : parse_doubles(ks)) k_values.push_back(static_cast<int>(v));

    std::vector<ClientMetrics> per_client;
    std::map<int, std::pair<long long, long long>> pooled;        // k -> (hits, positions)
    std::map<int, std::pair<long long, long long>> pooled_known;  // k -> known
    for (const auto* client : corpus.pool_clients(pool)) {
        auto sentences = segment ? client->segment_sentences(*segment) : client->sentences;
        ClientMetrics m;
        m.client_id = client->client_id;
        m.degenerate = client->degenerate;
        m.oov_rate = oov_rate(sentences, vocab);
        for (int k : k_values) {
            auto counts =
                evaluate_topk<float>(sentences, k, loaded.params, loaded.config, vocab,
                                     nullptr, &vocab);
            pooled[k].first += counts.hits;
            pooled[k].second += counts.positions;
            pooled_known[k].first += counts.known_hits;
            pooled_known[k].second += counts.known_positions;
            if (k == 3) {
                m.emr3 = counts.emr();
                m.kemr3 = counts.kemr();
                m.tokens = counts.positions;
                m.known_tokens = counts.known_positions;
            }
        }
        per_client.push_back(m);
    }
    auto report = aggregate_report(per_client);
    for (int k : k_values) {
        report.emr_k[k] = pooled[k].second
                              ? static_cast<double>(pooled[k].first) / pooled[k].second
                              : 0.0;
        report.kemr_k[k] = pooled_known[k].second
                               ? static_cast<double>(pooled_known[k].first) / pooled_known[k].second
                               : 0.0;
    }

    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_text_atomic(out, metrics_report_json(report));
    json resolved{{"command", "evaluate"},
                  {"corpus", corpus_args.resolved()},
                  {"evaluate",
                   {{"checkpoint", checkpoint},
                    {"pool", pool_name_arg},
                    {"segment", segment_arg},
                    {"k", ks}}}};
    write_resolved_config(out, resolved);
    std::cout << "evaluate: EMR_3 " << report.emr_k[3] << ", OOV rate " << report.oov_rate
              << " -> " << out << "\n";
    return 0;
}

int cmd_report(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    (void)cfg;
    std::vector<std::string> results;
    std::string out;
    app->add_option("--results", results, "personalization run directories (one per strategy)")
        ->required()
        ->expected(-1);
    opt(app, "--out", out, "comparison CSV path")->required();
    CLI11_PARSE(root, argc, argv);

    std::ostringstream csv;
    csv << "strategy,emr3,kemr3,oov_rate,param_count,emr3_before,clients\n";
    for (const auto& dir : results) {
        std::ifstream in(fs::path(dir) / "run.json");
        if (!in) throw std::runtime_error("missing run.json under " + dir);
        json j;
        in >> j;
        csv << j.at("strategy").get<std::string>() << ','
            << j.at("after").at("emr_k").at("3").get<double>() << ','
            << j.at("after").at("kemr_k").at("3").get<double>() << ','
            << j.at("after").at("oov_rate").get<double>() << ','
            << j.at("param_count").get<long long>() << ','
            << j.at("before").at("emr_k").at("3").get<double>() << ','
            << j.at("clients").size() << '\n';
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_text_atomic(out, csv.str());
    write_resolved_config(out, json{{"command", "report"}, {"results", results}});
    std::cout << "report over " << results.size() << " strategies -> " << out << "\n";
    return 0;
}

int cmd_plot_tail(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    int top_k = 10000, buckets = 20;
    std::string quantiles = "0.1,0.5,0.9", out;
    corpus_args.wire(app, cfg);
    cfg_get(cfg, "plot_tail", "top_k", top_k);
    cfg_get(cfg, "plot_tail", "buckets", buckets);
    cfg_get(cfg, "plot_tail", "quantiles", quantiles);
    opt(app, "--top-k", top_k, "number of top-ranked words");
    opt(app, "--buckets", buckets, "rank buckets");
    opt(app, "--quantiles", quantiles, "comma-separated quantiles");
    opt(app, "--out", out, "CSV output path")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto qs = parse_doubles(quantiles);
    auto rows = word_frequency_quantiles(corpus, top_k, qs, buckets);

    std::ostringstream csv;
    csv << "bucket_first_rank,bucket_last_rank";
    for (double q : qs) csv << ",q" << q;
    csv << "\n";
    for (const auto& row : rows) {
        csv << row.bucket_first_rank << ',' << row.bucket_last_rank;
        for (auto f : row.frequency_quantiles) csv << ',' << f;
        csv << "\n";
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_text_atomic(out, csv.str());
    write_resolved_config(out, json{{"command", "plot-tail"},
                                    {"corpus", corpus_args.resolved()},
                                    {"plot_tail",
                                     {{"top_k", top_k},
                                      {"buckets", buckets},
                                      {"quantiles", quantiles}}}});
    std::cout << "plot-tail: " << rows.size() << " buckets -> " << out << "\n";
    return 0;
}

int cmd_grid_search(const json& cfg, CLI::App& root, CLI::App* app, int argc, char** argv) {
    CorpusArgs corpus_args;
    FLArgs fl_args;
    std::string checkpoint, out;
    // Server-side sweep over (client_lr, server_lr); defaults ship the best
    // published pair. Documented search ranges: client lr in [1e-6, 0.05]
    // scaled sweeps up to ~1, server lr in [1e-5, 1].
    std::string client_lrs = "0.84", server_lrs = "0.003";
    corpus_args.wire(app, cfg);
    fl_args.wire(app, cfg);
    cfg_get(cfg, "grid_search", "client_lrs", client_lrs);
    cfg_get(cfg, "grid_search", "server_lrs", server_lrs);
    cfg_get(cfg, "fl", "checkpoint", checkpoint);
    opt(app, "--checkpoint", checkpoint, "initial model checkpoint directory")
        ->required(checkpoint.empty());
    opt(app, "--client-lrs", client_lrs, "comma-separated client learning rates");
    opt(app, "--server-lrs", server_lrs, "comma-separated server learning rates");
    opt(app, "--out", out, "output directory")->required();
    CLI11_PARSE(root, argc, argv);

    auto corpus = corpus_args.load();
    auto loaded = load_model_checkpoint(checkpoint);
    auto vocab = Vocabulary::load(loaded.vocab_path);

    fs::create_directories(out);
    std::ostringstream csv;
    csv << "client_lr,server_lr,best_val_emr3,rounds\n";
    double best_emr = -1.0;
    json best;
    for (double clr : parse_doubles(client_lrs)) {
        for (double slr : parse_doubles(server_lrs)) {
            FLConfig fl = fl_args.fl;
            fl.client_lr = clr;
            fl.server_lr = slr;
            auto result = run_fl(corpus, vocab, loaded.config, fl, loaded.params);
            csv << clr << ',' << slr << ',' << result.best_val_emr3 << ','
                << result.rounds.size() << "\n";
            if (result.best_val_emr3 > best_emr) {
                best_emr = result.best_val_emr3;
                best = {{"client_lr", clr}, {"server_lr", slr}, {"best_val_emr3", best_emr}};
                save_model_checkpoint(fs::path(out) / "best", result.best_params, loaded.config,
                                      loaded.vocab_path);
            }
        }
    }
    write_text_atomic(fs::path(out) / "grid.csv", csv.str());
    write_text_atomic(fs::path(out) / "best.json", best.dump(2) + "\n");
    write_resolved_config(out, json{{"command", "grid-search"},
                                    {"corpus", corpus_args.resolved()},
                                    {"fl", fl_args.resolved()},
                                    {"grid_search",
                                     {{"client_lrs", client_lrs}, {"server_lrs", server_lrs}}},
                                    {"checkpoint", checkpoint}});
    std::cout << "grid-search best val EMR_3 " << best_emr << " -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"oovx: federated next-word prediction with OOV-aware personalization"};
    app.require_subcommand(1);
    std::string config_path;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic federated corpus");
    auto* vocab = app.add_subcommand("build-vocab", "build the closed vocabulary");
    auto* pre = app.add_subcommand("pretrain", "centralized pretraining");
    auto* fl = app.add_subcommand("fl-train", "federated training with FedAdam");
    auto* pers = app.add_subcommand("personalize", "per-client fine-tuning");
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a pool");
    auto* rep = app.add_subcommand("report", "strategy comparison CSV");
    auto* tail = app.add_subcommand("plot-tail", "word-frequency quantile CSV");
    auto* grid = app.add_subcommand("grid-search", "sweep (client_lr, server_lr)");
    for (auto* sub : {gen, vocab, pre, fl, pers, eval, rep, tail, grid})
        sub->add_option("--config", config_path, "experiment config JSON")
            ->envname("OOVX_CONFIG");

    try {
        json cfg = load_cli_config(argc, argv);
        if (argc < 2) {
            std::cerr << app.help();
            return 1;
        }
        std::string sub = argv[1];
        // Each handler wires its options onto the already-registered
        // subcommand and parses the full argv through the root app.
        if (sub == "gen-data") return cmd_gen_data(cfg, app, gen, argc, argv);
        if (sub == "build-vocab") return cmd_build_vocab(cfg, app, vocab, argc, argv);
        if (sub == "pretrain") return cmd_pretrain(cfg, app, pre, argc, argv);
        if (sub == "fl-train") return cmd_fl_train(cfg, app, fl, argc, argv);
        if (sub == "personalize") return cmd_personalize(cfg, app, pers, argc, argv);
        if (sub == "evaluate") return cmd_evaluate(cfg, app, eval, argc, argv);
        if (sub == "report") return cmd_report(cfg, app, rep, argc, argv);
        if (sub == "plot-tail") return cmd_plot_tail(cfg, app, tail, argc, argv);
        if (sub == "grid-search") return cmd_grid_search(cfg, app, grid, argc, argv);
        std::cerr << "unknown subcommand: " << sub << "\n" << app.help();
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
