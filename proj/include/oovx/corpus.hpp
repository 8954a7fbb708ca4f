#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oovx {

using TokenizedSentence = std::vector<std::string>;

enum class Pool { Train, Validation, Test };

enum class Segment { PersonalizeTrain, PersonalizeVal, PersonalizeTest };

const char* pool_name(Pool p);
const char* segment_name(Segment s);

struct ClientDataset {
    std::string client_id;
    std::vector<TokenizedSentence> sentences;
    Pool pool = Pool::Train;
    // Parallel to `sentences`; present iff pool == Test.
    std::vector<Segment> segments;
    // Set when a test client has fewer than 10 sentences; such clients keep
    // everything in the personalize-train segment and are excluded from
    // metric aggregation.
    bool degenerate = false;

    std::vector<TokenizedSentence> segment_sentences(Segment s) const;
    std::size_t token_count() const;
};

struct FederatedCorpus {
    std::map<std::string, ClientDataset> clients;
    std::map<std::string, std::string> provenance;

    std::vector<const ClientDataset*> pool_clients(Pool p) const;
    std::vector<std::string> pool_ids(Pool p) const;
};

struct PoolRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

// Whitespace tokenization over Unicode whitespace runs; no normalization.
// Throws std::invalid_argument on invalid UTF-8.
TokenizedSentence tokenize(const std::string& text);

// Deterministic pool assignment for a client id; pure function of
// (client_id, split_seed, ratios).
Pool assign_pool(const std::string& client_id, std::uint64_t split_seed, const PoolRatios& ratios);

// 8:1:1 segmentation of a test client's sentences in original order.
ClientDataset segment_client(ClientDataset client);

// Loads the JSONL corpus format ({"client_id": ..., "text": ...} per line),
// assigns pools by seeded hash, and segments test clients.
// Throws std::runtime_error naming the offending line on malformed input.
FederatedCorpus load_corpus(const std::string& path, std::uint64_t split_seed,
                            const PoolRatios& ratios);

struct SyntheticSpec {
    int n_clients = 100;
    int shared_vocab_size = 5000;
    int tail_size_per_client = 200;
    double zipf_exponent = 1.1;
    double tail_zipf_exponent = 1.1;
    int sentences_per_client = 50;
    std::pair<int, int> sentence_length_range = {4, 12};
    double private_mixture_weight = 0.15;
    std::uint64_t seed = 0;
    std::uint64_t split_seed = 0;
    PoolRatios ratios;
};

// Shared-head-plus-private-tail Zipfian generator. Deterministic in the seed.
FederatedCorpus generate_synthetic(const SyntheticSpec& spec);

// The surface forms the generator emits; tests and the privacy scan key on
// the private prefix.
std::string synthetic_shared_word(int rank);
std::string synthetic_private_word(int client_index, int rank);
std::string synthetic_client_id(int client_index);

void write_corpus_jsonl(const FederatedCorpus& corpus, const std::string& path);

}  // namespace oovx
