#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "oovx/corpus.hpp"

namespace oovx {

inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kBosToken = "[BOS]";
inline constexpr const char* kPadToken = "[PAD]";

// Closed vocabulary: a dense word block followed by the three special tokens.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words);

    const std::vector<std::string>& words() const { return words_; }
    std::size_t word_count() const { return words_.size(); }
    // Word block plus the three specials; the model scores this many entries.
    std::size_t total_size() const { return words_.size() + 3; }

    int unk_index() const { return static_cast<int>(words_.size()); }
    int bos_index() const { return static_cast<int>(words_.size()) + 1; }
    int pad_index() const { return static_cast<int>(words_.size()) + 2; }
    bool is_special(int idx) const { return idx >= unk_index(); }

    bool contains(const std::string& w) const { return index_of_.count(w) != 0; }
    // Index of a surface word, or nullopt when OOV.
    std::optional<int> index_of(const std::string& w) const;
    // Surface word or special-token name for any valid index.
    const std::string& word_at(int idx) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_of_;
};

struct OOVList {
    std::vector<std::string> words;
    std::vector<std::int64_t> counts;

    std::size_t size() const { return words.size(); }

    void save(const std::string& path) const;
    static OOVList load(const std::string& path);
};

// The `size` most frequent words across train-pool sentences; frequency ties
// broken lexicographically ascending.
Vocabulary build_vocab(const FederatedCorpus& corpus, std::size_t size);

// Oracle expansion: appends the N most frequent OOV words counted over all
// pools. Specials keep their role; the word block stays contiguous.
Vocabulary expand_vocab_oracle(const Vocabulary& vocab, const FederatedCorpus& corpus,
                               std::size_t n);

// Top-n OOV words of the client's personalize-train segment only.
OOVList client_top_oov(const ClientDataset& client, const Vocabulary& vocab, std::size_t n);

double oov_rate(const std::vector<TokenizedSentence>& sentences, const Vocabulary& vocab,
                const OOVList* extra = nullptr);

struct QuantileRow {
    int bucket_first_rank;
    int bucket_last_rank;
    std::vector<std::int64_t> frequency_quantiles;
};

// Frequency-by-rank summary for the top_k corpus words, one row per rank
// bucket with the requested quantiles of the in-bucket frequencies.
std::vector<QuantileRow> word_frequency_quantiles(const FederatedCorpus& corpus, int top_k,
                                                  const std::vector<double>& quantiles,
                                                  int n_buckets = 20);

// Rank/frequency pairs of the top_k words, most frequent first.
std::vector<std::pair<std::string, std::int64_t>> top_word_counts(const FederatedCorpus& corpus,
                                                                  int top_k);

}  // namespace oovx
