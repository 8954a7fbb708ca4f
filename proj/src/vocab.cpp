#include "oovx/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace oovx {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    index_of_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
        auto [it, inserted] = index_of_.emplace(words_[i], static_cast<int>(i));
        if (!inserted) throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
    }
    if (index_of_.count(kUnkToken) || index_of_.count(kBosToken) || index_of_.count(kPadToken))
        throw std::invalid_argument("special token name collides with a surface word");
}

std::optional<int> Vocabulary::index_of(const std::string& w) const {
    auto it = index_of_.find(w);
    if (it == index_of_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::word_at(int idx) const {
    static const std::string unk = kUnkToken, bos = kBosToken, pad = kPadToken;
    if (idx >= 0 && idx < static_cast<int>(words_.size())) return words_[static_cast<std::size_t>(idx)];
    if (idx == unk_index()) return unk;
    if (idx == bos_index()) return bos;
    if (idx == pad_index()) return pad;
    throw std::out_of_range("vocabulary index " + std::to_string(idx));
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const auto& w : words_) out << w << '\n';
    // Specials carry a tab prefix; surface words never contain whitespace.
    out << '\t' << kUnkToken << '\n' << '\t' << kBosToken << '\n' << '\t' << kPadToken << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    std::vector<std::string> words;
    std::vector<std::string> specials;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '\t')
            specials.push_back(line.substr(1));
        else if (!line.empty())
            words.push_back(line);
    }
    if (specials != std::vector<std::string>{kUnkToken, kBosToken, kPadToken})
        throw std::runtime_error("vocabulary file missing special token section: " + path);
    return Vocabulary(std::move(words));
}

void OOVList::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write OOV list: " + path);
    for (std::size_t i = 0; i < words.size(); ++i) out << words[i] << '\t' << counts[i] << '\n';
}

OOVList OOVList::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open OOV list: " + path);
    OOVList list;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("malformed OOV list line: " + line);
        list.words.push_back(line.substr(0, tab));
        list.counts.push_back(std::stoll(line.substr(tab + 1)));
    }
    return list;
}

namespace {

using CountMap = std::unordered_map<std::string, std::int64_t>;

void count_sentences(const std::vector<TokenizedSentence>& sentences, CountMap& counts) {
    for (const auto& s : sentences)
        for (const auto& w : s) ++counts[w];
}

// Sorted by count descending, ties lexicographically ascending.
std::vector<std::pair<std::string, std::int64_t>> ranked(const CountMap& counts) {
    std::vector<std::pair<std::string, std::int64_t>> v(counts.begin(), counts.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return v;
}

}  // namespace

Vocabulary build_vocab(const FederatedCorpus& corpus, std::size_t size) {
    if (size < 1) throw std::invalid_argument("vocabulary size must be >= 1");
    CountMap counts;
    for (const auto* client : corpus.pool_clients(Pool::Train))
        count_sentences(client->sentences, counts);
    auto order = ranked(counts);
    if (order.size() < size) {
        std::cerr << "warning: corpus has only " << order.size()
                  << " distinct words, requested vocabulary size " << size << "\n";
    }
    std::vector<std::string> words;
    words.reserve(std::min(size, order.size()));
    for (std::size_t i = 0; i < order.size() && i < size; ++i) words.push_back(order[i].first);
    return Vocabulary(std::move(words));
}

Vocabulary expand_vocab_oracle(const Vocabulary& vocab, const FederatedCorpus& corpus,
                               std::size_t n) {
    CountMap counts;
    for (const auto& [id, client] : corpus.clients) count_sentences(client.sentences, counts);
    for (auto it = counts.begin(); it != counts.end();) {
        if (vocab.contains(it->first))
            it = counts.erase(it);
        else
            ++it;
    }
    auto order = ranked(counts);
    std::vector<std::string> words = vocab.words();
    for (std::size_t i = 0; i < order.size() && i < n; ++i) words.push_back(order[i].first);
    return Vocabulary(std::move(words));
}

OOVList client_top_oov(const ClientDataset& client, const Vocabulary& vocab, std::size_t n) {
    CountMap counts;
    count_sentences(client.segment_sentences(Segment::PersonalizeTrain), counts);
    for (auto it = counts.begin(); it != counts.end();) {
        if (vocab.contains(it->first))
            it = counts.erase(it);
        else
            ++it;
    }
    auto order = ranked(counts);
    OOVList list;
    for (std::size_t i = 0; i < order.size() && i < n; ++i) {
        list.words.push_back(order[i].first);
        list.counts.push_back(order[i].second);
    }
    return list;
}

double oov_rate(const std::vector<TokenizedSentence>& sentences, const Vocabulary& vocab,
                const OOVList* extra) {
    std::unordered_map<std::string, bool> extra_set;
    if (extra)
        for (const auto& w : extra->words) extra_set[w] = true;
    std::int64_t total = 0, oov = 0;
    for (const auto& s : sentences) {
        for (const auto& w : s) {
            ++total;
            if (!vocab.contains(w) && !extra_set.count(w)) ++oov;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(oov) / static_cast<double>(total);
}

std::vector<std::pair<std::string, std::int64_t>> top_word_counts(const FederatedCorpus& corpus,
                                                                  int top_k) {
    CountMap counts;
    for (const auto& [id, client] : corpus.clients) count_sentences(client.sentences, counts);
    auto order = ranked(counts);
    if (order.size() > static_cast<std::size_t>(top_k)) order.resize(static_cast<std::size_t>(top_k));
    return order;
}

std::vector<QuantileRow> word_frequency_quantiles(const FederatedCorpus& corpus, int top_k,
                                                  const std::vector<double>& quantiles,
                                                  int n_buckets) {
    if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
    auto order = top_word_counts(corpus, top_k);
    std::vector<QuantileRow> rows;
    if (order.empty()) return rows;
    const int n = static_cast<int>(order.size());
    n_buckets = std::min(n_buckets, n);
    for (int b = 0; b < n_buckets; ++b) {
        int first = b * n / n_buckets;
        int last = (b + 1) * n / n_buckets - 1;
        std::vector<std::int64_t> freqs;
        for (int r = first; r <= last; ++r) freqs.push_back(order[static_cast<std::size_t>(r)].second);
        std::sort(freqs.begin(), freqs.end());
        QuantileRow row;
        row.bucket_first_rank = first;
        row.bucket_last_rank = last;
        for (double q : quantiles) {
            auto idx = static_cast<std::size_t>(
                std::llround(q * static_cast<double>(freqs.size() - 1)));
            row.frequency_quantiles.push_back(freqs[std::min(idx, freqs.size() - 1)]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace oovx
