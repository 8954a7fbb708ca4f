#include "oovx/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "oovx/rng.hpp"
#include "json.hpp"

namespace oovx {

const char* pool_name(Pool p) {
    switch (p) {
        case Pool::Train: return "train";
        case Pool::Validation: return "validation";
        case Pool::Test: return "test";
    }
    return "?";
}

const char* segment_name(Segment s) {
    switch (s) {
        case Segment::PersonalizeTrain: return "personalize_train";
        case Segment::PersonalizeVal: return "personalize_val";
        case Segment::PersonalizeTest: return "personalize_test";
    }
    return "?";
}

std::vector<TokenizedSentence> ClientDataset::segment_sentences(Segment s) const {
    std::vector<TokenizedSentence> out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i < segments.size() && segments[i] == s) out.push_back(sentences[i]);
    }
    return out;
}

std::size_t ClientDataset::token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
}

std::vector<const ClientDataset*> FederatedCorpus::pool_clients(Pool p) const {
    std::vector<const ClientDataset*> out;
    for (const auto& [id, c] : clients) {
        if (c.pool == p) out.push_back(&c);
    }
    return out;
}

std::vector<std::string> FederatedCorpus::pool_ids(Pool p) const {
    std::vector<std::string> out;
    for (const auto& [id, c] : clients) {
        if (c.pool == p) out.push_back(id);
    }
    return out;
}

namespace {

// Decodes one UTF-8 code point starting at i; returns the code point and
// advances i. Throws on malformed sequences.
std::uint32_t decode_utf8(const std::string& s, std::size_t& i) {
    auto fail = [&] { throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(i)); };
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra;
    std::uint32_t cp;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        fail();
        return 0;
    }
    for (int k = 1; k <= extra; ++k) {
        if (i + k >= s.size()) fail();
        unsigned char b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) fail();
        cp = (cp << 6) | (b & 0x3F);
    }
    // Reject overlong encodings and surrogates.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000))
        fail();
    if (cp >= 0xD800 && cp <= 0xDFFF) fail();
    if (cp > 0x10FFFF) fail();
    i += 1 + extra;
    return cp;
}

bool is_unicode_space(std::uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

}  // namespace

TokenizedSentence tokenize(const std::string& text) {
    TokenizedSentence out;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t start = i;
        std::uint32_t cp = decode_utf8(text, i);
        if (is_unicode_space(cp)) {
            if (!current.empty()) {
                out.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.append(text, start, i - start);
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

Pool assign_pool(const std::string& client_id, std::uint64_t split_seed, const PoolRatios& ratios) {
    std::uint64_t h = splitmix64(fnv1a64(client_id) ^ splitmix64(split_seed));
    double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    double total = ratios.train + ratios.validation + ratios.test;
    if (u < ratios.train / total) return Pool::Train;
    if (u < (ratios.train + ratios.validation) / total) return Pool::Validation;
    return Pool::Test;
}

ClientDataset segment_client(ClientDataset client) {
    const std::size_t n = client.sentences.size();
    client.segments.assign(n, Segment::PersonalizeTrain);
    client.degenerate = false;
    if (n < 10) {
        client.degenerate = true;
        return client;
    }
    auto ceil_frac = [n](double f) {
        return static_cast<std::size_t>(std::ceil(f * static_cast<double>(n)));
    };
    std::size_t n_train = std::min(ceil_frac(0.8), n);
    std::size_t n_val = std::min(ceil_frac(0.1), n - n_train);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            client.segments[i] = Segment::PersonalizeTrain;
        else if (i < n_train + n_val)
            client.segments[i] = Segment::PersonalizeVal;
        else
            client.segments[i] = Segment::PersonalizeTest;
    }
    return client;
}

FederatedCorpus load_corpus(const std::string& path, std::uint64_t split_seed,
                            const PoolRatios& ratios) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    FederatedCorpus corpus;
    corpus.provenance["source"] = path;
    corpus.provenance["split_seed"] = std::to_string(split_seed);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("client_id") ||
            !j.contains("text") || !j["client_id"].is_string() || !j["text"].is_string()) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": malformed corpus line");
        }
        std::string id = j["client_id"].get<std::string>();
        TokenizedSentence sent;
        try {
            sent = tokenize(j["text"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        auto& client = corpus.clients[id];
        client.client_id = id;
        client.sentences.push_back(std::move(sent));
    }
    for (auto& [id, client] : corpus.clients) {
        client.pool = assign_pool(id, split_seed, ratios);
        if (client.pool == Pool::Test) client = segment_client(std::move(client));
    }
    return corpus;
}

std::string synthetic_client_id(int client_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "client%05d", client_index);
    return buf;
}

std::string synthetic_shared_word(int rank) { return "w" + std::to_string(rank); }

std::string synthetic_private_word(int client_index, int rank) {
    return "pv" + std::to_string(client_index) + "q" + std::to_string(rank);
}

FederatedCorpus generate_synthetic(const SyntheticSpec& spec) {
    FederatedCorpus corpus;
    corpus.provenance["source"] = "synthetic";
    corpus.provenance["seed"] = std::to_string(spec.seed);
    ZipfSampler shared(static_cast<std::size_t>(spec.shared_vocab_size), spec.zipf_exponent);
    std::optional<ZipfSampler> tail;
    if (spec.tail_size_per_client > 0)
        tail.emplace(static_cast<std::size_t>(spec.tail_size_per_client), spec.tail_zipf_exponent);

    for (int c = 0; c < spec.n_clients; ++c) {
        ClientDataset client;
        client.client_id = synthetic_client_id(c);
        Rng rng(splitmix64(spec.seed) ^ fnv1a64(client.client_id));
        const int lo = spec.sentence_length_range.first;
        const int hi = spec.sentence_length_range.second;
        for (int s = 0; s < spec.sentences_per_client; ++s) {
            int len = lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi - lo + 1)));
            TokenizedSentence sent;
            sent.reserve(static_cast<std::size_t>(len));
            for (int t = 0; t < len; ++t) {
                bool priv = tail && rng.next_double() < spec.private_mixture_weight;
                if (priv) {
                    sent.push_back(
                        synthetic_private_word(c, static_cast<int>(tail->sample(rng))));
                } else {
                    sent.push_back(synthetic_shared_word(static_cast<int>(shared.sample(rng))));
                }
            }
            client.sentences.push_back(std::move(sent));
        }
        client.pool = assign_pool(client.client_id, spec.split_seed, spec.ratios);
        if (client.pool == Pool::Test) client = segment_client(std::move(client));
        corpus.clients[client.client_id] = std::move(client);
    }
    return corpus;
}

void write_corpus_jsonl(const FederatedCorpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& [id, client] : corpus.clients) {
        for (const auto& sent : client.sentences) {
            std::string text;
            for (std::size_t i = 0; i < sent.size(); ++i) {
                if (i) text += ' ';
                text += sent[i];
            }
            nlohmann::json j{{"client_id", id}, {"text", text}};
            out << j.dump() << '\n';
        }
    }
}

}  // namespace oovx
