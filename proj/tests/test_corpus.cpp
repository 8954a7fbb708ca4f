#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "oovx/corpus.hpp"
#include "oovx/rng.hpp"

using namespace oovx;

TEST_CASE("tokenize splits on whitespace runs") {
    CHECK(tokenize("hello world") == TokenizedSentence{"hello", "world"});
    CHECK(tokenize("") == TokenizedSentence{});
    CHECK(tokenize("a  b\tc") == TokenizedSentence{"a", "b", "c"});
    CHECK(tokenize("   \t\n ") == TokenizedSentence{});
    CHECK(tokenize("Don't LOWER, me!") == TokenizedSentence{"Don't", "LOWER,", "me!"});
    // Unicode spaces (NBSP, ideographic space) also separate.
    CHECK(tokenize("a\xc2\xa0m\xe3\x80\x80z") == TokenizedSentence{"a", "m", "z"});
}

TEST_CASE("tokenize rejects invalid UTF-8") {
    CHECK_THROWS_AS(tokenize("ab\xff cd"), std::invalid_argument);
    CHECK_THROWS_AS(tokenize("truncated \xe3\x80"), std::invalid_argument);
    CHECK_THROWS_AS(tokenize(std::string("overlong \xc0\xaf")), std::invalid_argument);
}

TEST_CASE("tokenize detokenize cycle is idempotent") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        int len = 1 + static_cast<int>(rng.next_below(30));
        for (int i = 0; i < len; ++i) {
            int c = static_cast<int>(rng.next_below(96)) + 32;
            text += static_cast<char>(c);
        }
        auto once = tokenize(text);
        std::string joined;
        for (std::size_t i = 0; i < once.size(); ++i) {
            if (i) joined += ' ';
            joined += once[i];
        }
        CHECK(tokenize(joined) == once);
    }
}

TEST_CASE("segment_client follows the 8:1:1 ceil rule") {
    auto make_client = [](int n) {
        ClientDataset c;
        c.client_id = "c";
        c.pool = Pool::Test;
        for (int i = 0; i < n; ++i) c.sentences.push_back({"w" + std::to_string(i)});
        return c;
    };
    auto counts = [](const ClientDataset& c) {
        int t = 0, v = 0, e = 0;
        for (auto s : c.segments) {
            if (s == Segment::PersonalizeTrain) ++t;
            if (s == Segment::PersonalizeVal) ++v;
            if (s == Segment::PersonalizeTest) ++e;
        }
        return std::tuple{t, v, e};
    };

    auto c10 = segment_client(make_client(10));
    CHECK(counts(c10) == std::tuple{8, 1, 1});
    CHECK_FALSE(c10.degenerate);

    auto c20 = segment_client(make_client(20));
    CHECK(counts(c20) == std::tuple{16, 2, 2});

    auto c5 = segment_client(make_client(5));
    CHECK(counts(c5) == std::tuple{5, 0, 0});
    CHECK(c5.degenerate);

    // Original order preserved: first sentences land in train.
    auto c13 = segment_client(make_client(13));
    CHECK(counts(c13) == std::tuple{11, 2, 0});  // ceil(10.4)=11, ceil(1.3)=2, rest 0
    for (int i = 0; i < 11; ++i) CHECK(c13.segments[i] == Segment::PersonalizeTrain);
}

TEST_CASE("pool assignment is deterministic and roughly proportional") {
    PoolRatios ratios;
    std::map<Pool, int> counts;
    for (int i = 0; i < 100; ++i) {
        auto id = synthetic_client_id(i);
        Pool p = assign_pool(id, 42, ratios);
        CHECK(assign_pool(id, 42, ratios) == p);
        counts[p]++;
    }
    CHECK(counts[Pool::Train] >= 75);
    CHECK(counts[Pool::Train] <= 85);
    CHECK(counts[Pool::Validation] >= 5);
    CHECK(counts[Pool::Validation] <= 15);
    CHECK(counts[Pool::Test] >= 5);
    CHECK(counts[Pool::Test] <= 15);

    PoolRatios all_train{1.0, 0.0, 0.0};
    for (int i = 0; i < 50; ++i)
        CHECK(assign_pool(synthetic_client_id(i), 7, all_train) == Pool::Train);
}

TEST_CASE("load_corpus parses JSONL and errors with line numbers") {
    auto path = std::filesystem::temp_directory_path() / "oovx_corpus_test.jsonl";
    {
        std::ofstream out(path);
        out << R"({"client_id": "a", "text": "one two three"})" << "\n";
        out << R"({"client_id": "b", "text": "four"})" << "\n";
        out << R"({"client_id": "a", "text": "one two three"})" << "\n";  // dup allowed
    }
    auto corpus = load_corpus(path.string(), 1, PoolRatios{1, 0, 0});
    CHECK(corpus.clients.size() == 2);
    CHECK(corpus.clients.at("a").sentences.size() == 2);
    CHECK(corpus.clients.at("a").sentences[0] == TokenizedSentence{"one", "two", "three"});

    {
        std::ofstream out(path);
        out << R"({"client_id": "a", "text": "fine"})" << "\n";
        out << "not json\n";
    }
    try {
        load_corpus(path.string(), 1, PoolRatios{});
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("generate_synthetic is deterministic and honors tail settings") {
    SyntheticSpec spec;
    spec.n_clients = 8;
    spec.shared_vocab_size = 100;
    spec.tail_size_per_client = 5;
    spec.sentences_per_client = 12;
    spec.seed = 99;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    REQUIRE(a.clients.size() == 8);
    for (const auto& [id, client] : a.clients) {
        CHECK(client.sentences == b.clients.at(id).sentences);
        CHECK(client.pool == b.clients.at(id).pool);
    }

    spec.tail_size_per_client = 0;
    auto c = generate_synthetic(spec);
    std::set<std::string> shared;
    for (int r = 0; r < spec.shared_vocab_size; ++r) shared.insert(synthetic_shared_word(r));
    for (const auto& [id, client] : c.clients)
        for (const auto& s : client.sentences)
            for (const auto& w : s) CHECK(shared.count(w) == 1);
}

TEST_CASE("synthetic private words never cross clients") {
    SyntheticSpec spec;
    spec.n_clients = 6;
    spec.shared_vocab_size = 50;
    spec.tail_size_per_client = 10;
    spec.sentences_per_client = 20;
    spec.private_mixture_weight = 0.5;
    spec.seed = 3;
    auto corpus = generate_synthetic(spec);
    for (int c = 0; c < spec.n_clients; ++c) {
        std::string own_prefix = "pv" + std::to_string(c) + "q";
        const auto& client = corpus.clients.at(synthetic_client_id(c));
        for (const auto& s : client.sentences) {
            for (const auto& w : s) {
                if (w.rfind("pv", 0) == 0) CHECK(w.rfind(own_prefix, 0) == 0);
            }
        }
    }
}

TEST_CASE("jsonl round trip preserves sentences") {
    SyntheticSpec spec;
    spec.n_clients = 4;
    spec.shared_vocab_size = 30;
    spec.tail_size_per_client = 3;
    spec.sentences_per_client = 15;
    spec.seed = 11;
    spec.split_seed = 11;
    auto corpus = generate_synthetic(spec);
    auto path = std::filesystem::temp_directory_path() / "oovx_roundtrip.jsonl";
    write_corpus_jsonl(corpus, path.string());
    auto loaded = load_corpus(path.string(), spec.split_seed, spec.ratios);
    REQUIRE(loaded.clients.size() == corpus.clients.size());
    for (const auto& [id, client] : corpus.clients) {
        CHECK(loaded.clients.at(id).sentences == client.sentences);
        CHECK(loaded.clients.at(id).pool == client.pool);
    }
    std::filesystem::remove(path);
}
