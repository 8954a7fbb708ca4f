#include "doctest.h"

#include <cmath>

#include "oovx/metrics.hpp"
#include "oovx/model.hpp"
#include "oovx/rng.hpp"

using namespace oovx;

TEST_CASE("emr_k on a stub predictor") {
    // Predictor always suggests the same two words.
    Predictor stub = [](const TokenizedSentence&, int k) {
        std::vector<std::string> top{"the", "cat"};
        top.resize(static_cast<std::size_t>(std::min<int>(k, 2)));
        return top;
    };
    std::vector<TokenizedSentence> data{{"the", "dog", "cat"}};
    CHECK(emr_k(data, stub, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(emr_k(data, stub, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(emr_k({}, stub, 3) == 0.0);
    CHECK(emr_k({{}}, stub, 3) == 0.0);
}

TEST_CASE("kemr restricts the denominator to in-vocabulary targets") {
    Vocabulary vocab({"alpha"});
    Predictor stub = [](const TokenizedSentence&, int) {
        return std::vector<std::string>{"alpha"};
    };
    // One known target (hit) and one OOV target (miss).
    std::vector<TokenizedSentence> data{{"alpha", "zzz"}};
    CHECK(emr_k(data, stub, 1) == doctest::Approx(0.5));
    CHECK(kemr_k(data, stub, vocab, 1) == doctest::Approx(1.0));

    // All targets OOV: 0/0 -> 0.
    std::vector<TokenizedSentence> oov_only{{"yyy", "zzz"}};
    CHECK(kemr_k(oov_only, stub, vocab, 1) == 0.0);
}

TEST_CASE("emr_k is monotone non-decreasing in K") {
    Rng rng(31);
    std::vector<std::string> words{"a", "b", "c", "d", "e", "f"};
    std::vector<TokenizedSentence> data;
    for (int s = 0; s < 30; ++s) {
        TokenizedSentence sent;
        int len = 1 + static_cast<int>(rng.next_below(8));
        for (int i = 0; i < len; ++i) sent.push_back(words[rng.next_below(words.size())]);
        data.push_back(sent);
    }
    // Deterministic prefix-dependent ranking.
    Predictor pred = [&](const TokenizedSentence& prefix, int k) {
        std::vector<std::string> ranked = words;
        std::size_t rot = prefix.size() % ranked.size();
        std::rotate(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(rot), ranked.end());
        ranked.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(words.size()))));
        return ranked;
    };
    double prev = 0.0;
    for (int k = 1; k <= 6; ++k) {
        double v = emr_k(data, pred, k);
        CHECK(v >= prev - 1e-15);
        prev = v;
    }
    CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("kemr >= emr for predictors that only suggest vocabulary words") {
    Vocabulary vocab({"a", "b", "c"});
    Rng rng(77);
    std::vector<std::string> universe{"a", "b", "c", "oovx1", "oovx2"};
    std::vector<TokenizedSentence> data;
    for (int s = 0; s < 40; ++s) {
        TokenizedSentence sent;
        int len = 1 + static_cast<int>(rng.next_below(6));
        for (int i = 0; i < len; ++i) sent.push_back(universe[rng.next_below(universe.size())]);
        data.push_back(sent);
    }
    Predictor pred = [&](const TokenizedSentence& prefix, int k) {
        std::vector<std::string> ranked{"a", "b", "c"};
        if (prefix.size() % 2) std::swap(ranked[0], ranked[1]);
        ranked.resize(static_cast<std::size_t>(std::min(k, 3)));
        return ranked;
    };
    for (int k = 1; k <= 3; ++k)
        CHECK(kemr_k(data, pred, vocab, k) >= emr_k(data, pred, k) - 1e-15);
}

TEST_CASE("generic metrics agree with the model's one-pass evaluator") {
    Vocabulary vocab({"red", "green", "blue", "cyan"});
    ModelConfig cfg;
    cfg.char_embed_dim = 2;
    cfg.hidden_dim = 3;
    cfg.kernel_width = 2;
    cfg.lstm_layers = 1;
    cfg.vocab_size = static_cast<int>(vocab.total_size());
    auto params = init_model_params<double>(cfg, 2025);

    Rng rng(12);
    std::vector<std::string> universe{"red", "green", "blue", "cyan", "pink", "gold"};
    std::vector<TokenizedSentence> data;
    for (int s = 0; s < 50; ++s) {
        TokenizedSentence sent;
        int len = 1 + static_cast<int>(rng.next_below(7));
        for (int i = 0; i < len; ++i) sent.push_back(universe[rng.next_below(universe.size())]);
        data.push_back(sent);
    }

    Predictor pred = [&](const TokenizedSentence& prefix, int k) {
        return predict_topk<double>(prefix, k, params, cfg, vocab);
    };
    for (int k : {1, 3}) {
        auto counts = evaluate_topk<double>(data, k, params, cfg, vocab, nullptr, &vocab);
        CHECK(emr_k(data, pred, k) == doctest::Approx(counts.emr()).epsilon(1e-12));
        CHECK(kemr_k(data, pred, vocab, k) == doctest::Approx(counts.kemr()).epsilon(1e-12));
    }
}

TEST_CASE("token-weighted aggregate equals pooled hits over pooled positions") {
    Rng rng(9);
    std::vector<std::pair<double, std::int64_t>> per_client;
    std::int64_t total_hits = 0, total_positions = 0;
    for (int c = 0; c < 25; ++c) {
        std::int64_t positions = 1 + static_cast<std::int64_t>(rng.next_below(50));
        std::int64_t hits = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(positions) + 1));
        per_client.push_back({static_cast<double>(hits) / static_cast<double>(positions), positions});
        total_hits += hits;
        total_positions += positions;
    }
    double pooled = static_cast<double>(total_hits) / static_cast<double>(total_positions);
    CHECK(aggregate(per_client) == doctest::Approx(pooled).epsilon(1e-12));
}

TEST_CASE("aggregate arithmetic example and zero-weight convention") {
    CHECK(aggregate({{0.75, 20}, {1.0, 20}}) == doctest::Approx(0.875));
    CHECK(aggregate({{0.5, 10}, {0.9, 0}}) == doctest::Approx(0.5));
    CHECK(aggregate({}) == 0.0);
    CHECK(aggregate({{0.9, 0}}) == 0.0);
}

TEST_CASE("aggregate_report excludes degenerate clients and weighs by tokens") {
    ClientMetrics a;
    a.client_id = "a";
    a.emr3 = 0.5;
    a.kemr3 = 0.6;
    a.oov_rate = 0.1;
    a.tokens = 30;
    a.known_tokens = 27;
    ClientMetrics b;
    b.client_id = "b";
    b.emr3 = 0.9;
    b.kemr3 = 1.0;
    b.oov_rate = 0.0;
    b.tokens = 10;
    b.known_tokens = 10;
    ClientMetrics dg;
    dg.client_id = "dg";
    dg.emr3 = 0.0;
    dg.tokens = 1000;
    dg.degenerate = true;

    auto report = aggregate_report({a, b, dg});
    CHECK(report.per_client.size() == 2);
    CHECK(report.total_tokens == 40);
    CHECK(report.emr_k.at(3) == doctest::Approx((0.5 * 30 + 0.9 * 10) / 40.0).epsilon(1e-12));
    CHECK(report.kemr_k.at(3) == doctest::Approx((0.6 * 27 + 1.0 * 10) / 37.0).epsilon(1e-12));
    CHECK(report.oov_rate == doctest::Approx((0.1 * 30) / 40.0).epsilon(1e-12));
    CHECK_FALSE(report.empty);

    auto empty = aggregate_report({dg});
    CHECK(empty.empty);
    CHECK(empty.emr_k.at(3) == 0.0);
}

TEST_CASE("report serializers include the aggregate row") {
    ClientMetrics a;
    a.client_id = "only";
    a.emr3 = 0.25;
    a.kemr3 = 0.5;
    a.oov_rate = 0.2;
    a.tokens = 4;
    a.known_tokens = 2;
    auto report = aggregate_report({a});
    auto json = metrics_report_json(report);
    CHECK(json.find("\"emr_k\"") != std::string::npos);
    CHECK(json.find("only") != std::string::npos);
    auto csv = metrics_report_csv(report);
    CHECK(csv.find("client_id,emr3,kemr3,oov_rate,tokens,known_tokens") == 0);
    CHECK(csv.find("AGGREGATE,0.25,0.5,0.2,4,2") != std::string::npos);
}
