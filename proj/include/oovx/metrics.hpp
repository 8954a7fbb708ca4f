#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oovx/corpus.hpp"
#include "oovx/vocab.hpp"

namespace oovx {

// Abstract next-word predictor: prefix -> top-K suggestions.
using Predictor =
    std::function<std::vector<std::string>(const TokenizedSentence& prefix, int k)>;

// Eq.-style exact match rate: fraction of positions whose target is among the
// predictor's top-K for that prefix; 0/0 -> 0.
double emr_k(const std::vector<TokenizedSentence>& dataset, const Predictor& predict, int k);

// EMR restricted to positions whose target is in the closed vocabulary.
double kemr_k(const std::vector<TokenizedSentence>& dataset, const Predictor& predict,
              const Vocabulary& vocab, int k);

// Token-weighted mean over per-client (value, token count) pairs.
double aggregate(const std::vector<std::pair<double, std::int64_t>>& per_client);

struct ClientMetrics {
    std::string client_id;
    double emr3 = 0.0;
    double kemr3 = 0.0;
    double oov_rate = 0.0;
    std::int64_t tokens = 0;
    std::int64_t known_tokens = 0;
    bool degenerate = false;
};

struct MetricsReport {
    std::map<int, double> emr_k;
    std::map<int, double> kemr_k;
    double oov_rate = 0.0;
    std::int64_t total_tokens = 0;
    std::int64_t known_tokens = 0;
    bool empty = false;  // set when a denominator was 0/0
    std::vector<ClientMetrics> per_client;
};

// Token-weighted aggregate report over per-client metrics; degenerate clients
// are excluded.
MetricsReport aggregate_report(const std::vector<ClientMetrics>& clients);

std::string metrics_report_json(const MetricsReport& report);
std::string metrics_report_csv(const MetricsReport& report);

}  // namespace oovx
