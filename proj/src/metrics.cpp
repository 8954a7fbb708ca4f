#include "oovx/metrics.hpp"

#include <iostream>
#include <sstream>

#include "json.hpp"

namespace oovx {

double emr_k(const std::vector<TokenizedSentence>& dataset, const Predictor& predict, int k) {
    std::int64_t hits = 0, positions = 0;
    for (const auto& sentence : dataset) {
        TokenizedSentence prefix;
        for (const auto& target : sentence) {
            auto top = predict(prefix, k);
            for (const auto& w : top) {
                if (w == target) {
                    ++hits;
                    break;
                }
            }
            ++positions;
            prefix.push_back(target);
        }
    }
    return positions ? static_cast<double>(hits) / static_cast<double>(positions) : 0.0;
}

double kemr_k(const std::vector<TokenizedSentence>& dataset, const Predictor& predict,
              const Vocabulary& vocab, int k) {
    std::int64_t hits = 0, positions = 0;
    for (const auto& sentence : dataset) {
        TokenizedSentence prefix;
        for (const auto& target : sentence) {
            if (vocab.contains(target)) {
                auto top = predict(prefix, k);
                for (const auto& w : top) {
                    if (w == target) {
                        ++hits;
                        break;
                    }
                }
                ++positions;
            }
            prefix.push_back(target);
        }
    }
    return positions ? static_cast<double>(hits) / static_cast<double>(positions) : 0.0;
}

double aggregate(const std::vector<std::pair<double, std::int64_t>>& per_client) {
    double num = 0.0;
    std::int64_t denom = 0;
    for (const auto& [value, tokens] : per_client) {
        if (tokens <= 0) continue;
        num += value * static_cast<double>(tokens);
        denom += tokens;
    }
    if (denom == 0) {
        std::cerr << "warning: aggregate over all-zero token weights\n";
        return 0.0;
    }
    return num / static_cast<double>(denom);
}

MetricsReport aggregate_report(const std::vector<ClientMetrics>& clients) {
    MetricsReport report;
    double emr_num = 0.0, kemr_num = 0.0, oov_num = 0.0;
    for (const auto& c : clients) {
        if (c.degenerate) continue;
        report.per_client.push_back(c);
        emr_num += c.emr3 * static_cast<double>(c.tokens);
        oov_num += c.oov_rate * static_cast<double>(c.tokens);
        kemr_num += c.kemr3 * static_cast<double>(c.known_tokens);
        report.total_tokens += c.tokens;
        report.known_tokens += c.known_tokens;
    }
    report.empty = report.total_tokens == 0;
    report.emr_k[3] = report.total_tokens ? emr_num / static_cast<double>(report.total_tokens) : 0.0;
    report.oov_rate = report.total_tokens ? oov_num / static_cast<double>(report.total_tokens) : 0.0;
    report.kemr_k[3] =
        report.known_tokens ? kemr_num / static_cast<double>(report.known_tokens) : 0.0;
    return report;
}

std::string metrics_report_json(const MetricsReport& report) {
    nlohmann::json j;
    for (const auto& [k, v] : report.emr_k) j["emr_k"][std::to_string(k)] = v;
    for (const auto& [k, v] : report.kemr_k) j["kemr_k"][std::to_string(k)] = v;
    j["oov_rate"] = report.oov_rate;
    j["total_tokens"] = report.total_tokens;
    j["known_tokens"] = report.known_tokens;
    j["empty"] = report.empty;
    j["per_client"] = nlohmann::json::array();
    for (const auto& c : report.per_client) {
        j["per_client"].push_back({{"client_id", c.client_id},
                                   {"emr3", c.emr3},
                                   {"kemr3", c.kemr3},
                                   {"oov_rate", c.oov_rate},
                                   {"tokens", c.tokens},
                                   {"known_tokens", c.known_tokens}});
    }
    return j.dump(2) + "\n";
}

std::string metrics_report_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "client_id,emr3,kemr3,oov_rate,tokens,known_tokens\n";
    for (const auto& c : report.per_client) {
        out << c.client_id << ',' << c.emr3 << ',' << c.kemr3 << ',' << c.oov_rate << ','
            << c.tokens << ',' << c.known_tokens << '\n';
    }
    out << "AGGREGATE," << (report.emr_k.count(3) ? report.emr_k.at(3) : 0.0) << ','
        << (report.kemr_k.count(3) ? report.kemr_k.at(3) : 0.0) << ',' << report.oov_rate << ','
        << report.total_tokens << ',' << report.known_tokens << '\n';
    return out.str();
}

}  // namespace oovx
