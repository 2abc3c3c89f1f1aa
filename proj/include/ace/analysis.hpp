#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ace/core.hpp"
#include "ace/rational.hpp"
#include "ace/util.hpp"

namespace ace {

enum class CategoryKind { Boundary, FormatSensitive, Combinatorial, Stress, Other };

inline constexpr std::array<CategoryKind, 5> kCategoryOrder = {
    CategoryKind::Boundary, CategoryKind::FormatSensitive, CategoryKind::Combinatorial,
    CategoryKind::Stress, CategoryKind::Other};

inline std::string to_string(CategoryKind k) {
    switch (k) {
        case CategoryKind::Boundary: return "boundary";
        case CategoryKind::FormatSensitive: return "format_sensitive";
        case CategoryKind::Combinatorial: return "combinatorial";
        case CategoryKind::Stress: return "stress";
        case CategoryKind::Other: return "other";
    }
    return "other";
}

struct TestCategory {
    CategoryKind kind = CategoryKind::Other;
    std::vector<std::string> triggers;
};

/// Concrete cutoffs behind the qualitative category families. All exposed in
/// the main config.
struct AnalysisThresholds {
    double stress_factor = 10.0;   // input length vs median GT input length
    int space_run = 2;             // consecutive spaces that count as irregular
    long long bound_distance = 1;  // distance to a declared bound that counts as boundary

    void validate() const {
        if (stress_factor <= 0 || space_run < 1 || bound_distance < 0) {
            throw ValidationError("analysis thresholds out of range");
        }
    }
};

inline void to_json(json& j, const AnalysisThresholds& t) {
    j = json{{"stress_factor", t.stress_factor},
             {"space_run", t.space_run},
             {"bound_distance", t.bound_distance}};
}

inline void from_json(const json& j, AnalysisThresholds& t) {
    AnalysisThresholds defaults;
    t.stress_factor = j.value("stress_factor", defaults.stress_factor);
    t.space_run = j.value("space_run", defaults.space_run);
    t.bound_distance = j.value("bound_distance", defaults.bound_distance);
    t.validate();
}

/// Corpus-derived statistics categorization keys on.
struct ProblemStats {
    double median_gt_input_length = 0.0;
    std::optional<long long> bound_min;
    std::optional<long long> bound_max;
};

inline ProblemStats stats_for(const Problem& problem) {
    ProblemStats stats;
    std::vector<size_t> lengths;
    lengths.reserve(problem.gt_tests.size());
    for (const auto& t : problem.gt_tests) lengths.push_back(t.input.size());
    std::sort(lengths.begin(), lengths.end());
    if (!lengths.empty()) {
        size_t mid = lengths.size() / 2;
        stats.median_gt_input_length =
            lengths.size() % 2 == 1
                ? static_cast<double>(lengths[mid])
                : (static_cast<double>(lengths[mid - 1]) + static_cast<double>(lengths[mid])) / 2.0;
    }
    if (problem.offline && problem.offline->grammar.kind != InputGrammar::Kind::Text) {
        stats.bound_min = problem.offline->grammar.min_value;
        stats.bound_max = problem.offline->grammar.max_value;
    }
    return stats;
}

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view input) {
    std::vector<std::string_view> lines;
    size_t start = 0;
    while (start < input.size()) {
        size_t end = input.find('\n', start);
        if (end == std::string_view::npos) {
            lines.push_back(input.substr(start));
            break;
        }
        lines.push_back(input.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

inline bool blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

/// Deterministic rule-based categorization of one test input. Rule families:
/// boundary (empty / single token / numeric token near a declared bound),
/// format-sensitive (blank edge lines, space runs, tabs), stress (length vs
/// median GT input). Two or more firing families make the test combinatorial;
/// none make it other.
inline TestCategory categorize_test(std::string_view input, const ProblemStats& stats,
                                    const AnalysisThresholds& thresholds = {}) {
    thresholds.validate();
    TestCategory out;

    bool boundary = false;
    if (input.empty()) {
        boundary = true;
        out.triggers.push_back("empty_input");
    }
    if (!input.empty() && whitespace_token_count(input) == 1) {
        boundary = true;
        out.triggers.push_back("single_token");
    }
    if (stats.bound_min || stats.bound_max) {
        bool near = false;
        size_t i = 0;
        while (i < input.size() && !near) {
            if (input[i] == '-' || (input[i] >= '0' && input[i] <= '9')) {
                long long value = 0;
                auto [ptr, ec] = std::from_chars(input.data() + i, input.data() + input.size(), value);
                if (ec == std::errc()) {
                    if (stats.bound_min && value >= *stats.bound_min &&
                        value - *stats.bound_min <= thresholds.bound_distance) {
                        near = true;
                    }
                    if (stats.bound_max && value <= *stats.bound_max &&
                        *stats.bound_max - value <= thresholds.bound_distance) {
                        near = true;
                    }
                    i = static_cast<size_t>(ptr - input.data());
                    continue;
                }
            }
            ++i;
        }
        if (near) {
            boundary = true;
            out.triggers.push_back("near_declared_bound");
        }
    }

    bool format = false;
    auto lines = detail::split_lines(input);
    if (lines.size() > 1 && detail::blank(lines.front())) {
        format = true;
        out.triggers.push_back("leading_blank_line");
    }
    if (lines.size() > 1 && detail::blank(lines.back())) {
        format = true;
        out.triggers.push_back("trailing_blank_line");
    }
    std::string run(static_cast<size_t>(thresholds.space_run), ' ');
    if (input.find(run) != std::string_view::npos) {
        format = true;
        out.triggers.push_back("space_run");
    }
    if (input.find('\t') != std::string_view::npos) {
        format = true;
        out.triggers.push_back("tab");
    }

    bool stress = stats.median_gt_input_length > 0 &&
                  static_cast<double>(input.size()) >=
                      thresholds.stress_factor * stats.median_gt_input_length;
    if (stress) out.triggers.push_back("stress_length");

    int fired = int(boundary) + int(format) + int(stress);
    if (fired >= 2) {
        out.kind = CategoryKind::Combinatorial;
    } else if (boundary) {
        out.kind = CategoryKind::Boundary;
    } else if (format) {
        out.kind = CategoryKind::FormatSensitive;
    } else if (stress) {
        out.kind = CategoryKind::Stress;
    } else {
        out.kind = CategoryKind::Other;
    }
    return out;
}

/// Exact proportions per category, in stable category order; sums to 1.
inline std::map<CategoryKind, Rational> category_distribution(
    const std::vector<std::string>& inputs, const ProblemStats& stats,
    const AnalysisThresholds& thresholds = {}) {
    if (inputs.empty()) throw DomainError("category distribution over zero tests");
    std::map<CategoryKind, long long> counts;
    for (CategoryKind k : kCategoryOrder) counts[k] = 0;
    for (const auto& input : inputs) {
        counts[categorize_test(input, stats, thresholds).kind]++;
    }
    std::map<CategoryKind, Rational> out;
    for (CategoryKind k : kCategoryOrder) {
        out[k] = Rational(counts[k], static_cast<long long>(inputs.size()));
    }
    return out;
}

/// Unbiased pass@k estimator: 1 - C(n-c, k)/C(n, k), evaluated as an
/// incremental product so nothing overflows.
inline double pass_at_k(long long n, long long c, long long k) {
    if (n < 1 || c < 0 || c > n || k < 1 || k > n) {
        throw DomainError("pass_at_k preconditions violated (0<=c<=n, 1<=k<=n)");
    }
    if (n - c < k) return 1.0;
    double miss = 1.0;
    for (long long i = 0; i < k; ++i) {
        miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - miss;
}

/// Same estimator in exact arithmetic (small n only).
inline Rational pass_at_k_exact(long long n, long long c, long long k) {
    if (n < 1 || c < 0 || c > n || k < 1 || k > n) {
        throw DomainError("pass_at_k preconditions violated (0<=c<=n, 1<=k<=n)");
    }
    if (n - c < k) return Rational(1);
    Rational miss(1);
    for (long long i = 0; i < k; ++i) {
        miss = miss * Rational(n - c - i, n - i);
    }
    return Rational(1) - miss;
}

/// One row of the evolution report.
struct RoundMetrics {
    int round = 1;
    double mean_gt_pass_rate = 0.0;
    long long n_candidates = 0;
    long long n_tests_generated = 0;
    long long n_tests_valid = 0;
    long long n_desirable = 0;
    long long n_undesirable = 0;
    long long n_discarded = 0;
    long long n_sft_records = 0;
    std::map<std::string, double> category_distribution;
    std::map<std::string, double> pass_at_k;  // key: "1", "5", "10"
    long long eval_problems = 0;
};

inline void to_json(json& j, const RoundMetrics& m) {
    j = json{{"round", m.round},
             {"mean_gt_pass_rate", m.mean_gt_pass_rate},
             {"n_candidates", m.n_candidates},
             {"n_tests_generated", m.n_tests_generated},
             {"n_tests_valid", m.n_tests_valid},
             {"n_desirable", m.n_desirable},
             {"n_undesirable", m.n_undesirable},
             {"n_discarded", m.n_discarded},
             {"n_sft_records", m.n_sft_records},
             {"category_distribution", m.category_distribution},
             {"pass_at_k", m.pass_at_k},
             {"eval_problems", m.eval_problems}};
}

inline void from_json(const json& j, RoundMetrics& m) {
    m.round = j.at("round").get<int>();
    m.mean_gt_pass_rate = j.value("mean_gt_pass_rate", 0.0);
    m.n_candidates = j.value("n_candidates", 0ll);
    m.n_tests_generated = j.value("n_tests_generated", 0ll);
    m.n_tests_valid = j.value("n_tests_valid", 0ll);
    m.n_desirable = j.value("n_desirable", 0ll);
    m.n_undesirable = j.value("n_undesirable", 0ll);
    m.n_discarded = j.value("n_discarded", 0ll);
    m.n_sft_records = j.value("n_sft_records", 0ll);
    m.category_distribution =
        j.value("category_distribution", std::map<std::string, double>());
    m.pass_at_k = j.value("pass_at_k", std::map<std::string, double>());
    m.eval_problems = j.value("eval_problems", 0ll);
}

/// Renders per-round trend series as a structured document plus a
/// human-readable table. Plot-ready; rendering itself is out of scope.
struct RoundReport {
    json structured;
    std::string text;
};

inline RoundReport round_report(const std::vector<RoundMetrics>& rounds) {
    if (rounds.empty()) throw DomainError("report over zero rounds");
    RoundReport report;
    report.structured = json{{"rounds", json::array()}};
    for (const auto& m : rounds) report.structured["rounds"].push_back(m);

    char line[256];
    std::string text;
    text += "round  mean_gt  sft  des  undes  disc  valid/gen  pass@1  pass@5  pass@10\n";
    for (const auto& m : rounds) {
        auto pk = [&](const char* key) {
            auto it = m.pass_at_k.find(key);
            if (it == m.pass_at_k.end()) return std::string("-");
            std::snprintf(line, sizeof(line), "%.4f", it->second);
            return std::string(line);
        };
        std::snprintf(line, sizeof(line), "%5d  %7.4f  %3lld  %3lld  %5lld  %4lld  %5lld/%-3lld  %6s  %6s  %7s\n",
                      m.round, m.mean_gt_pass_rate, m.n_sft_records, m.n_desirable,
                      m.n_undesirable, m.n_discarded, m.n_tests_valid, m.n_tests_generated,
                      pk("1").c_str(), pk("5").c_str(), pk("10").c_str());
        text += line;
    }
    report.text = std::move(text);
    return report;
}

}  // namespace ace
