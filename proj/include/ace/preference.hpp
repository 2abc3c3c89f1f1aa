#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ace/core.hpp"
#include "ace/util.hpp"

namespace ace {

enum class TestLabelKind { Desirable, Undesirable, Discarded };

inline std::string to_string(TestLabelKind k) {
    switch (k) {
        case TestLabelKind::Desirable: return "desirable";
        case TestLabelKind::Undesirable: return "undesirable";
        case TestLabelKind::Discarded: return "discarded";
    }
    return "discarded";
}

/// Per-test execution tally: fails = candidates the test breaks, passes = the
/// rest. Desirable tests discriminate (both nonzero); all-pass tests are
/// undesirable; all-fail tests are discarded (kept only for audit — they are
/// pruned from the matrix upstream).
struct TestLabel {
    int test_sample_index = 0;
    int fails = 0;   // e_j
    int passes = 0;  // s_j
    TestLabelKind kind = TestLabelKind::Discarded;
};

inline void to_json(json& j, const TestLabel& l) {
    j = json{{"sample_index", l.test_sample_index},
             {"fails", l.fails},
             {"passes", l.passes},
             {"label", to_string(l.kind)}};
}

/// Labels each column of a candidates-by-tests boolean table. Column ids, when
/// given, name the tests; otherwise positions are used. Labels depend only on
/// per-column counts, never on row order.
inline std::vector<TestLabel> label_tests(const std::vector<std::vector<bool>>& table,
                                          const std::vector<int>& column_ids = {}) {
    if (table.empty()) throw DomainError("label_tests requires at least one candidate row");
    size_t cols = table.front().size();
    for (const auto& row : table) {
        if (row.size() != cols) throw DomainError("ragged execution table");
    }
    if (!column_ids.empty() && column_ids.size() != cols) {
        throw DomainError("column id list does not match table width");
    }
    int k1 = static_cast<int>(table.size());
    std::vector<TestLabel> out;
    out.reserve(cols);
    for (size_t j = 0; j < cols; ++j) {
        int fails = 0;
        for (const auto& row : table) {
            if (!row[j]) ++fails;
        }
        TestLabel l;
        l.test_sample_index = column_ids.empty() ? static_cast<int>(j) : column_ids[j];
        l.fails = fails;
        l.passes = k1 - fails;
        if (l.passes == 0) {
            l.kind = TestLabelKind::Discarded;
        } else if (l.fails == 0) {
            l.kind = TestLabelKind::Undesirable;
        } else {
            l.kind = TestLabelKind::Desirable;
        }
        out.push_back(l);
    }
    return out;
}

/// One preference example for the adversary. The completion is the adversary's
/// full formatted response (the policy generates the whole response, not just
/// the bare input).
struct KtoRecord {
    std::string problem_id;
    std::string prompt;
    std::string completion;
    bool label = false;  // true = desirable
    long long token_length = 0;
    int round = 1;
    int sample_index = 0;
};

inline void to_json(json& j, const KtoRecord& r) {
    j = json{{"problem_id", r.problem_id},
             {"label", r.label},
             {"token_length", r.token_length},
             {"round", r.round}};
    j["prompt"] = r.prompt;
    set_bytes(j, "completion", r.completion);
}

inline void from_json(const json& j, KtoRecord& r) {
    r.problem_id = j.at("problem_id").get<std::string>();
    r.prompt = j.value("prompt", std::string());
    r.completion = get_bytes(j, "completion");
    r.label = j.at("label").get<bool>();
    r.token_length = j.value("token_length", 0ll);
    r.round = j.value("round", 1);
    r.sample_index = j.value("sample_index", 0);
}

/// Joins labels with their tests; Discarded labels are excluded entirely.
inline std::vector<KtoRecord> build_kto_records(const std::vector<TestLabel>& labels,
                                                const std::vector<AdversarialTest>& tests,
                                                const std::string& prompt, int round) {
    std::map<int, const AdversarialTest*> by_index;
    for (const auto& t : tests) by_index[t.sample_index] = &t;
    std::vector<KtoRecord> out;
    for (const auto& l : labels) {
        if (l.kind == TestLabelKind::Discarded) continue;
        auto it = by_index.find(l.test_sample_index);
        if (it == by_index.end()) {
            throw ValidationError("label refers to unknown test sample " +
                                  std::to_string(l.test_sample_index));
        }
        const AdversarialTest& t = *it->second;
        KtoRecord r;
        r.problem_id = t.problem_id;
        r.prompt = prompt;
        r.completion = t.raw_response;
        r.label = l.kind == TestLabelKind::Desirable;
        r.token_length = t.token_length;
        r.round = round;
        r.sample_index = t.sample_index;
        out.push_back(std::move(r));
    }
    return out;
}

struct KtoSummary {
    size_t n_desirable = 0;
    size_t n_undesirable = 0;

    double desirable_ratio() const {
        size_t total = n_desirable + n_undesirable;
        return total == 0 ? 0.0 : static_cast<double>(n_desirable) / static_cast<double>(total);
    }
};

/// Line-delimited records ordered by (problem_id, sample_index). The class
/// imbalance is reported, never rebalanced here — that is the objective
/// weights' job.
inline KtoSummary emit_kto_dataset(std::vector<KtoRecord> records,
                                   const std::filesystem::path& path) {
    std::stable_sort(records.begin(), records.end(), [](const KtoRecord& a, const KtoRecord& b) {
        if (a.problem_id != b.problem_id) return a.problem_id < b.problem_id;
        return a.sample_index < b.sample_index;
    });
    KtoSummary summary;
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) {
        (r.label ? summary.n_desirable : summary.n_undesirable)++;
        lines.push_back(r);
    }
    write_jsonl(path, lines);
    return summary;
}

}  // namespace ace
