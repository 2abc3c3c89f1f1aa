#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ace/core.hpp"
#include "ace/rational.hpp"
#include "ace/sandbox.hpp"

namespace ace {

struct PruneEntry {
    int sample_index = 0;
    Validity reason = Validity::Unchecked;
    std::string note;
};

inline void to_json(json& j, const PruneEntry& p) {
    j = json{{"sample_index", p.sample_index}, {"reason", to_string(p.reason)}, {"note", p.note}};
}

inline void from_json(const json& j, PruneEntry& p) {
    p.sample_index = j.at("sample_index").get<int>();
    p.reason = validity_from_string(j.at("reason").get<std::string>());
    p.note = j.value("note", std::string());
}

struct PruneResult {
    std::vector<AdversarialTest> valid;  // validity set to Valid
    std::vector<PruneEntry> pruned;
};

/// Pre-execution pruning: inputs over the size cap are OverLimit; when the
/// problem ships an input validator, inputs it rejects are InvalidSpec.
/// Without a validator the default is permit (the all-fail prune catches most
/// malformed inputs later). A validator sandbox failure prunes conservatively
/// as Unchecked with a warning on stderr.
inline PruneResult prune_invalid_tests(const Problem& problem,
                                       const std::vector<AdversarialTest>& tests,
                                       const ResourceLimits& limits, int parallelism = 1,
                                       const SandboxConfig& cfg = {}) {
    std::vector<AdversarialTest> ordered = tests;
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });

    PruneResult out;
    std::vector<size_t> needs_validation;
    std::vector<char> over_limit(ordered.size(), 0);
    for (size_t i = 0; i < ordered.size(); ++i) {
        const std::string& input = ordered[i].input;
        size_t fed_size = input.size() + (input.empty() || input.back() != '\n' ? 1 : 0);
        if (fed_size > limits.max_test_input_bytes) {
            over_limit[i] = 1;
        } else if (problem.input_validator) {
            needs_validation.push_back(i);
        }
    }

    std::vector<RawExecution> validations;
    if (!needs_validation.empty()) {
        std::vector<ExecJob> jobs;
        jobs.reserve(needs_validation.size());
        for (size_t i : needs_validation) {
            jobs.push_back({*problem.input_validator, exec_stdin(ordered[i].input), limits});
        }
        validations = run_batch(jobs, parallelism, cfg);
    }

    size_t v = 0;
    for (size_t i = 0; i < ordered.size(); ++i) {
        AdversarialTest t = ordered[i];
        if (over_limit[i]) {
            t.validity = Validity::OverLimit;
            out.pruned.push_back({t.sample_index, Validity::OverLimit,
                                  "input " + std::to_string(t.input.size()) + " bytes over cap"});
            continue;
        }
        if (!problem.input_validator) {
            t.validity = Validity::Valid;
            out.valid.push_back(std::move(t));
            continue;
        }
        const RawExecution& raw = validations[v++];
        Verdict verdict = adv_verdict(raw);
        if (verdict.kind == VerdictKind::SandboxError) {
            std::fprintf(stderr, "[ace] warning: validator failed on %s test %d: %s\n",
                         problem.id.c_str(), t.sample_index, verdict.detail.c_str());
            t.validity = Validity::Unchecked;
            out.pruned.push_back({t.sample_index, Validity::Unchecked, verdict.detail});
        } else if (verdict.kind == VerdictKind::Pass) {
            t.validity = Validity::Valid;
            out.valid.push_back(std::move(t));
        } else {
            t.validity = Validity::InvalidSpec;
            out.pruned.push_back({t.sample_index, Validity::InvalidSpec,
                                  "validator: " + to_string(verdict.kind)});
        }
    }
    return out;
}

/// Columns (of a rows-by-columns boolean table) with at least one passing row.
/// All-fail pruning is row-order independent by construction.
inline std::vector<char> surviving_columns(const std::vector<std::vector<bool>>& table) {
    if (table.empty()) return {};
    std::vector<char> alive(table.front().size(), 0);
    for (const auto& row : table) {
        for (size_t j = 0; j < row.size(); ++j) {
            if (row[j]) alive[j] = 1;
        }
    }
    return alive;
}

/// The execution boolean table over candidates x (GT tests + valid adversarial
/// tests). Adversarial columns that every candidate fails are pruned; they are
/// kept in storage with surviving=false for the audit trail, and excluded from
/// every rate.
struct ExecutionMatrix {
    std::string problem_id;
    int round = 1;
    int gt_count = 0;
    std::vector<int> candidate_ids;                 // row order, by sample_index
    std::vector<int> adv_ids;                       // valid adversarial columns, by sample_index
    std::vector<char> adv_surviving;                // parallel to adv_ids
    std::vector<std::vector<Verdict>> gt_verdicts;  // [row][gt column]
    std::vector<std::vector<Verdict>> adv_verdicts; // [row][adv column]
    std::vector<PruneEntry> pruned_tests;

    size_t rows() const { return candidate_ids.size(); }

    bool gt_cell(size_t row, size_t col) const {
        return gt_verdicts[row][col].kind == VerdictKind::Pass;
    }
    bool adv_cell(size_t row, size_t col) const {
        return adv_verdicts[row][col].kind == VerdictKind::Pass;
    }

    size_t surviving_adv_count() const {
        return static_cast<size_t>(std::count(adv_surviving.begin(), adv_surviving.end(), 1));
    }

    /// rows x cols boolean view of the adversarial sub-table.
    std::vector<std::vector<bool>> adv_table(bool surviving_only = true) const {
        std::vector<std::vector<bool>> table(rows());
        for (size_t i = 0; i < rows(); ++i) {
            for (size_t j = 0; j < adv_ids.size(); ++j) {
                if (surviving_only && !adv_surviving[j]) continue;
                table[i].push_back(adv_cell(i, j));
            }
        }
        return table;
    }

    /// Sample indices of the columns adv_table() exposes, same order.
    std::vector<int> adv_column_ids(bool surviving_only = true) const {
        std::vector<int> ids;
        for (size_t j = 0; j < adv_ids.size(); ++j) {
            if (surviving_only && !adv_surviving[j]) continue;
            ids.push_back(adv_ids[j]);
        }
        return ids;
    }

    /// Exact mean of the row's GT cells.
    Rational gt_pass_rate(size_t row) const {
        if (gt_count < 1) throw DomainError("matrix has no ground-truth columns");
        long long passes = 0;
        for (int c = 0; c < gt_count; ++c) {
            if (gt_cell(row, static_cast<size_t>(c))) ++passes;
        }
        return Rational(passes, gt_count);
    }

    /// Exact mean over surviving adversarial columns; vacuously 1 when none
    /// survive, so absent adversarial evidence never blocks selection.
    Rational adv_success_rate(size_t row) const {
        long long total = 0, passes = 0;
        for (size_t j = 0; j < adv_ids.size(); ++j) {
            if (!adv_surviving[j]) continue;
            ++total;
            if (adv_cell(row, j)) ++passes;
        }
        if (total == 0) return Rational(1);
        return Rational(passes, total);
    }
};

namespace detail {

inline json verdict_to_json(const Verdict& v) {
    return json{{"k", to_string(v.kind)}, {"d", v.detail}};
}

inline Verdict verdict_from_json(const json& j) {
    return {verdict_kind_from_string(j.at("k").get<std::string>()),
            j.value("d", std::string())};
}

}  // namespace detail

inline void to_json(json& j, const ExecutionMatrix& m) {
    j = json::object();
    j["problem_id"] = m.problem_id;
    j["round"] = m.round;
    j["gt_count"] = m.gt_count;
    j["candidates"] = m.candidate_ids;
    json cols = json::array();
    for (size_t i = 0; i < m.adv_ids.size(); ++i) {
        cols.push_back(json{{"sample_index", m.adv_ids[i]}, {"surviving", bool(m.adv_surviving[i])}});
    }
    j["adv_columns"] = std::move(cols);
    auto dump_cells = [](const std::vector<std::vector<Verdict>>& rows) {
        json out = json::array();
        for (const auto& row : rows) {
            json jr = json::array();
            for (const auto& v : row) jr.push_back(detail::verdict_to_json(v));
            out.push_back(std::move(jr));
        }
        return out;
    };
    j["gt_cells"] = dump_cells(m.gt_verdicts);
    j["adv_cells"] = dump_cells(m.adv_verdicts);
    j["pruned"] = m.pruned_tests;
}

inline void from_json(const json& j, ExecutionMatrix& m) {
    m.problem_id = j.at("problem_id").get<std::string>();
    m.round = j.value("round", 1);
    m.gt_count = j.at("gt_count").get<int>();
    m.candidate_ids = j.at("candidates").get<std::vector<int>>();
    m.adv_ids.clear();
    m.adv_surviving.clear();
    for (const auto& jc : j.at("adv_columns")) {
        m.adv_ids.push_back(jc.at("sample_index").get<int>());
        m.adv_surviving.push_back(jc.value("surviving", true) ? 1 : 0);
    }
    auto load_cells = [](const json& rows) {
        std::vector<std::vector<Verdict>> out;
        for (const auto& jr : rows) {
            std::vector<Verdict> row;
            for (const auto& jv : jr) row.push_back(detail::verdict_from_json(jv));
            out.push_back(std::move(row));
        }
        return out;
    };
    m.gt_verdicts = load_cells(j.at("gt_cells"));
    m.adv_verdicts = load_cells(j.at("adv_cells"));
    m.pruned_tests = j.value("pruned", std::vector<PruneEntry>());
}

inline void save_matrix(const ExecutionMatrix& m, const std::filesystem::path& path) {
    json j = m;
    write_file_atomic(path, j.dump(1) + "\n");
}

inline ExecutionMatrix load_matrix(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path)).get<ExecutionMatrix>();
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

/// Executes every (candidate, test) pair exactly once and assembles the
/// matrix: GT columns under ground-truth semantics, adversarial columns under
/// termination-only semantics, validity pruning before execution and all-fail
/// pruning after. A persistent per-cell sandbox failure aborts the whole
/// problem; partial matrices are never returned.
inline ExecutionMatrix build_matrix(const Problem& problem,
                                    const std::vector<CandidateProgram>& candidates,
                                    const std::vector<AdversarialTest>& adv_tests,
                                    const ResourceLimits& limits, int parallelism = 1,
                                    const SandboxConfig& cfg = {},
                                    PruneResult* prune_out = nullptr) {
    if (candidates.empty()) throw DomainError("build_matrix requires at least one candidate");

    std::vector<CandidateProgram> rows = candidates;
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].sample_index == rows[i - 1].sample_index) {
            throw ValidationError("duplicate candidate sample_index " +
                                  std::to_string(rows[i].sample_index));
        }
    }

    PruneResult prune = prune_invalid_tests(problem, adv_tests, limits, parallelism, cfg);

    ExecutionMatrix m;
    m.problem_id = problem.id;
    m.round = rows.front().round;
    m.gt_count = static_cast<int>(problem.gt_tests.size());
    for (const auto& c : rows) m.candidate_ids.push_back(c.sample_index);
    for (const auto& t : prune.valid) m.adv_ids.push_back(t.sample_index);
    m.pruned_tests = prune.pruned;

    const size_t per_row = problem.gt_tests.size() + prune.valid.size();
    std::vector<ExecJob> jobs;
    jobs.reserve(rows.size() * per_row);
    for (const auto& c : rows) {
        for (const auto& gt : problem.gt_tests) jobs.push_back({c.source, exec_stdin(gt.input), limits});
        for (const auto& t : prune.valid) jobs.push_back({c.source, exec_stdin(t.input), limits});
    }
    std::vector<RawExecution> raws = run_batch(jobs, parallelism, cfg);

    // Retry transient sandbox failures once; a cell must never be silently
    // counted as a program failure.
    for (size_t i = 0; i < raws.size(); ++i) {
        if (raws[i].sandbox_error) {
            raws[i] = execute(jobs[i].source, jobs[i].stdin_data, jobs[i].limits, cfg);
        }
        if (raws[i].sandbox_error) {
            throw SandboxError("problem " + problem.id + ": cell " + std::to_string(i) + ": " +
                               *raws[i].sandbox_error);
        }
    }

    m.gt_verdicts.resize(rows.size());
    m.adv_verdicts.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        size_t base = i * per_row;
        for (size_t g = 0; g < problem.gt_tests.size(); ++g) {
            m.gt_verdicts[i].push_back(gt_verdict(raws[base + g], problem.gt_tests[g].expected_output));
        }
        for (size_t a = 0; a < prune.valid.size(); ++a) {
            m.adv_verdicts[i].push_back(adv_verdict(raws[base + problem.gt_tests.size() + a]));
        }
    }

    std::vector<char> alive = surviving_columns(m.adv_table(false));
    m.adv_surviving = alive.empty() ? std::vector<char>(m.adv_ids.size(), 0) : alive;
    for (size_t j = 0; j < m.adv_ids.size(); ++j) {
        if (!m.adv_surviving[j]) {
            m.pruned_tests.push_back({m.adv_ids[j], Validity::AllFail, "failed by every candidate"});
        }
    }
    if (prune_out) *prune_out = std::move(prune);
    return m;
}

}  // namespace ace
