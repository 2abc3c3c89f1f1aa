#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "ace/core.hpp"
#include "ace/execution_matrix.hpp"
#include "ace/rational.hpp"

namespace ace {

/// Hard-filter thresholds and ranking weights for SFT data selection.
struct SelectionConfig {
    Rational tau_gt{4, 5};    // minimum ground-truth pass rate
    Rational tau_adv{3, 10};  // minimum adversarial execution success rate
    Rational alpha{3, 5};     // weight of the GT rate in the combined score
    Rational rho{1, 8};       // top fraction of candidates kept per problem

    void validate() const {
        Rational zero(0), one(1);
        if (tau_gt < zero || tau_gt > one) throw ValidationError("tau_gt outside [0,1]");
        if (tau_adv < zero || tau_adv > one) throw ValidationError("tau_adv outside [0,1]");
        if (alpha < zero || alpha > one) throw ValidationError("alpha outside [0,1]");
        if (rho <= zero || rho > one) throw ValidationError("rho outside (0,1]");
    }
};

inline void to_json(json& j, const SelectionConfig& c) {
    j = json{{"tau_gt", rational_to_json(c.tau_gt)},
             {"tau_adv", rational_to_json(c.tau_adv)},
             {"alpha", rational_to_json(c.alpha)},
             {"rho", rational_to_json(c.rho)}};
}

inline void from_json(const json& j, SelectionConfig& c) {
    SelectionConfig defaults;
    c.tau_gt = j.contains("tau_gt") ? rational_from_json(j.at("tau_gt")) : defaults.tau_gt;
    c.tau_adv = j.contains("tau_adv") ? rational_from_json(j.at("tau_adv")) : defaults.tau_adv;
    c.alpha = j.contains("alpha") ? rational_from_json(j.at("alpha")) : defaults.alpha;
    c.rho = j.contains("rho") ? rational_from_json(j.at("rho")) : defaults.rho;
    c.validate();
}

/// One selected training example for the solver.
struct SftRecord {
    std::string problem_id;
    std::string prompt;
    std::string completion;  // the executed source, verbatim
    Rational score;
    int round = 1;
};

inline void to_json(json& j, const SftRecord& r) {
    j = json{{"problem_id", r.problem_id}, {"round", r.round}, {"score", r.score.to_double()}};
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
}

inline void from_json(const json& j, SftRecord& r) {
    r.problem_id = j.at("problem_id").get<std::string>();
    r.prompt = j.value("prompt", std::string());
    r.completion = j.at("completion").get<std::string>();
    r.score = j.contains("score") ? rational_from_json(j.at("score")) : Rational(0);
    r.round = j.value("round", 1);
}

/// s = alpha * r_gt + (1 - alpha) * r_adv, exact.
inline Rational combined_score(const Rational& r_gt, const Rational& r_adv, const Rational& alpha) {
    Rational zero(0), one(1);
    if (r_gt < zero || r_gt > one || r_adv < zero || r_adv > one || alpha < zero || alpha > one) {
        throw DomainError("combined_score arguments outside [0,1]");
    }
    return alpha * r_gt + (one - alpha) * r_adv;
}

struct RatedCandidate {
    CandidateProgram candidate;
    Rational r_gt;
    Rational r_adv;
};

/// ceil(rho * n) — "at most" a fraction, but never zero while any survivor exists.
inline long long selection_budget(const Rational& rho, long long n) {
    return (rho.num() * n + rho.den() - 1) / rho.den();
}

/// Hard filter, rank by combined score (ties: shorter completion, then lower
/// sample index), keep the top ceil(rho*n).
inline std::vector<SftRecord> select_candidates(const std::vector<RatedCandidate>& rated,
                                                const SelectionConfig& cfg,
                                                const std::string& prompt, int round) {
    cfg.validate();
    struct Scored {
        const RatedCandidate* rc;
        Rational score;
    };
    std::vector<Scored> survivors;
    for (const auto& rc : rated) {
        if (rc.r_gt < cfg.tau_gt || rc.r_adv < cfg.tau_adv) continue;
        survivors.push_back({&rc, combined_score(rc.r_gt, rc.r_adv, cfg.alpha)});
    }
    std::stable_sort(survivors.begin(), survivors.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.rc->candidate.token_length != b.rc->candidate.token_length)
            return a.rc->candidate.token_length < b.rc->candidate.token_length;
        return a.rc->candidate.sample_index < b.rc->candidate.sample_index;
    });
    size_t budget = static_cast<size_t>(selection_budget(cfg.rho, static_cast<long long>(rated.size())));
    if (survivors.size() > budget) survivors.resize(budget);

    std::vector<SftRecord> out;
    out.reserve(survivors.size());
    for (const auto& s : survivors) {
        out.push_back({s.rc->candidate.problem_id, prompt, s.rc->candidate.source, s.score, round});
    }
    return out;
}

/// Convenience wrapper: rates straight from an execution matrix whose rows
/// align with `candidates` by sample index.
inline std::vector<SftRecord> select_candidates(const ExecutionMatrix& m,
                                                const std::vector<CandidateProgram>& candidates,
                                                const SelectionConfig& cfg,
                                                const std::string& prompt) {
    std::vector<CandidateProgram> ordered = candidates;
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
    if (ordered.size() != m.rows()) {
        throw ValidationError("candidate list does not align with matrix rows");
    }
    std::vector<RatedCandidate> rated;
    rated.reserve(ordered.size());
    for (size_t i = 0; i < ordered.size(); ++i) {
        if (ordered[i].sample_index != m.candidate_ids[i]) {
            throw ValidationError("candidate sample indices do not match matrix rows");
        }
        rated.push_back({ordered[i], m.gt_pass_rate(i), m.adv_success_rate(i)});
    }
    int round = ordered.empty() ? 1 : ordered.front().round;
    return select_candidates(rated, cfg, prompt, round);
}

/// Line-delimited records ordered by (problem_id, selection rank); rerunning
/// on identical inputs yields a byte-identical file.
inline void emit_sft_dataset(std::vector<SftRecord> records, const std::filesystem::path& path) {
    std::stable_sort(records.begin(), records.end(),
                     [](const SftRecord& a, const SftRecord& b) { return a.problem_id < b.problem_id; });
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r);
    write_jsonl(path, lines);
}

}  // namespace ace
