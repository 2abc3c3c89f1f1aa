#pragma once

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ace/analysis.hpp"
#include "ace/core.hpp"
#include "ace/execution_matrix.hpp"
#include "ace/generators.hpp"
#include "ace/kto.hpp"
#include "ace/preference.hpp"
#include "ace/prompts.hpp"
#include "ace/selection.hpp"
#include "ace/util.hpp"

namespace ace {

namespace fs = std::filesystem;

/// Everything one evolution run needs, with defaults matching the reference
/// training configuration.
struct RoundConfig {
    int k1 = 16;                    // solver samples per problem
    int k2 = 16;                    // adversary samples per problem
    double temperature = 1.0;       // training-sample decoding temperature
    double eval_temperature = 0.8;  // held-out pass@k decoding temperature
    int rounds = 5;
    double eval_split = 0.1;
    std::uint64_t seed = 0;
    int parallelism = 4;
    std::string backend = "offline";
    double offline_bug_rate = 0.5;
    std::optional<std::string> trainer_hook;
    std::string solver_model;
    std::string adversary_model;
    double sandbox_error_abort_fraction = 0.05;
    std::optional<std::string> prompt_template_dir;
    SelectionConfig selection;
    ObjectiveConfig objective;
    ResourceLimits limits;
    AnalysisThresholds analysis;
    SandboxConfig sandbox;
    EndpointConfig endpoint;

    void validate() const {
        if (k1 < 1 || k2 < 1 || rounds < 1) throw ValidationError("k1, k2, rounds must be >= 1");
        if (eval_split < 0.0 || eval_split >= 1.0) throw ValidationError("eval_split outside [0,1)");
        if (temperature < 0.0 || eval_temperature < 0.0) throw ValidationError("negative temperature");
        if (parallelism < 1) throw ValidationError("parallelism must be >= 1");
        if (offline_bug_rate < 0.0 || offline_bug_rate > 1.0)
            throw ValidationError("offline_bug_rate outside [0,1]");
        if (sandbox_error_abort_fraction < 0.0 || sandbox_error_abort_fraction > 1.0)
            throw ValidationError("sandbox_error_abort_fraction outside [0,1]");
        selection.validate();
        objective.validate();
        limits.validate();
        analysis.validate();
        if (sandbox.interpreter.empty()) throw ValidationError("empty interpreter command");
    }

    std::optional<fs::path> template_dir() const {
        if (prompt_template_dir) return fs::path(*prompt_template_dir);
        return std::nullopt;
    }
};

inline void to_json(json& j, const RoundConfig& c) {
    j = json{{"k1", c.k1},
             {"k2", c.k2},
             {"temperature", c.temperature},
             {"eval_temperature", c.eval_temperature},
             {"rounds", c.rounds},
             {"eval_split", c.eval_split},
             {"seed", c.seed},
             {"parallelism", c.parallelism},
             {"backend", c.backend},
             {"offline_bug_rate", c.offline_bug_rate},
             {"trainer_hook", c.trainer_hook ? json(*c.trainer_hook) : json(nullptr)},
             {"solver_model", c.solver_model},
             {"adversary_model", c.adversary_model},
             {"sandbox_error_abort_fraction", c.sandbox_error_abort_fraction},
             {"prompt_template_dir",
              c.prompt_template_dir ? json(*c.prompt_template_dir) : json(nullptr)},
             {"selection", c.selection},
             {"objective", c.objective},
             {"limits", c.limits},
             {"analysis", c.analysis},
             {"sandbox", c.sandbox},
             {"endpoint", c.endpoint}};
}

inline void from_json(const json& j, RoundConfig& c) {
    RoundConfig defaults;
    c.k1 = j.value("k1", defaults.k1);
    c.k2 = j.value("k2", defaults.k2);
    c.temperature = j.value("temperature", defaults.temperature);
    c.eval_temperature = j.value("eval_temperature", defaults.eval_temperature);
    c.rounds = j.value("rounds", defaults.rounds);
    c.eval_split = j.value("eval_split", defaults.eval_split);
    c.seed = j.value("seed", defaults.seed);
    c.parallelism = j.value("parallelism", defaults.parallelism);
    c.backend = j.value("backend", defaults.backend);
    c.offline_bug_rate = j.value("offline_bug_rate", defaults.offline_bug_rate);
    if (j.contains("trainer_hook") && !j.at("trainer_hook").is_null())
        c.trainer_hook = j.at("trainer_hook").get<std::string>();
    c.solver_model = j.value("solver_model", defaults.solver_model);
    c.adversary_model = j.value("adversary_model", defaults.adversary_model);
    c.sandbox_error_abort_fraction =
        j.value("sandbox_error_abort_fraction", defaults.sandbox_error_abort_fraction);
    if (j.contains("prompt_template_dir") && !j.at("prompt_template_dir").is_null())
        c.prompt_template_dir = j.at("prompt_template_dir").get<std::string>();
    if (j.contains("selection")) c.selection = j.at("selection").get<SelectionConfig>();
    if (j.contains("objective")) c.objective = j.at("objective").get<ObjectiveConfig>();
    if (j.contains("limits")) c.limits = j.at("limits").get<ResourceLimits>();
    if (j.contains("analysis")) c.analysis = j.at("analysis").get<AnalysisThresholds>();
    if (j.contains("sandbox")) c.sandbox = j.at("sandbox").get<SandboxConfig>();
    if (j.contains("endpoint")) c.endpoint = j.at("endpoint").get<EndpointConfig>();
    c.validate();
}

/// Hash of the run-relevant configuration; host-specific paths are excluded so
/// the hash travels across machines.
inline std::string config_hash(const RoundConfig& cfg) {
    json j = cfg;
    j["sandbox"].erase("scratch_root");
    j.erase("prompt_template_dir");
    return to_hex(fnv1a64(j.dump()));
}

/// All artifacts of one problem in one round; the unit of resume.
struct ProblemOutcome {
    std::string problem_id;
    std::vector<CandidateProgram> candidates;
    std::vector<AdversarialTest> tests;
    std::vector<TestLabel> labels;  // valid columns, Discarded retained for audit
    std::vector<SftRecord> sft;
    std::vector<KtoRecord> kto;
    std::vector<Rational> gt_rates;   // per candidate row
    std::vector<Rational> adv_rates;  // per candidate row
    std::string matrix_file;          // relative to the round directory
    int generation_failures = 0;
};

inline void to_json(json& j, const ProblemOutcome& o) {
    json rates_gt = json::array(), rates_adv = json::array();
    for (const auto& r : o.gt_rates) rates_gt.push_back(r.to_string());
    for (const auto& r : o.adv_rates) rates_adv.push_back(r.to_string());
    j = json{{"problem_id", o.problem_id},
             {"candidates", o.candidates},
             {"tests", o.tests},
             {"labels", o.labels},
             {"sft", o.sft},
             {"kto", o.kto},
             {"gt_rates", rates_gt},
             {"adv_rates", rates_adv},
             {"matrix_file", o.matrix_file},
             {"generation_failures", o.generation_failures}};
}

inline void from_json(const json& j, ProblemOutcome& o) {
    o.problem_id = j.at("problem_id").get<std::string>();
    o.candidates = j.value("candidates", std::vector<CandidateProgram>());
    o.tests = j.value("tests", std::vector<AdversarialTest>());
    o.labels.clear();
    for (const auto& jl : j.value("labels", json::array())) {
        TestLabel l;
        l.test_sample_index = jl.at("sample_index").get<int>();
        l.fails = jl.at("fails").get<int>();
        l.passes = jl.at("passes").get<int>();
        std::string kind = jl.at("label").get<std::string>();
        l.kind = kind == "desirable"     ? TestLabelKind::Desirable
                 : kind == "undesirable" ? TestLabelKind::Undesirable
                                         : TestLabelKind::Discarded;
        o.labels.push_back(l);
    }
    o.sft = j.value("sft", std::vector<SftRecord>());
    o.kto = j.value("kto", std::vector<KtoRecord>());
    o.gt_rates.clear();
    for (const auto& js : j.value("gt_rates", json::array()))
        o.gt_rates.push_back(Rational::parse(js.get<std::string>()));
    o.adv_rates.clear();
    for (const auto& js : j.value("adv_rates", json::array()))
        o.adv_rates.push_back(Rational::parse(js.get<std::string>()));
    o.matrix_file = j.value("matrix_file", std::string());
    o.generation_failures = j.value("generation_failures", 0);
}

struct RoundState {
    int round = 1;
    std::string config_hash;
    std::string solver_model;
    std::string adversary_model;
    std::optional<std::string> next_solver_model;     // trainer hook output
    std::optional<std::string> next_adversary_model;  // trainer hook output
    RoundMetrics metrics;
    std::vector<std::string> problem_ids;
};

inline void to_json(json& j, const RoundState& s) {
    j = json{{"round", s.round},
             {"config_hash", s.config_hash},
             {"solver_model", s.solver_model},
             {"adversary_model", s.adversary_model},
             {"metrics", s.metrics},
             {"problems", s.problem_ids}};
    if (s.next_solver_model) j["next_solver_model"] = *s.next_solver_model;
    if (s.next_adversary_model) j["next_adversary_model"] = *s.next_adversary_model;
}

inline void from_json(const json& j, RoundState& s) {
    s.round = j.at("round").get<int>();
    s.config_hash = j.value("config_hash", std::string());
    s.solver_model = j.value("solver_model", std::string());
    s.adversary_model = j.value("adversary_model", std::string());
    if (j.contains("next_solver_model"))
        s.next_solver_model = j.at("next_solver_model").get<std::string>();
    if (j.contains("next_adversary_model"))
        s.next_adversary_model = j.at("next_adversary_model").get<std::string>();
    s.metrics = j.value("metrics", RoundMetrics());
    s.problem_ids = j.value("problems", std::vector<std::string>());
}

/// runs/{run_id}/round{r}/{problems,matrices,sft_round{r}.jsonl,...}
struct RunLayout {
    fs::path run_dir;

    fs::path config_file() const { return run_dir / "config.json"; }
    fs::path eval_file() const { return run_dir / "eval.json"; }
    fs::path round_dir(int r) const { return run_dir / ("round" + std::to_string(r)); }
    fs::path problems_dir(int r) const { return round_dir(r) / "problems"; }
    fs::path matrices_dir(int r) const { return round_dir(r) / "matrices"; }
    fs::path problem_file(int r, const std::string& id) const {
        return problems_dir(r) / (id + ".json");
    }
    fs::path matrix_file(int r, const std::string& id) const {
        return matrices_dir(r) / (id + ".json");
    }
    fs::path sft_file(int r) const {
        return round_dir(r) / ("sft_round" + std::to_string(r) + ".jsonl");
    }
    fs::path kto_file(int r) const {
        return round_dir(r) / ("kto_round" + std::to_string(r) + ".jsonl");
    }
    fs::path state_file(int r) const { return round_dir(r) / "state.json"; }
    fs::path report_file(int r, const char* ext) const {
        return round_dir(r) / ("report_round" + std::to_string(r) + ext);
    }
};

struct CommandResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

/// Runs a shell command, capturing stdout and stderr separately.
inline CommandResult run_command(const std::string& command) {
    int out_pipe[2], err_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0) {
        throw HookError("pipe failed for command: " + command);
    }
    pid_t pid = fork();
    if (pid < 0) throw HookError("fork failed for command: " + command);
    if (pid == 0) {
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(out_pipe[1]);
    close(err_pipe[1]);
    CommandResult result;
    auto read_all = [](int fd, std::string& sink) {
        char buf[4096];
        for (;;) {
            ssize_t n = read(fd, buf, sizeof(buf));
            if (n > 0) {
                sink.append(buf, static_cast<size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EINTR)) {
                return;
            }
        }
    };
    // stdout first; trainer hooks write progress to stderr, id to stdout
    std::thread err_reader([&] { read_all(err_pipe[0], result.err); });
    read_all(out_pipe[0], result.out);
    err_reader.join();
    close(out_pipe[0]);
    close(err_pipe[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return result;
}

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    out += "'";
    return out;
}

/// Runs the external trainer command with {kind} {dataset} {model_id} {round}
/// substituted, and adopts the last non-empty stdout line as the new model id.
inline std::string trainer_hook_invoke(const std::string& kind, const fs::path& dataset,
                                       const std::string& model_id, int round,
                                       const std::string& command_template) {
    if (!fs::exists(dataset)) {
        throw HookError("trainer dataset does not exist: " + dataset.string());
    }
    std::string command = detail::substitute_placeholders(
        command_template, {{"kind", kind},
                           {"dataset", shell_quote(dataset.string())},
                           {"model_id", shell_quote(model_id)},
                           {"round", std::to_string(round)}});
    CommandResult result = run_command(command);
    if (result.exit_code != 0) {
        throw HookError("trainer hook exited " + std::to_string(result.exit_code) + " [" + kind +
                        ", round " + std::to_string(round) + "]: " + result.err.substr(0, 500));
    }
    std::string new_id;
    size_t pos = 0;
    while (pos < result.out.size()) {
        size_t end = result.out.find('\n', pos);
        if (end == std::string::npos) end = result.out.size();
        std::string line = result.out.substr(pos, end - pos);
        if (!detail::trim(line).empty()) new_id = detail::trim(line);
        pos = end + 1;
    }
    if (new_id.empty()) {
        throw HookError("trainer hook produced no model id on stdout [" + kind + "]");
    }
    return new_id;
}

/// Frozen held-out split: sampled once from the global seed, persisted, reused
/// for every round of the run.
inline std::set<std::string> eval_split_ids(const RoundConfig& cfg,
                                            const std::vector<Problem>& corpus,
                                            const RunLayout& layout) {
    if (fs::exists(layout.eval_file())) {
        json j = json::parse(read_file(layout.eval_file()));
        auto ids = j.at("eval_ids").get<std::vector<std::string>>();
        return {ids.begin(), ids.end()};
    }
    std::vector<std::string> ids;
    ids.reserve(corpus.size());
    for (const auto& p : corpus) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(mix_seed(cfg.seed, "eval-split"));
    for (size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[rng() % i]);
    }
    size_t held = static_cast<size_t>(cfg.eval_split * static_cast<double>(ids.size()));
    std::set<std::string> eval_ids(ids.begin(), ids.begin() + static_cast<long>(held));
    fs::create_directories(layout.run_dir);
    json j;
    j["eval_ids"] = std::vector<std::string>(eval_ids.begin(), eval_ids.end());
    write_file_atomic(layout.eval_file(), j.dump(2) + "\n");
    return eval_ids;
}

namespace detail {

inline std::vector<CandidateProgram> collect_candidates(const std::vector<GeneratorResponse>& responses,
                                                        const Problem& problem, int round,
                                                        const std::string& generator_id,
                                                        int& failures) {
    std::vector<CandidateProgram> out;
    for (size_t i = 0; i < responses.size(); ++i) {
        const auto& resp = responses[i];
        if (!resp.ok || resp.extracted.empty()) {
            ++failures;
            continue;
        }
        CandidateProgram c;
        c.problem_id = problem.id;
        c.source = resp.extracted;
        c.sample_index = static_cast<int>(i);
        c.round = round;
        c.generator_id = generator_id;
        c.token_length = resp.token_length;
        out.push_back(std::move(c));
    }
    return out;
}

inline std::vector<AdversarialTest> collect_tests(const std::vector<GeneratorResponse>& responses,
                                                  const Problem& problem, int round,
                                                  const std::string& generator_id, int& failures) {
    std::vector<AdversarialTest> out;
    for (size_t i = 0; i < responses.size(); ++i) {
        const auto& resp = responses[i];
        if (!resp.ok) {
            ++failures;
            continue;
        }
        AdversarialTest t;
        t.problem_id = problem.id;
        t.input = resp.extracted;
        t.sample_index = static_cast<int>(i);
        t.round = round;
        t.generator_id = generator_id;
        t.token_length = resp.token_length;
        t.validity = Validity::Unchecked;
        t.raw_response = resp.raw_text;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace detail

/// Runs the full pipeline for one problem: sample solutions, sample tests,
/// prune, execute, select, label.
inline ProblemOutcome run_problem(const Problem& problem, int round, const RoundConfig& cfg,
                                  GeneratorBackend& backend, const RunLayout& layout) {
    ProblemOutcome outcome;
    outcome.problem_id = problem.id;

    Prompt solver_prompt = render_prompt(Role::Solver, problem, cfg.template_dir());
    Prompt adversary_prompt = render_prompt(Role::Adversary, problem, cfg.template_dir());

    GeneratorRequest solver_req;
    solver_req.role = Role::Solver;
    solver_req.problem = problem;
    solver_req.n_samples = cfg.k1;
    solver_req.temperature = cfg.temperature;
    solver_req.seed = mix_seed(cfg.seed, "solver/r" + std::to_string(round));
    solver_req.model_id = cfg.solver_model;
    solver_req.round = round;
    auto solver_responses = backend.generate(solver_req);
    outcome.candidates = detail::collect_candidates(solver_responses, problem, round,
                                                    backend.name(), outcome.generation_failures);

    GeneratorRequest adversary_req = solver_req;
    adversary_req.role = Role::Adversary;
    adversary_req.n_samples = cfg.k2;
    adversary_req.seed = mix_seed(cfg.seed, "adversary/r" + std::to_string(round));
    adversary_req.model_id = cfg.adversary_model;
    auto adversary_responses = backend.generate(adversary_req);
    outcome.tests = detail::collect_tests(adversary_responses, problem, round, backend.name(),
                                          outcome.generation_failures);

    if (outcome.candidates.empty()) {
        return outcome;  // nothing to execute; zero records for this problem
    }

    ResourceLimits limits = problem.limits.value_or(cfg.limits);
    PruneResult prune;
    ExecutionMatrix matrix = build_matrix(problem, outcome.candidates, outcome.tests, limits,
                                          cfg.parallelism, cfg.sandbox, &prune);

    // reflect validity decisions (including all-fail) back onto the tests
    std::map<int, Validity> validity;
    for (const auto& t : outcome.tests) validity[t.sample_index] = Validity::Valid;
    for (const auto& entry : matrix.pruned_tests) validity[entry.sample_index] = entry.reason;
    for (auto& t : outcome.tests) {
        auto it = validity.find(t.sample_index);
        if (it != validity.end()) t.validity = it->second;
    }

    for (size_t i = 0; i < matrix.rows(); ++i) {
        outcome.gt_rates.push_back(matrix.gt_pass_rate(i));
        outcome.adv_rates.push_back(matrix.adv_success_rate(i));
    }

    outcome.sft = select_candidates(matrix, outcome.candidates, cfg.selection,
                                    solver_prompt.full_text);
    outcome.labels = label_tests(matrix.adv_table(false), matrix.adv_column_ids(false));
    outcome.kto = build_kto_records(outcome.labels, outcome.tests, adversary_prompt.full_text,
                                    round);

    fs::create_directories(layout.matrices_dir(round));
    std::string matrix_rel = "matrices/" + problem.id + ".json";
    save_matrix(matrix, layout.round_dir(round) / matrix_rel);
    outcome.matrix_file = matrix_rel;
    return outcome;
}

/// Held-out pass@k: fresh samples at the evaluation temperature, scored on GT
/// tests only. A candidate counts as correct when it passes every GT test.
inline void eval_pass_at_k(const std::vector<Problem>& eval_problems, int round,
                           const RoundConfig& cfg, GeneratorBackend& backend,
                           RoundMetrics& metrics) {
    metrics.eval_problems = static_cast<long long>(eval_problems.size());
    if (eval_problems.empty()) return;
    const std::vector<long long> ks = {1, 5, 10};
    std::map<long long, std::pair<double, long long>> sums;  // k -> (sum, count)
    for (const auto& problem : eval_problems) {
        GeneratorRequest req;
        req.role = Role::Solver;
        req.problem = problem;
        req.n_samples = cfg.k1;
        req.temperature = cfg.eval_temperature;
        req.seed = mix_seed(cfg.seed, "eval/r" + std::to_string(round));
        req.model_id = cfg.solver_model;
        req.round = round;
        auto responses = backend.generate(req);
        int failures = 0;
        auto candidates =
            detail::collect_candidates(responses, problem, round, backend.name(), failures);
        if (candidates.empty()) continue;

        ResourceLimits limits = problem.limits.value_or(cfg.limits);
        std::vector<ExecJob> jobs;
        for (const auto& c : candidates) {
            for (const auto& gt : problem.gt_tests) {
                jobs.push_back({c.source, exec_stdin(gt.input), limits});
            }
        }
        auto raws = run_batch(jobs, cfg.parallelism, cfg.sandbox);
        long long n = static_cast<long long>(candidates.size());
        long long correct = 0;
        for (size_t i = 0; i < candidates.size(); ++i) {
            bool all_pass = true;
            for (size_t g = 0; g < problem.gt_tests.size(); ++g) {
                const auto& raw = raws[i * problem.gt_tests.size() + g];
                if (gt_verdict(raw, problem.gt_tests[g].expected_output).kind != VerdictKind::Pass) {
                    all_pass = false;
                    break;
                }
            }
            if (all_pass) ++correct;
        }
        for (long long k : ks) {
            if (k > n) continue;
            auto& slot = sums[k];
            slot.first += pass_at_k(n, correct, k);
            slot.second += 1;
        }
    }
    for (const auto& [k, slot] : sums) {
        if (slot.second > 0) {
            metrics.pass_at_k[std::to_string(k)] = slot.first / static_cast<double>(slot.second);
        }
    }
}

inline RoundMetrics compute_metrics(int round, const std::vector<ProblemOutcome>& outcomes,
                                    const std::map<std::string, const Problem*>& by_id,
                                    const AnalysisThresholds& thresholds) {
    RoundMetrics m;
    m.round = round;
    Rational rate_sum(0);
    long long rate_count = 0;
    std::map<CategoryKind, long long> category_counts;
    for (CategoryKind k : kCategoryOrder) category_counts[k] = 0;
    long long categorized = 0;

    for (const auto& o : outcomes) {
        m.n_candidates += static_cast<long long>(o.candidates.size());
        m.n_tests_generated += static_cast<long long>(o.tests.size());
        m.n_sft_records += static_cast<long long>(o.sft.size());
        for (const auto& r : o.gt_rates) {
            rate_sum = rate_sum + r;
            ++rate_count;
        }
        for (const auto& l : o.labels) {
            switch (l.kind) {
                case TestLabelKind::Desirable: ++m.n_desirable; break;
                case TestLabelKind::Undesirable: ++m.n_undesirable; break;
                case TestLabelKind::Discarded: ++m.n_discarded; break;
            }
        }
        auto problem_it = by_id.find(o.problem_id);
        ProblemStats stats =
            problem_it != by_id.end() ? stats_for(*problem_it->second) : ProblemStats{};
        for (const auto& t : o.tests) {
            bool valid = t.validity == Validity::Valid || t.validity == Validity::AllFail;
            if (!valid) continue;
            ++m.n_tests_valid;
            ++categorized;
            category_counts[categorize_test(t.input, stats, thresholds).kind]++;
        }
    }
    if (rate_count > 0) {
        m.mean_gt_pass_rate = (rate_sum / Rational(rate_count)).to_double();
    }
    if (categorized > 0) {
        for (CategoryKind k : kCategoryOrder) {
            m.category_distribution[to_string(k)] =
                static_cast<double>(category_counts[k]) / static_cast<double>(categorized);
        }
    }
    return m;
}

/// One full round: per-problem pipelines with idempotent completion markers,
/// buffer union across problems, dataset emission, metrics, persisted state.
inline RoundState run_round(int round, const RoundConfig& cfg, const std::vector<Problem>& corpus,
                            GeneratorBackend& backend, const RunLayout& layout) {
    cfg.validate();
    if (round < 1) throw ValidationError("round must be >= 1");
    if (round > 1 && !fs::exists(layout.state_file(round - 1))) {
        throw ValidationError("state for round " + std::to_string(round - 1) +
                              " not found under " + layout.run_dir.string());
    }

    fs::create_directories(layout.problems_dir(round));
    fs::create_directories(layout.matrices_dir(round));

    std::set<std::string> eval_ids = eval_split_ids(cfg, corpus, layout);
    std::vector<const Problem*> train_problems;
    std::vector<Problem> eval_problems;
    std::map<std::string, const Problem*> by_id;
    for (const auto& p : corpus) {
        by_id[p.id] = &p;
        if (eval_ids.count(p.id)) {
            eval_problems.push_back(p);
        } else {
            train_problems.push_back(&p);
        }
    }
    std::sort(train_problems.begin(), train_problems.end(),
              [](const Problem* a, const Problem* b) { return a->id < b->id; });

    std::vector<ProblemOutcome> outcomes;
    size_t sandbox_failures = 0;
    for (const Problem* problem : train_problems) {
        fs::path marker = layout.problem_file(round, problem->id);
        if (fs::exists(marker)) {
            try {
                outcomes.push_back(json::parse(read_file(marker)).get<ProblemOutcome>());
                continue;
            } catch (const json::exception& e) {
                throw ParseError(marker.string() + ": " + e.what());
            }
        }
        try {
            ProblemOutcome outcome = run_problem(*problem, round, cfg, backend, layout);
            json j = outcome;
            write_file_atomic(marker, j.dump(1) + "\n");
            outcomes.push_back(std::move(outcome));
        } catch (const SandboxError& e) {
            ++sandbox_failures;
            double fraction = static_cast<double>(sandbox_failures) /
                              static_cast<double>(train_problems.size());
            std::fprintf(stderr, "[ace] sandbox failure on %s: %s\n", problem->id.c_str(),
                         e.what());
            if (fraction > cfg.sandbox_error_abort_fraction) {
                throw SandboxError("aborting round " + std::to_string(round) + ": " +
                                   std::to_string(sandbox_failures) + "/" +
                                   std::to_string(train_problems.size()) +
                                   " problems hit sandbox failures; last: " + e.what());
            }
        }
    }

    std::vector<SftRecord> sft_all;
    std::vector<KtoRecord> kto_all;
    for (const auto& o : outcomes) {
        sft_all.insert(sft_all.end(), o.sft.begin(), o.sft.end());
        kto_all.insert(kto_all.end(), o.kto.begin(), o.kto.end());
    }
    emit_sft_dataset(sft_all, layout.sft_file(round));
    KtoSummary kto_summary = emit_kto_dataset(kto_all, layout.kto_file(round));
    if (kto_summary.n_desirable + kto_summary.n_undesirable == 0) {
        std::fprintf(stderr, "[ace] warning: round %d produced no preference records\n", round);
    } else {
        std::fprintf(stderr,
                     "[ace] round %d preference records: %zu desirable / %zu undesirable "
                     "(desirable ratio %.3f)\n",
                     round, kto_summary.n_desirable, kto_summary.n_undesirable,
                     kto_summary.desirable_ratio());
    }

    RoundState state;
    state.round = round;
    state.config_hash = config_hash(cfg);
    state.solver_model = cfg.solver_model;
    state.adversary_model = cfg.adversary_model;
    for (const auto& o : outcomes) state.problem_ids.push_back(o.problem_id);
    state.metrics = compute_metrics(round, outcomes, by_id, cfg.analysis);
    eval_pass_at_k(eval_problems, round, cfg, backend, state.metrics);

    json jstate = state;
    write_file_atomic(layout.state_file(round), jstate.dump(1) + "\n");

    // report covers rounds 1..round
    std::vector<RoundMetrics> series;
    for (int r = 1; r <= round; ++r) {
        if (!fs::exists(layout.state_file(r))) continue;
        RoundState prior = json::parse(read_file(layout.state_file(r))).get<RoundState>();
        series.push_back(prior.metrics);
    }
    RoundReport report = round_report(series);
    write_file_atomic(layout.report_file(round, ".json"), report.structured.dump(1) + "\n");
    write_file_atomic(layout.report_file(round, ".txt"), report.text);
    return state;
}

/// The multi-round loop: run a round, hand the SFT dataset then the KTO
/// dataset to the trainer hook (in that order), swap model identifiers, and
/// continue. Without a hook, identifiers carry over (pipeline-only mode).
/// A failed hook halts evolution at the completed round boundary.
inline std::vector<RoundState> run_evolution(const RoundConfig& base_cfg,
                                             const std::vector<Problem>& corpus,
                                             const RunLayout& layout) {
    base_cfg.validate();
    if (corpus.empty()) throw ValidationError("empty corpus");
    fs::create_directories(layout.run_dir);
    {
        json j = base_cfg;
        write_file_atomic(layout.config_file(), j.dump(2) + "\n");
    }

    RoundConfig cfg = base_cfg;
    auto backend =
        make_backend(cfg.backend, cfg.offline_bug_rate, cfg.endpoint, cfg.template_dir());
    std::vector<RoundState> states;
    for (int r = 1; r <= cfg.rounds; ++r) {
        RoundState state;
        if (fs::exists(layout.state_file(r))) {
            state = json::parse(read_file(layout.state_file(r))).get<RoundState>();
        } else {
            state = run_round(r, cfg, corpus, *backend, layout);
        }

        if (cfg.trainer_hook && !state.next_solver_model) {
            state.next_solver_model = trainer_hook_invoke("sft", layout.sft_file(r),
                                                          cfg.solver_model, r, *cfg.trainer_hook);
            state.next_adversary_model = trainer_hook_invoke(
                "kto", layout.kto_file(r), cfg.adversary_model, r, *cfg.trainer_hook);
            json jstate = state;
            write_file_atomic(layout.state_file(r), jstate.dump(1) + "\n");
        }
        if (state.next_solver_model) cfg.solver_model = *state.next_solver_model;
        if (state.next_adversary_model) cfg.adversary_model = *state.next_adversary_model;
        states.push_back(std::move(state));
    }
    return states;
}

}  // namespace ace
