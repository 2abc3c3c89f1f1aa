#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ace/analysis.hpp"
#include "ace/core.hpp"
#include "ace/execution_matrix.hpp"
#include "ace/generators.hpp"
#include "ace/kto.hpp"
#include "ace/orchestrator.hpp"
#include "ace/preference.hpp"
#include "ace/selection.hpp"

namespace ace::cli {

// exit codes: 0 success, 1 domain error, 2 usage error

namespace detail {

inline RoundConfig load_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
    RoundConfig cfg;
    if (!config_path.empty()) {
        try {
            cfg = json::parse(read_file(config_path)).get<RoundConfig>();
        } catch (const json::exception& e) {
            throw ParseError(config_path + ": " + e.what());
        }
    }
    if (seed) cfg.seed = *seed;
    return cfg;
}

inline std::vector<CandidateProgram> load_candidates(const std::string& path) {
    std::vector<CandidateProgram> out;
    for (const auto& j : read_jsonl(path)) out.push_back(j.get<CandidateProgram>());
    return out;
}

inline std::vector<AdversarialTest> load_tests(const std::string& path) {
    std::vector<AdversarialTest> out;
    for (const auto& j : read_jsonl(path)) out.push_back(j.get<AdversarialTest>());
    return out;
}

inline const Problem& find_problem(const std::vector<Problem>& corpus, const std::string& id) {
    for (const auto& p : corpus) {
        if (p.id == id) return p;
    }
    throw ValidationError("problem not found in corpus: " + id);
}

inline double rand_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) / 9007199254740992.0;
}

}  // namespace detail

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ACE pipeline: adversarial execution supervision for code generation"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string run_dir = "runs/default";
    std::optional<std::uint64_t> seed;
    bool print_config = false;
    app.add_option("--config", config_path, "JSON config file (defaults when omitted)");
    app.add_option("--run-dir", run_dir, "run directory (runs/{run_id})");
    app.add_option("--seed", seed, "global RNG seed (overrides config)");
    app.add_flag("--print-config", print_config, "print the resolved config and exit");

    // validate-corpus
    auto* cmd_validate = app.add_subcommand("validate-corpus", "parse and validate a corpus");
    std::string corpus_path;
    cmd_validate->add_option("path", corpus_path, "corpus file or directory")->required();

    // run-round
    auto* cmd_round = app.add_subcommand("run-round", "run a single evolution round");
    std::string round_corpus;
    int round_number = 1;
    cmd_round->add_option("--corpus", round_corpus, "corpus file or directory")->required();
    cmd_round->add_option("--round", round_number, "round number (1-based)")
        ->check(CLI::PositiveNumber);

    // run-evolution
    auto* cmd_evolution = app.add_subcommand("run-evolution", "run the full multi-round loop");
    std::string evolution_corpus;
    std::optional<std::string> backend_override;
    std::optional<int> rounds_override;
    cmd_evolution->add_option("--corpus", evolution_corpus, "corpus file or directory")->required();
    cmd_evolution->add_option("--backend", backend_override, "offline|remote (overrides config)");
    cmd_evolution->add_option("--rounds", rounds_override, "number of rounds (overrides config)")
        ->check(CLI::PositiveNumber);

    // execute-matrix
    auto* cmd_matrix = app.add_subcommand("execute-matrix",
                                          "execute candidates x tests and write the matrix");
    std::string mx_corpus, mx_problem, mx_candidates, mx_tests, mx_out;
    cmd_matrix->add_option("--corpus", mx_corpus, "corpus file or directory")->required();
    cmd_matrix->add_option("--problem", mx_problem, "problem id")->required();
    cmd_matrix->add_option("--candidates", mx_candidates, "candidate programs (jsonl)")->required();
    cmd_matrix->add_option("--tests", mx_tests, "adversarial tests (jsonl)")->required();
    cmd_matrix->add_option("--out", mx_out, "output matrix file")->required();

    // select
    auto* cmd_select = app.add_subcommand("select", "apply the hard filter and combined score");
    std::string sel_matrix, sel_candidates, sel_out, sel_corpus;
    std::optional<double> sel_tau_gt, sel_tau_adv, sel_alpha, sel_rho;
    cmd_select->add_option("--matrix", sel_matrix, "execution matrix file")->required();
    cmd_select->add_option("--candidates", sel_candidates, "candidate programs (jsonl)")->required();
    cmd_select->add_option("--out", sel_out, "output SFT dataset (jsonl)")->required();
    cmd_select->add_option("--corpus", sel_corpus, "corpus (for prompt rendering)");
    cmd_select->add_option("--tau-gt", sel_tau_gt, "GT pass-rate threshold")
        ->check(CLI::Range(0.0, 1.0));
    cmd_select->add_option("--tau-adv", sel_tau_adv, "adversarial success-rate threshold")
        ->check(CLI::Range(0.0, 1.0));
    cmd_select->add_option("--alpha", sel_alpha, "combined-score weight")
        ->check(CLI::Range(0.0, 1.0));
    cmd_select->add_option("--rho", sel_rho, "top fraction kept")->check(CLI::Range(0.0, 1.0));

    // prefs
    auto* cmd_prefs = app.add_subcommand("prefs", "label tests and write the KTO dataset");
    std::string pf_matrix, pf_tests, pf_out, pf_corpus;
    cmd_prefs->add_option("--matrix", pf_matrix, "execution matrix file")->required();
    cmd_prefs->add_option("--tests", pf_tests, "adversarial tests (jsonl)")->required();
    cmd_prefs->add_option("--out", pf_out, "output KTO dataset (jsonl)")->required();
    cmd_prefs->add_option("--corpus", pf_corpus, "corpus (for prompt rendering)");

    // kto-check
    auto* cmd_kto = app.add_subcommand("kto-check",
                                       "evaluate the KTO objective over a dataset");
    std::string kc_dataset;
    std::optional<std::uint64_t> kc_synth_seed;
    std::optional<double> kc_lambda, kc_beta, kc_w_des, kc_w_undes, kc_z_ref;
    cmd_kto->add_option("--dataset", kc_dataset, "KTO dataset (jsonl)")->required();
    cmd_kto->add_option("--synthesize-seed", kc_synth_seed,
                        "synthesize deterministic logp fields for records that lack them");
    cmd_kto->add_option("--lambda", kc_lambda, "length-penalty coefficient")
        ->check(CLI::NonNegativeNumber);
    cmd_kto->add_option("--beta", kc_beta, "value-function slope")->check(CLI::PositiveNumber);
    cmd_kto->add_option("--w-des", kc_w_des, "desirable class weight")->check(CLI::PositiveNumber);
    cmd_kto->add_option("--w-undes", kc_w_undes, "undesirable class weight")
        ->check(CLI::PositiveNumber);
    cmd_kto->add_option("--z-ref", kc_z_ref, "reference point");

    // categorize
    auto* cmd_cat = app.add_subcommand("categorize", "categorize adversarial test inputs");
    std::string cat_corpus, cat_problem, cat_tests;
    cmd_cat->add_option("--corpus", cat_corpus, "corpus file or directory")->required();
    cmd_cat->add_option("--problem", cat_problem, "problem id")->required();
    cmd_cat->add_option("--tests", cat_tests, "adversarial tests (jsonl)")->required();

    // report
    auto* cmd_report = app.add_subcommand("report", "rebuild the round-trend report for a run");
    std::optional<int> report_round;
    cmd_report->add_option("--round", report_round, "highest round to include");

    std::vector<const char*> argv;
    argv.push_back("ace");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        RoundConfig cfg = detail::load_config(config_path, seed);
        if (print_config) {
            json j = cfg;
            out << j.dump(2) << "\n";
            return 0;
        }
        RunLayout layout{fs::path(run_dir)};

        if (cmd_validate->parsed()) {
            auto corpus = load_corpus(corpus_path);
            size_t tests = 0, validators = 0, grammars = 0;
            for (const auto& p : corpus) {
                tests += p.gt_tests.size();
                validators += p.input_validator ? 1 : 0;
                grammars += p.offline ? 1 : 0;
            }
            out << json{{"problems", corpus.size()},
                        {"gt_tests", tests},
                        {"validators", validators},
                        {"offline_specs", grammars}}
                       .dump()
                << "\n";
            return 0;
        }

        if (cmd_round->parsed()) {
            auto corpus = load_corpus(round_corpus);
            if (round_number > 1 && fs::exists(layout.state_file(round_number - 1))) {
                RoundState prior = json::parse(read_file(layout.state_file(round_number - 1)))
                                       .get<RoundState>();
                if (prior.next_solver_model) cfg.solver_model = *prior.next_solver_model;
                if (prior.next_adversary_model) cfg.adversary_model = *prior.next_adversary_model;
            }
            auto backend = make_backend(cfg.backend, cfg.offline_bug_rate, cfg.endpoint,
                                        cfg.template_dir());
            RoundState state = run_round(round_number, cfg, corpus, *backend, layout);
            json j = state;
            out << j.dump() << "\n";
            return 0;
        }

        if (cmd_evolution->parsed()) {
            auto corpus = load_corpus(evolution_corpus);
            if (backend_override) cfg.backend = *backend_override;
            if (rounds_override) cfg.rounds = *rounds_override;
            auto states = run_evolution(cfg, corpus, layout);
            json summary = json::array();
            for (const auto& s : states) {
                summary.push_back(json{{"round", s.round},
                                       {"sft_records", s.metrics.n_sft_records},
                                       {"desirable", s.metrics.n_desirable},
                                       {"undesirable", s.metrics.n_undesirable},
                                       {"mean_gt_pass_rate", s.metrics.mean_gt_pass_rate}});
            }
            out << json{{"run_dir", run_dir}, {"rounds", summary}}.dump() << "\n";
            return 0;
        }

        if (cmd_matrix->parsed()) {
            auto corpus = load_corpus(mx_corpus);
            const Problem& problem = detail::find_problem(corpus, mx_problem);
            auto candidates = detail::load_candidates(mx_candidates);
            auto tests = detail::load_tests(mx_tests);
            ResourceLimits limits = problem.limits.value_or(cfg.limits);
            ExecutionMatrix matrix = build_matrix(problem, candidates, tests, limits,
                                                  cfg.parallelism, cfg.sandbox);
            save_matrix(matrix, mx_out);
            err << "matrix " << matrix.rows() << "x(" << matrix.gt_count << "+"
                << matrix.adv_ids.size() << "), " << matrix.pruned_tests.size()
                << " pruned test(s)\n";
            return 0;
        }

        if (cmd_select->parsed()) {
            ExecutionMatrix matrix = load_matrix(sel_matrix);
            auto candidates = detail::load_candidates(sel_candidates);
            SelectionConfig sel = cfg.selection;
            if (sel_tau_gt) sel.tau_gt = Rational::parse(json(*sel_tau_gt).dump());
            if (sel_tau_adv) sel.tau_adv = Rational::parse(json(*sel_tau_adv).dump());
            if (sel_alpha) sel.alpha = Rational::parse(json(*sel_alpha).dump());
            if (sel_rho) sel.rho = Rational::parse(json(*sel_rho).dump());
            std::string prompt;
            if (!sel_corpus.empty()) {
                auto corpus = load_corpus(sel_corpus);
                prompt = render_prompt(Role::Solver,
                                       detail::find_problem(corpus, matrix.problem_id),
                                       cfg.template_dir())
                             .full_text;
            }
            auto records = select_candidates(matrix, candidates, sel, prompt);
            emit_sft_dataset(records, sel_out);
            out << json{{"selected", records.size()}, {"out", sel_out}}.dump() << "\n";
            return 0;
        }

        if (cmd_prefs->parsed()) {
            ExecutionMatrix matrix = load_matrix(pf_matrix);
            auto tests = detail::load_tests(pf_tests);
            std::string prompt;
            if (!pf_corpus.empty()) {
                auto corpus = load_corpus(pf_corpus);
                prompt = render_prompt(Role::Adversary,
                                       detail::find_problem(corpus, matrix.problem_id),
                                       cfg.template_dir())
                             .full_text;
            }
            auto labels = label_tests(matrix.adv_table(false), matrix.adv_column_ids(false));
            auto records = build_kto_records(labels, tests, prompt, matrix.round);
            KtoSummary summary = emit_kto_dataset(records, pf_out);
            if (summary.n_desirable + summary.n_undesirable == 0) {
                err << "warning: every test was discarded; dataset is empty\n";
            }
            out << json{{"desirable", summary.n_desirable},
                        {"undesirable", summary.n_undesirable},
                        {"desirable_ratio", summary.desirable_ratio()},
                        {"out", pf_out}}
                       .dump()
                << "\n";
            return 0;
        }

        if (cmd_kto->parsed()) {
            ObjectiveConfig obj = cfg.objective;
            if (kc_lambda) obj.lambda_len = *kc_lambda;
            if (kc_beta) obj.beta = *kc_beta;
            if (kc_w_des) obj.w_des = *kc_w_des;
            if (kc_w_undes) obj.w_undes = *kc_w_undes;
            if (kc_z_ref) obj.z_ref = *kc_z_ref;

            std::vector<PreferenceSample> samples;
            if (kc_synth_seed) {
                auto lines = read_jsonl(kc_dataset);
                for (size_t i = 0; i < lines.size(); ++i) {
                    const json& j = lines[i];
                    PreferenceSample s;
                    if (j.contains("logp_policy") && j.contains("logp_ref")) {
                        s.logp_policy = j.at("logp_policy").get<double>();
                        s.logp_ref = j.at("logp_ref").get<double>();
                    } else {
                        std::mt19937_64 rng(
                            mix_seed(*kc_synth_seed, "kto-synth/" + std::to_string(i)));
                        s.logp_policy = -1.0 - 20.0 * detail::rand_unit(rng);
                        s.logp_ref = s.logp_policy + 4.0 * detail::rand_unit(rng) - 2.0;
                    }
                    s.length = j.value("token_length", 0ll);
                    s.desirable = j.at("label").get<bool>();
                    samples.push_back(s);
                }
            } else {
                samples = load_augmented_dataset(kc_dataset);
            }
            BatchLoss loss = batch_loss(samples, obj);
            auto grads = grad_wrt_logp(samples, obj);
            size_t n_des = 0;
            double grad_norm = 0.0;
            for (size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].desirable) ++n_des;
                grad_norm += grads[i] * grads[i];
            }
            out << json{{"n_samples", samples.size()},
                        {"n_desirable", n_des},
                        {"n_undesirable", samples.size() - n_des},
                        {"loss", loss.loss},
                        {"grad_l2", std::sqrt(grad_norm)}}
                       .dump()
                << "\n";
            return 0;
        }

        if (cmd_cat->parsed()) {
            auto corpus = load_corpus(cat_corpus);
            const Problem& problem = detail::find_problem(corpus, cat_problem);
            auto tests = detail::load_tests(cat_tests);
            ProblemStats stats = stats_for(problem);
            json per_test = json::array();
            std::vector<std::string> inputs;
            for (const auto& t : tests) {
                TestCategory cat = categorize_test(t.input, stats, cfg.analysis);
                per_test.push_back(json{{"sample_index", t.sample_index},
                                        {"category", to_string(cat.kind)},
                                        {"triggers", cat.triggers}});
                inputs.push_back(t.input);
            }
            json dist = json::object();
            if (!inputs.empty()) {
                for (const auto& [kind, share] : category_distribution(inputs, stats, cfg.analysis)) {
                    dist[to_string(kind)] = share.to_double();
                }
            }
            out << json{{"tests", per_test}, {"distribution", dist}}.dump() << "\n";
            return 0;
        }

        if (cmd_report->parsed()) {
            std::vector<RoundMetrics> series;
            int highest = 0;
            for (int r = 1; r <= (report_round ? *report_round : 1000); ++r) {
                if (!fs::exists(layout.state_file(r))) break;
                RoundState state = json::parse(read_file(layout.state_file(r))).get<RoundState>();
                series.push_back(state.metrics);
                highest = r;
            }
            if (series.empty()) {
                throw ValidationError("no round states under " + run_dir);
            }
            RoundReport report = round_report(series);
            write_file_atomic(layout.report_file(highest, ".json"),
                              report.structured.dump(1) + "\n");
            write_file_atomic(layout.report_file(highest, ".txt"), report.text);
            out << report.text;
            return 0;
        }

        err << app.help();
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ace::cli
