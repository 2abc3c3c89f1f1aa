#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ace/execution_matrix.hpp"

using namespace ace;
namespace fs = std::filesystem;

namespace {

ResourceLimits fast_limits() {
    ResourceLimits limits;
    limits.wall_time = std::chrono::milliseconds(1500);
    limits.cpu_time = std::chrono::milliseconds(1500);
    limits.memory_bytes = 256ull << 20;
    return limits;
}

SandboxConfig fast_python() {
    SandboxConfig cfg;
    cfg.interpreter = {"python3", "-S"};
    return cfg;
}

Problem double_problem() {
    Problem p;
    p.id = "double";
    p.statement = "print 2*n";
    p.gt_tests = {{"3\n", "6\n"}};
    return p;
}

CandidateProgram candidate(const std::string& pid, const std::string& source, int index) {
    CandidateProgram c;
    c.problem_id = pid;
    c.source = source;
    c.sample_index = index;
    c.round = 1;
    c.generator_id = "test";
    c.token_length = whitespace_token_count(source);
    return c;
}

AdversarialTest adv(const std::string& pid, const std::string& input, int index) {
    AdversarialTest t;
    t.problem_id = pid;
    t.input = input;
    t.sample_index = index;
    t.round = 1;
    t.generator_id = "test";
    t.raw_response = "Test Input:\n```\n" + input + "\n```\nExplanation: test.\n";
    return t;
}

}  // namespace

TEST_CASE("two-candidate matrix: correct vs crash-on-any-input", "[matrix]") {
    Problem p = double_problem();
    std::vector<CandidateProgram> candidates = {
        candidate(p.id, "print(2 * int(input()))", 0),
        candidate(p.id, "raise RuntimeError('boom')", 1),
    };
    std::vector<AdversarialTest> tests = {adv(p.id, "41", 0)};

    auto m = build_matrix(p, candidates, tests, fast_limits(), 2, fast_python());
    REQUIRE(m.rows() == 2);
    REQUIRE(m.gt_count == 1);
    REQUIRE(m.adv_ids.size() == 1);

    CHECK(m.gt_cell(0, 0));
    CHECK_FALSE(m.gt_cell(1, 0));
    // the adv column survives: one candidate passes it
    CHECK(m.adv_surviving[0] == 1);
    CHECK(m.adv_cell(0, 0));
    CHECK_FALSE(m.adv_cell(1, 0));

    CHECK(m.gt_pass_rate(0) == Rational(1));
    CHECK(m.gt_pass_rate(1) == Rational(0));
    CHECK(m.adv_success_rate(0) == Rational(1));
    CHECK(m.adv_success_rate(1) == Rational(0));
}

TEST_CASE("all-pass adversarial column is kept", "[matrix]") {
    Problem p = double_problem();
    std::vector<CandidateProgram> candidates = {
        candidate(p.id, "print(2 * int(input()))", 0),
        candidate(p.id, "print(2 * int(input()))", 1),
    };
    std::vector<AdversarialTest> tests = {adv(p.id, "10", 0)};
    auto m = build_matrix(p, candidates, tests, fast_limits(), 2, fast_python());
    CHECK(m.surviving_adv_count() == 1);
    CHECK(m.adv_cell(0, 0));
    CHECK(m.adv_cell(1, 0));
}

TEST_CASE("all-fail adversarial column is pruned with reason", "[matrix]") {
    Problem p = double_problem();
    std::vector<CandidateProgram> candidates = {
        candidate(p.id, "print(2 * int(input()))", 0),
        candidate(p.id, "print(2 * int(input()))", 1),
    };
    // non-numeric input crashes every candidate
    std::vector<AdversarialTest> tests = {adv(p.id, "not-a-number", 0), adv(p.id, "4", 1)};
    auto m = build_matrix(p, candidates, tests, fast_limits(), 2, fast_python());
    REQUIRE(m.adv_ids.size() == 2);
    CHECK(m.adv_surviving[0] == 0);
    CHECK(m.adv_surviving[1] == 1);
    CHECK(m.surviving_adv_count() == 1);
    bool found = false;
    for (const auto& entry : m.pruned_tests) {
        if (entry.sample_index == 0 && entry.reason == Validity::AllFail) found = true;
    }
    CHECK(found);
    // rates only see the surviving column
    CHECK(m.adv_success_rate(0) == Rational(1));
}

TEST_CASE("prune_invalid_tests: size cap and validator", "[matrix]") {
    Problem p = double_problem();
    p.input_validator =
        "import sys\n"
        "try:\n"
        "    v = int(input())\n"
        "    assert v >= 1\n"
        "except Exception:\n"
        "    sys.exit(1)\n"
        "sys.exit(0)";
    ResourceLimits limits = fast_limits();
    limits.max_test_input_bytes = 1 << 20;

    std::vector<AdversarialTest> tests = {
        adv(p.id, std::string(2u << 20, '7'), 0),  // 2 MiB with a 1 MiB cap
        adv(p.id, "-1", 1),                        // validator requires >= 1
        adv(p.id, "12", 2),
    };
    auto result = prune_invalid_tests(p, tests, limits, 2, fast_python());
    REQUIRE(result.valid.size() == 1);
    CHECK(result.valid[0].sample_index == 2);
    CHECK(result.valid[0].validity == Validity::Valid);
    REQUIRE(result.pruned.size() == 2);
    CHECK(result.pruned[0].reason == Validity::OverLimit);
    CHECK(result.pruned[1].reason == Validity::InvalidSpec);
}

TEST_CASE("prune without validator is default-permit", "[matrix]") {
    Problem p = double_problem();
    std::vector<AdversarialTest> tests = {adv(p.id, "whatever", 0)};
    auto result = prune_invalid_tests(p, tests, fast_limits(), 1, fast_python());
    REQUIRE(result.valid.size() == 1);
    CHECK(result.pruned.empty());
}

TEST_CASE("validator sandbox failure prunes conservatively as Unchecked", "[matrix]") {
    Problem p = double_problem();
    p.input_validator = "import sys\nsys.exit(0)";
    SandboxConfig broken;
    broken.interpreter = {"missing-interpreter-9c1d"};
    std::vector<AdversarialTest> tests = {adv(p.id, "5", 0)};
    auto result = prune_invalid_tests(p, tests, fast_limits(), 1, broken);
    CHECK(result.valid.empty());
    REQUIRE(result.pruned.size() == 1);
    CHECK(result.pruned[0].reason == Validity::Unchecked);
}

TEST_CASE("rate arithmetic over hand-set verdicts", "[matrix]") {
    ExecutionMatrix m;
    m.problem_id = "synthetic";
    m.gt_count = 4;
    m.candidate_ids = {0};
    auto pass = Verdict{VerdictKind::Pass, ""};
    auto fail = Verdict{VerdictKind::WrongOutput, ""};
    m.gt_verdicts = {{pass, pass, pass, fail}};
    m.adv_verdicts = {{pass, fail}};
    m.adv_ids = {0, 1};
    m.adv_surviving = {1, 1};
    CHECK(m.gt_pass_rate(0) == Rational(3, 4));
    CHECK(m.adv_success_rate(0) == Rational(1, 2));

    m.gt_verdicts = {{pass, pass, pass, pass}};
    CHECK(m.gt_pass_rate(0) == Rational(1));
    m.gt_verdicts = {{fail, fail, fail, fail}};
    CHECK(m.gt_pass_rate(0) == Rational(0));

    // zero surviving adversarial columns: vacuous success
    m.adv_surviving = {0, 0};
    CHECK(m.adv_success_rate(0) == Rational(1));
    // all-pass row
    m.adv_verdicts = {{pass, pass}};
    m.adv_surviving = {1, 1};
    CHECK(m.adv_success_rate(0) == Rational(1));
}

TEST_CASE("all-fail pruning commutes with row permutation", "[matrix]") {
    std::mt19937_64 rng(99);
    for (int iter = 0; iter < 200; ++iter) {
        size_t rows = 1 + rng() % 6, cols = 1 + rng() % 6;
        std::vector<std::vector<bool>> table(rows, std::vector<bool>(cols));
        for (auto& row : table) {
            for (size_t j = 0; j < cols; ++j) row[j] = rng() % 3 == 0;
        }
        auto alive = surviving_columns(table);

        std::vector<std::vector<bool>> shuffled = table;
        for (size_t i = rows; i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng() % i]);
        CHECK(surviving_columns(shuffled) == alive);

        // every surviving column has at least one passing row
        for (size_t j = 0; j < cols; ++j) {
            if (!alive[j]) continue;
            bool any = false;
            for (size_t i = 0; i < rows; ++i) any = any || table[i][j];
            CHECK(any);
        }
    }
}

TEST_CASE("matrix file round-trip is bit-for-bit stable", "[matrix]") {
    Problem p = double_problem();
    std::vector<CandidateProgram> candidates = {
        candidate(p.id, "print(2 * int(input()))", 0),
        candidate(p.id, "print(2 * int(input()) + 1)", 1),
    };
    std::vector<AdversarialTest> tests = {adv(p.id, "9", 0)};
    auto m = build_matrix(p, candidates, tests, fast_limits(), 2, fast_python());

    auto dir = fs::temp_directory_path() / ("ace-mx-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    save_matrix(m, dir / "m1.json");
    auto reloaded = load_matrix(dir / "m1.json");
    save_matrix(reloaded, dir / "m2.json");
    CHECK(read_file(dir / "m1.json") == read_file(dir / "m2.json"));

    // rebuild from scratch: deterministic candidates give identical files
    auto m2 = build_matrix(p, candidates, tests, fast_limits(), 1, fast_python());
    save_matrix(m2, dir / "m3.json");
    CHECK(read_file(dir / "m1.json") == read_file(dir / "m3.json"));
    fs::remove_all(dir);
}

TEST_CASE("build_matrix contract violations", "[matrix]") {
    Problem p = double_problem();
    CHECK_THROWS_AS(build_matrix(p, {}, {}, fast_limits(), 1, fast_python()), DomainError);
    std::vector<CandidateProgram> dup = {candidate(p.id, "print(1)", 0),
                                         candidate(p.id, "print(2)", 0)};
    CHECK_THROWS_AS(build_matrix(p, dup, {}, fast_limits(), 1, fast_python()), ValidationError);

    SandboxConfig broken;
    broken.interpreter = {"missing-interpreter-5e2f"};
    std::vector<CandidateProgram> one = {candidate(p.id, "print(1)", 0)};
    CHECK_THROWS_AS(build_matrix(p, one, {}, fast_limits(), 1, broken), SandboxError);
}
