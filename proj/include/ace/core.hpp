#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/util.hpp"

namespace ace {

/// Hard per-execution resource limits enforced by the sandbox.
struct ResourceLimits {
    std::chrono::milliseconds wall_time{5000};
    std::chrono::milliseconds cpu_time{5000};
    std::uint64_t memory_bytes = 512ull << 20;
    std::uint64_t output_cap_bytes = 16ull << 20;
    std::uint64_t max_test_input_bytes = 1ull << 20;

    void validate() const {
        if (wall_time.count() <= 0 || cpu_time.count() <= 0 || memory_bytes == 0 ||
            output_cap_bytes == 0 || max_test_input_bytes == 0) {
            throw ValidationError("resource limits must be strictly positive");
        }
        if (wall_time < cpu_time) {
            throw ValidationError("wall_time must be >= cpu_time");
        }
    }
};

inline void to_json(json& j, const ResourceLimits& l) {
    j = json{{"wall_time_ms", l.wall_time.count()},
             {"cpu_time_ms", l.cpu_time.count()},
             {"memory_bytes", l.memory_bytes},
             {"output_cap_bytes", l.output_cap_bytes},
             {"max_test_input_bytes", l.max_test_input_bytes}};
}

inline void from_json(const json& j, ResourceLimits& l) {
    ResourceLimits defaults;
    l.wall_time = std::chrono::milliseconds(j.value("wall_time_ms", defaults.wall_time.count()));
    l.cpu_time = std::chrono::milliseconds(j.value("cpu_time_ms", defaults.cpu_time.count()));
    l.memory_bytes = j.value("memory_bytes", defaults.memory_bytes);
    l.output_cap_bytes = j.value("output_cap_bytes", defaults.output_cap_bytes);
    l.max_test_input_bytes = j.value("max_test_input_bytes", defaults.max_test_input_bytes);
    l.validate();
}

/// Input/expected-output pair from the corpus. The expected output is the
/// oracle and is never mutated after ingestion.
struct GroundTruthTest {
    std::string input;
    std::string expected_output;
};

/// Structure of a problem's input, used by the offline backend to sample
/// conforming inputs and by test categorization for declared value bounds.
struct InputGrammar {
    enum class Kind { Int, IntList, Text };
    Kind kind = Kind::Int;
    long long min_value = 0;
    long long max_value = 0;
    // IntList only
    int count_min = 1;
    int count_max = 1;
    bool count_prefix = false;
    // Text only
    int len_min = 0;
    int len_max = 0;
    std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
};

inline void to_json(json& j, const InputGrammar& g) {
    switch (g.kind) {
        case InputGrammar::Kind::Int:
            j = json{{"type", "int"}, {"min", g.min_value}, {"max", g.max_value}};
            break;
        case InputGrammar::Kind::IntList:
            j = json{{"type", "int_list"}, {"min", g.min_value},       {"max", g.max_value},
                     {"count_min", g.count_min}, {"count_max", g.count_max},
                     {"count_prefix", g.count_prefix}};
            break;
        case InputGrammar::Kind::Text:
            j = json{{"type", "text"}, {"len_min", g.len_min}, {"len_max", g.len_max},
                     {"alphabet", g.alphabet}};
            break;
    }
}

inline void from_json(const json& j, InputGrammar& g) {
    std::string type = j.at("type").get<std::string>();
    if (type == "int") {
        g.kind = InputGrammar::Kind::Int;
        g.min_value = j.at("min").get<long long>();
        g.max_value = j.at("max").get<long long>();
    } else if (type == "int_list") {
        g.kind = InputGrammar::Kind::IntList;
        g.min_value = j.at("min").get<long long>();
        g.max_value = j.at("max").get<long long>();
        g.count_min = j.value("count_min", 1);
        g.count_max = j.value("count_max", 1);
        g.count_prefix = j.value("count_prefix", false);
    } else if (type == "text") {
        g.kind = InputGrammar::Kind::Text;
        g.len_min = j.value("len_min", 0);
        g.len_max = j.value("len_max", 64);
        g.alphabet = j.value("alphabet", std::string("abcdefghijklmnopqrstuvwxyz"));
    } else {
        throw ParseError("unknown grammar type: " + type);
    }
    if (g.min_value > g.max_value || g.count_min > g.count_max || g.len_min > g.len_max ||
        g.count_min < 0 || g.len_min < 0) {
        throw ValidationError("inconsistent grammar bounds");
    }
}

/// Reference material for the offline generator backend: a known-good
/// line-exact solution plus the input grammar.
struct OfflineSpec {
    InputGrammar grammar;
    std::string solution;
};

struct Problem {
    std::string id;
    std::string statement;
    std::vector<GroundTruthTest> gt_tests;
    std::optional<std::string> input_validator;
    std::optional<ResourceLimits> limits;
    std::optional<OfflineSpec> offline;

    void validate() const {
        if (id.empty()) throw ValidationError("problem with empty id");
        if (gt_tests.empty()) throw ValidationError("problem " + id + " has no ground-truth tests");
        if (limits) limits->validate();
    }
};

inline void to_json(json& j, const Problem& p) {
    j = json::object();
    j["id"] = p.id;
    j["statement"] = p.statement;
    json tests = json::array();
    for (const auto& t : p.gt_tests) {
        json jt = json::object();
        set_bytes(jt, "input", t.input);
        set_bytes(jt, "expected_output", t.expected_output);
        tests.push_back(std::move(jt));
    }
    j["gt_tests"] = std::move(tests);
    if (p.input_validator) j["validator"] = *p.input_validator;
    if (p.limits) j["limits"] = *p.limits;
    if (p.offline) {
        j["offline"] = json{{"grammar", p.offline->grammar}, {"solution", p.offline->solution}};
    }
}

inline void from_json(const json& j, Problem& p) {
    p.id = j.at("id").get<std::string>();
    p.statement = j.value("statement", std::string());
    p.gt_tests.clear();
    if (j.contains("gt_tests")) {
        for (const auto& jt : j.at("gt_tests")) {
            GroundTruthTest t;
            t.input = get_bytes(jt, "input");
            t.expected_output = get_bytes(jt, "expected_output");
            p.gt_tests.push_back(std::move(t));
        }
    }
    if (j.contains("validator") && !j.at("validator").is_null())
        p.input_validator = j.at("validator").get<std::string>();
    else
        p.input_validator.reset();
    if (j.contains("limits") && !j.at("limits").is_null())
        p.limits = j.at("limits").get<ResourceLimits>();
    else
        p.limits.reset();
    if (j.contains("offline") && !j.at("offline").is_null()) {
        OfflineSpec off;
        off.grammar = j.at("offline").at("grammar").get<InputGrammar>();
        off.solution = j.at("offline").at("solution").get<std::string>();
        p.offline = std::move(off);
    } else {
        p.offline.reset();
    }
    p.validate();
}

/// One solver sample: the extracted program plus provenance.
struct CandidateProgram {
    std::string problem_id;
    std::string source;
    int sample_index = 0;
    int round = 1;
    std::string generator_id;
    long long token_length = 0;
};

inline void to_json(json& j, const CandidateProgram& c) {
    j = json{{"problem_id", c.problem_id}, {"sample_index", c.sample_index},
             {"round", c.round},           {"generator_id", c.generator_id},
             {"token_length", c.token_length}};
    j["source"] = c.source;
}

inline void from_json(const json& j, CandidateProgram& c) {
    c.problem_id = j.at("problem_id").get<std::string>();
    c.source = j.at("source").get<std::string>();
    c.sample_index = j.at("sample_index").get<int>();
    c.round = j.value("round", 1);
    c.generator_id = j.value("generator_id", std::string());
    c.token_length = j.value("token_length", 0ll);
}

enum class Validity { Unchecked, Valid, InvalidSpec, OverLimit, AllFail };

inline std::string to_string(Validity v) {
    switch (v) {
        case Validity::Unchecked: return "unchecked";
        case Validity::Valid: return "valid";
        case Validity::InvalidSpec: return "invalid_spec";
        case Validity::OverLimit: return "over_limit";
        case Validity::AllFail: return "all_fail";
    }
    return "unchecked";
}

inline Validity validity_from_string(const std::string& s) {
    if (s == "unchecked") return Validity::Unchecked;
    if (s == "valid") return Validity::Valid;
    if (s == "invalid_spec") return Validity::InvalidSpec;
    if (s == "over_limit") return Validity::OverLimit;
    if (s == "all_fail") return Validity::AllFail;
    throw ParseError("unknown validity: " + s);
}

/// One adversary sample: a raw test INPUT. There is deliberately no expected
/// output anywhere on this type. raw_response keeps the adversary's full
/// formatted completion for preference-record emission.
struct AdversarialTest {
    std::string problem_id;
    std::string input;
    int sample_index = 0;
    int round = 1;
    std::string generator_id;
    long long token_length = 0;
    Validity validity = Validity::Unchecked;
    std::string raw_response;
};

inline void to_json(json& j, const AdversarialTest& t) {
    j = json{{"problem_id", t.problem_id}, {"sample_index", t.sample_index},
             {"round", t.round},           {"generator_id", t.generator_id},
             {"token_length", t.token_length}, {"validity", to_string(t.validity)}};
    set_bytes(j, "input", t.input);
    set_bytes(j, "raw_response", t.raw_response);
}

inline void from_json(const json& j, AdversarialTest& t) {
    t.problem_id = j.at("problem_id").get<std::string>();
    t.input = get_bytes(j, "input");
    t.sample_index = j.at("sample_index").get<int>();
    t.round = j.value("round", 1);
    t.generator_id = j.value("generator_id", std::string());
    t.token_length = j.value("token_length", 0ll);
    t.validity = validity_from_string(j.value("validity", std::string("unchecked")));
    t.raw_response = j.contains("raw_response") || j.contains("raw_response_b64")
                         ? get_bytes(j, "raw_response")
                         : std::string();
}

/// Normalization applied to both program output and oracle output before the
/// exact-match comparison: strip trailing whitespace on each line, then strip
/// trailing blank lines. All other bytes are preserved. Idempotent.
inline std::string normalize_output(std::string_view raw) {
    std::vector<std::string_view> lines;
    size_t start = 0;
    while (start <= raw.size()) {
        size_t end = raw.find('\n', start);
        if (end == std::string_view::npos) {
            lines.push_back(raw.substr(start));
            break;
        }
        lines.push_back(raw.substr(start, end - start));
        start = end + 1;
    }
    auto rstrip = [](std::string_view line) {
        size_t end = line.size();
        while (end > 0) {
            char c = line[end - 1];
            if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
                --end;
            } else {
                break;
            }
        }
        return line.substr(0, end);
    };
    std::vector<std::string_view> stripped;
    stripped.reserve(lines.size());
    for (auto line : lines) stripped.push_back(rstrip(line));
    while (!stripped.empty() && stripped.back().empty()) stripped.pop_back();
    std::string out;
    for (size_t i = 0; i < stripped.size(); ++i) {
        if (i) out += '\n';
        out.append(stripped[i]);
    }
    return out;
}

/// Test payloads are stored byte-exactly, but the execution layer terminates
/// the final line before feeding a program: line readers otherwise block on
/// the held-open stdin pipe waiting for a newline that never comes.
inline std::string exec_stdin(std::string_view input) {
    std::string out(input);
    if (out.empty() || out.back() != '\n') out += '\n';
    return out;
}

/// Loads a corpus from a single JSON file ({"problems": [...]}) or from a
/// directory of per-problem JSON files. Rejects duplicate ids and problems
/// without ground-truth tests, naming the offending record.
inline std::vector<Problem> load_corpus(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::vector<json> docs;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            try {
                docs.push_back(json::parse(read_file(f)));
            } catch (const json::exception& e) {
                throw ParseError(f.string() + ": " + e.what());
            }
        }
    } else if (fs::exists(path)) {
        try {
            docs.push_back(json::parse(read_file(path)));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
    } else {
        throw IoError("corpus path does not exist: " + path.string());
    }

    std::vector<Problem> problems;
    auto ingest = [&](const json& jp) {
        Problem p;
        try {
            p = jp.get<Problem>();
        } catch (const json::exception& e) {
            throw ParseError("malformed problem record: " + std::string(e.what()));
        }
        problems.push_back(std::move(p));
    };
    for (const auto& doc : docs) {
        if (doc.contains("problems")) {
            for (const auto& jp : doc.at("problems")) ingest(jp);
        } else {
            ingest(doc);
        }
    }

    std::set<std::string> seen;
    for (const auto& p : problems) {
        if (!seen.insert(p.id).second) {
            throw ValidationError("duplicate problem id: " + p.id);
        }
    }
    return problems;
}

inline void save_corpus(const std::vector<Problem>& problems, const std::filesystem::path& path) {
    json j;
    j["problems"] = problems;
    write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace ace
