#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>

#include "ace/core.hpp"
#include "ace/errors.hpp"
#include "ace/prompts.hpp"
#include "ace/util.hpp"

namespace ace {

struct GeneratorRequest {
    Role role = Role::Solver;
    Problem problem;
    int n_samples = 1;
    double temperature = 1.0;
    std::optional<std::uint64_t> seed;
    std::string model_id;
    int round = 1;

    void validate() const {
        if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
        if (temperature < 0) throw ValidationError("temperature must be >= 0");
    }
};

/// One completion. `ok` is false for a recorded empty slot (generation or
/// extraction failure); failed slots shrink the effective sample count for
/// the problem instead of aborting the round.
struct GeneratorResponse {
    std::string raw_text;
    std::string extracted;
    long long token_length = 0;
    std::string finish_reason;
    bool ok = false;
};

namespace detail {

struct FencedBlock {
    size_t begin = 0;  // first content byte
    size_t end = 0;    // one past last content byte
};

/// Complete ``` blocks, in order; a trailing unterminated fence counts as a
/// block running to the end (truncated completions are common).
inline std::vector<FencedBlock> find_fenced_blocks(std::string_view text) {
    std::vector<FencedBlock> blocks;
    size_t pos = 0;
    bool in_block = false;
    size_t content_start = 0;
    while (pos <= text.size()) {
        size_t line_end = text.find('\n', pos);
        bool last_line = line_end == std::string_view::npos;
        std::string_view line = text.substr(pos, last_line ? text.size() - pos : line_end - pos);
        if (line.substr(0, 3) == "```") {
            if (!in_block) {
                in_block = true;
                content_start = last_line ? text.size() : line_end + 1;
            } else {
                blocks.push_back({content_start, pos > 0 ? pos - 1 : 0});
                in_block = false;
            }
        }
        if (last_line) break;
        pos = line_end + 1;
    }
    if (in_block && content_start <= text.size()) {
        blocks.push_back({content_start, text.size()});
    }
    for (auto& b : blocks) {
        if (b.end < b.begin) b.end = b.begin;
    }
    return blocks;
}

inline std::string trim(std::string_view s) {
    size_t begin = 0, end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return std::string(s.substr(begin, end - begin));
}

}  // namespace detail

/// The last fenced code block, or the whole response trimmed when no fence is
/// present. Throws when no plausible program remains.
inline std::string extract_code(std::string_view raw_text) {
    auto blocks = detail::find_fenced_blocks(raw_text);
    std::string code;
    if (!blocks.empty()) {
        const auto& b = blocks.back();
        code = detail::trim(raw_text.substr(b.begin, b.end - b.begin));
    } else {
        code = detail::trim(raw_text);
    }
    if (code.empty()) throw GeneratorError("no code in response");
    return code;
}

/// The bytes inside the fenced block after the first "Test Input:" marker.
/// The fence's surrounding newlines are removed; interior bytes (including an
/// entirely empty input) are preserved exactly.
inline std::string extract_test_input(std::string_view raw_text) {
    size_t marker = raw_text.find("Test Input:");
    if (marker == std::string_view::npos) {
        throw GeneratorError("response lacks a Test Input: marker");
    }
    size_t fence = raw_text.find("```", marker);
    if (fence == std::string_view::npos) {
        throw GeneratorError("no fenced block after Test Input: marker");
    }
    size_t content_start = raw_text.find('\n', fence);
    if (content_start == std::string_view::npos) {
        throw GeneratorError("unterminated test input block");
    }
    ++content_start;
    size_t close = raw_text.find("\n```", content_start);
    if (close == std::string_view::npos) {
        // fence closed on the very next line => empty input
        if (raw_text.substr(content_start, 3) == "```") return "";
        throw GeneratorError("unterminated test input block");
    }
    return std::string(raw_text.substr(content_start, close - content_start));
}

class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;
    virtual std::string name() const = 0;
    virtual std::vector<GeneratorResponse> generate(const GeneratorRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Offline backend: deterministic, grammar-driven. The solver side draws from a
// pool of transforms over the problem's bundled reference solution (correct /
// crash-on-edge / wrong-on-edge / crash-always) so matrices exhibit mixed
// outcomes; the adversary side samples grammar-conforming inputs with
// boundary, stress, and format patterns but no adversarial optimization.
// ---------------------------------------------------------------------------

class OfflineBackend : public GeneratorBackend {
public:
    explicit OfflineBackend(double bug_rate = 0.5) : bug_rate_(bug_rate) {
        if (bug_rate < 0.0 || bug_rate > 1.0) throw ValidationError("bug rate outside [0,1]");
    }

    std::string name() const override { return "offline"; }

    std::vector<GeneratorResponse> generate(const GeneratorRequest& req) override {
        req.validate();
        if (!req.seed) throw GeneratorError("offline backend requires a seed");
        if (!req.problem.offline) {
            throw GeneratorError("problem " + req.problem.id +
                                 " lacks an offline grammar/solution block");
        }
        std::vector<GeneratorResponse> out;
        out.reserve(static_cast<size_t>(req.n_samples));
        for (int i = 0; i < req.n_samples; ++i) {
            std::string tag = req.problem.id + "/" + to_string(req.role) + "/r" +
                              std::to_string(req.round) + "/s" + std::to_string(i);
            std::mt19937_64 rng(mix_seed(*req.seed, tag));
            GeneratorResponse resp = req.role == Role::Solver
                                         ? solver_sample(*req.problem.offline, rng)
                                         : adversary_sample(*req.problem.offline, rng);
            resp.token_length = whitespace_token_count(resp.raw_text);
            resp.finish_reason = "stop";
            resp.ok = true;
            out.push_back(std::move(resp));
        }
        return out;
    }

private:
    static long long rand_in(std::mt19937_64& rng, long long lo, long long hi) {
        unsigned __int128 span = static_cast<unsigned __int128>(hi) - lo + 1;
        return lo + static_cast<long long>(rng() % span);
    }

    static double rand_unit(std::mt19937_64& rng) {
        return static_cast<double>(rng() >> 11) / 9007199254740992.0;  // 2^53
    }

    // Reads exactly the lines the grammar declares into _lines. Line-exact
    // reading matters: stdin stays open, so reading past the input blocks.
    static std::string reader_snippet(const InputGrammar& g) {
        if (g.kind == InputGrammar::Kind::IntList && g.count_prefix) {
            return "_lines = [input()]\n_lines.append(input())\n";
        }
        return "_lines = [input()]\n";
    }

    static std::string edge_snippet(const InputGrammar& g) {
        if (g.kind == InputGrammar::Kind::Text) {
            return "_edge = len(_lines[0]) <= " + std::to_string(g.len_min + 1) +
                   " or len(_lines[0]) >= " + std::to_string(g.len_max - 1) + "\n";
        }
        return "_vals = [int(t) for t in _raw.split()]\n_edge = any(v <= " +
               std::to_string(g.min_value + 1) + " or v >= " + std::to_string(g.max_value - 1) +
               " for v in _vals)\n";
    }

    GeneratorResponse solver_sample(const OfflineSpec& spec, std::mt19937_64& rng) const {
        enum class Variant { Correct, CrashOnEdge, WrongOnEdge, CrashAlways };
        Variant variant = Variant::Correct;
        if (rand_unit(rng) < bug_rate_) {
            double u = rand_unit(rng);
            variant = u < 0.45   ? Variant::CrashOnEdge
                      : u < 0.80 ? Variant::WrongOnEdge
                                 : Variant::CrashAlways;
        }
        std::string source;
        switch (variant) {
            case Variant::Correct:
                source = spec.solution;
                break;
            case Variant::CrashAlways:
                source = "raise RuntimeError(\"unable to solve this case\")";
                break;
            case Variant::CrashOnEdge:
                source = "import io, sys\n" + reader_snippet(spec.grammar) +
                         "_raw = \"\\n\".join(_lines)\n" + edge_snippet(spec.grammar) +
                         "if _edge:\n    raise ValueError(\"unhandled edge case\")\n"
                         "sys.stdin = io.StringIO(_raw + \"\\n\")\n" +
                         spec.solution;
                break;
            case Variant::WrongOnEdge:
                source = "import io, re, sys\n" + reader_snippet(spec.grammar) +
                         "_raw = \"\\n\".join(_lines)\n" + edge_snippet(spec.grammar) +
                         "sys.stdin = io.StringIO(_raw + \"\\n\")\n"
                         "_buf = io.StringIO()\n"
                         "_stdout = sys.stdout\n"
                         "sys.stdout = _buf\n" +
                         spec.solution +
                         "\nsys.stdout = _stdout\n"
                         "_text = _buf.getvalue()\n"
                         "if _edge:\n"
                         "    _m = list(re.finditer(r\"-?\\d+\", _text))\n"
                         "    if _m:\n"
                         "        _last = _m[-1]\n"
                         "        _text = _text[:_last.start()] + str(int(_last.group()) + 1) + "
                         "_text[_last.end():]\n"
                         "    else:\n"
                         "        _text = _text.rstrip(\"\\n\") + \"?\\n\"\n"
                         "sys.stdout.write(_text)\n";
                break;
        }
        static constexpr std::string_view intros[] = {
            "Reading the statement carefully, the plan is straightforward.",
            "I parse the input, compute the answer, and print it.",
            "A direct implementation is enough here.",
        };
        GeneratorResponse resp;
        resp.raw_text = std::string(intros[rng() % 3]) + "\n\n```python\n" + source + "\n```\n";
        resp.extracted = extract_code(resp.raw_text);
        return resp;
    }

    struct GeneratedInput {
        std::string input;
        std::string why;
    };

    static GeneratedInput sample_input(const InputGrammar& g, std::mt19937_64& rng) {
        auto pick_value = [&](int mode) -> long long {
            switch (mode) {
                case 0: return g.min_value;
                case 1: return g.max_value;
                case 2: return g.min_value + 1 <= g.max_value ? g.min_value + 1 : g.min_value;
                case 3: return g.max_value - 1 >= g.min_value ? g.max_value - 1 : g.max_value;
                default: return rand_in(rng, g.min_value, g.max_value);
            }
        };
        switch (g.kind) {
            case InputGrammar::Kind::Int: {
                int mode = static_cast<int>(rng() % 8);  // half typical, half boundary-flavored
                long long v = pick_value(mode < 4 ? mode : 4);
                return {std::to_string(v),
                        mode < 4 ? "probes the declared value bounds" : "a typical value"};
            }
            case InputGrammar::Kind::IntList: {
                int count_mode = static_cast<int>(rng() % 4);
                long long count = count_mode == 0   ? g.count_min
                                  : count_mode == 1 ? g.count_max
                                                    : rand_in(rng, g.count_min, g.count_max);
                bool boundary_values = rng() % 2 == 0;
                bool double_space = !g.count_prefix && rng() % 8 == 0;
                std::string sep = double_space ? "  " : " ";
                std::string values;
                for (long long i = 0; i < count; ++i) {
                    if (i) values += sep;
                    values += std::to_string(
                        boundary_values ? pick_value(static_cast<int>(rng() % 4)) : pick_value(4));
                }
                std::string input =
                    g.count_prefix ? std::to_string(count) + "\n" + values : values;
                std::string why = boundary_values ? "mixes extreme values near the bounds"
                                  : count == g.count_max ? "stresses the maximum input size"
                                  : count == g.count_min ? "the smallest allowed list"
                                                         : "a typical list";
                if (double_space) why += " with irregular spacing";
                return {std::move(input), std::move(why)};
            }
            case InputGrammar::Kind::Text: {
                int mode = static_cast<int>(rng() % 4);
                long long len = mode == 0   ? g.len_min
                                : mode == 1 ? g.len_max
                                            : rand_in(rng, g.len_min, g.len_max);
                std::string s;
                for (long long i = 0; i < len; ++i) {
                    s += g.alphabet[rng() % g.alphabet.size()];
                }
                return {std::move(s), mode < 2 ? "an extreme-length string" : "a typical string"};
            }
        }
        return {"", "empty"};
    }

    static GeneratorResponse adversary_sample(const OfflineSpec& spec, std::mt19937_64& rng) {
        GeneratedInput gen = sample_input(spec.grammar, rng);
        GeneratorResponse resp;
        resp.raw_text =
            "Common mistakes for this problem involve boundary values, degenerate sizes, and "
            "fragile input parsing. I pick an input that leans on those.\n\n"
            "Test Input:\n```\n" +
            gen.input + "\n```\nExplanation: " + gen.why + ".\n";
        resp.extracted = extract_test_input(resp.raw_text);
        return resp;
    }

    double bug_rate_;
};

// ---------------------------------------------------------------------------
// Remote backend: OpenAI-compatible chat completions.
// ---------------------------------------------------------------------------

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string api_key_env = "ACE_API_KEY";
    long long timeout_ms = 120000;
    int max_retries = 3;
    long long retry_base_delay_ms = 500;
    int max_in_flight = 4;
    bool per_sample_requests = false;
};

inline void to_json(json& j, const EndpointConfig& c) {
    j = json{{"base_url", c.base_url},
             {"api_key_env", c.api_key_env},
             {"timeout_ms", c.timeout_ms},
             {"max_retries", c.max_retries},
             {"retry_base_delay_ms", c.retry_base_delay_ms},
             {"max_in_flight", c.max_in_flight},
             {"per_sample_requests", c.per_sample_requests}};
}

inline void from_json(const json& j, EndpointConfig& c) {
    EndpointConfig defaults;
    c.base_url = j.value("base_url", defaults.base_url);
    c.api_key_env = j.value("api_key_env", defaults.api_key_env);
    c.timeout_ms = j.value("timeout_ms", defaults.timeout_ms);
    c.max_retries = j.value("max_retries", defaults.max_retries);
    c.retry_base_delay_ms = j.value("retry_base_delay_ms", defaults.retry_base_delay_ms);
    c.max_in_flight = j.value("max_in_flight", defaults.max_in_flight);
    c.per_sample_requests = j.value("per_sample_requests", defaults.per_sample_requests);
}

class RemoteBackend : public GeneratorBackend {
public:
    explicit RemoteBackend(EndpointConfig cfg,
                           std::optional<std::filesystem::path> template_dir = {})
        : cfg_(std::move(cfg)), template_dir_(std::move(template_dir)) {
        split_url();
    }

    std::string name() const override { return "remote"; }

    std::vector<GeneratorResponse> generate(const GeneratorRequest& req) override {
        req.validate();
        Prompt prompt = render_prompt(req.role, req.problem, template_dir_);
        std::vector<GeneratorResponse> out(static_cast<size_t>(req.n_samples));
        if (cfg_.per_sample_requests) {
            std::atomic<int> next{0};
            std::mutex error_mutex;
            std::string first_error;
            auto worker = [&] {
                for (;;) {
                    int i = next.fetch_add(1);
                    if (i >= req.n_samples) return;
                    try {
                        fill_from_completion(out, static_cast<size_t>(i), req, prompt, 1,
                                             req.seed ? std::optional<std::uint64_t>(*req.seed + i)
                                                      : std::nullopt);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (first_error.empty()) first_error = e.what();
                        out[static_cast<size_t>(i)].finish_reason = e.what();
                    }
                }
            };
            int width = std::clamp(cfg_.max_in_flight, 1, req.n_samples);
            std::vector<std::thread> threads;
            for (int i = 0; i < width; ++i) threads.emplace_back(worker);
            for (auto& t : threads) t.join();
            bool any_ok = std::any_of(out.begin(), out.end(),
                                      [](const GeneratorResponse& r) { return r.ok; });
            if (!any_ok && !first_error.empty()) throw GeneratorError(first_error);
        } else {
            fill_from_completion(out, 0, req, prompt, req.n_samples, req.seed);
        }
        return out;
    }

private:
    void split_url() {
        const std::string& url = cfg_.base_url;
        size_t scheme_end = url.find("://");
        if (scheme_end == std::string::npos) {
            throw ValidationError("endpoint base_url must include a scheme: " + url);
        }
        size_t path_start = url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            host_ = url;
            path_prefix_.clear();
        } else {
            host_ = url.substr(0, path_start);
            path_prefix_ = url.substr(path_start);
        }
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }

    void fill_from_completion(std::vector<GeneratorResponse>& out, size_t slot_base,
                              const GeneratorRequest& req, const Prompt& prompt, int n,
                              std::optional<std::uint64_t> seed) {
        json body;
        body["model"] = req.model_id;
        body["messages"] = json::array({json{{"role", "system"}, {"content", prompt.system_text}},
                                        json{{"role", "user"}, {"content", prompt.user_text}}});
        body["temperature"] = req.temperature;
        body["n"] = n;
        if (seed) body["seed"] = *seed;

        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        json parsed;
        std::string last_error;
        bool got = false;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    cfg_.retry_base_delay_ms << std::min(attempt - 1, 10)));
            }
            httplib::Client client(host_);
            client.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            client.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                                   "application/json");
            if (!res) {
                last_error = "transport error " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 401 || res->status == 403) {
                throw GeneratorError("endpoint rejected credentials (HTTP " +
                                     std::to_string(res->status) + "); set $" + cfg_.api_key_env);
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw GeneratorError("endpoint returned HTTP " + std::to_string(res->status) +
                                     ": " + res->body.substr(0, 200));
            }
            try {
                parsed = json::parse(res->body);
            } catch (const json::exception& e) {
                last_error = std::string("malformed response: ") + e.what();
                continue;
            }
            got = true;
            break;
        }
        if (!got) {
            throw GeneratorError("endpoint unavailable after " +
                                 std::to_string(cfg_.max_retries + 1) + " attempts (" +
                                 last_error + ")");
        }

        const json choices = parsed.value("choices", json::array());
        for (int i = 0; i < n; ++i) {
            if (slot_base + static_cast<size_t>(i) >= out.size()) break;
            GeneratorResponse& resp = out[slot_base + static_cast<size_t>(i)];
            if (i >= static_cast<int>(choices.size())) {
                resp.finish_reason = "missing";
                continue;
            }
            const json& choice = choices[static_cast<size_t>(i)];
            resp.raw_text = choice.contains("message")
                                ? choice.at("message").value("content", std::string())
                                : choice.value("text", std::string());
            resp.finish_reason = choice.value("finish_reason", std::string("stop"));
            if (n == 1 && parsed.contains("usage") &&
                parsed.at("usage").contains("completion_tokens")) {
                resp.token_length = parsed.at("usage").at("completion_tokens").get<long long>();
            } else {
                resp.token_length = whitespace_token_count(resp.raw_text);
            }
            try {
                resp.extracted = req.role == Role::Solver ? extract_code(resp.raw_text)
                                                          : extract_test_input(resp.raw_text);
                resp.ok = true;
            } catch (const GeneratorError& e) {
                resp.finish_reason = std::string("extraction_failed: ") + e.what();
            }
        }
    }

    EndpointConfig cfg_;
    std::optional<std::filesystem::path> template_dir_;
    std::string host_;
    std::string path_prefix_;
};

inline std::unique_ptr<GeneratorBackend> make_backend(const std::string& kind,
                                                      double offline_bug_rate,
                                                      const EndpointConfig& endpoint,
                                                      std::optional<std::filesystem::path> template_dir = {}) {
    if (kind == "offline") return std::make_unique<OfflineBackend>(offline_bug_rate);
    if (kind == "remote") return std::make_unique<RemoteBackend>(endpoint, std::move(template_dir));
    throw ValidationError("unknown backend: " + kind);
}

}  // namespace ace
