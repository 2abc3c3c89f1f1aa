#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ace/core.hpp"
#include "ace/errors.hpp"
#include "ace/util.hpp"

namespace ace {

inline constexpr std::string_view kPromptTemplateVersion = "1";

// Fixed role templates. Role switching is purely a prompt swap; only
// {problem} (and {example_intro} for the adversary) are instantiated.

inline constexpr std::string_view kSolverTemplate =
    "<|im_start|>system\n"
    "You are a helpful assistant that helps users solve programming problems.\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "You need to think first and then write a Python script.\n"
    "Your program should use input() to read from standard input and print() to write to "
    "standard output.\n"
    "The output must be computed based on the given input, rather than reproducing any provided "
    "examples.\n"
    "\n"
    "This is the problem:\n"
    "{problem}\n"
    "<|im_end|>\n";

inline constexpr std::string_view kAdversaryTemplate =
    "<|im_start|>system\n"
    "You are a helpful assistant that helps users generate challenging test inputs for coding "
    "tasks.\n"
    "<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "Given a coding task, your goal is to generate a challenging test INPUT that can expose bugs "
    "and weaknesses in code implementations.\n"
    "This is the problem:\n"
    "{problem}\n"
    "\n"
    "{example_intro}Your test input should be ADVERSARIAL and CHALLENGING. A good test input "
    "should:\n"
    "- Be completely accurate and conform to the problem's input format requirements\n"
    "- Have strong discriminative power to distinguish correct code from buggy code\n"
    "- Target common coding mistakes such as:\n"
    "  - Edge cases (e.g., empty input, single element, extreme values)\n"
    "  - Boundary conditions (e.g., off-by-one errors, array bounds)\n"
    "  - Special cases (e.g., zeros, negatives, duplicates, overflow)\n"
    "  - Corner cases (e.g., identical elements, reverse order, unsorted data)\n"
    "  - stress tests (Tests with large input sizes)\n"
    "\n"
    "Before providing a test input, you must think carefully and reason step by step:\n"
    "- What common mistakes might programmers make for this problem?\n"
    "- What edge cases or corner cases are likely to be overlooked?\n"
    "- How can the input expose these mistakes?\n"
    "\n"
    "Finally, after completing the above reasoning steps, output the result in the following "
    "format:\n"
    "\n"
    "Test Input:\n"
    "```\n"
    "<test input here>\n"
    "```\n"
    "\n"
    "Explanation:\n"
    "<brief explanation here>.\n"
    "<|im_end|>\n";

enum class Role { Solver, Adversary };

inline std::string to_string(Role r) { return r == Role::Solver ? "solver" : "adversary"; }

/// A rendered prompt: the full chat-formatted text (what goes into emitted
/// datasets) plus the system/user split the wire protocol needs.
struct Prompt {
    std::string full_text;
    std::string system_text;
    std::string user_text;
};

namespace detail {

/// Replaces {name} tokens, scanning the template once left to right so that
/// substituted content is never re-scanned. A {name} token with no provided
/// value is an error; braces that do not form a [a-z_]+ token pass through.
inline std::string substitute_placeholders(const std::string& text,
                                           const std::vector<std::pair<std::string, std::string>>& subs) {
    std::string out;
    out.reserve(text.size());
    size_t pos = 0;
    while (pos < text.size()) {
        size_t open = text.find('{', pos);
        if (open == std::string::npos) {
            out.append(text, pos, std::string::npos);
            break;
        }
        out.append(text, pos, open - pos);
        size_t close = open + 1;
        while (close < text.size() && (std::islower(static_cast<unsigned char>(text[close])) ||
                                       text[close] == '_')) {
            ++close;
        }
        if (close < text.size() && text[close] == '}' && close > open + 1) {
            std::string name = text.substr(open + 1, close - open - 1);
            auto it = std::find_if(subs.begin(), subs.end(),
                                   [&](const auto& kv) { return kv.first == name; });
            if (it == subs.end()) {
                throw GeneratorError("unfilled template placeholder: {" + name + "}");
            }
            out += it->second;
            pos = close + 1;
        } else {
            out += '{';
            pos = open + 1;
        }
    }
    return out;
}

inline Prompt split_chat_text(const std::string& full) {
    auto section = [&](const std::string& role) -> std::string {
        std::string open = "<|im_start|>" + role + "\n";
        size_t start = full.find(open);
        if (start == std::string::npos) return {};
        start += open.size();
        size_t end = full.find("<|im_end|>", start);
        if (end == std::string::npos) return full.substr(start);
        std::string body = full.substr(start, end - start);
        if (!body.empty() && body.back() == '\n') body.pop_back();
        return body;
    };
    return {full, section("system"), section("user")};
}

}  // namespace detail

/// Deterministic instantiation of the fixed role template for a problem.
/// The adversary's {example_intro} is the problem's first GT test input
/// rendered as an example when one exists, else empty.
inline Prompt render_prompt(Role role, const Problem& problem,
                            const std::optional<std::filesystem::path>& template_dir = {}) {
    std::string tmpl;
    if (template_dir) {
        auto file = *template_dir / (to_string(role) + ".txt");
        tmpl = read_file(file);
    } else {
        tmpl = std::string(role == Role::Solver ? kSolverTemplate : kAdversaryTemplate);
    }
    std::vector<std::pair<std::string, std::string>> subs;
    subs.emplace_back("problem", problem.statement);
    if (role == Role::Adversary) {
        std::string intro;
        if (!problem.gt_tests.empty() && is_valid_utf8(problem.gt_tests.front().input)) {
            intro = "Here is an example test input for this problem:\n```\n" +
                    problem.gt_tests.front().input + "\n```\n\n";
        }
        subs.emplace_back("example_intro", intro);
    }
    return detail::split_chat_text(detail::substitute_placeholders(std::move(tmpl), subs));
}

}  // namespace ace
