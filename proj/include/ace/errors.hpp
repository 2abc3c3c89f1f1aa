#pragma once

#include <stdexcept>
#include <string>

namespace ace {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (corpus, matrix, dataset, config).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally valid input that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// The harness itself failed to run a program (spawn/exec/pipe failure).
/// Distinct from any failure of the program under test.
class SandboxError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure, with the offending path in the message.
class IoError : public Error {
public:
    using Error::Error;
};

/// Argument outside an operation's stated domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Objective evaluation over an empty sample batch.
class EmptyBatchError : public Error {
public:
    using Error::Error;
};

/// Generator backend failure (endpoint, auth, extraction, missing grammar).
class GeneratorError : public Error {
public:
    using Error::Error;
};

/// Trainer hook command failed or produced no usable model id.
class HookError : public Error {
public:
    using Error::Error;
};

}  // namespace ace
