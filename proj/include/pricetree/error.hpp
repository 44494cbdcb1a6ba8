#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace pricetree {

enum class ErrorKind {
    InvalidArity,
    InvalidChild,
    InvalidRate,
    Validation,
    NoGap,
    Degenerate,
    NotInterior,
    Boundary,
    Integration,
    Config,
    Parse,
    Mode,
    Range,
    Io,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Structural problem with a tree spec; names the node responsible.
class ValidationError : public Error {
public:
    ValidationError(std::string node, const std::string& message)
        : Error(ErrorKind::Validation, "node '" + node + "': " + message),
          node_(std::move(node)) {}

    const std::string& node() const noexcept { return node_; }

private:
    std::string node_;
};

// Problem in a text input, anchored to a 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace pricetree
