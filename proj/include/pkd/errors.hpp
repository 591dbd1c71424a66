#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace pkd {

// Index outside a tensor dimension.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Precondition violated by a caller-supplied value or shape.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Student/teacher pyramids cannot be paired; carries the offending level.
class AlignmentError : public std::runtime_error {
public:
    AlignmentError(std::size_t level, const std::string& what)
        : std::runtime_error("level " + std::to_string(level) + ": " + what), level_(level) {}

    std::size_t level() const noexcept { return level_; }

private:
    std::size_t level_;
};

// A masked loss whose mask has zero total weight on some level.
class DegenerateMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation on an object whose state no longer matches (e.g. stale forward cache).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed serialized input. offset is the byte (or line) position of the problem.
class FormatError : public std::runtime_error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Filesystem failure (open, write, rename).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment configuration; key names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key.empty() ? what : "config key '" + key + "': " + what),
          key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace pkd
