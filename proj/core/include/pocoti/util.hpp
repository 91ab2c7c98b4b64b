#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pocoti {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented format or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operation not legal in the current state (lifecycle, locks, stage order).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Persisted data does not match what was recorded about it.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Hashing and encoding.
std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view data);

/// sha256 over fields joined with a unit separator, truncated to `hex_chars`.
std::string content_hash(const std::vector<std::string_view>& fields, std::size_t hex_chars = 16);

// Text helpers.
std::string trim(std::string_view s);
/// Case-fold (ASCII) and collapse whitespace runs to one space, trimmed.
std::string normalize_text(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// Files.
std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);
/// Appends `data` with a single write and fsync.
void append_file_durable(const std::filesystem::path& path, std::string_view data);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions from fn
/// are rethrown after all workers join (first one wins).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// UTC timestamp, ISO-8601 with milliseconds.
std::string utc_timestamp();

}  // namespace pocoti
