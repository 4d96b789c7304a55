#pragma once

// Small helpers for decoding JSON documents with JSON-pointer diagnostics.
// Output documents use ordered_json so files keep a stable, readable key order.

#include "codesign/errors.hpp"
#include "codesign/rational.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace codesign {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

/// A JSON value together with its pointer inside the document.
class JsonNode {
public:
    JsonNode(const json& value, std::string pointer = "") : value_(&value), ptr_(std::move(pointer)) {}

    const json& value() const noexcept { return *value_; }
    const std::string& pointer() const noexcept { return ptr_; }

    bool has(std::string_view key) const;
    JsonNode at(std::string_view key) const;   // required member
    JsonNode at(std::size_t index) const;      // array element
    std::size_t size() const;                  // array length; throws if not array

    std::int64_t as_int(std::int64_t lo = INT64_MIN, std::int64_t hi = INT64_MAX) const;
    std::uint64_t as_u64() const;
    double as_double() const;
    bool as_bool() const;
    std::string as_string() const;
    /// Integer, decimal, or "p/q" string.
    Rational as_rational() const;

    bool is_array() const noexcept { return value_->is_array(); }
    bool is_object() const noexcept { return value_->is_object(); }
    bool is_string() const noexcept { return value_->is_string(); }
    bool is_null() const noexcept { return value_->is_null(); }

    [[noreturn]] void fail(const std::string& message) const;

    template <typename T, typename Fn>
    T get_or(std::string_view key, T fallback, Fn&& read) const {
        return has(key) ? read(at(key)) : fallback;
    }

private:
    const json* value_;
    std::string ptr_;
};

/// Reads and parses a file. Parse failures raise SchemaError carrying
/// "line L, column C" of the offending byte.
json load_json_file(const std::filesystem::path& path);
json parse_json_text(const std::string& text, const std::string& origin);

/// JSON value for a rational: a plain integer when whole, otherwise "p/q".
ojson rational_to_json(const Rational& r);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

} // namespace codesign
