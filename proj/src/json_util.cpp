#include "codesign/json_util.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace codesign {

bool JsonNode::has(std::string_view key) const {
    return value_->is_object() && value_->contains(key) && !(*value_)[std::string(key)].is_null();
}

JsonNode JsonNode::at(std::string_view key) const {
    if (!value_->is_object()) fail("expected an object");
    auto it = value_->find(key);
    if (it == value_->end()) JsonNode(*value_, ptr_ + "/" + std::string(key)).fail("missing required field");
    return {*it, ptr_ + "/" + std::string(key)};
}

JsonNode JsonNode::at(std::size_t index) const {
    if (!value_->is_array()) fail("expected an array");
    if (index >= value_->size()) fail("index " + std::to_string(index) + " out of range");
    return {(*value_)[index], ptr_ + "/" + std::to_string(index)};
}

std::size_t JsonNode::size() const {
    if (!value_->is_array()) fail("expected an array");
    return value_->size();
}

std::int64_t JsonNode::as_int(std::int64_t lo, std::int64_t hi) const {
    std::int64_t v = 0;
    if (value_->is_number_integer()) {
        v = value_->get<std::int64_t>();
    } else if (value_->is_number_float()) {
        const double d = value_->get<double>();
        if (std::floor(d) != d || std::abs(d) > 9.0e15) fail("expected an integer");
        v = static_cast<std::int64_t>(d);
    } else {
        fail("expected an integer");
    }
    if (v < lo || v > hi)
        fail("value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
             std::to_string(hi) + "]");
    return v;
}

std::uint64_t JsonNode::as_u64() const {
    if (value_->is_number_unsigned()) return value_->get<std::uint64_t>();
    return static_cast<std::uint64_t>(as_int(0));
}

double JsonNode::as_double() const {
    if (!value_->is_number()) fail("expected a number");
    return value_->get<double>();
}

bool JsonNode::as_bool() const {
    if (!value_->is_boolean()) fail("expected a boolean");
    return value_->get<bool>();
}

std::string JsonNode::as_string() const {
    if (!value_->is_string()) fail("expected a string");
    return value_->get<std::string>();
}

Rational JsonNode::as_rational() const {
    try {
        if (value_->is_number_integer()) return Rational(value_->get<std::int64_t>());
        if (value_->is_number_float()) return Rational::from_double(value_->get<double>());
        if (value_->is_string()) return Rational::parse(value_->get<std::string>());
    } catch (const std::exception& e) {
        fail(e.what());
    }
    fail("expected a number or a \"p/q\" string");
}

void JsonNode::fail(const std::string& message) const { throw SchemaError(ptr_.empty() ? "/" : ptr_, message); }

Rational Rational::parse(const std::string& text) {
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
        std::size_t a = 0, b = 0;
        const auto num = std::stoll(text.substr(0, slash), &a);
        const auto den = std::stoll(text.substr(slash + 1), &b);
        if (a != slash || b != text.size() - slash - 1)
            throw std::invalid_argument("malformed rational '" + text + "'");
        return {num, den};
    }
    std::size_t used = 0;
    const double d = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("malformed rational '" + text + "'");
    return from_double(d);
}

Rational Rational::from_double(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("non-finite rational");
    constexpr std::int64_t kDen = 1000000;
    const auto num = static_cast<std::int64_t>(std::llround(value * static_cast<double>(kDen)));
    return {num, kDen};
}

ojson rational_to_json(const Rational& r) {
    if (r.den() == 1) return ojson(r.num());
    return ojson(r.to_string());
}

namespace {

void line_column(const std::string& text, std::size_t byte, std::size_t& line, std::size_t& col) {
    line = 1;
    col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
}

} // namespace

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 0, col = 0;
        line_column(text, e.byte, line, col);
        std::ostringstream os;
        os << origin << ": line " << line << ", column " << col << ": " << e.what();
        throw SchemaError("", os.str());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json load_json_file(const std::filesystem::path& path) {
    return parse_json_text(read_file(path), path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out.flush()) throw ConfigError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xf];
    }
    return out;
}

} // namespace codesign
