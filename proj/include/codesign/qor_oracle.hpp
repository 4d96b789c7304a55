#pragma once

// QoR evaluation: a synthetic surrogate, an external-process endpoint speaking
// line-delimited JSON, and a fingerprint cache in front of either.

#include "codesign/errors.hpp"
#include "codesign/json_util.hpp"
#include "codesign/network_ir.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace codesign {

struct OracleRequest {
    NetworkSpec net;
    QuantScheme scheme;
    int epochs = 20;
    std::string dataset = "dac-sdc";

    friend bool operator==(const OracleRequest&, const OracleRequest&) = default;
};

struct OracleResponse {
    bool ok = true;
    double qor = 0;
    std::string metric;
    std::string message;  // set when !ok

    friend bool operator==(const OracleResponse&, const OracleResponse&) = default;
};

class OracleError : public Error {
public:
    enum class Kind { Timeout, Protocol, NonZeroExit, Launch, Status };

    OracleError(Kind kind, const std::string& message, std::string request = {}, std::string diagnostics = {})
        : Error(message), kind_(kind), request_(std::move(request)), diagnostics_(std::move(diagnostics)) {}

    Kind kind() const noexcept { return kind_; }
    /// The request line that was being served.
    const std::string& request() const noexcept { return request_; }
    /// Captured stderr of the endpoint, if any.
    const std::string& diagnostics() const noexcept { return diagnostics_; }

private:
    Kind kind_;
    std::string request_;
    std::string diagnostics_;
};

const char* to_string(OracleError::Kind kind) noexcept;

// --- protocol v1 ------------------------------------------------------------

std::string encode_request(const OracleRequest& req);
/// Throws SchemaError on a bad line.
OracleRequest decode_request(const std::string& line);
std::string encode_response(const OracleResponse& resp);
/// Throws OracleError(Protocol); parse failures name the byte offset.
OracleResponse decode_response(const std::string& line);

/// sha256 over the canonical (sorted-key) serialization of
/// net, scheme, epochs and dataset.
std::string fingerprint(const OracleRequest& req);

// --- oracles ----------------------------------------------------------------

class QorOracle {
public:
    virtual ~QorOracle() = default;
    /// Returns an ok response or throws OracleError.
    virtual OracleResponse evaluate(const OracleRequest& req) = 0;
    /// Label used in reports.
    virtual std::string describe() const = 0;
};

struct SurrogateConfig {
    double a = 0.8;
    double p0 = 1e5;
    double m0 = 1e8;
    double c_w = 0.5;
    double c_f = 1.0;
};

/// A * P/(P+P0) * (1 - exp(-M/M0)) * prod_g (1 - c_w 2^-wb_g) * (1 - c_f 2^-fb).
/// Groups that map no layer of `net` contribute no factor.
double surrogate_qor(const NetworkSpec& net, const QuantScheme& scheme, const SurrogateConfig& cfg = {});
/// The same formula on raw counts; one entry of `group_bits` per used group.
double surrogate_score(double params, double macs, const std::vector<Bits>& group_bits, Bits fm_bits,
                       const SurrogateConfig& cfg = {});

/// Synthetic: not a measure of accuracy. Reports carry metric "synthetic".
class SurrogateOracle final : public QorOracle {
public:
    explicit SurrogateOracle(SurrogateConfig cfg = {}) : cfg_(cfg) {}
    OracleResponse evaluate(const OracleRequest& req) override;
    std::string describe() const override { return "surrogate (synthetic)"; }

private:
    SurrogateConfig cfg_;
};

struct ExecEndpoint {
    std::vector<std::string> argv;
    std::chrono::milliseconds timeout{600'000};
};

/// One child process per call.
OracleResponse external_eval(const OracleRequest& req, const ExecEndpoint& endpoint);

class ExecOracle final : public QorOracle {
public:
    explicit ExecOracle(ExecEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
    OracleResponse evaluate(const OracleRequest& req) override { return external_eval(req, endpoint_); }
    std::string describe() const override;

private:
    ExecEndpoint endpoint_;
};

/// Memoizes by fingerprint; optionally persisted in an append-only JSON-lines
/// store that is loaded on construction. Safe for concurrent use.
class CachedOracle final : public QorOracle {
public:
    explicit CachedOracle(std::shared_ptr<QorOracle> inner, std::filesystem::path store = {});

    OracleResponse evaluate(const OracleRequest& req) override;
    std::string describe() const override { return inner_->describe(); }

    std::size_t inner_calls() const;
    std::size_t size() const;

private:
    std::shared_ptr<QorOracle> inner_;
    std::filesystem::path store_;
    mutable std::mutex mu_;
    std::map<std::string, OracleResponse> entries_;
    std::size_t inner_calls_ = 0;
};

std::shared_ptr<QorOracle> cached(std::shared_ptr<QorOracle> oracle, std::filesystem::path store = {});

/// "surrogate" or "exec:<command line>" (split on whitespace).
std::shared_ptr<QorOracle> make_oracle(const std::string& spec,
                                       std::chrono::milliseconds timeout = std::chrono::milliseconds{600'000});

} // namespace codesign
