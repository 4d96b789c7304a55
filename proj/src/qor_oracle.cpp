#include "codesign/qor_oracle.hpp"

#include "codesign/network_json.hpp"
#include "codesign/subprocess.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace codesign {

const char* to_string(OracleError::Kind kind) noexcept {
    switch (kind) {
    case OracleError::Kind::Timeout: return "timeout";
    case OracleError::Kind::Protocol: return "protocol";
    case OracleError::Kind::NonZeroExit: return "nonzero-exit";
    case OracleError::Kind::Launch: return "launch";
    case OracleError::Kind::Status: return "status";
    }
    return "?";
}

// --- protocol ---------------------------------------------------------------

std::string encode_request(const OracleRequest& req) {
    ojson j;
    j["v"] = 1;
    j["net"] = to_json(req.net);
    j["scheme"] = to_json(req.scheme);
    j["epochs"] = req.epochs;
    j["dataset"] = req.dataset;
    return j.dump();
}

OracleRequest decode_request(const std::string& line) {
    const json doc = parse_json_text(line, "request");
    const JsonNode root(doc);
    if (root.at("v").as_int() != 1) root.at("v").fail("unsupported protocol version");
    OracleRequest req;
    req.net = network_from_json(root.at("net"));
    req.scheme = scheme_from_json(root.at("scheme"));
    req.epochs = static_cast<int>(root.at("epochs").as_int(1, 1 << 20));
    req.dataset = root.at("dataset").as_string();
    return req;
}

std::string encode_response(const OracleResponse& resp) {
    ojson j;
    j["v"] = 1;
    if (resp.ok) {
        j["status"] = "ok";
        j["metric"] = resp.metric;
        j["qor"] = resp.qor;
    } else {
        j["status"] = "error";
        j["message"] = resp.message;
    }
    return j.dump();
}

OracleResponse decode_response(const std::string& line) {
    auto bad = [&](const std::string& why) -> OracleError {
        return OracleError(OracleError::Kind::Protocol, "malformed oracle response: " + why);
    };
    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::parse_error& e) {
        throw bad("parse error at byte " + std::to_string(e.byte) + " of \"" + line.substr(0, 200) + "\"");
    }
    if (!doc.is_object()) throw bad("not a JSON object");
    if (!doc.contains("v") || !doc["v"].is_number_integer() || doc["v"].get<int>() != 1)
        throw bad("missing or unsupported \"v\"");
    if (!doc.contains("status") || !doc["status"].is_string()) throw bad("missing \"status\"");
    const auto status = doc["status"].get<std::string>();
    OracleResponse r;
    if (status == "ok") {
        if (!doc.contains("qor") || !doc["qor"].is_number()) throw bad("missing numeric \"qor\"");
        if (!doc.contains("metric") || !doc["metric"].is_string()) throw bad("missing \"metric\"");
        r.qor = doc["qor"].get<double>();
        if (!(r.qor >= 0.0 && r.qor <= 1.0)) throw bad("qor " + doc["qor"].dump() + " outside [0, 1]");
        r.metric = doc["metric"].get<std::string>();
    } else if (status == "error") {
        r.ok = false;
        if (doc.contains("message") && doc["message"].is_string()) r.message = doc["message"].get<std::string>();
    } else {
        throw bad("unknown status \"" + status + "\"");
    }
    return r;
}

std::string fingerprint(const OracleRequest& req) {
    // Round-trip through the unordered type so keys are sorted.
    json canon;
    canon["net"] = json::parse(to_json(req.net).dump());
    canon["scheme"] = json::parse(to_json(req.scheme).dump());
    canon["epochs"] = req.epochs;
    canon["dataset"] = req.dataset;
    return sha256_hex(canon.dump());
}

// --- surrogate --------------------------------------------------------------

double surrogate_score(double params, double macs, const std::vector<Bits>& group_bits, Bits fm_bits,
                       const SurrogateConfig& cfg) {
    double score = cfg.a * params / (params + cfg.p0) * (1.0 - std::exp(-macs / cfg.m0));
    for (Bits b : group_bits) score *= 1.0 - cfg.c_w * std::exp2(-b);
    return score * (1.0 - cfg.c_f * std::exp2(-fm_bits));
}

double surrogate_qor(const NetworkSpec& net, const QuantScheme& scheme, const SurrogateConfig& cfg) {
    const auto chain = infer_shapes(net);
    const auto group_of = resolve_groups(chain, scheme);
    std::vector<bool> used(scheme.groups.size(), false);
    for (int g : group_of)
        if (g >= 0) used[static_cast<std::size_t>(g)] = true;
    std::vector<Bits> bits;
    for (std::size_t g = 0; g < scheme.groups.size(); ++g)
        if (used[g]) bits.push_back(scheme.groups[g].bits);
    return surrogate_score(static_cast<double>(param_count(net).total), static_cast<double>(macs(net).total), bits,
                           scheme.fm_bits, cfg);
}

OracleResponse SurrogateOracle::evaluate(const OracleRequest& req) {
    OracleResponse r;
    r.metric = "synthetic";
    r.qor = surrogate_qor(req.net, req.scheme, cfg_);
    return r;
}

// --- external process -------------------------------------------------------

OracleResponse external_eval(const OracleRequest& req, const ExecEndpoint& endpoint) {
    const std::string line = encode_request(req);
    const auto ex = exchange_line(endpoint.argv, line + "\n", endpoint.timeout);
    const std::string cmd = endpoint.argv.empty() ? std::string("<empty>") : endpoint.argv.front();
    if (!ex.launched)
        throw OracleError(OracleError::Kind::Launch,
                          "cannot launch oracle '" + cmd + "': " + std::strerror(ex.launch_errno), line);
    if (ex.timed_out)
        throw OracleError(OracleError::Kind::Timeout,
                          "oracle '" + cmd + "' timed out after " + std::to_string(endpoint.timeout.count()) + " ms",
                          line, ex.stderr_text);
    if (ex.exit_code != 0) {
        const std::string how = ex.term_signal ? "killed by signal " + std::to_string(ex.term_signal)
                                               : "exited with status " + std::to_string(ex.exit_code);
        throw OracleError(OracleError::Kind::NonZeroExit, "oracle '" + cmd + "' " + how, line, ex.stderr_text);
    }
    if (!ex.got_line)
        throw OracleError(OracleError::Kind::Protocol, "oracle '" + cmd + "' produced no response line", line,
                          ex.stderr_text);
    OracleResponse r;
    try {
        r = decode_response(ex.line);
    } catch (const OracleError& e) {
        throw OracleError(OracleError::Kind::Protocol, e.what(), line, ex.stderr_text);
    }
    if (!r.ok)
        throw OracleError(OracleError::Kind::Status, "oracle '" + cmd + "' reported error: " + r.message, line,
                          ex.stderr_text);
    return r;
}

std::string ExecOracle::describe() const {
    std::string s = "exec:";
    for (std::size_t i = 0; i < endpoint_.argv.size(); ++i) s += (i ? " " : "") + endpoint_.argv[i];
    return s;
}

// --- cache ------------------------------------------------------------------

CachedOracle::CachedOracle(std::shared_ptr<QorOracle> inner, std::filesystem::path store)
    : inner_(std::move(inner)), store_(std::move(store)) {
    if (!inner_) throw ConfigError("cached oracle needs an inner oracle");
    if (store_.empty() || !std::filesystem::exists(store_)) return;
    std::ifstream in(store_);
    std::string text;
    std::size_t lineno = 0;
    while (std::getline(in, text)) {
        ++lineno;
        if (text.empty()) continue;
        json j;
        try {
            j = json::parse(text);
            auto key = j.at("fingerprint").get<std::string>();
            entries_[std::move(key)] = decode_response(j.at("response").dump());
        } catch (const std::exception& e) {
            // A torn final line from an interrupted writer is skipped.
            if (in.peek() == EOF) break;
            throw ConfigError("cache store " + store_.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

OracleResponse CachedOracle::evaluate(const OracleRequest& req) {
    const auto key = fingerprint(req);
    {
        std::lock_guard lock(mu_);
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        ++inner_calls_;
    }
    OracleResponse r = inner_->evaluate(req);  // errors propagate, nothing stored
    std::lock_guard lock(mu_);
    entries_[key] = r;
    if (!store_.empty()) {
        ojson rec;
        rec["fingerprint"] = key;
        rec["response"] = ojson::parse(encode_response(r));
        std::ofstream out(store_, std::ios::app);
        out << rec.dump() << '\n';
        if (!out) throw ConfigError("cannot append to cache store " + store_.string());
    }
    return r;
}

std::size_t CachedOracle::inner_calls() const {
    std::lock_guard lock(mu_);
    return inner_calls_;
}

std::size_t CachedOracle::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::shared_ptr<QorOracle> cached(std::shared_ptr<QorOracle> oracle, std::filesystem::path store) {
    return std::make_shared<CachedOracle>(std::move(oracle), std::move(store));
}

std::shared_ptr<QorOracle> make_oracle(const std::string& spec, std::chrono::milliseconds timeout) {
    if (spec == "surrogate") return std::make_shared<SurrogateOracle>();
    if (spec.rfind("exec:", 0) == 0) {
        ExecEndpoint ep;
        ep.timeout = timeout;
        std::istringstream words(spec.substr(5));
        for (std::string w; words >> w;) ep.argv.push_back(w);
        if (ep.argv.empty()) throw ConfigError("--oracle exec: needs a command");
        return std::make_shared<ExecOracle>(std::move(ep));
    }
    throw ConfigError("unknown oracle '" + spec + "' (expected surrogate or exec:<path>)");
}

} // namespace codesign
