#include <doctest.h>

#include "support.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <random>
#include <thread>

using namespace codesign;
using namespace testsupport;

namespace {

class CountingOracle final : public QorOracle {
public:
    OracleResponse evaluate(const OracleRequest& req) override {
        ++calls;
        if (fail_next.exchange(false)) throw OracleError(OracleError::Kind::Status, "transient");
        return inner.evaluate(req);
    }
    std::string describe() const override { return "counting"; }

    std::atomic<int> calls{0};
    std::atomic<bool> fail_next{false};
    SurrogateOracle inner;
};

OracleRequest dnn_a_request() {
    const auto a = load_model("dnn_a.json");
    return {a.net, a.scheme, 20, "dac-sdc"};
}

OracleError eval_error(const std::string& stub_name, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    try {
        external_eval(dnn_a_request(), {{stub(stub_name).string()}, timeout});
    } catch (const OracleError& e) {
        return e;
    }
    FAIL("stub " << stub_name << " did not fail");
    return OracleError(OracleError::Kind::Launch, "unreachable");
}

std::vector<Bits> uniform_bits(const NetworkSpec& net, const QuantScheme& scheme) {
    (void)net;
    std::vector<Bits> b;
    for (const auto& g : scheme.groups) b.push_back(g.bits);
    return b;
}

} // namespace

TEST_SUITE("qor_oracle") {

TEST_CASE("surrogate is half of A at P = P0 with every other factor saturated") {
    const auto a = load_model("dnn_a.json");
    SurrogateConfig cfg;
    cfg.p0 = static_cast<double>(param_count(a.net).total);
    cfg.m0 = 1e-300;
    const double q = surrogate_qor(a.net, QuantScheme::uniform(32, 32), cfg);
    CHECK(q == doctest::Approx(cfg.a / 2).epsilon(1e-9));
}

TEST_CASE("an 8-bit feature map costs a factor 1 - 2^-8") {
    SurrogateConfig cfg, no_fm = cfg;
    no_fm.c_f = 0;
    const double with = surrogate_score(1e5, 1e8, {16}, 8, cfg);
    const double without = surrogate_score(1e5, 1e8, {16}, 8, no_fm);
    CHECK(with / without == doctest::Approx(0.99609375).epsilon(1e-15));
}

TEST_CASE("surrogate matches the closed form on real networks") {
    for (const char* name : {"dnn_a.json", "dnn_b.json", "dnn_c.json", "alexnet_mixed.json"}) {
        const auto m = load_model(name);
        const SurrogateConfig c;
        const double p = static_cast<double>(param_count(m.net).total);
        const double mc = static_cast<double>(macs(m.net).total);
        double expect = c.a * p / (p + c.p0) * (1 - std::exp(-mc / c.m0));
        for (const auto& g : m.scheme.groups) expect *= 1 - c.c_w * std::pow(2.0, -g.bits);
        expect *= 1 - c.c_f * std::pow(2.0, -m.scheme.fm_bits);
        CHECK(surrogate_qor(m.net, m.scheme) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("groups that map no layer contribute no factor") {
    // Two weight layers, both taken by the "first" and "last" groups.
    const auto net = build_dnn(dw_pw_bundle(16), 1, {Rational(1)}, {false}, {3, 16, 16});
    const QuantScheme tight{8, {{"first", {GroupSelector::First}, 8}, {"last", {GroupSelector::Last}, 8}}, 32};
    QuantScheme padded = tight;
    padded.groups.push_back({"rest", {GroupSelector::Rest}, 2});
    CHECK(surrogate_qor(net, padded) == surrogate_qor(net, tight));
}

TEST_CASE("property: feature-map precision matters more than weight precision") {
    std::mt19937_64 g(41);
    for (int trial = 0; trial < 100; ++trial) {
        const auto net = random_detector_net(g);
        for (Bits b1 = 2; b1 < 16; ++b1)
            for (Bits b2 = b1 + 1; b2 <= 16; ++b2)
                CHECK(surrogate_qor(net, QuantScheme::uniform(b2, b1)) <
                      surrogate_qor(net, QuantScheme::uniform(b1, b2)));
    }
}

TEST_CASE("property: surrogate is bounded and strictly increasing in each input") {
    std::mt19937_64 g(42);
    const SurrogateConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const auto net = trial % 2 ? random_detector_net(g) : random_small_net(g);
        const auto scheme = random_scheme(g, net);
        const double q = surrogate_qor(net, scheme);
        CHECK(q > 0);
        CHECK(q < cfg.a);
        CHECK(surrogate_qor(net, scheme) == q);

        const double p = static_cast<double>(param_count(net).total);
        const double m = static_cast<double>(macs(net).total);
        const auto bits = uniform_bits(net, scheme);
        const double base = surrogate_score(p, m, bits, scheme.fm_bits);
        CHECK(surrogate_score(p * 1.5, m, bits, scheme.fm_bits) > base);
        // The MAC factor saturates to 1.0 in double once M is a few dozen M0.
        if (m * 1.5 / cfg.m0 < 30) CHECK(surrogate_score(p, m * 1.5, bits, scheme.fm_bits) > base);
        CHECK(surrogate_score(p, m * 1.5, bits, scheme.fm_bits) >= base);
        CHECK(surrogate_score(p, m, bits, scheme.fm_bits + 1) > base);
        for (std::size_t i = 0; i < bits.size(); ++i) {
            auto raised = bits;
            ++raised[i];
            CHECK(surrogate_score(p, m, raised, scheme.fm_bits) > base);
        }
    }
}

TEST_CASE("surrogate oracle labels itself synthetic") {
    SurrogateOracle o;
    const auto r = o.evaluate(dnn_a_request());
    CHECK(r.ok);
    CHECK(r.metric == "synthetic");
    CHECK(o.describe().find("synthetic") != std::string::npos);
}

TEST_CASE("request and response lines are bit-exact") {
    const auto req = dnn_a_request();
    const std::string expect = "{\"v\":1,\"net\":" + to_json(req.net).dump() + ",\"scheme\":" +
                               to_json(req.scheme).dump() + ",\"epochs\":20,\"dataset\":\"dac-sdc\"}";
    CHECK(encode_request(req) == expect);
    CHECK(encode_request(req).find('\n') == std::string::npos);

    const OracleResponse resp{true, 0.593, "iou", ""};
    CHECK(encode_response(resp) == R"({"v":1,"status":"ok","metric":"iou","qor":0.593})");
    CHECK(decode_response(R"({"v":1,"status":"ok","metric":"iou","qor":0.593})") == resp);
}

TEST_CASE("malformed responses are protocol errors") {
    auto kind_of = [](const std::string& line) {
        try {
            decode_response(line);
        } catch (const OracleError& e) {
            return e.kind();
        }
        return OracleError::Kind::Launch;  // not thrown
    };
    for (const char* line : {R"({"v":1,"status":"ok",)", R"([1,2])", R"({"v":2,"status":"ok","metric":"iou","qor":0.5})",
                             R"({"v":1,"status":"maybe"})", R"({"v":1,"status":"ok","metric":"iou","qor":1.5})",
                             R"({"v":1,"status":"ok","qor":0.5})", R"({"v":1,"status":"ok","metric":"iou"})"})
        CHECK(kind_of(line) == OracleError::Kind::Protocol);

    try {
        decode_response(R"({"v":1,"status":"ok",)");
    } catch (const OracleError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    const auto err = decode_response(R"({"v":1,"status":"error","message":"no gpu"})");
    CHECK_FALSE(err.ok);
    CHECK(err.message == "no gpu");
    CHECK(decode_response(encode_response(err)) == err);
}

TEST_CASE("property: requests and responses survive a round trip") {
    std::mt19937_64 g(43);
    for (int trial = 0; trial < 100; ++trial) {
        OracleRequest req;
        req.net = trial % 2 ? random_detector_net(g) : random_small_net(g);
        req.scheme = random_scheme(g, req.net);
        req.epochs = std::uniform_int_distribution<int>(1, 200)(g);
        req.dataset = "set-" + std::to_string(g() % 1000) + (trial % 3 ? "" : " \"quoted\"\t");
        CHECK(decode_request(encode_request(req)) == req);

        OracleResponse resp{true, std::uniform_real_distribution<double>(0, 1)(g), "iou", ""};
        CHECK(decode_response(encode_response(resp)) == resp);
    }
}

TEST_CASE("fingerprints cover every request field") {
    const auto req = dnn_a_request();
    const auto fp = fingerprint(req);
    CHECK(fp.size() == 64);
    CHECK(fingerprint(req) == fp);
    auto other = req;
    other.epochs = 21;
    CHECK(fingerprint(other) != fp);
    other = req;
    other.dataset = "imagenet";
    CHECK(fingerprint(other) != fp);
    other = req;
    other.scheme.fm_bits = 9;
    CHECK(fingerprint(other) != fp);
    other = req;
    other.net.input.width = 320;
    CHECK(fingerprint(other) != fp);
}

TEST_CASE("stub endpoint returns its score unchanged") {
    const auto r = external_eval(dnn_a_request(), {{stub("ok_fixed.sh").string()}, std::chrono::seconds(5)});
    CHECK(r.qor == 0.593);
    CHECK(r.metric == "iou");

    // This stub checks the key order and answers 1 / (1 + epochs).
    auto req = dnn_a_request();
    req.epochs = 20;
    const auto inspected = external_eval(req, {{stub("inspect.py").string()}, std::chrono::seconds(10)});
    CHECK(inspected.qor == 1.0 / 21.0);
}

TEST_CASE("broken endpoints give structured errors") {
    const auto line = encode_request(dnn_a_request());

    auto e = eval_error("malformed.sh");
    CHECK(e.kind() == OracleError::Kind::Protocol);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
    CHECK(e.request() == line);

    e = eval_error("crash.sh");
    CHECK(e.kind() == OracleError::Kind::NonZeroExit);
    CHECK(e.diagnostics().find("model crashed") != std::string::npos);

    CHECK(eval_error("status_error.sh").kind() == OracleError::Kind::Status);
    CHECK(std::string(eval_error("status_error.sh").what()).find("dataset missing") != std::string::npos);
    CHECK(eval_error("silent.sh").kind() == OracleError::Kind::Protocol);
    CHECK(eval_error("out_of_range.sh").kind() == OracleError::Kind::Protocol);
    CHECK(eval_error("does-not-exist.sh").kind() == OracleError::Kind::Launch);
}

TEST_CASE("a hung endpoint is killed at the timeout") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = eval_error("hang.sh", std::chrono::milliseconds(300));
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(e.kind() == OracleError::Kind::Timeout);
    CHECK(elapsed < std::chrono::seconds(3));
    CHECK(elapsed >= std::chrono::milliseconds(300));
}

TEST_CASE("make_oracle parses its spec") {
    CHECK(make_oracle("surrogate")->describe() == "surrogate (synthetic)");
    CHECK(make_oracle("exec:/bin/oracle --gpu 0")->describe() == "exec:/bin/oracle --gpu 0");
    CHECK_THROWS_AS(make_oracle("exec:"), ConfigError);
    CHECK_THROWS_AS(make_oracle("remote"), ConfigError);
}

TEST_CASE("cache hits skip the inner oracle") {
    auto inner = std::make_shared<CountingOracle>();
    CachedOracle cache(inner);
    const auto req = dnn_a_request();
    const auto first = cache.evaluate(req);
    CHECK(cache.evaluate(req) == first);
    CHECK(inner->calls == 1);
    auto longer = req;
    longer.epochs = 40;
    cache.evaluate(longer);
    CHECK(inner->calls == 2);
    CHECK(cache.size() == 2);
    CHECK(cache.inner_calls() == 2);
}

TEST_CASE("inner errors are not cached") {
    auto inner = std::make_shared<CountingOracle>();
    CachedOracle cache(inner);
    inner->fail_next = true;
    CHECK_THROWS_AS(cache.evaluate(dnn_a_request()), OracleError);
    CHECK(cache.size() == 0);
    CHECK(cache.evaluate(dnn_a_request()).ok);
    CHECK(inner->calls == 2);
}

TEST_CASE("a persisted cache reloads with the same hits") {
    const auto dir = scratch_dir("cache_reload");
    const auto store = dir / "cache.jsonl";
    auto req = dnn_a_request();
    auto other = req;
    other.scheme.fm_bits = 16;
    OracleResponse r1, r2;
    {
        CachedOracle cache(std::make_shared<CountingOracle>(), store);
        r1 = cache.evaluate(req);
        r2 = cache.evaluate(other);
    }
    auto inner = std::make_shared<CountingOracle>();
    CachedOracle reloaded(inner, store);
    CHECK(reloaded.size() == 2);
    CHECK(reloaded.evaluate(req) == r1);
    CHECK(reloaded.evaluate(other) == r2);
    CHECK(inner->calls == 0);

    // A torn final record from an interrupted writer is ignored.
    {
        std::ofstream out(store, std::ios::app);
        out << R"({"fingerprint":"abc","resp)";
    }
    CHECK(CachedOracle(inner, store).size() == 2);

    // Damage in the middle is reported.
    {
        std::ofstream out(store, std::ios::app);
        out << "\n" << R"({"fingerprint":"x","response":{"v":1,"status":"ok","metric":"iou","qor":0.1}})" << "\n";
    }
    CHECK_THROWS_AS(CachedOracle(inner, store), ConfigError);
}

TEST_CASE("concurrent lookups agree") {
    auto inner = std::make_shared<CountingOracle>();
    CachedOracle cache(inner);
    std::vector<OracleRequest> reqs;
    for (int e = 1; e <= 5; ++e) {
        auto r = dnn_a_request();
        r.epochs = e;
        reqs.push_back(r);
    }
    SurrogateOracle direct;
    std::atomic<int> mismatches{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < 8; ++t)
        pool.emplace_back([&, t] {
            for (int i = 0; i < 40; ++i) {
                const auto& r = reqs[static_cast<std::size_t>((i + t) % 5)];
                if (!(cache.evaluate(r) == direct.evaluate(r))) ++mismatches;
            }
        });
    for (auto& th : pool) th.join();
    CHECK(mismatches == 0);
    CHECK(cache.size() == 5);
    CHECK(inner->calls >= 5);
}

}
