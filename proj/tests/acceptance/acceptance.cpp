// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "../unit/support.hpp"

#include "codesign/accel_sim.hpp"
#include "codesign/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace codesign;
using namespace testsupport;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_ms;  // 0: no time limit
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome dsp_step() {
    const Device dev;
    const auto w15 = plan_tiles(dw_pw_bundle(48), {3, 160, 360}, QuantScheme::uniform(15, 6), dev);
    const auto w14 = plan_tiles(dw_pw_bundle(48), {3, 160, 360}, QuantScheme::uniform(14, 6), dev);
    const bool ok = w15.multipliers() == 64 && w14.multipliers() == 64 && w15.dsp_used() == 128 &&
                    w14.dsp_used() == 64;
    return {ok, "W15/FM6 " + std::to_string(w15.dsp_used()) + " DSPs, W14/FM6 " + std::to_string(w14.dsp_used()) +
                    " DSPs, " + std::to_string(w15.multipliers()) + " multipliers"};
}

Outcome bram_halving() {
    const auto sweep = resize_sweep_from_json(JsonNode(load_json_file(fixture("fig2a.json"))));
    const auto points = run_resize_sweep(sweep);
    bool ok = !points.empty();
    std::string detail;
    for (Bits fb : sweep.fm_bits) {
        std::vector<ResizePoint> row;
        for (const auto& p : points)
            if (p.fm_bits == fb) row.push_back(p);
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.resize < b.resize; });
        Count at_089 = -1, at_100 = -1;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i && row[i].bram18 < row[i - 1].bram18) ok = false;
            if (row[i].resize == Rational(89, 100)) at_089 = row[i].bram18;
            if (row[i].resize == Rational(1)) at_100 = row[i].bram18;
        }
        ok = ok && at_089 > 0 && at_100 > 0 && 2 * at_089 <= at_100;
        detail += (detail.empty() ? "" : "; ") + std::string("FM") + std::to_string(fb) + " " +
                  std::to_string(at_089) + " vs " + std::to_string(at_100) + " BRAM18";
    }
    return {ok, detail + " at resize 0.89 vs 1.00"};
}

Outcome alexnet_size() {
    const auto net = load_model("alexnet.json").net;
    const double bytes = static_cast<double>(param_bytes_at(net, 32));
    const double target = 237.9 * 1024 * 1024;
    const double rel = std::abs(bytes - target) / target;
    const auto rate = compression_rate(net, QuantScheme::uniform(8, 8)).params;
    return {rel <= 0.05 && rate == Rational(4),
            fmt("%.1f MiB (%.2f%% off), ", bytes / 1024 / 1024, rel * 100) + "8-bit compression " + rate.to_string()};
}

double cli_fps(const std::string& name) {
    std::ostringstream out, err;
    const int code = run_cli({"codesign", "estimate", "--net", fixture(name).string()}, out, err);
    if (code != kExitOk) throw std::runtime_error("estimate " + name + " exited " + std::to_string(code));
    return json::parse(out.str()).at("fps").get<double>();
}

Outcome fps_ordering() {
    const double a = cli_fps("dnn_a.json"), b = cli_fps("dnn_b.json"), c = cli_fps("dnn_c.json");
    // The stretch goal is informational only.
    const bool within_2x = a >= 29.7 / 2 && a <= 29.7 * 2;
    return {a > b && b > c, fmt("A %.2f > B %.2f > C %.2f fps", a, b, c) +
                                (within_2x ? " (A within 2x of 29.7)" : " (A outside 2x of 29.7)")};
}

Outcome latency_agreement() {
    std::mt19937_64 g(2024);
    int exact = 0, bounded = 0;
    for (int i = 0; i < 200; ++i) {
        const auto p = random_constant_plan(g);
        SimConfig cfg;
        cfg.plan = p;
        exact += simulate(cfg).total_cycles == bundle_latency_cycles(p);
        cfg.jitter = random_delays(g, p);
        bounded += simulate(cfg).total_cycles >= bundle_latency_cycles(p);
    }
    return {exact == 200 && bounded == 200,
            std::to_string(exact) + "/200 exact, " + std::to_string(bounded) + "/200 bounded under jitter"};
}

Outcome scd_near_optimal() {
    const auto t = load_tiny();
    const Device dev = default_device();
    const auto ranked = admissible_scores(t, dev);
    SurrogateOracle oracle;
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SearchConfig cfg = t.cfg;
        cfg.seed = seed;
        const auto r = scd_search(t.net, t.scheme, t.target, dev, oracle, cfg);
        hits += r.status == SearchStatus::Found && in_top_five_percent(r.best->score, ranked);
    }
    return {hits >= 19, std::to_string(hits) + "/20 seeds in the top 5% of " + std::to_string(ranked.size()) +
                            " admissible designs"};
}

CandidateDesign point(double qor, double fps, double eff, int id) {
    CandidateDesign d;
    d.qor = qor;
    d.qos.fps = fps;
    d.qos.efficiency = eff;
    d.fingerprint = "d" + std::to_string(id);
    return d;
}

Outcome pareto_correctness() {
    std::mt19937_64 g(77);
    std::uniform_int_distribution<int> coarse(0, 8);
    int agree = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = std::uniform_int_distribution<int>(0, 50)(g);
        std::vector<CandidateDesign> all;
        ParetoSet set;
        for (int i = 0; i < n; ++i) {
            all.push_back(point(coarse(g) / 8.0, coarse(g) * 4.0, coarse(g) * 1.5, i));
            pareto_insert(set, all.back());
        }
        std::set<std::string> brute, got;
        for (const auto& d : all) {
            bool dominated = false;
            for (const auto& o : all)
                dominated = dominated || (o.qor >= d.qor && o.qos.fps >= d.qos.fps &&
                                          o.qos.efficiency >= d.qos.efficiency &&
                                          (o.qor > d.qor || o.qos.fps > d.qos.fps || o.qos.efficiency > d.qos.efficiency));
            if (!dominated) brute.insert(d.fingerprint);
        }
        for (const auto& m : set.members) got.insert(m.fingerprint);
        agree += got == brute;
    }
    return {agree == 500, std::to_string(agree) + "/500 sets match the brute-force filter"};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const auto dir = scratch_dir("acceptance_determinism");
    for (const char* run : {"a", "b"}) {
        std::ostringstream out, err;
        const int code = run_cli({"codesign", "search", "--config", fixture("search_tiny.json").string(), "--seed", "7",
                                  "--oracle", "surrogate", "--out", (dir / run).string()},
                                 out, err);
        if (code != kExitOk) return {false, std::string("run ") + run + " exited " + std::to_string(code)};
    }
    std::string detail;
    bool ok = true;
    for (const char* f : {"best.json", "pareto.csv", "audit.jsonl"}) {
        const auto a = slurp(dir / "a" / f);
        const bool same = !a.empty() && a == slurp(dir / "b" / f);
        ok = ok && same;
        detail += (detail.empty() ? "" : ", ") + std::string(f) + (same ? " identical" : " differs");
    }
    return {ok, detail};
}

Outcome surrogate_sensitivity() {
    std::mt19937_64 g(99);
    int wins = 0;
    for (int i = 0; i < 100; ++i) {
        const auto net = random_detector_net(g);
        wins += surrogate_qor(net, QuantScheme::uniform(16, 4)) < surrogate_qor(net, QuantScheme::uniform(4, 16));
    }
    return {wins == 100, std::to_string(wins) + "/100 nets score lower at W16/FM4 than at W4/FM16"};
}

Outcome oracle_robustness() {
    const auto a = load_model("dnn_a.json");
    const OracleRequest req{a.net, a.scheme, 20, "dac-sdc"};
    const ExecEndpoint ok_ep{{stub("ok_fixed.sh").string()}, std::chrono::seconds(5)};
    const bool round_trip = external_eval(req, ok_ep).qor == 0.593;

    auto kind_of = [&](const char* name, std::chrono::milliseconds timeout) -> std::optional<OracleError::Kind> {
        try {
            external_eval(req, {{stub(name).string()}, timeout});
        } catch (const OracleError& e) {
            return e.kind();
        }
        return std::nullopt;
    };
    const bool malformed = kind_of("malformed.sh", std::chrono::seconds(5)) == OracleError::Kind::Protocol;
    const auto t0 = std::chrono::steady_clock::now();
    const bool timeout = kind_of("hang.sh", std::chrono::milliseconds(500)) == OracleError::Kind::Timeout;
    const double waited = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {round_trip && malformed && timeout && waited < 3000,
            std::string("round trip ") + (round_trip ? "exact" : "altered") + ", malformed " +
                (malformed ? "-> Protocol" : "unstructured") + ", hang " + (timeout ? "-> Timeout" : "unstructured") +
                fmt(" after %.0f ms", waited)};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "DSP step at a 64-multiplier array", 1, dsp_step},
        {2, "BRAM halving below resize 0.9", 1000, bram_halving},
        {3, "AlexNet size and 8-bit compression", 1000, alexnet_size},
        {4, "FPS ordering of DNN-A, DNN-B, DNN-C", 0, fps_ordering},
        {5, "analytical vs simulated latency", 10000, latency_agreement},
        {6, "SCD near-optimality on the tiny space", 30000, scd_near_optimal},
        {7, "Pareto correctness", 5000, pareto_correctness},
        {8, "search determinism", 0, determinism},
        {9, "surrogate FM sensitivity", 1000, surrogate_sensitivity},
        {10, "oracle protocol robustness", 5000, oracle_robustness},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_ms > 0 && ms > c.budget_ms) {
            o.pass = false;
            o.detail += fmt("; over the %.0f ms budget", c.budget_ms);
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << ": " << o.detail
                  << fmt(" [%.3f ms]", ms) << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
