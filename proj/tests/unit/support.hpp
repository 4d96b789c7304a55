#pragma once

// Shared fixtures and generators for the unit and acceptance tests.

#include "codesign/explorer.hpp"
#include "codesign/hw_json.hpp"
#include "codesign/network_json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <utility>

namespace testsupport {

using namespace codesign;

inline std::filesystem::path source_dir() { return CODESIGN_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& name) { return source_dir() / "fixtures" / name; }
inline std::filesystem::path stub(const std::string& name) { return source_dir() / "tests" / "stubs" / name; }

struct Model {
    NetworkSpec net;
    QuantScheme scheme;
};

inline Model load_model(const std::string& name) {
    const json doc = load_json_file(fixture(name));
    return {network_from_document(doc), scheme_from_json(JsonNode(doc).at("scheme"))};
}

inline Device default_device() {
    return device_from_json(JsonNode(load_json_file(source_dir() / "devices" / "pynq_z1.json")));
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::current_path() / "scratch" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Layer random_layer(std::mt19937_64& g, bool allow_pool) {
    std::uniform_int_distribution<int> kind(0, allow_pool ? 3 : 2);
    std::uniform_int_distribution<int> ch(1, 8);
    switch (kind(g)) {
    case 0: return Layer::dw3();
    case 1: return Layer::pw1(ch(g));
    case 2: return Layer::conv(std::uniform_int_distribution<int>(0, 2)(g) * 2 + 1, ch(g));
    default: return Layer::maxpool();
    }
}

/// Random valid net with every tensor at most 8x8x8 (before multipliers).
inline NetworkSpec random_small_net(std::mt19937_64& g) {
    std::uniform_int_distribution<int> dim(1, 8);
    std::uniform_int_distribution<int> coin(0, 1);
    for (;;) {
        NetworkSpec net;
        net.input = {dim(g), dim(g), dim(g)};
        if (coin(g)) net.head.push_back(random_layer(g, false));
        const int len = std::uniform_int_distribution<int>(1, 3)(g);
        for (int i = 0; i < len; ++i) net.bundle.layers.push_back(random_layer(g, true));
        net.bundle.name = bundle_signature(net.bundle);
        net.n_reps = std::uniform_int_distribution<int>(1, 3)(g);
        for (int r = 0; r < net.n_reps; ++r) {
            net.channel_mults.push_back(Rational(1));
            net.pool_after.push_back(coin(g) && coin(g));
        }
        if (coin(g)) net.tail.push_back(Layer::pw1(dim(g)));
        try {
            validate(net);
            bool small = true;
            for (const auto& sl : infer_shapes(net))
                small = small && sl.out.channels <= 8 && sl.out.height <= 8 && sl.out.width <= 8;
            if (small) return net;
        } catch (const Error&) {
        }
    }
}

/// Random net on the realistic input, built from DwConv3 or Conv3 followed by a PwConv1.
inline NetworkSpec random_detector_net(std::mt19937_64& g) {
    static const std::vector<Count> widths{16, 32, 48, 64, 96};
    std::uniform_int_distribution<int> coin(0, 1);
    for (;;) {
        Bundle b;
        b.layers.push_back(coin(g) ? Layer::dw3() : Layer::conv(3, widths[g() % widths.size()]));
        b.layers.push_back(Layer::pw1(widths[g() % widths.size()]));
        b.name = bundle_signature(b);
        const int n = std::uniform_int_distribution<int>(1, 5)(g);
        std::vector<Rational> mults;
        std::vector<bool> pools;
        for (int r = 0; r < n; ++r) {
            mults.push_back(Rational(1 << std::min(r, 3)));
            pools.push_back(r + 1 < n);
        }
        try {
            auto net = build_dnn(b, n, mults, pools, {3, 160, 360});
            net.tail.push_back(Layer::pw1(10));
            validate(net);
            return net;
        } catch (const Error&) {
        }
    }
}

/// Random scheme that resolves on `net`.
inline QuantScheme random_scheme(std::mt19937_64& g, const NetworkSpec& net) {
    std::uniform_int_distribution<int> bits(2, 16);
    const auto chain = infer_shapes(net);
    for (;;) {
        QuantScheme s;
        s.fm_bits = bits(g);
        switch (g() % 3) {
        case 0: s.groups = {{"all", {GroupSelector::All}, bits(g)}}; break;
        case 1:
            s.groups = {{"first", {GroupSelector::First}, bits(g)}, {"rest", {GroupSelector::Rest}, bits(g)}};
            break;
        default:
            s.groups = {{"ends", {GroupSelector::First, GroupSelector::Last}, bits(g)},
                        {"rest", {GroupSelector::Rest}, bits(g)}};
            break;
        }
        try {
            resolve_groups(chain, s);
            return s;
        } catch (const Error&) {
        }
    }
}

/// Plan with constant per-tile stage times: up to 8 stages, up to 64 tiles.
inline TilePlan random_constant_plan(std::mt19937_64& g, Cycles max_cycles = 500) {
    TilePlan p;
    p.tile_count = std::uniform_int_distribution<Count>(1, 64)(g);
    const int n = std::uniform_int_distribution<int>(1, 8)(g);
    for (int i = 0; i < n; ++i) {
        PlanStage s;
        s.per_tile_cycles = std::uniform_int_distribution<Cycles>(1, max_cycles)(g);
        p.stages.push_back(s);
    }
    return p;
}

/// Per-stage, per-tile times at or above the plan's nominal ones.
inline std::vector<std::vector<Cycles>> random_delays(std::mt19937_64& g, const TilePlan& p, Cycles max_extra = 200) {
    std::vector<std::vector<Cycles>> out;
    for (const auto& s : p.stages) {
        std::vector<Cycles> row;
        for (Count t = 0; t < p.tile_count; ++t)
            row.push_back(s.per_tile_cycles + (g() % 3 ? 0 : std::uniform_int_distribution<Cycles>(0, max_extra)(g)));
        out.push_back(std::move(row));
    }
    return out;
}

struct TinyProblem {
    NetworkSpec net;
    QuantScheme scheme;
    SearchConfig cfg;
    QosTarget target;
};

inline TinyProblem load_tiny() {
    const json doc = load_json_file(fixture("search_tiny.json"));
    const JsonNode root(doc);
    return {network_from_document(doc["seed_design"]), scheme_from_json(root.at("seed_design").at("scheme")),
            search_config_from_json(root), target_from_json(root.at("target"))};
}

/// Scores of every admissible point of the space, best first. Admissible
/// designs carry no penalty, so the score is the surrogate QoR itself.
inline std::vector<double> admissible_scores(const TinyProblem& p, const Device& device) {
    std::vector<double> out;
    for (const auto& [net, scheme] : enumerate_space(p.net, p.scheme, p.cfg.domains)) {
        const auto q = network_qos(net, scheme, device);
        if (q.feasible && q.fps >= p.target.min_fps) out.push_back(surrogate_qor(net, scheme));
    }
    std::sort(out.rbegin(), out.rend());
    return out;
}

/// Rank-wise top 5%: fewer than max(1, ceil(0.05 N)) admissible designs score higher.
inline bool in_top_five_percent(double score, const std::vector<double>& ranked) {
    const auto better = static_cast<std::size_t>(
        std::count_if(ranked.begin(), ranked.end(), [&](double x) { return x > score; }));
    const auto allowed = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(ranked.size()))));
    return better < allowed;
}

} // namespace testsupport
