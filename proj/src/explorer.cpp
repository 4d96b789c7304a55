#include "codesign/explorer.hpp"

#include "codesign/hw_json.hpp"
#include "codesign/network_json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <thread>

namespace codesign {

// --- randomness ---------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed ^ splitmix64(stream)));
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n == 0) throw ConfigError("uniform_index over an empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// --- layer pool ---------------------------------------------------------------

namespace {

bool takes_channels(LayerKind k) {
    return k == LayerKind::PwConv1 || k == LayerKind::ConvKxK || k == LayerKind::Dense;
}

Count saturating_pow(Count base, int exp) {
    Count r = 1;
    for (int i = 0; i < exp; ++i) {
        if (base != 0 && r > INT64_MAX / base) return INT64_MAX;
        r *= base;
    }
    return r;
}

} // namespace

void validate(const LayerPool& pool) {
    if (pool.entries.empty()) throw ConfigError("layer pool is empty");
    if (pool.max_len < 1) throw ConfigError("layer pool max_len must be >= 1");
    bool compute = false;
    for (const auto& e : pool.entries) {
        const std::string name = to_string(e.kind);
        if (e.kind == LayerKind::BackendMarker) throw ConfigError("layer pool cannot contain a back-end marker");
        if (takes_channels(e.kind)) {
            if (e.channels.empty()) throw ConfigError(name + " pool entry needs channel choices");
            for (Count c : e.channels)
                if (c < 1) throw ConfigError(name + " channel choices must be >= 1");
        } else if (!e.channels.empty()) {
            throw ConfigError(name + " preserves channels; drop its channel choices");
        }
        if (e.kind == LayerKind::ConvKxK) {
            if (e.kernels.empty()) throw ConfigError("ConvKxK pool entry needs kernel choices");
            for (int k : e.kernels)
                if (k < 1 || k % 2 == 0) throw ConfigError("ConvKxK kernels must be odd and >= 1");
        }
        compute |= e.kind != LayerKind::MaxPool2x2;
    }
    if (!compute) throw ConfigError("layer pool has no compute layer");
}

std::vector<Layer> pool_options(const LayerPool& pool) {
    std::vector<Layer> out;
    auto add = [&](const Layer& l) {
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    };
    for (const auto& e : pool.entries) {
        switch (e.kind) {
        case LayerKind::DwConv3: add(Layer::dw3()); break;
        case LayerKind::MaxPool2x2: add(Layer::maxpool()); break;
        case LayerKind::PwConv1:
            for (Count c : e.channels) add(Layer::pw1(c));
            break;
        case LayerKind::Dense:
            for (Count c : e.channels) add(Layer::dense(c));
            break;
        case LayerKind::ConvKxK:
            for (int k : e.kernels)
                for (Count c : e.channels) add(Layer::conv(k, c));
            break;
        case LayerKind::BackendMarker: break;
        }
    }
    return out;
}

Count bundle_space_size(const LayerPool& pool) {
    validate(pool);
    const auto opts = pool_options(pool);
    const auto o = static_cast<Count>(opts.size());
    const auto p = static_cast<Count>(std::count_if(opts.begin(), opts.end(), [](const Layer& l) { return !l.is_compute(); }));
    Count total = 0;
    for (int len = 1; len <= pool.max_len; ++len) {
        const Count all = saturating_pow(o, len);
        if (all == INT64_MAX) return INT64_MAX;
        total += all - saturating_pow(p, len);
        if (total < 0) return INT64_MAX;
    }
    return total;
}

namespace {

Bundle named(std::vector<Layer> layers) {
    Bundle b{"", std::move(layers)};
    b.name = bundle_signature(b);
    return b;
}

bool has_kind(const LayerPool& pool, LayerKind k) {
    return std::any_of(pool.entries.begin(), pool.entries.end(), [k](const PoolEntry& e) { return e.kind == k; });
}

} // namespace

std::vector<Bundle> enumerate_bundles(const LayerPool& pool, std::size_t limit, std::uint64_t seed) {
    validate(pool);
    if (limit < 1) throw ConfigError("limit must be >= 1");
    const auto opts = pool_options(pool);
    const Count space = bundle_space_size(pool);

    std::vector<Bundle> out;
    std::set<std::string> seen;
    const bool lead = has_kind(pool, LayerKind::DwConv3) && has_kind(pool, LayerKind::PwConv1) &&
                      has_kind(pool, LayerKind::MaxPool2x2);
    if (lead) {
        out.push_back(dw_pw_bundle(48));
        seen.insert(out.back().name);
    }
    const bool lead_in_space =
        lead && pool.max_len >= 2 && std::find(opts.begin(), opts.end(), Layer::pw1(48)) != opts.end();
    const Count available = space == INT64_MAX ? space : space + (lead && !lead_in_space ? 1 : 0);
    if (available < static_cast<Count>(limit))
        throw PoolExhausted("layer pool yields " + std::to_string(available) + " distinct bundles, " +
                            std::to_string(limit) + " requested");

    Rng rng = make_rng(seed, 0x62756e646c65ull);  // dedicated stream
    constexpr Count kEnumerateBelow = 200'000;
    if (space <= kEnumerateBelow) {
        std::vector<std::vector<Layer>> all;
        for (int len = 1; len <= pool.max_len; ++len) {
            std::vector<std::size_t> idx(static_cast<std::size_t>(len), 0);
            while (true) {
                std::vector<Layer> seq;
                for (auto i : idx) seq.push_back(opts[i]);
                if (std::any_of(seq.begin(), seq.end(), [](const Layer& l) { return l.is_compute(); }))
                    all.push_back(std::move(seq));
                std::size_t d = 0;
                while (d < idx.size() && ++idx[d] == opts.size()) idx[d++] = 0;
                if (d == idx.size()) break;
            }
        }
        for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[uniform_index(rng, i)]);
        for (auto& seq : all) {
            if (out.size() >= limit) break;
            Bundle b = named(std::move(seq));
            if (seen.insert(b.name).second) out.push_back(std::move(b));
        }
    } else {
        while (out.size() < limit) {
            const auto len = static_cast<int>(1 + uniform_index(rng, static_cast<std::uint64_t>(pool.max_len)));
            std::vector<Layer> seq;
            for (int i = 0; i < len; ++i) seq.push_back(opts[uniform_index(rng, opts.size())]);
            if (std::none_of(seq.begin(), seq.end(), [](const Layer& l) { return l.is_compute(); })) continue;
            Bundle b = named(std::move(seq));
            if (seen.insert(b.name).second) out.push_back(std::move(b));
        }
    }
    out.resize(std::min(out.size(), limit));
    for (const auto& b : out) validate_bundle(b);
    return out;
}

LayerPool layer_pool_from_json(const JsonNode& node) {
    LayerPool pool;
    if (node.has("max_len")) pool.max_len = static_cast<int>(node.at("max_len").as_int(1, 16));
    const auto layers = node.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto ln = layers.at(i);
        PoolEntry e;
        const auto kind_node = ln.at("kind");
        const auto kind = layer_kind_from_string(kind_node.as_string());
        if (!kind) kind_node.fail("unknown layer kind '" + kind_node.as_string() + "'");
        e.kind = *kind;
        if (ln.has("channels")) {
            const auto ch = ln.at("channels");
            if (ch.is_object()) {
                const auto lo = ch.at("min").as_int(1);
                const auto hi = ch.at("max").as_int(lo);
                const auto step = ch.has("step") ? ch.at("step").as_int(1) : 1;
                for (auto c = lo; c <= hi; c += step) e.channels.push_back(c);
            } else {
                for (std::size_t j = 0; j < ch.size(); ++j) e.channels.push_back(ch.at(j).as_int(1));
            }
        }
        if (ln.has("kernels")) {
            const auto k = ln.at("kernels");
            for (std::size_t j = 0; j < k.size(); ++j) e.kernels.push_back(static_cast<int>(k.at(j).as_int(1, 15)));
        }
        pool.entries.push_back(std::move(e));
    }
    try {
        validate(pool);
    } catch (const ConfigError& e) {
        node.fail(e.what());
    }
    return pool;
}

ojson to_json(const LayerPool& pool) {
    ojson layers = ojson::array();
    for (const auto& e : pool.entries) {
        ojson j;
        j["kind"] = to_string(e.kind);
        if (!e.channels.empty()) j["channels"] = e.channels;
        if (!e.kernels.empty()) j["kernels"] = e.kernels;
        layers.push_back(j);
    }
    return {{"schema", "pool.v1"}, {"max_len", pool.max_len}, {"layers", layers}};
}

// --- early estimation -------------------------------------------------------

QosReport estimate_bundle_qos(const Bundle& bundle, const TensorShape& input, const QuantScheme& scheme,
                              const Device& device) {
    validate_bundle(bundle);
    const NetworkSpec net = build_dnn(bundle, 1, {Rational(1)}, {false}, input);
    try {
        return network_qos(net, scheme, device);
    } catch (const Infeasible& e) {
        QosReport r;
        r.feasible = false;
        r.violations = {e.what()};
        return r;
    }
}

namespace {

Count min_spatial_of(const NetworkSpec& net) {
    Count m = std::min(net.input.height, net.input.width);
    for (const auto& sl : infer_shapes(net))
        if (sl.role == LayerRole::Bundle || sl.role == LayerRole::Pool) m = std::min({m, sl.out.height, sl.out.width});
    return m;
}

void fill_mults(NetworkSpec& net, const Rational& growth) {
    net.channel_mults.assign(static_cast<std::size_t>(net.n_reps), Rational(1));
    Rational m(1);
    for (int r = 0; r < net.n_reps; ++r) {
        net.channel_mults[static_cast<std::size_t>(r)] = m;
        if (net.pool_after[static_cast<std::size_t>(r)]) m = m * growth;
    }
}

} // namespace

NetworkSpec build_prototype(const Bundle& bundle, int n, const TensorShape& input, const PrototypePolicy& policy) {
    if (n < 1) throw InvalidGrowth("prototype needs n >= 1 repetitions");
    if (policy.min_spatial < 1) throw ConfigError("min_spatial must be >= 1");
    if (policy.channel_growth <= Rational(0)) throw ConfigError("channel_growth must be positive");
    validate_bundle(bundle);

    Count budget = 0;
    for (Count d = std::min(input.height, input.width); d / 2 >= policy.min_spatial; d /= 2) ++budget;

    NetworkSpec net;
    net.input = input;
    net.bundle = bundle;
    if (net.bundle.name.empty()) net.bundle.name = bundle_signature(bundle);
    net.n_reps = n;
    net.pool_after.assign(static_cast<std::size_t>(n), false);
    fill_mults(net, policy.channel_growth);
    try {
        if (min_spatial_of(net) < policy.min_spatial)
            throw InvalidGrowth("bundle alone shrinks the input below min_spatial");
        for (int r = 0; r + 1 < n && r < budget; ++r) {
            net.pool_after[static_cast<std::size_t>(r)] = true;
            fill_mults(net, policy.channel_growth);
            if (min_spatial_of(net) < policy.min_spatial) {
                net.pool_after[static_cast<std::size_t>(r)] = false;
                fill_mults(net, policy.channel_growth);
                break;
            }
        }
        net.tail = policy.tail;
        net.backend = policy.backend;
        validate(net);
    } catch (const ShapeError& e) {
        throw InvalidGrowth(std::string("prototype vanishes a dimension: ") + e.what());
    }
    return net;
}

std::vector<SelectedBundle> group_and_select(const std::vector<BundleCandidate>& candidates,
                                             const QosTarget& target, int k, int top_n) {
    if (candidates.empty()) throw EmptyInput("no bundle candidates to group");
    if (k < 1 || top_n < 1) throw ConfigError("k and top_n must be >= 1");
    if (!(target.min_fps > 0)) throw ConfigError("min_fps must be > 0");
    const double goal = 1.0 / target.min_fps;
    auto distance = [&](const BundleCandidate& c) {
        const double lat = c.qos.fps > 0 ? 1.0 / c.qos.fps : INFINITY;
        return std::abs(lat - goal) / goal;
    };
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = distance(candidates[a]), db = distance(candidates[b]);
        if (da != db) return da < db;
        return candidates[a].bundle.name < candidates[b].bundle.name;
    });

    std::vector<SelectedBundle> out;
    const std::size_t n = order.size();
    const auto groups = static_cast<std::size_t>(k);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = g * n / groups, hi = (g + 1) * n / groups;
        std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
        std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            if (candidates[a].qor != candidates[b].qor) return candidates[a].qor > candidates[b].qor;
            return candidates[a].bundle.name < candidates[b].bundle.name;
        });
        for (std::size_t i = 0; i < members.size() && i < static_cast<std::size_t>(top_n); ++i)
            out.push_back({candidates[members[i]], static_cast<int>(g)});
    }
    return out;
}

// --- Pareto -------------------------------------------------------------------

bool dominates(const CandidateDesign& a, const CandidateDesign& b) noexcept {
    const bool ge = a.qor >= b.qor && a.qos.fps >= b.qos.fps && a.qos.efficiency >= b.qos.efficiency;
    const bool gt = a.qor > b.qor || a.qos.fps > b.qos.fps || a.qos.efficiency > b.qos.efficiency;
    return ge && gt;
}

bool pareto_insert(ParetoSet& set, const CandidateDesign& d) {
    for (const auto& m : set.members) {
        if (!d.fingerprint.empty() && m.fingerprint == d.fingerprint) return false;
        if (dominates(m, d)) return false;
    }
    std::erase_if(set.members, [&](const CandidateDesign& m) { return dominates(d, m); });
    set.members.push_back(d);
    return true;
}

// --- search -------------------------------------------------------------------

namespace {

template <typename T>
void check_domain(const std::vector<T>& dom, const std::string& name) {
    if (dom.empty()) throw ConfigError("search domain '" + name + "' is empty");
    for (std::size_t i = 1; i < dom.size(); ++i)
        if (!(dom[i - 1] < dom[i])) throw ConfigError("search domain '" + name + "' must be strictly increasing");
}

} // namespace

void validate(const SearchConfig& cfg) {
    if (cfg.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (cfg.restarts < 0) throw ConfigError("restarts must be >= 0");
    if (cfg.stall_limit < 1) throw ConfigError("stall_limit must be >= 1");
    if (!(cfg.lambda >= 0)) throw ConfigError("lambda must be >= 0");
    if (cfg.k < 1 || cfg.top_n < 1) throw ConfigError("k and top_n must be >= 1");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
    const auto& d = cfg.domains;
    check_domain(d.n_reps, "n_reps");
    if (d.n_reps.front() < 1) throw ConfigError("n_reps domain must be >= 1");
    check_domain(d.channel_mult, "channel_mult");
    if (d.channel_mult.front() <= Rational(0)) throw ConfigError("channel multipliers must be positive");
    check_domain(d.pool, "pool");
    check_domain(d.weight_bits, "weight_bits");
    check_domain(d.fm_bits, "fm_bits");
    if (d.weight_bits.front() < 1 || d.weight_bits.back() > 32) throw ConfigError("weight_bits must lie in [1, 32]");
    if (d.fm_bits.front() < 1 || d.fm_bits.back() > 32) throw ConfigError("fm_bits must lie in [1, 32]");
}

std::string to_jsonl(const AuditRecord& rec) {
    ojson j;
    j["iter"] = rec.iter;
    j["coordinate"] = rec.coordinate;
    j["move"] = rec.move;
    j["fps"] = rec.fps ? ojson(*rec.fps) : ojson(nullptr);
    j["qor"] = rec.qor ? ojson(*rec.qor) : ojson(nullptr);
    j["score"] = rec.score ? ojson(*rec.score) : ojson(nullptr);
    j["accepted"] = rec.accepted;
    return j.dump();
}

double design_score(const QosReport& qos, double qor, const QosTarget& target, const DeviceBudget& budget,
                    double lambda) {
    auto over = [](double used, double cap) { return cap > 0 ? std::max(0.0, (used - cap) / cap) : 0.0; };
    double penalty = std::max(0.0, (target.min_fps - qos.fps) / target.min_fps);
    penalty += over(static_cast<double>(qos.dsp_used), static_cast<double>(budget.dsp_total));
    penalty += over(static_cast<double>(qos.bram18_used), static_cast<double>(budget.bram18_total));
    penalty += over(static_cast<double>(qos.lut_used), static_cast<double>(budget.lut_total));
    if (target.max_power) penalty += over(qos.power_w, *target.max_power);
    return qor - lambda * penalty;
}

bool admissible(const QosReport& qos, const QosTarget& target) noexcept {
    if (!qos.feasible || qos.fps < target.min_fps) return false;
    return !target.max_power || qos.power_w <= *target.max_power;
}

CandidateDesign evaluate_design(const NetworkSpec& net, const QuantScheme& scheme, const Device& device,
                                const QosTarget& target, QorOracle& oracle, const SearchConfig& cfg) {
    CandidateDesign d;
    d.net = net;
    d.scheme = scheme;
    d.qos = network_qos(net, scheme, device);
    const OracleRequest req{net, scheme, cfg.epochs, cfg.dataset};
    d.fingerprint = fingerprint(req);
    try {
        const auto resp = oracle.evaluate(req);
        d.qor = resp.qor;
        d.metric = resp.metric;
    } catch (const OracleError& e) {
        throw OracleFailure(std::string("oracle failure (") + to_string(e.kind()) + "): " + e.what() +
                                (e.diagnostics().empty() ? "" : "\nendpoint stderr:\n" + e.diagnostics()),
                            e.request().empty() ? encode_request(req) : e.request());
    }
    d.score = design_score(d.qos, d.qor, target, device.budget, cfg.lambda);
    d.seed = cfg.seed;
    return d;
}

namespace {

enum class CoordKind { NReps, Mult, Pool, WBits, FBits };

struct Coord {
    CoordKind kind;
    int index = 0;

    std::string name() const {
        switch (kind) {
        case CoordKind::NReps: return "n_reps";
        case CoordKind::Mult: return "channel_mult[" + std::to_string(index) + "]";
        case CoordKind::Pool: return "pool_after[" + std::to_string(index) + "]";
        case CoordKind::WBits: return "weight_bits[" + std::to_string(index) + "]";
        case CoordKind::FBits: return "fm_bits";
        }
        return "?";
    }
};

struct State {
    NetworkSpec net;
    QuantScheme scheme;
};

std::vector<Coord> coordinates(const State& s, const SearchDomains& d) {
    std::vector<Coord> out;
    if (d.n_reps.size() > 1) out.push_back({CoordKind::NReps});
    if (d.channel_mult.size() > 1)
        for (int i = 0; i < s.net.n_reps; ++i) out.push_back({CoordKind::Mult, i});
    if (d.pool.size() > 1) {
        const int pools = d.pool_last ? s.net.n_reps : s.net.n_reps - 1;
        for (int i = 0; i < pools; ++i) out.push_back({CoordKind::Pool, i});
    }
    if (d.weight_bits.size() > 1)
        for (int g = 0; g < static_cast<int>(s.scheme.groups.size()); ++g) out.push_back({CoordKind::WBits, g});
    if (d.fm_bits.size() > 1) out.push_back({CoordKind::FBits});
    return out;
}

/// Neighbor of `value` one step along `dir` in an ascending domain, flipping
/// direction at a boundary. Off-grid values step to the nearest grid point.
template <typename T>
std::optional<std::pair<T, int>> step(const std::vector<T>& dom, const T& value, int dir) {
    for (int attempt = 0; attempt < 2; ++attempt, dir = -dir) {
        const auto it = std::find(dom.begin(), dom.end(), value);
        if (it != dom.end()) {
            const auto pos = (it - dom.begin()) + dir;
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(dom.size())) return std::pair{dom[static_cast<std::size_t>(pos)], dir};
        } else if (dir > 0) {
            const auto up = std::upper_bound(dom.begin(), dom.end(), value);
            if (up != dom.end()) return std::pair{*up, dir};
        } else {
            const auto lo = std::lower_bound(dom.begin(), dom.end(), value);
            if (lo != dom.begin()) return std::pair{*(lo - 1), dir};
        }
    }
    return std::nullopt;
}

/// One repetition more or fewer. A new repetition copies the last multiplier;
/// the boundary in front of it pools when the domain allows pooling and the
/// min_spatial guard holds, mirroring build_prototype.
void grow_one(NetworkSpec& net, const SearchDomains& d) {
    const Rational last_mult = net.channel_mults.empty() ? Rational(1) : net.channel_mults.back();
    net.channel_mults.push_back(last_mult);
    net.pool_after.push_back(false);
    ++net.n_reps;
    if (d.pool_last) return;
    const auto boundary = static_cast<std::size_t>(net.n_reps - 2);
    const bool can_pool = std::find(d.pool.begin(), d.pool.end(), true) != d.pool.end();
    const bool can_skip = std::find(d.pool.begin(), d.pool.end(), false) != d.pool.end();
    net.pool_after[boundary] = !can_skip;
    if (can_pool && can_skip) {
        net.pool_after[boundary] = true;
        bool ok = false;
        try {
            ok = min_spatial_of(net) >= d.min_spatial;
        } catch (const Error&) {
        }
        net.pool_after[boundary] = ok;
    }
}

void shrink_one(NetworkSpec& net, const SearchDomains& d) {
    net.channel_mults.pop_back();
    net.pool_after.pop_back();
    --net.n_reps;
    if (!d.pool_last && !net.pool_after.empty()) net.pool_after.back() = false;
}

void resize_reps(NetworkSpec& net, int n, const SearchDomains& d) {
    net.channel_mults.resize(static_cast<std::size_t>(net.n_reps), net.channel_mults.empty() ? Rational(1) : net.channel_mults.back());
    net.pool_after.resize(static_cast<std::size_t>(net.n_reps), false);
    while (net.n_reps < n) grow_one(net, d);
    while (net.n_reps > n) shrink_one(net, d);
}

struct Proposal {
    State state;
    std::string coordinate;
    int move = 0;
    bool valid = false;
};

Proposal apply(const State& cur, const Coord& c, int dir, const SearchDomains& d) {
    Proposal p{cur, c.name(), dir, false};
    auto& net = p.state.net;
    auto& scheme = p.state.scheme;
    bool moved = false;
    switch (c.kind) {
    case CoordKind::NReps:
        if (auto s = step(d.n_reps, net.n_reps, dir)) {
            resize_reps(net, s->first, d);
            p.move = s->second;
            moved = true;
        }
        break;
    case CoordKind::Mult: {
        auto& m = net.channel_mults[static_cast<std::size_t>(c.index)];
        if (auto s = step(d.channel_mult, m, dir)) {
            m = s->first;
            p.move = s->second;
            moved = true;
        }
        break;
    }
    case CoordKind::Pool: {
        const bool v = net.pool_after[static_cast<std::size_t>(c.index)];
        if (auto s = step(d.pool, v, dir)) {
            net.pool_after[static_cast<std::size_t>(c.index)] = s->first;
            p.move = s->second;
            moved = true;
        }
        break;
    }
    case CoordKind::WBits: {
        auto& b = scheme.groups[static_cast<std::size_t>(c.index)].bits;
        if (auto s = step(d.weight_bits, b, dir)) {
            b = s->first;
            p.move = s->second;
            moved = true;
        }
        break;
    }
    case CoordKind::FBits:
        if (auto s = step(d.fm_bits, scheme.fm_bits, dir)) {
            scheme.fm_bits = s->first;
            p.move = s->second;
            moved = true;
        }
        break;
    }
    if (!moved) return p;
    try {
        validate(net);
        p.valid = true;
    } catch (const Error&) {
        p.valid = false;  // the move vanishes a dimension or breaks channels
    }
    return p;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

SearchResult scd_search(const NetworkSpec& seed_net, const QuantScheme& seed_scheme, const QosTarget& target,
                        const Device& device, QorOracle& oracle, const SearchConfig& cfg) {
    validate(cfg);
    validate(seed_net);
    validate(seed_scheme);
    if (!(target.min_fps > 0)) throw ConfigError("min_fps must be > 0");
    const auto& dom = cfg.domains;

    SearchResult res;
    std::map<std::string, CandidateDesign> memo;
    std::optional<CandidateDesign> best_any;

    auto evaluate = [&](const State& s) { return evaluate_design(s.net, s.scheme, device, target, oracle, cfg); };
    auto memo_key = [&](const State& s) { return fingerprint({s.net, s.scheme, cfg.epochs, cfg.dataset}); };

    int restart = 0;
    int iter = 0;
    auto offer = [&](CandidateDesign d) {
        d.restart = restart;
        d.iteration = iter;
        if (!best_any || d.score > best_any->score) best_any = d;
        if (admissible(d.qos, target)) {
            if (!res.best || d.score > res.best->score) res.best = d;
            pareto_insert(res.pareto, d);
        }
    };

    const State seed{seed_net, seed_scheme};
    const CandidateDesign seed_eval = evaluate(seed);
    ++res.evaluations;
    memo.emplace(seed_eval.fingerprint, seed_eval);
    offer(seed_eval);
    res.audit.push_back({0, "seed", 0, seed_eval.qos.fps, seed_eval.qor, seed_eval.score, true});

    State cur = seed;
    double cur_score = seed_eval.score;
    int rejections = 0;
    Rng rng = make_rng(cfg.seed, 0);
    bool stop = false;

    while (!stop && iter < cfg.max_iterations) {
        // Proposals are drawn as if every one is rejected; the batch is cut at
        // the first acceptance or restart and the engine rewound to match.
        const int batch = std::min(cfg.jobs, cfg.max_iterations - iter);
        std::vector<Proposal> props;
        std::vector<Rng> after;
        for (int j = 0; j < batch; ++j) {
            const auto coords = coordinates(cur, dom);
            if (coords.empty()) break;
            const Coord c = coords[uniform_index(rng, coords.size())];
            const int dir = uniform_index(rng, 2) == 0 ? 1 : -1;
            props.push_back(apply(cur, c, dir, dom));
            after.push_back(rng);
        }
        if (props.empty()) break;  // single-point space

        std::vector<std::optional<CandidateDesign>> evals(props.size());
        std::vector<std::exception_ptr> errors(props.size());
        std::vector<std::size_t> todo;
        for (std::size_t j = 0; j < props.size(); ++j) {
            if (!props[j].valid) continue;
            if (auto it = memo.find(memo_key(props[j].state)); it != memo.end()) evals[j] = it->second;
            else todo.push_back(j);
        }
        auto run = [&](std::size_t j) {
            try {
                evals[j] = evaluate(props[j].state);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        };
        if (todo.size() > 1) {
            std::vector<std::thread> pool;
            for (auto j : todo) pool.emplace_back(run, j);
            for (auto& t : pool) t.join();
        } else {
            for (auto j : todo) run(j);
        }

        for (std::size_t j = 0; j < props.size(); ++j) {
            if (errors[j]) std::rethrow_exception(errors[j]);
            ++iter;
            AuditRecord rec{iter, props[j].coordinate, props[j].move, std::nullopt, std::nullopt, std::nullopt, false};
            if (evals[j]) {
                const auto& e = *evals[j];
                if (std::find(todo.begin(), todo.end(), j) != todo.end()) {
                    ++res.evaluations;
                    memo.emplace(e.fingerprint, e);
                }
                offer(e);
                rec.fps = e.qos.fps;
                rec.qor = e.qor;
                rec.score = e.score;
                rec.accepted = e.score > cur_score;
            }
            res.audit.push_back(rec);
            if (rec.accepted) {
                cur = props[j].state;
                cur_score = *rec.score;
                rejections = 0;
                rng = after[j];
                break;
            }
            if (++rejections >= cfg.stall_limit) {
                if (restart >= cfg.restarts) {
                    stop = true;
                    break;
                }
                ++restart;
                rng = make_rng(cfg.seed, static_cast<std::uint64_t>(restart));
                cur = seed;
                cur_score = seed_eval.score;
                rejections = 0;
                res.audit.push_back({iter, "restart", 0, seed_eval.qos.fps, seed_eval.qor, seed_eval.score, true});
                break;
            }
            if (iter >= cfg.max_iterations) break;
        }
    }

    if (res.best) {
        res.status = SearchStatus::Found;
    } else {
        res.status = SearchStatus::NoFeasibleFound;
        res.best = best_any;
        const auto& b = *best_any;
        std::string why = "no design met the targets in " + std::to_string(res.evaluations) +
                          " evaluations; best-scoring design reaches " + fixed(b.qos.fps, 2) + " fps (target " +
                          fixed(target.min_fps, 2) + ")";
        if (!b.qos.violations.empty()) {
            why += ", violates";
            for (const auto& v : b.qos.violations) why += " " + v;
        }
        if (target.max_power && b.qos.power_w > *target.max_power)
            why += ", power " + fixed(b.qos.power_w, 3) + " W over " + fixed(*target.max_power, 3) + " W";
        res.diagnosis = why;
    }
    return res;
}

SearchResult search_from_seeds(const std::vector<std::pair<NetworkSpec, QuantScheme>>& seeds,
                               const QosTarget& target, const Device& device, QorOracle& oracle,
                               const SearchConfig& cfg) {
    if (seeds.empty()) throw EmptyInput("no seed designs to search from");
    SearchResult merged;
    std::optional<CandidateDesign> best_any;
    int offset = 0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        SearchConfig c = cfg;
        if (i > 0) c.seed = splitmix64(cfg.seed + i);
        auto r = scd_search(seeds[i].first, seeds[i].second, target, device, oracle, c);
        for (auto rec : r.audit) {
            rec.iter += offset;
            merged.audit.push_back(std::move(rec));
        }
        offset = merged.audit.back().iter + 1;
        merged.evaluations += r.evaluations;
        for (const auto& m : r.pareto.members) pareto_insert(merged.pareto, m);
        if (r.status == SearchStatus::Found) {
            if (!merged.best || r.best->score > merged.best->score) merged.best = r.best;
        } else if (!best_any || r.best->score > best_any->score) {
            best_any = r.best;
            merged.diagnosis = r.diagnosis;
        }
    }
    if (merged.best) {
        merged.status = SearchStatus::Found;
        merged.diagnosis.clear();
    } else {
        merged.best = best_any;
    }
    return merged;
}

std::vector<std::pair<NetworkSpec, QuantScheme>> enumerate_space(const NetworkSpec& seed_net,
                                                                 const QuantScheme& seed_scheme,
                                                                 const SearchDomains& d) {
    std::vector<std::pair<NetworkSpec, QuantScheme>> out;
    // Frozen coordinates keep seed values (multipliers extended by the last).
    std::vector<int> reps = d.n_reps.size() > 1 ? d.n_reps : std::vector<int>{seed_net.n_reps};
    const auto& wdom = d.weight_bits.size() > 1 ? d.weight_bits : std::vector<Bits>{};
    const auto& fdom = d.fm_bits.size() > 1 ? d.fm_bits : std::vector<Bits>{seed_scheme.fm_bits};

    for (int n : reps) {
        NetworkSpec base = seed_net;
        resize_reps(base, n, d);
        const int pools = d.pool.size() > 1 ? (d.pool_last ? n : n - 1) : 0;
        const int mults = d.channel_mult.size() > 1 ? n : 0;
        const auto groups = static_cast<int>(seed_scheme.groups.size());
        const int wcoords = wdom.empty() ? 0 : groups;

        // Mixed-radix counter over mults, pools, weight groups, fm bits.
        std::vector<std::size_t> radix;
        for (int i = 0; i < mults; ++i) radix.push_back(d.channel_mult.size());
        for (int i = 0; i < pools; ++i) radix.push_back(d.pool.size());
        for (int i = 0; i < wcoords; ++i) radix.push_back(wdom.size());
        radix.push_back(fdom.size());
        std::vector<std::size_t> digit(radix.size(), 0);
        while (true) {
            NetworkSpec net = base;
            QuantScheme scheme = seed_scheme;
            std::size_t k = 0;
            for (int i = 0; i < mults; ++i) net.channel_mults[static_cast<std::size_t>(i)] = d.channel_mult[digit[k++]];
            if (d.pool.size() > 1) {
                for (int i = 0; i < pools; ++i) net.pool_after[static_cast<std::size_t>(i)] = d.pool[digit[k++]];
                if (!d.pool_last) net.pool_after.back() = false;
            }
            for (int i = 0; i < wcoords; ++i) scheme.groups[static_cast<std::size_t>(i)].bits = wdom[digit[k++]];
            scheme.fm_bits = fdom[digit[k++]];
            try {
                validate(net);
                out.emplace_back(std::move(net), std::move(scheme));
            } catch (const Error&) {
            }
            std::size_t p = 0;
            while (p < digit.size() && ++digit[p] == radix[p]) digit[p++] = 0;
            if (p == digit.size()) break;
        }
    }
    return out;
}

// --- serialization ------------------------------------------------------------

SearchDomains domains_from_json(const JsonNode& node) {
    SearchDomains d;
    auto ints = [](const JsonNode& n, std::int64_t lo, std::int64_t hi) {
        std::vector<int> v;
        for (std::size_t i = 0; i < n.size(); ++i) v.push_back(static_cast<int>(n.at(i).as_int(lo, hi)));
        return v;
    };
    if (node.has("n_reps")) d.n_reps = ints(node.at("n_reps"), 1, 64);
    if (node.has("channel_mult")) {
        d.channel_mult.clear();
        const auto n = node.at("channel_mult");
        for (std::size_t i = 0; i < n.size(); ++i) d.channel_mult.push_back(n.at(i).as_rational());
    }
    if (node.has("pool")) {
        d.pool.clear();
        const auto n = node.at("pool");
        for (std::size_t i = 0; i < n.size(); ++i) d.pool.push_back(n.at(i).as_bool());
    }
    if (node.has("pool_last")) d.pool_last = node.at("pool_last").as_bool();
    if (node.has("min_spatial")) d.min_spatial = node.at("min_spatial").as_int(1);
    if (node.has("weight_bits")) d.weight_bits = ints(node.at("weight_bits"), 1, 32);
    if (node.has("fm_bits")) d.fm_bits = ints(node.at("fm_bits"), 1, 32);
    return d;
}

QosTarget target_from_json(const JsonNode& node) {
    QosTarget t;
    const auto f = node.at("min_fps");
    t.min_fps = f.as_double();
    if (!(t.min_fps > 0)) f.fail("min_fps must be > 0");
    if (node.has("max_power") && !node.at("max_power").is_null()) {
        const auto p = node.at("max_power");
        t.max_power = p.as_double();
        if (!(*t.max_power > 0)) p.fail("max_power must be > 0");
    }
    return t;
}

SearchConfig search_config_from_json(const JsonNode& node) {
    if (node.has("schema") && node.at("schema").as_string() != kSearchSchema)
        node.at("schema").fail(std::string("expected \"") + kSearchSchema + "\"");
    SearchConfig c;
    if (node.has("seed")) c.seed = node.at("seed").as_u64();
    if (node.has("max_iterations")) c.max_iterations = static_cast<int>(node.at("max_iterations").as_int(1, 10'000'000));
    if (node.has("restarts")) c.restarts = static_cast<int>(node.at("restarts").as_int(0, 1'000'000));
    if (node.has("stall_limit")) c.stall_limit = static_cast<int>(node.at("stall_limit").as_int(1, 1'000'000));
    if (node.has("lambda")) {
        const auto l = node.at("lambda");
        c.lambda = l.as_double();
        if (!(c.lambda >= 0)) l.fail("lambda must be >= 0");
    }
    if (node.has("k")) c.k = static_cast<int>(node.at("k").as_int(1, 1000));
    if (node.has("top_n")) c.top_n = static_cast<int>(node.at("top_n").as_int(1, 1000));
    if (node.has("epochs")) c.epochs = static_cast<int>(node.at("epochs").as_int(1, 100000));
    if (node.has("dataset")) c.dataset = node.at("dataset").as_string();
    if (node.has("domains")) {
        const auto dn = node.at("domains");
        c.domains = domains_from_json(dn);
        try {
            validate(c);
        } catch (const ConfigError& e) {
            dn.fail(e.what());
        }
    }
    return c;
}

PrototypePolicy prototype_policy_from_json(const JsonNode& node) {
    PrototypePolicy p;
    if (node.has("min_spatial")) p.min_spatial = node.at("min_spatial").as_int(1);
    if (node.has("channel_growth")) {
        const auto g = node.at("channel_growth");
        p.channel_growth = g.as_rational();
        if (p.channel_growth <= Rational(0)) g.fail("channel_growth must be positive");
    }
    auto layers = [](const JsonNode& n) {
        std::vector<Layer> v;
        for (std::size_t i = 0; i < n.size(); ++i) v.push_back(layer_from_json(n.at(i)));
        return v;
    };
    if (node.has("tail")) p.tail = layers(node.at("tail"));
    if (node.has("backend")) p.backend = layers(node.at("backend"));
    return p;
}

ojson to_json(const CandidateDesign& d, const std::string& oracle_label) {
    ojson j;
    j["schema"] = kDesignSchema;
    j["fingerprint"] = d.fingerprint;
    j["net"] = to_json(d.net);
    j["scheme"] = to_json(d.scheme);
    j["qos"] = to_json(d.qos);
    j["qor"] = d.qor;
    j["metric"] = d.metric;
    j["oracle"] = oracle_label;
    j["score"] = d.score;
    j["provenance"] = {{"seed", d.seed}, {"restart", d.restart}, {"iteration", d.iteration}};
    return j;
}

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

} // namespace

std::string pareto_csv(const ParetoSet& set, const std::vector<std::string>& design_paths) {
    if (design_paths.size() != set.members.size()) throw ConfigError("one design path per Pareto member expected");
    std::vector<std::size_t> order(set.members.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = set.members[a];
        const auto& y = set.members[b];
        if (x.qor != y.qor) return x.qor > y.qor;
        if (x.qos.fps != y.qos.fps) return x.qos.fps > y.qos.fps;
        if (x.qos.efficiency != y.qos.efficiency) return x.qos.efficiency > y.qos.efficiency;
        return x.fingerprint < y.fingerprint;
    });
    std::string out = "qor,fps,efficiency,design_path\n";
    for (auto i : order) {
        const auto& m = set.members[i];
        out += shortest(m.qor) + "," + shortest(m.qos.fps) + "," + shortest(m.qos.efficiency) + "," +
               design_paths[i] + "\n";
    }
    return out;
}

} // namespace codesign
