#include "codesign/cli.hpp"

#include "codesign/accel_sim.hpp"
#include "codesign/explorer.hpp"
#include "codesign/hw_json.hpp"
#include "codesign/network_json.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;

namespace codesign {

namespace {

/// Input file with the bytes it was read from, for manifest hashes.
struct Loaded {
    fs::path path;
    json doc;
    std::string sha256;
};

Loaded load(const fs::path& path) {
    Loaded l;
    l.path = path;
    const std::string text = read_file(path);
    l.doc = parse_json_text(text, path.string());
    l.sha256 = sha256_hex(text);
    return l;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Device device_or_default(const std::string& path, std::map<std::string, std::string>& hashes) {
    if (path.empty()) {
        hashes["device"] = "builtin:pynq-z1";
        return Device{};
    }
    const auto l = load(path);
    hashes["device"] = l.sha256;
    return device_from_json(JsonNode(l.doc));
}

/// A network document (optionally with an embedded "scheme") or a design
/// document with "net" and "scheme" members.
std::pair<NetworkSpec, std::optional<QuantScheme>> read_design(const json& doc) {
    const JsonNode root(doc);
    NetworkSpec net = network_from_document(doc);
    std::optional<QuantScheme> scheme;
    if (root.has("scheme")) scheme = scheme_from_json(root.at("scheme"));
    else if (root.has("net") && root.at("net").has("scheme")) scheme = scheme_from_json(root.at("net").at("scheme"));
    return {std::move(net), std::move(scheme)};
}

QuantScheme scheme_document(const json& doc) {
    const JsonNode root(doc);
    return root.has("scheme") ? scheme_from_json(root.at("scheme")) : scheme_from_json(root);
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << text;
        if (text.empty() || text.back() != '\n') out << '\n';
        return;
    }
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(p, text.back() == '\n' ? text : text + "\n");
}

class NoFeasible : public Error {
public:
    using Error::Error;
};

class ExportInfeasible : public Error {
public:
    using Error::Error;
};

// --- bundles ------------------------------------------------------------------

LayerPool default_pool() {
    LayerPool p;
    p.max_len = 3;
    p.entries = {{LayerKind::DwConv3, {}, {}},
                 {LayerKind::PwConv1, {16, 32, 48, 64, 96}, {}},
                 {LayerKind::ConvKxK, {16, 32, 48}, {3}},
                 {LayerKind::MaxPool2x2, {}, {}}};
    return p;
}

struct BundlesOpts {
    std::string pool, device, out;
    long long limit = 10;
    std::uint64_t seed = 1;
};

int cmd_bundles(const BundlesOpts& o, std::ostream& out) {
    if (o.limit < 1) throw ConfigError("limit must be ≥ 1");
    std::map<std::string, std::string> hashes;
    LayerPool pool = default_pool();
    TensorShape input{3, 160, 360};
    QuantScheme scheme = QuantScheme::uniform(16, 8);
    if (!o.pool.empty()) {
        const auto l = load(o.pool);
        const JsonNode root(l.doc);
        pool = layer_pool_from_json(root);
        if (root.has("input")) input = shape_from_json(root.at("input"));
        if (root.has("scheme")) scheme = scheme_from_json(root.at("scheme"));
    }
    const Device device = device_or_default(o.device, hashes);
    const auto bundles = enumerate_bundles(pool, static_cast<std::size_t>(o.limit), o.seed);

    ojson list = ojson::array();
    for (const auto& b : bundles) {
        ojson e;
        e["name"] = b.name;
        e["bundle"] = to_json(b);
        try {
            e["qos"] = to_json(estimate_bundle_qos(b, input, scheme, device));
        } catch (const ShapeError& err) {
            e["qos"] = nullptr;
            e["error"] = err.what();
        }
        list.push_back(e);
    }
    ojson doc;
    doc["schema"] = "bundles.v1";
    doc["seed"] = o.seed;
    doc["limit"] = o.limit;
    doc["device"] = device.name;
    doc["input"] = to_json(input);
    doc["scheme"] = to_json(scheme);
    doc["pool"] = to_json(pool);
    doc["bundles"] = list;
    emit(doc.dump(2), o.out, out);
    return kExitOk;
}

// --- estimate -----------------------------------------------------------------

struct EstimateOpts {
    std::string net, scheme, device, out;
};

int cmd_estimate(const EstimateOpts& o, std::ostream& out) {
    std::map<std::string, std::string> hashes;
    const auto l = load(o.net);
    auto [net, scheme] = read_design(l.doc);
    if (!o.scheme.empty()) scheme = scheme_document(load(o.scheme).doc);
    if (!scheme) throw SchemaError("/scheme", "no quantization scheme: embed one or pass --scheme");
    const Device device = device_or_default(o.device, hashes);
    emit(to_json(network_qos(net, *scheme, device)).dump(2), o.out, out);
    return kExitOk;
}

// --- search -------------------------------------------------------------------

struct SearchOpts {
    std::string config, target, device, oracle = "surrogate", out = "search-out", cache;
    std::optional<std::uint64_t> seed;
    std::optional<double> min_fps;
    int jobs = 1;
    long long oracle_timeout_ms = 600'000;
};

fs::path relative_to(const fs::path& base_file, const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base_file.parent_path() / q;
}

struct SeedPlan {
    std::vector<std::pair<NetworkSpec, QuantScheme>> seeds;
};

/// Steps 1-2 of the flow: bundles, prototypes, grouping.
SeedPlan prototype_seeds(const JsonNode& node, const fs::path& cfg_path, const SearchConfig& cfg,
                         const QosTarget& target, const Device& device, QorOracle& oracle,
                         std::map<std::string, std::string>& hashes) {
    LayerPool pool = default_pool();
    if (node.has("pool")) {
        const auto pn = node.at("pool");
        if (pn.is_string()) {
            const auto l = load(relative_to(cfg_path, pn.as_string()));
            hashes["pool"] = l.sha256;
            pool = layer_pool_from_json(JsonNode(l.doc));
        } else {
            pool = layer_pool_from_json(pn);
        }
    }
    const auto limit = node.has("limit") ? node.at("limit").as_int(1, 100000) : 8;
    const int n = node.has("n_reps") ? static_cast<int>(node.at("n_reps").as_int(1, 64)) : 4;
    const TensorShape input = node.has("input") ? shape_from_json(node.at("input")) : TensorShape{3, 160, 360};
    const QuantScheme scheme =
        node.has("scheme") ? scheme_from_json(node.at("scheme")) : QuantScheme::uniform(16, 8);
    const PrototypePolicy policy = node.has("policy") ? prototype_policy_from_json(node.at("policy")) : PrototypePolicy{};

    std::vector<BundleCandidate> cands;
    std::map<std::string, NetworkSpec> nets;
    for (const auto& b : enumerate_bundles(pool, static_cast<std::size_t>(limit), cfg.seed)) {
        NetworkSpec net;
        try {
            net = build_prototype(b, n, input, policy);
        } catch (const InvalidGrowth&) {
            continue;
        }
        const auto d = evaluate_design(net, scheme, device, target, oracle, cfg);
        cands.push_back({b, d.qos, d.qor});
        nets.emplace(b.name, std::move(net));
    }
    SeedPlan plan;
    for (const auto& sel : group_and_select(cands, target, cfg.k, cfg.top_n))
        plan.seeds.emplace_back(nets.at(sel.candidate.bundle.name), scheme);
    return plan;
}

int cmd_search(const SearchOpts& o, std::ostream& out, std::ostream& err) {
    const std::string started = utc_now();
    std::map<std::string, std::string> hashes;
    const auto cfg_file = load(o.config);
    hashes["config"] = cfg_file.sha256;
    const JsonNode root(cfg_file.doc);

    SearchConfig cfg = search_config_from_json(root);
    if (o.seed) cfg.seed = *o.seed;
    cfg.jobs = o.jobs;
    validate(cfg);

    QosTarget target;
    if (!o.target.empty()) {
        const auto t = load(o.target);
        hashes["target"] = t.sha256;
        const JsonNode tn(t.doc);
        target = target_from_json(tn.has("target") ? tn.at("target") : tn);
    } else if (root.has("target")) {
        target = target_from_json(root.at("target"));
    } else if (!o.min_fps) {
        throw SchemaError("/target", "no QoS target: add \"target\" to the config or pass --target/--min-fps");
    }
    if (o.min_fps) {
        if (!(*o.min_fps > 0)) throw ConfigError("--min-fps must be > 0");
        target.min_fps = *o.min_fps;
    }
    const Device device = device_or_default(o.device, hashes);

    auto oracle = cached(make_oracle(o.oracle, std::chrono::milliseconds(o.oracle_timeout_ms)), o.cache);

    std::vector<std::pair<NetworkSpec, QuantScheme>> seeds;
    if (root.has("seed_design")) {
        const auto sd = root.at("seed_design");
        json doc;
        if (sd.is_string()) {
            const auto l = load(relative_to(cfg_file.path, sd.as_string()));
            hashes["seed_design"] = l.sha256;
            doc = l.doc;
        } else {
            doc = sd.value();
        }
        auto [net, scheme] = read_design(doc);
        if (!scheme) sd.fail("seed design has no scheme");
        seeds.emplace_back(std::move(net), std::move(*scheme));
    } else if (root.has("prototype")) {
        seeds = prototype_seeds(root.at("prototype"), cfg_file.path, cfg, target, device, *oracle, hashes).seeds;
    } else {
        root.fail("config needs \"seed_design\" or \"prototype\"");
    }

    const SearchResult res = search_from_seeds(seeds, target, device, *oracle, cfg);

    const fs::path dir(o.out);
    fs::create_directories(dir / "designs");
    for (const auto& e : fs::directory_iterator(dir / "designs"))
        if (e.path().extension() == ".json") fs::remove(e.path());

    const std::string label = oracle->describe();
    std::vector<std::string> paths;
    for (const auto& m : res.pareto.members) {
        const std::string rel = "designs/" + m.fingerprint.substr(0, 16) + ".json";
        write_file_atomic(dir / rel, to_json(m, label).dump(2) + "\n");
        paths.push_back(rel);
    }
    write_file_atomic(dir / "pareto.csv", pareto_csv(res.pareto, paths));
    std::string audit;
    for (const auto& rec : res.audit) audit += to_jsonl(rec) + "\n";
    write_file_atomic(dir / "audit.jsonl", audit);

    const bool found = res.status == SearchStatus::Found;
    ojson best = to_json(*res.best, label);
    best["admissible"] = found;
    if (!found) best["diagnosis"] = res.diagnosis;
    write_file_atomic(dir / "best.json", best.dump(2) + "\n");

    ojson manifest;
    manifest["schema"] = "manifest.v1";
    manifest["tool"] = "codesign";
    manifest["version"] = CODESIGN_VERSION;
    manifest["command"] = "search";
    manifest["seed"] = cfg.seed;
    manifest["oracle"] = label;
    manifest["jobs"] = cfg.jobs;
    manifest["status"] = found ? "found" : "no-feasible";
    manifest["evaluations"] = res.evaluations;
    ojson h = ojson::object();
    for (const auto& [k, v] : hashes) h[k] = v;
    manifest["config_hashes"] = h;
    manifest["started_at"] = started;
    manifest["finished_at"] = utc_now();
    manifest["outputs"] = {{"best", "best.json"},
                           {"pareto", "pareto.csv"},
                           {"audit", "audit.jsonl"},
                           {"designs", paths}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    if (!found) throw NoFeasible("NoFeasibleFound: " + res.diagnosis);
    out << "best design: qor " << res.best->qor << " (" << label << "), fps " << res.best->qos.fps
        << ", pareto members " << res.pareto.members.size() << ", outputs in " << dir.string() << '\n';
    (void)err;
    return kExitOk;
}

// --- simulate -----------------------------------------------------------------

struct SimulateOpts {
    std::string plan, jitter, out;
    bool trace = false;
    int rep = 0;
    long long buffer_slots = 1;
};

int cmd_simulate(const SimulateOpts& o, std::ostream& out) {
    const auto l = load(o.plan);
    const JsonNode root(l.doc);
    SimConfig cfg;
    if (root.has("repetitions")) {
        const auto reps = root.at("repetitions");
        if (o.rep < 0 || static_cast<std::size_t>(o.rep) >= reps.size())
            throw ConfigError("--rep " + std::to_string(o.rep) + " out of range");
        cfg.plan = plan_from_json(reps.at(static_cast<std::size_t>(o.rep)));
    } else {
        cfg.plan = plan_from_json(root);
    }
    if (!o.jitter.empty()) {
        const auto jl = load(o.jitter);
        const JsonNode jr(jl.doc);
        const auto lists = jr.is_object() ? jr.at("cycles") : jr;
        std::vector<std::vector<Cycles>> jit;
        for (std::size_t s = 0; s < lists.size(); ++s) {
            std::vector<Cycles> row;
            const auto r = lists.at(s);
            for (std::size_t t = 0; t < r.size(); ++t) row.push_back(static_cast<Cycles>(r.at(t).as_int(1)));
            jit.push_back(std::move(row));
        }
        cfg.jitter = std::move(jit);
    }
    cfg.buffer_slots = o.buffer_slots;
    cfg.record_trace = o.trace;
    const SimResult res = simulate(cfg);
    const Cycles analytical = bundle_latency_cycles(cfg.plan);
    const Deviation dev = compare(res, analytical);

    ojson doc;
    doc["schema"] = "sim.v1";
    doc["tile_count"] = cfg.plan.tile_count;
    doc["stages"] = cfg.plan.stages.size();
    doc["jitter"] = cfg.jitter.has_value();
    doc["total_cycles"] = res.total_cycles;
    doc["analytical_cycles"] = analytical;
    doc["deviation_vs_analytical"] = {{"absolute", dev.absolute}, {"relative", dev.relative}};
    doc["busy_cycles"] = res.busy_cycles;
    doc["stall_cycles"] = res.stall_cycles;
    ojson util = ojson::array();
    for (auto b : res.busy_cycles)
        util.push_back(res.total_cycles ? static_cast<double>(b) / static_cast<double>(res.total_cycles) : 0.0);
    doc["utilization"] = util;

    fs::path trace_path = "trace.jsonl";
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        trace_path = fs::path(o.out) / "trace.jsonl";
    }
    if (o.trace) {
        std::string text;
        for (const auto& e : res.trace) {
            ojson j;
            j["cycle"] = e.cycle;
            j["stage"] = e.stage;
            j["tile"] = e.tile;
            j["event"] = to_string(e.event);
            text += j.dump() + "\n";
        }
        write_file_atomic(trace_path, text);
        doc["trace"] = trace_path.string();
    }
    if (o.out.empty()) emit(doc.dump(2), "", out);
    else write_file_atomic(fs::path(o.out) / "sim.json", doc.dump(2) + "\n");
    return kExitOk;
}

// --- export -------------------------------------------------------------------

struct ExportOpts {
    std::string design, device, out;
};

int cmd_export(const ExportOpts& o, std::ostream& out) {
    std::map<std::string, std::string> hashes;
    const auto l = load(o.design);
    auto [net, scheme] = read_design(l.doc);
    if (!scheme) throw SchemaError("/scheme", "design has no quantization scheme");
    const Device device = device_or_default(o.device, hashes);
    const NetworkEvaluation ev = evaluate_network(net, *scheme, device);
    const QosReport& q = ev.report;
    if (!q.feasible) {
        std::string v;
        for (const auto& s : q.violations) v += (v.empty() ? "" : ", ") + s;
        throw ExportInfeasible("design is infeasible on " + device.name + " (" + v + ")");
    }

    ojson reps = ojson::array();
    Count peak_mults = 0;
    for (const auto& p : ev.plans) {
        reps.push_back(to_json(p));
        peak_mults = std::max(peak_mults, p.multipliers());
    }
    ojson doc;
    doc["schema"] = "descriptor.v1";
    doc["device"] = device.name;
    doc["clock_hz"] = device.budget.clock_hz;
    doc["design_sha256"] = l.sha256;
    doc["net"] = to_json(net);
    doc["scheme"] = to_json(*scheme);
    doc["folding"] = "reps share one stage array; allocations are per repetition";
    doc["inter_rep_fm"] = device.accel.inter_rep_fm_on_chip ? "onchip" : "offchip";
    doc["overlap_transfers"] = device.accel.overlap_transfers;
    doc["multiplier_array"] = {{"max_multipliers", device.accel.max_multipliers}, {"peak_multipliers", peak_mults}};
    doc["total_cycles"] = q.total_cycles;
    doc["fps"] = q.fps;
    doc["dsp_used"] = q.dsp_used;
    doc["bram18_used"] = q.bram18_used;
    doc["lut_used"] = q.lut_used;
    doc["power_w"] = q.power_w;
    doc["repetitions"] = reps;
    emit(doc.dump(2), o.out, out);
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Co-design exploration of bundle-composed DNNs and tile-pipelined FPGA accelerators", "codesign"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(CODESIGN_VERSION));

    BundlesOpts bo;
    auto* bundles = app.add_subcommand("bundles", "Enumerate bundles from a layer pool and estimate their QoS");
    bundles->add_option("--pool", bo.pool, "Layer-pool JSON (default: built-in pool)");
    bundles->add_option("--limit", bo.limit, "Number of bundles")->capture_default_str();
    bundles->add_option("--seed", bo.seed, "RNG seed")->capture_default_str();
    bundles->add_option("--device", bo.device, "Device JSON (default: built-in pynq-z1)");
    bundles->add_option("--out", bo.out, "Output file (default: stdout)");

    EstimateOpts eo;
    auto* estimate = app.add_subcommand("estimate", "Analytical QoS report for a network");
    estimate->add_option("--net", eo.net, "Network JSON")->required();
    estimate->add_option("--scheme", eo.scheme, "Quantization scheme JSON (default: embedded)");
    estimate->add_option("--device", eo.device, "Device JSON (default: built-in pynq-z1)");
    estimate->add_option("--out", eo.out, "Output file (default: stdout)");

    SearchOpts so;
    auto* search = app.add_subcommand("search", "Stochastic coordinate descent under QoS targets");
    search->add_option("--config", so.config, "Search config JSON (search.v1)")->required();
    search->add_option("--target", so.target, "QoS target JSON (default: config \"target\")");
    search->add_option("--device", so.device, "Device JSON (default: built-in pynq-z1)");
    search->add_option("--oracle", so.oracle, "surrogate | exec:<command>")->capture_default_str();
    search->add_option("--seed", so.seed, "RNG seed (overrides config)");
    search->add_option("--jobs", so.jobs, "Concurrent evaluations")->capture_default_str()->check(CLI::PositiveNumber);
    search->add_option("--min-fps", so.min_fps, "Override target min_fps");
    search->add_option("--out", so.out, "Output directory")->capture_default_str();
    search->add_option("--cache", so.cache, "Append-only oracle cache (JSON lines)");
    search->add_option("--oracle-timeout-ms", so.oracle_timeout_ms, "Per-request oracle timeout")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    SimulateOpts mo;
    auto* sim = app.add_subcommand("simulate", "Discrete-event simulation of a tile plan");
    sim->add_option("--plan", mo.plan, "Plan JSON (plan.v1) or accelerator descriptor")->required();
    sim->add_option("--rep", mo.rep, "Repetition to simulate when --plan is a descriptor")->capture_default_str();
    sim->add_option("--jitter", mo.jitter, "Per-stage, per-tile cycle lists");
    sim->add_option("--buffer-slots", mo.buffer_slots, "Tiles each inter-stage link can hold")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sim->add_flag("--trace", mo.trace, "Write trace.jsonl");
    sim->add_option("--out", mo.out, "Output directory for sim.json and trace.jsonl (default: stdout)");

    ExportOpts xo;
    auto* exp = app.add_subcommand("export", "Accelerator configuration descriptor for a design");
    exp->add_option("--design", xo.design, "Design JSON (best.json or a network with a scheme)")->required();
    exp->add_option("--device", xo.device, "Device JSON (default: built-in pynq-z1)");
    exp->add_option("--out", xo.out, "Output file (default: stdout)");

    std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    try {
        app.parse(args);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*bundles) return cmd_bundles(bo, out);
        if (*estimate) return cmd_estimate(eo, out);
        if (*search) return cmd_search(so, out, err);
        if (*sim) return cmd_simulate(mo, out);
        if (*exp) return cmd_export(xo, out);
    } catch (const NoFeasible& e) {
        err << "error: " << e.what() << '\n';
        return kExitNoFeasible;
    } catch (const OracleFailure& e) {
        err << "error: " << e.what() << "\nfailing request: " << e.request() << '\n';
        return kExitOracle;
    } catch (const ExportInfeasible& e) {
        err << "error: " << e.what() << '\n';
        return kExitExportInfeasible;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitUsage;
}

} // namespace codesign
