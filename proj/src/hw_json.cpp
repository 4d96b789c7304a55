#include "codesign/hw_json.hpp"

#include "codesign/network_json.hpp"

namespace codesign {

Device device_from_json(const JsonNode& node) {
    if (node.has("schema") && node.at("schema").as_string() != kDeviceSchema)
        node.at("schema").fail("unsupported schema, expected device.v1");
    Device d;
    if (node.has("name")) d.name = node.at("name").as_string();

    const auto b = node.at("budget");
    d.budget.dsp_total = b.at("dsp_total").as_int(1);
    d.budget.bram18_total = b.at("bram18_total").as_int(1);
    d.budget.lut_total = b.at("lut_total").as_int(1);
    d.budget.offchip_bw = b.at("offchip_bw").as_int(1);
    d.budget.clock_hz = b.at("clock").as_double();
    if (!(d.budget.clock_hz > 0)) b.at("clock").fail("clock must be positive");

    if (node.has("dsp_model")) {
        const auto m = node.at("dsp_model");
        d.dsp.thresholds.clear();
        const auto th = m.at("thresholds");
        for (std::size_t i = 0; i < th.size(); ++i) {
            const auto e = th.at(i);
            d.dsp.thresholds.emplace_back(static_cast<int>(e.at("max_bits").as_int(2, 64)),
                                          e.at("dsps").as_int(1));
        }
        d.dsp.fallback = m.at("fallback").as_int(1);
        try {
            validate(d.dsp);
        } catch (const Error& e) {
            m.fail(e.what());
        }
    }
    if (node.has("accelerator")) {
        const auto a = node.at("accelerator");
        auto& c = d.accel;
        if (a.has("max_multipliers")) c.max_multipliers = a.at("max_multipliers").as_int(0);
        if (a.has("fm_banks")) c.fm_banks = a.at("fm_banks").as_int(1);
        if (a.has("weight_banks")) c.weight_banks = a.at("weight_banks").as_int(1);
        if (a.has("block_bits")) c.block_bits = a.at("block_bits").as_int(1);
        if (a.has("pool_lanes")) c.pool_lanes = a.at("pool_lanes").as_int(1);
        if (a.has("tile_sizing_bits")) c.tile_sizing_bits = static_cast<Bits>(a.at("tile_sizing_bits").as_int(1, 32));
        if (a.has("overlap_transfers")) c.overlap_transfers = a.at("overlap_transfers").as_bool();
        if (a.has("inter_rep_fm")) {
            const auto mode = a.at("inter_rep_fm");
            const auto s = mode.as_string();
            if (s == "offchip") c.inter_rep_fm_on_chip = false;
            else if (s == "onchip") c.inter_rep_fm_on_chip = true;
            else mode.fail("expected \"offchip\" or \"onchip\"");
        }
    }
    if (node.has("lut_model")) {
        const auto l = node.at("lut_model");
        if (l.has("base")) d.lut.base = l.at("base").as_int(0);
        if (l.has("per_stage")) d.lut.per_stage = l.at("per_stage").as_int(0);
        if (l.has("per_multiplier")) d.lut.per_multiplier = l.at("per_multiplier").as_int(0);
    }
    if (node.has("power")) {
        const auto p = node.at("power");
        auto read = [&](const char* key, double& into) {
            if (!p.has(key)) return;
            into = p.at(key).as_double();
            if (into < 0) p.at(key).fail("must be non-negative");
        };
        read("static_w", d.power.static_w);
        read("w_per_dsp_hz", d.power.w_per_dsp_hz);
        read("w_per_bram_hz", d.power.w_per_bram_hz);
        read("w_per_lut_hz", d.power.w_per_lut_hz);
    }
    try {
        validate(d);
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        node.fail(e.what());
    }
    return d;
}

ojson to_json(const Device& d) {
    ojson th = ojson::array();
    for (const auto& [limit, dsps] : d.dsp.thresholds) th.push_back({{"max_bits", limit}, {"dsps", dsps}});
    return {
        {"schema", kDeviceSchema},
        {"name", d.name},
        {"budget",
         {{"dsp_total", d.budget.dsp_total},
          {"bram18_total", d.budget.bram18_total},
          {"lut_total", d.budget.lut_total},
          {"offchip_bw", d.budget.offchip_bw},
          {"clock", d.budget.clock_hz}}},
        {"dsp_model", {{"thresholds", th}, {"fallback", d.dsp.fallback}}},
        {"accelerator",
         {{"max_multipliers", d.accel.max_multipliers},
          {"fm_banks", d.accel.fm_banks},
          {"weight_banks", d.accel.weight_banks},
          {"block_bits", d.accel.block_bits},
          {"pool_lanes", d.accel.pool_lanes},
          {"tile_sizing_bits", d.accel.tile_sizing_bits},
          {"overlap_transfers", d.accel.overlap_transfers},
          {"inter_rep_fm", d.accel.inter_rep_fm_on_chip ? "onchip" : "offchip"}}},
        {"lut_model",
         {{"base", d.lut.base}, {"per_stage", d.lut.per_stage}, {"per_multiplier", d.lut.per_multiplier}}},
        {"power",
         {{"static_w", d.power.static_w},
          {"w_per_dsp_hz", d.power.w_per_dsp_hz},
          {"w_per_bram_hz", d.power.w_per_bram_hz},
          {"w_per_lut_hz", d.power.w_per_lut_hz}}},
    };
}

ojson to_json(const QosReport& r) {
    ojson v = ojson::array();
    for (const auto& s : r.violations) v.push_back(s);
    return {{"total_cycles", r.total_cycles}, {"latency_s", r.latency_s},   {"fps", r.fps},
            {"dsp_used", r.dsp_used},         {"bram18_used", r.bram18_used}, {"lut_used", r.lut_used},
            {"power_w", r.power_w},           {"efficiency", r.efficiency}, {"feasible", r.feasible},
            {"violations", v}};
}

QosReport qos_from_json(const JsonNode& n) {
    QosReport r;
    r.total_cycles = n.at("total_cycles").as_u64();
    r.latency_s = n.at("latency_s").as_double();
    r.fps = n.at("fps").as_double();
    r.dsp_used = n.at("dsp_used").as_int(0);
    r.bram18_used = n.at("bram18_used").as_int(0);
    r.lut_used = n.at("lut_used").as_int(0);
    r.power_w = n.at("power_w").as_double();
    r.efficiency = n.at("efficiency").as_double();
    r.feasible = n.at("feasible").as_bool();
    const auto v = n.at("violations");
    for (std::size_t i = 0; i < v.size(); ++i) r.violations.push_back(v.at(i).as_string());
    return r;
}

ojson to_json(const TilePlan& p) {
    ojson stages = ojson::array();
    for (const auto& s : p.stages) {
        stages.push_back({{"layer_index", s.layer_index},
                          {"kind", to_string(s.kind)},
                          {"in", to_json(s.in)},
                          {"out", to_json(s.out)},
                          {"weight_bits", s.weight_bits},
                          {"tile_macs", s.tile_macs},
                          {"parallel_mults", s.parallel_mults},
                          {"dsp_per_mult", s.dsp_per_mult},
                          {"dsp", s.dsp()},
                          {"per_tile_cycles", s.per_tile_cycles}});
    }
    ojson bufs = ojson::array();
    for (const auto& b : p.buffers)
        bufs.push_back({{"name", b.name}, {"bits", b.bits}, {"banks", b.banks}, {"bram18", b.blocks}});
    return {{"schema", kPlanSchema},
            {"rep", p.rep},
            {"input", to_json(p.input)},
            {"tile_count", p.tile_count},
            {"tile_rows", p.tile_rows},
            {"stages", stages},
            {"buffers", bufs},
            {"weight_load_cycles", p.weight_load_cycles},
            {"fm_transfer_cycles", p.fm_transfer_cycles},
            {"dsp_used", p.dsp_used()},
            {"bram18_used", p.bram18_used()}};
}

TilePlan plan_from_json(const JsonNode& n) {
    if (n.has("schema") && n.at("schema").as_string() != kPlanSchema)
        n.at("schema").fail("unsupported schema, expected plan.v1");
    TilePlan p;
    p.tile_count = n.at("tile_count").as_int(1);
    if (n.has("rep")) p.rep = static_cast<int>(n.at("rep").as_int(0));
    if (n.has("tile_rows")) p.tile_rows = n.at("tile_rows").as_int(1);
    if (n.has("input")) p.input = shape_from_json(n.at("input"));
    if (n.has("weight_load_cycles")) p.weight_load_cycles = n.at("weight_load_cycles").as_u64();
    if (n.has("fm_transfer_cycles")) p.fm_transfer_cycles = n.at("fm_transfer_cycles").as_u64();
    const auto stages = n.at("stages");
    if (stages.size() == 0) stages.fail("plan needs at least one stage");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto s = stages.at(i);
        PlanStage st;
        st.per_tile_cycles = static_cast<Cycles>(s.at("per_tile_cycles").as_int(1));
        if (s.has("layer_index")) st.layer_index = static_cast<int>(s.at("layer_index").as_int(-1));
        if (s.has("kind")) {
            const auto k = layer_kind_from_string(s.at("kind").as_string());
            if (!k) s.at("kind").fail("unknown layer kind");
            st.kind = *k;
        }
        if (s.has("in")) st.in = shape_from_json(s.at("in"));
        if (s.has("out")) st.out = shape_from_json(s.at("out"));
        if (s.has("weight_bits")) st.weight_bits = static_cast<Bits>(s.at("weight_bits").as_int(0, 32));
        if (s.has("tile_macs")) st.tile_macs = s.at("tile_macs").as_int(0);
        if (s.has("parallel_mults")) st.parallel_mults = s.at("parallel_mults").as_int(0);
        if (s.has("dsp_per_mult")) st.dsp_per_mult = s.at("dsp_per_mult").as_int(0);
        p.stages.push_back(st);
    }
    if (n.has("buffers")) {
        const auto bufs = n.at("buffers");
        for (std::size_t i = 0; i < bufs.size(); ++i) {
            const auto b = bufs.at(i);
            p.buffers.push_back({b.at("name").as_string(), b.at("bits").as_int(0), b.at("banks").as_int(1),
                                 b.at("bram18").as_int(0)});
        }
    }
    return p;
}

ResizeSweep resize_sweep_from_json(const JsonNode& n) {
    ResizeSweep s;
    s.shape = shape_from_json(n.at("shape"));
    const auto fb = n.at("fm_bits");
    for (std::size_t i = 0; i < fb.size(); ++i) s.fm_bits.push_back(static_cast<Bits>(fb.at(i).as_int(1, 32)));
    const auto rs = n.at("resize");
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const auto r = rs.at(i).as_rational();
        if (r <= Rational(0) || r > Rational(1)) rs.at(i).fail("resize must be in (0, 1]");
        s.resize.push_back(r);
    }
    s.banks = n.at("banks").as_int(1);
    if (n.has("block_bits")) s.block_bits = n.at("block_bits").as_int(1);
    return s;
}

} // namespace codesign
