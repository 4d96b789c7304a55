#include "codesign/hw_models.hpp"

#include "codesign/errors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace codesign {

namespace {

Count ceil_div(Count a, Count b) { return (a + b - 1) / b; }

} // namespace

void validate(const DspModel& model) {
    for (std::size_t i = 0; i < model.thresholds.size(); ++i) {
        const auto& [limit, dsps] = model.thresholds[i];
        if (dsps < 1) throw ConfigError("DSP model counts must be >= 1");
        if (i > 0 && (limit <= model.thresholds[i - 1].first || dsps <= model.thresholds[i - 1].second))
            throw ConfigError("DSP model limits and counts must be strictly increasing");
    }
    if (!model.thresholds.empty() && model.fallback <= model.thresholds.back().second)
        throw ConfigError("DSP model fallback must exceed the last threshold count");
    if (model.fallback < 1) throw ConfigError("DSP model fallback must be >= 1");
}

Count dsp_per_mult(Bits weight_bits, Bits fm_bits, const DspModel& model) {
    const int width = weight_bits + fm_bits;
    for (const auto& [limit, dsps] : model.thresholds)
        if (width <= limit) return dsps;
    return model.fallback;
}

void validate(const Device& device) {
    const auto& b = device.budget;
    if (b.dsp_total < 1 || b.bram18_total < 1 || b.lut_total < 1 || b.offchip_bw < 1 || !(b.clock_hz > 0))
        throw ConfigError("device budget values must be positive");
    validate(device.dsp);
    const auto& a = device.accel;
    if (a.max_multipliers < 0 || a.fm_banks < 1 || a.weight_banks < 1 || a.block_bits < 1 ||
        a.pool_lanes < 1 || a.tile_sizing_bits < 1 || a.tile_sizing_bits > 32)
        throw ConfigError("accelerator configuration out of range");
    if (device.power.static_w < 0 || device.power.w_per_dsp_hz < 0 || device.power.w_per_bram_hz < 0 ||
        device.power.w_per_lut_hz < 0)
        throw ConfigError("power coefficients must be non-negative");
}

Count bram_blocks(Count buffer_bits, Count banks, Count block_bits) {
    if (buffer_bits <= 0) return 0;
    if (banks < 1 || block_bits < 1) throw ConfigError("banks and block_bits must be >= 1");
    return banks * ceil_div(ceil_div(buffer_bits, banks), block_bits);
}

Count fm_buffer_bits(const TensorShape& shape, Bits fm_bits, const Rational& resize) {
    if (resize <= Rational(0) || resize > Rational(1))
        throw ConfigError("resize factor must be in (0, 1], got " + resize.to_string());
    const Count h = ceil_mul(shape.height, resize);
    const Count w = ceil_mul(shape.width, resize);
    return 2 * h * w * shape.channels * fm_bits;
}

std::vector<ResizePoint> run_resize_sweep(const ResizeSweep& sweep) {
    std::vector<ResizePoint> out;
    for (Bits fb : sweep.fm_bits) {
        for (const auto& r : sweep.resize) {
            const Count bits = fm_buffer_bits(sweep.shape, fb, r);
            out.push_back({fb, r, bits, bram_blocks(bits, sweep.banks, sweep.block_bits)});
        }
    }
    return out;
}

Count TilePlan::dsp_used() const noexcept {
    Count sum = 0;
    for (const auto& s : stages) sum += s.dsp();
    return sum;
}

Count TilePlan::multipliers() const noexcept {
    Count sum = 0;
    for (const auto& s : stages) sum += s.parallel_mults;
    return sum;
}

Count TilePlan::bram18_used() const noexcept {
    Count sum = 0;
    for (const auto& b : buffers) sum += b.blocks;
    return sum;
}

Cycles bundle_latency_cycles(const TilePlan& plan) {
    Cycles sum = 0, slowest = 0;
    for (const auto& s : plan.stages) {
        sum += s.per_tile_cycles;
        slowest = std::max(slowest, s.per_tile_cycles);
    }
    const Cycles tiles = plan.tile_count < 1 ? 1 : static_cast<Cycles>(plan.tile_count);
    return sum + (tiles - 1) * slowest;
}

namespace {

struct SegmentPlanResult {
    TilePlan plan;
    bool bram_overflow = false;
    bool dsp_shortage = false;
};

/// Output rows a stage produces per tile when the repetition is cut into
/// `tiles` row bands.
Count rows_per_tile(Count height, Count tiles) { return ceil_div(height, std::min(tiles, height)); }

std::vector<PlanBuffer> segment_buffers(const std::vector<ShapedLayer>& seg, const std::vector<Bits>& wbits,
                                        Count tiles, Bits fm_bits, const AcceleratorConfig& accel) {
    std::vector<PlanBuffer> bufs;
    auto add = [&](std::string name, Count bits, Count banks) {
        bufs.push_back({std::move(name), bits, banks, bram_blocks(bits, banks, accel.block_bits)});
    };
    Count weight_bits = 0;
    for (std::size_t j = 0; j < seg.size(); ++j) {
        const auto& sl = seg[j];
        const int k = sl.layer.effective_kernel();
        Count rows = 0;
        switch (sl.layer.kind) {
        case LayerKind::Dense: rows = sl.in.height; break;
        case LayerKind::MaxPool2x2: rows = std::min(sl.in.height, 2 * rows_per_tile(sl.out.height, tiles)); break;
        default: rows = rows_per_tile(sl.in.height, tiles) + (k - 1); break;
        }
        add("in" + std::to_string(j), 2 * rows * sl.in.width * sl.in.channels * fm_bits, accel.fm_banks);
        weight_bits += layer_params(sl) * wbits[j];
    }
    const auto& last = seg.back();
    add("out", 2 * rows_per_tile(last.out.height, tiles) * last.out.width * last.out.channels * fm_bits,
        accel.fm_banks);
    if (weight_bits > 0) add("weights", weight_bits, accel.weight_banks);
    return bufs;
}

Count sum_blocks(const std::vector<PlanBuffer>& bufs) {
    Count n = 0;
    for (const auto& b : bufs) n += b.blocks;
    return n;
}

/// Plans one repetition. `seg` holds the shaped layers executed in it and
/// `wbits` the weight precision of each (0 for weightless layers).
SegmentPlanResult plan_segment(const std::vector<ShapedLayer>& seg, const std::vector<int>& layer_index,
                               const std::vector<Bits>& wbits, Bits fm_bits, const Device& device, int rep) {
    const auto& accel = device.accel;
    const auto& budget = device.budget;
    SegmentPlanResult res;
    TilePlan& plan = res.plan;
    plan.rep = rep;
    plan.input = seg.front().in;

    // Geometry: fewest tiles whose buffers fit at the provisioning width.
    const Count height = plan.input.height;
    Count tiles = height;
    for (Count t = 1; t <= height; ++t) {
        const auto sized = segment_buffers(seg, wbits, t, accel.tile_sizing_bits, accel);
        if (sum_blocks(sized) <= budget.bram18_total) {
            tiles = t;
            break;
        }
    }
    plan.tile_count = tiles;
    plan.tile_rows = ceil_div(height, tiles);
    plan.buffers = segment_buffers(seg, wbits, tiles, fm_bits, accel);
    res.bram_overflow = plan.bram18_used() > budget.bram18_total;

    Count weight_total_bits = 0;
    for (std::size_t j = 0; j < seg.size(); ++j) {
        const auto& sl = seg[j];
        PlanStage st;
        st.layer_index = layer_index[j];
        st.kind = sl.layer.kind;
        st.in = sl.in;
        st.out = sl.out;
        st.weight_bits = wbits[j];
        if (sl.layer.kind == LayerKind::Dense) {
            st.tile_macs = ceil_div(layer_macs(sl), tiles);
        } else {
            st.tile_macs = layer_macs(sl) / sl.out.height * rows_per_tile(sl.out.height, tiles);
        }
        if (sl.layer.is_compute()) {
            st.dsp_per_mult = dsp_per_mult(wbits[j], fm_bits, device.dsp);
        } else {
            const Count rows = std::min(sl.in.height, 2 * rows_per_tile(sl.out.height, tiles));
            st.per_tile_cycles = std::max<Cycles>(1, ceil_div(rows * sl.in.width * sl.in.channels, accel.pool_lanes));
        }
        weight_total_bits += layer_params(sl) * wbits[j];
        plan.stages.push_back(st);
    }

    // Every compute stage needs one multiplier before balancing starts.
    Count dsp_left = budget.dsp_total;
    Count mults_left = accel.max_multipliers > 0 ? accel.max_multipliers : std::numeric_limits<Count>::max();
    for (auto& st : plan.stages) {
        if (st.dsp_per_mult == 0) continue;
        st.parallel_mults = 1;
        st.per_tile_cycles = std::max<Cycles>(1, ceil_div(st.tile_macs, 1));
        dsp_left -= st.dsp_per_mult;
        mults_left -= 1;
    }
    if (dsp_left < 0 || mults_left < 0) res.dsp_shortage = true;

    // Greedy balancing: next multiplier goes to the slowest compute stage,
    // lowest index on ties.
    while (!res.dsp_shortage) {
        PlanStage* slowest = nullptr;
        for (auto& st : plan.stages) {
            if (st.dsp_per_mult == 0) continue;
            if (!slowest || st.per_tile_cycles > slowest->per_tile_cycles) slowest = &st;
        }
        if (!slowest || slowest->per_tile_cycles <= 1) break;
        if (slowest->dsp_per_mult > dsp_left || mults_left < 1) break;
        slowest->parallel_mults += 1;
        slowest->per_tile_cycles = ceil_div(slowest->tile_macs, slowest->parallel_mults);
        dsp_left -= slowest->dsp_per_mult;
        mults_left -= 1;
    }

    plan.weight_load_cycles = ceil_div(weight_total_bits, budget.offchip_bw);
    return res;
}

Count lut_estimate(const TilePlan& plan, const LutModel& lut) {
    return lut.base + lut.per_stage * static_cast<Count>(plan.stages.size()) +
           lut.per_multiplier * plan.multipliers();
}

std::vector<Bits> weight_bits_of(const std::vector<ShapedLayer>& chain, const QuantScheme& scheme) {
    const auto groups = resolve_groups(chain, scheme);
    std::vector<Bits> out(chain.size(), 0);
    for (std::size_t i = 0; i < chain.size(); ++i)
        if (groups[i] >= 0) out[i] = scheme.groups[groups[i]].bits;
    return out;
}

Cycles rep_cycles(const TilePlan& plan, const AcceleratorConfig& accel) {
    const Cycles compute = bundle_latency_cycles(plan);
    const Cycles transfers = plan.weight_load_cycles + plan.fm_transfer_cycles;
    return accel.overlap_transfers ? std::max(compute, transfers) : compute + transfers;
}

} // namespace

TilePlan plan_tiles(const Bundle& bundle, const TensorShape& input, const QuantScheme& scheme,
                    const Device& device) {
    validate_bundle(bundle);
    validate(scheme);
    validate(device);
    NetworkSpec net;
    net.input = input;
    net.bundle = bundle;
    net.n_reps = 1;
    net.channel_mults = {Rational(1)};
    net.pool_after = {false};
    const auto chain = infer_shapes(net);
    const auto wbits = weight_bits_of(chain, scheme);
    std::vector<ShapedLayer> seg;
    std::vector<int> index;
    std::vector<Bits> seg_bits;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (chain[i].layer.kind == LayerKind::BackendMarker) continue;
        seg.push_back(chain[i]);
        index.push_back(static_cast<int>(i));
        seg_bits.push_back(wbits[i]);
    }
    auto res = plan_segment(seg, index, seg_bits, scheme.fm_bits, device, 0);
    if (res.bram_overflow)
        throw Infeasible("bundle '" + bundle.name + "' overflows BRAM even with one-row tiles");
    if (res.dsp_shortage)
        throw Infeasible("bundle '" + bundle.name + "' cannot give every compute stage a multiplier");
    return std::move(res.plan);
}

FitVerdict check_fit(const Resources& used, const DeviceBudget& budget) {
    FitVerdict v;
    if (used.dsp > budget.dsp_total) v.violations.push_back("dsp");
    if (used.bram18 > budget.bram18_total) v.violations.push_back("bram18");
    if (used.lut > budget.lut_total) v.violations.push_back("lut");
    v.feasible = v.violations.empty();
    return v;
}

double power_estimate(const Resources& used, double clock_hz, const PowerConfig& cfg) {
    return cfg.static_w + (cfg.w_per_dsp_hz * static_cast<double>(used.dsp) +
                           cfg.w_per_bram_hz * static_cast<double>(used.bram18) +
                           cfg.w_per_lut_hz * static_cast<double>(used.lut)) *
                              clock_hz;
}

Cycles total_cycles_from_plans(const std::vector<TilePlan>& plans, const AcceleratorConfig& accel) {
    Cycles total = 0;
    for (const auto& p : plans) total += rep_cycles(p, accel);
    return total;
}

NetworkEvaluation evaluate_network(const NetworkSpec& net, const QuantScheme& scheme, const Device& device) {
    validate(scheme);
    validate(device);
    const auto chain = infer_shapes(net);
    const auto wbits = weight_bits_of(chain, scheme);
    const auto& accel = device.accel;
    const auto& budget = device.budget;

    NetworkEvaluation ev;
    QosReport& rep = ev.report;
    Count peak_inter_rep_blocks = 0;
    bool bram_overflow = false, dsp_shortage = false;

    for (int r = 0; r < net.n_reps; ++r) {
        std::vector<ShapedLayer> seg;
        std::vector<int> index;
        std::vector<Bits> seg_bits;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            if (chain[i].rep != r || chain[i].layer.kind == LayerKind::BackendMarker) continue;
            seg.push_back(chain[i]);
            index.push_back(static_cast<int>(i));
            seg_bits.push_back(wbits[i]);
        }
        auto res = plan_segment(seg, index, seg_bits, scheme.fm_bits, device, r);
        bram_overflow |= res.bram_overflow;
        dsp_shortage |= res.dsp_shortage;
        TilePlan& plan = res.plan;

        const Count in_bits = seg.front().in.elements() * scheme.fm_bits;
        const Count out_bits = seg.back().out.elements() * scheme.fm_bits;
        Count traffic = 0;
        if (!accel.inter_rep_fm_on_chip) {
            traffic = in_bits + out_bits;
        } else {
            if (r == 0) traffic += in_bits;
            if (r == net.n_reps - 1) traffic += out_bits;
            if (r != net.n_reps - 1)
                peak_inter_rep_blocks = std::max(peak_inter_rep_blocks, bram_blocks(out_bits, accel.fm_banks, accel.block_bits));
        }
        plan.fm_transfer_cycles = ceil_div(traffic, budget.offchip_bw);

        rep.dsp_used = std::max(rep.dsp_used, plan.dsp_used());
        rep.bram18_used = std::max(rep.bram18_used, plan.bram18_used());
        rep.lut_used = std::max(rep.lut_used, lut_estimate(plan, device.lut));
        ev.plans.push_back(std::move(plan));
    }
    rep.bram18_used += peak_inter_rep_blocks;

    rep.total_cycles = total_cycles_from_plans(ev.plans, accel);
    rep.latency_s = static_cast<double>(rep.total_cycles) / budget.clock_hz;
    rep.fps = budget.clock_hz / static_cast<double>(rep.total_cycles);
    rep.power_w = power_estimate(rep.resources(), budget.clock_hz, device.power);
    rep.efficiency = rep.fps / rep.power_w;

    auto verdict = check_fit(rep.resources(), budget);
    if (bram_overflow && std::find(verdict.violations.begin(), verdict.violations.end(), "bram18") ==
                             verdict.violations.end())
        verdict.violations.push_back("bram18");
    if (dsp_shortage && std::find(verdict.violations.begin(), verdict.violations.end(), "dsp") ==
                            verdict.violations.end())
        verdict.violations.push_back("dsp");
    rep.violations = std::move(verdict.violations);
    rep.feasible = rep.violations.empty();
    return ev;
}

QosReport network_qos(const NetworkSpec& net, const QuantScheme& scheme, const Device& device) {
    return evaluate_network(net, scheme, device).report;
}

} // namespace codesign
