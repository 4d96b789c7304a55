#pragma once

// Analytical QoS models for a folded / unfolded tile-pipelined accelerator.
//
// Folded: one hardware instance runs the bundle repetitions one after the
// other, so resources are the maximum over repetitions and cycles the sum.
// Unfolded: inside a repetition every layer is a pipeline stage and row-band
// tiles stream through the stages.

#include "codesign/network_ir.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace codesign {

using Cycles = std::uint64_t;

struct DeviceBudget {
    Count dsp_total = 220;
    Count bram18_total = 280;
    Count lut_total = 53200;
    /// Off-chip bandwidth in bits per cycle.
    Count offchip_bw = 64;
    double clock_hz = 100e6;
};

/// DSP blocks consumed by one wb x fb multiplier, by operand-width sum.
struct DspModel {
    /// (inclusive limit on wb + fb, DSPs per multiplier), limits increasing.
    std::vector<std::pair<int, Count>> thresholds{{20, 1}, {36, 2}};
    /// DSPs per multiplier above the last limit.
    Count fallback = 4;
};

void validate(const DspModel& model);
Count dsp_per_mult(Bits weight_bits, Bits fm_bits, const DspModel& model = {});

/// Micro-architecture knobs of the accelerator template.
struct AcceleratorConfig {
    /// Width of the shared multiplier array; 0 means limited only by DSPs.
    Count max_multipliers = 64;
    Count fm_banks = 1;
    Count weight_banks = 1;
    Count block_bits = 18432;
    /// Comparators available to a max-pool stage per cycle.
    Count pool_lanes = 64;
    /// FM precision the tile buffers are provisioned for. Tile geometry
    /// is chosen at this width so one geometry serves every quantization.
    Bits tile_sizing_bits = 16;
    /// Hide weight loads and FM staging behind compute instead of
    /// serializing them.
    bool overlap_transfers = false;
    /// Keep feature maps between repetitions on chip instead of staging them
    /// through off-chip memory.
    bool inter_rep_fm_on_chip = false;
};

/// Coarse LUT proxy, only used for fit checks.
struct LutModel {
    Count base = 6000;
    Count per_stage = 800;
    Count per_multiplier = 120;
};

/// Uncalibrated linear power model: static + (k . resources) * clock.
struct PowerConfig {
    double static_w = 1.2;
    double w_per_dsp_hz = 4e-11;
    double w_per_bram_hz = 2e-11;
    double w_per_lut_hz = 1e-13;
};

struct Device {
    std::string name = "pynq-z1";
    DeviceBudget budget;
    DspModel dsp;
    AcceleratorConfig accel;
    LutModel lut;
    PowerConfig power;
};

void validate(const Device& device);

// ---------------------------------------------------------------------------
// Memory

/// Blocks for a buffer split across `banks`: banks * ceil(bits / banks / block_bits).
Count bram_blocks(Count buffer_bits, Count banks = 1, Count block_bits = 18432);

/// Ping-pong buffer bits for a feature map resized by `resize` in (0, 1].
Count fm_buffer_bits(const TensorShape& shape, Bits fm_bits, const Rational& resize);

struct ResizeSweep {
    TensorShape shape;
    std::vector<Bits> fm_bits;
    std::vector<Rational> resize;
    Count banks = 1;
    Count block_bits = 18432;
};

struct ResizePoint {
    Bits fm_bits;
    Rational resize;
    Count buffer_bits;
    Count bram18;
};

std::vector<ResizePoint> run_resize_sweep(const ResizeSweep& sweep);

// ---------------------------------------------------------------------------
// Tiling

struct PlanBuffer {
    std::string name;
    Count bits = 0;
    Count banks = 1;
    Count blocks = 0;
};

struct PlanStage {
    int layer_index = -1;  // index into infer_shapes(), -1 if unknown
    LayerKind kind = LayerKind::PwConv1;
    TensorShape in;
    TensorShape out;
    Bits weight_bits = 0;
    Count tile_macs = 0;
    Count parallel_mults = 0;
    Count dsp_per_mult = 0;
    Cycles per_tile_cycles = 1;

    Count dsp() const noexcept { return parallel_mults * dsp_per_mult; }
};

struct TilePlan {
    int rep = 0;
    TensorShape input;
    std::vector<PlanStage> stages;
    Count tile_count = 1;
    Count tile_rows = 1;
    std::vector<PlanBuffer> buffers;
    Cycles weight_load_cycles = 0;
    /// Off-chip feature-map traffic of this repetition.
    Cycles fm_transfer_cycles = 0;

    Count dsp_used() const noexcept;
    Count multipliers() const noexcept;
    Count bram18_used() const noexcept;
};

/// Plans a single repetition of `bundle` on `input`. Throws Infeasible when
/// even one-row tiles overflow BRAM or the DSP budget cannot give every
/// compute stage a multiplier.
TilePlan plan_tiles(const Bundle& bundle, const TensorShape& input, const QuantScheme& scheme,
                    const Device& device);

/// Pipelined latency: sum of per-tile stage cycles plus (T - 1) times the
/// slowest stage.
Cycles bundle_latency_cycles(const TilePlan& plan);

// ---------------------------------------------------------------------------
// Reports

struct Resources {
    Count dsp = 0;
    Count bram18 = 0;
    Count lut = 0;
};

struct FitVerdict {
    bool feasible = true;
    std::vector<std::string> violations;
};

/// Inclusive comparison; violations named "dsp", "bram18", "lut".
FitVerdict check_fit(const Resources& used, const DeviceBudget& budget);

double power_estimate(const Resources& used, double clock_hz, const PowerConfig& cfg);

struct QosReport {
    Cycles total_cycles = 0;
    double latency_s = 0;
    double fps = 0;
    Count dsp_used = 0;
    Count bram18_used = 0;
    Count lut_used = 0;
    double power_w = 0;
    /// Images per joule, i.e. image/watt at the reported FPS.
    double efficiency = 0;
    bool feasible = false;
    std::vector<std::string> violations;

    Resources resources() const noexcept { return {dsp_used, bram18_used, lut_used}; }
};

struct NetworkEvaluation {
    QosReport report;
    std::vector<TilePlan> plans;  // one per repetition
};

NetworkEvaluation evaluate_network(const NetworkSpec& net, const QuantScheme& scheme,
                                   const Device& device);

/// Never throws for resource problems: infeasibility is reported.
QosReport network_qos(const NetworkSpec& net, const QuantScheme& scheme, const Device& device);

/// Total cycles re-derived from per-repetition plans.
Cycles total_cycles_from_plans(const std::vector<TilePlan>& plans, const AcceleratorConfig& accel);

} // namespace codesign
