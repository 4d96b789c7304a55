#pragma once

// Discrete-event, cycle-level simulation of the tile pipeline. Independent of
// the closed-form latency in hw_models; used to cross-check it.

#include "codesign/hw_models.hpp"

#include <optional>
#include <string>
#include <vector>

namespace codesign {

struct SimConfig {
    TilePlan plan;
    /// Optional per-stage, per-tile cycle overrides: jitter[stage][tile].
    std::optional<std::vector<std::vector<Cycles>>> jitter;
    /// Completed tiles a link may hold before the producer blocks.
    Count buffer_slots = 1;
    bool record_trace = false;
};

enum class SimEvent { Start, Finish, Depart };

const char* to_string(SimEvent e) noexcept;

struct TraceEntry {
    Cycles cycle = 0;
    int stage = 0;
    int tile = 0;
    SimEvent event = SimEvent::Start;
};

struct SimResult {
    Cycles total_cycles = 0;
    std::vector<Cycles> busy_cycles;   // per stage
    std::vector<Cycles> stall_cycles;  // per stage, blocked on a full downstream link
    std::vector<TraceEntry> trace;
};

/// Throws ConfigError on malformed overrides or an empty plan.
SimResult simulate(const SimConfig& cfg);

struct Deviation {
    double absolute = 0;
    double relative = 0;
};

Deviation compare(const SimResult& sim, Cycles analytical);

} // namespace codesign
