#include "codesign/accel_sim.hpp"

#include "codesign/errors.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <queue>

namespace codesign {

const char* to_string(SimEvent e) noexcept {
    switch (e) {
    case SimEvent::Start: return "start";
    case SimEvent::Finish: return "finish";
    case SimEvent::Depart: return "depart";
    }
    return "?";
}

namespace {

struct StageState {
    bool busy = false;
    bool holding = false;  // finished a tile that has not left yet
    int tile = -1;
    Cycles finished_at = 0;
};

} // namespace

SimResult simulate(const SimConfig& cfg) {
    const auto& plan = cfg.plan;
    const std::size_t n = plan.stages.size();
    if (n == 0) throw ConfigError("plan has no stages");
    if (plan.tile_count < 1) throw ConfigError("plan needs at least one tile");
    if (cfg.buffer_slots < 1) throw ConfigError("buffer_slots must be >= 1");
    const auto tiles = static_cast<std::size_t>(plan.tile_count);
    if (cfg.jitter) {
        if (cfg.jitter->size() != n)
            throw ConfigError("jitter has " + std::to_string(cfg.jitter->size()) + " stage lists, plan has " +
                              std::to_string(n) + " stages");
        for (std::size_t s = 0; s < n; ++s) {
            if ((*cfg.jitter)[s].size() != tiles)
                throw ConfigError("jitter list for stage " + std::to_string(s) + " must have " +
                                  std::to_string(tiles) + " entries");
            for (Cycles c : (*cfg.jitter)[s])
                if (c < 1) throw ConfigError("per-tile cycles must be >= 1");
        }
    }
    for (const auto& st : plan.stages)
        if (st.per_tile_cycles < 1) throw ConfigError("per-tile cycles must be >= 1");

    auto duration = [&](std::size_t s, int t) {
        return cfg.jitter ? (*cfg.jitter)[s][t] : plan.stages[s].per_tile_cycles;
    };

    SimResult res;
    res.busy_cycles.assign(n, 0);
    res.stall_cycles.assign(n, 0);
    std::vector<StageState> st(n);
    std::vector<std::deque<int>> link(n);  // link[s]: tiles waiting between s and s+1
    int next_source_tile = 0;
    std::size_t sunk = 0;

    using Finish = std::pair<Cycles, std::size_t>;
    std::priority_queue<Finish, std::vector<Finish>, std::greater<>> events;
    auto log = [&](Cycles c, std::size_t s, int t, SimEvent e) {
        if (cfg.record_trace) res.trace.push_back({c, static_cast<int>(s), t, e});
    };

    Cycles now = 0;
    while (true) {
        while (!events.empty() && events.top().first == now) {
            const auto s = events.top().second;
            events.pop();
            st[s].busy = false;
            st[s].holding = true;
            st[s].finished_at = now;
            res.busy_cycles[s] += duration(s, st[s].tile);
            log(now, s, st[s].tile, SimEvent::Finish);
        }

        // Resolve every same-cycle hand-off before time advances; downstream
        // first so freed slots propagate upstream within the pass.
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t s = n; s-- > 0;) {
                auto& me = st[s];
                if (me.holding) {
                    const bool last = s + 1 == n;
                    if (last || static_cast<Count>(link[s].size()) < cfg.buffer_slots) {
                        res.stall_cycles[s] += now - me.finished_at;
                        log(now, s, me.tile, SimEvent::Depart);
                        if (last) {
                            ++sunk;
                            res.total_cycles = now;
                        } else {
                            link[s].push_back(me.tile);
                        }
                        me.holding = false;
                        changed = true;
                    }
                }
                if (!me.busy && !me.holding) {
                    int tile = -1;
                    if (s == 0) {
                        if (next_source_tile < static_cast<int>(tiles)) tile = next_source_tile++;
                    } else if (!link[s - 1].empty()) {
                        tile = link[s - 1].front();
                        link[s - 1].pop_front();
                    }
                    if (tile >= 0) {
                        me.busy = true;
                        me.tile = tile;
                        log(now, s, tile, SimEvent::Start);
                        events.emplace(now + duration(s, tile), s);
                        changed = true;
                    }
                }
            }
        }

        if (events.empty()) break;
        now = events.top().first;
    }
    if (sunk != tiles) throw ConfigError("simulation deadlocked");
    return res;
}

Deviation compare(const SimResult& sim, Cycles analytical) {
    Deviation d;
    const double diff = static_cast<double>(sim.total_cycles) - static_cast<double>(analytical);
    d.absolute = std::abs(diff);
    if (analytical == 0)
        d.relative = d.absolute == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    else
        d.relative = d.absolute / static_cast<double>(analytical);
    return d;
}

} // namespace codesign
