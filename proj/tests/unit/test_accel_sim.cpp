#include <doctest.h>

#include "support.hpp"

#include "codesign/accel_sim.hpp"

#include <map>
#include <random>

using namespace codesign;
using namespace testsupport;

namespace {

TilePlan plan_of(std::vector<Cycles> stage_cycles, Count tiles) {
    TilePlan p;
    p.tile_count = tiles;
    for (Cycles c : stage_cycles) {
        PlanStage s;
        s.per_tile_cycles = c;
        p.stages.push_back(s);
    }
    return p;
}

SimResult run(const TilePlan& p, std::optional<std::vector<std::vector<Cycles>>> jitter = {}, Count slots = 1,
              bool trace = false) {
    SimConfig cfg;
    cfg.plan = p;
    cfg.jitter = std::move(jitter);
    cfg.buffer_slots = slots;
    cfg.record_trace = trace;
    return simulate(cfg);
}

// Checks event ordering from the trace alone; returns the number of problems.
int trace_problems(const SimResult& r, const TilePlan& p, const std::vector<std::vector<Cycles>>& dur) {
    int problems = 0;
    const auto n = p.stages.size();
    const auto tiles = static_cast<std::size_t>(p.tile_count);
    std::vector<std::vector<Cycles>> start(n, std::vector<Cycles>(tiles, 0)), finish = start, depart = start;
    std::vector<std::vector<int>> seen(n, std::vector<int>(tiles, 0));
    std::vector<int> next_tile(n, 0);
    for (const auto& e : r.trace) {
        const auto s = static_cast<std::size_t>(e.stage);
        const auto t = static_cast<std::size_t>(e.tile);
        switch (e.event) {
        case SimEvent::Start:
            // Tiles enter every stage in order.
            problems += e.tile != next_tile[s]++;
            start[s][t] = e.cycle;
            break;
        case SimEvent::Finish: finish[s][t] = e.cycle; break;
        case SimEvent::Depart: depart[s][t] = e.cycle; break;
        }
        ++seen[s][t];
    }
    Cycles last_depart = 0;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t t = 0; t < tiles; ++t) {
            problems += seen[s][t] != 3;
            problems += finish[s][t] != start[s][t] + dur[s][t];
            problems += depart[s][t] < finish[s][t];
            // One tile at a time: the next start waits for this departure.
            if (t + 1 < tiles) problems += start[s][t + 1] < depart[s][t];
            if (s > 0) problems += start[s][t] < depart[s - 1][t];
            if (s + 1 == n) last_depart = std::max(last_depart, depart[s][t]);
        }
    problems += last_depart != r.total_cycles;
    return problems;
}

std::vector<std::vector<Cycles>> nominal(const TilePlan& p) {
    std::vector<std::vector<Cycles>> d;
    for (const auto& s : p.stages) d.emplace_back(static_cast<std::size_t>(p.tile_count), s.per_tile_cycles);
    return d;
}

} // namespace

TEST_SUITE("accel_sim") {

TEST_CASE("three stages, ten tiles: 2720 cycles") {
    const auto p = plan_of({100, 250, 120}, 10);
    CHECK(run(p).total_cycles == 2720);
    CHECK(bundle_latency_cycles(p) == 2720);
}

TEST_CASE("two tiles follow the hand-unrolled schedule") {
    const auto r = run(plan_of({100, 250, 120}, 2), {}, 1, true);
    // (stage, tile) -> start cycle, worked out by hand.
    const std::map<std::pair<int, int>, Cycles> expect{{{0, 0}, 0},   {{0, 1}, 100}, {{1, 0}, 100},
                                                       {{1, 1}, 350}, {{2, 0}, 350}, {{2, 1}, 600}};
    int starts = 0;
    for (const auto& e : r.trace)
        if (e.event == SimEvent::Start) {
            ++starts;
            CHECK(e.cycle == expect.at({e.stage, e.tile}));
        }
    CHECK(starts == 6);
    CHECK(r.total_cycles == 720);
}

TEST_CASE("single stage and single tile cases") {
    CHECK(run(plan_of({37}, 9)).total_cycles == 9 * 37);
    CHECK(run(plan_of({100, 250, 120}, 1)).total_cycles == 470);
}

TEST_CASE("compare examples") {
    SimResult r;
    r.total_cycles = 100;
    CHECK(compare(r, 100).absolute == 0);
    CHECK(compare(r, 100).relative == 0);
    r.total_cycles = 110;
    CHECK(compare(r, 100).absolute == 10);
    CHECK(compare(r, 100).relative == doctest::Approx(0.10).epsilon(1e-12));
}

TEST_CASE("malformed inputs are configuration errors") {
    CHECK_THROWS_AS(run(TilePlan{}), ConfigError);
    const auto p = plan_of({10, 20}, 3);
    CHECK_THROWS_AS(run(p, std::vector<std::vector<Cycles>>{{1, 2, 3}}), ConfigError);
    CHECK_THROWS_AS(run(p, std::vector<std::vector<Cycles>>{{1, 2, 3}, {1, 2}}), ConfigError);
    CHECK_THROWS_AS(run(p, std::vector<std::vector<Cycles>>{{1, 2, 3}, {1, 0, 3}}), ConfigError);
    CHECK_THROWS_AS(run(p, {}, 0), ConfigError);
}

TEST_CASE("property: constant stage times match the closed form exactly") {
    std::mt19937_64 g(31);
    for (int trial = 0; trial < 300; ++trial) {
        const auto p = random_constant_plan(g);
        Cycles sum = 0, slowest = 0;
        for (const auto& s : p.stages) {
            sum += s.per_tile_cycles;
            slowest = std::max(slowest, s.per_tile_cycles);
        }
        const auto r = run(p);
        CHECK(r.total_cycles == sum + static_cast<Cycles>(p.tile_count - 1) * slowest);
        CHECK(r.total_cycles == bundle_latency_cycles(p));
        CHECK(compare(r, bundle_latency_cycles(p)).relative == 0);
    }
}

TEST_CASE("property: delays never beat the closed form") {
    std::mt19937_64 g(32);
    for (int trial = 0; trial < 300; ++trial) {
        const auto p = random_constant_plan(g);
        CHECK(run(p, random_delays(g, p)).total_cycles >= bundle_latency_cycles(p));
    }
}

TEST_CASE("property: raising one per-tile time never lowers the total") {
    std::mt19937_64 g(33);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_constant_plan(g, 50);
        auto d = random_delays(g, p, 50);
        const Cycles before = run(p, d).total_cycles;
        const auto s = g() % d.size();
        const auto t = g() % d[s].size();
        d[s][t] += 1 + g() % 40;
        CHECK(run(p, d).total_cycles >= before);
    }
}

TEST_CASE("property: traces are well ordered and busy plus stall fits in the total") {
    std::mt19937_64 g(34);
    for (int trial = 0; trial < 150; ++trial) {
        const auto p = random_constant_plan(g, 60);
        const bool jitter = trial % 2;
        const auto d = jitter ? random_delays(g, p, 60) : nominal(p);
        const Count slots = 1 + static_cast<Count>(g() % 3);
        const auto r = run(p, d, slots, true);
        CHECK(trace_problems(r, p, d) == 0);
        for (std::size_t s = 0; s < p.stages.size(); ++s) {
            Cycles busy = 0;
            for (Cycles c : d[s]) busy += c;
            CHECK(r.busy_cycles[s] == busy);
            CHECK(r.busy_cycles[s] + r.stall_cycles[s] <= r.total_cycles);
        }
    }
}

TEST_CASE("a fast producer stalls behind a slow consumer") {
    const auto r = run(plan_of({10, 100}, 5));
    CHECK(r.total_cycles == 10 + 5 * 100);
    CHECK(r.stall_cycles[0] > 0);
    CHECK(r.stall_cycles[1] == 0);
}

TEST_CASE("deeper links never slow the pipeline and simulation is deterministic") {
    std::mt19937_64 g(35);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_constant_plan(g, 80);
        const auto d = random_delays(g, p, 80);
        const auto one = run(p, d, 1, true);
        const auto again = run(p, d, 1, true);
        CHECK(one.total_cycles == again.total_cycles);
        CHECK(one.trace.size() == again.trace.size());
        CHECK(run(p, d, 4).total_cycles <= one.total_cycles);
    }
}

TEST_CASE("the simulator agrees with the planner on real repetitions") {
    const auto a = load_model("dnn_a.json");
    for (const auto& plan : evaluate_network(a.net, a.scheme, default_device()).plans)
        CHECK(run(plan).total_cycles == bundle_latency_cycles(plan));
}

}
