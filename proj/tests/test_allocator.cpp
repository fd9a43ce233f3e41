#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "treesae/allocator.hpp"
#include "treesae/errors.hpp"

using namespace treesae;

namespace {

SparseActivation acts_from(std::size_t d_f, std::vector<std::vector<std::uint32_t>> rows) {
    SparseActivation a;
    a.num_features = d_f;
    for (auto& r : rows) {
        a.rows.emplace_back();
        for (auto f : r) a.rows.back().push_back({f, 1.0});
    }
    return a;
}

oracle::Ratio as_ratio(const Payoff& p) {
    return {static_cast<std::uint64_t>(p.capacity), p.count};
}

} // namespace

TEST_CASE("payoff comparison is exact") {
    CHECK(compare_payoff({1.0, 3}, {2.0, 6}) == 0);
    CHECK(compare_payoff({1.0, 3}, {1.0, 4}) > 0);
    // 0.1 * 3 and 0.3 * 1 round to different doubles; the sign must follow
    // the real products of the stored values.
    const double a = 0.1, b = 0.3;
    const long double la = (long double)a * 3, lb = (long double)b;
    const int want = la < lb ? -1 : (la > lb ? 1 : 0);
    CHECK(compare_payoff({a, 1}, {b, 3}) == want);
    CHECK(compare_payoff({std::nextafter(1.0, 2.0), 1}, {1.0, 1}) > 0);
    // Products beyond 2^53 still compare exactly.
    const double big = std::ldexp(1.0, 53);
    CHECK(compare_payoff({big + 2, 3}, {big, 3}) > 0);
    CHECK(compare_payoff({3.0, 1}, {1.0, 3}) > 0);
}

TEST_CASE("floor_div is exact at the boundaries") {
    CHECK(floor_div(6.0, Payoff{2.0, 1}) == 3);
    CHECK(floor_div(6.0, Payoff{3.0, 2}) == 4);
    CHECK(floor_div(5.0, Payoff{3.0, 2}) == 3);
    CHECK(floor_div(0.0, 1.0) == 0);
    CHECK(floor_div(1.0, 0.1) == 9); // 0.1 is slightly above 1/10
    CHECK(floor_div(0.3, 0.1) == 2);
    CHECK_THROWS_AS(floor_div(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(floor_div(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("greedy allocation equals brute force and the s-th largest payoff") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(5);
        const std::uint64_t s = 1 + rng.uniform_index(8);
        std::vector<std::uint64_t> caps(m);
        for (auto& c : caps) c = 1 + rng.uniform_index(40);
        std::vector<double> dcaps(caps.begin(), caps.end());
        const auto g = greedy_allocate(dcaps, {}, s);
        REQUIRE(g.tau);
        CHECK(std::accumulate(g.counts.begin(), g.counts.end(), std::uint64_t{0}) == s);
        const auto bf = oracle::brute_force_tau(caps, s);
        REQUIRE(bf);
        CHECK(oracle::cmp(as_ratio(*g.tau), *bf) == 0);
        CHECK(oracle::cmp(as_ratio(*g.tau), oracle::sth_largest(caps, s)) == 0);
    }
}

TEST_CASE("feasibility holds at the optimum and fails just above it") {
    Rng rng(18);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(5);
        const std::uint64_t s = 1 + rng.uniform_index(8);
        std::vector<std::uint64_t> caps(m);
        for (auto& c : caps) c = 1 + rng.uniform_index(40);
        std::vector<double> dcaps(caps.begin(), caps.end());
        const auto tau = *greedy_allocate(dcaps, {}, s).tau;
        CHECK(feasibility(dcaps, tau, s));
        CHECK(oracle::feasible(caps, as_ratio(tau), s));
        // tau * (1 + 2^-40) as an exact rational is tau.capacity * (2^40 + 1) / (count * 2^40).
        const Payoff above{tau.capacity * (1.0 + std::ldexp(1.0, -40)), tau.count};
        CHECK_FALSE(feasibility(dcaps, above, s));
        CHECK_FALSE(feasibility(dcaps, std::nextafter(tau.value(), INFINITY) * 1.0000001, s));
    }
    const std::vector<double> caps{1.0};
    CHECK_THROWS_AS(feasibility(caps, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(feasibility(caps, -1.0, 1), std::invalid_argument);
    CHECK_FALSE(feasibility(caps, INFINITY, 1));
}

TEST_CASE("greedy handles eligibility, zero capacity and errors") {
    const std::vector<double> caps{8.0, 4.0, 100.0};
    const std::vector<std::uint8_t> elig{1, 1, 0};
    const auto g = greedy_allocate(caps, elig, 3);
    CHECK(g.counts == std::vector<std::uint64_t>{2, 1, 0});
    CHECK(compare_payoff(*g.tau, {4.0, 1}) == 0);
    CHECK_FALSE(greedy_allocate(caps, {}, 0).tau);
    CHECK_THROWS_AS(greedy_allocate(caps, std::vector<std::uint8_t>{0, 0, 0}, 1), AllocationError);
    CHECK_THROWS_AS(greedy_allocate(std::vector<double>{0.0, 0.0}, {}, 1), AllocationError);
    CHECK_THROWS_AS(greedy_allocate(caps, std::vector<std::uint8_t>{1}, 1), DimensionError);
    // Equal payoffs go to the lower index.
    CHECK(greedy_allocate(std::vector<double>{3.0, 3.0}, {}, 1).counts ==
          std::vector<std::uint64_t>{1, 0});
}

TEST_CASE("ledger conserves loss mass in per-instance mode") {
    CapacityLedger led(4);
    const auto a = acts_from(4, {{0, 2}, {2}, {}, {1, 2, 3}});
    led.record_batch(a, 0.5);
    const double total = std::accumulate(led.capacity.begin(), led.capacity.end(), 0.0);
    CHECK(total == doctest::Approx(0.5 * a.nnz()));
    CHECK(led.capacity[2] == doctest::Approx(1.5));
    CHECK(led.activation_count == std::vector<std::uint64_t>{1, 1, 3, 1});
    CHECK(led.last_active == std::vector<std::uint64_t>{1, 4, 4, 4});
    CHECK(led.tokens_seen == 4);
}

TEST_CASE("ledger per-batch mode counts each firing feature once") {
    CapacityLedger led(4);
    const auto a = acts_from(4, {{0, 2}, {2}, {}, {1, 2}});
    led.record_batch(a, 2.0, CapacityMode::per_batch);
    CHECK(led.capacity == std::vector<double>{2.0, 2.0, 2.0, 0.0});
    CHECK(led.activation_count == std::vector<std::uint64_t>{1, 1, 3, 0});
    led.reset_capacity();
    CHECK(led.capacity == std::vector<double>(4, 0.0));
    CHECK(led.activation_count[2] == 3);
}

TEST_CASE("dead detection uses the token window") {
    CapacityLedger led(3);
    led.record_activity(acts_from(3, {{0}, {}, {1}}));
    // Tokens seen 3; feature 0 last at 1, feature 1 at 3, feature 2 never.
    CHECK_FALSE(led.is_dead(0, 3));
    CHECK(led.is_dead(0, 2));
    CHECK_FALSE(led.is_dead(1, 1));
    CHECK(led.is_dead(2, 3));
    CHECK_FALSE(led.is_dead(2, 4));
    CHECK(led.dead_mask(2) == std::vector<std::uint8_t>{1, 0, 1});
    CHECK(eligibility(led, 0, 1.0 / 3));
    CHECK_FALSE(eligibility(led, 0, 0.5));
    CHECK_FALSE(eligibility(led, 2, 0.0));
    CHECK_FALSE(eligibility(CapacityLedger(3), 0, 0.0));
}

TEST_CASE("reallocation moves dead children to the greedy optimum") {
    // Layer 0: features 0, 1, 2. Layer 1: features 3..8.
    TreeTopology topo({3, 6}, {kRoot, kRoot, kRoot, 0, 0, 0, 0, 1, 1});
    CapacityLedger led(9);
    led.tokens_seen = 100;
    led.activation_count = {10, 10, 10, 5, 5, 5, 5, 5, 5};
    led.capacity = {1.0, 5.0, 0.0, 0, 0, 0, 0, 0, 0};
    // Capacities 1 and 5 with 6 children: greedy gives 1 and 5.
    // Live children: 3 under 0, 7 under 1. Dead: 4, 5, 6, 8.
    const std::vector<std::vector<std::uint32_t>> pools{{}, {4, 5, 6, 8}};
    const auto plan = reallocate(topo, led, pools, ReallocationConfig{0.01, 0.0});
    REQUIRE(plan.layers.size() == 2);
    CHECK(plan.layers[0].moves.empty());
    const auto& lp = plan.layers[1];
    CHECK(lp.candidates == std::vector<std::uint32_t>{0, 1, 2});
    CHECK(lp.optimal_counts == std::vector<std::uint64_t>{1, 5, 0});
    CHECK(compare_payoff(*lp.tau, {1.0, 1}) == 0);
    // Parent 0 is full with its live child; all four dead go to parent 1.
    CHECK(lp.moves == std::vector<Move>{{4, 0, 1}, {5, 0, 1}, {6, 0, 1}});
    CHECK(topo.allocation(1) == std::vector<std::uint32_t>{0, 1, 1, 1, 1, 1});
    CHECK(plan.total_moves() == 3);
    CHECK(is_valid(topo));
    const auto audit = format_audit(12, plan);
    CHECK(audit.find("step=12 layer=1 tau=1/1 moves=4->1,5->1,6->1") != std::string::npos);
}

TEST_CASE("reallocation never moves live children and skips dead or ineligible parents") {
    TreeTopology topo({2, 4}, {kRoot, kRoot, 0, 0, 1, 1});
    CapacityLedger led(6);
    led.tokens_seen = 1000;
    led.activation_count = {100, 0, 1, 1, 1, 1};
    led.capacity = {3.0, 50.0, 0, 0, 0, 0};
    const auto before = topo;
    const auto plan = reallocate(topo, led, {{}, {3, 5}}, ReallocationConfig{0.01, 0.0});
    // Parent 1 never fired, so only parent 0 is a candidate.
    CHECK(plan.layers[1].candidates == std::vector<std::uint32_t>{0});
    CHECK(topo.parent(2) == before.parent(2));
    CHECK(topo.parent(4) == before.parent(4));
    CHECK(topo.parent(5) == 0);
    // Dead parents are not candidates either.
    TreeTopology t2({2, 2}, {kRoot, kRoot, 0, 1});
    led = CapacityLedger(4);
    led.tokens_seen = 10;
    led.activation_count = {5, 5, 1, 1};
    led.capacity = {1.0, 1.0, 0, 0};
    const auto p2 = reallocate(t2, led, {{0}, {2}}, ReallocationConfig{0.01, 0.0});
    CHECK(p2.layers[1].candidates == std::vector<std::uint32_t>{1});
    CHECK(t2.parent(2) == 1);
}

TEST_CASE("reallocation skips a layer without eligible parents") {
    TreeTopology topo({1, 2}, {kRoot, 0, 0});
    CapacityLedger led(3);
    const auto plan = reallocate(topo, led, {{}, {1}});
    CHECK(plan.layers[1].skipped);
    CHECK(topo.parent(1) == 0);
    CHECK(format_audit(5, plan).find("skipped") != std::string::npos);
    CHECK_THROWS_AS(reallocate(topo, led, {{}}), DimensionError);
    CHECK_THROWS_AS(reallocate(topo, led, {{1}, {}}), std::invalid_argument);
}

TEST_CASE("root share adds ROOT as a candidate") {
    TreeTopology topo({1, 2}, {kRoot, 0, 0});
    CapacityLedger led(3);
    led.tokens_seen = 10;
    led.activation_count = {5, 1, 1};
    led.capacity = {2.0, 0, 0};
    const auto plan = reallocate(topo, led, {{}, {1, 2}}, ReallocationConfig{0.01, 1.0});
    CHECK(plan.layers[1].candidates == std::vector<std::uint32_t>{0, kRoot});
    CHECK(plan.layers[1].optimal_counts == std::vector<std::uint64_t>{1, 1});
    CHECK(topo.parent(1) == 0);
    CHECK(topo.parent(2) == kRoot);
}

TEST_CASE("flush moves dead features under ROOT") {
    TreeTopology topo({2, 3}, {kRoot, kRoot, 0, 1, 1});
    const auto plan = flush_dead_to_root(topo, {{1}, {4, 2}});
    CHECK(topo.parents() == std::vector<std::uint32_t>{kRoot, kRoot, kRoot, 1, kRoot});
    CHECK(plan.total_moves() == 2);
    CHECK(format_audit(7, plan).find("2->ROOT,4->ROOT") != std::string::npos);
}

TEST_CASE("dead pools per layer") {
    TreeTopology topo({2, 2}, {kRoot, kRoot, 0, 1});
    CapacityLedger led(4);
    led.record_activity(acts_from(4, {{0, 3}, {0}}));
    CHECK(dead_pools(topo, led, 2) == std::vector<std::vector<std::uint32_t>>{{1}, {2}});
}

TEST_CASE("reallocation schedule") {
    CHECK(schedule_next(0, 0) == 3000);
    CHECK(schedule_next(1, 3000) == 6000);
    CHECK(schedule_next(2, 6000) == 10000);
    CHECK(schedule_next(3, 10000) == 10000);
    CHECK(schedule_steps(30000) == std::vector<std::uint64_t>{3000, 9000, 19000, 29000});
    CHECK(schedule_steps(2999).empty());
    ScheduleConfig add{100, 250, ScheduleConfig::Growth::add, 50};
    CHECK(schedule_steps(700, add) == std::vector<std::uint64_t>{100, 250, 450, 700});
    CHECK(flush_step(3000) == 1500);
}
