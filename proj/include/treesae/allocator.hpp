#pragma once

// Dynamic reallocation of dead child features.
//
// Each candidate parent p carries a capacity C_p (training loss accumulated
// on rows where p fires). Giving p k children yields payoff C_p / k; a layer
// with s children is allocated so the smallest payoff over used parents is
// as large as possible. The greedy heap hands out one child at a time to the
// parent whose next payoff C_p / (k_p + 1) is largest.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treesae/topology.hpp"

namespace treesae {

// Exact rational C / k with C a finite double >= 0 and k >= 1.
struct Payoff {
    double capacity = 0.0;
    std::uint64_t count = 1;

    double value() const noexcept { return capacity / static_cast<double>(count); }
};

// Sign of a.capacity * b.count - b.capacity * a.count, computed exactly.
int compare_payoff(const Payoff& a, const Payoff& b) noexcept;

// floor(capacity / tau) for tau = tau.capacity / tau.count > 0, exact.
std::uint64_t floor_div(double capacity, const Payoff& tau);
// floor(capacity / tau) for a positive double tau, exact.
std::uint64_t floor_div(double capacity, double tau);

// True iff Σ_p floor(C_p / tau) >= s. Throws std::invalid_argument on tau <= 0.
bool feasibility(std::span<const double> capacities, double tau, std::uint64_t s);
bool feasibility(std::span<const double> capacities, const Payoff& tau, std::uint64_t s);

struct GreedyResult {
    std::vector<std::uint64_t> counts; // k*_p, one per input capacity
    // Smallest payoff over parents with k*_p > 0; nullopt when s == 0.
    std::optional<Payoff> tau;
};

// `eligible` is empty (all eligible) or one flag per capacity. Throws
// AllocationError when s > 0 and no parent is eligible.
GreedyResult greedy_allocate(std::span<const double> capacities,
                             std::span<const std::uint8_t> eligible, std::uint64_t s);

// per_instance: batch loss added once per row a feature fires on.
// per_batch: once per batch for every feature that fired at least once.
enum class CapacityMode { per_instance, per_batch };

struct CapacityLedger {
    std::vector<double> capacity;
    std::vector<std::uint64_t> activation_count;
    // 1-based token index of the most recent activation, 0 if never active.
    std::vector<std::uint64_t> last_active;
    std::uint64_t tokens_seen = 0;

    CapacityLedger() = default;
    explicit CapacityLedger(std::size_t d_f)
        : capacity(d_f, 0.0), activation_count(d_f, 0), last_active(d_f, 0) {}

    std::size_t size() const noexcept { return capacity.size(); }

    // One training batch: every row counts as one token.
    void record_batch(const SparseActivation& acts, double batch_loss,
                      CapacityMode mode = CapacityMode::per_instance);
    // Only updates activity, not capacity.
    void record_activity(const SparseActivation& acts);

    // No activation during the last `window` tokens.
    bool is_dead(std::uint32_t feature, std::uint64_t window) const;
    std::vector<std::uint8_t> dead_mask(std::uint64_t window) const;

    void reset_capacity();

    bool operator==(const CapacityLedger&) const = default;
};

inline constexpr double kDefaultEligibilityRate = 1.0 / 50000.0;

// Activation rate (activations / tokens seen) >= rate. False before any token.
bool eligibility(const CapacityLedger& ledger, std::uint32_t feature,
                 double rate = kDefaultEligibilityRate);

struct ReallocationConfig {
    double eligibility_rate = kDefaultEligibilityRate;
    // ROOT joins every layer's candidate set with capacity
    // root_capacity_share * Σ candidate capacities; 0 leaves it out (except
    // for the first layer, whose only possible parent is ROOT).
    double root_capacity_share = 0.0;
};

struct Move {
    std::uint32_t child;
    std::uint32_t from;
    std::uint32_t to;
    bool operator==(const Move&) const = default;
};

struct LayerPlan {
    std::size_t layer = 0;
    std::vector<std::uint32_t> candidates; // flat parent indices, kRoot allowed, ascending
    std::vector<std::uint64_t> optimal_counts; // k*_l aligned with candidates
    std::optional<Payoff> tau;
    std::vector<Move> moves;
    bool skipped = false;
    std::string note;
};

struct AllocationPlan {
    std::vector<LayerPlan> layers;

    std::size_t total_moves() const noexcept;
};

// Algorithm: for each layer in ascending order, run the greedy allocator on
// eligible lower-layer parents, then move dead children (ascending) first-fit
// into parents (ascending) whose live child count is below k*_p. Live
// children never move. `dead_pools[l]` lists dead features of layer l.
AllocationPlan reallocate(TreeTopology& topology, const CapacityLedger& ledger,
                          const std::vector<std::vector<std::uint32_t>>& dead_pools,
                          const ReallocationConfig& config = {});

// Moves every listed dead feature under ROOT.
AllocationPlan flush_dead_to_root(TreeTopology& topology,
                                  const std::vector<std::vector<std::uint32_t>>& dead_pools);

// Dead features per layer, ascending.
std::vector<std::vector<std::uint32_t>> dead_pools(const TreeTopology& topology,
                                                   const CapacityLedger& ledger,
                                                   std::uint64_t window);

// One audit line per layer: "step=<s> layer=<l> tau=<num>/<den> moves=c->p,...".
std::string format_audit(std::uint64_t step, const AllocationPlan& plan);

struct ScheduleConfig {
    std::uint64_t first_interval = 3000;
    std::uint64_t max_interval = 10000;
    enum class Growth { multiply, add } growth = Growth::multiply;
    std::uint64_t growth_factor = 2;
};

// Interval to wait after `event_count` completed events, given the previous
// interval. event_count == 0 yields the first interval.
std::uint64_t schedule_next(std::uint64_t event_count, std::uint64_t last_interval,
                            const ScheduleConfig& config = {});

// All reallocation steps in (0, total_steps].
std::vector<std::uint64_t> schedule_steps(std::uint64_t total_steps,
                                          const ScheduleConfig& config = {});

// Step of the one-off dead-to-root flush: half of training.
inline std::uint64_t flush_step(std::uint64_t total_steps) { return total_steps / 2; }

} // namespace treesae
