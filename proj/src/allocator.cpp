#include "treesae/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "treesae/errors.hpp"

namespace treesae {

namespace {

// Sign of a*m - b*n without rounding error. m and n are integers that fit in
// a double exactly. Uses the error-free product p + e == a*m: rounding is
// monotone, so the rounded products order correctly unless they are equal,
// in which case the residuals decide.
int compare_products(double a, double m, double b, double n) noexcept {
    const double p1 = a * m;
    const double p2 = b * n;
    if (p1 < p2) return -1;
    if (p1 > p2) return 1;
    const double e1 = std::fma(a, m, -p1);
    const double e2 = std::fma(b, n, -p2);
    if (e1 < e2) return -1;
    if (e1 > e2) return 1;
    return 0;
}

void check_capacity(double c) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
        throw std::invalid_argument("capacity must be finite and >= 0");
    }
}

} // namespace

int compare_payoff(const Payoff& a, const Payoff& b) noexcept {
    return compare_products(a.capacity, static_cast<double>(b.count), b.capacity,
                            static_cast<double>(a.count));
}

std::uint64_t floor_div(double capacity, const Payoff& tau) {
    if (!(tau.capacity > 0.0) || tau.count == 0) {
        throw std::invalid_argument("floor_div: tau must be > 0");
    }
    check_capacity(capacity);
    const double k = static_cast<double>(tau.count);
    // capacity / tau == capacity * k / tau.capacity; start from the float
    // estimate and fix it up with exact comparisons.
    double q = std::floor(capacity * k / tau.capacity);
    if (q < 0.0) q = 0.0;
    // q * tau.capacity <= capacity * k must hold...
    while (q > 0.0 && compare_products(tau.capacity, q, capacity, k) > 0) q -= 1.0;
    // ...and (q + 1) * tau.capacity must exceed it.
    while (compare_products(tau.capacity, q + 1.0, capacity, k) <= 0) q += 1.0;
    return static_cast<std::uint64_t>(q);
}

std::uint64_t floor_div(double capacity, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        if (std::isinf(tau) && tau > 0.0) return 0;
        throw std::invalid_argument("floor_div: tau must be > 0");
    }
    return floor_div(capacity, Payoff{tau, 1});
}

bool feasibility(std::span<const double> capacities, const Payoff& tau, std::uint64_t s) {
    if (!(tau.capacity > 0.0) || tau.count == 0) {
        throw std::invalid_argument("feasibility: tau must be > 0");
    }
    std::uint64_t total = 0;
    for (double c : capacities) {
        total += floor_div(c, tau);
        if (total >= s) return true;
    }
    return total >= s;
}

bool feasibility(std::span<const double> capacities, double tau, std::uint64_t s) {
    if (!(tau > 0.0) || std::isnan(tau)) {
        throw std::invalid_argument("feasibility: tau must be > 0, got " + std::to_string(tau));
    }
    if (std::isinf(tau)) {
        for (double c : capacities) check_capacity(c);
        return s == 0;
    }
    return feasibility(capacities, Payoff{tau, 1}, s);
}

GreedyResult greedy_allocate(std::span<const double> capacities,
                             std::span<const std::uint8_t> eligible, std::uint64_t s) {
    if (!eligible.empty() && eligible.size() != capacities.size()) {
        throw DimensionError("greedy_allocate: eligibility flags length mismatch");
    }
    for (double c : capacities) check_capacity(c);
    GreedyResult result;
    result.counts.assign(capacities.size(), 0);
    if (s == 0) return result;

    struct Entry {
        Payoff next; // payoff if this parent receives one more child
        std::size_t parent;
    };
    // priority_queue pops the "largest"; lower priority = smaller payoff,
    // or equal payoff with the higher index.
    auto lower_priority = [](const Entry& a, const Entry& b) {
        const int c = compare_payoff(a.next, b.next);
        if (c != 0) return c < 0;
        return a.parent > b.parent;
    };
    std::vector<Entry> init;
    bool any_positive = false;
    for (std::size_t p = 0; p < capacities.size(); ++p) {
        if (!eligible.empty() && !eligible[p]) continue;
        init.push_back({Payoff{capacities[p], 1}, p});
        any_positive = any_positive || capacities[p] > 0.0;
    }
    if (init.empty() || !any_positive) {
        throw AllocationError("greedy_allocate: no eligible parent with positive capacity for " +
                              std::to_string(s) + " children");
    }
    std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(
        lower_priority, std::move(init));

    for (std::uint64_t assigned = 0; assigned < s; ++assigned) {
        auto top = heap.top();
        heap.pop();
        auto& k = result.counts[top.parent];
        k += 1;
        heap.push({Payoff{capacities[top.parent], k + 1}, top.parent});
    }
    for (std::size_t p = 0; p < capacities.size(); ++p) {
        if (result.counts[p] == 0) continue;
        const Payoff mine{capacities[p], result.counts[p]};
        if (!result.tau || compare_payoff(mine, *result.tau) < 0) result.tau = mine;
    }
    return result;
}

void CapacityLedger::record_batch(const SparseActivation& acts, double batch_loss,
                                  CapacityMode mode) {
    if (mode == CapacityMode::per_instance) {
        for (const auto& row : acts.rows)
            for (const auto& e : row) capacity[e.feature] += batch_loss;
    } else {
        std::vector<std::uint8_t> seen(capacity.size(), 0);
        for (const auto& row : acts.rows)
            for (const auto& e : row)
                if (!seen[e.feature]) {
                    seen[e.feature] = 1;
                    capacity[e.feature] += batch_loss;
                }
    }
    record_activity(acts);
}

void CapacityLedger::record_activity(const SparseActivation& acts) {
    for (std::size_t r = 0; r < acts.rows.size(); ++r) {
        const std::uint64_t token = tokens_seen + r + 1;
        for (const auto& e : acts.rows[r]) {
            activation_count[e.feature] += 1;
            last_active[e.feature] = token;
        }
    }
    tokens_seen += acts.rows.size();
}

bool CapacityLedger::is_dead(std::uint32_t feature, std::uint64_t window) const {
    return tokens_seen - last_active.at(feature) >= window;
}

std::vector<std::uint8_t> CapacityLedger::dead_mask(std::uint64_t window) const {
    std::vector<std::uint8_t> out(size());
    for (std::uint32_t i = 0; i < size(); ++i) out[i] = is_dead(i, window) ? 1 : 0;
    return out;
}

void CapacityLedger::reset_capacity() { std::fill(capacity.begin(), capacity.end(), 0.0); }

bool eligibility(const CapacityLedger& ledger, std::uint32_t feature, double rate) {
    if (ledger.tokens_seen == 0) return false;
    const auto count = ledger.activation_count.at(feature);
    if (count == 0) return false;
    // count / tokens >= rate, i.e. count >= rate * tokens.
    return static_cast<double>(count) >= rate * static_cast<double>(ledger.tokens_seen);
}

std::size_t AllocationPlan::total_moves() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.moves.size();
    return n;
}

AllocationPlan reallocate(TreeTopology& topology, const CapacityLedger& ledger,
                          const std::vector<std::vector<std::uint32_t>>& pools,
                          const ReallocationConfig& config) {
    const std::size_t layers = topology.num_layers();
    if (pools.size() != layers) {
        throw DimensionError("reallocate: need one dead pool per layer");
    }
    if (ledger.size() != topology.num_features()) {
        throw DimensionError("reallocate: ledger size disagrees with topology");
    }
    std::vector<std::uint8_t> is_dead(topology.num_features(), 0);
    for (std::size_t l = 0; l < layers; ++l) {
        for (auto f : pools[l]) {
            if (topology.layer_of(f) != l) {
                throw std::invalid_argument("reallocate: dead feature " + std::to_string(f) +
                                            " is not in layer " + std::to_string(l));
            }
            is_dead[f] = 1;
        }
    }

    AllocationPlan plan;
    for (std::size_t l = 0; l < layers; ++l) {
        LayerPlan lp;
        lp.layer = l;
        const auto s_l = static_cast<std::uint64_t>(topology.layer_sizes()[l]);

        std::vector<double> caps;
        if (l == 0) {
            // Only ROOT sits below the first layer.
            lp.candidates = {kRoot};
            caps = {1.0};
        } else {
            double sum = 0.0;
            for (std::uint32_t p = 0; p < topology.layer_begin(l); ++p) {
                if (is_dead[p] || !eligibility(ledger, p, config.eligibility_rate)) continue;
                lp.candidates.push_back(p);
                caps.push_back(ledger.capacity[p]);
                sum += ledger.capacity[p];
            }
            if (config.root_capacity_share > 0.0) {
                lp.candidates.push_back(kRoot);
                caps.push_back(config.root_capacity_share * sum);
            }
        }

        GreedyResult greedy;
        try {
            greedy = greedy_allocate(caps, {}, s_l);
        } catch (const AllocationError& e) {
            lp.skipped = true;
            lp.note = e.what();
            plan.layers.push_back(std::move(lp));
            continue;
        }
        lp.optimal_counts = greedy.counts;
        lp.tau = greedy.tau;

        // Live children per candidate under the current assignment.
        std::vector<std::uint64_t> live(lp.candidates.size(), 0);
        auto slot_of = [&](std::uint32_t parent) -> std::ptrdiff_t {
            const auto it = std::lower_bound(lp.candidates.begin(), lp.candidates.end(), parent);
            if (it == lp.candidates.end() || *it != parent) return -1;
            return it - lp.candidates.begin();
        };
        for (auto c = topology.layer_begin(l); c < topology.layer_end(l); ++c) {
            if (is_dead[c]) continue;
            const auto slot = slot_of(topology.parent(c));
            if (slot >= 0) live[static_cast<std::size_t>(slot)] += 1;
        }

        std::vector<std::uint32_t> dead_children = pools[l];
        std::sort(dead_children.begin(), dead_children.end());
        std::size_t slot = 0;
        std::uint64_t filled = 0; // dead children given to the current slot
        for (auto child : dead_children) {
            while (slot < lp.candidates.size() &&
                   live[slot] + filled >= lp.optimal_counts[slot]) {
                ++slot;
                filled = 0;
            }
            if (slot == lp.candidates.size()) break;
            const auto target = lp.candidates[slot];
            ++filled;
            const auto from = topology.parent(child);
            if (from != target) {
                topology.set_parent(child, target);
                lp.moves.push_back({child, from, target});
            }
        }
        plan.layers.push_back(std::move(lp));
    }
    return plan;
}

AllocationPlan flush_dead_to_root(TreeTopology& topology,
                                  const std::vector<std::vector<std::uint32_t>>& pools) {
    AllocationPlan plan;
    for (std::size_t l = 0; l < pools.size(); ++l) {
        LayerPlan lp;
        lp.layer = l;
        lp.candidates = {kRoot};
        lp.note = "flush";
        std::vector<std::uint32_t> sorted = pools[l];
        std::sort(sorted.begin(), sorted.end());
        for (auto f : sorted) {
            const auto from = topology.parent(f);
            if (from == kRoot) continue;
            topology.set_parent(f, kRoot);
            lp.moves.push_back({f, from, kRoot});
        }
        plan.layers.push_back(std::move(lp));
    }
    return plan;
}

std::vector<std::vector<std::uint32_t>> dead_pools(const TreeTopology& topology,
                                                   const CapacityLedger& ledger,
                                                   std::uint64_t window) {
    std::vector<std::vector<std::uint32_t>> pools(topology.num_layers());
    for (std::size_t l = 0; l < topology.num_layers(); ++l)
        for (auto f = topology.layer_begin(l); f < topology.layer_end(l); ++f)
            if (ledger.is_dead(f, window)) pools[l].push_back(f);
    return pools;
}

std::string format_audit(std::uint64_t step, const AllocationPlan& plan) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& lp : plan.layers) {
        os << "step=" << step << " layer=" << lp.layer << " tau=";
        if (lp.tau) {
            os << lp.tau->capacity << '/' << lp.tau->count;
        } else {
            os << "none";
        }
        if (lp.skipped) os << " skipped";
        if (!lp.note.empty() && !lp.skipped) os << " note=" << lp.note;
        os << " moves=";
        for (std::size_t i = 0; i < lp.moves.size(); ++i) {
            if (i) os << ',';
            os << lp.moves[i].child << "->";
            if (lp.moves[i].to == kRoot) {
                os << "ROOT";
            } else {
                os << lp.moves[i].to;
            }
        }
        os << '\n';
    }
    return os.str();
}

std::uint64_t schedule_next(std::uint64_t event_count, std::uint64_t last_interval,
                            const ScheduleConfig& config) {
    if (event_count == 0) return std::min(config.first_interval, config.max_interval);
    const std::uint64_t grown = config.growth == ScheduleConfig::Growth::multiply
                                    ? last_interval * config.growth_factor
                                    : last_interval + config.growth_factor;
    return std::max<std::uint64_t>(1, std::min(grown, config.max_interval));
}

std::vector<std::uint64_t> schedule_steps(std::uint64_t total_steps, const ScheduleConfig& config) {
    std::vector<std::uint64_t> steps;
    std::uint64_t step = 0;
    std::uint64_t interval = 0;
    for (std::uint64_t events = 0;; ++events) {
        interval = schedule_next(events, interval, config);
        if (interval == 0) break;
        step += interval;
        if (step > total_steps) break;
        steps.push_back(step);
    }
    return steps;
}

} // namespace treesae
