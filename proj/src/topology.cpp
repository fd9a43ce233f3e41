#include "treesae/topology.hpp"

#include <algorithm>
#include <numeric>

#include "treesae/errors.hpp"

namespace treesae {

TreeTopology::TreeTopology(std::vector<std::uint32_t> layer_sizes,
                           std::vector<std::uint32_t> parents)
    : layer_sizes_(std::move(layer_sizes)), parents_(std::move(parents)) {
    offsets_.assign(1, 0);
    for (auto s : layer_sizes_) offsets_.push_back(offsets_.back() + s);
}

TreeTopology TreeTopology::flat(std::uint32_t d_f) {
    return TreeTopology({d_f}, std::vector<std::uint32_t>(d_f, kRoot));
}

TreeTopology TreeTopology::random(std::vector<std::uint32_t> layer_sizes, Rng& rng) {
    std::vector<std::uint32_t> parents;
    std::uint32_t lower = 0;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        for (std::uint32_t i = 0; i < layer_sizes[l]; ++i) {
            parents.push_back(l == 0 ? kRoot
                                     : static_cast<std::uint32_t>(rng.uniform_index(lower)));
        }
        lower += layer_sizes[l];
    }
    return TreeTopology(std::move(layer_sizes), std::move(parents));
}

TreeTopology TreeTopology::from_allocation(
    std::vector<std::uint32_t> layer_sizes,
    const std::vector<std::vector<std::uint32_t>>& allocation) {
    if (allocation.size() != layer_sizes.size()) {
        throw DimensionError("from_allocation: " + std::to_string(allocation.size()) +
                             " allocation vectors for " + std::to_string(layer_sizes.size()) +
                             " layers");
    }
    std::vector<std::uint32_t> parents;
    for (std::size_t l = 0; l < allocation.size(); ++l) {
        if (allocation[l].size() != layer_sizes[l]) {
            throw DimensionError("from_allocation: layer " + std::to_string(l) +
                                 " allocation length mismatch");
        }
        parents.insert(parents.end(), allocation[l].begin(), allocation[l].end());
    }
    return TreeTopology(std::move(layer_sizes), std::move(parents));
}

std::uint32_t TreeTopology::global_index(std::size_t layer, std::uint32_t local) const {
    if (layer >= num_layers() || local >= layer_sizes_[layer]) {
        throw IndexError("global_index: (" + std::to_string(layer) + ", " +
                         std::to_string(local) + ") out of range");
    }
    return offsets_[layer] + local;
}

std::size_t TreeTopology::layer_of(std::uint32_t feature) const {
    if (feature >= offsets_.back()) {
        throw IndexError("layer_of: feature " + std::to_string(feature) + " out of range");
    }
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), feature);
    return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

void TreeTopology::set_parent(std::uint32_t feature, std::uint32_t parent) {
    if (feature >= parents_.size()) {
        throw IndexError("set_parent: feature " + std::to_string(feature) + " out of range");
    }
    parents_[feature] = parent;
}

std::vector<std::uint32_t> TreeTopology::allocation(std::size_t layer) const {
    return {parents_.begin() + layer_begin(layer), parents_.begin() + layer_end(layer)};
}

std::vector<std::uint32_t> TreeTopology::children(std::uint32_t feature) const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 0; i < parents_.size(); ++i)
        if (parents_[i] == feature) out.push_back(i);
    return out;
}

std::vector<TopologyViolation> validate(const TreeTopology& t) {
    using Kind = TopologyViolation::Kind;
    std::vector<TopologyViolation> out;
    const auto& sizes = t.layer_sizes();
    const std::uint64_t total = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0});
    if (sizes.empty() || total != t.num_features()) {
        out.push_back({Kind::size_mismatch, kRoot, kRoot,
                       "sum of layer sizes " + std::to_string(total) + " != feature count " +
                           std::to_string(t.num_features())});
        return out;
    }
    for (std::size_t l = 0; l < sizes.size(); ++l) {
        if (sizes[l] == 0) {
            out.push_back({Kind::empty_layer, kRoot, kRoot,
                           "layer " + std::to_string(l) + " has no features"});
        }
    }
    const auto n = static_cast<std::uint32_t>(t.num_features());
    bool structural_ok = true;
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto p = t.parent(i);
        if (p == kRoot) continue;
        if (p >= n) {
            structural_ok = false;
            out.push_back({Kind::parent_out_of_range, i, p,
                           "feature " + std::to_string(i) + " has out-of-range parent " +
                               std::to_string(p)});
            continue;
        }
        if (t.layer_of(p) >= t.layer_of(i)) {
            structural_ok = false;
            out.push_back({Kind::parent_not_lower_layer, i, p,
                           "parent at non-lower layer: feature " + std::to_string(i) +
                               " (layer " + std::to_string(t.layer_of(i)) + ") -> " +
                               std::to_string(p) + " (layer " + std::to_string(t.layer_of(p)) +
                               ")"});
        }
    }
    if (!structural_ok) {
        // Layer ordering broken, so also report chains that never reach ROOT.
        for (std::uint32_t i = 0; i < n; ++i) {
            std::uint32_t cur = i;
            std::size_t steps = 0;
            while (cur != kRoot && cur < n && steps <= t.num_layers()) {
                cur = t.parent(cur);
                ++steps;
            }
            if (cur != kRoot && cur < n) {
                out.push_back({Kind::root_unreachable, i, t.parent(i),
                               "feature " + std::to_string(i) + " does not reach ROOT within " +
                                   std::to_string(t.num_layers()) + " steps"});
            }
        }
    }
    return out;
}

std::vector<std::uint32_t> descendants(const TreeTopology& t, std::uint32_t feature) {
    const auto n = static_cast<std::uint32_t>(t.num_features());
    if (feature != kRoot && feature >= n) {
        throw IndexError("descendants: feature " + std::to_string(feature) + " out of range");
    }
    std::vector<std::vector<std::uint32_t>> kids(n);
    std::vector<std::uint32_t> frontier;
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto p = t.parent(i);
        if (p == kRoot) {
            if (feature == kRoot) frontier.push_back(i);
        } else if (p < n) {
            kids[p].push_back(i);
        }
    }
    if (feature != kRoot) frontier = kids[feature];
    std::vector<std::uint32_t> out;
    std::vector<char> seen(n, 0);
    while (!frontier.empty()) {
        const auto f = frontier.back();
        frontier.pop_back();
        if (seen[f]) continue;
        seen[f] = 1;
        out.push_back(f);
        frontier.insert(frontier.end(), kids[f].begin(), kids[f].end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t SparseActivation::nnz() const noexcept {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
}

std::size_t SparseActivation::active_in_range(std::size_t row, std::uint32_t begin,
                                              std::uint32_t end) const {
    std::size_t n = 0;
    for (const auto& e : rows.at(row))
        if (e.feature >= begin && e.feature < end) ++n;
    return n;
}

DenseMatrix SparseActivation::to_dense() const {
    DenseMatrix out(rows.size(), num_features);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (const auto& e : rows[r]) out(r, e.feature) = e.value;
    return out;
}

SparseActivation apply_coverage_mask(const DenseMatrix& raw, const TreeTopology& t) {
    if (raw.cols() != t.num_features()) {
        throw DimensionError("apply_coverage_mask: activations have " +
                             std::to_string(raw.cols()) + " columns, topology has " +
                             std::to_string(t.num_features()) + " features");
    }
    SparseActivation out;
    out.num_features = t.num_features();
    out.rows.resize(raw.rows());
    out.pre_activations = raw;
    std::vector<double> masked(t.num_features());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        // Flat order is layer order, so a parent is always resolved first.
        for (std::uint32_t i = 0; i < t.num_features(); ++i) {
            const double v = raw(r, i) > 0.0 ? raw(r, i) : 0.0;
            const auto p = t.parent(i);
            masked[i] = (p == kRoot || masked[p] > 0.0) ? v : 0.0;
            if (masked[i] > 0.0) out.rows[r].push_back({i, masked[i]});
        }
    }
    return out;
}

} // namespace treesae
