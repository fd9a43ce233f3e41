#include "treesae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "treesae/errors.hpp"
#include "treesae/log.hpp"

namespace treesae {

// ---------------------------------------------------------------------------
// ActivationRecord

ActivationRecord ActivationRecord::from_sparse(const SparseActivation& acts) {
    ActivationRecord rec(acts.num_features);
    rec.append(acts);
    return rec;
}

ActivationRecord ActivationRecord::from_dense(const DenseMatrix& acts) {
    ActivationRecord rec(acts.cols());
    for (std::size_t r = 0; r < acts.rows(); ++r)
        for (std::uint32_t f = 0; f < acts.cols(); ++f)
            if (acts(r, f) > 0.0) rec.columns_[f].push_back({static_cast<std::uint32_t>(r), acts(r, f)});
    rec.num_rows_ = acts.rows();
    return rec;
}

ActivationRecord ActivationRecord::from_model(const TreeSaeModel& model, const DenseMatrix& x,
                                              std::size_t batch) {
    ActivationRecord rec(model.d_features());
    batch = std::max<std::size_t>(batch, 1);
    for (std::size_t start = 0; start < x.rows(); start += batch) {
        const std::size_t end = std::min(x.rows(), start + batch);
        DenseMatrix chunk(end - start, x.cols());
        for (std::size_t r = start; r < end; ++r)
            std::copy(x.row(r).begin(), x.row(r).end(), chunk.row(r - start).begin());
        rec.append(encode(model, chunk));
    }
    return rec;
}

void ActivationRecord::append(const SparseActivation& acts) {
    if (acts.num_features != columns_.size()) {
        throw DimensionError("ActivationRecord::append: feature count mismatch");
    }
    for (std::size_t r = 0; r < acts.rows.size(); ++r) {
        const auto row = static_cast<std::uint32_t>(num_rows_ + r);
        for (const auto& e : acts.rows[r])
            if (e.value > 0.0) columns_[e.feature].push_back({row, e.value});
    }
    num_rows_ += acts.rows.size();
}

double ActivationRecord::density(std::uint32_t feature) const {
    if (num_rows_ == 0) return 0.0;
    return static_cast<double>(active_count(feature)) / static_cast<double>(num_rows_);
}

double ActivationRecord::max_activation(std::uint32_t feature) const {
    double m = 0.0;
    for (const auto& e : column(feature)) m = std::max(m, e.value);
    return m;
}

std::vector<std::uint8_t> ActivationRecord::indicator(std::uint32_t feature) const {
    std::vector<std::uint8_t> out(num_rows_, 0);
    for (const auto& e : column(feature)) out[e.row] = 1;
    return out;
}

// ---------------------------------------------------------------------------
// Pair scores

namespace {

// Parent value on each child-active row (0 when silent), aligned with the child column.
std::vector<double> parent_on_child_rows(const ActivationRecord& rec, std::uint32_t parent,
                                         std::uint32_t child) {
    const auto& pc = rec.column(parent);
    const auto& cc = rec.column(child);
    std::vector<double> out(cc.size(), 0.0);
    std::size_t i = 0;
    for (std::size_t j = 0; j < cc.size(); ++j) {
        while (i < pc.size() && pc[i].row < cc[j].row) ++i;
        if (i < pc.size() && pc[i].row == cc[j].row) out[j] = pc[i].value;
    }
    return out;
}

std::vector<double> normalized(std::span<const double> v, const char* what) {
    const double n = std::sqrt(squared_norm(v));
    if (!(n > 0.0)) throw std::invalid_argument(std::string("zero vector: ") + what);
    std::vector<double> out(v.begin(), v.end());
    if (std::abs(n - 1.0) > 1e-9) {
        log::warn(std::string("reconstruction_score: ") + what + " is not unit-norm, normalizing");
        for (auto& x : out) x /= n;
    }
    return out;
}

} // namespace

std::optional<double> activation_coverage(const ActivationRecord& records, std::uint32_t parent,
                                          std::uint32_t child) {
    const auto& cc = records.column(child);
    if (cc.empty()) return std::nullopt;
    const auto p = parent_on_child_rows(records, parent, child);
    const auto covered = std::count_if(p.begin(), p.end(), [](double v) { return v > 0.0; });
    return static_cast<double>(covered) / static_cast<double>(cc.size());
}

double reconstruction_score(std::span<const double> d_parent, std::span<const double> d_child,
                            std::span<const double> d_star) {
    if (d_parent.size() != d_star.size() || d_child.size() != d_star.size()) {
        throw DimensionError("reconstruction_score: dimension mismatch");
    }
    const auto p = normalized(d_parent, "parent decoder");
    const auto c = normalized(d_child, "child decoder");
    const auto s = normalized(d_star, "true direction");
    return std::min(dot(s, c), dot(s, p));
}

std::string McsVariant::name() const {
    return std::string(scaling ? "scaling" : "non-scaling") + (binary ? "-binary" : "-value");
}

McsVariant McsVariant::parse(std::string_view name) {
    for (const auto& v : all())
        if (v.name() == name) return v;
    throw std::invalid_argument("unknown MCS variant '" + std::string(name) +
                                "' (expected [non-]scaling-{binary,value})");
}

std::array<McsVariant, 4> McsVariant::all() {
    return {McsVariant{false, true}, McsVariant{true, true}, McsVariant{false, false},
            McsVariant{true, false}};
}

std::optional<double> mcs(const ActivationRecord& records, std::uint32_t parent,
                          std::uint32_t child, McsVariant variant) {
    const auto& cc = records.column(child);
    if (cc.empty()) return std::nullopt;
    auto p = parent_on_child_rows(records, parent, child);
    std::vector<double> c(cc.size());
    for (std::size_t j = 0; j < cc.size(); ++j) c[j] = cc[j].value;
    if (variant.scaling) {
        const double pmax = records.max_activation(parent);
        const double cmax = records.max_activation(child);
        if (pmax > 0.0)
            for (auto& v : p) v /= pmax;
        for (auto& v : c) v /= cmax;
    }
    if (variant.binary) {
        for (auto& v : p) v = v > 0.0 ? 1.0 : 0.0;
        for (auto& v : c) v = v > 0.0 ? 1.0 : 0.0;
    }
    const double np = std::sqrt(squared_norm(p));
    const double nc = std::sqrt(squared_norm(c));
    if (!(nc > 0.0)) return std::nullopt;
    if (!(np > 0.0)) return 0.0;
    return dot(p, c) / (np * nc);
}

// ---------------------------------------------------------------------------
// Probes

ProbeResult train_probe(const DenseMatrix& x, std::span<const std::uint8_t> labels,
                        const ProbeConfig& config) {
    if (labels.size() != x.rows()) throw DimensionError("train_probe: label count != rows");
    std::vector<std::uint32_t> pos, neg;
    for (std::uint32_t r = 0; r < labels.size(); ++r) (labels[r] ? pos : neg).push_back(r);
    if (pos.empty() || neg.empty()) {
        throw std::invalid_argument("train_probe: degenerate labels (" + std::to_string(pos.size()) +
                                    " positive, " + std::to_string(neg.size()) + " negative)");
    }
    if (pos.size() < config.min_positives) {
        throw std::invalid_argument("train_probe: " + std::to_string(pos.size()) +
                                    " positive rows, need at least " +
                                    std::to_string(config.min_positives));
    }
    Rng rng(config.seed);
    rng.shuffle(pos.begin(), pos.end());
    if (pos.size() > config.max_positives) pos.resize(config.max_positives);
    rng.shuffle(neg.begin(), neg.end());
    const auto want_neg = static_cast<std::size_t>(
        std::ceil(config.negatives_per_positive * static_cast<double>(pos.size())));
    if (neg.size() > want_neg) neg.resize(std::max<std::size_t>(want_neg, 1));

    const std::size_t d = x.cols();
    std::vector<std::uint32_t> rows = pos;
    rows.insert(rows.end(), neg.begin(), neg.end());
    std::vector<double> y(rows.size()), w(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const bool is_pos = i < pos.size();
        y[i] = is_pos ? 1.0 : 0.0;
        w[i] = is_pos ? 0.5 / static_cast<double>(pos.size()) : 0.5 / static_cast<double>(neg.size());
    }

    // Curvature bound: largest eigenvalue of Σ w_i z_i z_iᵀ with z = (x, 1).
    std::vector<double> v(d + 1, 1.0 / std::sqrt(static_cast<double>(d + 1)));
    double lambda = 1.0;
    for (int it = 0; it < 50; ++it) {
        std::vector<double> mv(d + 1, 0.0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto xr = x.row(rows[i]);
            double zv = v[d];
            for (std::size_t j = 0; j < d; ++j) zv += xr[j] * v[j];
            zv *= w[i];
            for (std::size_t j = 0; j < d; ++j) mv[j] += zv * xr[j];
            mv[d] += zv;
        }
        lambda = std::sqrt(squared_norm(mv));
        if (!(lambda > 0.0)) break;
        for (std::size_t j = 0; j <= d; ++j) v[j] = mv[j] / lambda;
    }
    // 1.05 margin: power iteration approaches the top eigenvalue from below.
    const double step = 1.0 / (0.25 * 1.05 * lambda + config.l2);

    // Nesterov-accelerated full-batch gradient descent on the weighted
    // logistic loss + (l2/2)·||w||².
    std::vector<double> theta(d + 1, 0.0), prev(d + 1, 0.0), look(d + 1, 0.0), grad(d + 1);
    auto gradient_at = [&](const std::vector<double>& t) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto xr = x.row(rows[i]);
            double z = t[d];
            for (std::size_t j = 0; j < d; ++j) z += xr[j] * t[j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double g = w[i] * (p - y[i]);
            for (std::size_t j = 0; j < d; ++j) grad[j] += g * xr[j];
            grad[d] += g;
        }
        for (std::size_t j = 0; j < d; ++j) grad[j] += config.l2 * t[j];
    };
    for (std::size_t s = 1; s <= config.steps; ++s) {
        const double momentum = static_cast<double>(s - 1) / static_cast<double>(s + 2);
        for (std::size_t j = 0; j <= d; ++j) look[j] = theta[j] + momentum * (theta[j] - prev[j]);
        gradient_at(look);
        prev = theta;
        for (std::size_t j = 0; j <= d; ++j) theta[j] = look[j] - step * grad[j];
    }

    ProbeResult out;
    out.positives = pos.size();
    out.negatives = neg.size();
    out.intercept = theta[d];
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto xr = x.row(rows[i]);
        double z = theta[d];
        for (std::size_t j = 0; j < d; ++j) z += xr[j] * theta[j];
        const bool predicted = z > 0.0;
        if (i < pos.size() && predicted) ++tp;
        if (i >= pos.size() && !predicted) ++tn;
    }
    out.train_accuracy = 0.5 * (static_cast<double>(tp) / static_cast<double>(pos.size()) +
                                static_cast<double>(tn) / static_cast<double>(neg.size()));
    out.direction.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
    const double norm = std::sqrt(squared_norm(out.direction));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw NumericError("train_probe: probe weights collapsed to zero");
    }
    for (auto& c : out.direction) c /= norm;
    return out;
}

std::vector<std::uint32_t> correlation_ranks(const DenseMatrix& decoder,
                                             std::span<const double> direction) {
    if (decoder.rows() != direction.size()) throw DimensionError("correlation_ranks: d_model");
    const std::size_t d_f = decoder.cols();
    std::vector<double> cos(d_f);
    for (std::size_t f = 0; f < d_f; ++f) {
        double s = 0.0, n2 = 0.0;
        for (std::size_t j = 0; j < decoder.rows(); ++j) {
            s += decoder(j, f) * direction[j];
            n2 += decoder(j, f) * decoder(j, f);
        }
        cos[f] = n2 > 0.0 ? s / std::sqrt(n2) : -std::numeric_limits<double>::infinity();
    }
    std::vector<std::uint32_t> order(d_f);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return cos[a] > cos[b]; });
    std::vector<std::uint32_t> ranks(d_f);
    for (std::uint32_t r = 0; r < d_f; ++r) ranks[order[r]] = r;
    return ranks;
}

// ---------------------------------------------------------------------------
// Hierarchy metric

std::string to_string(HierarchyProcedure p) { return p == HierarchyProcedure::tree ? "tree" : "mcs"; }

HierarchyProcedure parse_procedure(std::string_view s) {
    if (s == "tree") return HierarchyProcedure::tree;
    if (s == "mcs") return HierarchyProcedure::mcs;
    throw std::invalid_argument("unknown procedure '" + std::string(s) + "' (tree|mcs)");
}

namespace {

std::vector<double> decoder_column(const DenseMatrix& decoder, std::uint32_t f) {
    std::vector<double> out(decoder.rows());
    for (std::size_t j = 0; j < decoder.rows(); ++j) out[j] = decoder(j, f);
    return out;
}

} // namespace

HierarchyResult hierarchy_metric(const TreeSaeModel& model, const DenseMatrix& x,
                                 const ActivationRecord& records, const HierarchyConfig& config) {
    if (records.num_rows() != x.rows() || records.num_features() != model.d_features()) {
        throw DimensionError("hierarchy_metric: records do not match corpus/model");
    }
    const auto d_f = static_cast<std::uint32_t>(model.d_features());
    HierarchyResult result;
    result.procedure = config.procedure;

    // Parents: live features at or above the density quantile.
    std::vector<double> dens(d_f);
    for (std::uint32_t f = 0; f < d_f; ++f) dens[f] = records.density(f);
    std::vector<double> sorted = dens;
    std::sort(sorted.begin(), sorted.end());
    const double q = std::clamp(config.density_quantile, 0.0, 1.0);
    const auto qi = std::min<std::size_t>(
        sorted.size() - 1, static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size()))));
    const double threshold = sorted[qi];
    std::vector<std::uint32_t> eligible;
    for (std::uint32_t f = 0; f < d_f; ++f)
        if (dens[f] > 0.0 && dens[f] >= threshold) eligible.push_back(f);
    result.eligible_parents = eligible.size();

    Rng rng(config.seed);
    rng.shuffle(eligible.begin(), eligible.end());
    if (eligible.size() > config.sample_parents) eligible.resize(config.sample_parents);
    std::sort(eligible.begin(), eligible.end());
    result.sampled_parents = eligible.size();

    const bool multi_layer = model.num_layers() > 1;
    std::map<std::uint32_t, ProbeResult> probes;
    auto probe_for = [&](std::uint32_t child) -> const ProbeResult* {
        auto it = probes.find(child);
        if (it != probes.end()) return &it->second;
        const auto labels = records.indicator(child);
        ProbeConfig pc = config.probe;
        pc.seed = config.probe.seed ^ (0x9E3779B97F4A7C15ULL * (child + 1));
        ProbeResult pr;
        try {
            pr = train_probe(x, labels, pc);
        } catch (const std::invalid_argument&) {
            return nullptr;
        }
        pr.target = child;
        pr.ranks = correlation_ranks(model.decoder, pr.direction);
        return &probes.emplace(child, std::move(pr)).first->second;
    };
    auto probe_ready = [&](std::uint32_t f) {
        return records.active_count(f) >= config.probe.min_positives &&
               records.active_count(f) < records.num_rows();
    };

    for (auto parent : eligible) {
        std::vector<std::uint32_t> children;
        const auto tree_children = model.topology.children(parent);
        if (config.procedure == HierarchyProcedure::tree) {
            for (auto c : tree_children)
                if (probe_ready(c)) children.push_back(c);
        } else {
            std::size_t want = config.mcs_children;
            if (config.match_tree_counts && multi_layer) {
                want = static_cast<std::size_t>(std::count_if(
                    tree_children.begin(), tree_children.end(), probe_ready));
            }
            std::vector<std::pair<double, std::uint32_t>> scored;
            for (std::uint32_t c = 0; c < d_f; ++c) {
                if (c == parent || !probe_ready(c)) continue;
                const auto s = mcs(records, parent, c, config.mcs_variant);
                if (s) scored.emplace_back(*s, c);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t i = 0; i < std::min(want, scored.size()); ++i)
                children.push_back(scored[i].second);
        }

        const auto dp = decoder_column(model.decoder, parent);
        for (auto child : children) {
            const auto* probe = probe_for(child);
            if (probe == nullptr) continue;
            PairReport rep;
            rep.parent = parent;
            rep.child = child;
            rep.s_cov = activation_coverage(records, parent, child).value_or(0.0);
            const auto dc = decoder_column(model.decoder, child);
            rep.s_res = reconstruction_score(dp, dc, probe->direction);
            const auto variants = McsVariant::all();
            for (std::size_t v = 0; v < variants.size(); ++v) {
                rep.mcs[v] = mcs(records, parent, child, variants[v])
                                 .value_or(std::numeric_limits<double>::quiet_NaN());
            }
            rep.parent_rank = probe->ranks[parent];
            rep.child_rank = probe->ranks[child];
            rep.probe_accuracy = probe->train_accuracy;
            rep.pass = rep.parent_rank < config.top_rank && rep.child_rank < config.top_rank;
            result.pairs += 1;
            result.passed += rep.pass ? 1 : 0;
            result.reports.push_back(rep);
        }
    }
    if (result.pairs > 0) {
        result.pass_rate = static_cast<double>(result.passed) / static_cast<double>(result.pairs);
    }
    if (result.sampled_parents < config.sample_parents) {
        log::info("hierarchy_metric: only " + std::to_string(result.sampled_parents) +
                  " eligible parents (requested " + std::to_string(config.sample_parents) + ")");
    }
    return result;
}

std::string hierarchy_report_csv(const HierarchyResult& result) {
    std::ostringstream os;
    os.precision(10);
    os << "procedure,parent,child,s_cov,s_res";
    for (const auto& v : McsVariant::all()) os << ",mcs_" << v.name();
    os << ",parent_rank,child_rank,probe_accuracy,pass\n";
    for (const auto& r : result.reports) {
        os << to_string(result.procedure) << ',' << r.parent << ',' << r.child << ',' << r.s_cov
           << ',' << r.s_res;
        for (double m : r.mcs) os << ',' << m;
        os << ',' << r.parent_rank << ',' << r.child_rank << ',' << r.probe_accuracy << ','
           << (r.pass ? 1 : 0) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Dictionary-level metrics

double composition(const DenseMatrix& decoder) {
    const std::size_t d_f = decoder.cols();
    if (d_f < 2) throw std::invalid_argument("composition: need at least two features");
    DenseMatrix cols = transpose(decoder); // d_f × d_m, one unit row per feature
    for (std::size_t f = 0; f < d_f; ++f) {
        const double n = std::sqrt(squared_norm(cols.row(f)));
        if (n > 0.0)
            for (auto& v : cols.row(f)) v /= n;
    }
    double total = 0.0;
    for (std::size_t a = 0; a < d_f; ++a) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < d_f; ++b)
            if (b != a) best = std::max(best, dot(cols.row(a), cols.row(b)));
        total += best;
    }
    return total / static_cast<double>(d_f);
}

std::optional<double> co_occurrence(const ActivationRecord& records, const TreeTopology& topology,
                                    CoOccurrenceNorm norm) {
    std::vector<std::vector<std::uint32_t>> kids(topology.num_features());
    for (std::uint32_t f = 0; f < topology.num_features(); ++f) {
        const auto p = topology.parent(f);
        if (p != kRoot) kids[p].push_back(f);
    }
    auto overlap = [&](std::uint32_t a, std::uint32_t b) {
        const auto& ca = records.column(a);
        const auto& cb = records.column(b);
        std::size_t i = 0, j = 0, both = 0;
        while (i < ca.size() && j < cb.size()) {
            if (ca[i].row < cb[j].row) {
                ++i;
            } else if (cb[j].row < ca[i].row) {
                ++j;
            } else {
                ++both;
                ++i;
                ++j;
            }
        }
        return both;
    };
    double sum = 0.0;
    std::size_t parents = 0;
    for (const auto& children : kids) {
        if (children.size() < 2) continue;
        double psum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < children.size(); ++i) {
            for (std::size_t j = i + 1; j < children.size(); ++j) {
                const auto a = children[i], b = children[j];
                const std::size_t both = overlap(a, b);
                double denom = 0.0;
                if (norm == CoOccurrenceNorm::pair_union) {
                    denom = static_cast<double>(records.active_count(a) + records.active_count(b) - both);
                } else {
                    denom = static_cast<double>(records.num_rows());
                }
                if (!(denom > 0.0)) continue;
                psum += static_cast<double>(both) / denom;
                ++pairs;
            }
        }
        if (pairs == 0) continue;
        sum += psum / static_cast<double>(pairs);
        ++parents;
    }
    if (parents == 0) return std::nullopt;
    return sum / static_cast<double>(parents);
}

std::vector<double> dead_feature_rate(const CapacityLedger& ledger, const TreeTopology& topology,
                                      std::uint64_t window) {
    if (ledger.size() != topology.num_features()) {
        throw DimensionError("dead_feature_rate: ledger size disagrees with topology");
    }
    std::vector<double> out(topology.num_layers(), 0.0);
    for (std::size_t l = 0; l < topology.num_layers(); ++l) {
        std::size_t dead = 0;
        for (auto f = topology.layer_begin(l); f < topology.layer_end(l); ++f)
            if (ledger.is_dead(f, window)) ++dead;
        const auto size = topology.layer_sizes()[l];
        out[l] = size == 0 ? 0.0 : static_cast<double>(dead) / static_cast<double>(size);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Two-feature toy system

double toy_loss_landscape(double s_p, double s_c, double k) {
    return 2.0 - 2.0 * s_p * s_p - s_c * s_c + 2.0 * s_p * s_c * k;
}

ToyResult two_feature_toy_run(const ToyConfig& config) {
    if (config.dim < 2) throw std::invalid_argument("two_feature_toy_run: dim must be >= 2");
    if (!(config.parent_alignment >= 0.0 && config.parent_alignment < 1.0)) {
        throw std::invalid_argument("two_feature_toy_run: parent_alignment must be in [0, 1)");
    }
    const std::size_t n = config.dim;
    Rng rng(config.seed);
    const auto g = random_unit_vector(rng, n);
    auto u = random_unit_vector(rng, n);
    {
        const double gu = dot(g, u);
        for (std::size_t j = 0; j < n; ++j) u[j] -= gu * g[j];
        const double un = std::sqrt(squared_norm(u));
        for (auto& v : u) v /= un;
    }
    const double a = config.parent_alignment;
    const double b = std::sqrt(1.0 - a * a);
    std::vector<double> dstar(n);
    for (std::size_t j = 0; j < n; ++j) dstar[j] = a * g[j] + b * u[j];

    // The pair is assumed to satisfy activation coverage, so the parent must
    // fire on every input that carries its concept. Redraw until it does.
    std::vector<double> dp;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw std::runtime_error("two_feature_toy_run: no valid parent init");
        dp = random_unit_vector(rng, n);
        if (dot(dp, dstar) > 0.0 && (!config.parent_instances || dot(dp, g) > 0.0)) break;
    }
    auto dc = random_unit_vector(rng, n);
    if (config.pin_parent_to_concept) dp = dstar;
    auto ep = dp;
    auto ec = dc;

    struct Input {
        std::vector<double> x;
        double weight;
    };
    std::vector<Input> inputs;
    if (config.parent_instances) {
        inputs.push_back({g, 1.0 - config.child_fraction});
        inputs.push_back({dstar, config.child_fraction});
    } else {
        inputs.push_back({dstar, 1.0});
    }

    std::vector<double> gep(n), gec(n), gdp(n), gdc(n), r1(n), r2(n);
    ToyResult res;
    double loss = 0.0;
    double gnorm = 0.0;
    std::size_t step = 0;
    for (; step <= config.max_steps; ++step) {
        std::fill(gep.begin(), gep.end(), 0.0);
        std::fill(gec.begin(), gec.end(), 0.0);
        std::fill(gdp.begin(), gdp.end(), 0.0);
        std::fill(gdc.begin(), gdc.end(), 0.0);
        loss = 0.0;
        for (const auto& in : inputs) {
            const double fp = dot(ep, in.x);
            const bool gate = fp > 0.0;
            const double fc = gate ? dot(ec, in.x) : 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                r1[j] = fp * dp[j] - in.x[j];
                r2[j] = r1[j] + fc * dc[j];
            }
            loss += in.weight * (squared_norm(r1) + squared_norm(r2));
            const double w2 = 2.0 * in.weight;
            double dfp = 0.0, dfc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gdp[j] += w2 * fp * (r1[j] + r2[j]);
                gdc[j] += w2 * fc * r2[j];
                dfp += w2 * dp[j] * (r1[j] + r2[j]);
                dfc += w2 * dc[j] * r2[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                gep[j] += dfp * in.x[j];
                if (gate) gec[j] += dfc * in.x[j];
            }
        }
        // Decoders live on the unit sphere: drop the radial component.
        auto project = [](std::vector<double>& grad, const std::vector<double>& d) {
            const double r = dot(grad, d);
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] -= r * d[j];
        };
        project(gdp, dp);
        project(gdc, dc);
        if (config.pin_parent_to_concept) std::fill(gdp.begin(), gdp.end(), 0.0);
        gnorm = std::sqrt(squared_norm(gep) + squared_norm(gec) + squared_norm(gdp) +
                          squared_norm(gdc));
        if (step % 500 == 0) res.trajectory.emplace_back(step, loss);
        if (gnorm < config.tolerance) {
            res.converged = true;
            break;
        }
        if (step == config.max_steps) break;
        const double lr = config.learning_rate;
        for (std::size_t j = 0; j < n; ++j) {
            ep[j] -= lr * gep[j];
            ec[j] -= lr * gec[j];
            dp[j] -= lr * gdp[j];
            dc[j] -= lr * gdc[j];
        }
        for (auto* d : {&dp, &dc}) {
            const double dn = std::sqrt(squared_norm(*d));
            for (auto& v : *d) v /= dn;
        }
    }
    res.steps = step;
    res.loss = loss;
    res.grad_norm = gnorm;
    res.alpha = dot(ep, dstar);
    res.beta = res.alpha > 0.0 ? dot(ec, dstar) : 0.0;
    res.s_p = dot(dp, dstar);
    res.s_c = dot(dc, dstar);
    res.k = dot(dp, dc);
    res.ec_dot_dp = dot(ec, dp);
    res.alpha_closed_form = res.s_p - res.k * res.s_c / 2.0;
    res.beta_closed_form = res.s_c - res.k * res.s_p;
    if (res.trajectory.empty() || res.trajectory.back().first != step) {
        res.trajectory.emplace_back(step, loss);
    }
    return res;
}

ToyCheck two_feature_toy_check(const ToyResult& r, double closed_form_tol, double small_tol) {
    std::ostringstream os;
    bool ok = true;
    auto require = [&](bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            os << what << "; ";
        }
    };
    require(r.converged, "did not converge (grad norm " + std::to_string(r.grad_norm) + " after " +
                             std::to_string(r.steps) + " steps)");
    require(std::abs(r.alpha - r.alpha_closed_form) <= closed_form_tol,
            "alpha " + std::to_string(r.alpha) + " vs closed form " +
                std::to_string(r.alpha_closed_form));
    require(std::abs(r.beta - r.beta_closed_form) <= closed_form_tol,
            "beta " + std::to_string(r.beta) + " vs closed form " + std::to_string(r.beta_closed_form));
    require(std::abs(r.k) < small_tol, "|k| = " + std::to_string(std::abs(r.k)));
    require(std::abs(r.ec_dot_dp) < small_tol, "|e_c.d_p| = " + std::to_string(std::abs(r.ec_dot_dp)));
    if (!ok) {
        os << "trajectory:";
        for (const auto& [s, l] : r.trajectory) os << ' ' << s << ':' << l;
    }
    return {ok, os.str()};
}

} // namespace treesae
