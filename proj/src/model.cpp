#include "treesae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "treesae/errors.hpp"

namespace treesae {

AuxConfig AuxConfig::first_layer_profile(std::size_t layers, std::uint32_t k_aux) {
    AuxConfig c;
    c.k_aux = k_aux;
    c.alpha.assign(layers, 0.0);
    if (layers > 0) c.alpha[0] = 1.0 / 32.0;
    return c;
}

AuxConfig AuxConfig::all_layers_profile(std::size_t layers, std::uint32_t k_aux) {
    AuxConfig c;
    c.k_aux = k_aux;
    c.alpha.assign(layers, 1.0 / 128.0);
    return c;
}

std::uint32_t TreeSaeModel::total_k() const noexcept {
    return std::accumulate(layer_k.begin(), layer_k.end(), std::uint32_t{0});
}

void TreeSaeModel::check() const {
    const auto d_f = topology.num_features();
    if (encoder.rows() != d_f || decoder.cols() != d_f) {
        throw DimensionError("model: dictionary size disagrees with topology (" +
                             std::to_string(d_f) + " features)");
    }
    if (decoder.rows() != encoder.cols() || bias.rows() != 1 || bias.cols() != encoder.cols()) {
        throw DimensionError("model: encoder/decoder/bias d_model mismatch");
    }
    if (layer_k.size() != topology.num_layers()) {
        throw DimensionError("model: " + std::to_string(layer_k.size()) + " top-k budgets for " +
                             std::to_string(topology.num_layers()) + " layers");
    }
    if (aux.alpha.size() != topology.num_layers()) {
        throw DimensionError("model: auxiliary coefficients must have one entry per layer");
    }
}

TreeSaeModel TreeSaeModel::initialize(TreeTopology topology, std::size_t d_model,
                                      std::vector<std::uint32_t> layer_k, AuxConfig aux,
                                      Rng& rng) {
    TreeSaeModel m;
    const auto d_f = topology.num_features();
    m.topology = std::move(topology);
    m.decoder = DenseMatrix(d_model, d_f);
    for (std::size_t c = 0; c < d_f; ++c) {
        const auto v = random_unit_vector(rng, d_model);
        for (std::size_t r = 0; r < d_model; ++r) m.decoder(r, c) = v[r];
    }
    m.encoder = transpose(m.decoder);
    m.bias = DenseMatrix(1, d_model);
    m.layer_k = std::move(layer_k);
    m.aux = std::move(aux);
    m.check();
    return m;
}

bool TreeSaeModel::operator==(const TreeSaeModel& o) const {
    return topology == o.topology && encoder == o.encoder && decoder == o.decoder &&
           bias == o.bias && layer_k == o.layer_k && aux.k_aux == o.aux.k_aux &&
           aux.alpha == o.aux.alpha && aux.keep_empty_term == o.aux.keep_empty_term;
}

DenseMatrix pre_activations(const TreeSaeModel& model, const DenseMatrix& x) {
    if (x.cols() != model.d_model()) {
        throw DimensionError("encode: input has " + std::to_string(x.cols()) +
                             " columns, model expects " + std::to_string(model.d_model()));
    }
    const auto d_f = model.d_features();
    const auto d_m = model.d_model();
    DenseMatrix pre(x.rows(), d_f);
    std::vector<double> centered(d_m);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t j = 0; j < d_m; ++j) centered[j] = x(r, j) - model.bias(0, j);
        for (std::size_t i = 0; i < d_f; ++i) pre(r, i) = dot(model.encoder.row(i), centered);
    }
    return pre;
}

namespace {

// Strictly-better ordering for top-k: larger value, then lower index.
struct ByValueThenIndex {
    const double* values;
    bool operator()(std::uint32_t a, std::uint32_t b) const {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    }
};

} // namespace

SparseActivation select_activations(const TreeSaeModel& model, const DenseMatrix& pre) {
    const auto& topo = model.topology;
    const auto d_f = static_cast<std::uint32_t>(topo.num_features());
    SparseActivation out;
    out.num_features = d_f;
    out.rows.resize(pre.rows());
    out.pre_activations = pre;
    std::vector<std::uint8_t> selected(d_f);
    std::vector<std::uint32_t> candidates;
    for (std::size_t r = 0; r < pre.rows(); ++r) {
        std::fill(selected.begin(), selected.end(), 0);
        const double* row = pre.row(r).data();
        auto& out_row = out.rows[r];
        for (std::size_t l = 0; l < topo.num_layers(); ++l) {
            candidates.clear();
            for (auto i = topo.layer_begin(l); i < topo.layer_end(l); ++i) {
                if (!(row[i] > 0.0)) continue;
                const auto p = topo.parent(i);
                if (p == kRoot || selected[p]) candidates.push_back(i);
            }
            const std::size_t keep = std::min<std::size_t>(model.layer_k[l], candidates.size());
            std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                              ByValueThenIndex{row});
            candidates.resize(keep);
            std::sort(candidates.begin(), candidates.end());
            for (auto i : candidates) {
                selected[i] = 1;
                out_row.push_back({i, row[i]});
            }
        }
    }
    return out;
}

SparseActivation encode(const TreeSaeModel& model, const DenseMatrix& x) {
    model.check();
    return select_activations(model, pre_activations(model, x));
}

namespace {

void add_scaled_column(std::span<double> out, const DenseMatrix& decoder, std::uint32_t col,
                       double scale) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += scale * decoder(j, col);
}

double column_dot(const DenseMatrix& decoder, std::uint32_t col, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += decoder(j, col) * v[j];
    return s;
}

} // namespace

ForwardTrace forward(const TreeSaeModel& model, const DenseMatrix& x,
                     std::span<const std::uint8_t> dead) {
    model.check();
    const auto& topo = model.topology;
    const std::size_t n = x.rows();
    const std::size_t d_m = model.d_model();
    const std::size_t layers = topo.num_layers();
    if (!dead.empty() && dead.size() != model.d_features()) {
        throw DimensionError("forward: dead mask length mismatch");
    }

    ForwardTrace t;
    t.input = x;
    t.pre = pre_activations(model, x);
    t.centered = DenseMatrix(n, d_m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d_m; ++j) t.centered(r, j) = x(r, j) - model.bias(0, j);
    t.activations = select_activations(model, t.pre);
    t.dead.assign(dead.begin(), dead.end());

    t.layer_partials.assign(layers, DenseMatrix(n, d_m));
    for (std::size_t r = 0; r < n; ++r) {
        for (const auto& e : t.activations.rows[r]) {
            const auto l = topo.layer_of(e.feature);
            add_scaled_column(t.layer_partials[l].row(r), model.decoder, e.feature, e.value);
        }
    }
    t.cumulative.reserve(layers);
    DenseMatrix running(n, d_m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d_m; ++j) running(r, j) = model.bias(0, j);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto part = t.layer_partials[l].values();
        auto run = running.values();
        for (std::size_t i = 0; i < run.size(); ++i) run[i] += part[i];
        t.cumulative.push_back(running);
    }

    // Auxiliary terms: dead features of layer l, top k_aux by pre-activation.
    t.aux.resize(layers);
    std::vector<std::uint32_t> dead_in_layer;
    for (std::size_t l = 0; l < layers; ++l) {
        auto& term = t.aux[l];
        if (!(model.aux.alpha[l] > 0.0)) continue;
        dead_in_layer.clear();
        if (!dead.empty()) {
            for (auto i = topo.layer_begin(l); i < topo.layer_end(l); ++i)
                if (dead[i]) dead_in_layer.push_back(i);
        }
        if (dead_in_layer.empty() && !model.aux.keep_empty_term) continue;
        term.active = true;
        term.entries.resize(n);
        term.reconstruction = DenseMatrix(n, d_m);
        std::vector<std::uint32_t> cand;
        for (std::size_t r = 0; r < n; ++r) {
            cand = dead_in_layer;
            const std::size_t keep = std::min<std::size_t>(model.aux.k_aux, cand.size());
            std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(),
                              ByValueThenIndex{&t.pre(r, 0)});
            cand.resize(keep);
            std::sort(cand.begin(), cand.end());
            for (auto i : cand) {
                const double v = t.pre(r, i);
                if (!(v > 0.0)) continue;
                term.entries[r].push_back({i, v});
                add_scaled_column(term.reconstruction.row(r), model.decoder, i, v);
            }
        }
    }

    t.layer_losses.assign(layers, 0.0);
    double recons_sum = 0.0;
    double aux_weighted_sum = 0.0;
    std::vector<double> aux_sums(layers, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double row_total = 0.0;
        for (std::size_t l = 0; l < layers; ++l) {
            const auto cum = t.cumulative[l].row(r);
            const auto xr = x.row(r);
            double e2 = 0.0;
            for (std::size_t j = 0; j < d_m; ++j) {
                const double d = cum[j] - xr[j];
                e2 += d * d;
            }
            t.layer_losses[l] += e2;
            row_total += e2;
            if (t.aux[l].active) {
                const auto ehat = t.aux[l].reconstruction.row(r);
                double a2 = 0.0;
                for (std::size_t j = 0; j < d_m; ++j) {
                    const double d = ehat[j] + cum[j] - xr[j];
                    a2 += d * d;
                }
                aux_sums[l] += a2;
                row_total += model.aux.alpha[l] * a2;
                aux_weighted_sum += model.aux.alpha[l] * a2;
            }
        }
        if (!std::isfinite(row_total)) {
            throw NumericError("forward: non-finite loss at batch row " + std::to_string(r));
        }
        recons_sum += row_total;
    }
    const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
    double recons = 0.0;
    for (auto& v : t.layer_losses) {
        v *= inv_n;
        recons += v;
    }
    for (std::size_t l = 0; l < layers; ++l) t.aux[l].loss = aux_sums[l] * inv_n;
    t.recons_loss = recons;
    t.aux_loss = aux_weighted_sum * inv_n;
    t.total_loss = t.recons_loss + t.aux_loss;
    return t;
}

double Gradients::squared_norm() const {
    return treesae::squared_norm(encoder.values()) + treesae::squared_norm(decoder.values()) +
           treesae::squared_norm(bias.values());
}

void Gradients::scale(double factor) {
    for (auto* m : {&encoder, &decoder, &bias})
        for (auto& v : m->values()) v *= factor;
}

Gradients backward(const TreeSaeModel& model, const ForwardTrace& trace) {
    const auto& topo = model.topology;
    const std::size_t n = trace.batch_size();
    const std::size_t d_m = model.d_model();
    const std::size_t layers = topo.num_layers();
    Gradients g{DenseMatrix(model.d_features(), d_m), DenseMatrix(d_m, model.d_features()),
                DenseMatrix(1, d_m)};
    if (n == 0) return g;
    const double inv_n = 1.0 / static_cast<double>(n);

    // d loss / d cumulative_l, suffix sums over l, and aux residual grads.
    std::vector<std::vector<double>> dcum(layers, std::vector<double>(d_m));
    std::vector<std::vector<double>> suffix(layers, std::vector<double>(d_m));
    std::vector<std::vector<double>> daux(layers, std::vector<double>(d_m));
    std::vector<double> upstream(model.d_features());

    for (std::size_t r = 0; r < n; ++r) {
        const auto xr = trace.input.row(r);
        for (std::size_t l = 0; l < layers; ++l) {
            const auto cum = trace.cumulative[l].row(r);
            const auto& term = trace.aux[l];
            const double alpha = model.aux.alpha[l];
            for (std::size_t j = 0; j < d_m; ++j) {
                const double resid = cum[j] - xr[j];
                double v = 2.0 * resid;
                if (term.active) {
                    const double a = 2.0 * alpha * (term.reconstruction(r, j) + resid) * inv_n;
                    daux[l][j] = a;
                    v = v * inv_n + a;
                } else {
                    v *= inv_n;
                }
                dcum[l][j] = v;
            }
        }
        for (std::size_t l = layers; l-- > 0;) {
            for (std::size_t j = 0; j < d_m; ++j)
                suffix[l][j] = dcum[l][j] + (l + 1 < layers ? suffix[l + 1][j] : 0.0);
        }
        // Bias through the decoder side: it enters every cumulative sum once.
        for (std::size_t j = 0; j < d_m; ++j) g.bias(0, j) += suffix[0][j];

        for (const auto& e : trace.activations.rows[r]) upstream[e.feature] = 0.0;
        for (std::size_t l = 0; l < layers; ++l)
            if (trace.aux[l].active)
                for (const auto& e : trace.aux[l].entries[r]) upstream[e.feature] = 0.0;

        for (const auto& e : trace.activations.rows[r]) {
            const auto& h = suffix[topo.layer_of(e.feature)];
            for (std::size_t j = 0; j < d_m; ++j) g.decoder(j, e.feature) += e.value * h[j];
            upstream[e.feature] += column_dot(model.decoder, e.feature, h);
        }
        for (std::size_t l = 0; l < layers; ++l) {
            if (!trace.aux[l].active) continue;
            for (const auto& e : trace.aux[l].entries[r]) {
                for (std::size_t j = 0; j < d_m; ++j) g.decoder(j, e.feature) += e.value * daux[l][j];
                upstream[e.feature] += column_dot(model.decoder, e.feature, daux[l]);
            }
        }

        // Encoder side: f = e_i · (x - b) for every kept feature.
        const auto centered = trace.centered.row(r);
        auto push_encoder = [&](std::uint32_t i) {
            const double u = upstream[i];
            if (u == 0.0) return;
            upstream[i] = 0.0;
            auto enc_grad = g.encoder.row(i);
            const auto enc = model.encoder.row(i);
            for (std::size_t j = 0; j < d_m; ++j) {
                enc_grad[j] += u * centered[j];
                g.bias(0, j) -= u * enc[j];
            }
        };
        for (const auto& e : trace.activations.rows[r]) push_encoder(e.feature);
        for (std::size_t l = 0; l < layers; ++l)
            if (trace.aux[l].active)
                for (const auto& e : trace.aux[l].entries[r]) push_encoder(e.feature);
    }
    return g;
}

std::optional<double> variance_explained(const DenseMatrix& x, const DenseMatrix& x_hat) {
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
        throw DimensionError("variance_explained: shape mismatch");
    }
    if (x.rows() == 0) return std::nullopt;
    std::vector<double> mean(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(r, j);
    for (auto& m : mean) m /= static_cast<double>(x.rows());
    double resid = 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double d = x(r, j) - x_hat(r, j);
            const double c = x(r, j) - mean[j];
            resid += d * d;
            total += c * c;
        }
    }
    if (!(total > 0.0)) return std::nullopt;
    return 1.0 - resid / total;
}

Reconstruction reconstruct(const TreeSaeModel& model, const DenseMatrix& x) {
    const auto acts = encode(model, x);
    Reconstruction out;
    out.x_hat = DenseMatrix(x.rows(), model.d_model());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.x_hat.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = model.bias(0, j);
        for (const auto& e : acts.rows[r]) add_scaled_column(row, model.decoder, e.feature, e.value);
    }
    out.variance_explained = variance_explained(x, out.x_hat);
    out.mean_l0 = x.rows() == 0 ? 0.0
                                : static_cast<double>(acts.nnz()) / static_cast<double>(x.rows());
    return out;
}

} // namespace treesae
