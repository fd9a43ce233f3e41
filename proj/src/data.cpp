#include "treesae/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "treesae/config.hpp"
#include "treesae/errors.hpp"

namespace treesae {

// ---------------------------------------------------------------------------
// Ground-truth tree

std::vector<std::uint32_t> GroundTruthTree::children(std::uint32_t concept_index) const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 0; i < concepts.size(); ++i)
        if (concepts[i].parent == concept_index) out.push_back(i);
    return out;
}

void GroundTruthTree::validate() const {
    auto fail = [](std::uint32_t i, const std::string& what) {
        throw std::invalid_argument("ground-truth concept " + std::to_string(i) + ": " + what);
    };
    for (std::uint32_t i = 0; i < concepts.size(); ++i) {
        const auto& c = concepts[i];
        if (c.direction.size() != d_model || c.refinement.size() != d_model) fail(i, "wrong dimension");
        if (std::abs(squared_norm(c.direction) - 1.0) > 1e-9) fail(i, "direction not unit-norm");
        if (std::abs(squared_norm(c.refinement) - 1.0) > 1e-9) fail(i, "refinement not unit-norm");
        if (c.parent != kRoot) {
            if (c.parent >= i) fail(i, "parent must precede the child");
            if (std::abs(dot(c.refinement, concepts[c.parent].direction)) > 1e-9) {
                fail(i, "refinement not orthogonal to the parent direction");
            }
        }
        if (!(c.probability >= 0.0 && c.probability <= 1.0)) fail(i, "probability outside [0, 1]");
        if (!(c.log_sd >= 0.0)) fail(i, "negative log_sd");
    }
    if (siblings == SiblingMode::exclusive) {
        std::vector<double> total(concepts.size() + 1, 0.0);
        for (const auto& c : concepts) total[c.parent == kRoot ? concepts.size() : c.parent] += c.probability;
        for (std::uint32_t p = 0; p < concepts.size(); ++p)
            if (total[p] > 1.0 + 1e-12) fail(p, "exclusive children probabilities sum above 1");
    }
    if (!(noise >= 0.0)) throw std::invalid_argument("ground-truth tree: negative noise");
}

std::string GroundTruthTree::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "# ground-truth concepts: index parent probability log_mean log_sd direction...\n";
    os << "d_model " << d_model << "\nnoise " << noise << "\nsiblings "
       << (siblings == SiblingMode::exclusive ? "exclusive" : "independent") << '\n';
    for (std::uint32_t i = 0; i < concepts.size(); ++i) {
        const auto& c = concepts[i];
        os << i << ' ';
        if (c.parent == kRoot) {
            os << "ROOT";
        } else {
            os << c.parent;
        }
        os << ' ' << c.probability << ' ' << c.log_mean << ' ' << c.log_sd;
        for (double v : c.direction) os << ' ' << v;
        os << '\n';
    }
    return os.str();
}

GroundTruthTree make_tree(const GeneratorConfig& config) {
    if (config.depth == 0 || config.top_concepts == 0) {
        throw std::invalid_argument("make_tree: need at least one level and one top concept");
    }
    if (!(config.parent_mix >= 0.0 && config.parent_mix < 1.0)) {
        throw std::invalid_argument("make_tree: parent_mix must be in [0, 1)");
    }
    std::size_t total = 0, level = config.top_concepts;
    for (std::size_t d = 0; d < config.depth; ++d) {
        total += level;
        level *= config.children_per_concept;
    }
    if (total > config.d_model) {
        throw std::invalid_argument("make_tree: " + std::to_string(total) +
                                    " concepts need d_model >= that many orthogonal refinements");
    }

    // Orthonormal basis via Gram-Schmidt (twice for stability).
    Rng rng(config.seed);
    std::vector<std::vector<double>> basis;
    while (basis.size() < total) {
        auto v = random_unit_vector(rng, config.d_model);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) {
                const double c = dot(v, q);
                for (std::size_t j = 0; j < v.size(); ++j) v[j] -= c * q[j];
            }
        const double n = std::sqrt(squared_norm(v));
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }

    GroundTruthTree tree;
    tree.d_model = config.d_model;
    tree.noise = config.noise;
    tree.siblings = config.siblings;
    const double mix = config.parent_mix;
    const double ortho = std::sqrt(1.0 - mix * mix);
    std::size_t next = 0;
    std::vector<std::uint32_t> frontier;
    for (std::size_t i = 0; i < config.top_concepts; ++i) {
        Concept c;
        c.direction = basis[next++];
        c.refinement = c.direction;
        c.probability = config.top_probability;
        c.log_mean = config.log_mean;
        c.log_sd = config.log_sd;
        frontier.push_back(static_cast<std::uint32_t>(tree.concepts.size()));
        tree.concepts.push_back(std::move(c));
    }
    for (std::size_t d = 1; d < config.depth; ++d) {
        std::vector<std::uint32_t> next_frontier;
        for (auto p : frontier) {
            for (std::size_t k = 0; k < config.children_per_concept; ++k) {
                Concept c;
                c.parent = p;
                c.refinement = basis[next++];
                const auto& pd = tree.concepts[p].direction;
                c.direction.resize(config.d_model);
                for (std::size_t j = 0; j < config.d_model; ++j)
                    c.direction[j] = mix * pd[j] + ortho * c.refinement[j];
                const double n = std::sqrt(squared_norm(c.direction));
                for (auto& x : c.direction) x /= n;
                c.probability = config.child_probability;
                c.log_mean = config.log_mean;
                c.log_sd = config.log_sd;
                next_frontier.push_back(static_cast<std::uint32_t>(tree.concepts.size()));
                tree.concepts.push_back(std::move(c));
            }
        }
        frontier = std::move(next_frontier);
    }
    tree.validate();
    return tree;
}

GeneratedData generate(const GroundTruthTree& tree, std::size_t rows, std::uint64_t seed) {
    tree.validate();
    const std::size_t n = tree.concepts.size();
    std::vector<std::vector<std::uint32_t>> kids(n + 1);
    for (std::uint32_t i = 0; i < n; ++i)
        kids[tree.concepts[i].parent == kRoot ? n : tree.concepts[i].parent].push_back(i);

    GeneratedData out;
    out.x = DenseMatrix(rows, tree.d_model);
    out.labels.resize(rows);
    const Rng base(seed);
    std::vector<std::uint32_t> stack;
    for (std::size_t r = 0; r < rows; ++r) {
        Rng rng = base.fork(r);
        auto xr = out.x.row(r);
        auto& fired = out.labels[r];
        // Top-down: a node's children are only visited when it fired.
        auto visit_children = [&](std::size_t slot) {
            const auto& cs = kids[slot];
            if (tree.siblings == SiblingMode::exclusive && slot != n) {
                const double u = rng.uniform();
                double cum = 0.0;
                for (auto c : cs) {
                    cum += tree.concepts[c].probability;
                    if (u < cum) {
                        stack.push_back(c);
                        break;
                    }
                }
            } else {
                for (auto c : cs)
                    if (rng.uniform() < tree.concepts[c].probability) stack.push_back(c);
            }
        };
        stack.clear();
        visit_children(n);
        std::reverse(stack.begin(), stack.end());
        while (!stack.empty()) {
            const auto c = stack.back();
            stack.pop_back();
            const auto& con = tree.concepts[c];
            const double mag = std::exp(con.log_mean + con.log_sd * rng.normal());
            for (std::size_t j = 0; j < xr.size(); ++j) xr[j] += mag * con.direction[j];
            fired.push_back(c);
            const auto before = stack.size();
            visit_children(c);
            std::reverse(stack.begin() + static_cast<std::ptrdiff_t>(before), stack.end());
        }
        std::sort(fired.begin(), fired.end());
        for (auto& v : xr) {
            if (tree.noise > 0.0) v += tree.noise * rng.normal();
            v = static_cast<double>(static_cast<float>(v));
        }
    }
    return out;
}

std::vector<std::uint8_t> concept_indicator(const GeneratedData& data, std::uint32_t concept_index) {
    std::vector<std::uint8_t> out(data.labels.size(), 0);
    for (std::size_t r = 0; r < data.labels.size(); ++r)
        out[r] = std::binary_search(data.labels[r].begin(), data.labels[r].end(), concept_index) ? 1 : 0;
    return out;
}

std::string labels_csv(const std::vector<std::vector<std::uint32_t>>& labels) {
    std::string out = "row,concept\n";
    for (std::size_t r = 0; r < labels.size(); ++r)
        for (auto c : labels[r]) out += std::to_string(r) + ',' + std::to_string(c) + '\n';
    return out;
}

std::vector<std::vector<std::uint32_t>> parse_labels_csv(const std::string& text, std::size_t rows) {
    std::vector<std::vector<std::uint32_t>> out(rows);
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("row", 0) == 0) continue;
        if (line.empty() || line[0] == '#') continue;
        unsigned long long r = 0, c = 0;
        char comma = 0;
        std::istringstream ls(line);
        if (!(ls >> r >> comma >> c) || comma != ',') {
            throw FormatError("labels line " + std::to_string(line_no) + ": expected 'row,concept'");
        }
        if (r >= rows) {
            throw FormatError("labels line " + std::to_string(line_no) + ": row " + std::to_string(r) +
                              " beyond " + std::to_string(rows) + " rows");
        }
        out[r].push_back(static_cast<std::uint32_t>(c));
    }
    for (auto& l : out) std::sort(l.begin(), l.end());
    return out;
}

// ---------------------------------------------------------------------------
// Byte helpers

namespace {

class Writer {
  public:
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
    void str(std::string_view s) {
        u64(s.size());
        raw(s);
    }
    void matrix(const DenseMatrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (double v : m.values()) f64(v);
    }
    void u32_vec(const std::vector<std::uint32_t>& v) {
        u64(v.size());
        for (auto x : v) u32(x);
    }
    void u64_vec(const std::vector<std::uint64_t>& v) {
        u64(v.size());
        for (auto x : v) u64(x);
    }
    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        for (auto x : v) f64(x);
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
  public:
    Reader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    std::size_t remaining() const { return size_ - pos_; }
    std::size_t position() const { return pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError(what_ + ": truncated");
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(length(1)); }
    DenseMatrix matrix() {
        const auto r = u64();
        const auto c = u64();
        if (c != 0 && r > remaining() / 8 / c) throw FormatError(what_ + ": truncated matrix");
        DenseMatrix m(r, c);
        for (auto& v : m.values()) v = f64();
        return m;
    }
    std::vector<std::uint32_t> u32_vec() {
        std::vector<std::uint32_t> v(length(4));
        for (auto& x : v) x = u32();
        return v;
    }
    std::vector<std::uint64_t> u64_vec() {
        std::vector<std::uint64_t> v(length(8));
        for (auto& x : v) x = u64();
        return v;
    }
    std::vector<double> f64_vec() {
        std::vector<double> v(length(8));
        for (auto& x : v) x = f64();
        return v;
    }

  private:
    std::size_t length(std::size_t elem) {
        const auto n = u64();
        if (n > remaining() / elem) throw FormatError(what_ + ": truncated");
        return static_cast<std::size_t>(n);
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

constexpr std::string_view kActMagic = "TSAEACT1";
constexpr std::string_view kMetaMagic = "TSAEMETA";
constexpr std::string_view kCkptMagic = "TSAECKPT";

} // namespace

// ---------------------------------------------------------------------------
// Activation files

std::vector<std::uint8_t> encode_dataset(const ActivationDataset& ds) {
    Writer w;
    w.raw(kActMagic);
    w.u32(kActivationVersion);
    if (ds.x.cols() > 0xFFFFFFFFull) throw DimensionError("dataset width exceeds u32");
    w.u32(static_cast<std::uint32_t>(ds.x.cols()));
    w.u64(ds.x.rows());
    w.u8(0);
    w.bytes.reserve(w.bytes.size() + ds.x.size() * 4 + ds.metadata.size() + 16);
    for (double v : ds.x.values()) w.f32(static_cast<float>(v));
    if (!ds.metadata.empty()) {
        w.raw(kMetaMagic);
        w.u32(static_cast<std::uint32_t>(ds.metadata.size()));
        w.raw(ds.metadata);
    }
    return std::move(w.bytes);
}

ActivationDataset decode_dataset(const std::vector<std::uint8_t>& bytes, std::size_t expected_d_model) {
    Reader r(bytes.data(), bytes.size(), "activation file");
    if (bytes.size() < kActMagic.size() || r.raw(kActMagic.size()) != kActMagic) {
        throw FormatError("activation file: bad magic (expected TSAEACT1)");
    }
    const auto version = r.u32();
    if (version != kActivationVersion) {
        throw FormatError("activation file: unsupported version " + std::to_string(version) +
                          " (this build reads " + std::to_string(kActivationVersion) + ")");
    }
    const auto d_m = r.u32();
    const auto rows = r.u64();
    const auto dtype = r.u8();
    if (dtype != 0) throw FormatError("activation file: unsupported dtype " + std::to_string(dtype));
    if (d_m == 0) throw FormatError("activation file: d_m is 0");
    if (expected_d_model != 0 && d_m != expected_d_model) {
        throw FormatError("activation file: d_m " + std::to_string(d_m) + " does not match expected " +
                          std::to_string(expected_d_model));
    }
    const std::uint64_t row_bytes = 4ull * d_m;
    const std::uint64_t found = r.remaining() / row_bytes;
    if (found < rows) {
        throw FormatError("activation file truncated: header declares " + std::to_string(rows) +
                          " rows, found " + std::to_string(found));
    }
    ActivationDataset ds;
    ds.x = DenseMatrix(rows, d_m);
    for (auto& v : ds.x.values()) v = static_cast<double>(r.f32());
    if (r.remaining() > 0) {
        if (r.remaining() < kMetaMagic.size() + 4 || r.raw(kMetaMagic.size()) != kMetaMagic) {
            throw FormatError("activation file: " + std::to_string(rows) +
                              " rows declared but trailing bytes are not a metadata block");
        }
        const auto len = r.u32();
        ds.metadata = r.raw(len);
        if (r.remaining() != 0) throw FormatError("activation file: bytes after metadata block");
    }
    return ds;
}

void save_dataset(const std::string& path, const ActivationDataset& ds) {
    write_file_atomic(path, encode_dataset(ds));
}

ActivationDataset load_dataset(const std::string& path, std::size_t expected_d_model) {
    try {
        return decode_dataset(read_file(path), expected_d_model);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// magic, u32 version, u32 section count, then per section: str name,
// str payload, u64 FNV-1a of the payload.

namespace {

void put_adam(Writer& w, const AdamState& s) {
    w.matrix(s.first_moment);
    w.matrix(s.second_moment);
    w.u64(s.step);
    w.f64(s.params.learning_rate);
    w.f64(s.params.beta1);
    w.f64(s.params.beta2);
    w.f64(s.params.epsilon);
}

AdamState get_adam(Reader& r) {
    AdamState s;
    s.first_moment = r.matrix();
    s.second_moment = r.matrix();
    s.step = r.u64();
    s.params.learning_rate = r.f64();
    s.params.beta1 = r.f64();
    s.params.beta2 = r.f64();
    s.params.epsilon = r.f64();
    return s;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    std::vector<std::pair<std::string, Writer>> sections;
    {
        Writer w;
        w.str(c.config_text);
        sections.emplace_back("config", std::move(w));
    }
    {
        Writer w;
        w.u32_vec(c.model.topology.layer_sizes());
        w.u32_vec(c.model.topology.parents());
        sections.emplace_back("topology", std::move(w));
    }
    {
        Writer w;
        w.matrix(c.model.encoder);
        w.matrix(c.model.decoder);
        w.matrix(c.model.bias);
        w.u32_vec(c.model.layer_k);
        w.u32(c.model.aux.k_aux);
        w.f64_vec(c.model.aux.alpha);
        w.u8(c.model.aux.keep_empty_term ? 1 : 0);
        sections.emplace_back("weights", std::move(w));
    }
    {
        Writer w;
        put_adam(w, c.encoder_opt);
        put_adam(w, c.decoder_opt);
        put_adam(w, c.bias_opt);
        sections.emplace_back("optimizer", std::move(w));
    }
    {
        Writer w;
        w.f64_vec(c.ledger.capacity);
        w.u64_vec(c.ledger.activation_count);
        w.u64_vec(c.ledger.last_active);
        w.u64(c.ledger.tokens_seen);
        sections.emplace_back("ledger", std::move(w));
    }
    {
        Writer w;
        w.u64(c.state.step);
        w.u64(c.state.events);
        w.u8(c.state.flushed ? 1 : 0);
        w.u64(c.state.config_hash);
        sections.emplace_back("state", std::move(w));
    }
    Writer out;
    out.raw(kCkptMagic);
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, w] : sections) {
        out.str(name);
        const std::string_view payload(reinterpret_cast<const char*>(w.bytes.data()), w.bytes.size());
        out.str(payload);
        out.u64(fnv1a64(payload));
    }
    return std::move(out.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes.data(), bytes.size(), "checkpoint");
    if (bytes.size() < kCkptMagic.size() || r.raw(kCkptMagic.size()) != kCkptMagic) {
        throw FormatError("checkpoint: bad magic (expected TSAECKPT)");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                          " (this build reads " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = r.u32();
    std::map<std::string, std::string> payloads;
    static const char* kOrder[] = {"config", "topology", "weights", "optimizer", "ledger", "state"};
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string expected = i < 6 ? kOrder[i] : "?";
        std::string name;
        try {
            name = r.str();
        } catch (const FormatError&) {
            throw FormatError("checkpoint section '" + expected + "': truncated header");
        }
        std::string payload;
        std::uint64_t sum = 0;
        try {
            payload = r.str();
            sum = r.u64();
        } catch (const FormatError&) {
            throw FormatError("checkpoint section '" + name + "': truncated");
        }
        if (fnv1a64(payload) != sum) {
            throw FormatError("checkpoint section '" + name + "': checksum mismatch");
        }
        payloads[name] = std::move(payload);
    }
    auto section = [&](const char* name) -> Reader {
        auto it = payloads.find(name);
        if (it == payloads.end()) throw FormatError(std::string("checkpoint section '") + name + "': missing");
        return Reader(reinterpret_cast<const std::uint8_t*>(it->second.data()), it->second.size(),
                      std::string("checkpoint section '") + name + "'");
    };

    Checkpoint c;
    {
        auto s = section("config");
        c.config_text = s.str();
    }
    {
        auto s = section("topology");
        auto sizes = s.u32_vec();
        auto parents = s.u32_vec();
        c.model.topology = TreeTopology(std::move(sizes), std::move(parents));
        const auto v = validate(c.model.topology);
        if (!v.empty()) throw FormatError("checkpoint section 'topology': " + v.front().message);
    }
    {
        auto s = section("weights");
        c.model.encoder = s.matrix();
        c.model.decoder = s.matrix();
        c.model.bias = s.matrix();
        c.model.layer_k = s.u32_vec();
        c.model.aux.k_aux = s.u32();
        c.model.aux.alpha = s.f64_vec();
        c.model.aux.keep_empty_term = s.u8() != 0;
        try {
            c.model.check();
        } catch (const std::exception& e) {
            throw FormatError(std::string("checkpoint section 'weights': ") + e.what());
        }
    }
    {
        auto s = section("optimizer");
        c.encoder_opt = get_adam(s);
        c.decoder_opt = get_adam(s);
        c.bias_opt = get_adam(s);
    }
    {
        auto s = section("ledger");
        c.ledger.capacity = s.f64_vec();
        c.ledger.activation_count = s.u64_vec();
        c.ledger.last_active = s.u64_vec();
        c.ledger.tokens_seen = s.u64();
        const auto d_f = c.model.d_features();
        if (c.ledger.capacity.size() != d_f || c.ledger.activation_count.size() != d_f ||
            c.ledger.last_active.size() != d_f) {
            throw FormatError("checkpoint section 'ledger': size disagrees with the model");
        }
    }
    {
        auto s = section("state");
        c.state.step = s.u64();
        c.state.events = s.u64();
        c.state.flushed = s.u8() != 0;
        c.state.config_hash = s.u64();
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_file_atomic(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Files

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw FormatError("cannot read " + path);
    }
    return bytes;
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::remove(tmp.c_str());
            throw std::runtime_error("write failed for " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot rename " + tmp + " to " + path + ": " + ec.message());
    }
}

void write_text_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

} // namespace treesae
