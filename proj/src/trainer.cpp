#include "treesae/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "treesae/log.hpp"

namespace treesae {

namespace {

// RNG stream keys; each consumer forks its own stream from the run seed.
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamTopology = 2;
constexpr std::uint64_t kStreamShuffle = 3;
constexpr std::uint64_t kStreamRenorm = 4;

std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string fmt_list(const std::vector<std::uint32_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string fmt_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "train.steps", "train.batch_size", "train.learning_rate", "train.seed",
        "train.checkpoint_every", "train.dataset",
        "model.layer_sizes", "model.layers", "model.k_aux", "model.aux_profile",
        "model.aux_alpha", "model.keep_empty_aux",
        "optim.project_decoder_grad", "optim.grad_clip", "optim.init_bias_to_mean",
        "allocator.dynamic", "allocator.flush_at_half", "allocator.dead_window",
        "allocator.first_interval", "allocator.max_interval", "allocator.growth",
        "allocator.growth_factor", "allocator.eligibility_rate",
        "allocator.root_capacity_share", "allocator.capacity_mode",
        "data.rows", "data.d_model",
    };
    return keys;
}

} // namespace

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::from_config(const Config& cfg) {
    static const std::set<std::string> sections = {"train", "model", "optim", "allocator", "data"};
    for (const auto& [key, value] : cfg.values()) {
        const auto dot = key.find('.');
        const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        if (sections.count(section) && !known_keys().count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    TrainConfig c;
    c.steps = cfg.get_uint("train.steps", c.steps);
    c.batch_size = static_cast<std::uint32_t>(cfg.get_uint("train.batch_size", c.batch_size));
    c.learning_rate = cfg.get_double("train.learning_rate", c.learning_rate);
    c.seed = cfg.get_uint("train.seed", c.seed);
    c.checkpoint_every = cfg.get_uint("train.checkpoint_every", c.checkpoint_every);
    c.dataset_path = cfg.get_string("train.dataset", c.dataset_path);
    c.layer_sizes = cfg.get_uint_list("model.layer_sizes", c.layer_sizes);
    c.layer_k = cfg.get_uint_list("model.layers", c.layer_k);
    c.k_aux = static_cast<std::uint32_t>(cfg.get_uint("model.k_aux", c.k_aux));
    c.aux_profile = cfg.get_string("model.aux_profile", c.aux_profile);
    c.aux_alpha = cfg.get_double_list("model.aux_alpha", c.aux_alpha);
    c.keep_empty_aux = cfg.get_bool("model.keep_empty_aux", c.keep_empty_aux);
    c.project_decoder_grad = cfg.get_bool("optim.project_decoder_grad", c.project_decoder_grad);
    c.grad_clip = cfg.get_double("optim.grad_clip", c.grad_clip);
    c.init_bias_to_mean = cfg.get_bool("optim.init_bias_to_mean", c.init_bias_to_mean);
    c.dynamic_allocation = cfg.get_bool("allocator.dynamic", c.dynamic_allocation);
    c.flush_at_half = cfg.get_bool("allocator.flush_at_half", c.flush_at_half);
    c.dead_window = cfg.get_uint("allocator.dead_window", c.dead_window);
    c.schedule.first_interval = cfg.get_uint("allocator.first_interval", c.schedule.first_interval);
    c.schedule.max_interval = cfg.get_uint("allocator.max_interval", c.schedule.max_interval);
    const auto growth = cfg.get_string("allocator.growth", "multiply");
    if (growth == "multiply") {
        c.schedule.growth = ScheduleConfig::Growth::multiply;
    } else if (growth == "add") {
        c.schedule.growth = ScheduleConfig::Growth::add;
    } else {
        throw ConfigError("config key 'allocator.growth': expected multiply|add, got '" + growth + "'");
    }
    c.schedule.growth_factor = cfg.get_uint("allocator.growth_factor", c.schedule.growth_factor);
    c.reallocation.eligibility_rate =
        cfg.get_double("allocator.eligibility_rate", c.reallocation.eligibility_rate);
    c.reallocation.root_capacity_share =
        cfg.get_double("allocator.root_capacity_share", c.reallocation.root_capacity_share);
    const auto mode = cfg.get_string("allocator.capacity_mode", "per_instance");
    if (mode == "per_instance") {
        c.capacity_mode = CapacityMode::per_instance;
    } else if (mode == "per_batch") {
        c.capacity_mode = CapacityMode::per_batch;
    } else {
        throw ConfigError("config key 'allocator.capacity_mode': expected per_instance|per_batch, got '" +
                          mode + "'");
    }
    c.data_rows = cfg.get_uint("data.rows", 0);
    c.data_d_model = cfg.get_uint("data.d_model", 0);
    c.validate();
    return c;
}

Config TrainConfig::to_config() const {
    Config c;
    c.set("train.steps", std::to_string(steps));
    c.set("train.batch_size", std::to_string(batch_size));
    c.set("train.learning_rate", fmt(learning_rate));
    c.set("train.seed", std::to_string(seed));
    c.set("train.checkpoint_every", std::to_string(checkpoint_every));
    if (!dataset_path.empty()) c.set("train.dataset", dataset_path);
    c.set("model.layer_sizes", fmt_list(layer_sizes));
    c.set("model.layers", fmt_list(layer_k));
    c.set("model.k_aux", std::to_string(k_aux));
    c.set("model.aux_profile", aux_profile);
    if (aux_profile == "custom") c.set("model.aux_alpha", fmt_list(aux_alpha));
    c.set("model.keep_empty_aux", keep_empty_aux ? "true" : "false");
    c.set("optim.project_decoder_grad", project_decoder_grad ? "true" : "false");
    c.set("optim.grad_clip", fmt(grad_clip));
    c.set("optim.init_bias_to_mean", init_bias_to_mean ? "true" : "false");
    c.set("allocator.dynamic", dynamic_allocation ? "true" : "false");
    c.set("allocator.flush_at_half", flush_at_half ? "true" : "false");
    c.set("allocator.dead_window", std::to_string(dead_window));
    c.set("allocator.first_interval", std::to_string(schedule.first_interval));
    c.set("allocator.max_interval", std::to_string(schedule.max_interval));
    c.set("allocator.growth",
          schedule.growth == ScheduleConfig::Growth::multiply ? "multiply" : "add");
    c.set("allocator.growth_factor", std::to_string(schedule.growth_factor));
    c.set("allocator.eligibility_rate", fmt(reallocation.eligibility_rate));
    c.set("allocator.root_capacity_share", fmt(reallocation.root_capacity_share));
    c.set("allocator.capacity_mode",
          capacity_mode == CapacityMode::per_instance ? "per_instance" : "per_batch");
    if (data_rows) c.set("data.rows", std::to_string(data_rows));
    if (data_d_model) c.set("data.d_model", std::to_string(data_d_model));
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (batch_size == 0) fail("batch_size must be > 0");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (layer_sizes.empty()) fail("layer_sizes must list at least one layer");
    if (layer_k.size() != layer_sizes.size()) {
        fail(std::to_string(layer_k.size()) + " top-k budgets (layers) for " +
             std::to_string(layer_sizes.size()) + " layer sizes");
    }
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        if (layer_sizes[l] == 0) fail("layer " + std::to_string(l) + " is empty");
        if (layer_k[l] == 0) fail("layer " + std::to_string(l) + " has top-k 0");
        if (layer_k[l] > layer_sizes[l]) fail("layer " + std::to_string(l) + " top-k exceeds its size");
    }
    if (aux_profile != "first" && aux_profile != "all" && aux_profile != "none" &&
        aux_profile != "custom") {
        fail("aux_profile must be first|all|none|custom");
    }
    if (aux_profile == "custom" && aux_alpha.size() != layer_sizes.size()) {
        fail("aux_alpha needs one coefficient per layer");
    }
    for (double a : aux_alpha)
        if (!(a >= 0.0)) fail("aux_alpha entries must be >= 0");
    if (dead_window == 0) fail("dead_window must be > 0");
    if (schedule.first_interval == 0 || schedule.max_interval == 0) fail("schedule intervals must be > 0");
    if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
    if (!(reallocation.eligibility_rate >= 0.0)) fail("eligibility_rate must be >= 0");
    if (!(reallocation.root_capacity_share >= 0.0)) fail("root_capacity_share must be >= 0");
}

AuxConfig TrainConfig::aux() const {
    const auto layers = layer_sizes.size();
    if (aux_profile == "first") return AuxConfig::first_layer_profile(layers, k_aux);
    if (aux_profile == "all") return AuxConfig::all_layers_profile(layers, k_aux);
    AuxConfig a;
    a.k_aux = k_aux;
    a.alpha = aux_profile == "custom" ? aux_alpha : std::vector<double>(layers, 0.0);
    a.keep_empty_term = keep_empty_aux;
    return a;
}

// ---------------------------------------------------------------------------
// Telemetry

std::string RunTelemetry::steps_csv(std::size_t layers) const {
    std::ostringstream os;
    os << "step,recons,aux,total";
    for (std::size_t l = 0; l < layers; ++l) os << ",l0_" << l;
    for (std::size_t l = 0; l < layers; ++l) os << ",dead_" << l;
    os << '\n';
    for (const auto& s : steps) {
        os << s.step << ',' << fmt(s.recons) << ',' << fmt(s.aux) << ',' << fmt(s.total);
        for (double v : s.l0) os << ',' << fmt(v);
        for (auto v : s.dead) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

std::string RunTelemetry::events_text() const {
    std::ostringstream os;
    for (const auto& e : events) {
        os << "# event step=" << e.step << " kind=" << e.kind << " moves=" << e.moves << " dead_before=";
        for (std::size_t l = 0; l < e.dead_before.size(); ++l) os << (l ? "," : "") << e.dead_before[l];
        os << '\n' << e.audit;
    }
    return os.str();
}

void RunTelemetry::append(const RunTelemetry& other) {
    steps.insert(steps.end(), other.steps.begin(), other.steps.end());
    events.insert(events.end(), other.events.begin(), other.events.end());
    wall_seconds += other.wall_seconds;
}

std::size_t coverage_violations(const SparseActivation& acts, const TreeTopology& topology) {
    std::size_t bad = 0;
    std::vector<std::uint8_t> on(topology.num_features(), 0);
    for (const auto& row : acts.rows) {
        for (const auto& e : row) on[e.feature] = 1;
        for (const auto& e : row) {
            const auto p = topology.parent(e.feature);
            if (p != kRoot && !on[p]) ++bad;
        }
        for (const auto& e : row) on[e.feature] = 0;
    }
    return bad;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config, const DenseMatrix& data, std::optional<TreeTopology> topology)
    : config_(std::move(config)), data_(data) {
    config_.validate();
    if (data.rows() == 0 || data.cols() == 0) throw DimensionError("train: empty dataset");
    if (config_.data_d_model != 0 && config_.data_d_model != data.cols()) {
        throw DimensionError("train: dataset d_m " + std::to_string(data.cols()) +
                             " does not match config " + std::to_string(config_.data_d_model));
    }
    config_.data_rows = data.rows();
    config_.data_d_model = data.cols();

    const Rng root(config_.seed);
    TreeTopology topo;
    if (topology) {
        topo = std::move(*topology);
        if (topo.layer_sizes() != config_.layer_sizes) {
            throw DimensionError("train: initial topology layer sizes disagree with config");
        }
        const auto v = validate(topo);
        if (!v.empty()) throw std::invalid_argument("train: initial topology invalid: " + v.front().message);
    } else if (config_.layer_sizes.size() == 1) {
        topo = TreeTopology::flat(config_.layer_sizes[0]);
    } else {
        Rng trng = root.fork(kStreamTopology);
        topo = TreeTopology::random(config_.layer_sizes, trng);
    }
    Rng irng = root.fork(kStreamInit);
    model_ = TreeSaeModel::initialize(std::move(topo), data.cols(), config_.layer_k, config_.aux(), irng);
    if (config_.init_bias_to_mean) {
        std::vector<double> mean(data.cols(), 0.0);
        for (std::size_t r = 0; r < data.rows(); ++r)
            for (std::size_t j = 0; j < data.cols(); ++j) mean[j] += data(r, j);
        for (std::size_t j = 0; j < data.cols(); ++j)
            model_.bias(0, j) = mean[j] / static_cast<double>(data.rows());
    }
    const AdamParams p{config_.learning_rate};
    enc_opt_ = AdamState(model_.encoder.rows(), model_.encoder.cols(), p);
    dec_opt_ = AdamState(model_.decoder.rows(), model_.decoder.cols(), p);
    bias_opt_ = AdamState(1, data.cols(), p);
    ledger_ = CapacityLedger(model_.d_features());
    state_.config_hash = config_.to_config().hash();
    const auto ev = schedule_steps(config_.steps, config_.schedule);
    event_steps_ = std::set<std::uint64_t>(ev.begin(), ev.end());
}

Trainer::Trainer(const Checkpoint& checkpoint, TrainConfig config, const DenseMatrix& data)
    : config_(std::move(config)), data_(data) {
    config_.validate();
    if (checkpoint.model.d_model() != data.cols()) {
        throw DimensionError("resume: dataset d_m " + std::to_string(data.cols()) +
                             " does not match checkpoint d_m " + std::to_string(checkpoint.model.d_model()));
    }
    if (config_.data_rows != 0 && config_.data_rows != data.rows()) {
        throw DimensionError("resume: dataset has " + std::to_string(data.rows()) +
                             " rows, the run was started on " + std::to_string(config_.data_rows));
    }
    config_.data_rows = data.rows();
    config_.data_d_model = data.cols();
    if (checkpoint.model.topology.layer_sizes() != config_.layer_sizes ||
        checkpoint.model.layer_k != config_.layer_k) {
        throw ConfigError("resume: config disagrees with the checkpoint's model shape");
    }
    model_ = checkpoint.model;
    enc_opt_ = checkpoint.encoder_opt;
    dec_opt_ = checkpoint.decoder_opt;
    bias_opt_ = checkpoint.bias_opt;
    ledger_ = checkpoint.ledger;
    state_ = checkpoint.state;
    state_.config_hash = config_.to_config().hash();
    const auto ev = schedule_steps(config_.steps, config_.schedule);
    event_steps_ = std::set<std::uint64_t>(ev.begin(), ev.end());
}

DenseMatrix Trainer::batch(std::uint64_t step) {
    const std::uint64_t n = data_.rows();
    const std::uint64_t b = config_.batch_size;
    DenseMatrix out(b, data_.cols());
    for (std::uint64_t j = 0; j < b; ++j) {
        // Position in the endless stream of epochs, each a fresh seeded shuffle.
        const std::uint64_t g = step * b + j;
        const std::uint64_t epoch = g / n;
        if (epoch != cached_epoch_) {
            perm_.resize(n);
            std::iota(perm_.begin(), perm_.end(), 0u);
            Rng rng = Rng(config_.seed).fork(kStreamShuffle).fork(epoch);
            rng.shuffle(perm_.begin(), perm_.end());
            cached_epoch_ = epoch;
        }
        const auto src = data_.row(perm_[g % n]);
        std::copy(src.begin(), src.end(), out.row(j).begin());
    }
    return out;
}

std::vector<std::uint32_t> Trainer::dead_counts() const {
    const auto& t = model_.topology;
    std::vector<std::uint32_t> out(t.num_layers(), 0);
    for (std::size_t l = 0; l < t.num_layers(); ++l)
        for (auto f = t.layer_begin(l); f < t.layer_end(l); ++f)
            if (ledger_.is_dead(f, config_.dead_window)) ++out[l];
    return out;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config_text = config_.to_config().to_text();
    c.model = model_;
    c.encoder_opt = enc_opt_;
    c.decoder_opt = dec_opt_;
    c.bias_opt = bias_opt_;
    c.ledger = ledger_;
    c.state = state_;
    return c;
}

StepRecord Trainer::step(RunTelemetry* telemetry) {
    const auto x = batch(state_.step);
    const auto dead = ledger_.dead_mask(config_.dead_window);
    ForwardTrace trace;
    Gradients g;
    try {
        trace = forward(model_, x, dead);
        g = backward(model_, trace);
    } catch (const NumericError& e) {
        throw TrainingAborted("step " + std::to_string(state_.step + 1) + ": " + e.what(), checkpoint());
    }

    if (config_.project_decoder_grad) {
        // Drop the component of each column's gradient along the column.
        const std::size_t d_m = model_.decoder.rows();
        for (std::size_t f = 0; f < model_.decoder.cols(); ++f) {
            double along = 0.0;
            for (std::size_t j = 0; j < d_m; ++j) along += g.decoder(j, f) * model_.decoder(j, f);
            for (std::size_t j = 0; j < d_m; ++j) g.decoder(j, f) -= along * model_.decoder(j, f);
        }
    }
    const double norm = std::sqrt(g.squared_norm());
    if (!std::isfinite(norm)) {
        throw TrainingAborted("step " + std::to_string(state_.step + 1) + ": non-finite gradient",
                              checkpoint());
    }
    if (config_.grad_clip > 0.0 && norm > config_.grad_clip) g.scale(config_.grad_clip / norm);

    adam_step(model_.encoder, g.encoder, enc_opt_, "encoder");
    adam_step(model_.decoder, g.decoder, dec_opt_, "decoder");
    adam_step(model_.bias, g.bias, bias_opt_, "bias");
    Rng rrng = Rng(config_.seed).fork(kStreamRenorm).fork(state_.step);
    unit_normalize_columns(model_.decoder, rrng);

    ledger_.record_batch(trace.activations, trace.total_loss, config_.capacity_mode);
    state_.step += 1;

    StepRecord rec;
    rec.step = state_.step;
    rec.recons = trace.recons_loss;
    rec.aux = trace.aux_loss;
    rec.total = trace.total_loss;
    const auto& t = model_.topology;
    rec.l0.resize(t.num_layers());
    for (std::size_t l = 0; l < t.num_layers(); ++l) {
        std::size_t active = 0;
        for (std::size_t r = 0; r < trace.activations.batch_size(); ++r)
            active += trace.activations.active_in_range(r, t.layer_begin(l), t.layer_end(l));
        rec.l0[l] = static_cast<double>(active) / static_cast<double>(x.rows());
    }

    if (config_.checkpoint_every > 0 && state_.step % config_.checkpoint_every == 0) {
        const auto bad = coverage_violations(trace.activations, t);
        if (bad != 0) {
            throw std::logic_error("coverage violated on " + std::to_string(bad) + " activations at step " +
                                   std::to_string(state_.step));
        }
    }

    run_events(telemetry);
    rec.dead = dead_counts();
    if (telemetry) telemetry->steps.push_back(rec);
    return rec;
}

void Trainer::run_events(RunTelemetry* telemetry) {
    if (!config_.dynamic_allocation) return;
    auto record = [&](const char* kind, const AllocationPlan& plan, std::vector<std::uint32_t> before) {
        log::debug(std::string(kind) + " at step " + std::to_string(state_.step) + ": " +
                   std::to_string(plan.total_moves()) + " moves");
        if (!telemetry) return;
        EventRecord e;
        e.step = state_.step;
        e.kind = kind;
        e.moves = plan.total_moves();
        e.dead_before = std::move(before);
        e.audit = format_audit(state_.step, plan);
        telemetry->events.push_back(std::move(e));
    };
    if (event_steps_.count(state_.step)) {
        const auto before = dead_counts();
        const auto pools = dead_pools(model_.topology, ledger_, config_.dead_window);
        const auto plan = reallocate(model_.topology, ledger_, pools, config_.reallocation);
        ledger_.reset_capacity();
        state_.events += 1;
        record("reallocate", plan, before);
    }
    if (config_.flush_at_half && !state_.flushed && state_.step == flush_step(config_.steps)) {
        const auto before = dead_counts();
        const auto pools = dead_pools(model_.topology, ledger_, config_.dead_window);
        const auto plan = flush_dead_to_root(model_.topology, pools);
        state_.flushed = true;
        record("flush", plan, before);
    }
}

RunTelemetry Trainer::run(const std::function<void(const Checkpoint&)>& on_checkpoint) {
    RunTelemetry tel;
    const auto start = std::chrono::steady_clock::now();
    while (!done()) {
        step(&tel);
        if (on_checkpoint && config_.checkpoint_every > 0 && state_.step % config_.checkpoint_every == 0 &&
            !done()) {
            on_checkpoint(checkpoint());
        }
    }
    if (on_checkpoint) on_checkpoint(checkpoint());
    tel.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return tel;
}

TrainResult train(const TrainConfig& config, const DenseMatrix& data,
                  std::optional<TreeTopology> topology,
                  const std::function<void(const Checkpoint&)>& on_checkpoint) {
    Trainer t(config, data, std::move(topology));
    TrainResult r;
    r.telemetry = t.run(on_checkpoint);
    r.checkpoint = t.checkpoint();
    return r;
}

TrainResult resume(const Checkpoint& checkpoint, const DenseMatrix& data,
                   std::optional<std::uint64_t> total_steps,
                   const std::function<void(const Checkpoint&)>& on_checkpoint) {
    const auto cfg_text = Config::parse(checkpoint.config_text);
    if (cfg_text.hash() != checkpoint.state.config_hash) {
        throw FormatError("checkpoint: config echo does not match its recorded hash");
    }
    auto config = TrainConfig::from_config(cfg_text);
    if (total_steps) config.steps = *total_steps;
    Trainer t(checkpoint, config, data);
    TrainResult r;
    if (t.done()) {
        r.checkpoint = t.checkpoint();
        return r;
    }
    r.telemetry = t.run(on_checkpoint);
    r.checkpoint = t.checkpoint();
    return r;
}

} // namespace treesae
