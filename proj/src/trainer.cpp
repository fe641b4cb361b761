#include "cifgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "cifgen/error.hpp"
#include "cifgen/tokenizer.hpp"
#include "cifgen/util.hpp"

namespace cifgen {

namespace {

using nlohmann::json;

constexpr std::uint32_t kCheckpointVersion = 1;

// Replaces Cond slot values with indices into a local profile list.
PackedSegment localize(const PackedSegment& seg, std::vector<int>& profile_ids) {
    PackedSegment local = seg;
    profile_ids.clear();
    for (auto& slot : local.slots)
        if (slot.kind == SlotKind::Cond) {
            profile_ids.push_back(slot.value);
            slot.value = static_cast<int>(profile_ids.size()) - 1;
        }
    return local;
}

json model_json(const ModelConfig& c) {
    return {{"embed_dim", c.embed_dim},       {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},           {"context", c.context},
            {"vocab", c.vocab},               {"cond_input_dim", c.cond_input_dim},
            {"cond_hidden", c.cond_hidden},   {"cond_layers", c.cond_layers},
            {"ffn_multiplier", c.ffn_multiplier}, {"dropout", c.dropout}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.context = j.at("context");
    c.vocab = j.at("vocab");
    c.cond_input_dim = j.at("cond_input_dim");
    c.cond_hidden = j.at("cond_hidden");
    c.cond_layers = j.at("cond_layers");
    c.ffn_multiplier = j.at("ffn_multiplier");
    c.dropout = j.at("dropout");
    return c;
}

json train_json(const TrainConfig& c) {
    return {{"max_steps", c.max_steps},       {"batch_size", c.batch_size},   {"grad_accum", c.grad_accum},
            {"learning_rate", c.learning_rate}, {"min_lr", c.min_lr},         {"warmup_steps", c.warmup_steps},
            {"decay_steps", c.decay_steps},   {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
            {"beta2", c.beta2},               {"adam_eps", c.adam_eps},       {"grad_clip", c.grad_clip},
            {"seed", c.seed},                 {"augment", c.augment},         {"eval_interval", c.eval_interval},
            {"jobs", c.jobs}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    c.max_steps = j.at("max_steps");
    c.batch_size = j.at("batch_size");
    c.grad_accum = j.at("grad_accum");
    c.learning_rate = j.at("learning_rate");
    c.min_lr = j.at("min_lr");
    c.warmup_steps = j.at("warmup_steps");
    c.decay_steps = j.at("decay_steps");
    c.weight_decay = j.at("weight_decay");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.adam_eps = j.at("adam_eps");
    c.grad_clip = j.at("grad_clip");
    c.seed = j.at("seed");
    c.augment = j.at("augment");
    c.eval_interval = j.at("eval_interval");
    c.jobs = j.at("jobs");
    return c;
}

void append_doubles(std::string& out, std::span<const double> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int b = 0; b < 8; ++b) out[start + i * 8 + static_cast<std::size_t>(b)] = static_cast<char>(bits >> (8 * b));
    }
}

std::vector<double> read_doubles(std::string_view bytes, std::size_t& pos, std::size_t n) {
    if (pos + n * 8 > bytes.size()) throw Error(ErrorCode::BadCheckpoint, "checkpoint truncated");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i * 8 + static_cast<std::size_t>(b)]))
                    << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    pos += n * 8;
    return out;
}

std::uint64_t read_le(std::string_view bytes, std::size_t& pos, int width) {
    if (pos + static_cast<std::size_t>(width) > bytes.size()) throw Error(ErrorCode::BadCheckpoint, "checkpoint truncated");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(b)])) << (8 * b);
    pos += static_cast<std::size_t>(width);
    return v;
}

}  // namespace

void TrainConfig::validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
    if (max_steps < 0) bad("max_steps must be >= 0");
    if (batch_size < 1 || grad_accum < 1) bad("batch_size and grad_accum must be >= 1");
    if (!(learning_rate > 0) || min_lr < 0 || min_lr > learning_rate) bad("need 0 <= min_lr <= learning_rate, learning_rate > 0");
    if (warmup_steps < 0 || decay_steps <= warmup_steps) bad("need 0 <= warmup_steps < decay_steps");
    if (weight_decay < 0 || grad_clip < 0) bad("weight_decay and grad_clip must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) bad("betas must lie in [0, 1)");
    if (eval_interval < 1) bad("eval_interval must be >= 1");
    if (jobs < 1) bad("jobs must be >= 1");
}

double learning_rate_at(const TrainConfig& c, int step) noexcept {
    if (step < c.warmup_steps) return c.learning_rate * (step + 1) / (c.warmup_steps + 1);
    if (step > c.decay_steps) return c.min_lr;
    const double ratio = static_cast<double>(step - c.warmup_steps) / (c.decay_steps - c.warmup_steps);
    const double coeff = 0.5 * (1.0 + std::cos(std::numbers::pi * ratio));
    return c.min_lr + coeff * (c.learning_rate - c.min_lr);
}

void adamw_update(Model& model, std::span<const double> grad, AdamState& state, const TrainConfig& c, double lr,
                  int t) {
    auto params = model.parameters();
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (const auto& info : model.tensors()) {
        const double decay = info.is_matrix() ? c.weight_decay : 0.0;
        for (std::size_t i = info.offset; i < info.offset + info.size(); ++i) {
            const double g = grad[i];
            state.m[i] = c.beta1 * state.m[i] + (1 - c.beta1) * g;
            state.v[i] = c.beta2 * state.v[i] + (1 - c.beta2) * g * g;
            params[i] *= 1.0 - lr * decay;
            params[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + c.adam_eps);
        }
    }
}

Trainer::Trainer(Model& model, const TrainConfig& config, const TrainData& data)
    : model_(model), config_(config), data_(data) {
    config_.validate();
    if (data_.train.empty()) throw Error(ErrorCode::EmptyCorpus, "no training segments");
    clean_cache_.resize(data_.peaks.size());
}

void Trainer::restore(int completed_steps, AdamState state) {
    step_ = completed_steps;
    adam_ = std::move(state);
}

const PxrdProfile& Trainer::clean_profile(int index) const {
    if (index < 0 || static_cast<std::size_t>(index) >= data_.peaks.size())
        throw Error(ErrorCode::ShapeMismatch, "cond slot refers to missing peak list " + std::to_string(index));
    auto& slot = clean_cache_[static_cast<std::size_t>(index)];
    if (!slot) slot = transform(data_.peaks[static_cast<std::size_t>(index)], clean_transform());
    return *slot;
}

std::vector<PxrdProfile> Trainer::segment_profiles(const PackedSegment& seg, int step, std::size_t salt) const {
    std::vector<PxrdProfile> out;
    for (std::size_t k = 0; k < seg.slots.size(); ++k) {
        const auto& slot = seg.slots[k];
        if (slot.kind != SlotKind::Cond) continue;
        if (!config_.augment) {
            out.push_back(clean_profile(slot.value));
            continue;
        }
        const std::uint64_t stream = salt * static_cast<std::uint64_t>(seg.slots.size()) + k;
        std::mt19937_64 rng(derive_seed(derive_seed(config_.seed, static_cast<std::uint64_t>(step)), stream));
        if (slot.value < 0 || static_cast<std::size_t>(slot.value) >= data_.peaks.size())
            throw Error(ErrorCode::ShapeMismatch, "cond slot refers to missing peak list " + std::to_string(slot.value));
        out.push_back(transform(data_.peaks[static_cast<std::size_t>(slot.value)], sample_transform(rng)));
    }
    return out;
}

std::vector<std::size_t> Trainer::batch_indices(int step) const {
    const std::size_t n = data_.train.size();
    const std::size_t per_step = static_cast<std::size_t>(config_.batch_size) * static_cast<std::size_t>(config_.grad_accum);
    std::vector<std::size_t> out;
    out.reserve(per_step);
    std::size_t cached_epoch = static_cast<std::size_t>(-1);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < per_step; ++i) {
        const std::size_t global = static_cast<std::size_t>(step) * per_step + i;
        const std::size_t epoch = global / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(config_.seed ^ 0x5e6d0c4a11ULL, epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[global % n]);
    }
    return out;
}

StepResult Trainer::step() {
    const auto indices = batch_indices(step_);
    std::size_t targets = 0;
    for (auto idx : indices) {
        const auto& seg = data_.train[idx];
        for (int k = 0; k < seg.context(); ++k) targets += seg.has_target(k);
    }
    StepResult r;
    r.step = step_ + 1;
    r.lr = learning_rate_at(config_, step_);
    if (targets == 0) throw Error(ErrorCode::EmptyCorpus, "batch has no predictable tokens");
    const double scale = 1.0 / static_cast<double>(targets);

    const std::size_t n_params = model_.parameters().size();
    const int jobs = std::max(1, std::min<int>(config_.jobs, static_cast<int>(indices.size())));
    using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;
    std::vector<Buffer> grads(static_cast<std::size_t>(jobs), Buffer(n_params, 0.0));
    std::vector<double> losses(static_cast<std::size_t>(jobs), 0.0);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    auto work = [&](int j) {
        try {
            std::vector<int> ids;
            for (std::size_t i = static_cast<std::size_t>(j); i < indices.size(); i += static_cast<std::size_t>(jobs)) {
                const auto& seg = data_.train[indices[i]];
                const auto profiles = segment_profiles(seg, step_, i);
                const PackedSegment local = localize(seg, ids);
                const auto mask = build_mask(local);
                losses[static_cast<std::size_t>(j)] +=
                    model_.accumulate_gradient(local, mask, profiles, grads[static_cast<std::size_t>(j)], scale).total;
            }
        } catch (...) {
            errors[static_cast<std::size_t>(j)] = std::current_exception();
        }
    };
    if (jobs == 1) {
        work(0);
    } else {
        // profiles for the clean transform are cached lazily; fill them first
        if (!config_.augment)
            for (std::size_t p = 0; p < data_.peaks.size(); ++p) clean_profile(static_cast<int>(p));
        std::vector<std::thread> threads;
        for (int j = 0; j < jobs; ++j) threads.emplace_back(work, j);
        for (auto& t : threads) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    auto& grad = grads[0];
    double total = losses[0];
    for (int j = 1; j < jobs; ++j) {
        total += losses[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += grads[static_cast<std::size_t>(j)][i];
    }
    r.train_loss = total * scale;
    if (!std::isfinite(r.train_loss)) throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(r.step));

    double sq = 0;
    for (double g : grad) sq += g * g;
    r.grad_norm = std::sqrt(sq);
    if (config_.grad_clip > 0 && r.grad_norm > config_.grad_clip) {
        const double f = config_.grad_clip / (r.grad_norm + 1e-6);
        for (double& g : grad) g *= f;
    }
    adamw_update(model_, grad, adam_, config_, r.lr, step_ + 1);
    ++step_;
    return r;
}

double Trainer::validation_loss() const {
    if (data_.val.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0;
    std::size_t count = 0;
    std::vector<int> ids;
    for (const auto& seg : data_.val) {
        std::vector<PxrdProfile> profiles;
        for (const auto& slot : seg.slots)
            if (slot.kind == SlotKind::Cond) profiles.push_back(clean_profile(slot.value));
        const PackedSegment local = localize(seg, ids);
        const auto logits = model_.forward(local, build_mask(local), profiles);
        for (double v : token_losses(logits, local))
            if (!std::isnan(v)) {
                total += v;
                ++count;
            }
    }
    return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& train, int step,
                     const AdamState* adam) {
    json tensors = json::array();
    for (const auto& t : model.tensors())
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
    const bool with_adam = adam && adam->m.size() == model.parameters().size();
    json header = {{"model", model_json(model.config())},
                   {"train", train_json(train)},
                   {"step", step},
                   {"seed", train.seed},
                   {"vocab_hash", to_hex(Vocabulary::standard().hash())},
                   {"activation", "gelu_tanh"},
                   {"positional", "learned_absolute"},
                   {"tied_head", true},
                   {"parameter_count", model.parameters().size()},
                   {"has_optimizer_state", with_adam},
                   {"tensors", tensors}};
    const std::string h = header.dump();
    std::string out = "CGCK";
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>(kCheckpointVersion >> (8 * b)));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>(static_cast<std::uint64_t>(h.size()) >> (8 * b)));
    out += h;
    append_doubles(out, model.parameters());
    if (with_adam) {
        append_doubles(out, adam->m);
        append_doubles(out, adam->v);
    }

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot rename checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string_view b(bytes);
    if (b.substr(0, 4) != "CGCK") throw Error(ErrorCode::BadCheckpoint, path.string() + " is not a checkpoint");
    std::size_t pos = 4;
    if (const auto v = read_le(b, pos, 4); v != kCheckpointVersion)
        throw Error(ErrorCode::BadCheckpoint, "unsupported checkpoint version " + std::to_string(v));
    const auto hlen = static_cast<std::size_t>(read_le(b, pos, 8));
    if (pos + hlen > b.size()) throw Error(ErrorCode::BadCheckpoint, "checkpoint truncated");
    Checkpoint ck;
    try {
        const json header = json::parse(b.substr(pos, hlen));
        ck.model = model_from_json(header.at("model"));
        ck.train = train_from_json(header.at("train"));
        ck.step = header.at("step");
        ck.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
        pos += hlen;
        const std::size_t n = header.at("parameter_count");
        ck.params = read_doubles(b, pos, n);
        if (header.at("has_optimizer_state").get<bool>()) {
            ck.adam.m = read_doubles(b, pos, n);
            ck.adam.v = read_doubles(b, pos, n);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::BadCheckpoint, std::string("header: ") + e.what());
    }
    if (pos != b.size()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes in checkpoint");
    if (ck.vocab_hash != Vocabulary::standard().hash())
        throw Error(ErrorCode::BadCheckpoint, "checkpoint was trained with a different vocabulary");
    return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
    Model m(ck.model, 0);
    if (m.parameters().size() != ck.params.size())
        throw Error(ErrorCode::BadCheckpoint, "parameter count does not match the model configuration");
    std::copy(ck.params.begin(), ck.params.end(), m.parameters().begin());
    return m;
}

void run_training(Trainer& trainer, const TrainConfig& config, const TrainRunOptions& options) {
    const bool fresh = trainer.completed_steps() == 0;
    std::ofstream log;
    if (!options.log_path.empty()) {
        log.open(options.log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw Error(ErrorCode::Io, "cannot write " + options.log_path.string());
        if (fresh) log << "step,lr,train_loss,val_loss\n";
    }
    auto checkpoint = [&](const Model& model) {
        if (!options.checkpoint_path.empty())
            save_checkpoint(options.checkpoint_path, model, config, trainer.completed_steps(), &trainer.optimizer_state());
    };
    while (trainer.completed_steps() < config.max_steps) {
        const StepResult r = trainer.step();
        std::optional<double> val;
        if (r.step % config.eval_interval == 0 || r.step == config.max_steps) val = trainer.validation_loss();
        if (log) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,", r.step, r.lr, r.train_loss);
            log << buf;
            if (val && !std::isnan(*val)) {
                std::snprintf(buf, sizeof buf, "%.9g", *val);
                log << buf;
            }
            log << '\n' << std::flush;
        }
        if (options.on_step) options.on_step(r, val);
        if (options.checkpoint_interval > 0 && r.step % options.checkpoint_interval == 0)
            checkpoint(trainer.model());
    }
    checkpoint(trainer.model());
}

}  // namespace cifgen
