#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cifgen/model.hpp"
#include "cifgen/packing.hpp"
#include "cifgen/pxrd.hpp"

namespace cifgen {

struct TrainConfig {
    int max_steps = 50000;
    int batch_size = 32;
    int grad_accum = 40;
    double learning_rate = 1e-3;
    double min_lr = 1e-6;
    int warmup_steps = 100;
    int decay_steps = 50000;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    bool augment = true;  // random transform per Cond slot; otherwise the clean transform
    int eval_interval = 250;
    int jobs = 1;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Linear warm-up to learning_rate over warmup_steps, cosine decay to min_lr
/// at decay_steps, constant afterwards.
double learning_rate_at(const TrainConfig& c, int step) noexcept;

struct TrainData {
    std::vector<PackedSegment> train;
    std::vector<PackedSegment> val;
    std::vector<PeakList> peaks;  // indexed by Cond slot value
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

/// One decoupled-weight-decay Adam update at 1-based step t. Decay applies
/// to matrix-shaped tensors only.
void adamw_update(Model& model, std::span<const double> grad, AdamState& state, const TrainConfig& c, double lr,
                  int t);

struct StepResult {
    int step = 0;  // number of completed optimizer steps
    double lr = 0;
    double train_loss = 0;
    double grad_norm = 0;
};

/// Optimizer loop. Batch contents and transforms at step s are a pure
/// function of (seed, s), so a run resumed from a checkpoint follows the
/// same trajectory as an uninterrupted one.
class Trainer {
public:
    Trainer(Model& model, const TrainConfig& config, const TrainData& data);

    StepResult step();
    /// Mean token loss over the validation segments under the clean transform.
    double validation_loss() const;

    int completed_steps() const noexcept { return step_; }
    const Model& model() const noexcept { return model_; }
    const AdamState& optimizer_state() const noexcept { return adam_; }
    void restore(int completed_steps, AdamState state);

    /// Profiles for the Cond slots of a segment as used at a given step.
    std::vector<PxrdProfile> segment_profiles(const PackedSegment& seg, int step, std::size_t salt) const;

private:
    std::vector<std::size_t> batch_indices(int step) const;
    const PxrdProfile& clean_profile(int index) const;

    Model& model_;
    TrainConfig config_;
    const TrainData& data_;
    AdamState adam_;
    int step_ = 0;
    mutable std::vector<std::optional<PxrdProfile>> clean_cache_;
};

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    int step = 0;
    std::uint64_t vocab_hash = 0;
    std::vector<double> params;
    AdamState adam;
};

/// "CGCK", u32 version, u64 header length, JSON header (configs, step, seeds,
/// vocab hash, activation, tensor table), then little-endian float64 blobs
/// for parameters and, if present, both Adam moments. Written to a temporary
/// file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& train, int step,
                     const AdamState* adam);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Model model_from_checkpoint(const Checkpoint& ck);

/// Runs until max_steps, appending "step,lr,train_loss,val_loss" rows to the
/// log and saving a checkpoint every checkpoint_interval steps and at the
/// end. A non-finite loss stops the run and rethrows after the last good
/// checkpoint has been kept on disk.
struct TrainRunOptions {
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    int checkpoint_interval = 1000;
    std::function<void(const StepResult&, std::optional<double>)> on_step;
};
void run_training(Trainer& trainer, const TrainConfig& config, const TrainRunOptions& options);

}  // namespace cifgen
