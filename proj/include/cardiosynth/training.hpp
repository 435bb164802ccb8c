#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardiosynth/data_pipeline.hpp"
#include "cardiosynth/model.hpp"

namespace cardiosynth::train {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class IterationUnit { epochs, steps };

struct TrainConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double adam_eps = 1e-8;
    int batch_size = 32;
    /// Length of the run, counted in `iteration_unit`.
    int epochs = 100;
    IterationUnit iteration_unit = IterationUnit::epochs;
    std::uint64_t seed = 0;
    model::LossWeights loss_weights;
    /// 0: only at the end of the run.
    int checkpoint_every = 0;
    /// Weight of the newest batch in the running normalisation statistics.
    double running_momentum = 0.1;
    /// Print a progress line every this many steps (0: never).
    int log_every = 1;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws TrainError naming the first violated constraint.
void validate(const TrainConfig& config);

using LossRecord = std::map<std::string, double>;

struct TrainState {
    std::int64_t step = 0;
    /// Adam moments, keyed like ModelWeights::params.
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    /// Drives latent noise.
    std::mt19937_64 rng;
    /// Exponential moving averages of every loss term.
    std::map<std::string, double> running_loss;
};

TrainState init_state(const model::ModelWeights& weights, const TrainConfig& config);

/// One discriminator update followed by one generator (and encoder) update.
/// Runs with any learning_rate >= 0. Throws TrainError naming the term when a
/// loss is not finite. Losses are: d_loss, g_adv, feature_match, perceptual,
/// kl, g_total and l1 (mean |fake - real|, monitoring only).
LossRecord train_step(std::span<const data::TrainingPair> batch, model::ModelWeights& weights, TrainState& state,
                      const model::ModelConfig& model_config, const TrainConfig& config,
                      const model::PerceptualFn& perceptual = nullptr);

/// Batches per epoch: floor(n / batch_size), or one batch of everything when
/// the dataset is smaller than a batch.
std::int64_t batches_per_epoch(std::size_t dataset_size, int batch_size);
std::int64_t total_steps(std::size_t dataset_size, const TrainConfig& config);
/// Dataset indices of the batch used at global step `step`.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, const TrainConfig& config, std::int64_t step);

struct Checkpoint {
    model::ModelConfig model_config;
    TrainConfig train_config;
    model::ModelWeights weights;
    TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// When `expected` is given, stored weights must match its shapes exactly.
Checkpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr);
/// Hex digest of the checkpoint file bytes.
std::string checkpoint_id(const std::filesystem::path& path);

struct TrainOptions {
    std::filesystem::path output_dir;
    /// Continue from output_dir/latest.ckpt when present.
    bool resume = false;
    /// Stop after this many steps in this invocation (0: run to the end).
    std::int64_t max_steps = 0;
    std::ostream* log = nullptr;
    model::PerceptualFn perceptual;
};

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::vector<std::pair<std::int64_t, LossRecord>> history;
    model::ModelWeights weights;
    TrainState state;
};

/// Files under output_dir: latest.ckpt, checkpoint_step<NNNNNNNN>.ckpt,
/// loss_history.tsv (header `step` then loss names, one row per step).
TrainResult train(std::span<const data::TrainingPair> dataset, const model::ModelConfig& model_config,
                  const TrainConfig& config, const TrainOptions& options);

/// Progress line: `step <k>/<total> epoch <e> <name>=<value> ...` with
/// values in %.6g, names in loss-record order.
std::string format_progress(std::int64_t step, std::int64_t total, std::int64_t epoch, const LossRecord& losses);

}  // namespace cardiosynth::train
