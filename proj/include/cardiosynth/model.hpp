#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardiosynth/autograd.hpp"
#include "cardiosynth/tensor.hpp"
#include "cardiosynth/volume.hpp"

// SPADE generator, normalisation-free style encoder, multiscale patch
// discriminator and the losses tying them together.
//
// Parameter names follow component/block/layer/kind, e.g.
//   gen/fc/weight, gen/block3/spade_1/gamma/bias, gen/block3/conv_s/weight,
//   enc/layer2/conv/weight, enc/fc_mu/bias, disc/scale1/layer0/conv/weight.
// Running normalisation statistics live beside them as
//   gen/block3/spade_1/running_mean (and running_var).
namespace cardiosynth::model {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int num_classes = 4;
    int image_size = 128;
    /// Channels at the initial grid; halved after every upsample.
    int base_channels = 1024;
    /// Floor for the halving schedule.
    int min_channels = 32;
    int num_spade_blocks = 6;
    int latent_dim = 256;
    bool use_vae = false;
    int modulation_hidden_channels = 128;
    int discriminator_scales = 2;
    int discriminator_layers = 4;
    int discriminator_channels = 64;
    int encoder_channels = 64;
    double leaky_slope = 0.2;
    /// Xavier-normal gain used by init_weights.
    double init_gain = 0.02;

    int num_upsamples() const { return num_spade_blocks - 1; }
    int initial_grid() const { return image_size >> num_upsamples(); }
    int generator_channels(int block) const;
    int encoder_layers() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws ModelError naming the first violated constraint.
void validate(const ModelConfig& config);

struct ParamSpec {
    std::string name;
    Shape shape;
};

/// Every trainable parameter, sorted by name.
std::vector<ParamSpec> parameter_specs(const ModelConfig& config);
/// Running statistics buffers, sorted by name.
std::vector<ParamSpec> buffer_specs(const ModelConfig& config);

struct ModelWeights {
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Xavier-normal weights (gain config.init_gain), zero biases, running mean 0 / var 1.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Throws ModelError on missing, extra, mis-shaped or non-finite entries.
void check_weights(const ModelWeights& weights, const ModelConfig& config);

struct StyleLatent {
    std::vector<double> mu;
    std::vector<double> logvar;
};

/// [K,H,W] indicator planes. Throws ModelError on labels >= num_classes.
Tensor one_hot(const LabelSlice& labels, int num_classes);
/// [N,K,H,W]
Tensor one_hot_batch(std::span<const LabelSlice> labels, int num_classes);
LabelSlice argmax_labels(const Tensor& one_hot);
/// Nearest-neighbour resize of [N,C,H,W]: src = floor(dst * in / out).
Tensor resize_nearest(const Tensor& x, int height, int width);

enum class Trainable { none, generator, discriminator, all };
enum class NormMode { batch, running };

/// Binds ModelWeights to a tape for one forward pass. Parameters become
/// leaves on first use; gen/ and enc/ count as generator parameters.
class Graph {
public:
    Graph(ag::Tape& tape, const ModelWeights& weights, const ModelConfig& config, Trainable trainable,
          NormMode norm = NormMode::batch);

    ag::Tape& tape() { return tape_; }
    const ModelConfig& config() const { return config_; }
    NormMode norm_mode() const { return norm_; }

    ag::Var param(const std::string& name);
    const std::map<std::string, ag::Var>& bound() const { return bound_; }
    const Tensor& buffer(const std::string& name) const;

    /// Batch statistics observed per SPADE layer (NormMode::batch only).
    std::map<std::string, ag::NormStats>& batch_stats() { return stats_; }

private:
    ag::Tape& tape_;
    const ModelWeights& weights_;
    const ModelConfig& config_;
    Trainable trainable_;
    NormMode norm_;
    std::map<std::string, ag::Var> bound_;
    std::map<std::string, ag::NormStats> stats_;
};

constexpr double kNormEps = 1e-5;

/// x: [N,C,H,W]; mask: one-hot [N,K,h,w] at any resolution.
ag::Var spade_normalize(Graph& g, const std::string& prefix, ag::Var x, const Tensor& mask);
ag::Var spade_resblock(Graph& g, const std::string& prefix, ag::Var x, const Tensor& mask, int out_channels);

/// z: [N,latent_dim]; mask: [N,K,S,S]. Returns [N,1,S,S] in (-1,1).
ag::Var generator_forward(Graph& g, ag::Var z, const Tensor& mask);

struct LatentVars {
    ag::Var mu;
    ag::Var logvar;
};
/// image: [N,1,S,S].
LatentVars style_encoder_forward(Graph& g, ag::Var image);

struct ScaleOutput {
    ag::Var logits;
    std::vector<ag::Var> features;
};
std::vector<ScaleOutput> discriminator_forward(Graph& g, ag::Var image, const Tensor& mask);

/// mu + exp(0.5 logvar) * n, n ~ N(0, I) drawn from rng.
std::vector<double> reparameterize(const StyleLatent& latent, std::mt19937_64& rng);
std::vector<double> sample_normal(std::size_t n, std::mt19937_64& rng);

struct LossWeights {
    double feature_match = 10.0;
    double perceptual = 10.0;
    double kl = 0.05;

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Optional external feature extractor; returns a scalar distance.
using PerceptualFn = std::function<ag::Var(ag::Var real, ag::Var fake)>;

ag::Var d_hinge_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake);
ag::Var g_adv_loss(const std::vector<ScaleOutput>& fake);
ag::Var feature_matching_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake);
/// -0.5 * sum(1 + logvar - mu^2 - exp(logvar)), averaged over the batch.
ag::Var kl_divergence(ag::Var mu, ag::Var logvar);

struct GeneratorLoss {
    ag::Var total;
    std::map<std::string, ag::Var> terms;  // g_adv, feature_match, perceptual, kl
};

GeneratorLoss generator_loss(ag::Tape& tape, const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake,
                             const LatentVars* latent, ag::Var real_image, ag::Var fake_image,
                             const LossWeights& weights, const PerceptualFn& perceptual);

/// All loss terms for one (real, fake) batch evaluated with the given weights.
std::map<std::string, double> loss_suite(const ModelWeights& weights, const ModelConfig& config,
                                         const Tensor& real, const Tensor& fake, const Tensor& mask,
                                         const StyleLatent* latent, const LossWeights& loss_weights = {},
                                         const PerceptualFn& perceptual = nullptr);

/// Inference helpers (running statistics, no gradients).
std::vector<ImageSlice> generate(const ModelWeights& weights, const ModelConfig& config,
                                 std::span<const std::vector<double>> z, std::span<const LabelSlice> labels);
StyleLatent encode(const ModelWeights& weights, const ModelConfig& config, const ImageSlice& image);

Tensor image_batch(std::span<const ImageSlice> images);

}  // namespace cardiosynth::model
