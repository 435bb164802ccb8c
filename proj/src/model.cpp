#include "cardiosynth/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <optional>
#include <set>

namespace cardiosynth::model {

using ag::Var;

int ModelConfig::generator_channels(int block) const { return std::max(base_channels >> block, min_channels); }

int ModelConfig::encoder_layers() const {
    int n = 0;
    for (int s = image_size; s > 4; s /= 2) ++n;
    return n;
}

void validate(const ModelConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ModelError("invalid model config: " + what);
    };
    require(c.num_classes >= 1, "num_classes must be >= 1");
    require(c.image_size >= 4 && std::has_single_bit(static_cast<unsigned>(c.image_size)),
            "image_size must be a power of two >= 4");
    require(c.base_channels >= 1, "base_channels must be >= 1");
    require(c.min_channels >= 1, "min_channels must be >= 1");
    require(c.num_spade_blocks >= 1, "num_spade_blocks must be >= 1");
    require(c.num_upsamples() < 31 && (c.image_size >> c.num_upsamples()) >= 1 &&
                (c.image_size >> c.num_upsamples() << c.num_upsamples()) == c.image_size,
            "image_size must be a power-of-two multiple of the initial grid (image_size / 2^(num_spade_blocks - 1))");
    require(c.latent_dim >= 1, "latent_dim must be >= 1");
    require(c.modulation_hidden_channels >= 1, "modulation_hidden_channels must be >= 1");
    require(c.discriminator_scales >= 1, "discriminator_scales must be >= 1");
    require(c.discriminator_layers >= 1, "discriminator_layers must be >= 1");
    require(c.discriminator_channels >= 1, "discriminator_channels must be >= 1");
    require(c.encoder_channels >= 1, "encoder_channels must be >= 1");
    require(std::isfinite(c.leaky_slope) && c.leaky_slope >= 0.0, "leaky_slope must be finite and >= 0");
    require(std::isfinite(c.init_gain) && c.init_gain > 0.0, "init_gain must be > 0");
}

namespace {

int encoder_width(const ModelConfig& c, int layer) { return c.encoder_channels << std::min(layer, 3); }
int disc_width(const ModelConfig& c, int layer) { return std::min(c.discriminator_channels << std::min(layer, 20), 512); }
int disc_stride(const ModelConfig& c, int layer) {
    return layer == c.discriminator_layers - 1 && c.discriminator_layers > 1 ? 1 : 2;
}

std::string block_name(int i) { return "gen/block" + std::to_string(i); }

struct SpecBuilder {
    const ModelConfig& c;
    std::vector<ParamSpec> params;
    std::vector<ParamSpec> buffers;

    void conv(const std::string& name, int cout, int cin, int k, bool bias = true) {
        params.push_back({name + "/weight", {cout, cin, k, k}});
        if (bias) params.push_back({name + "/bias", {cout}});
    }
    void linear(const std::string& name, int out, int in) {
        params.push_back({name + "/weight", {out, in}});
        params.push_back({name + "/bias", {out}});
    }
    void spade(const std::string& prefix, int channels) {
        conv(prefix + "/shared", c.modulation_hidden_channels, c.num_classes, 3);
        conv(prefix + "/gamma", channels, c.modulation_hidden_channels, 3);
        conv(prefix + "/beta", channels, c.modulation_hidden_channels, 3);
        buffers.push_back({prefix + "/running_mean", {channels}});
        buffers.push_back({prefix + "/running_var", {channels}});
    }
    void resblock(const std::string& prefix, int in, int out) {
        const int mid = std::min(in, out);
        spade(prefix + "/spade_0", in);
        conv(prefix + "/conv_0", mid, in, 3);
        spade(prefix + "/spade_1", mid);
        conv(prefix + "/conv_1", out, mid, 3);
        if (in != out) {
            spade(prefix + "/spade_s", in);
            conv(prefix + "/conv_s", out, in, 1, false);
        }
    }
};

SpecBuilder build_specs(const ModelConfig& c) {
    validate(c);
    SpecBuilder b{c, {}, {}};
    const int g = c.initial_grid();
    b.linear("gen/fc", c.generator_channels(0) * g * g, c.latent_dim);
    for (int i = 0; i < c.num_spade_blocks; ++i)
        b.resblock(block_name(i), c.generator_channels(i == 0 ? 0 : i - 1), c.generator_channels(i));
    b.conv("gen/out", 1, c.generator_channels(c.num_spade_blocks - 1), 3);

    if (c.use_vae) {
        const int layers = c.encoder_layers();
        for (int i = 0; i < layers; ++i)
            b.conv("enc/layer" + std::to_string(i) + "/conv", encoder_width(c, i), i == 0 ? 1 : encoder_width(c, i - 1), 3);
        const int flat = layers == 0 ? c.image_size * c.image_size : encoder_width(c, layers - 1) * 16;
        b.linear("enc/fc_mu", c.latent_dim, flat);
        b.linear("enc/fc_logvar", c.latent_dim, flat);
    }

    for (int s = 0; s < c.discriminator_scales; ++s) {
        const std::string scale = "disc/scale" + std::to_string(s);
        int prev = 1 + c.num_classes;
        for (int j = 0; j < c.discriminator_layers; ++j) {
            b.conv(scale + "/layer" + std::to_string(j) + "/conv", disc_width(c, j), prev, 4);
            prev = disc_width(c, j);
        }
        b.conv(scale + "/out/conv", 1, prev, 4);
    }
    auto by_name = [](const ParamSpec& a, const ParamSpec& b) { return a.name < b.name; };
    std::sort(b.params.begin(), b.params.end(), by_name);
    std::sort(b.buffers.begin(), b.buffers.end(), by_name);
    return b;
}

bool is_generator_param(const std::string& name) { return name.starts_with("gen/") || name.starts_with("enc/"); }

void require_mask(const Tensor& mask, int batch, int classes, const char* op) {
    if (mask.rank() != 4 || mask.dim(0) != batch || mask.dim(1) != classes)
        throw ModelError(std::string(op) + ": shape mismatch, mask " + shape_to_string(mask.shape()) + " for batch " +
                         std::to_string(batch) + " with " + std::to_string(classes) + " classes");
}

Var scalar_constant(ag::Tape& tape, double v) { return tape.constant(Tensor({1}, v)); }

Var mean_of(std::vector<Var> terms) {
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
    return ag::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& config) { return build_specs(config).params; }
std::vector<ParamSpec> buffer_specs(const ModelConfig& config) { return build_specs(config).buffers; }

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    const SpecBuilder specs = build_specs(config);
    std::mt19937_64 rng(seed);
    ModelWeights w;
    for (const auto& spec : specs.params) {
        Tensor t(spec.shape, 0.0);
        if (spec.shape.size() >= 2) {
            std::size_t receptive = 1;
            for (std::size_t i = 2; i < spec.shape.size(); ++i) receptive *= static_cast<std::size_t>(spec.shape[i]);
            const double fan_in = static_cast<double>(spec.shape[1] * receptive);
            const double fan_out = static_cast<double>(spec.shape[0] * receptive);
            std::normal_distribution<double> dist(0.0, config.init_gain * std::sqrt(2.0 / (fan_in + fan_out)));
            for (double& v : t.values()) v = dist(rng);
        }
        w.params.emplace(spec.name, std::move(t));
    }
    for (const auto& spec : specs.buffers)
        w.buffers.emplace(spec.name, Tensor(spec.shape, spec.name.ends_with("running_var") ? 1.0 : 0.0));
    return w;
}

void check_weights(const ModelWeights& weights, const ModelConfig& config) {
    const SpecBuilder specs = build_specs(config);
    auto check = [](const std::map<std::string, Tensor>& have, const std::vector<ParamSpec>& want, const char* kind) {
        for (const auto& spec : want) {
            const auto it = have.find(spec.name);
            if (it == have.end()) throw ModelError(std::string("missing ") + kind + " " + spec.name);
            if (it->second.shape() != spec.shape)
                throw ModelError("shape mismatch for " + spec.name + ": expected " + shape_to_string(spec.shape) +
                                 ", found " + shape_to_string(it->second.shape()));
            if (!it->second.all_finite()) throw ModelError("non-finite values in " + spec.name);
        }
        if (have.size() != want.size()) {
            std::set<std::string> names;
            for (const auto& s : want) names.insert(s.name);
            for (const auto& [name, t] : have)
                if (!names.count(name)) throw ModelError(std::string("unexpected ") + kind + " " + name);
        }
    };
    check(weights.params, specs.params, "parameter");
    check(weights.buffers, specs.buffers, "buffer");
}

Tensor one_hot(const LabelSlice& labels, int num_classes) {
    Tensor out({num_classes, labels.rows, labels.cols}, 0.0);
    const std::size_t plane = labels.data.size();
    for (std::size_t i = 0; i < plane; ++i) {
        const int c = labels.data[i];
        if (c >= num_classes)
            throw ModelError("label value " + std::to_string(c) + " out of range for " + std::to_string(num_classes) +
                             " classes");
        out[static_cast<std::size_t>(c) * plane + i] = 1.0;
    }
    return out;
}

Tensor one_hot_batch(std::span<const LabelSlice> labels, int num_classes) {
    if (labels.empty()) throw ModelError("one_hot_batch: empty batch");
    const int rows = labels[0].rows, cols = labels[0].cols;
    Tensor out({static_cast<int>(labels.size()), num_classes, rows, cols}, 0.0);
    const std::size_t per = static_cast<std::size_t>(num_classes) * rows * cols;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n].rows != rows || labels[n].cols != cols) throw ModelError("one_hot_batch: slice sizes differ");
        const Tensor one = one_hot(labels[n], num_classes);
        std::copy(one.values().begin(), one.values().end(), out.data() + n * per);
    }
    return out;
}

LabelSlice argmax_labels(const Tensor& oh) {
    if (oh.rank() != 3) throw ModelError("argmax_labels: expected [K,H,W]");
    const int k = oh.dim(0);
    LabelSlice out(oh.dim(1), oh.dim(2));
    const std::size_t plane = out.data.size();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (oh[static_cast<std::size_t>(c) * plane + i] > oh[static_cast<std::size_t>(best) * plane + i]) best = c;
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

Tensor resize_nearest(const Tensor& x, int height, int width) {
    if (x.rank() != 4) throw ModelError("resize_nearest: expected [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == height && w == width) return x;
    Tensor out({n, c, height, width});
    double* o = out.data();
    for (int p = 0; p < n * c; ++p) {
        const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
        for (int r = 0; r < height; ++r) {
            const int sr = static_cast<int>(static_cast<long long>(r) * h / height);
            for (int q = 0; q < width; ++q) *o++ = src[sr * w + static_cast<int>(static_cast<long long>(q) * w / width)];
        }
    }
    return out;
}

Graph::Graph(ag::Tape& tape, const ModelWeights& weights, const ModelConfig& config, Trainable trainable, NormMode norm)
    : tape_(tape), weights_(weights), config_(config), trainable_(trainable), norm_(norm) {}

Var Graph::param(const std::string& name) {
    if (const auto it = bound_.find(name); it != bound_.end()) return it->second;
    const auto it = weights_.params.find(name);
    if (it == weights_.params.end()) throw ModelError("missing parameter " + name);
    const bool gen = is_generator_param(name);
    const bool grad = trainable_ == Trainable::all || (trainable_ == Trainable::generator && gen) ||
                      (trainable_ == Trainable::discriminator && !gen);
    const Var v = tape_.leaf(it->second, grad);
    bound_.emplace(name, v);
    return v;
}

const Tensor& Graph::buffer(const std::string& name) const {
    const auto it = weights_.buffers.find(name);
    if (it == weights_.buffers.end()) throw ModelError("missing buffer " + name);
    return it->second;
}

Var spade_normalize(Graph& g, const std::string& prefix, Var x, const Tensor& mask) {
    if (x.value().rank() != 4) throw ModelError("spade_normalize: expected [N,C,H,W] activations");
    const auto& xs = x.shape();
    require_mask(mask, xs[0], g.config().num_classes, "spade_normalize");

    Var xhat;
    if (g.norm_mode() == NormMode::batch) {
        ag::NormStats stats;
        xhat = ag::batch_norm(x, kNormEps, &stats);
        g.batch_stats()[prefix] = std::move(stats);
    } else {
        const auto m = g.buffer(prefix + "/running_mean").values();
        const auto v = g.buffer(prefix + "/running_var").values();
        xhat = ag::fixed_norm(x, {m.begin(), m.end()}, {v.begin(), v.end()}, kNormEps);
    }

    ag::Tape& tape = g.tape();
    const Var m = tape.constant(resize_nearest(mask, xs[2], xs[3]));
    const Var hidden = ag::relu(ag::conv2d(m, g.param(prefix + "/shared/weight"), g.param(prefix + "/shared/bias"), 1, 1));
    const Var gamma = ag::conv2d(hidden, g.param(prefix + "/gamma/weight"), g.param(prefix + "/gamma/bias"), 1, 1);
    const Var beta = ag::conv2d(hidden, g.param(prefix + "/beta/weight"), g.param(prefix + "/beta/bias"), 1, 1);
    if (gamma.shape() != xs) throw ModelError("spade_normalize: modulation shape mismatch at " + prefix);
    return ag::add(ag::mul(xhat, ag::add_scalar(gamma, 1.0)), beta);
}

Var spade_resblock(Graph& g, const std::string& prefix, Var x, const Tensor& mask, int out_channels) {
    if (x.value().rank() != 4) throw ModelError("spade_resblock: expected [N,C,H,W] activations");
    const int in = x.shape()[1];
    const double slope = g.config().leaky_slope;
    auto stage = [&](Var h, const std::string& n) {
        h = ag::leaky_relu(spade_normalize(g, prefix + "/spade_" + n, h, mask), slope);
        return ag::conv2d(h, g.param(prefix + "/conv_" + n + "/weight"), g.param(prefix + "/conv_" + n + "/bias"), 1, 1);
    };
    const Var main = stage(stage(x, "0"), "1");
    if (main.shape()[1] != out_channels) throw ModelError("spade_resblock: shape mismatch at " + prefix);
    Var skip = x;
    if (in != out_channels)
        skip = ag::conv2d_nobias(spade_normalize(g, prefix + "/spade_s", x, mask), g.param(prefix + "/conv_s/weight"), 1, 0);
    return ag::add(main, skip);
}

Var generator_forward(Graph& g, Var z, const Tensor& mask) {
    const ModelConfig& c = g.config();
    if (z.value().rank() != 2 || z.shape()[1] != c.latent_dim)
        throw ModelError("generator_forward: z must be [N," + std::to_string(c.latent_dim) + "], got " +
                         shape_to_string(z.shape()));
    const int n = z.shape()[0];
    require_mask(mask, n, c.num_classes, "generator_forward");
    if (mask.dim(2) != c.image_size || mask.dim(3) != c.image_size)
        throw ModelError("generator_forward: label slice must be " + std::to_string(c.image_size) + "x" +
                         std::to_string(c.image_size) + ", got " + std::to_string(mask.dim(2)) + "x" +
                         std::to_string(mask.dim(3)));
    if (!z.value().all_finite()) throw ModelError("generator_forward: non-finite z");

    const int grid = c.initial_grid();
    Var x = ag::reshape(ag::linear(z, g.param("gen/fc/weight"), g.param("gen/fc/bias")),
                        {n, c.generator_channels(0), grid, grid});
    for (int i = 0; i < c.num_spade_blocks; ++i) {
        if (i > 0) x = ag::upsample_nearest2x(x);
        x = spade_resblock(g, block_name(i), x, mask, c.generator_channels(i));
    }
    x = ag::leaky_relu(x, c.leaky_slope);
    return ag::tanh(ag::conv2d(x, g.param("gen/out/weight"), g.param("gen/out/bias"), 1, 1));
}

LatentVars style_encoder_forward(Graph& g, Var image) {
    const ModelConfig& c = g.config();
    if (!c.use_vae) throw ModelError("style encoder requires use_vae");
    const auto& s = image.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != c.image_size || s[3] != c.image_size)
        throw ModelError("style_encoder_forward: expected [N,1," + std::to_string(c.image_size) + "," +
                         std::to_string(c.image_size) + "], got " + shape_to_string(s));
    Var x = image;
    for (int i = 0; i < c.encoder_layers(); ++i) {
        const std::string p = "enc/layer" + std::to_string(i) + "/conv";
        x = ag::leaky_relu(ag::conv2d(x, g.param(p + "/weight"), g.param(p + "/bias"), 2, 1), c.leaky_slope);
    }
    const int n = s[0];
    const Var flat = ag::reshape(x, {n, static_cast<int>(x.value().size()) / n});
    return {ag::linear(flat, g.param("enc/fc_mu/weight"), g.param("enc/fc_mu/bias")),
            ag::linear(flat, g.param("enc/fc_logvar/weight"), g.param("enc/fc_logvar/bias"))};
}

std::vector<ScaleOutput> discriminator_forward(Graph& g, Var image, const Tensor& mask) {
    const ModelConfig& c = g.config();
    const auto& s = image.shape();
    if (s.size() != 4 || s[1] != 1) throw ModelError("discriminator_forward: expected [N,1,H,W] image");
    require_mask(mask, s[0], c.num_classes, "discriminator_forward");
    if (mask.dim(2) != s[2] || mask.dim(3) != s[3])
        throw ModelError("discriminator_forward: shape mismatch between image and mask");

    std::vector<ScaleOutput> out;
    Var input = ag::concat_channels(image, g.tape().constant(mask));
    for (int sc = 0; sc < c.discriminator_scales; ++sc) {
        if (sc > 0) input = ag::avg_pool2x(input);
        const std::string scale = "disc/scale" + std::to_string(sc);
        ScaleOutput so;
        Var x = input;
        for (int j = 0; j < c.discriminator_layers; ++j) {
            const std::string p = scale + "/layer" + std::to_string(j) + "/conv";
            x = ag::conv2d(x, g.param(p + "/weight"), g.param(p + "/bias"), disc_stride(c, j), 2);
            if (j > 0) x = ag::instance_norm(x, kNormEps);
            x = ag::leaky_relu(x, c.leaky_slope);
            so.features.push_back(x);
        }
        so.logits = ag::conv2d(x, g.param(scale + "/out/conv/weight"), g.param(scale + "/out/conv/bias"), 1, 2);
        out.push_back(std::move(so));
    }
    return out;
}

std::vector<double> sample_normal(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

std::vector<double> reparameterize(const StyleLatent& latent, std::mt19937_64& rng) {
    if (latent.mu.size() != latent.logvar.size()) throw ModelError("reparameterize: mu/logvar length mismatch");
    const std::vector<double> noise = sample_normal(latent.mu.size(), rng);
    std::vector<double> z(noise.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = latent.mu[i] + std::exp(0.5 * latent.logvar[i]) * noise[i];
    return z;
}

Var d_hinge_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake) {
    if (real.empty() || real.size() != fake.size()) throw ModelError("d_hinge_loss: scale count mismatch");
    std::vector<Var> per_scale;
    for (std::size_t s = 0; s < real.size(); ++s) {
        const Var r = ag::mean(ag::relu(ag::add_scalar(ag::neg(real[s].logits), 1.0)));
        const Var f = ag::mean(ag::relu(ag::add_scalar(fake[s].logits, 1.0)));
        per_scale.push_back(ag::add(r, f));
    }
    return mean_of(per_scale);
}

Var g_adv_loss(const std::vector<ScaleOutput>& fake) {
    if (fake.empty()) throw ModelError("g_adv_loss: no scales");
    std::vector<Var> per_scale;
    for (const auto& s : fake) per_scale.push_back(ag::neg(ag::mean(s.logits)));
    return mean_of(per_scale);
}

Var feature_matching_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake) {
    if (real.empty() || real.size() != fake.size()) throw ModelError("feature_matching_loss: scale count mismatch");
    std::vector<Var> terms;
    for (std::size_t s = 0; s < real.size(); ++s) {
        if (real[s].features.size() != fake[s].features.size())
            throw ModelError("feature_matching_loss: layer count mismatch");
        for (std::size_t l = 0; l < real[s].features.size(); ++l)
            terms.push_back(ag::mean_abs_diff(fake[s].features[l], real[s].features[l]));
    }
    return mean_of(terms);
}

Var kl_divergence(Var mu, Var logvar) {
    if (mu.shape() != logvar.shape() || mu.value().rank() != 2)
        throw ModelError("kl_divergence: mu and logvar must both be [N,latent_dim]");
    const Var inner = ag::sub(ag::sub(ag::add_scalar(logvar, 1.0), ag::square(mu)), ag::exp(logvar));
    return ag::scale(ag::sum(inner), -0.5 / mu.shape()[0]);
}

GeneratorLoss generator_loss(ag::Tape& tape, const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake,
                             const LatentVars* latent, Var real_image, Var fake_image, const LossWeights& w,
                             const PerceptualFn& perceptual) {
    GeneratorLoss out;
    out.terms["g_adv"] = g_adv_loss(fake);
    out.terms["feature_match"] = feature_matching_loss(real, fake);
    out.terms["perceptual"] = perceptual ? perceptual(real_image, fake_image) : scalar_constant(tape, 0.0);
    out.terms["kl"] = latent ? kl_divergence(latent->mu, latent->logvar) : scalar_constant(tape, 0.0);
    Var total = ag::add(out.terms["g_adv"], ag::scale(out.terms["feature_match"], w.feature_match));
    if (perceptual) total = ag::add(total, ag::scale(out.terms["perceptual"], w.perceptual));
    if (latent) total = ag::add(total, ag::scale(out.terms["kl"], w.kl));
    out.total = total;
    return out;
}

std::map<std::string, double> loss_suite(const ModelWeights& weights, const ModelConfig& config, const Tensor& real,
                                         const Tensor& fake, const Tensor& mask, const StyleLatent* latent,
                                         const LossWeights& loss_weights, const PerceptualFn& perceptual) {
    ag::Tape tape;
    Graph g(tape, weights, config, Trainable::none);
    const Var r = tape.constant(real), f = tape.constant(fake);
    const auto real_out = discriminator_forward(g, r, mask);
    const auto fake_out = discriminator_forward(g, f, mask);
    std::optional<LatentVars> lv;
    if (latent) {
        const int d = static_cast<int>(latent->mu.size());
        lv = LatentVars{tape.constant(Tensor({1, d}, latent->mu)), tape.constant(Tensor({1, d}, latent->logvar))};
    }
    const GeneratorLoss gl = generator_loss(tape, real_out, fake_out, lv ? &*lv : nullptr, r, f, loss_weights, perceptual);
    std::map<std::string, double> out;
    out["d_loss"] = d_hinge_loss(real_out, fake_out).value()[0];
    for (const auto& [name, v] : gl.terms) out[name] = v.value()[0];
    out["g_total"] = gl.total.value()[0];
    return out;
}

Tensor image_batch(std::span<const ImageSlice> images) {
    if (images.empty()) throw ModelError("image_batch: empty batch");
    const int rows = images[0].rows, cols = images[0].cols;
    Tensor out({static_cast<int>(images.size()), 1, rows, cols});
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n].rows != rows || images[n].cols != cols) throw ModelError("image_batch: slice sizes differ");
        std::copy(images[n].data.begin(), images[n].data.end(), out.data() + n * images[n].data.size());
    }
    return out;
}

std::vector<ImageSlice> generate(const ModelWeights& weights, const ModelConfig& config,
                                 std::span<const std::vector<double>> z, std::span<const LabelSlice> labels) {
    if (z.size() != labels.size()) throw ModelError("generate: need one z per label slice");
    constexpr std::size_t kChunk = 8;
    std::vector<ImageSlice> out;
    out.reserve(labels.size());
    for (std::size_t start = 0; start < labels.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, labels.size() - start);
        std::vector<double> zflat;
        for (std::size_t i = 0; i < n; ++i) {
            if (z[start + i].size() != static_cast<std::size_t>(config.latent_dim))
                throw ModelError("generate: z length must equal latent_dim");
            zflat.insert(zflat.end(), z[start + i].begin(), z[start + i].end());
        }
        ag::Tape tape;
        Graph g(tape, weights, config, Trainable::none, NormMode::running);
        const Var img = generator_forward(g, tape.constant(Tensor({static_cast<int>(n), config.latent_dim}, zflat)),
                                          one_hot_batch(labels.subspan(start, n), config.num_classes));
        const Tensor& v = img.value();
        const std::size_t plane = static_cast<std::size_t>(config.image_size) * config.image_size;
        for (std::size_t i = 0; i < n; ++i) {
            ImageSlice s(config.image_size, config.image_size);
            std::copy_n(v.data() + i * plane, plane, s.data.begin());
            out.push_back(std::move(s));
        }
    }
    return out;
}

StyleLatent encode(const ModelWeights& weights, const ModelConfig& config, const ImageSlice& image) {
    ag::Tape tape;
    Graph g(tape, weights, config, Trainable::none, NormMode::running);
    const LatentVars lv = style_encoder_forward(g, tape.constant(image_batch(std::span(&image, 1))));
    const auto& mu = lv.mu.value().values();
    const auto& lvv = lv.logvar.value().values();
    return {{mu.begin(), mu.end()}, {lvv.begin(), lvv.end()}};
}

}  // namespace cardiosynth::model
