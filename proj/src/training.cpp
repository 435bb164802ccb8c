#include "cardiosynth/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cardiosynth/checkpoint.hpp"
#include "cardiosynth/config.hpp"
#include "cardiosynth/util.hpp"

namespace cardiosynth::train {

using model::ModelWeights;

void validate(const TrainConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw TrainError("invalid train config: " + what);
    };
    require(c.learning_rate > 0 && std::isfinite(c.learning_rate), "learning_rate must be > 0");
    require(c.beta1 >= 0 && c.beta1 < 1, "beta1 must be in [0, 1)");
    require(c.beta2 >= 0 && c.beta2 < 1, "beta2 must be in [0, 1)");
    require(c.adam_eps > 0, "adam_eps must be > 0");
    require(c.batch_size >= 1, "batch_size must be >= 1");
    require(c.epochs >= 1, "epochs must be >= 1");
    require(c.checkpoint_every >= 0, "checkpoint_every must be >= 0");
    require(c.running_momentum >= 0 && c.running_momentum <= 1, "running_momentum must be in [0, 1]");
    require(c.log_every >= 0, "log_every must be >= 0");
    require(c.loss_weights.feature_match >= 0 && c.loss_weights.perceptual >= 0 && c.loss_weights.kl >= 0,
            "loss weights must be >= 0");
}

TrainState init_state(const ModelWeights& weights, const TrainConfig& config) {
    TrainState s;
    for (const auto& [name, t] : weights.params) {
        s.m.emplace(name, Tensor(t.shape(), 0.0));
        s.v.emplace(name, Tensor(t.shape(), 0.0));
    }
    s.rng.seed(config.seed);
    return s;
}

namespace {

constexpr double kLossSmoothing = 0.1;

void adam_update(model::Graph& graph, ag::Tape& tape, ModelWeights& weights, TrainState& state, const TrainConfig& c,
                 bool generator_side) {
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(c.beta1, t), c2 = 1.0 - std::pow(c.beta2, t);
    for (const auto& [name, var] : graph.bound()) {
        if (!var.requires_grad()) continue;
        const bool gen = name.starts_with("gen/") || name.starts_with("enc/");
        if (gen != generator_side) continue;
        const Tensor& g = tape.grad(var);
        Tensor& w = weights.params.at(name);
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            w[i] -= c.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + c.adam_eps);
        }
    }
}

void require_finite(const std::string& term, double value, std::int64_t step) {
    if (!std::isfinite(value))
        throw TrainError("non-finite loss term '" + term + "' (" + format_double(value) + ") at step " +
                         std::to_string(step + 1));
}

}  // namespace

LossRecord train_step(std::span<const data::TrainingPair> batch, ModelWeights& weights, TrainState& state,
                      const model::ModelConfig& mc, const TrainConfig& config, const model::PerceptualFn& perceptual) {
    if (batch.empty()) throw TrainError("train_step: empty batch");
    if (!(config.learning_rate >= 0)) throw TrainError("train_step: learning_rate must be >= 0");
    const int n = static_cast<int>(batch.size());
    std::vector<LabelSlice> labels;
    std::vector<ImageSlice> images;
    for (const auto& p : batch) {
        if (p.image.rows != mc.image_size || p.image.cols != mc.image_size || p.labels.rows != mc.image_size ||
            p.labels.cols != mc.image_size)
            throw TrainError("train_step: pair size does not match image_size " + std::to_string(mc.image_size));
        labels.push_back(p.labels);
        images.push_back(p.image);
    }
    const Tensor mask = model::one_hot_batch(labels, mc.num_classes);
    const Tensor real = model::image_batch(images);
    const Tensor noise(Shape{n, mc.latent_dim}, model::sample_normal(static_cast<std::size_t>(n) * mc.latent_dim, state.rng));

    // Generator forward, kept on its own tape for the generator update.
    ag::Tape gtape;
    model::Graph g(gtape, weights, mc, model::Trainable::generator);
    const ag::Var real_g = gtape.constant(real);
    std::optional<model::LatentVars> latent;
    ag::Var z;
    if (mc.use_vae) {
        latent = model::style_encoder_forward(g, real_g);
        z = ag::reparameterize(latent->mu, latent->logvar, noise);
    } else {
        z = gtape.constant(noise);
    }
    const ag::Var fake = model::generator_forward(g, z, mask);

    LossRecord record;
    {
        ag::Tape dtape;
        model::Graph d(dtape, weights, mc, model::Trainable::discriminator);
        const auto real_out = model::discriminator_forward(d, dtape.constant(real), mask);
        const auto fake_out = model::discriminator_forward(d, dtape.constant(fake.value()), mask);
        const ag::Var d_loss = model::d_hinge_loss(real_out, fake_out);
        record["d_loss"] = d_loss.value()[0];
        require_finite("d_loss", record["d_loss"], state.step);
        dtape.backward(d_loss);
        adam_update(d, dtape, weights, state, config, false);
    }

    // Generator loss against the updated discriminator.
    const auto real_out = model::discriminator_forward(g, real_g, mask);
    const auto fake_out = model::discriminator_forward(g, fake, mask);
    const auto gl = model::generator_loss(gtape, real_out, fake_out, latent ? &*latent : nullptr, real_g, fake,
                                          config.loss_weights, perceptual);
    for (const auto& [name, v] : gl.terms) {
        record[name] = v.value()[0];
        require_finite(name, record[name], state.step);
    }
    record["g_total"] = gl.total.value()[0];
    require_finite("g_total", record["g_total"], state.step);
    gtape.backward(gl.total);
    adam_update(g, gtape, weights, state, config, true);

    const double mom = config.running_momentum;
    for (const auto& [prefix, stats] : g.batch_stats()) {
        Tensor& rm = weights.buffers.at(prefix + "/running_mean");
        Tensor& rv = weights.buffers.at(prefix + "/running_var");
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (1.0 - mom) * rm[c] + mom * stats.mean[c];
            rv[c] = (1.0 - mom) * rv[c] + mom * stats.var[c];
        }
    }

    double l1 = 0.0;
    for (std::size_t i = 0; i < real.size(); ++i) l1 += std::abs(fake.value()[i] - real[i]);
    record["l1"] = l1 / static_cast<double>(real.size());

    for (const auto& [name, v] : record) {
        auto it = state.running_loss.find(name);
        if (it == state.running_loss.end())
            state.running_loss[name] = v;
        else
            it->second = (1.0 - kLossSmoothing) * it->second + kLossSmoothing * v;
    }
    ++state.step;
    return record;
}

std::int64_t batches_per_epoch(std::size_t dataset_size, int batch_size) {
    if (dataset_size == 0) throw TrainError("empty dataset");
    if (batch_size < 1) throw TrainError("batch_size must be >= 1");
    const auto n = static_cast<std::int64_t>(dataset_size);
    return n < batch_size ? 1 : n / batch_size;
}

std::int64_t total_steps(std::size_t dataset_size, const TrainConfig& config) {
    return config.iteration_unit == IterationUnit::steps
               ? config.epochs
               : config.epochs * batches_per_epoch(dataset_size, config.batch_size);
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, const TrainConfig& config, std::int64_t step) {
    const std::int64_t per_epoch = batches_per_epoch(dataset_size, config.batch_size);
    const std::int64_t epoch = step / per_epoch, b = step % per_epoch;
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t size = std::min<std::size_t>(dataset_size, static_cast<std::size_t>(config.batch_size));
    const auto start = order.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) * size);
    return {start, start + static_cast<std::ptrdiff_t>(size)};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    ckpt::Container c;
    for (const auto& [name, t] : cp.weights.params) c.arrays.emplace("weights/" + name, t);
    for (const auto& [name, t] : cp.weights.buffers) c.arrays.emplace("buffers/" + name, t);
    for (const auto& [name, t] : cp.state.m) c.arrays.emplace("adam/m/" + name, t);
    for (const auto& [name, t] : cp.state.v) c.arrays.emplace("adam/v/" + name, t);
    std::ostringstream rng;
    rng << cp.state.rng;
    c.texts["state/rng"] = rng.str();
    c.texts["state/step"] = std::to_string(cp.state.step);
    std::string running;
    for (const auto& [name, v] : cp.state.running_loss) running += name + " = " + format_double(v) + "\n";
    c.texts["state/running_loss"] = running;
    c.texts["config/model"] = config::to_text(cp.model_config);
    c.texts["config/train"] = config::to_text(cp.train_config);
    ckpt::write_file(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected) {
    const ckpt::Container c = ckpt::read_file(path);
    Checkpoint cp;
    cp.model_config = config::model_config_from_text(c.text("config/model"));
    cp.train_config = config::train_config_from_text(c.text("config/train"));
    auto strip = [](const std::string& name, const std::string& prefix) -> std::optional<std::string> {
        if (name.starts_with(prefix)) return name.substr(prefix.size());
        return std::nullopt;
    };
    for (const auto& [name, t] : c.arrays) {
        if (auto n = strip(name, "weights/")) cp.weights.params.emplace(*n, t);
        else if (auto b = strip(name, "buffers/")) cp.weights.buffers.emplace(*b, t);
        else if (auto m = strip(name, "adam/m/")) cp.state.m.emplace(*m, t);
        else if (auto v = strip(name, "adam/v/")) cp.state.v.emplace(*v, t);
    }
    model::check_weights(cp.weights, expected ? *expected : cp.model_config);
    for (const auto& [name, t] : cp.weights.params) {
        const auto m = cp.state.m.find(name), v = cp.state.v.find(name);
        if (m == cp.state.m.end() || v == cp.state.v.end() || m->second.shape() != t.shape() ||
            v->second.shape() != t.shape())
            throw TrainError("checkpoint optimizer state does not match parameter " + name);
    }
    std::istringstream rng(c.text("state/rng"));
    rng >> cp.state.rng;
    if (!rng) throw TrainError("checkpoint has an unreadable RNG state");
    cp.state.step = parse_int(c.text("state/step"));
    std::istringstream running(c.text("state/running_loss"));
    std::string line;
    while (std::getline(running, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) cp.state.running_loss[trim(line.substr(0, eq))] = parse_double(line.substr(eq + 1));
    }
    return cp;
}

std::string checkpoint_id(const std::filesystem::path& path) { return hex64(fnv1a64(read_text_file(path))); }

std::string format_progress(std::int64_t step, std::int64_t total, std::int64_t epoch, const LossRecord& losses) {
    std::string s = "step " + std::to_string(step) + "/" + std::to_string(total) + " epoch " + std::to_string(epoch);
    char buf[64];
    for (const auto& [name, v] : losses) {
        std::snprintf(buf, sizeof buf, " %s=%.6g", name.c_str(), v);
        s += buf;
    }
    return s;
}

namespace {

std::string history_header(const LossRecord& r) {
    std::string s = "step";
    for (const auto& [name, v] : r) s += "\t" + name;
    return s + "\n";
}

std::string history_row(std::int64_t step, const LossRecord& r) {
    std::string s = std::to_string(step);
    for (const auto& [name, v] : r) s += "\t" + format_double(v);
    return s + "\n";
}

/// Rows of an existing history with step <= last_step.
std::vector<std::pair<std::int64_t, LossRecord>> read_history(const std::filesystem::path& path, std::int64_t last_step) {
    std::vector<std::pair<std::int64_t, LossRecord>> out;
    if (!std::filesystem::exists(path)) return out;
    std::istringstream in(read_text_file(path));
    std::string line;
    std::vector<std::string> names;
    if (std::getline(in, line)) {
        names = split_list(line, '\t');
        if (!names.empty()) names.erase(names.begin());
    }
    while (std::getline(in, line)) {
        const auto cells = split_list(line, '\t');
        if (cells.size() != names.size() + 1) continue;
        const std::int64_t step = parse_int(cells[0]);
        if (step > last_step) break;
        LossRecord r;
        for (std::size_t i = 0; i < names.size(); ++i) r[names[i]] = parse_double(cells[i + 1]);
        out.emplace_back(step, std::move(r));
    }
    return out;
}

}  // namespace

TrainResult train(std::span<const data::TrainingPair> dataset, const model::ModelConfig& mc, const TrainConfig& config,
                  const TrainOptions& options) {
    validate(config);
    model::validate(mc);
    if (dataset.empty()) throw TrainError("train: empty dataset");
    if (options.output_dir.empty()) throw TrainError("train: no output directory");
    std::filesystem::create_directories(options.output_dir);
    const auto latest = options.output_dir / "latest.ckpt";
    const auto history_path = options.output_dir / "loss_history.tsv";

    TrainResult result;
    if (options.resume && std::filesystem::exists(latest)) {
        Checkpoint cp = load_checkpoint(latest, &mc);
        if (!(cp.model_config == mc)) throw TrainError("resume: checkpoint model config differs from the requested one");
        result.weights = std::move(cp.weights);
        result.state = std::move(cp.state);
        result.history = read_history(history_path, result.state.step);
    } else {
        result.weights = model::init_weights(mc, config.seed);
        result.state = init_state(result.weights, config);
    }

    const std::int64_t total = total_steps(dataset.size(), config);
    const std::int64_t per_epoch = batches_per_epoch(dataset.size(), config.batch_size);
    const std::int64_t stop = options.max_steps > 0 ? std::min(total, result.state.step + options.max_steps) : total;

    auto save = [&] {
        const Checkpoint cp{mc, config, result.weights, result.state};
        char name[48];
        std::snprintf(name, sizeof name, "checkpoint_step%08lld.ckpt", static_cast<long long>(result.state.step));
        save_checkpoint(options.output_dir / name, cp);
        std::filesystem::copy_file(options.output_dir / name, latest, std::filesystem::copy_options::overwrite_existing);
        std::string text;
        for (const auto& [step, r] : result.history) text += (text.empty() ? history_header(r) : "") + history_row(step, r);
        write_file_atomic(history_path, text);
        result.final_checkpoint = options.output_dir / name;
    };

    std::vector<data::TrainingPair> batch;
    while (result.state.step < stop) {
        batch.clear();
        for (std::size_t i : batch_indices(dataset.size(), config, result.state.step)) batch.push_back(dataset[i]);
        const LossRecord r = train_step(batch, result.weights, result.state, mc, config, options.perceptual);
        result.history.emplace_back(result.state.step, r);
        if (options.log && config.log_every > 0 && result.state.step % config.log_every == 0)
            *options.log << format_progress(result.state.step, total, (result.state.step - 1) / per_epoch + 1, r) << '\n';
        if (config.checkpoint_every > 0 && result.state.step % config.checkpoint_every == 0 && result.state.step < stop)
            save();
    }
    save();
    return result;
}

}  // namespace cardiosynth::train
