// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// `acceptance 3 5` runs only the listed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <png.h>

#include "cardiosynth/config.hpp"
#include "cardiosynth/data_pipeline.hpp"
#include "cardiosynth/inference.hpp"
#include "cardiosynth/model.hpp"
#include "cardiosynth/nifti.hpp"
#include "cardiosynth/phantom.hpp"
#include "cardiosynth/training.hpp"
#include "cardiosynth/util.hpp"
#include "cli.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "tiny_model.hpp"
#include "toy_data.hpp"

using namespace cardiosynth;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << (detail.tellp() > 0 ? "; " : "") << "failed: " << what;
        }
    }
    template <class T>
    Outcome& note(const std::string& key, const T& v) {
        detail << (detail.tellp() > 0 ? "; " : "") << key << "=" << v;
        return *this;
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

double count_ml(std::span<const std::uint8_t> labels, Label label, double voxel_mm3) {
    std::size_t n = 0;
    for (auto v : labels) n += v == static_cast<std::uint8_t>(label);
    return static_cast<double>(n) * voxel_mm3 / 1000.0;
}

// ---- shared toy-training run (criteria 9, 10, 12) ------------------------

constexpr int kToySteps = 300;

struct ToyRun {
    testing_support::TempDir dir{"acceptance_toy"};
    model::ModelConfig model = testing_support::desk_config();
    train::TrainConfig config;
    train::TrainResult result;
    double seconds = 0;
    std::optional<infer::SyntheticDataset> swapped;
    double swap_seconds = 0;
};

ToyRun& toy_run() {
    static std::unique_ptr<ToyRun> run;
    if (run) return *run;
    run = std::make_unique<ToyRun>();
    run->config.batch_size = 8;
    run->config.epochs = kToySteps;
    run->config.iteration_unit = train::IterationUnit::steps;
    run->config.seed = 1;
    const auto data = testing_support::toy_pairs(8, run->model.image_size, 7);
    const auto t0 = Clock::now();
    run->result = train::train(data, run->model, run->config, {run->dir / "run", false, 0, nullptr, nullptr});
    run->seconds = seconds_since(t0);
    return *run;
}

/// Default phantom labels through the trained toy generator, resampled to the
/// 2 mm desk-model grid.
const infer::SyntheticDataset& toy_swap() {
    ToyRun& run = toy_run();
    if (!run.swapped) {
        const auto t0 = Clock::now();
        infer::SynthesisRequest req;
        req.checkpoint = run.result.final_checkpoint;
        req.labels = phantom::generate_label_sequence(phantom::PhantomParams{});
        req.config.resample_labels = true;
        req.config.model_spacing = 2.0;
        req.config.seed = 3;
        run.swapped = infer::synthesize_sequence(req);
        run.swap_seconds = seconds_since(t0);
    }
    return *run.swapped;
}

// ---- criteria ----------------------------------------------------------

void phantom_constants(Outcome& o) {
    const auto t0 = Clock::now();
    const phantom::PhantomParams p;
    const auto seq = phantom::generate_label_sequence(p);
    testing_support::TempDir dir("acceptance_c1");
    nifti::write_label_sequence(dir / "labels.nii.gz", seq);
    const auto hdr = nifti::read(dir / "labels.nii.gz");
    const double secs = seconds_since(t0);

    o.require(hdr.dims == std::vector<int>{128, 128, 18, 25}, "header dims (x, y, slice, frame) == 128,128,18,25");
    o.require(seq.frames == 25 && seq.slices == 18, "25 frames x 18 slices");
    o.require(hdr.pixdim(0) == 1.0 && hdr.pixdim(1) == 1.0 && seq.in_plane_spacing == 1.0, "1.0 mm in-plane spacing");
    o.require(p.cycle_length == 1.0, "cycle length 1.0 s");
    o.require(std::abs(hdr.pixdim(3) * 25 - 1.0) < 1e-6, "header frame step x 25 frames == 1.0 s");
    bool times = seq.frame_times.size() == 25;
    for (int f = 0; times && f < 25; ++f) times = std::abs(seq.frame_times[f] - f / 25.0) < 1e-12;
    o.require(times, "frame times k/25 s");
    o.require(secs < 60, "runtime < 1 min");
    o.note("dims", "25x18x128x128").note("frame_step_s", fmt(hdr.pixdim(3))).note("seconds", fmt(secs, 3));
}

void phantom_volumes(Outcome& o) {
    const auto t0 = Clock::now();
    const phantom::PhantomParams p;
    const double h = phantom::slice_stack(p).slice_spacing;
    const double voxel = p.in_plane_spacing * p.in_plane_spacing * h;
    double worst_lv = 0;
    for (std::size_t k = 0; k < phantom::kNumPhases; ++k) {
        const auto v = phantom::voxelize_at(p, p.phase_fractions[k]);
        const double lv = count_ml(v.data, Label::lv_pool, voxel);
        worst_lv = std::max(worst_lv, std::abs(lv - p.lv_volumes[k]) / p.lv_volumes[k]);
        o.require(std::abs(lv - p.lv_volumes[k]) <= 0.02 * p.lv_volumes[k],
                  "LV volume at knot " + std::to_string(k) + " (" + fmt(lv) + " vs " + fmt(p.lv_volumes[k]) + " mL)");
    }
    // Knots that land on emitted frames are also checked in the sequence itself.
    const auto seq = phantom::generate_label_sequence(p);
    double myo_min = 1e300, myo_max = 0, worst_myo = 0;
    for (int f = 0; f < seq.frames; ++f) {
        const std::span<const std::uint8_t> frame(seq.data.data() + seq.offset(f, 0), seq.slice_size() * seq.slices);
        const double myo = count_ml(frame, Label::lv_myocardium, voxel);
        myo_min = std::min(myo_min, myo);
        myo_max = std::max(myo_max, myo);
        worst_myo = std::max(worst_myo, std::abs(myo - p.myocardial_volume) / p.myocardial_volume);
        for (std::size_t k = 0; k < phantom::kNumPhases; ++k)
            if (std::abs(p.phase_fractions[k] * seq.frames - f) < 1e-9) {
                const double lv = count_ml(frame, Label::lv_pool, voxel);
                o.require(std::abs(lv - p.lv_volumes[k]) <= 0.02 * p.lv_volumes[k],
                          "LV volume in emitted frame " + std::to_string(f));
            }
    }
    o.require(worst_myo <= 0.02, "myocardial volume within 2% of configured in every frame");
    o.require((myo_max - myo_min) <= 0.02 * myo_min, "myocardial volume frame-constant within 2%");
    const double secs = seconds_since(t0);
    o.require(secs < 120, "runtime < 2 min");
    o.note("worst_lv_rel_err", fmt(worst_lv)).note("worst_myo_rel_err", fmt(worst_myo));
    o.note("myo_range_ml", fmt(myo_min) + ".." + fmt(myo_max)).note("seconds", fmt(secs, 3));
}

void label_integrity(Outcome& o) {
    const auto seq = phantom::generate_label_sequence(phantom::PhantomParams{});
    std::size_t counted = 0;
    for (int c = 0; c < kNumLabelClasses; ++c)
        counted += static_cast<std::size_t>(std::count(seq.data.begin(), seq.data.end(), static_cast<std::uint8_t>(c)));
    o.require(counted == seq.data.size(), "every voxel carries one of the 4 classes");
    const int mid = seq.slices / 2;
    int ring_frames = 0;
    for (int f = 0; f < seq.frames; ++f) {
        const auto s = seq.slice(f, mid);
        auto is = [&](int cls) { return [&, cls](int r, int c) { return s(r, c) == cls; }; };
        const int myo = testing_support::count_components(s.rows, s.cols, is(2));
        const int pool = testing_support::count_components(s.rows, s.cols, is(3));
        const int outside = testing_support::count_components(s.rows, s.cols, [&](int r, int c) { return s(r, c) != 2; });
        bool enclosed = true;
        for (int r = 0; r < s.rows; ++r)
            for (int c = 0; c < s.cols; ++c) {
                if (s(r, c) != 3) continue;
                const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int y = r + dy[k], x = c + dx[k];
                    if (y < 0 || x < 0 || y >= s.rows || x >= s.cols || (s(y, x) != 2 && s(y, x) != 3)) enclosed = false;
                }
            }
        const bool ring = myo == 1 && pool == 1 && outside == 2 && enclosed;
        ring_frames += ring;
        o.require(ring, "ring topology at frame " + std::to_string(f));
    }
    o.note("voxels", seq.data.size()).note("ring_frames", std::to_string(ring_frames) + "/" + std::to_string(seq.frames));
}

void preprocessing_constants(Outcome& o) {
    const auto c = testing_support::make_case(150, 140, 3, 1.37, 21);
    const data::PipelineConfig cfg;
    const auto pairs = data::preprocess_case(data::CaseRecord{"case", c.image, c.mask, data::Phase::ed}, cfg);
    const auto resampled = data::resample_inplane(c.image, c.mask, cfg.target_spacing);
    const auto oracle = testing_support::preprocess_oracle(c.image, c.mask, 1.3, 128, 1.0, 99.0);
    o.require(resampled.first.row_spacing == 1.3 && resampled.first.col_spacing == 1.3, "output spacing 1.3 mm");
    o.require(pairs.size() == 3, "one pair per slice");
    double worst = 0, lo = 1e300, hi = -1e300;
    bool labels_equal = true;
    for (std::size_t s = 0; s < pairs.size() && s < oracle.size(); ++s) {
        o.require(pairs[s].image.rows == 128 && pairs[s].image.cols == 128, "128x128 output");
        labels_equal &= pairs[s].labels.data == oracle[s].labels;
        for (std::size_t i = 0; i < oracle[s].image.size(); ++i) {
            const double v = pairs[s].image.data[i];
            worst = std::max(worst, std::abs(v - oracle[s].image[i]));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    o.require(lo >= -1.0 && hi <= 1.0, "intensities within [-1, 1]");
    o.require(worst < 1e-6, "image matches the oracle to 1e-6");
    o.require(labels_equal, "labels match the nearest-neighbour oracle");
    o.note("max_abs_diff", fmt(worst, 3)).note("range", fmt(lo) + ".." + fmt(hi));
}

Tensor mask_batch(const LabelSlice& s, int n) {
    std::vector<LabelSlice> v(static_cast<std::size_t>(n), s);
    return model::one_hot_batch(v, 4);
}

void spade_math(Outcome& o) {
    using testing_support::disc_labels;
    auto cfg = testing_support::tiny_config();
    auto w = model::init_weights(cfg, 2);
    const std::string prefix = "gen/block1/spade_1";
    for (auto& [name, t] : w.params)
        if (name.starts_with(prefix + "/gamma") || name.starts_with(prefix + "/beta")) t.fill(0.0);

    double worst_mean = 0, worst_std = 0, worst_oracle = 0;
    bool exact = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        std::mt19937_64 rng(seed);
        auto xin = testing_support::random_tensor({4, 4, 8, 8}, rng, 0.5 + seed);
        for (double& v : xin.values()) v += 2.0 * seed - 3.0;
        ag::Tape t;
        model::Graph g(t, w, cfg, model::Trainable::none);
        const auto x = t.constant(xin);
        const auto y = model::spade_normalize(g, prefix, x, mask_batch(disc_labels(16, 4), 4));
        exact &= y.value() == ag::batch_norm(x, model::kNormEps).value();
        const int plane = 64;
        for (int c = 0; c < 4; ++c) {
            double s = 0, ss = 0;
            for (int n = 0; n < 4; ++n)
                for (int i = 0; i < plane; ++i) s += xin[(n * 4 + c) * plane + i];
            const double mean_in = s / (4 * plane);
            for (int n = 0; n < 4; ++n)
                for (int i = 0; i < plane; ++i) ss += std::pow(xin[(n * 4 + c) * plane + i] - mean_in, 2);
            const double inv = 1.0 / std::sqrt(ss / (4 * plane) + model::kNormEps);
            double m = 0, m2 = 0;
            for (int n = 0; n < 4; ++n)
                for (int i = 0; i < plane; ++i) {
                    const std::size_t k = (n * 4 + c) * plane + i;
                    const double v = y.value()[k];
                    worst_oracle = std::max(worst_oracle, std::abs(v - (xin[k] - mean_in) * inv));
                    m += v;
                    m2 += v * v;
                }
            m /= 4 * plane;
            worst_mean = std::max(worst_mean, std::abs(m));
            worst_std = std::max(worst_std, std::abs(std::sqrt(m2 / (4 * plane) - m * m) - 1.0));
        }
    }
    o.require(exact, "zero-init modulation output == channel-normalized input exactly");
    o.require(worst_oracle < 1e-12, "normalized input matches the direct formula");
    o.require(worst_mean < 1e-5, "per-channel |mean| < 1e-5");
    o.require(worst_std < 1e-3, "per-channel |std - 1| < 1e-3");

    // Locality: modulation convs are 3x3 then 3x3, so a one-pixel mask edit
    // reaches at most 2 pixels away.
    const auto wr = model::init_weights(cfg, 3);
    std::mt19937_64 rng(6);
    const auto xin = testing_support::random_tensor({1, 8, 16, 16}, rng);
    auto run = [&](const LabelSlice& l) {
        ag::Tape t;
        model::Graph g(t, wr, cfg, model::Trainable::none);
        return model::spade_normalize(g, "gen/block1/spade_0", t.constant(xin), mask_batch(l, 1)).value();
    };
    int edits = 0, leaks = 0, silent = 0;
    for (auto [er, ec] : {std::pair{5, 9}, std::pair{0, 0}, std::pair{8, 8}, std::pair{15, 3}}) {
        auto labels = disc_labels(16, 4);
        const auto a = run(labels);
        labels(er, ec) = labels(er, ec) == 1 ? 2 : 1;
        const auto b = run(labels);
        bool changed = false;
        for (int c = 0; c < 8; ++c)
            for (int r = 0; r < 16; ++r)
                for (int q = 0; q < 16; ++q) {
                    const std::size_t i = (c * 16 + r) * 16 + q;
                    if (std::abs(r - er) > 2 || std::abs(q - ec) > 2) leaks += a[i] != b[i];
                    else changed |= a[i] != b[i];
                }
        silent += !changed;
        ++edits;
    }
    o.require(leaks == 0, "zero difference outside the receptive field");
    o.require(silent == 0, "edits change the output inside the receptive field");
    o.note("max_abs_mean", fmt(worst_mean, 3)).note("max_std_err", fmt(worst_std, 3)).note("edits", edits);
}

void gradient_correctness(Outcome& o) {
    using namespace model;
    const auto t0 = Clock::now();
    const auto cfg = testing_support::tiny_config(true);
    const auto w = init_weights(cfg, 8);
    std::mt19937_64 rng(41);
    const std::vector<LabelSlice> labels{testing_support::disc_labels(16, 4), testing_support::disc_labels(16, 5)};
    const auto mask = one_hot_batch(labels, 4);
    const auto real = testing_support::random_tensor({2, 1, 16, 16}, rng, 0.5);
    const auto noise = testing_support::random_tensor({2, 8}, rng);
    auto loss = [&](ag::Tape& t, Graph& g) {
        const auto r = t.constant(real);
        const auto lat = style_encoder_forward(g, r);
        const auto fake = generator_forward(g, ag::reparameterize(lat.mu, lat.logvar, noise), mask);
        return generator_loss(t, discriminator_forward(g, r, mask), discriminator_forward(g, fake, mask), &lat, r, fake,
                              LossWeights{}, nullptr)
            .total;
    };
    ag::Tape t;
    Graph g(t, w, cfg, Trainable::generator);
    t.backward(loss(t, g));
    std::vector<std::string> names;
    for (const auto& [n, v] : g.bound())
        if (n.starts_with("gen/") || n.starts_with("enc/")) names.push_back(n);
    std::mt19937_64 pick(43);
    double worst = 0;
    for (int k = 0; k < 10; ++k) {
        const auto& name = names[pick() % names.size()];
        const std::size_t idx = pick() % w.params.at(name).size();
        auto eval = [&](double delta) {
            auto ww = w;
            ww.params[name][idx] += delta;
            ag::Tape tt;
            Graph gg(tt, ww, cfg, Trainable::none);
            return loss(tt, gg).value()[0];
        };
        const double numeric = (eval(1e-4) - eval(-1e-4)) / 2e-4;
        const double analytic = t.grad(g.bound().at(name))[idx];
        const double err = testing_support::relative_error(analytic, numeric);
        worst = std::max(worst, err);
        o.require(err < 1e-3, name + "[" + std::to_string(idx) + "] relative error " + fmt(err, 3));
    }
    const double secs = seconds_since(t0);
    o.require(secs < 300, "runtime < 5 min");
    o.note("params", 10).note("worst_rel_err", fmt(worst, 3)).note("seconds", fmt(secs, 3));
}

void closed_form_losses(Outcome& o) {
    ag::Tape t;
    const double kl0 = model::kl_divergence(t.constant(Tensor({1, 256}, 0.0)), t.constant(Tensor({1, 256}, 0.0))).value()[0];
    const double kl1 = model::kl_divergence(t.constant(Tensor({1, 256}, 1.0)), t.constant(Tensor({1, 256}, 0.0))).value()[0];
    std::vector<model::ScaleOutput> real, fake;
    for (int s = 0; s < 2; ++s) {
        real.push_back({t.constant(Tensor({2, 1, 5, 5}, 1.0)), {}});
        fake.push_back({t.constant(Tensor({2, 1, 5, 5}, -1.0)), {}});
    }
    const double d = model::d_hinge_loss(real, fake).value()[0];
    o.require(kl0 == 0.0, "kl(0, 0) == 0");
    o.require(kl1 == 128.0, "kl(1, 0; dim 256) == 128");
    o.require(d == 0.0, "d_loss == 0 for D(real) = 1, D(fake) = -1");
    o.note("kl0", kl0).note("kl1", kl1).note("d_loss", d);
}

void encoder_without_norm(Outcome& o) {
    auto cfg = testing_support::desk_config();
    cfg.use_vae = true;
    cfg.init_gain = 1.0;
    int enc_params = 0, stray = 0;
    for (const auto& spec : model::parameter_specs(cfg)) {
        if (!spec.name.starts_with("enc/")) continue;
        ++enc_params;
        const bool conv = spec.name.find("/conv/") != std::string::npos;
        const bool head = spec.name.starts_with("enc/fc_mu/") || spec.name.starts_with("enc/fc_logvar/");
        stray += !(conv || head);
    }
    int enc_buffers = 0;
    for (const auto& spec : model::buffer_specs(cfg)) enc_buffers += spec.name.starts_with("enc/");
    o.require(enc_params > 0 && stray == 0, "encoder parameters are convolutions and the two heads only");
    o.require(enc_buffers == 0, "encoder has no normalization statistics");

    const auto w = model::init_weights(cfg, 17);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    ImageSlice img(64, 64);
    for (double& v : img.data) v = u(rng);
    const auto base = model::encode(w, cfg, img).mu;
    auto dist = [&](const ImageSlice& other) {
        const auto mu = model::encode(w, cfg, other).mu;
        double s = 0;
        for (std::size_t i = 0; i < mu.size(); ++i) s += (mu[i] - base[i]) * (mu[i] - base[i]);
        return std::sqrt(s);
    };
    auto patched = img;
    for (int r = 24; r < 40; ++r)
        for (int c = 8; c < 24; ++c) patched(r, c) = u(rng);
    auto scaled = img;
    for (double& v : scaled.data) v *= 0.5;
    const double dp = dist(patched), ds = dist(scaled);
    o.require(dp > 0, "mu responds to a 16x16 patch perturbation");
    o.require(ds > 0, "mu responds to global intensity rescaling");
    o.note("enc_params", enc_params).note("dmu_patch", fmt(dp, 3)).note("dmu_scale", fmt(ds, 3));
}

void overfit_smoke(Outcome& o) {
    const ToyRun& run = toy_run();
    const auto& h = run.result.history;
    o.require(h.size() == kToySteps, "300 steps recorded");
    bool finite = true;
    for (const auto& [step, r] : h)
        for (const auto& [name, v] : r) finite &= std::isfinite(v);
    o.require(finite, "every loss finite");
    double first = 0, last = 0;
    for (int i = 0; i < 10 && i < static_cast<int>(h.size()); ++i) {
        first += h[i].second.at("l1") / 10;
        last += h[h.size() - 1 - i].second.at("l1") / 10;
    }
    const double drop = 1.0 - last / first;
    o.require(drop >= 0.5, "L1 drop >= 50% (steps 1-10 vs 291-300)");
    o.require(run.seconds < 1800, "runtime < 30 min");
    o.note("l1_first10", fmt(first)).note("l1_last10", fmt(last)).note("drop", fmt(drop, 3));
    o.note("seconds", fmt(run.seconds, 4));
}

void toy_texture(Outcome& o) {
    const auto& ds = toy_swap();
    const ToyRun& run = toy_run();
    std::vector<double> sum(4, 0.0);
    std::vector<std::size_t> count(4, 0);
    for (std::size_t i = 0; i < ds.images.data.size(); ++i) {
        sum[ds.labels.data[i]] += ds.images.data[i];
        ++count[ds.labels.data[i]];
    }
    std::string means;
    for (int c = 0; c < 4; ++c) {
        const double m = count[c] ? sum[c] / count[c] : NAN;
        means += (c ? "," : "") + fmt(m, 3);
        o.require(count[c] > 0 && std::abs(m - testing_support::kToyIntensity[c]) <= 0.15,
                  "class " + std::to_string(c) + " mean " + fmt(m, 3) + " within 0.15 of " +
                      fmt(testing_support::kToyIntensity[c]));
    }
    const double secs = run.seconds + run.swap_seconds;
    o.require(secs < 2700, "runtime < 45 min");
    o.require(ds.labels.frames == 25 && ds.labels.slices == 18, "full phantom sequence swapped in");
    o.note("class_means", means).note("targets", "-0.6,-0.1,0.4,0.8").note("seconds", fmt(secs, 4));
}

void determinism_and_resume(Outcome& o) {
    auto mc = testing_support::desk_config();
    mc.use_vae = true;
    train::TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 3;  // 6 steps
    tc.seed = 5;
    tc.checkpoint_every = 2;
    const auto data = testing_support::toy_pairs(8, mc.image_size, 11);
    testing_support::TempDir a("acceptance_det_a"), b("acceptance_det_b"), c("acceptance_det_c");
    const auto ra = train::train(data, mc, tc, {a.path(), false, 0, nullptr, nullptr});
    const auto rb = train::train(data, mc, tc, {b.path(), false, 0, nullptr, nullptr});
    o.require(ra.history == rb.history, "two seeded runs give bit-identical losses");
    o.require(ra.weights == rb.weights, "two seeded runs give bit-identical weights");
    o.require(read_text_file(a / "latest.ckpt") == read_text_file(b / "latest.ckpt"), "checkpoints byte-identical");

    const auto first = train::train(data, mc, tc, {c.path(), false, 3, nullptr, nullptr});
    o.require(first.state.step == 3, "interrupted after 3 steps");
    const auto resumed = train::train(data, mc, tc, {c.path(), true, 0, nullptr, nullptr});
    o.require(resumed.history == ra.history, "resumed losses equal the uninterrupted run");
    o.require(resumed.weights == ra.weights, "resumed weights equal the uninterrupted run");
    o.require(read_text_file(c / "latest.ckpt") == read_text_file(a / "latest.ckpt"), "resumed checkpoint byte-identical");
    o.require(read_text_file(c / "loss_history.tsv") == read_text_file(a / "loss_history.tsv"), "loss history identical");

    auto other = tc;
    other.seed = 6;
    testing_support::TempDir d("acceptance_det_d");
    const auto rd = train::train(data, mc, other, {d.path(), false, 0, nullptr, nullptr});
    o.require(!(rd.history == ra.history), "a different seed changes the run");
    o.note("steps", ra.history.size()).note("final_g_total", fmt(ra.history.back().second.at("g_total"), 17));
}

struct Png {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

Png read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw std::runtime_error("cannot read " + path.string());
    img.format = PNG_FORMAT_RGB;
    Png out{static_cast<int>(img.width), static_cast<int>(img.height), std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr))
        throw std::runtime_error("cannot decode " + path.string());
    return out;
}

/// Cells in the label row are palette colours and cells in the image row are gray.
bool labels_over_images(const Png& png, int columns, int cell) {
    for (int col = 0; col < columns; ++col) {
        const int x0 = col * (cell + 2);
        bool colored = false;
        for (int r = 0; r < cell; ++r)
            for (int c = 0; c < cell; ++c) {
                const auto* top = &png.rgb[(static_cast<std::size_t>(r) * png.width + x0 + c) * 3];
                colored |= top[0] != top[1] || top[1] != top[2];
                const auto* bottom = &png.rgb[(static_cast<std::size_t>(r + cell + 2) * png.width + x0 + c) * 3];
                if (bottom[0] != bottom[1] || bottom[1] != bottom[2]) return false;
            }
        if (!colored) return false;
    }
    return true;
}

void figure_plumbing(Outcome& o) {
    ToyRun& run = toy_run();
    const fs::path out = run.dir / "figures";
    auto cli = [&](std::vector<std::string> args) {
        std::ostringstream so, se;
        const int code = cli::run(args, so, se);
        if (code != 0) o.require(false, "command failed: " + se.str());
        return code;
    };
    const std::string ckpt = run.result.final_checkpoint.string();
    cli({"--set", "inference.resample_labels=true", "--set", "inference.model_spacing=2", "synth", "-k", ckpt,
         "--phantom", "--out", (out / "synth").string()});
    cli({"montage", (out / "synth").string(), "--axis", "time", "--index", "9", "--out", (out / "frames.png").string()});
    cli({"montage", (out / "synth").string(), "--axis", "slice", "--index", "0", "--out", (out / "slices.png").string()});
    cli({"montage", (out / "synth").string(), "--axis", "time", "--index", "9", "--count", "6", "--out",
         (out / "frames6.png").string()});
    cli({"report", (out / "synth").string(), "--out", (out / "report.tsv").string()});
    if (!o.pass) return;

    const int cell = run.model.image_size;
    auto width = [&](int n) { return n * cell + (n - 1) * 2; };
    const auto frames = read_png(out / "frames.png");
    const auto slices = read_png(out / "slices.png");
    const auto six = read_png(out / "frames6.png");
    o.require(frames.width == width(25) && frames.height == 2 * cell + 2, "time montage is 2x25 cells");
    o.require(slices.width == width(18) && slices.height == 2 * cell + 2, "slice montage is 2x18 cells");
    o.require(six.width == width(6) && six.height == 2 * cell + 2, "subset montage is 2x6 cells");
    o.require(labels_over_images(frames, 25, cell) && labels_over_images(slices, 18, cell),
              "label maps on top, images below");

    const auto ds = infer::load_dataset(out / "synth");
    o.require(ds.labels.data == toy_swap().labels.data, "exported labels are the fitted phantom labels");
    const auto rep = infer::coherence_report(ds, 0);
    o.require(rep.shuffled_pairs >= 100, ">= 100 shuffled baseline pairs");
    o.require(rep.adjacent_frame_ssim > rep.shuffled_ssim, "adjacent-frame SSIM > shuffled baseline");
    o.note("cells", "2x25,2x18,2x6").note("adjacent_frame_ssim", fmt(rep.adjacent_frame_ssim));
    o.note("adjacent_slice_ssim", fmt(rep.adjacent_slice_ssim)).note("shuffled_ssim", fmt(rep.shuffled_ssim));
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "phantom constants", phantom_constants},
        {2, "phantom volume fidelity", phantom_volumes},
        {3, "label integrity", label_integrity},
        {4, "preprocessing constants", preprocessing_constants},
        {5, "SPADE layer math", spade_math},
        {6, "gradient correctness", gradient_correctness},
        {7, "closed-form losses", closed_form_losses},
        {8, "encoder without normalization", encoder_without_norm},
        {9, "overfit smoke test", overfit_smoke},
        {10, "toy-texture label swap", toy_texture},
        {11, "determinism and resume", determinism_and_resume},
        {12, "figure plumbing", figure_plumbing},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome o;
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
                  << std::endl;
    }
    return failed ? 1 : 0;
}
