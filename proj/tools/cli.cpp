#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <ostream>

#include "CLI11.hpp"
#include "cardiosynth/config.hpp"
#include "cardiosynth/inference.hpp"
#include "cardiosynth/nifti.hpp"
#include "cardiosynth/phantom.hpp"
#include "cardiosynth/util.hpp"

namespace cardiosynth::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_file;
    std::vector<std::string> overrides;
};

config::RunConfig resolve(const Globals& g) {
    config::RunConfig c = g.config_file.empty() ? config::RunConfig{} : config::load(g.config_file);
    config::apply_environment(c);
    for (const auto& o : g.overrides) config::apply_override(c, o);
    config::validate(c);
    return c;
}

/// Explicit flag, else `fallback` (from the config), else a usage error.
fs::path pick(const std::string& flag, const std::string& fallback, const char* what) {
    if (!flag.empty()) return flag;
    if (!fallback.empty()) return fallback;
    throw UsageError(std::string("no ") + what + " given (flag or config)");
}

fs::path output_under_root(const std::string& flag, const config::RunConfig& c, const char* sub) {
    if (!flag.empty()) return flag;
    if (!c.paths.output_root.empty()) return fs::path(c.paths.output_root) / sub;
    throw UsageError("no output directory given (--out or paths.output_root)");
}

void snapshot(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
              const config::RunConfig& c) {
    fs::create_directories(dir);
    std::string text = "# cardiosynth";
    for (const auto& a : args) text += " " + a;
    text += "\n\n" + config::to_ini(c);
    write_file_atomic(dir / ("resolved_config_" + command + ".ini"), text);
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

/// One slice of a style image, preprocessed like the training data.
ImageSlice load_style_image(const fs::path& path, int slice, const config::RunConfig& c) {
    ImageVolume v = nifti::read_image_volume(path);
    if (slice < 0 || slice >= v.slices)
        throw UsageError("style slice " + std::to_string(slice) + " out of range [0, " + std::to_string(v.slices) + ")");
    ImageVolume one(1, v.rows, v.cols);
    one.row_spacing = v.row_spacing;
    one.col_spacing = v.col_spacing;
    const auto src = v.slice(slice);
    one.data = src.data;
    LabelVolume empty(1, v.rows, v.cols);
    empty.row_spacing = v.row_spacing;
    empty.col_spacing = v.col_spacing;
    auto [img, mask] = data::resample_inplane(one, empty, c.data.target_spacing);
    std::tie(img, mask) = data::center_crop(img, mask, c.model.image_size);
    img = data::scale_intensity(img, c.data.intensity_mode, c.data.lower_percentile, c.data.upper_percentile);
    return img.slice(0);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Labeled 4D cardiac MR synthesis: phantom labels, SPADE training, label-swap inference."};
    app.name("cardiosynth");
    app.require_subcommand(1);
    Globals g;
    app.add_option("-c,--config", g.config_file, "INI run configuration");
    app.add_option("-s,--set", g.overrides, "Override a config value, section.key=value (repeatable)")
        ->allow_extra_args(false);

    std::string out_dir, in_dir, data_dir, checkpoint, labels_path, style_path, dataset, report_path;
    bool use_phantom = false, resume = false, overwrite = false;
    long long max_steps = 0;
    int style_slice = 0, index = 0, count = 0, pairs = 200;
    std::uint64_t seed = 0;
    std::string axis = "time";

    auto* phantom = app.add_subcommand("phantom", "Generate and export the phantom label sequence");
    phantom->add_option("-o,--out", out_dir, "Output directory (default <output_root>/phantom)");

    auto* prep = app.add_subcommand("preprocess", "Build and cache the training set");
    prep->add_option("-i,--in", in_dir, "Dataset root (default paths.data_root)");
    prep->add_option("-o,--out", out_dir, "Cache directory (default paths.cache_dir)");

    auto* trn = app.add_subcommand("train", "Train the model on a cached training set");
    trn->add_option("-d,--data", data_dir, "Cache directory (default paths.cache_dir)");
    trn->add_option("-o,--out", out_dir, "Run directory (default <output_root>/train)");
    trn->add_flag("--resume", resume, "Continue from <out>/latest.ckpt");
    trn->add_option("--max-steps", max_steps, "Stop after this many steps in this invocation")->check(CLI::NonNegativeNumber);

    auto* syn = app.add_subcommand("synth", "Synthesize a labeled image sequence");
    syn->add_option("-k,--checkpoint", checkpoint, "Checkpoint (default paths.checkpoint)");
    auto* lab = syn->add_option("-l,--labels", labels_path, "4D label NIfTI to drive the generator");
    auto* ph = syn->add_flag("--phantom", use_phantom, "Generate labels from the [phantom] section instead");
    lab->excludes(ph);
    syn->add_option("--style", style_path, "Style image NIfTI (implies inference.style=encode)");
    syn->add_option("--style-slice", style_slice, "Slice of the style image to encode");
    syn->add_option("-o,--out", out_dir, "Output directory (default <output_root>/synth)");
    syn->add_flag("--overwrite", overwrite, "Replace existing outputs");

    auto* mon = app.add_subcommand("montage", "Render a labels-over-images PNG grid");
    mon->add_option("dataset", dataset, "Synthesized dataset directory")->required();
    mon->add_option("--axis", axis, "time (frames at a fixed slice) or slice (slices at a fixed frame)")
        ->check(CLI::IsMember({"time", "slice"}));
    mon->add_option("--index", index, "Fixed slice (axis time) or frame (axis slice)");
    mon->add_option("--count", count, "Number of evenly spread columns (0: all)")->check(CLI::NonNegativeNumber);
    mon->add_option("-o,--out", out_dir, "PNG path")->required();

    auto* rep = app.add_subcommand("report", "Coherence and per-class intensity report");
    rep->add_option("dataset", dataset, "Synthesized dataset directory")->required();
    rep->add_option("-o,--out", report_path, "Report path (TSV); stdout when omitted");
    rep->add_option("--seed", seed, "Seed of the shuffled baseline");
    rep->add_option("--pairs", pairs, "Shuffled baseline pairs (>= 100)");

    for (auto* sub : {phantom, prep, trn, syn, mon, rep}) sub->fallthrough();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        const config::RunConfig c = resolve(g);
        if (*phantom) {
            const fs::path dir = output_under_root(out_dir, c, "phantom");
            snapshot(dir, "phantom", args, c);
            const auto seq = phantom::generate_label_sequence(c.phantom);
            nifti::write_label_sequence(dir / "labels.nii.gz", seq);
            write_file_atomic(dir / "phantom_params.txt", phantom::params_to_text(c.phantom));
            out << "wrote " << (dir / "labels.nii.gz").string() << " (" << seq.frames << " frames x " << seq.slices
                << " slices x " << seq.rows << "x" << seq.cols << ")\n";
        } else if (*prep) {
            const fs::path root = pick(in_dir, c.paths.data_root, "dataset root");
            const fs::path dir = pick(out_dir, c.paths.cache_dir, "cache directory");
            snapshot(dir, "preprocess", args, c);
            const auto cases = data::discover_cases(root, c.data);
            if (cases.empty()) throw data::DataError("no cases matching '" + c.data.image_glob + "' under " + root.string());
            const auto set = data::build_training_set(cases, c.data);
            data::write_cache(dir / "train", set.train);
            if (!set.validation.empty()) data::write_cache(dir / "validation", set.validation);
            out << "cached " << set.train.size() << " training and " << set.validation.size() << " validation pairs from "
                << cases.size() << " volumes\n";
        } else if (*trn) {
            fs::path cache = pick(data_dir, c.paths.cache_dir, "cache directory");
            if (fs::exists(cache / "train" / "index.tsv")) cache /= "train";
            const fs::path dir = output_under_root(out_dir, c, "train");
            snapshot(dir, "train", args, c);
            const auto pairs_in = data::read_cache(cache);
            train::TrainOptions opt{dir, resume, max_steps, &out, nullptr};
            const auto result = train::train(pairs_in, c.model, c.train, opt);
            out << "checkpoint " << result.final_checkpoint.string() << '\n';
        } else if (*syn) {
            const fs::path ckpt = pick(checkpoint, c.paths.checkpoint, "checkpoint");
            if (labels_path.empty() && !use_phantom) throw UsageError("synth needs --labels or --phantom");
            const fs::path dir = output_under_root(out_dir, c, "synth");
            snapshot(dir, "synth", args, c);
            infer::SynthesisRequest req;
            req.checkpoint = ckpt;
            req.config = c.inference;
            req.config.overwrite = c.inference.overwrite || overwrite;
            req.labels = use_phantom ? phantom::generate_label_sequence(c.phantom) : nifti::read_label_sequence(labels_path);
            if (!style_path.empty()) {
                const auto cp = train::load_checkpoint(ckpt);
                config::RunConfig sized = c;
                sized.model = cp.model_config;
                req.config.style = infer::StyleSource::encode;
                req.style_image = load_style_image(style_path, style_slice, sized);
                req.style_descriptor = fs::path(style_path).filename().string() + "#" + std::to_string(style_slice);
                const auto ds = infer::synthesize_sequence(req, cp, train::checkpoint_id(ckpt));
                infer::export_dataset(ds, dir, req.config.overwrite);
            } else {
                infer::export_dataset(infer::synthesize_sequence(req), dir, req.config.overwrite);
            }
            out << "wrote " << dir.string() << '\n';
        } else if (*mon) {
            const fs::path png = out_dir;
            snapshot(png.parent_path().empty() ? fs::path(".") : png.parent_path(), "montage", args, c);
            const auto ds = infer::load_dataset(dataset);
            const auto ax = infer::axis_from_string(axis);
            const int along = ax == infer::MontageAxis::time ? ds.images.frames : ds.images.slices;
            std::vector<int> idx;
            if (count > 0) idx = infer::spread_indices(0, along - 1, std::min(count, along));
            const auto layout = infer::render_montage(ds, ax, index, png, idx);
            out << "wrote " << png.string() << " (" << layout.rows << "x" << layout.columns << " cells, " << layout.width()
                << "x" << layout.height() << " px)\n";
        } else if (*rep) {
            const auto ds = infer::load_dataset(dataset);
            const std::string text = infer::to_text(infer::coherence_report(ds, seed, pairs));
            if (report_path.empty()) {
                out << text;
            } else {
                const fs::path p = report_path;
                snapshot(p.parent_path().empty() ? fs::path(".") : p.parent_path(), "report", args, c);
                write_file_atomic(p, text);
                out << "wrote " << p.string() << '\n';
            }
        }
    } catch (const UsageError& e) {
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cardiosynth::cli
