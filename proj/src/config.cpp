#include "cardiosynth/config.hpp"

#include <cstdlib>
#include <sstream>
#include <vector>

#include "cardiosynth/util.hpp"

namespace cardiosynth::config {

namespace {

struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};
using Fields = std::vector<Field>;

int to_int(const std::string& s) {
    const long long v = parse_int(s);
    if (v < INT32_MIN || v > INT32_MAX) throw std::invalid_argument("integer out of range: " + s);
    return static_cast<int>(v);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

template <class Container>
std::string list_text(const Container& c) {
    std::string s;
    for (std::size_t i = 0; i < c.size(); ++i) s += (i ? ", " : "") + format_double(c[i]);
    return s;
}

template <std::size_t N>
void set_array(std::array<double, N>& out, const std::string& s) {
    const auto items = split_list(s);
    if (items.size() != N) throw std::invalid_argument("expected " + std::to_string(N) + " comma-separated numbers");
    for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(items[i]);
}

Field int_field(std::string key, int& v) {
    return {std::move(key), [&v] { return std::to_string(v); }, [&v](const std::string& s) { v = to_int(s); }};
}
Field u64_field(std::string key, std::uint64_t& v) {
    return {std::move(key), [&v] { return std::to_string(v); }, [&v](const std::string& s) { v = parse_uint64(s); }};
}
Field double_field(std::string key, double& v) {
    return {std::move(key), [&v] { return format_double(v); }, [&v](const std::string& s) { v = parse_double(s); }};
}
Field bool_field(std::string key, bool& v) {
    return {std::move(key), [&v] { return bool_text(v); }, [&v](const std::string& s) { v = parse_bool(s); }};
}
Field string_field(std::string key, std::string& v) {
    return {std::move(key), [&v] { return v; }, [&v](const std::string& s) { v = s; }};
}
template <std::size_t N>
Field array_field(std::string key, std::array<double, N>& v) {
    return {std::move(key), [&v] { return list_text(v); }, [&v](const std::string& s) { set_array(v, s); }};
}

Fields fields(phantom::PhantomParams& p) {
    return {
        double_field("cycle_length", p.cycle_length),
        int_field("num_frames", p.num_frames),
        array_field("lv_volumes", p.lv_volumes),
        array_field("phase_fractions", p.phase_fractions),
        array_field("geometric_scale", p.geometric_scale),
        double_field("myocardial_volume", p.myocardial_volume),
        double_field("rv_ratio", p.rv_ratio),
        double_field("longitudinal_shortening", p.longitudinal_shortening),
        int_field("num_slices", p.num_slices),
        double_field("in_plane_spacing", p.in_plane_spacing),
        {"slice_spacing", [&p] { return p.slice_spacing ? format_double(*p.slice_spacing) : std::string("auto"); },
         [&p](const std::string& s) {
             if (s == "auto")
                 p.slice_spacing.reset();
             else
                 p.slice_spacing = parse_double(s);
         }},
        int_field("grid_size", p.grid_size),
    };
}

Fields fields(data::PipelineConfig& d) {
    return {
        double_field("target_spacing", d.target_spacing),
        int_field("crop_size", d.crop_size),
        {"intensity_mode",
         [&d] { return std::string(d.intensity_mode == data::IntensityMode::minmax ? "minmax" : "percentile"); },
         [&d](const std::string& s) {
             if (s == "percentile")
                 d.intensity_mode = data::IntensityMode::percentile;
             else if (s == "minmax")
                 d.intensity_mode = data::IntensityMode::minmax;
             else
                 throw std::invalid_argument("expected percentile or minmax");
         }},
        double_field("lower_percentile", d.lower_percentile),
        double_field("upper_percentile", d.upper_percentile),
        u64_field("seed", d.seed),
        bool_field("shuffle", d.shuffle),
        double_field("validation_fraction", d.validation_fraction),
        string_field("image_glob", d.image_glob),
        string_field("mask_suffix", d.mask_suffix),
        {"label_map",
         [&d] {
             std::string s;
             for (const auto& [raw, cls] : d.label_map) s += (s.empty() ? "" : ", ") + std::to_string(raw) + ":" + std::to_string(cls);
             return s;
         },
         [&d](const std::string& s) {
             data::LabelMap m;
             for (const auto& item : split_list(s)) {
                 const auto colon = item.find(':');
                 if (colon == std::string::npos) throw std::invalid_argument("expected raw:class pairs");
                 const long long cls = parse_int(item.substr(colon + 1));
                 if (cls < 0 || cls > 255) throw std::invalid_argument("class id out of range in " + item);
                 m[to_int(item.substr(0, colon))] = static_cast<std::uint8_t>(cls);
             }
             d.label_map = std::move(m);
         }},
    };
}

Fields fields(model::ModelConfig& m) {
    return {
        int_field("num_classes", m.num_classes),
        int_field("image_size", m.image_size),
        int_field("base_channels", m.base_channels),
        int_field("min_channels", m.min_channels),
        int_field("num_spade_blocks", m.num_spade_blocks),
        int_field("latent_dim", m.latent_dim),
        bool_field("use_vae", m.use_vae),
        int_field("modulation_hidden_channels", m.modulation_hidden_channels),
        int_field("discriminator_scales", m.discriminator_scales),
        int_field("discriminator_layers", m.discriminator_layers),
        int_field("discriminator_channels", m.discriminator_channels),
        int_field("encoder_channels", m.encoder_channels),
        double_field("leaky_slope", m.leaky_slope),
        double_field("init_gain", m.init_gain),
    };
}

Fields fields(train::TrainConfig& t) {
    return {
        double_field("learning_rate", t.learning_rate),
        double_field("beta1", t.beta1),
        double_field("beta2", t.beta2),
        double_field("adam_eps", t.adam_eps),
        int_field("batch_size", t.batch_size),
        int_field("epochs", t.epochs),
        {"iteration_unit",
         [&t] { return std::string(t.iteration_unit == train::IterationUnit::steps ? "steps" : "epochs"); },
         [&t](const std::string& s) {
             if (s == "epochs")
                 t.iteration_unit = train::IterationUnit::epochs;
             else if (s == "steps")
                 t.iteration_unit = train::IterationUnit::steps;
             else
                 throw std::invalid_argument("expected epochs or steps");
         }},
        u64_field("seed", t.seed),
        double_field("lambda_fm", t.loss_weights.feature_match),
        double_field("lambda_p", t.loss_weights.perceptual),
        double_field("lambda_kl", t.loss_weights.kl),
        int_field("checkpoint_every", t.checkpoint_every),
        double_field("running_momentum", t.running_momentum),
        int_field("log_every", t.log_every),
    };
}

Fields fields(infer::InferenceConfig& c) {
    return {
        {"style", [&c] { return infer::to_string(c.style); },
         [&c](const std::string& s) { c.style = infer::style_from_string(s); }},
        u64_field("seed", c.seed),
        bool_field("per_slice_z", c.per_slice_z),
        bool_field("resample_labels", c.resample_labels),
        double_field("model_spacing", c.model_spacing),
        {"fixed_z", [&c] { return list_text(c.fixed_z); },
         [&c](const std::string& s) {
             c.fixed_z.clear();
             for (const auto& item : split_list(s)) c.fixed_z.push_back(parse_double(item));
         }},
        bool_field("overwrite", c.overwrite),
    };
}

Fields fields(PathsConfig& p) {
    return {
        string_field("data_root", p.data_root),
        string_field("cache_dir", p.cache_dir),
        string_field("output_root", p.output_root),
        string_field("checkpoint", p.checkpoint),
    };
}

const char* const kSections[] = {"phantom", "data", "model", "train", "inference", "paths"};

Fields section(RunConfig& c, const std::string& name) {
    if (name == "phantom") return fields(c.phantom);
    if (name == "data") return fields(c.data);
    if (name == "model") return fields(c.model);
    if (name == "train") return fields(c.train);
    if (name == "inference") return fields(c.inference);
    if (name == "paths") return fields(c.paths);
    throw ConfigError("unknown section [" + name + "]");
}

void assign(Fields& fs, const std::string& section_name, const std::string& key, const std::string& value,
            const std::string& where) {
    for (auto& f : fs)
        if (f.key == key) {
            try {
                f.set(value);
            } catch (const std::exception& e) {
                throw ConfigError(where + ": invalid value for " + section_name + "." + key + ": " + e.what());
            }
            return;
        }
    throw ConfigError(where + ": unknown key '" + key + "' in [" + section_name + "]");
}

std::string write_fields(Fields fs) {
    std::ostringstream os;
    for (const auto& f : fs) os << f.key << " = " << f.get() << '\n';
    return os.str();
}

template <class T>
T read_fields(std::string_view text, const char* section_name) {
    T value{};
    Fields fs = fields(value);
    std::istringstream in{std::string(text)};
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        const std::string where = std::string(section_name) + " text:" + std::to_string(n);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        assign(fs, section_name, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where);
    }
    return value;
}

}  // namespace

RunConfig parse(std::string_view text, const std::string& source) {
    RunConfig c;
    std::istringstream in{std::string(text)};
    std::string line, current;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string where = source + ":" + std::to_string(n);
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(where + ": malformed section header");
            current = trim(t.substr(1, t.size() - 2));
            try {
                section(c, current);
            } catch (const ConfigError& e) {
                throw ConfigError(where + ": " + e.what());
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (current.empty()) throw ConfigError(where + ": key '" + key + "' outside of any section");
        Fields fs = section(c, current);
        assign(fs, current, key, trim(t.substr(eq + 1)), where);
    }
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse(read_text_file(path), path.string());
}

void apply_override(RunConfig& c, std::string_view assignment) {
    const std::string a(assignment);
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("override '" + a + "': expected section.key=value");
    const std::string sec = trim(a.substr(0, dot)), key = trim(a.substr(dot + 1, eq - dot - 1));
    Fields fs;
    try {
        fs = section(c, sec);
    } catch (const ConfigError& e) {
        throw ConfigError("override '" + a + "': " + e.what());
    }
    assign(fs, sec, key, trim(a.substr(eq + 1)), "override");
}

void apply_environment(RunConfig& c, const std::function<const char*(const char*)>& getenv) {
    if (const char* v = getenv(kCacheDirEnv); v && *v) c.paths.cache_dir = v;
    if (const char* v = getenv(kOutputRootEnv); v && *v) c.paths.output_root = v;
}

std::string to_ini(const RunConfig& config) {
    RunConfig c = config;
    std::ostringstream os;
    bool first = true;
    for (const char* name : kSections) {
        os << (first ? "" : "\n") << '[' << name << "]\n" << write_fields(section(c, name));
        first = false;
    }
    return os.str();
}

void validate(const RunConfig& c) {
    if (const auto v = phantom::validate_params(c.phantom); !v.empty())
        throw ConfigError("invalid [phantom]: " + v.front().message());
    try {
        model::validate(c.model);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid [model]: ") + e.what());
    }
    try {
        train::validate(c.train);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid [train]: ") + e.what());
    }
    const auto& d = c.data;
    if (!(d.target_spacing > 0)) throw ConfigError("invalid [data]: target_spacing must be > 0");
    if (d.crop_size < 1) throw ConfigError("invalid [data]: crop_size must be >= 1");
    if (!(d.lower_percentile >= 0 && d.lower_percentile < d.upper_percentile && d.upper_percentile <= 100))
        throw ConfigError("invalid [data]: need 0 <= lower_percentile < upper_percentile <= 100");
    if (!(d.validation_fraction >= 0 && d.validation_fraction < 1))
        throw ConfigError("invalid [data]: validation_fraction must be in [0, 1)");
    if (!(c.inference.model_spacing > 0)) throw ConfigError("invalid [inference]: model_spacing must be > 0");
    if (c.inference.style == infer::StyleSource::fixed &&
        c.inference.fixed_z.size() != static_cast<std::size_t>(c.model.latent_dim))
        throw ConfigError("invalid [inference]: fixed_z needs latent_dim values");
}

std::string to_text(const model::ModelConfig& c) {
    auto copy = c;
    return write_fields(fields(copy));
}

std::string to_text(const train::TrainConfig& c) {
    auto copy = c;
    return write_fields(fields(copy));
}

model::ModelConfig model_config_from_text(std::string_view text) { return read_fields<model::ModelConfig>(text, "model"); }
train::TrainConfig train_config_from_text(std::string_view text) { return read_fields<train::TrainConfig>(text, "train"); }

}  // namespace cardiosynth::config
