#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cardiosynth/data_pipeline.hpp"
#include "cardiosynth/inference.hpp"
#include "cardiosynth/model.hpp"
#include "cardiosynth/phantom.hpp"
#include "cardiosynth/training.hpp"

// One INI-style run configuration:
//
//   # comment
//   [section]
//   key = value
//
// Sections: phantom, data, model, train, inference, paths. Every key has a
// default; unknown sections and keys are errors.
namespace cardiosynth::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PathsConfig {
    std::string data_root;
    std::string cache_dir;
    std::string output_root;
    std::string checkpoint;

    friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct RunConfig {
    phantom::PhantomParams phantom;
    data::PipelineConfig data;
    model::ModelConfig model;
    train::TrainConfig train;
    infer::InferenceConfig inference;
    PathsConfig paths;
};

inline constexpr const char* kCacheDirEnv = "CARDIOSYNTH_CACHE_DIR";
inline constexpr const char* kOutputRootEnv = "CARDIOSYNTH_OUTPUT_ROOT";

/// `source` prefixes error messages (`source:line: ...`).
RunConfig parse(std::string_view text, const std::string& source = "config");
RunConfig load(const std::filesystem::path& path);

/// `section.key=value`; same validation as the file parser.
void apply_override(RunConfig& config, std::string_view assignment);
/// Cache and output roots from the environment. `getenv` is injectable for tests.
void apply_environment(RunConfig& config,
                       const std::function<const char*(const char*)>& getenv = [](const char* n) { return std::getenv(n); });

/// Every section and key with its current value; parse(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);

/// Validates every sub-config; throws ConfigError with the first problem.
void validate(const RunConfig& config);

// Single-section text (`key = value` lines) used inside checkpoints.
std::string to_text(const model::ModelConfig& c);
std::string to_text(const train::TrainConfig& c);
model::ModelConfig model_config_from_text(std::string_view text);
train::TrainConfig train_config_from_text(std::string_view text);

}  // namespace cardiosynth::config
