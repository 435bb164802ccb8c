#include <fstream>
#include <map>

#include "cardiosynth/config.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cardiosynth;
using namespace cardiosynth::config;

TEST_SUITE("config") {
    TEST_CASE("empty file gives the defaults") {
        const RunConfig c = parse("");
        CHECK(c.phantom.num_frames == 25);
        CHECK(c.phantom.num_slices == 18);
        CHECK(c.data.target_spacing == 1.3);
        CHECK(c.data.crop_size == 128);
        CHECK(c.model.image_size == 128);
        CHECK(c.train.batch_size == 32);
        CHECK(c.train.epochs == 100);
        CHECK(c.train.loss_weights.feature_match == 10.0);
        CHECK(c.train.loss_weights.kl == 0.05);
        CHECK_NOTHROW(validate(c));
    }

    TEST_CASE("sections and values are applied") {
        const RunConfig c = parse(
            "# run\n"
            "[model]\n"
            "image_size = 64\n"
            "use_vae = yes\n"
            "\n"
            "[train]\n"
            "learning_rate = 0.001  \n"
            "iteration_unit = steps\n"
            "[phantom]\n"
            "slice_spacing = 8\n"
            "lv_volumes = 150, 120, 80, 90, 140\n"
            "[data]\n"
            "label_map = 0:0, 1:1, 2:2, 3:3, 7:0\n"
            "[inference]\n"
            "style = fixed\n"
            "[paths]\n"
            "cache_dir = /tmp/x y\n");
        CHECK(c.model.image_size == 64);
        CHECK(c.model.use_vae);
        CHECK(c.train.learning_rate == 0.001);
        CHECK(c.train.iteration_unit == train::IterationUnit::steps);
        REQUIRE(c.phantom.slice_spacing.has_value());
        CHECK(*c.phantom.slice_spacing == 8.0);
        CHECK(c.phantom.lv_volumes[2] == 80.0);
        CHECK(c.data.label_map.at(7) == 0);
        CHECK(c.inference.style == infer::StyleSource::fixed);
        CHECK(c.paths.cache_dir == "/tmp/x y");
    }

    TEST_CASE("unknown key names the key, section and line") {
        CHECK_THROWS_WITH_AS(parse("[model]\nimage_size = 64\nimage_sise = 64\n", "run.ini"),
                             "run.ini:3: unknown key 'image_sise' in [model]", ConfigError);
        CHECK_THROWS_WITH_AS(parse("[modle]\n", "run.ini"), doctest::Contains("run.ini:1: unknown section [modle]"),
                             ConfigError);
        CHECK_THROWS_WITH_AS(parse("image_size = 3\n", "run.ini"), doctest::Contains("run.ini:1:"), ConfigError);
        CHECK_THROWS_WITH_AS(parse("[train]\nbatch_size = many\n", "run.ini"),
                             doctest::Contains("run.ini:2: invalid value for train.batch_size"), ConfigError);
    }

    TEST_CASE("to_ini round trips every field") {
        RunConfig c;
        c.phantom.slice_spacing = 7.25;
        c.phantom.rv_ratio = 0.8;
        c.data.intensity_mode = data::IntensityMode::minmax;
        c.data.label_map = {{0, 0}, {1, 3}, {2, 2}, {3, 1}};
        c.model.latent_dim = 3;
        c.model.use_vae = true;
        c.train.seed = 18446744073709551615ull;
        c.train.learning_rate = 1.0 / 3.0;
        c.inference.style = infer::StyleSource::encode;
        c.inference.fixed_z = {0.1, -2.0, 1e-12};
        c.paths.checkpoint = "runs/a/latest.ckpt";
        const RunConfig back = parse(to_ini(c));
        CHECK(back.phantom == c.phantom);
        CHECK(back.data == c.data);
        CHECK(back.model == c.model);
        CHECK(back.train == c.train);
        CHECK(back.inference == c.inference);
        CHECK(back.paths == c.paths);
        CHECK(to_ini(back) == to_ini(c));
    }

    TEST_CASE("overrides use section.key=value") {
        RunConfig c;
        apply_override(c, "train.batch_size=4");
        apply_override(c, "model.use_vae = true");
        CHECK(c.train.batch_size == 4);
        CHECK(c.model.use_vae);
        CHECK_THROWS_WITH_AS(apply_override(c, "train.batchsize=4"), doctest::Contains("unknown key 'batchsize' in [train]"),
                             ConfigError);
        CHECK_THROWS_AS(apply_override(c, "batch_size=4"), ConfigError);
        CHECK_THROWS_AS(apply_override(c, "train.batch_size"), ConfigError);
    }

    TEST_CASE("environment sits between file and flags") {
        RunConfig c = parse("[paths]\ncache_dir = from_file\noutput_root = from_file\n");
        const std::map<std::string, std::string> env{{kCacheDirEnv, "from_env"}};
        apply_environment(c, [&](const char* n) -> const char* {
            auto it = env.find(n);
            return it == env.end() ? nullptr : it->second.c_str();
        });
        CHECK(c.paths.cache_dir == "from_env");
        CHECK(c.paths.output_root == "from_file");
        apply_override(c, "paths.cache_dir=from_flag");
        CHECK(c.paths.cache_dir == "from_flag");
    }

    TEST_CASE("validation rejects bad combinations") {
        RunConfig c;
        c.train.epochs = 0;
        CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("epochs"), ConfigError);
        c = RunConfig{};
        c.model.image_size = 100;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = RunConfig{};
        c.inference.fixed_z = {1.0, 2.0};
        c.inference.style = infer::StyleSource::fixed;
        CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("fixed_z"), ConfigError);
        c = RunConfig{};
        c.phantom.num_frames = 0;
        CHECK_THROWS_AS(validate(c), ConfigError);
    }

    TEST_CASE("load reads a file") {
        testing_support::TempDir dir("config");
        std::ofstream(dir / "a.ini") << "[train]\nepochs = 3\n";
        CHECK(load(dir / "a.ini").train.epochs == 3);
        CHECK_THROWS_WITH_AS(load(dir / "missing.ini"), doctest::Contains("not found"), ConfigError);
    }

    TEST_CASE("checkpoint config text") {
        model::ModelConfig m;
        m.image_size = 32;
        m.num_spade_blocks = 3;
        CHECK(model_config_from_text(to_text(m)) == m);
        train::TrainConfig t;
        t.loss_weights.perceptual = 2.5;
        CHECK(train_config_from_text(to_text(t)) == t);
    }
}
