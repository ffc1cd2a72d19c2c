// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "uniparser/cli.hpp"
#include "uniparser/config.hpp"
#include "uniparser/error.hpp"
#include "uniparser/inference.hpp"
#include "uniparser/synthgen.hpp"
#include "uniparser/trainer.hpp"

using namespace uniparser;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([synth]
height = 32
width = 32
n_categories = 3
min_instance_px = 16
seed = 4
count = 3

[backbone]
stage_channels = 8, 8, 8
neck_channels = 8
out_stride = 2

[model]
grid_size = 8
head_channels = 8
head_depth = 2
seed = 9

[train]
batch_size = 2
base_lr_per_sample = 2.5e-3
warmup_iters = 2
total_steps = %STEPS%
seed = 5
grad_check_mode = true
log_every = 1

[paths]
dataset = data
out = run

[ablate]
variants = default, no_metric
val_count = 4
)";

struct Workspace {
    fs::path root;

    explicit Workspace(const std::string& name, int steps = 0) {
        root = fs::temp_directory_path() / ("uniparser_cli_" + name);
        fs::remove_all(root);
        fs::create_directories(root);
        write_config("config.ini", steps);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path write_config(const std::string& file, int steps, const std::string& extra = "") const {
        std::string text = kTinyConfig;
        text.replace(text.find("%STEPS%"), 7, std::to_string(steps));
        std::ofstream(root / file) << text << extra;
        return root / file;
    }
    fs::path config() const { return root / "config.ini"; }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::ifstream f(p);
    for (std::string line; std::getline(f, line);) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

std::vector<std::string> csv_rows(const fs::path& p) {
    std::vector<std::string> rows;
    std::ifstream f(p);
    for (std::string line; std::getline(f, line);) rows.push_back(line);
    return rows;
}

double csv_total(const std::string& row) {
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    return std::stod(cells.at(5));
}

}  // namespace

TEST_CASE("config parsing") {
    auto cfg = parse_config(
        "[synth]\nheight = 48\nwidth = 48\nn_categories = 5\n[train]\nlr_drops = 0.5:0.2, 0.9\n"
        "[model]\nsimilarity_space = inner_sigmoid_after\nfusion_mode = multi\n[paths]\ndataset = d\nout = /abs/o\n",
        "/base");
    CHECK(cfg.synth.height == 48);
    CHECK(cfg.model.n_categories == 5);
    CHECK(cfg.model.hp.similarity_space == SimilaritySpace::InnerSigmoidAfter);
    CHECK(cfg.model.hp.fusion_mode == FusionMode::Multi);
    REQUIRE(cfg.train.lr_drops.size() == 2);
    CHECK(cfg.train.lr_drops[0].fraction == 0.5);
    CHECK(cfg.train.lr_drops[0].factor == 0.2);
    CHECK(cfg.train.lr_drops[1].factor == 0.1);
    CHECK(cfg.dataset_dir == fs::path("/base/d"));
    CHECK(cfg.out_dir == fs::path("/abs/o"));

    auto defaults = parse_config("", "/b");
    CHECK(defaults.model.hp.grid_size == 40);
    CHECK(defaults.train.base_lr_per_sample == 6.25e-4);
    CHECK(defaults.model.n_categories == defaults.synth.n_categories);
    CHECK(parse_config("[synth]\nn_categories = 6\n[model]\nn_categories = 7\n", "/b").model.n_categories == 7);

    auto o = parse_config("", "/b");
    override_seed(o, 42);
    CHECK(o.synth.seed == 42);
    CHECK(o.model.seed == 42);
    CHECK(o.train.seed == 42);
}

TEST_CASE("config errors are BadConfig") {
    const char* bad[] = {
        "[synth]\nheigth = 4\n",        "[nosuch]\nx = 1\n",          "[synth]\nheight = abc\n",
        "[synth]\nheight = 64px\n",     "[model]\nfusion_mode = sum\n", "[synth]\noverlap_allowed = maybe\n",
        "[train]\nmomentum = 1.5\n",    "[ablate]\nvariants = default, bogus\n", "[synth\nheight = 4\n",
        "[model]\ngrid_size = 0\n",     "[train]\nlr_drops = x:0.1\n",
    };
    for (const char* text : bad) {
        try {
            parse_config(text, "/b");
            FAIL("accepted: " << text);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::BadConfig);
        }
    }
    CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), Error);
}

TEST_CASE("ablation variants") {
    ModelConfig base;
    CHECK(variant_model_config(base, "no_metric").hp.lambda_metric == 0.0);
    CHECK(variant_model_config(base, "inner").hp.similarity_space == SimilaritySpace::Inner);
    CHECK(variant_model_config(base, "inner_sigmoid_before").hp.similarity_space == SimilaritySpace::InnerSigmoidBefore);
    CHECK(variant_model_config(base, "convs").hp.fusion_mode == FusionMode::Convs);
    CHECK_FALSE(variant_model_config(base, "no_aux").hp.aux_instance);
    CHECK(variant_model_config(base, "aux_instance_only").hp.aux_instance);
    CHECK_FALSE(variant_model_config(base, "aux_instance_only").hp.aux_category);
    CHECK(variant_model_config(base, "default").hp.lambda_metric == base.hp.lambda_metric);
    CHECK_THROWS_AS(variant_model_config(base, "everything"), Error);
}

TEST_CASE("synth command") {
    Workspace ws("synth");
    std::ostringstream log;
    CHECK(cli::cmd_synth(ws.config(), std::nullopt, std::nullopt, log) == cli::kExitOk);
    CHECK(fs::exists(ws.root / "data" / "manifest.txt"));
    CHECK(log.str().find("validated 3 samples") != std::string::npos);
    CHECK(read_dataset(ws.root / "data").size() == 3);

    // Same seed, same bytes.
    CHECK(cli::cmd_synth(ws.config(), ws.root / "again", std::nullopt, log) == cli::kExitOk);
    CHECK(slurp(ws.root / "data" / "images" / "sample_2.png") == slurp(ws.root / "again" / "images" / "sample_2.png"));
    CHECK(cli::cmd_synth(ws.config(), ws.root / "other", 77, log) == cli::kExitOk);
    CHECK(read_manifest(ws.root / "other").spec->seed == 77);

    std::ofstream(ws.root / "blocker") << "file";
    CHECK(cli::cmd_synth(ws.config(), ws.root / "blocker" / "sub", std::nullopt, log) == cli::kExitConfig);
    auto broken = ws.write_config("broken.ini", 0, "[train]\nbatch_size = 0\n");
    CHECK(cli::cmd_synth(broken, std::nullopt, std::nullopt, log) == cli::kExitConfig);
    CHECK(cli::cmd_synth(ws.root / "missing.ini", std::nullopt, std::nullopt, log) == cli::kExitConfig);
}

TEST_CASE("train command") {
    Workspace ws("train");
    std::ostringstream log;
    CHECK(cli::cmd_train(ws.config(), std::nullopt, std::nullopt, std::nullopt, log) == cli::kExitConfig);
    REQUIRE(cli::cmd_synth(ws.config(), std::nullopt, std::nullopt, log) == cli::kExitOk);

    SUBCASE("zero steps writes the initial checkpoint") {
        CHECK(cli::cmd_train(ws.config(), std::nullopt, std::nullopt, std::nullopt, log) == cli::kExitOk);
        CHECK(fs::exists(ws.root / "run" / "checkpoint" / "manifest.txt"));
        CHECK(csv_rows(ws.root / "run" / "history.csv").size() == 1);
        Model fresh(load_config(ws.config()).model);
        auto loaded = load_checkpoint(ws.root / "run" / "checkpoint");
        for (std::size_t i = 0; i < fresh.parameters().size(); ++i)
            CHECK(loaded.parameters()[i].var.value() == fresh.parameters()[i].var.value());
    }
    SUBCASE("identical runs give identical bytes and the loss falls") {
        auto cfg = ws.write_config("steps.ini", 40);
        REQUIRE(cli::cmd_train(cfg, ws.root / "a", std::nullopt, std::nullopt, log) == cli::kExitOk);
        REQUIRE(cli::cmd_train(cfg, ws.root / "b", std::nullopt, std::nullopt, log) == cli::kExitOk);
        for (const auto& e : fs::directory_iterator(ws.root / "a" / "checkpoint"))
            CHECK(slurp(e.path()) == slurp(ws.root / "b" / "checkpoint" / e.path().filename()));
        CHECK(slurp(ws.root / "a" / "history.csv") == slurp(ws.root / "b" / "history.csv"));
        auto rows = csv_rows(ws.root / "a" / "history.csv");
        REQUIRE(rows.size() == 41);
        CHECK(csv_total(rows.back()) < csv_total(rows[1]));
    }
    SUBCASE("missing dataset") {
        CHECK(cli::cmd_train(ws.config(), std::nullopt, ws.root / "nowhere", std::nullopt, log) == cli::kExitConfig);
    }
}

TEST_CASE("eval command") {
    Workspace ws("eval", 3);
    std::ostringstream log;
    REQUIRE(cli::cmd_synth(ws.config(), std::nullopt, std::nullopt, log) == cli::kExitOk);
    const auto data = ws.root / "data";

    CHECK(cli::cmd_eval(std::nullopt, data, ws.root / "gt.txt", "gt", log) == cli::kExitOk);
    auto gt = read_kv(ws.root / "gt.txt.kv");
    CHECK(gt.at("ap_p_50") == "1");
    CHECK(gt.at("ap_p_vol") == "1");
    CHECK(gt.at("pcp_50") == "1");

    CHECK(cli::cmd_eval(std::nullopt, data, ws.root / "empty.txt", "empty", log) == cli::kExitOk);
    auto empty = read_kv(ws.root / "empty.txt.kv");
    CHECK(empty.at("ap_p_50") == "0");
    CHECK(empty.at("num_predictions") == "0");

    REQUIRE(cli::cmd_train(ws.config(), std::nullopt, std::nullopt, std::nullopt, log) == cli::kExitOk);
    const auto ckpt = ws.root / "run" / "checkpoint";
    CHECK(cli::cmd_eval(ckpt, data, ws.root / "model.txt", "model", log) == cli::kExitOk);
    auto kv = read_kv(ws.root / "model.txt.kv");
    auto model = load_checkpoint(ckpt);
    std::vector<ImageEval> images;
    for (const auto& s : read_dataset(data)) images.push_back(make_image_eval(predict(model, s.image), s));
    auto expect = cli::eval_kv(evaluate(images));
    for (const auto& [k, v] : expect) CHECK(kv.at(k) == v);
    CHECK(kv.count("category_offdiag") == 1);

    CHECK(cli::cmd_eval(std::nullopt, data, ws.root / "x.txt", "model", log) == cli::kExitConfig);
    CHECK(cli::cmd_eval(ckpt, data, ws.root / "x.txt", "best", log) == cli::kExitConfig);
    CHECK(cli::cmd_eval(ckpt, ws.root / "nowhere", ws.root / "x.txt", "model", log) == cli::kExitConfig);
}

TEST_CASE("render command") {
    Workspace ws("render");
    std::ostringstream log;
    REQUIRE(cli::cmd_synth(ws.config(), std::nullopt, std::nullopt, log) == cli::kExitOk);
    REQUIRE(cli::cmd_train(ws.config(), std::nullopt, std::nullopt, std::nullopt, log) == cli::kExitOk);
    const auto img = ws.root / "data" / "images" / "sample_0.png";
    const auto ckpt = ws.root / "run" / "checkpoint";
    CHECK(cli::cmd_render(ckpt, img, ws.root / "o1.png", log) == cli::kExitOk);
    CHECK(cli::cmd_render(ckpt, img, ws.root / "o2.png", log) == cli::kExitOk);
    CHECK(slurp(ws.root / "o1.png") == slurp(ws.root / "o2.png"));
    // The untrained model predicts nothing, so the overlay is the input.
    CHECK(read_png_rgb(ws.root / "o1.png") == read_png_rgb(img));
    CHECK(cli::cmd_render(ws.root / "nowhere", img, ws.root / "o3.png", log) != cli::kExitOk);
}

TEST_CASE("ablate command") {
    Workspace ws("ablate", 2);
    std::ostringstream log;
    REQUIRE(cli::cmd_synth(ws.config(), std::nullopt, std::nullopt, log) == cli::kExitOk);

    CHECK(cli::cmd_ablate(ws.config(), false, std::nullopt, std::nullopt, log) == cli::kExitOk);
    auto table = slurp(ws.root / "run" / "ablate" / "table.txt");
    CHECK(table.find("w/ metric loss + Matrix-NMS") != std::string::npos);
    CHECK(table.find("n/a") != std::string::npos);

    CHECK(cli::cmd_ablate(ws.config(), true, std::nullopt, std::nullopt, log) == cli::kExitOk);
    CHECK(fs::exists(ws.root / "run" / "ablate" / "default" / "checkpoint" / "manifest.txt"));
    CHECK(fs::exists(ws.root / "run" / "ablate" / "no_metric" / "checkpoint" / "manifest.txt"));
    auto kv = read_kv(ws.root / "run" / "ablate" / "results.kv");
    CHECK(kv.count("nms_delta_ap_p_50") == 1);
    CHECK(kv.count("default.category_offdiag") == 1);
    CHECK(kv.count("no_metric.category_offdiag") == 1);
    CHECK(kv.count("default+nms.ap_p_50") == 1);
    table = slurp(ws.root / "run" / "ablate" / "table.txt");
    for (const char* row : {"w/o metric loss", "instance only", "inner, sigmoid before", "convs", "index"})
        CHECK(table.find(row) != std::string::npos);

    CHECK(cli::cmd_ablate(ws.config(), false, std::string("nonsense"), std::nullopt, log) == cli::kExitConfig);
}

TEST_CASE("argument parsing") {
    auto call = [](std::vector<std::string> args) {
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli::run(static_cast<int>(argv.size()), argv.data());
    };
    CHECK(call({"uniparser"}) == cli::kExitConfig);
    CHECK(call({"uniparser", "synth"}) == cli::kExitConfig);
    CHECK(call({"uniparser", "train", "--config", "/nonexistent.ini"}) == cli::kExitConfig);
    CHECK(call({"uniparser", "--help"}) == cli::kExitOk);
}

TEST_CASE("shipped configs parse") {
    for (const char* name : {"fixture.ini", "default.ini"}) {
        CAPTURE(name);
        auto cfg = load_config(fs::path(UNIPARSER_CONFIG_DIR) / name);
        CHECK_NOTHROW(validate(cfg.model));
        CHECK(cfg.model.n_categories == cfg.synth.n_categories);
    }
    auto fixture = load_config(fs::path(UNIPARSER_CONFIG_DIR) / "fixture.ini");
    CHECK(fixture.synth.seed == 7);
    CHECK(fixture.synth_count == 8);
    CHECK(fixture.train.total_steps <= 2000);
}
