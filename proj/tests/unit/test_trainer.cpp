// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "uniparser/error.hpp"
#include "uniparser/synthgen.hpp"
#include "uniparser/trainer.hpp"

using namespace uniparser;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.backbone = {{8, 8, 8}, 8, 2};
    cfg.hp.grid_size = 8;
    cfg.hp.head_channels = 8;
    cfg.hp.head_depth = 2;
    cfg.n_categories = 3;
    cfg.seed = 9;
    return cfg;
}

std::vector<ParsingSample> tiny_dataset(int n = 3) {
    SynthSpec spec;
    spec.height = spec.width = 32;
    spec.n_categories = 3;
    spec.min_instance_px = 16;
    spec.seed = 4;
    return generate_dataset(spec, n);
}

std::vector<Tensor> snapshot(const Model& m) {
    std::vector<Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.var.value());
    return out;
}

ParsingSample two_boxes() {
    ParsingSample s;
    s.image = Tensor({3, 64, 64}, 0.2);
    s.instance_map = LabelMap(64, 64);
    s.category_map = LabelMap(64, 64);
    for (int y = 8; y < 24; ++y)
        for (int x = 8; x < 24; ++x) s.instance_map(y, x) = 1, s.category_map(y, x) = y < 16 ? 1 : 2;
    for (int y = 40; y < 56; ++y)
        for (int x = 36; x < 60; ++x) s.instance_map(y, x) = 2, s.category_map(y, x) = 3;
    return s;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.base_lr_per_sample = 5e-4;
    cfg.warmup_iters = 100;
    cfg.total_steps = 1200;
    const double full = 2e-3;
    CHECK(std::abs(learning_rate(cfg, 0) - full / 100) <= 1e-12);
    for (int s = 0; s < 100; ++s) {
        CHECK(std::abs(learning_rate(cfg, s) - full * (0.01 + 0.99 * s / 100.0)) <= 1e-12);
        CHECK(learning_rate(cfg, s + 1) > learning_rate(cfg, s));
    }
    // Linear: equal increments.
    const double inc = learning_rate(cfg, 1) - learning_rate(cfg, 0);
    for (int s = 1; s < 100; ++s) CHECK(std::abs(learning_rate(cfg, s + 1) - learning_rate(cfg, s) - inc) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 100) - full) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 899) - full) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 900) - full * 0.1) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 1099) - full * 0.1) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 1100) - full * 0.01) <= 1e-12);
    CHECK(std::abs(learning_rate(cfg, 1199) - full * 0.01) <= 1e-12);
    cfg.warmup_iters = 0;
    CHECK(learning_rate(cfg, 0) == full);
}

TEST_CASE("train configuration is validated") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = {};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = {};
    cfg.lr_drops = {{1.5, 0.1}};
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = {};
    cfg.total_steps = -1;
    CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("zero steps leave the model bit-identical") {
    Model m(tiny_model());
    const auto before = snapshot(m);
    TrainConfig cfg;
    cfg.total_steps = 0;
    CHECK(train(tiny_dataset(), m, cfg).empty());
    CHECK(snapshot(m) == before);
}

TEST_CASE("a zero learning rate leaves the model unchanged") {
    Model m(tiny_model());
    const auto before = snapshot(m);
    TrainConfig cfg;
    cfg.total_steps = 2;
    cfg.batch_size = 2;
    cfg.base_lr_per_sample = 0.0;
    auto history = train(tiny_dataset(), m, cfg);
    CHECK(history.size() == 2);
    CHECK(snapshot(m) == before);
    for (const auto& r : history) CHECK(r.lr == 0.0);
}

TEST_CASE("an empty dataset is rejected") {
    Model m(tiny_model());
    TrainConfig cfg;
    cfg.total_steps = 1;
    CHECK_THROWS_AS(train({}, m, cfg), Error);
}

TEST_CASE("training is reproducible and the loss report adds up") {
    TrainConfig cfg;
    cfg.total_steps = 6;
    cfg.batch_size = 2;
    cfg.warmup_iters = 2;
    cfg.seed = 5;
    const auto data = tiny_dataset();
    Model a(tiny_model()), b(tiny_model());
    const auto initial = snapshot(a);
    const auto& hp = a.config().hp;
    int seen = 0;
    auto ha = train(data, a, cfg, [&](const StepRecord& r) {
        const auto& l = r.loss;
        CHECK(std::abs(l.l_total - (l.l_center + hp.lambda_aux * l.l_aux + hp.lambda_par * l.l_par +
                                    hp.lambda_metric * l.l_metric)) <= 1e-6);
        CHECK(r.step == seen++);
        CHECK(r.lr == learning_rate(cfg, r.step));
    });
    auto hb = train(data, b, cfg);
    CHECK(seen == 6);
    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i].loss.l_total == hb[i].loss.l_total);
    CHECK(snapshot(a) == snapshot(b));
    CHECK_FALSE(snapshot(a) == initial);
}

TEST_CASE("non-finite parameters abort training with the step index") {
    Model m(tiny_model());
    m.parameters().front().var.mutable_value()[0] = std::nan("");
    TrainConfig cfg;
    cfg.total_steps = 3;
    cfg.batch_size = 1;
    try {
        train(tiny_dataset(), m, cfg);
        FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteLoss);
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("kernel to instance assignment") {
    auto s = two_boxes();
    auto cfg = tiny_model();
    cfg.hp.grid_size = 16;
    auto t = build_targets(s, cfg);
    REQUIRE(t.regions.size() == 2);
    const int g = 16;

    SUBCASE("the barycentre cell maps to its instance") {
        const auto& b = t.instances[0].barycenter;
        GridCoord cell{static_cast<int>(b.row * g / 64), static_cast<int>(b.col * g / 64)};
        const GridCoord cells[] = {cell};
        CHECK(assign_kernels_to_instances(cells, t.regions, t.instances, g, 64, 64) == std::vector<int>{1});
    }
    SUBCASE("cells of both regions partition") {
        std::vector<GridCoord> cells;
        std::vector<int> expect;
        for (int m = 0; m < 2; ++m)
            for (auto c : t.regions[m]) cells.push_back(c), expect.push_back(m + 1);
        CHECK(assign_kernels_to_instances(cells, t.regions, t.instances, g, 64, 64) == expect);
    }
    SUBCASE("a cell next to a region joins it, three cells away it is excluded") {
        GridCoord edge = t.regions[1].front();
        for (auto c : t.regions[1]) edge = std::max(edge, c);
        const GridCoord cells[] = {{edge.row + 1, edge.col}, {edge.row + 3, edge.col}, {0, 15}};
        CHECK(assign_kernels_to_instances(cells, t.regions, t.instances, g, 64, 64) == std::vector<int>{2, -1, -1});
    }
    SUBCASE("overlapping regions go to the nearest barycentre") {
        std::vector<std::vector<GridCoord>> regions{{{5, 5}, {5, 6}}, {{5, 6}, {5, 7}}};
        std::vector<InstanceGT> inst(2);
        inst[0].instance_id = 1;
        inst[0].barycenter = {21.5, 21.5};
        inst[1].instance_id = 2;
        inst[1].barycenter = {21.5, 28.5};
        const GridCoord cells[] = {{5, 6}};
        // Cell (5, 6) is centred at (22, 26); the pixel centres of the barycentres are at columns 22 and 29.
        CHECK(assign_kernels_to_instances(cells, regions, inst, g, 64, 64) == std::vector<int>{2});
    }
}

TEST_CASE("targets at feature resolution") {
    auto s = two_boxes();
    auto cfg = tiny_model();
    cfg.n_categories = 4;
    auto t = build_targets(s, cfg);
    CHECK(t.feat_h == 32);
    CHECK(t.feat_w == 32);
    REQUIRE(t.instance_masks.size() == 2);
    CHECK(count(t.instance_masks[0]) == 64);
    CHECK(t.instance_masks[1].height == 32);
    REQUIRE(t.category_masks.size() == 4);
    CHECK(t.category_masks[0].has_value());
    CHECK(t.category_masks[2].has_value());
    CHECK_FALSE(t.category_masks[3].has_value());
    CHECK(t.part_masks[0][0].has_value());
    CHECK_FALSE(t.part_masks[0][2].has_value());
    CHECK(t.part_masks[1][2].has_value());
    auto cells = training_cells(t, Tensor({1, cfg.hp.grid_size, cfg.hp.grid_size}, 0.0), cfg.hp.theta_c);
    std::size_t n = 0;
    for (const auto& r : t.regions) n += r.size();
    CHECK(cells.size() == n);
    auto all = training_cells(t, Tensor({1, cfg.hp.grid_size, cfg.hp.grid_size}, 0.5), cfg.hp.theta_c);
    CHECK(all.size() == static_cast<std::size_t>(cfg.hp.grid_size * cfg.hp.grid_size));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    auto cfg = tiny_model();
    cfg.hp.similarity_space = SimilaritySpace::InnerSigmoidAfter;
    cfg.hp.fusion_mode = FusionMode::Multi;
    cfg.hp.lambda_metric = 0.25;
    Model m(cfg);
    TrainConfig tc;
    tc.total_steps = 2;
    tc.batch_size = 1;
    train(tiny_dataset(), m, tc);
    auto dir = fs::temp_directory_path() / "uniparser_test_ckpt";
    fs::remove_all(dir);
    save_checkpoint(m, dir);
    auto back = load_checkpoint(dir);
    CHECK(snapshot(back) == snapshot(m));
    REQUIRE(back.parameters().size() == m.parameters().size());
    for (std::size_t i = 0; i < m.parameters().size(); ++i)
        CHECK(back.parameters()[i].name == m.parameters()[i].name);
    CHECK(back.config().hp.similarity_space == cfg.hp.similarity_space);
    CHECK(back.config().hp.fusion_mode == cfg.hp.fusion_mode);
    CHECK(back.config().hp.lambda_metric == 0.25);
    CHECK(back.config().backbone.stage_channels == cfg.backbone.stage_channels);

    auto dir2 = fs::temp_directory_path() / "uniparser_test_ckpt2";
    fs::remove_all(dir2);
    save_checkpoint(back, dir2);
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream a(e.path(), std::ios::binary), b(dir2 / e.path().filename(), std::ios::binary);
        CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
    }

    fs::remove(dir / "param_000.bin");
    CHECK_THROWS_AS(load_checkpoint(dir), Error);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("history csv") {
    std::vector<StepRecord> h{{0, {1.5, 0.25, 0.125, 2.0, 3.0}, 0.001}, {1, {1.0, 0.0, 0.0, 0.0, 1.0}, 0.5}};
    auto path = fs::temp_directory_path() / "uniparser_test_history.csv";
    write_history_csv(path, h);
    std::ifstream f(path);
    std::string header, row0, row1;
    std::getline(f, header);
    std::getline(f, row0);
    std::getline(f, row1);
    CHECK(header == "step,l_center,l_aux,l_par,l_metric,l_total,lr");
    CHECK(row0 == "0,1.5,0.25,0.125,2,3,0.001");
    CHECK(row1 == "1,1,0,0,0,1,0.5");
    fs::remove(path);
}
