// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "uniparser/error.hpp"

namespace uniparser {

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw Error(ErrorCode::BadConfig, "batch_size must be >= 1");
    if (cfg.base_lr_per_sample < 0) throw Error(ErrorCode::BadConfig, "base_lr_per_sample must be >= 0");
    if (cfg.momentum < 0 || cfg.momentum >= 1) throw Error(ErrorCode::BadConfig, "momentum must be in [0, 1)");
    if (cfg.warmup_iters < 0) throw Error(ErrorCode::BadConfig, "warmup_iters must be >= 0");
    if (cfg.total_steps < 0) throw Error(ErrorCode::BadConfig, "total_steps must be >= 0");
    for (const auto& d : cfg.lr_drops) {
        if (d.fraction < 0 || d.fraction > 1 || d.factor <= 0) {
            throw Error(ErrorCode::BadConfig, "lr drops need a fraction in [0, 1] and a positive factor");
        }
    }
}

double learning_rate(const TrainConfig& cfg, int step) {
    const double full = cfg.base_lr_per_sample * cfg.batch_size;
    double lr = full;
    if (step < cfg.warmup_iters) lr = full * (0.01 + 0.99 * static_cast<double>(step) / cfg.warmup_iters);
    for (const auto& d : cfg.lr_drops) {
        if (step >= static_cast<int>(std::floor(d.fraction * cfg.total_steps))) lr *= d.factor;
    }
    return lr;
}

SampleTargets build_targets(const ParsingSample& sample, const ModelConfig& cfg) {
    SampleTargets t;
    const int h = sample.height(), w = sample.width();
    const auto& hp = cfg.hp;
    t.instances = instance_part_masks(sample);
    for (const auto& inst : t.instances) t.regions.push_back(center_region(inst, hp.grid_size, hp.sigma_center, h, w));
    t.heat = center_heatmap_gt(t.instances, hp.grid_size, hp.sigma_center, h, w);
    t.feat_h = h / cfg.backbone.out_stride;
    t.feat_w = w / cfg.backbone.out_stride;

    for (const auto& inst : t.instances) {
        t.instance_masks.push_back(resize_nearest(inst.mask, t.feat_h, t.feat_w));
        std::vector<MapTarget> parts(cfg.n_categories);
        for (const auto& [c, m] : inst.part_masks) {
            if (c < 1 || c > cfg.n_categories) continue;
            Mask small = resize_nearest(m, t.feat_h, t.feat_w);
            if (count(small) > 0) parts[c - 1] = std::move(small);
        }
        t.part_masks.push_back(std::move(parts));
    }
    t.category_masks.assign(cfg.n_categories, std::nullopt);
    for (int c = 1; c <= cfg.n_categories; ++c) {
        Mask full(h, w, 0);
        for (std::size_t i = 0; i < full.size(); ++i) full.data[i] = sample.category_map.data[i] == c ? 1 : 0;
        Mask small = resize_nearest(full, t.feat_h, t.feat_w);
        if (count(small) > 0) t.category_masks[c - 1] = std::move(small);
    }
    return t;
}

std::vector<int> assign_kernels_to_instances(std::span<const GridCoord> cells,
                                             std::span<const std::vector<GridCoord>> regions,
                                             std::span<const InstanceGT> instances, int grid, int image_h,
                                             int image_w) {
    std::vector<int> out;
    out.reserve(cells.size());
    for (auto cell : cells) {
        int inside = -1, near = -1;
        double inside_d = std::numeric_limits<double>::infinity();
        int near_d = 2;
        for (std::size_t m = 0; m < regions.size(); ++m) {
            for (auto r : regions[m]) {
                const int d = std::max(std::abs(r.row - cell.row), std::abs(r.col - cell.col));
                if (d == 0) {
                    const auto c = cell_center(cell.row, cell.col, grid, image_h, image_w);
                    const auto& b = instances[m].barycenter;
                    const double bd = std::hypot(c.row - (b.row + 0.5), c.col - (b.col + 0.5));
                    if (bd < inside_d) inside = static_cast<int>(m), inside_d = bd;
                } else if (d < near_d) {
                    near = static_cast<int>(m), near_d = d;
                }
            }
        }
        const int m = inside >= 0 ? inside : near;
        out.push_back(m >= 0 ? instances[m].instance_id : -1);
    }
    return out;
}

std::vector<GridCoord> training_cells(const SampleTargets& targets, const Tensor& heat, double theta_c) {
    std::set<GridCoord> cells;
    for (const auto& r : targets.regions) cells.insert(r.begin(), r.end());
    for (auto g : select_centers(heat, theta_c, SelectionRule::Threshold)) cells.insert(g);
    return {cells.begin(), cells.end()};
}

SampleLoss sample_loss(const Model& model, const ParsingSample& sample, const SampleTargets& targets) {
    const auto& cfg = model.config();
    const auto& hp = cfg.hp;
    SampleLoss r;
    auto out = model.forward(sample.image);
    if (out.f_ins.dim(1) != targets.feat_h || out.f_ins.dim(2) != targets.feat_w) {
        throw Error(ErrorCode::BadShape, "feature size differs from the target resolution");
    }
    r.cells = training_cells(targets, out.heat.value(), hp.theta_c);
    r.assignment = assign_kernels_to_instances(r.cells, targets.regions, targets.instances, hp.grid_size,
                                               sample.height(), sample.width());

    LossParts parts;
    parts.center = focal_center_loss(out.heat, targets.heat);

    // Only kernels assigned to an instance take part in the mask losses.
    std::vector<int> assigned_rows;
    std::vector<Mask> ins_targets;
    std::vector<MapTarget> par_targets;
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
        const int id = r.assignment[k];
        if (id < 0) continue;
        assigned_rows.push_back(static_cast<int>(k));
        ins_targets.push_back(targets.instance_masks[id - 1]);
        for (const auto& t : targets.part_masks[id - 1]) par_targets.push_back(t);
    }

    auto inst = model.instances(out, r.cells);
    nn::Var q_ins_assigned, q_par_assigned;
    if (!assigned_rows.empty()) {
        q_ins_assigned = nn::select_rows(inst.q_ins, assigned_rows);
        std::vector<int> par_rows;
        for (int k : assigned_rows) {
            for (int c = 0; c < cfg.n_categories; ++c) par_rows.push_back(k * cfg.n_categories + c);
        }
        q_par_assigned = nn::select_rows(inst.q_parsing, par_rows);
    }
    nn::Var aux_ins = hp.aux_instance ? map_set_loss(q_ins_assigned, std::vector<MapTarget>(ins_targets.begin(),
                                                                                          ins_targets.end()))
                                      : nn::Var();
    nn::Var aux_cate = hp.aux_category ? map_set_loss(out.q_cate, targets.category_masks) : nn::Var();
    if (aux_ins.defined() && aux_cate.defined()) {
        parts.aux = nn::add(aux_ins, aux_cate);
    } else {
        parts.aux = aux_ins.defined() ? aux_ins : aux_cate;
    }
    parts.par = parsing_loss(q_par_assigned, par_targets);

    nn::Var a_ins = inst.kernels.defined() ? similarity_matrix(inst.kernels) : nn::Var();
    parts.metric = metric_loss(a_ins, r.assignment, similarity_matrix(out.k_cate));

    r.loss = total_loss(parts, hp);
    return r;
}

std::vector<StepRecord> train(const std::vector<ParsingSample>& dataset, Model& model, const TrainConfig& cfg,
                              const StepCallback& on_step) {
    validate(cfg);
    std::vector<StepRecord> history;
    if (cfg.total_steps == 0) return history;
    if (dataset.empty()) throw Error(ErrorCode::BadConfig, "training needs a nonempty dataset");

    std::vector<SampleTargets> targets;
    targets.reserve(dataset.size());
    for (const auto& s : dataset) targets.push_back(build_targets(s, model.config()));

    const auto& params = model.parameters();
    std::vector<Tensor> velocity;
    for (const auto& p : params) velocity.push_back(Tensor::zeros_like(p.var.value()));

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    const HyperParams& hp = model.config().hp;
    for (int step = 0; step < cfg.total_steps; ++step) {
        for (const auto& p : params) p.var.zero_grad();
        double lc = 0, la = 0, lp = 0, lm = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            SampleLoss sl;
            try {
                sl = sample_loss(model, dataset[idx], targets[idx]);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NonFiniteLoss) throw;
                throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(step) + ", sample " +
                                                          dataset[idx].sample_id + ": " + e.what());
            }
            nn::backward(nn::scale(sl.loss.total, 1.0 / cfg.batch_size));
            lc += sl.loss.report.l_center;
            la += sl.loss.report.l_aux;
            lp += sl.loss.report.l_par;
            lm += sl.loss.report.l_metric;
        }
        const double inv = 1.0 / cfg.batch_size;
        StepRecord rec{step, total_loss(lc * inv, la * inv, lp * inv, lm * inv, hp), learning_rate(cfg, step)};

        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = params[i].var.grad();
            if (g.empty()) continue;
            if (!g.all_finite()) {
                throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(step) + ": gradient of " +
                                                          params[i].name + " is not finite");
            }
            auto& v = velocity[i];
            auto& w = params[i].var.mutable_value();
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = cfg.momentum * v[j] + g[j];
                w[j] -= rec.lr * v[j];
            }
        }
        history.push_back(rec);
        if (on_step) on_step(rec);
    }
    for (const auto& p : params) p.var.zero_grad();
    return history;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

void write_history_csv(const std::filesystem::path& path, std::span<const StepRecord> history) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::BadConfig, "cannot write " + path.string());
    f << "step,l_center,l_aux,l_par,l_metric,l_total,lr\n";
    for (const auto& r : history) {
        f << r.step << ',' << fmt(r.loss.l_center) << ',' << fmt(r.loss.l_aux) << ',' << fmt(r.loss.l_par) << ','
          << fmt(r.loss.l_metric) << ',' << fmt(r.loss.l_total) << ',' << fmt(r.lr) << '\n';
    }
}

namespace {

constexpr char kCheckpointHeader[] = "uniparser-checkpoint 1";
constexpr char kTensorMagic[4] = {'U', 'P', 'T', '1'};

std::map<std::string, std::string> model_config_kv(const ModelConfig& c) {
    std::string stages;
    for (std::size_t i = 0; i < c.backbone.stage_channels.size(); ++i) {
        stages += (i ? "," : "") + std::to_string(c.backbone.stage_channels[i]);
    }
    const auto& hp = c.hp;
    return {
        {"backbone.stage_channels", stages},
        {"backbone.neck_channels", std::to_string(c.backbone.neck_channels)},
        {"backbone.out_stride", std::to_string(c.backbone.out_stride)},
        {"model.n_categories", std::to_string(c.n_categories)},
        {"model.seed", std::to_string(c.seed)},
        {"model.grid_size", std::to_string(hp.grid_size)},
        {"model.sigma_center", fmt(hp.sigma_center)},
        {"model.theta_c", fmt(hp.theta_c)},
        {"model.theta_ctr", fmt(hp.theta_ctr)},
        {"model.theta_masks", fmt(hp.theta_masks)},
        {"model.lambda_aux", fmt(hp.lambda_aux)},
        {"model.lambda_par", fmt(hp.lambda_par)},
        {"model.lambda_metric", fmt(hp.lambda_metric)},
        {"model.head_channels", std::to_string(hp.head_channels)},
        {"model.head_depth", std::to_string(hp.head_depth)},
        {"model.kernel_init_std", fmt(hp.kernel_init_std)},
        {"model.similarity_space", to_string(hp.similarity_space)},
        {"model.fusion_mode", to_string(hp.fusion_mode)},
        {"model.aux_instance", hp.aux_instance ? "1" : "0"},
        {"model.aux_category", hp.aux_category ? "1" : "0"},
    };
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key,
               const std::filesystem::path& file) {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::DatasetCorrupt, file.string() + ": missing " + key);
    T v{};
    const auto& s = it->second;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw Error(ErrorCode::DatasetCorrupt, file.string() + ": bad value for " + key);
    }
    return v;
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv, const std::filesystem::path& file) {
    ModelConfig c;
    c.backbone.stage_channels.clear();
    auto it = kv.find("backbone.stage_channels");
    if (it == kv.end()) throw Error(ErrorCode::DatasetCorrupt, file.string() + ": missing backbone.stage_channels");
    std::stringstream ss(it->second);
    for (std::string item; std::getline(ss, item, ',');) c.backbone.stage_channels.push_back(std::stoi(item));
    c.backbone.neck_channels = parse_number<int>(kv, "backbone.neck_channels", file);
    c.backbone.out_stride = parse_number<int>(kv, "backbone.out_stride", file);
    c.n_categories = parse_number<int>(kv, "model.n_categories", file);
    c.seed = parse_number<std::uint64_t>(kv, "model.seed", file);
    auto& hp = c.hp;
    hp.grid_size = parse_number<int>(kv, "model.grid_size", file);
    hp.sigma_center = parse_number<double>(kv, "model.sigma_center", file);
    hp.theta_c = parse_number<double>(kv, "model.theta_c", file);
    hp.theta_ctr = parse_number<double>(kv, "model.theta_ctr", file);
    hp.theta_masks = parse_number<double>(kv, "model.theta_masks", file);
    hp.lambda_aux = parse_number<double>(kv, "model.lambda_aux", file);
    hp.lambda_par = parse_number<double>(kv, "model.lambda_par", file);
    hp.lambda_metric = parse_number<double>(kv, "model.lambda_metric", file);
    hp.head_channels = parse_number<int>(kv, "model.head_channels", file);
    hp.head_depth = parse_number<int>(kv, "model.head_depth", file);
    hp.kernel_init_std = parse_number<double>(kv, "model.kernel_init_std", file);
    hp.similarity_space = parse_similarity_space(kv.at("model.similarity_space"));
    hp.fusion_mode = parse_fusion_mode(kv.at("model.fusion_mode"));
    hp.aux_instance = parse_number<int>(kv, "model.aux_instance", file) != 0;
    hp.aux_category = parse_number<int>(kv, "model.aux_category", file) != 0;
    return c;
}

std::string param_file(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "param_%03zu.bin", index);
    return buf;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::BadConfig, "cannot write " + path.string());
    f.write(kTensorMagic, 4);
    const auto ndim = static_cast<std::uint32_t>(t.rank());
    f.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
    for (int d : t.shape()) {
        const auto v = static_cast<std::int32_t>(d);
        f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw Error(ErrorCode::BadConfig, "failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::DatasetCorrupt, path.string() + ": cannot open");
    char magic[4];
    std::uint32_t ndim = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ndim), sizeof ndim);
    if (!f || !std::equal(magic, magic + 4, kTensorMagic) || ndim > 8) {
        throw Error(ErrorCode::DatasetCorrupt, path.string() + ": bad tensor header");
    }
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
        std::int32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof v);
        if (v < 0) throw Error(ErrorCode::DatasetCorrupt, path.string() + ": negative dimension");
        d = v;
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f || f.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::DatasetCorrupt, path.string() + ": truncated or oversized tensor data");
    }
    return t;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::BadConfig, "cannot create " + dir.string() + ": " + ec.message());
    std::ofstream m(dir / "manifest.txt");
    if (!m) throw Error(ErrorCode::BadConfig, "cannot write " + (dir / "manifest.txt").string());
    m << kCheckpointHeader << '\n';
    for (const auto& [k, v] : model_config_kv(model.config())) m << k << " = " << v << '\n';
    const auto& params = model.parameters();
    m << "params " << params.size() << '\n';
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto file = param_file(i);
        m << "param " << params[i].name << ' ' << file << ' ' << shape_str(params[i].var.shape()) << '\n';
        write_tensor(dir / file, params[i].var.value());
    }
}

Model load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = dir / "manifest.txt";
    std::ifstream f(manifest);
    if (!f) throw Error(ErrorCode::DatasetCorrupt, manifest.string() + ": cannot open");
    std::string line;
    if (!std::getline(f, line) || line != kCheckpointHeader) {
        throw Error(ErrorCode::DatasetCorrupt, manifest.string() + ": not a checkpoint manifest");
    }
    std::map<std::string, std::string> kv;
    std::vector<std::pair<std::string, std::string>> files;
    while (std::getline(f, line)) {
        if (line.rfind("param ", 0) == 0) {
            std::istringstream ls(line.substr(6));
            std::string name, file;
            ls >> name >> file;
            files.emplace_back(name, file);
        } else if (auto eq = line.find(" = "); eq != std::string::npos) {
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
    }
    Model model(model_config_from_kv(kv, manifest));
    const auto& params = model.parameters();
    if (files.size() != params.size()) {
        throw Error(ErrorCode::DatasetCorrupt, manifest.string() + ": parameter count does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (files[i].first != params[i].name) {
            throw Error(ErrorCode::DatasetCorrupt, manifest.string() + ": unexpected parameter " + files[i].first);
        }
        Tensor t = read_tensor(dir / files[i].second);
        if (t.shape() != params[i].var.shape()) {
            throw Error(ErrorCode::DatasetCorrupt, (dir / files[i].second).string() + ": shape " +
                                                       shape_str(t.shape()) + " expected " +
                                                       shape_str(params[i].var.shape()));
        }
        params[i].var.mutable_value() = std::move(t);
    }
    return model;
}

}  // namespace uniparser
