// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "uniparser/error.hpp"

namespace uniparser {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T number(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    T v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw Error(ErrorCode::BadConfig, key + ": cannot parse '" + raw + "'");
    }
    return v;
}

bool boolean(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(ErrorCode::BadConfig, key + ": expected a boolean, got '" + raw + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);) {
        if (!trim(item).empty()) out.push_back(trim(item));
    }
    return out;
}

std::vector<LrDrop> lr_drops(const std::string& key, const std::string& raw) {
    // "fraction:factor, fraction:factor"; the factor defaults to 0.1.
    std::vector<LrDrop> out;
    for (const auto& item : split(raw, ',')) {
        const auto colon = item.find(':');
        LrDrop d;
        d.fraction = number<double>(key, item.substr(0, colon));
        if (colon != std::string::npos) d.factor = number<double>(key, item.substr(colon + 1));
        out.push_back(d);
    }
    return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

std::map<std::string, Setter> setters(ExperimentConfig& c, const std::filesystem::path& base) {
    auto path = [&base](const std::string& v) {
        std::filesystem::path p(trim(v));
        return p.is_absolute() ? p : base / p;
    };
    auto& s = c.synth;
    auto& b = c.model.backbone;
    auto& hp = c.model.hp;
    auto& t = c.train;
    return {
        {"synth.height", [&](auto& k, auto& v) { s.height = number<int>(k, v); }},
        {"synth.width", [&](auto& k, auto& v) { s.width = number<int>(k, v); }},
        {"synth.min_instances", [&](auto& k, auto& v) { s.min_instances = number<int>(k, v); }},
        {"synth.max_instances", [&](auto& k, auto& v) { s.max_instances = number<int>(k, v); }},
        {"synth.n_categories", [&](auto& k, auto& v) { s.n_categories = number<int>(k, v); }},
        {"synth.min_instance_px", [&](auto& k, auto& v) { s.min_instance_px = number<int>(k, v); }},
        {"synth.overlap_allowed", [&](auto& k, auto& v) { s.overlap_allowed = boolean(k, v); }},
        {"synth.seed", [&](auto& k, auto& v) { s.seed = number<std::uint64_t>(k, v); }},
        {"synth.count", [&](auto& k, auto& v) { c.synth_count = number<int>(k, v); }},
        {"backbone.stage_channels",
         [&](auto& k, auto& v) {
             b.stage_channels.clear();
             for (const auto& item : split(v, ',')) b.stage_channels.push_back(number<int>(k, item));
         }},
        {"backbone.neck_channels", [&](auto& k, auto& v) { b.neck_channels = number<int>(k, v); }},
        {"backbone.out_stride", [&](auto& k, auto& v) { b.out_stride = number<int>(k, v); }},
        {"model.n_categories", [&](auto& k, auto& v) { c.model.n_categories = number<int>(k, v); }},
        {"model.seed", [&](auto& k, auto& v) { c.model.seed = number<std::uint64_t>(k, v); }},
        {"model.grid_size", [&](auto& k, auto& v) { hp.grid_size = number<int>(k, v); }},
        {"model.sigma_center", [&](auto& k, auto& v) { hp.sigma_center = number<double>(k, v); }},
        {"model.theta_c", [&](auto& k, auto& v) { hp.theta_c = number<double>(k, v); }},
        {"model.theta_ctr", [&](auto& k, auto& v) { hp.theta_ctr = number<double>(k, v); }},
        {"model.theta_masks", [&](auto& k, auto& v) { hp.theta_masks = number<double>(k, v); }},
        {"model.lambda_aux", [&](auto& k, auto& v) { hp.lambda_aux = number<double>(k, v); }},
        {"model.lambda_par", [&](auto& k, auto& v) { hp.lambda_par = number<double>(k, v); }},
        {"model.lambda_metric", [&](auto& k, auto& v) { hp.lambda_metric = number<double>(k, v); }},
        {"model.head_channels", [&](auto& k, auto& v) { hp.head_channels = number<int>(k, v); }},
        {"model.head_depth", [&](auto& k, auto& v) { hp.head_depth = number<int>(k, v); }},
        {"model.kernel_init_std", [&](auto& k, auto& v) { hp.kernel_init_std = number<double>(k, v); }},
        {"model.similarity_space", [&](auto&, auto& v) { hp.similarity_space = parse_similarity_space(trim(v)); }},
        {"model.fusion_mode", [&](auto&, auto& v) { hp.fusion_mode = parse_fusion_mode(trim(v)); }},
        {"model.aux_instance", [&](auto& k, auto& v) { hp.aux_instance = boolean(k, v); }},
        {"model.aux_category", [&](auto& k, auto& v) { hp.aux_category = boolean(k, v); }},
        {"train.batch_size", [&](auto& k, auto& v) { t.batch_size = number<int>(k, v); }},
        {"train.base_lr_per_sample", [&](auto& k, auto& v) { t.base_lr_per_sample = number<double>(k, v); }},
        {"train.momentum", [&](auto& k, auto& v) { t.momentum = number<double>(k, v); }},
        {"train.warmup_iters", [&](auto& k, auto& v) { t.warmup_iters = number<int>(k, v); }},
        {"train.total_steps", [&](auto& k, auto& v) { t.total_steps = number<int>(k, v); }},
        {"train.lr_drops", [&](auto& k, auto& v) { t.lr_drops = lr_drops(k, v); }},
        {"train.seed", [&](auto& k, auto& v) { t.seed = number<std::uint64_t>(k, v); }},
        {"train.grad_check_mode", [&](auto& k, auto& v) { t.grad_check_mode = boolean(k, v); }},
        {"train.log_every", [&](auto& k, auto& v) { c.log_every = number<int>(k, v); }},
        {"paths.dataset", [&](auto&, auto& v) { c.dataset_dir = path(v); }},
        {"paths.out", [&](auto&, auto& v) { c.out_dir = path(v); }},
        {"ablate.variants", [&](auto&, auto& v) { c.ablate_variants = split(v, ','); }},
        {"ablate.val_count", [&](auto& k, auto& v) { c.ablate_val_count = number<int>(k, v); }},
        {"ablate.val_seed", [&](auto& k, auto& v) { c.ablate_val_seed = number<std::uint64_t>(k, v); }},
    };
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorCode::BadConfig, std::string("config syntax: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.dataset_dir = base_dir / "dataset";
    cfg.out_dir = base_dir / "out";
    const auto table = setters(cfg, base_dir);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw Error(ErrorCode::BadConfig, "key '" + section + "' outside a section");
        }
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            auto it = table.find(full);
            if (it == table.end()) throw Error(ErrorCode::BadConfig, "unknown key " + full);
            it->second(full, value.data());
        }
    }
    cfg.model.n_categories = tree.get_optional<std::string>("model.n_categories") ? cfg.model.n_categories
                                                                                    : cfg.synth.n_categories;
    validate(cfg.synth);
    validate(cfg.model);
    validate(cfg.train);
    if (cfg.synth_count < 0) throw Error(ErrorCode::BadConfig, "synth.count must be >= 0");
    if (cfg.log_every < 1) throw Error(ErrorCode::BadConfig, "train.log_every must be >= 1");
    for (const auto& v : cfg.ablate_variants) variant_model_config(cfg.model, v);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::BadConfig, "cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.synth.seed = seed;
    cfg.model.seed = seed;
    cfg.train.seed = seed;
}

ModelConfig variant_model_config(const ModelConfig& base, const std::string& variant) {
    ModelConfig c = base;
    auto& hp = c.hp;
    if (variant == "default") {
    } else if (variant == "no_metric") {
        hp.lambda_metric = 0.0;
    } else if (variant == "no_aux") {
        hp.aux_instance = hp.aux_category = false;
    } else if (variant == "aux_instance_only") {
        hp.aux_category = false;
    } else if (variant == "aux_category_only") {
        hp.aux_instance = false;
    } else if (variant == "inner") {
        hp.similarity_space = SimilaritySpace::Inner;
    } else if (variant == "inner_sigmoid_after") {
        hp.similarity_space = SimilaritySpace::InnerSigmoidAfter;
    } else if (variant == "inner_sigmoid_before") {
        hp.similarity_space = SimilaritySpace::InnerSigmoidBefore;
    } else if (variant == "convs") {
        hp.fusion_mode = FusionMode::Convs;
    } else if (variant == "multi") {
        hp.fusion_mode = FusionMode::Multi;
    } else {
        throw Error(ErrorCode::BadConfig, "unknown ablation variant '" + variant + "'");
    }
    return c;
}

}  // namespace uniparser
