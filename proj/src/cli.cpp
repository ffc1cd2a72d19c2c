// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "uniparser/config.hpp"
#include "uniparser/error.hpp"
#include "uniparser/inference.hpp"
#include "uniparser/synthgen.hpp"
#include "uniparser/trainer.hpp"

namespace uniparser::cli {

namespace {

template <typename Fn>
int guarded(std::ostream& log, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        log << "error: " << e.what() << '\n';
        const bool config = e.code() == ErrorCode::BadConfig || e.code() == ErrorCode::DatasetCorrupt;
        return config ? kExitConfig : kExitRuntime;
    } catch (const std::filesystem::filesystem_error& e) {
        // Unusable output locations are configuration problems.
        log << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

ExperimentConfig load(const Path& config, std::optional<std::uint64_t> seed) {
    auto cfg = load_config(config);
    if (seed) override_seed(cfg, *seed);
    return cfg;
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_text(const Path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::BadConfig, "cannot write " + path.string());
    f << text;
    if (!f) throw Error(ErrorCode::BadConfig, "failed writing " + path.string());
}

std::string kv_text(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::string threshold_key(double t) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << t;
    return s.str();
}

std::vector<ImageEval> evaluate_model(const Model& model, const std::vector<ParsingSample>& samples, bool nms) {
    std::vector<ImageEval> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto p = predict(model, s.image);
        if (nms) p = matrix_nms(p);
        out.push_back(make_image_eval(p, s));
    }
    return out;
}

ParsingPrediction ground_truth_prediction(const ParsingSample& s) {
    ParsingPrediction p{s.height(), s.width(), {}};
    for (auto& inst : instance_part_masks(s)) p.instances.push_back({1.0, std::move(inst.part_masks)});
    return p;
}

double category_offdiag(const Model& model) {
    nn::NoGradGuard guard;
    return mean_off_diagonal(similarity_matrix(nn::Var(category_kernels(model))).value());
}

}  // namespace

std::map<std::string, std::string> eval_kv(const EvalResult& result) {
    std::map<std::string, std::string> kv;
    for (const auto& [t, ap] : result.ap_p) kv["ap_p@" + threshold_key(t)] = fmt(ap);
    kv["ap_p_50"] = fmt(result.ap_p_50());
    kv["ap_p_vol"] = fmt(result.ap_p_vol);
    kv["pcp_50"] = fmt(result.pcp_50);
    std::size_t preds = 0, gts = 0, tps = 0;
    for (const auto& d : result.per_image) preds += d.num_predictions, gts += d.num_gt, tps += d.true_positives_50;
    kv["num_images"] = std::to_string(result.per_image.size());
    kv["num_predictions"] = std::to_string(preds);
    kv["num_gt"] = std::to_string(gts);
    kv["true_positives_50"] = std::to_string(tps);
    return kv;
}

int cmd_synth(const Path& config, const std::optional<Path>& out, std::optional<std::uint64_t> seed,
              std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load(config, seed);
        const Path dir = out.value_or(cfg.dataset_dir);
        auto samples = generate_dataset(cfg.synth, cfg.synth_count);
        write_dataset(samples, dir, cfg.synth);
        const auto back = read_dataset(dir);
        if (back != samples) throw Error(ErrorCode::DatasetCorrupt, dir.string() + ": re-read differs from written");
        log << "wrote " << samples.size() << " samples to " << dir.string() << '\n';
        log << "validated " << back.size() << " samples\n";
        return kExitOk;
    });
}

int cmd_train(const Path& config, const std::optional<Path>& out, const std::optional<Path>& dataset,
              std::optional<std::uint64_t> seed, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load(config, seed);
        const Path data_dir = dataset.value_or(cfg.dataset_dir);
        if (!std::filesystem::exists(data_dir / "manifest.txt")) {
            throw Error(ErrorCode::DatasetCorrupt, "no dataset at " + data_dir.string());
        }
        const auto samples = read_dataset(data_dir);
        const Path out_dir = out.value_or(cfg.out_dir);
        if (cfg.train.grad_check_mode) Eigen::setNbThreads(1);
        Model model(cfg.model);
        log << "training " << model.parameters().size() << " tensors on " << samples.size() << " samples for "
            << cfg.train.total_steps << " steps\n";
        auto history = train(samples, model, cfg.train, [&](const StepRecord& r) {
            if (r.step % cfg.log_every == 0 || r.step + 1 == cfg.train.total_steps) {
                log << "step " << r.step << " lr " << fmt(r.lr) << " l_total " << fmt(r.loss.l_total) << '\n';
            }
        });
        std::filesystem::create_directories(out_dir);
        save_checkpoint(model, out_dir / "checkpoint");
        write_history_csv(out_dir / "history.csv", history);
        log << "checkpoint written to " << (out_dir / "checkpoint").string() << '\n';
        return kExitOk;
    });
}

int cmd_eval(const std::optional<Path>& checkpoint, const Path& dataset, const Path& report,
             const std::string& variant, std::ostream& log) {
    return guarded(log, [&] {
        if (variant != "model" && variant != "gt" && variant != "empty") {
            throw Error(ErrorCode::BadConfig, "eval variant must be model, gt or empty");
        }
        const auto samples = read_dataset(dataset);
        std::vector<ImageEval> images;
        std::map<std::string, std::string> extra;
        if (variant == "model") {
            if (!checkpoint) throw Error(ErrorCode::BadConfig, "eval needs --checkpoint");
            const Model model = load_checkpoint(*checkpoint);
            images = evaluate_model(model, samples, false);
            extra["category_offdiag"] = fmt(category_offdiag(model));
        } else {
            for (const auto& s : samples) {
                ParsingPrediction p = variant == "gt" ? ground_truth_prediction(s) : ParsingPrediction{};
                images.push_back(make_image_eval(p, s));
            }
        }
        const auto result = evaluate(images);
        auto kv = eval_kv(result);
        kv.insert(extra.begin(), extra.end());
        kv["variant"] = variant;

        std::ostringstream text;
        text << "evaluation of " << variant << " on " << samples.size() << " images\n";
        text << std::fixed << std::setprecision(2);
        text << "AP^p_50  " << 100.0 * result.ap_p_50() << "\n";
        text << "AP^p_vol " << 100.0 * result.ap_p_vol << "\n";
        text << "PCP_50   " << 100.0 * result.pcp_50 << "\n";
        text << "per-threshold AP^p:";
        for (const auto& [t, ap] : result.ap_p) text << ' ' << threshold_key(t) << ':' << 100.0 * ap;
        text << "\n";
        write_text(report, text.str());
        write_text(report.string() + ".kv", kv_text(kv));
        log << text.str();
        return kExitOk;
    });
}

namespace {

struct VariantRow {
    std::optional<EvalResult> result;
    std::optional<double> offdiag;
};

std::string cell(const std::optional<EvalResult>& r, double (*pick)(const EvalResult&)) {
    if (!r) return "n/a";
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * pick(*r);
    return s.str();
}

std::string render_table(const std::map<std::string, VariantRow>& rows, std::size_t n_val) {
    struct Line {
        const char* label;
        const char* key;
    };
    const std::vector<std::pair<const char*, std::vector<Line>>> sections = {
        {"(a) metric loss and NMS",
         {{"w/o metric loss", "no_metric"}, {"w/ metric loss", "default"}, {"w/ metric loss + Matrix-NMS", "default+nms"}}},
        {"(b) auxiliary loss",
         {{"none", "no_aux"}, {"instance only", "aux_instance_only"}, {"category only", "aux_category_only"},
          {"instance + category", "default"}}},
        {"(c) similarity space",
         {{"inner product", "inner"}, {"inner, sigmoid after", "inner_sigmoid_after"},
          {"inner, sigmoid before", "inner_sigmoid_before"}, {"cosine", "default"}}},
        {"(d) fusion",
         {{"convs", "convs"}, {"multi", "multi"}, {"index", "default"}}},
    };
    auto ap50 = [](const EvalResult& r) { return r.ap_p_50(); };
    auto apvol = [](const EvalResult& r) { return r.ap_p_vol; };
    auto pcp = [](const EvalResult& r) { return r.pcp_50; };
    std::ostringstream t;
    t << "ablation on " << n_val << " synthetic validation images (values in %)\n";
    for (const auto& [title, lines] : sections) {
        t << '\n' << title << '\n';
        t << std::left << std::setw(30) << "  setting" << std::right << std::setw(9) << "AP^p_50" << std::setw(10)
          << "AP^p_vol" << std::setw(9) << "PCP_50";
        if (std::string(title).starts_with("(a)")) t << std::setw(16) << "offdiag|A_cate|";
        t << '\n';
        for (const auto& line : lines) {
            auto it = rows.find(line.key);
            const VariantRow empty;
            const VariantRow& row = it == rows.end() ? empty : it->second;
            t << std::left << std::setw(30) << (std::string("  ") + line.label) << std::right << std::setw(9)
              << cell(row.result, +ap50) << std::setw(10) << cell(row.result, +apvol) << std::setw(9)
              << cell(row.result, +pcp);
            if (std::string(title).starts_with("(a)")) {
                std::ostringstream o;
                if (row.offdiag) {
                    o << std::fixed << std::setprecision(4) << *row.offdiag;
                } else {
                    o << "n/a";
                }
                t << std::setw(16) << o.str();
            }
            t << '\n';
        }
    }
    return t.str();
}

}  // namespace

int cmd_ablate(const Path& config, bool train_missing, const std::optional<std::string>& only,
               std::optional<std::uint64_t> seed, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load(config, seed);
        std::vector<std::string> variants = cfg.ablate_variants;
        if (only) {
            variant_model_config(cfg.model, *only);
            variants = {*only};
        }
        SynthSpec val_spec = cfg.synth;
        val_spec.seed = cfg.ablate_val_seed;
        const auto val = generate_dataset(val_spec, cfg.ablate_val_count);
        const Path root = cfg.out_dir / "ablate";

        std::vector<ParsingSample> train_set;
        std::map<std::string, VariantRow> rows;
        std::map<std::string, std::string> kv;
        for (const auto& v : variants) {
            const Path ckpt = root / v / "checkpoint";
            if (!std::filesystem::exists(ckpt / "manifest.txt")) {
                if (!train_missing) {
                    log << v << ": no checkpoint at " << ckpt.string() << ", listed as n/a\n";
                    continue;
                }
                if (train_set.empty()) train_set = read_dataset(cfg.dataset_dir);
                Model model(variant_model_config(cfg.model, v));
                log << v << ": training " << cfg.train.total_steps << " steps\n";
                auto history = train(train_set, model, cfg.train);
                save_checkpoint(model, ckpt);
                write_history_csv(root / v / "history.csv", history);
            }
            const Model model = load_checkpoint(ckpt);
            VariantRow row;
            row.result = evaluate(evaluate_model(model, val, false));
            row.offdiag = category_offdiag(model);
            for (const auto& [k, value] : eval_kv(*row.result)) kv[v + "." + k] = value;
            kv[v + ".category_offdiag"] = fmt(*row.offdiag);
            if (v == "default") {
                VariantRow nms;
                nms.result = evaluate(evaluate_model(model, val, true));
                nms.offdiag = row.offdiag;
                for (const auto& [k, value] : eval_kv(*nms.result)) kv["default+nms." + k] = value;
                kv["nms_delta_ap_p_50"] = fmt(nms.result->ap_p_50() - row.result->ap_p_50());
                rows["default+nms"] = nms;
            }
            rows[v] = row;
            log << v << ": AP^p_50 " << fmt(row.result->ap_p_50()) << '\n';
        }
        const auto table = render_table(rows, val.size());
        write_text(root / "table.txt", table);
        write_text(root / "results.kv", kv_text(kv));
        log << table;
        return kExitOk;
    });
}

int cmd_render(const Path& checkpoint, const Path& image, const Path& out, std::ostream& log) {
    return guarded(log, [&] {
        const Model model = load_checkpoint(checkpoint);
        const RgbImage rgb = read_png_rgb(image);
        const auto pred = predict(model, from_rgb8(rgb));
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        write_png(out, render_overlay(rgb, pred));
        log << "rendered " << pred.instances.size() << " instances to " << out.string() << '\n';
        return kExitOk;
    });
}

int run(int argc, char** argv) {
    if (const char* env = std::getenv("UNIPARSER_THREADS")) {
        int n = 0;
        const std::string s(env);
        auto res = std::from_chars(s.data(), s.data() + s.size(), n);
        if (res.ec != std::errc() || n < 1) {
            std::cerr << "error: UNIPARSER_THREADS must be a positive integer\n";
            return kExitConfig;
        }
        Eigen::setNbThreads(n);
    }

    CLI::App app{"Multi-human parsing with cosine-space instance and category kernels"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, dataset, variant, image;
    std::optional<std::uint64_t> seed;
    bool train_flag = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config, "experiment config")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", out, "output directory (default: paths.dataset)");
    synth->add_option("--seed", seed, "override all seeds");

    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config, "experiment config")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out, "output directory (default: paths.out)");
    train_cmd->add_option("--dataset", dataset, "training set (default: paths.dataset)");
    train_cmd->add_option("--seed", seed, "override all seeds");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
    eval->add_option("--dataset", dataset, "dataset directory")->required();
    eval->add_option("--out", out, "report path (a .kv twin is written next to it)")->required();
    eval->add_option("--variant", variant, "model, gt or empty")->default_val("model");

    auto* ablate = app.add_subcommand("ablate", "compare ablation variants");
    ablate->add_option("--config", config, "experiment config")->required()->check(CLI::ExistingFile);
    ablate->add_option("--variant", variant, "run a single variant");
    ablate->add_flag("--train", train_flag, "train variants without a checkpoint");
    ablate->add_option("--seed", seed, "override all seeds");

    auto* render = app.add_subcommand("render", "overlay predictions on an image");
    render->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    render->add_option("--image", image, "input PNG")->required()->check(CLI::ExistingFile);
    render->add_option("--out", out, "output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    auto opt = [](const std::string& s) { return s.empty() ? std::optional<Path>() : std::optional<Path>(s); };
    if (*synth) return cmd_synth(config, opt(out), seed, std::cerr);
    if (*train_cmd) return cmd_train(config, opt(out), opt(dataset), seed, std::cerr);
    if (*eval) return cmd_eval(opt(checkpoint), dataset, out, variant, std::cerr);
    if (*ablate) {
        return cmd_ablate(config, train_flag, variant.empty() ? std::nullopt : std::optional<std::string>(variant),
                          seed, std::cerr);
    }
    return cmd_render(checkpoint, image, out, std::cerr);
}

}  // namespace uniparser::cli
