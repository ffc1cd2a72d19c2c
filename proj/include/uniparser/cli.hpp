// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "uniparser/metrics.hpp"

namespace uniparser::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

using Path = std::filesystem::path;

/// Generates `synth.count` samples, writes them and re-reads them for
/// validation. `out` defaults to paths.dataset.
int cmd_synth(const Path& config, const std::optional<Path>& out, std::optional<std::uint64_t> seed,
              std::ostream& log);

/// Trains on the dataset and writes `<out>/checkpoint/` and
/// `<out>/history.csv`. `out` defaults to paths.out, `dataset` to paths.dataset.
int cmd_train(const Path& config, const std::optional<Path>& out, const std::optional<Path>& dataset,
              std::optional<std::uint64_t> seed, std::ostream& log);

/// Evaluates a checkpoint on a dataset; writes `report` (text) and
/// `report.kv`. `variant` "model" runs the checkpoint; "gt" injects the
/// ground truth as predictions and "empty" predicts nothing (no checkpoint
/// needed for either).
int cmd_eval(const std::optional<Path>& checkpoint, const Path& dataset, const Path& report,
             const std::string& variant, std::ostream& log);

/// Trains (when `train` is set and the checkpoint is missing) and evaluates
/// every configured ablation variant on a synthetic validation set, then
/// prints the comparison table and writes `<out>/ablate/table.txt` and
/// `<out>/ablate/results.kv`. `only` restricts the run to one variant.
int cmd_ablate(const Path& config, bool train, const std::optional<std::string>& only,
               std::optional<std::uint64_t> seed, std::ostream& log);

/// Overlays the checkpoint's prediction for one PNG image.
int cmd_render(const Path& checkpoint, const Path& image, const Path& out, std::ostream& log);

/// key = value lines of an evaluation result.
std::map<std::string, std::string> eval_kv(const EvalResult& result);

/// Parses argv with CLI11 and dispatches. Returns the exit code.
int run(int argc, char** argv);

}  // namespace uniparser::cli
