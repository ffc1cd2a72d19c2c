// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/error.hpp"

namespace uniparser {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::InconsistentLabels: return "InconsistentLabels";
        case ErrorCode::DatasetCorrupt: return "DatasetCorrupt";
        case ErrorCode::BadShape: return "BadShape";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::BadConfig: return "BadConfig";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

}  // namespace uniparser
