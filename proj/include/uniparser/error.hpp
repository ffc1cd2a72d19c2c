// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uniparser {

enum class ErrorCode {
    EmptyMask,
    InconsistentLabels,
    DatasetCorrupt,
    BadShape,
    NonFiniteLoss,
    BadConfig,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying one of the library's error codes. The message always
/// starts with the code name so callers matching on text see it too.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace uniparser
