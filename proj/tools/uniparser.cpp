// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/cli.hpp"

int main(int argc, char** argv) { return uniparser::cli::run(argc, argv); }
