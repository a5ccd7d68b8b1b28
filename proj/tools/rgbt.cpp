// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "rgbt/cli.hpp"

int main(int argc, char** argv) { return rgbt::cli::run(argc, argv, std::cout, std::cerr); }
