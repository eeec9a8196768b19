// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mtat/cli.hpp"

int main(int argc, char** argv) { return mtat::cli::run(argc, argv, std::cout, std::cerr); }
