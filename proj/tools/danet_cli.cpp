// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "danet/app.hpp"

int main(int argc, char** argv) { return danet::run_cli(argc, argv, std::cout, std::cerr); }
