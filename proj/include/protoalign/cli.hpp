#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "protoalign/ot.hpp"

namespace protoalign::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Entry point shared by the executable and the tests. Output goes to `out`,
// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Cost CSV: first line "N,K" (or a non-numeric header, in which case the
// shape is inferred), then N rows of K comma-separated values.
Matrix read_cost_csv(const std::filesystem::path& path);
void write_plan_csv(const Matrix& plan, const std::filesystem::path& path);

}  // namespace protoalign::cli
