#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ict::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one ictool invocation. args excludes the program name. Tables and
/// figures go to the output directory, summaries to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Probability that a random positive outranks a random negative, ties
/// counted as one half. NaN when either side is empty.
double separation_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

}  // namespace ict::cli
