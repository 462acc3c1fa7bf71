#pragma once

// Wilcoxon signed-rank test for paired samples.

#include <span>
#include <string>

#include "ctmass/regress.hpp"

namespace ctmass {

enum class WilcoxonMethod { exact, normal_approx };
std::string to_string(WilcoxonMethod m);

struct WilcoxonOutcome {
    double w_statistic = 0.0; // min(W+, W-)
    double w_plus = 0.0;
    double w_minus = 0.0;
    int n_effective = 0;      // nonzero differences
    double p_two_sided = 1.0;
    WilcoxonMethod method = WilcoxonMethod::exact;
    bool degenerate = false;  // no nonzero differences
};

inline constexpr int kExactWilcoxonLimit = 25;

// Differences a - b; zeros are dropped and tied |d| share average ranks.
// n_effective <= 25 uses the exact null distribution of W+, larger samples
// the tie-corrected normal approximation with continuity correction 0.5.
WilcoxonOutcome wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// Pairs the per-sample mean squared residuals (averaged over repeats).
WilcoxonOutcome compare_pipelines(const CVResult& a, const CVResult& b);

} // namespace ctmass
