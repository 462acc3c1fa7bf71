#include "ctmass/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ctmass/error.hpp"

namespace ctmass {

std::string to_string(WilcoxonMethod m)
{
    return m == WilcoxonMethod::exact ? "exact" : "normal_approx";
}

namespace {

// P(W+ <= w) under the null, from the distribution of sums of a random
// subset of the ranks. Ranks are halves at worst, so doubled ranks are
// integers and the subset-sum counts are exact in double precision.
double exact_lower_tail(const std::vector<double>& ranks, double w)
{
    std::vector<int> doubled;
    int total = 0;
    for (double r : ranks) {
        doubled.push_back(static_cast<int>(std::lround(2.0 * r)));
        total += doubled.back();
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int r : doubled) {
        for (int s = reach; s >= 0; --s)
            if (count[static_cast<std::size_t>(s)] != 0.0)
                count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
        reach += r;
    }
    const int limit = static_cast<int>(std::lround(2.0 * w));
    double below = 0.0;
    for (int s = 0; s <= std::min(limit, total); ++s)
        below += count[static_cast<std::size_t>(s)];
    return below / std::ldexp(1.0, static_cast<int>(ranks.size()));
}

} // namespace

WilcoxonOutcome wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ArgumentError("wilcoxon: samples differ in length (" + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()) + ")");
    if (a.empty())
        throw ArgumentError("wilcoxon: at least one pair is required");

    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i] - b[i];
        if (!std::isfinite(v))
            throw ArgumentError("wilcoxon: non-finite difference");
        if (v != 0.0)
            d.push_back(v);
    }

    WilcoxonOutcome out;
    out.n_effective = static_cast<int>(d.size());
    if (d.empty()) {
        out.degenerate = true;
        return out;
    }

    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<double> rank(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]]))
            ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            rank[order[k]] = avg;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    for (std::size_t i = 0; i < n; ++i)
        (d[i] > 0.0 ? out.w_plus : out.w_minus) += rank[i];
    out.w_statistic = std::min(out.w_plus, out.w_minus);

    if (out.n_effective <= kExactWilcoxonLimit) {
        out.method = WilcoxonMethod::exact;
        out.p_two_sided = std::min(1.0, 2.0 * exact_lower_tail(rank, out.w_statistic));
        return out;
    }

    out.method = WilcoxonMethod::normal_approx;
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) {
        out.p_two_sided = 1.0;
        return out;
    }
    const double z = std::min(0.0, out.w_statistic - mean + 0.5) / std::sqrt(var);
    out.p_two_sided = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
    return out;
}

WilcoxonOutcome compare_pipelines(const CVResult& a, const CVResult& b)
{
    if (!(a.protocol == b.protocol))
        throw ArgumentError("compare_pipelines: the results use different CV protocols");
    if (a.sample_count() != b.sample_count())
        throw ArgumentError("compare_pipelines: sample counts differ");
    const auto ra = a.per_sample_mean_squared_residual();
    const auto rb = b.per_sample_mean_squared_residual();
    return wilcoxon_signed_rank(ra, rb);
}

} // namespace ctmass
