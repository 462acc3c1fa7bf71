#include "ctmass/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "ctmass/error.hpp"
#include "ctmass/parallel.hpp"

namespace ctmass {

const std::vector<double>& SearchSpace::lambda_grid()
{
    static const std::vector<double> grid = [] {
        std::vector<double> g;
        for (int i = 0; i < 25; ++i)
            g.push_back(std::pow(10.0, -2.0 + 3.0 * i / 24.0));
        g.front() = 0.01;
        g.back() = 10.0;
        return g;
    }();
    return grid;
}

int SearchSpace::max_components(int selected_features)
{
    const int root = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(selected_features))));
    return std::max(2, root);
}

int Configuration::selected_count() const
{
    return static_cast<int>(std::count(bits.begin(), bits.end(), 1));
}

std::vector<int> Configuration::selected() const
{
    std::vector<int> out;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i])
            out.push_back(static_cast<int>(i));
    return out;
}

std::string Configuration::key() const
{
    std::string k(bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i])
            k[i] = '1';
    return k + '|' + spec.describe();
}

void Configuration::validate() const
{
    if (selected_count() < 1)
        throw ArgumentError("configuration: empty feature subset");
    spec.validate();
    if (spec.kind == RegressorKind::pls &&
        (spec.n_components < 2 || spec.n_components > SearchSpace::max_components(selected_count())))
        throw ArgumentError("configuration: n_components outside its grid");
    if (spec.kind == RegressorKind::lasso || spec.kind == RegressorKind::ridge) {
        const auto& g = SearchSpace::lambda_grid();
        if (std::find(g.begin(), g.end(), spec.lambda) == g.end())
            throw ArgumentError("configuration: lambda outside its grid");
    }
}

void AnnealingSchedule::validate() const
{
    if (n_iterations < 1)
        throw ArgumentError("annealing: n_iterations must be >= 1");
    if (!(t0 > 0.0) || !(t0 < t_start) || !std::isfinite(t_start))
        throw ArgumentError("annealing: need 0 < t0 < t_start");
    if (early_stop_window < 1)
        throw ArgumentError("annealing: early_stop_window must be >= 1");
}

double AnnealingSchedule::alpha() const
{
    return std::pow(t0 / t_start, 1.0 / n_iterations);
}

double AnnealingSchedule::temperature(int iteration) const
{
    // Evaluated as a power of the ratio so the last iteration lands on t0.
    return t_start * std::pow(t0 / t_start, static_cast<double>(iteration) / n_iterations);
}

std::string to_string(StopReason r)
{
    return r == StopReason::exhausted ? "exhausted" : "early_stop";
}

namespace {

template <class T>
T pick(const std::vector<T>& grid, Rng& rng)
{
    return grid[rng.index(grid.size())];
}

// Uniform over grid values other than `current`.
template <class T>
T pick_other(const std::vector<T>& grid, const T& current, Rng& rng)
{
    std::vector<T> rest;
    for (const auto& v : grid)
        if (!(v == current))
            rest.push_back(v);
    return rest.empty() ? current : pick(rest, rng);
}

std::vector<int> int_range(int lo, int hi)
{
    std::vector<int> v;
    for (int i = lo; i <= hi; ++i)
        v.push_back(i);
    return v;
}

// Hyperparameters of the spec that can currently take another value.
std::vector<int> movable_parameters(const Configuration& c)
{
    switch (c.spec.kind) {
    case RegressorKind::linear:
        return {0};
    case RegressorKind::pls:
        if (SearchSpace::max_components(c.selected_count()) > 2)
            return {0};
        return {};
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        return {0};
    case RegressorKind::knn:
        return {0, 1, 2};
    }
    return {};
}

void clamp_components(Configuration& c)
{
    if (c.spec.kind == RegressorKind::pls)
        c.spec.n_components = std::clamp(c.spec.n_components, 2,
                                         SearchSpace::max_components(c.selected_count()));
}

void resample_parameter(Configuration& c, int which, Rng& rng)
{
    auto& s = c.spec;
    switch (s.kind) {
    case RegressorKind::linear:
        s.fit_intercept = !s.fit_intercept;
        break;
    case RegressorKind::pls:
        s.n_components = pick_other(int_range(2, SearchSpace::max_components(c.selected_count())),
                                    s.n_components, rng);
        break;
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        s.lambda = pick_other(SearchSpace::lambda_grid(), s.lambda, rng);
        break;
    case RegressorKind::knn:
        if (which == 0)
            s.k = pick_other(int_range(SearchSpace::k_min, SearchSpace::k_max), s.k, rng);
        else if (which == 1)
            s.weighting = s.weighting == KnnWeighting::uniform ? KnnWeighting::distance
                                                               : KnnWeighting::uniform;
        else
            s.p = pick_other(int_range(SearchSpace::p_min, SearchSpace::p_max), s.p, rng);
        break;
    }
}

bool flip_bit(Configuration& c, Rng& rng)
{
    const std::size_t n = c.bits.size();
    if (n < 2)
        return false;
    std::size_t i = rng.index(n);
    // Redraw among the other columns if clearing the last set bit.
    while (c.bits[i] && c.selected_count() == 1)
        i = rng.index(n);
    c.bits[i] = !c.bits[i];
    clamp_components(c);
    return true;
}

} // namespace

Configuration random_configuration(RegressorKind kind, int features, Rng& rng, bool select_features)
{
    if (features < 1)
        throw ArgumentError("random_configuration: at least one feature is required");
    Configuration c;
    c.bits.assign(static_cast<std::size_t>(features), 1);
    if (select_features) {
        do {
            for (auto& b : c.bits)
                b = rng.coin() ? 1 : 0;
        } while (c.selected_count() == 0);
    }
    c.spec.kind = kind;
    switch (kind) {
    case RegressorKind::linear:
        c.spec.fit_intercept = rng.coin();
        break;
    case RegressorKind::pls:
        c.spec.n_components = pick(int_range(2, SearchSpace::max_components(c.selected_count())), rng);
        break;
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        c.spec.lambda = pick(SearchSpace::lambda_grid(), rng);
        break;
    case RegressorKind::knn:
        c.spec.k = pick(int_range(SearchSpace::k_min, SearchSpace::k_max), rng);
        c.spec.weighting = rng.coin() ? KnnWeighting::distance : KnnWeighting::uniform;
        c.spec.p = pick(int_range(SearchSpace::p_min, SearchSpace::p_max), rng);
        break;
    }
    return c;
}

Configuration propose_move(const Configuration& config, Rng& rng, bool select_features)
{
    Configuration c = config;
    const bool can_flip = select_features && c.bits.size() >= 2;
    const auto params = movable_parameters(c);
    bool flip = can_flip && (params.empty() || rng.coin());
    if (flip) {
        flip_bit(c, rng);
        return c;
    }
    if (!params.empty())
        resample_parameter(c, params[rng.index(params.size())], rng);
    return c;
}

double acceptance_probability(double e_old, double e_new, double temperature)
{
    if (!(temperature > 0.0))
        throw ArgumentError("acceptance_probability: temperature must be > 0");
    if (std::isnan(e_new) || e_new == -std::numeric_limits<double>::infinity())
        return 0.0;
    if (e_new >= e_old)
        return 1.0;
    return std::exp((e_new - e_old) / temperature);
}

SelectionResult anneal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, RegressorKind kind,
                       const AnnealingSchedule& schedule, const CVProtocol& protocol,
                       std::uint64_t seed, const AnnealOptions& options)
{
    schedule.validate();
    if (X.rows() != y.size())
        throw ArgumentError("anneal: X and y row counts differ");
    if (X.cols() < 1)
        throw ArgumentError("anneal: no feature columns");
    const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(X.rows()), protocol);
    const double neg_inf = -std::numeric_limits<double>::infinity();

    SelectionResult res;
    res.kind = kind;
    res.select_features = options.select_features;
    res.best_score = neg_inf;

    std::unordered_map<std::string, double> memo;
    auto score = [&](const Configuration& c) {
        const std::string key = c.key();
        if (auto it = memo.find(key); it != memo.end())
            return it->second;
        double s = neg_inf;
        try {
            const auto sel = c.selected();
            s = repeated_kfold(c.spec, X, y, plan, sel).mean_r2;
            if (!std::isfinite(s))
                s = neg_inf;
        } catch (const Error&) {
            s = neg_inf;
        }
        ++res.evaluations;
        memo.emplace(key, s);
        return s;
    };

    Rng rng(seed);
    Configuration current = random_configuration(kind, static_cast<int>(X.cols()), rng,
                                                 options.select_features);
    double current_score = neg_inf;
    int last_best = 0;

    for (int it = 1; it <= schedule.n_iterations; ++it) {
        const double T = schedule.temperature(it);
        TraceEntry e;
        e.iteration = it;
        e.temperature = T;
        Configuration candidate = it == 1 ? current : propose_move(current, rng, options.select_features);
        const double s = score(candidate);
        e.score = s;
        e.failed = s == neg_inf;
        if (it == 1) {
            e.accepted = true;
        } else {
            // The uniform draw is always consumed so the random stream does
            // not depend on the outcome of the comparison.
            const double u = rng.uniform();
            e.accepted = !e.failed && u < acceptance_probability(current_score, s, T);
        }
        if (e.accepted) {
            current = std::move(candidate);
            current_score = s;
        }
        if (!e.failed && s > res.best_score) {
            res.best_score = s;
            res.best_config = e.accepted ? current : candidate;
            e.new_best = true;
            last_best = it;
        }
        res.trace.push_back(e);
        res.stop_iteration = it;
        res.final_temperature = T;
        // A run whose candidates all fail has no best to measure progress from.
        if (last_best == 0)
            continue;
        if (it - last_best >= schedule.early_stop_window && it < schedule.n_iterations) {
            res.stop_reason = StopReason::early_stop;
            break;
        }
    }

    if (res.best_score == neg_inf) {
        res.failed = true;
        res.error = "every candidate configuration failed to score";
        res.best_config = current;
        return res;
    }
    res.best_cv = repeated_kfold(res.best_config.spec, X, y, plan, res.best_config.selected());
    return res;
}

std::uint64_t kind_seed(std::uint64_t seed, RegressorKind kind)
{
    return derive_seed(seed, {tag(to_string(kind).c_str())});
}

std::map<RegressorKind, SelectionResult>
select_over_kinds(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::span<const RegressorKind> kinds, const AnnealingSchedule& schedule,
                  const CVProtocol& protocol, std::uint64_t seed, const AnnealOptions& options,
                  int jobs)
{
    std::vector<SelectionResult> results(kinds.size());
    parallel_for(kinds.size(), jobs, [&](std::size_t i) {
        try {
            results[i] = anneal(X, y, kinds[i], schedule, protocol, kind_seed(seed, kinds[i]), options);
        } catch (const Error& e) {
            results[i].kind = kinds[i];
            results[i].select_features = options.select_features;
            results[i].failed = true;
            results[i].error = e.what();
        }
    });
    std::map<RegressorKind, SelectionResult> out;
    for (std::size_t i = 0; i < kinds.size(); ++i)
        out[kinds[i]] = std::move(results[i]);
    return out;
}

} // namespace ctmass
