#pragma once

// Joint feature subset and hyperparameter search by simulated annealing,
// scored by repeated k-fold mean r^2.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctmass/regress.hpp"
#include "ctmass/rng.hpp"

namespace ctmass {

// Hyperparameter grids searched per kind.
struct SearchSpace {
    static const std::vector<double>& lambda_grid(); // 25 log-spaced values in [0.01, 10]
    static constexpr int k_min = 1, k_max = 13;
    static constexpr int p_min = 1, p_max = 6;
    // PLS components range over [2, max(2, ceil(sqrt(F)))].
    static int max_components(int selected_features);
};

struct Configuration {
    std::vector<char> bits; // one per feature column
    RegressorSpec spec;

    int selected_count() const;
    std::vector<int> selected() const;
    std::string key() const; // memoization key
    // Throws ArgumentError on an empty subset or an off-grid parameter.
    void validate() const;
    bool operator==(const Configuration&) const = default;
};

struct AnnealingSchedule {
    int n_iterations = 8000;
    double t0 = 1e-7;
    double t_start = 1.0;
    int early_stop_window = 500;

    void validate() const;
    double alpha() const; // (t0 / t_start)^(1 / n_iterations)
    // Temperature at iteration i (1-based): t_start * alpha^i.
    double temperature(int iteration) const;
};

enum class StopReason { exhausted, early_stop };
std::string to_string(StopReason r);

struct TraceEntry {
    int iteration = 0;
    double score = 0.0; // -inf for a failed candidate
    double temperature = 0.0;
    bool accepted = false;
    bool new_best = false;
    bool failed = false;
};

struct SelectionResult {
    RegressorKind kind = RegressorKind::linear;
    bool select_features = true;
    Configuration best_config;
    double best_score = 0.0;
    CVResult best_cv;
    std::vector<TraceEntry> trace;
    StopReason stop_reason = StopReason::exhausted;
    int stop_iteration = 0;
    double final_temperature = 0.0;
    int evaluations = 0; // distinct configurations scored
    bool failed = false;
    std::string error;
};

struct AnnealOptions {
    // When false every column stays selected and only hyperparameters move.
    bool select_features = true;
};

// Each bit set with probability 1/2 (redrawn if empty), parameters uniform
// over their grids. All bits set when select_features is false.
Configuration random_configuration(RegressorKind kind, int features, Rng& rng,
                                   bool select_features = true);

// One atomic change: with probability 1/2 a bit flip that never empties the
// subset, otherwise one hyperparameter redrawn from its grid excluding the
// current value.
Configuration propose_move(const Configuration& config, Rng& rng, bool select_features = true);

// min(1, exp((e_new - e_old) / T)); throws ArgumentError when T <= 0.
double acceptance_probability(double e_old, double e_new, double temperature);

// The first iteration scores the random initial configuration; each later
// iteration scores one proposal. Every score uses the same fold plan.
SelectionResult anneal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, RegressorKind kind,
                       const AnnealingSchedule& schedule, const CVProtocol& protocol,
                       std::uint64_t seed, const AnnealOptions& options = {});

// Kind k anneals with seed derive_seed(seed, {tag(to_string(k))}).
std::map<RegressorKind, SelectionResult>
select_over_kinds(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::span<const RegressorKind> kinds, const AnnealingSchedule& schedule,
                  const CVProtocol& protocol, std::uint64_t seed, const AnnealOptions& options = {},
                  int jobs = 1);

std::uint64_t kind_seed(std::uint64_t seed, RegressorKind kind);

} // namespace ctmass
