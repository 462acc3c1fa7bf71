#pragma once

// Regressor families (ordinary least squares, PLS, lasso, ridge, kNN), the
// r^2 score and the repeated k-fold evaluation protocol.
//
// Every family standardizes its input columns with statistics of the
// training rows. Zero-variance columns get scale 1.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctmass {

enum class RegressorKind { linear, pls, lasso, ridge, knn };
enum class KnnWeighting { uniform, distance };

inline constexpr RegressorKind kAllKinds[] = {RegressorKind::linear, RegressorKind::pls,
                                              RegressorKind::lasso, RegressorKind::ridge,
                                              RegressorKind::knn};

std::string to_string(RegressorKind kind);
RegressorKind parse_kind(const std::string& name);
std::string to_string(KnnWeighting w);
KnnWeighting parse_weighting(const std::string& name);

struct RegressorSpec {
    RegressorKind kind = RegressorKind::linear;
    bool fit_intercept = true;  // linear
    int n_components = 2;       // pls
    double lambda = 1.0;        // lasso, ridge
    int k = 5;                  // knn
    KnnWeighting weighting = KnnWeighting::uniform;
    int p = 2;                  // knn: L_p distance

    // Range checks for the hyperparameters this kind uses.
    void validate() const;
    // Canonical text form, e.g. "ridge(lambda=0.1)".
    std::string describe() const;
    bool operator==(const RegressorSpec&) const = default;
};

struct FittedModel {
    RegressorSpec spec;
    std::vector<int> selected_columns; // into the caller's column space
    int input_columns = 0;             // width of X expected by predict
    Eigen::VectorXd mean;              // per selected column
    Eigen::VectorXd scale;
    Eigen::VectorXd coefficients;      // standardized space; linear family
    double intercept = 0.0;
    int components_used = 0;           // pls
    Eigen::MatrixXd train_rows;        // standardized; knn
    Eigen::VectorXd train_targets;     // knn
};

// Fits on the columns listed in `selected` (all columns when empty).
FittedModel fit(const RegressorSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                std::span<const int> selected = {});

Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& X);

// 1 - SS_res / SS_tot; throws DegenerateInputError when var(y) = 0.
double r2(std::span<const double> y, std::span<const double> yhat);
double r2(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// Lasso objective (1/2n)||y - Zb||^2 + lambda ||b||_1 on standardized Z
// and centered y; solved by cyclic coordinate descent.
inline constexpr double kLassoTolerance = 1e-6;
inline constexpr int kLassoMaxSweeps = 10000;

struct CVProtocol {
    int folds = 5;
    int repeats = 20;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const CVProtocol&) const = default;
};

// Row indices of every held-out fold, repeat-major. Repeat r shuffles the
// rows with Rng(derive_seed(seed, {r})) and cuts the permutation into
// contiguous near-equal folds (the first rows % folds folds get one extra).
struct FoldPlan {
    CVProtocol protocol;
    std::size_t rows = 0;
    std::vector<std::vector<std::vector<int>>> test;  // [repeat][fold] -> rows
    std::vector<std::vector<std::vector<int>>> train; // complement of test
};

FoldPlan make_fold_plan(std::size_t rows, const CVProtocol& protocol);

struct CVResult {
    CVProtocol protocol;
    std::vector<double> fold_r2;                      // repeat-major, folds*repeats
    std::vector<std::vector<double>> predictions;     // [repeat][row], out of fold
    std::vector<std::vector<double>> squared_residuals; // [repeat][row]
    double mean_r2 = 0.0;
    double std_r2 = 0.0; // population standard deviation over fold_r2

    std::size_t sample_count() const
    {
        return squared_residuals.empty() ? 0 : squared_residuals.front().size();
    }
    // Mean squared residual of each sample across repeats.
    std::vector<double> per_sample_mean_squared_residual() const;
};

CVResult repeated_kfold(const RegressorSpec& spec, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, const CVProtocol& protocol,
                        std::span<const int> selected = {});

CVResult repeated_kfold(const RegressorSpec& spec, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, const FoldPlan& plan,
                        std::span<const int> selected = {});

} // namespace ctmass
