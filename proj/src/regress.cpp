#include "ctmass/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ctmass/error.hpp"
#include "ctmass/rng.hpp"

namespace ctmass {

std::string to_string(RegressorKind kind)
{
    switch (kind) {
    case RegressorKind::linear:
        return "linear";
    case RegressorKind::pls:
        return "pls";
    case RegressorKind::lasso:
        return "lasso";
    case RegressorKind::ridge:
        return "ridge";
    case RegressorKind::knn:
        return "knn";
    }
    return "unknown";
}

RegressorKind parse_kind(const std::string& name)
{
    for (auto k : kAllKinds)
        if (to_string(k) == name)
            return k;
    throw ArgumentError("unknown regressor kind '" + name + "'");
}

std::string to_string(KnnWeighting w)
{
    return w == KnnWeighting::uniform ? "uniform" : "distance";
}

KnnWeighting parse_weighting(const std::string& name)
{
    if (name == "uniform")
        return KnnWeighting::uniform;
    if (name == "distance")
        return KnnWeighting::distance;
    throw ArgumentError("unknown knn weighting '" + name + "'");
}

void RegressorSpec::validate() const
{
    switch (kind) {
    case RegressorKind::linear:
        break;
    case RegressorKind::pls:
        if (n_components < 1)
            throw ArgumentError("pls: n_components must be >= 1");
        break;
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        if (!(lambda >= 0.01 && lambda <= 10.0))
            throw ArgumentError(to_string(kind) + ": lambda must lie in [0.01, 10]");
        break;
    case RegressorKind::knn:
        if (k < 1 || k > 13)
            throw ArgumentError("knn: k must lie in [1, 13]");
        if (p < 1 || p > 6)
            throw ArgumentError("knn: p must lie in [1, 6]");
        break;
    }
}

std::string RegressorSpec::describe() const
{
    std::ostringstream s;
    s.precision(17);
    s << to_string(kind) << '(';
    switch (kind) {
    case RegressorKind::linear:
        s << "fit_intercept=" << (fit_intercept ? "true" : "false");
        break;
    case RegressorKind::pls:
        s << "n_components=" << n_components;
        break;
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        s << "lambda=" << lambda;
        break;
    case RegressorKind::knn:
        s << "k=" << k << ",weighting=" << to_string(weighting) << ",p=" << p;
        break;
    }
    s << ')';
    return s.str();
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void require_finite(const MatrixXd& X, const VectorXd& y)
{
    if (!X.allFinite() || !y.allFinite())
        throw ArgumentError("fit: non-finite input values");
}

std::vector<int> resolve_columns(std::span<const int> selected, Eigen::Index cols)
{
    std::vector<int> out;
    if (selected.empty()) {
        out.resize(static_cast<std::size_t>(cols));
        std::iota(out.begin(), out.end(), 0);
        return out;
    }
    out.assign(selected.begin(), selected.end());
    for (int c : out)
        if (c < 0 || c >= cols)
            throw ArgumentError("fit: selected column " + std::to_string(c) + " out of range");
    return out;
}

VectorXd soft_threshold_solve_lasso(const MatrixXd& Z, const VectorXd& yc, double lambda)
{
    const Eigen::Index n = Z.rows(), p = Z.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    VectorXd norms(p);
    for (Eigen::Index j = 0; j < p; ++j)
        norms(j) = Z.col(j).squaredNorm() * inv_n;
    VectorXd beta = VectorXd::Zero(p);
    VectorXd r = yc;
    std::vector<char> active(static_cast<std::size_t>(p), 0);

    auto update = [&](Eigen::Index j) {
        if (norms(j) <= 0.0)
            return 0.0;
        const double rho = Z.col(j).dot(r) * inv_n + norms(j) * beta(j);
        double b = 0.0;
        if (rho > lambda)
            b = (rho - lambda) / norms(j);
        else if (rho < -lambda)
            b = (rho + lambda) / norms(j);
        const double delta = b - beta(j);
        if (delta != 0.0) {
            r.noalias() -= delta * Z.col(j);
            beta(j) = b;
        }
        return std::abs(delta);
    };

    // Jumps to the stationary point of the current active set and signs by
    // solving Z_A'Z_A b = Z_A'y - n lambda s. Kept only if every sign
    // survives; near-collinear columns otherwise need very many sweeps.
    auto polish = [&] {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < p; ++j)
            if (beta(j) != 0.0)
                idx.push_back(j);
        if (idx.empty() || static_cast<Eigen::Index>(idx.size()) >= n)
            return;
        const auto a = static_cast<Eigen::Index>(idx.size());
        MatrixXd ZA(n, a);
        VectorXd s(a);
        for (Eigen::Index k = 0; k < a; ++k) {
            ZA.col(k) = Z.col(idx[static_cast<std::size_t>(k)]);
            s(k) = beta(idx[static_cast<std::size_t>(k)]) > 0.0 ? 1.0 : -1.0;
        }
        const auto ldlt = (ZA.transpose() * ZA).ldlt();
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-10 * n))
            return;
        const VectorXd b = ldlt.solve(ZA.transpose() * yc - static_cast<double>(n) * lambda * s);
        if (!b.allFinite() || ((b.array() * s.array()) <= 0.0).any())
            return;
        for (Eigen::Index k = 0; k < a; ++k)
            beta(idx[static_cast<std::size_t>(k)]) = b(k);
        r = yc - ZA * b;
    };

    // Full sweeps establish the active set; inner sweeps iterate over it
    // until converged, then a full sweep confirms nothing else moves.
    double delta = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < kLassoMaxSweeps;) {
        delta = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            delta = std::max(delta, update(j));
            active[j] = beta(j) != 0.0;
        }
        ++sweep;
        if (delta < kLassoTolerance)
            return beta;
        while (sweep < kLassoMaxSweeps) {
            double inner = 0.0;
            for (Eigen::Index j = 0; j < p; ++j)
                if (active[j])
                    inner = std::max(inner, update(j));
            ++sweep;
            if (inner < kLassoTolerance)
                break;
            if (sweep % 16 == 0)
                polish();
        }
        polish();
    }
    std::ostringstream msg;
    msg << "lasso: no convergence after " << kLassoMaxSweeps << " sweeps (last max change " << delta
        << ")";
    throw NumericalError(msg.str());
}

// Univariate NIPALS; returns regression coefficients on Z.
VectorXd pls1(const MatrixXd& Z, const VectorXd& yc, int components, int& used)
{
    MatrixXd X = Z;
    VectorXd y = yc;
    const Eigen::Index p = Z.cols();
    MatrixXd W(p, components), P(p, components);
    VectorXd q(components);
    used = 0;
    const double scale = std::max(1.0, Z.norm() * yc.norm());
    for (int a = 0; a < components; ++a) {
        VectorXd w = X.transpose() * y;
        const double wn = w.norm();
        if (!(wn > 1e-12 * scale))
            break;
        w /= wn;
        const VectorXd t = X * w;
        const double tt = t.squaredNorm();
        if (!(tt > 0.0))
            break;
        const VectorXd loading = X.transpose() * t / tt;
        const double qa = y.dot(t) / tt;
        X.noalias() -= t * loading.transpose();
        y.noalias() -= qa * t;
        W.col(a) = w;
        P.col(a) = loading;
        q(a) = qa;
        ++used;
    }
    if (used == 0)
        return VectorXd::Zero(p);
    const MatrixXd Wu = W.leftCols(used);
    const MatrixXd PtW = P.leftCols(used).transpose() * Wu;
    return Wu * PtW.partialPivLu().solve(q.head(used));
}

} // namespace

FittedModel fit(const RegressorSpec& spec, const MatrixXd& X, const VectorXd& y,
                std::span<const int> selected)
{
    spec.validate();
    if (X.rows() != y.size())
        throw ArgumentError("fit: X has " + std::to_string(X.rows()) + " rows but y has " +
                            std::to_string(y.size()));
    if (X.rows() < 2)
        throw ArgumentError("fit: at least two training rows are required");
    if (X.cols() < 1)
        throw ArgumentError("fit: at least one column is required");
    require_finite(X, y);

    FittedModel m;
    m.spec = spec;
    m.input_columns = static_cast<int>(X.cols());
    m.selected_columns = resolve_columns(selected, X.cols());
    if (m.selected_columns.empty())
        throw ArgumentError("fit: empty column selection");
    const auto n = X.rows();
    const auto p = static_cast<Eigen::Index>(m.selected_columns.size());
    if (spec.kind == RegressorKind::knn && n < spec.k)
        throw ArgumentError("fit: knn needs at least k = " + std::to_string(spec.k) + " rows");

    MatrixXd Z(n, p);
    for (Eigen::Index c = 0; c < p; ++c)
        Z.col(c) = X.col(m.selected_columns[static_cast<std::size_t>(c)]);

    const bool center = !(spec.kind == RegressorKind::linear && !spec.fit_intercept);
    m.mean = center ? VectorXd(Z.colwise().mean().transpose()) : VectorXd::Zero(p);
    m.scale.resize(p);
    for (Eigen::Index c = 0; c < p; ++c) {
        const double mu = Z.col(c).mean();
        const double sd = std::sqrt((Z.col(c).array() - mu).square().mean());
        m.scale(c) = sd > 0.0 ? sd : 1.0;
    }
    for (Eigen::Index c = 0; c < p; ++c)
        Z.col(c) = (Z.col(c).array() - m.mean(c)) / m.scale(c);

    const double ybar = center ? y.mean() : 0.0;
    const VectorXd yc = y.array() - ybar;
    m.intercept = ybar;

    switch (spec.kind) {
    case RegressorKind::linear:
        // Minimum-norm least squares, also under rank deficiency.
        m.coefficients = Z.completeOrthogonalDecomposition().solve(yc);
        break;
    case RegressorKind::ridge:
        if (p <= n) {
            MatrixXd A = Z.transpose() * Z;
            A.diagonal().array() += spec.lambda;
            m.coefficients = A.llt().solve(Z.transpose() * yc);
        } else {
            // Same solution through the n x n system.
            MatrixXd K = Z * Z.transpose();
            K.diagonal().array() += spec.lambda;
            m.coefficients = Z.transpose() * K.llt().solve(yc);
        }
        break;
    case RegressorKind::lasso:
        m.coefficients = soft_threshold_solve_lasso(Z, yc, spec.lambda);
        break;
    case RegressorKind::pls: {
        const int comps = static_cast<int>(std::min<Eigen::Index>({spec.n_components, p, n - 1}));
        m.coefficients = pls1(Z, yc, std::max(comps, 1), m.components_used);
        break;
    }
    case RegressorKind::knn:
        m.train_rows = std::move(Z);
        m.train_targets = y;
        break;
    }
    if (spec.kind != RegressorKind::knn && !m.coefficients.allFinite())
        throw NumericalError("fit: non-finite coefficients for " + spec.describe());
    return m;
}

namespace {

double knn_predict_row(const FittedModel& m, const VectorXd& z)
{
    const auto n = m.train_rows.rows();
    const int p = m.spec.p;
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto diff = (m.train_rows.row(i).transpose() - z).array().abs();
        double d;
        if (p == 1)
            d = diff.sum();
        else if (p == 2)
            d = std::sqrt(diff.square().sum());
        else
            d = std::pow(diff.pow(static_cast<double>(p)).sum(), 1.0 / p);
        dist[static_cast<std::size_t>(i)] = {d, i};
    }
    const auto k = static_cast<std::size_t>(m.spec.k);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    if (m.spec.weighting == KnnWeighting::uniform) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            s += m.train_targets(dist[i].second);
        return s / static_cast<double>(k);
    }
    // Distance weighting; exact matches among the neighbours take over.
    double exact_sum = 0.0;
    int exact = 0;
    for (std::size_t i = 0; i < k; ++i)
        if (dist[i].first == 0.0) {
            exact_sum += m.train_targets(dist[i].second);
            ++exact;
        }
    if (exact > 0)
        return exact_sum / exact;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = 1.0 / dist[i].first;
        num += w * m.train_targets(dist[i].second);
        den += w;
    }
    return num / den;
}

} // namespace

VectorXd predict(const FittedModel& model, const MatrixXd& X)
{
    if (X.cols() != model.input_columns)
        throw ArgumentError("predict: expected " + std::to_string(model.input_columns) +
                            " columns, got " + std::to_string(X.cols()));
    const auto p = static_cast<Eigen::Index>(model.selected_columns.size());
    MatrixXd Z(X.rows(), p);
    for (Eigen::Index c = 0; c < p; ++c)
        Z.col(c) = (X.col(model.selected_columns[static_cast<std::size_t>(c)]).array() - model.mean(c)) /
                   model.scale(c);
    if (model.spec.kind != RegressorKind::knn)
        return (Z * model.coefficients).array() + model.intercept;
    VectorXd out(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r)
        out(r) = knn_predict_row(model, Z.row(r).transpose());
    return out;
}

double r2(std::span<const double> y, std::span<const double> yhat)
{
    if (y.size() != yhat.size())
        throw ArgumentError("r2: length mismatch");
    if (y.size() < 2)
        throw ArgumentError("r2: at least two samples are required");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (!(ss_tot > 0.0))
        throw DegenerateInputError("r2: target variance is zero");
    return 1.0 - ss_res / ss_tot;
}

double r2(const VectorXd& y, const VectorXd& yhat)
{
    return r2(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
              std::span<const double>(yhat.data(), static_cast<std::size_t>(yhat.size())));
}

void CVProtocol::validate() const
{
    if (folds < 2)
        throw ArgumentError("cv: folds must be >= 2");
    if (repeats < 1)
        throw ArgumentError("cv: repeats must be >= 1");
}

FoldPlan make_fold_plan(std::size_t rows, const CVProtocol& protocol)
{
    protocol.validate();
    const auto folds = static_cast<std::size_t>(protocol.folds);
    if (rows < folds)
        throw ArgumentError("cv: " + std::to_string(rows) + " rows cannot fill " +
                            std::to_string(folds) + " folds");
    FoldPlan plan;
    plan.protocol = protocol;
    plan.rows = rows;
    plan.test.resize(static_cast<std::size_t>(protocol.repeats));
    plan.train.resize(static_cast<std::size_t>(protocol.repeats));
    for (int r = 0; r < protocol.repeats; ++r) {
        std::vector<int> perm(rows);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(derive_seed(protocol.seed, {static_cast<std::uint64_t>(r)}));
        rng.shuffle(perm.begin(), perm.end());
        std::size_t start = 0;
        for (std::size_t f = 0; f < folds; ++f) {
            const std::size_t size = rows / folds + (f < rows % folds ? 1 : 0);
            std::vector<int> test(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                  perm.begin() + static_cast<std::ptrdiff_t>(start + size));
            std::sort(test.begin(), test.end());
            std::vector<int> train;
            train.reserve(rows - size);
            std::vector<char> held(rows, 0);
            for (int t : test)
                held[static_cast<std::size_t>(t)] = 1;
            for (std::size_t i = 0; i < rows; ++i)
                if (!held[i])
                    train.push_back(static_cast<int>(i));
            plan.test[r].push_back(std::move(test));
            plan.train[r].push_back(std::move(train));
            start += size;
        }
    }
    return plan;
}

std::vector<double> CVResult::per_sample_mean_squared_residual() const
{
    const std::size_t n = sample_count();
    std::vector<double> out(n, 0.0);
    for (const auto& rep : squared_residuals)
        for (std::size_t i = 0; i < n; ++i)
            out[i] += rep[i];
    for (auto& v : out)
        v /= static_cast<double>(squared_residuals.size());
    return out;
}

CVResult repeated_kfold(const RegressorSpec& spec, const MatrixXd& X, const VectorXd& y,
                        const CVProtocol& protocol, std::span<const int> selected)
{
    return repeated_kfold(spec, X, y, make_fold_plan(static_cast<std::size_t>(X.rows()), protocol),
                          selected);
}

CVResult repeated_kfold(const RegressorSpec& spec, const MatrixXd& X, const VectorXd& y,
                        const FoldPlan& plan, std::span<const int> selected)
{
    if (plan.rows != static_cast<std::size_t>(X.rows()) || X.rows() != y.size())
        throw ArgumentError("cv: fold plan does not match the data");
    const auto cols = resolve_columns(selected, X.cols());

    CVResult out;
    out.protocol = plan.protocol;
    out.predictions.assign(plan.test.size(), std::vector<double>(plan.rows, 0.0));
    out.squared_residuals.assign(plan.test.size(), std::vector<double>(plan.rows, 0.0));
    for (std::size_t r = 0; r < plan.test.size(); ++r) {
        for (std::size_t f = 0; f < plan.test[r].size(); ++f) {
            const auto& test = plan.test[r][f];
            const auto& train = plan.train[r][f];
            if (test.empty())
                throw ArgumentError("cv: empty fold");
            MatrixXd Xtr(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(cols.size()));
            VectorXd ytr(static_cast<Eigen::Index>(train.size()));
            for (std::size_t i = 0; i < train.size(); ++i) {
                for (std::size_t c = 0; c < cols.size(); ++c)
                    Xtr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = X(train[i], cols[c]);
                ytr(static_cast<Eigen::Index>(i)) = y(train[i]);
            }
            MatrixXd Xte(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(cols.size()));
            VectorXd yte(static_cast<Eigen::Index>(test.size()));
            for (std::size_t i = 0; i < test.size(); ++i) {
                for (std::size_t c = 0; c < cols.size(); ++c)
                    Xte(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = X(test[i], cols[c]);
                yte(static_cast<Eigen::Index>(i)) = y(test[i]);
            }
            const auto model = fit(spec, Xtr, ytr);
            const VectorXd yhat = predict(model, Xte);
            out.fold_r2.push_back(r2(yte, yhat));
            for (std::size_t i = 0; i < test.size(); ++i) {
                const double e = yte(static_cast<Eigen::Index>(i)) - yhat(static_cast<Eigen::Index>(i));
                out.predictions[r][static_cast<std::size_t>(test[i])] = yhat(static_cast<Eigen::Index>(i));
                out.squared_residuals[r][static_cast<std::size_t>(test[i])] = e * e;
            }
        }
    }
    const double n = static_cast<double>(out.fold_r2.size());
    out.mean_r2 = std::accumulate(out.fold_r2.begin(), out.fold_r2.end(), 0.0) / n;
    double var = 0.0;
    for (double v : out.fold_r2)
        var += (v - out.mean_r2) * (v - out.mean_r2);
    out.std_r2 = std::sqrt(var / n);
    return out;
}

} // namespace ctmass
