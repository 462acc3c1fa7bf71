#include "ctmass/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctmass/error.hpp"

namespace ctmass {

namespace {

json vec3(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
json idx3(const Index3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 read_vec3(const json& j, const char* what)
{
    if (!j.is_array() || j.size() != 3)
        throw FormatError(std::string(what) + ": expected an array of 3 numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Index3 read_idx3(const json& j, const char* what)
{
    if (!j.is_array() || j.size() != 3)
        throw FormatError(std::string(what) + ": expected an array of 3 integers");
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

json eigen(const Eigen::VectorXd& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v(i));
    return a;
}

Eigen::VectorXd read_eigen(const json& j)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

template <class T>
void maybe(const json& j, const char* key, T& field)
{
    if (j.contains(key))
        field = j.at(key).get<T>();
}

// Wraps nlohmann exceptions raised while reading a record.
template <class F>
auto guarded(const char* what, F&& f)
{
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

} // namespace

json to_json(const Geometry& g)
{
    return {{"dims", idx3(g.dims)}, {"spacing", vec3(g.spacing)}, {"origin", vec3(g.origin)}};
}

Geometry geometry_from_json(const json& j)
{
    return guarded("geometry", [&] {
        Geometry g;
        g.dims = read_idx3(j.at("dims"), "dims");
        g.spacing = read_vec3(j.at("spacing"), "spacing");
        g.origin = read_vec3(j.at("origin"), "origin");
        g.validate();
        return g;
    });
}

json to_json(const BSplineTransform& t)
{
    return {{"domain", to_json(t.domain())},
            {"grid_origin", vec3(t.grid_origin())},
            {"grid_spacing", vec3(t.grid_spacing())},
            {"grid_dims", idx3(t.grid_dims())},
            {"displacements", t.displacements()}};
}

BSplineTransform transform_from_json(const json& j)
{
    return guarded("transform", [&] {
        BSplineTransform t(geometry_from_json(j.at("domain")), read_vec3(j.at("grid_origin"), "grid_origin"),
                           read_vec3(j.at("grid_spacing"), "grid_spacing"),
                           read_idx3(j.at("grid_dims"), "grid_dims"),
                           j.at("displacements").get<std::vector<double>>());
        t.validate();
        return t;
    });
}

json to_json(const RegistrationConfig& c)
{
    return {{"levels", c.levels},
            {"max_iterations_per_level", c.max_iterations_per_level},
            {"mi_bins", c.mi_bins},
            {"samples_per_iteration", c.samples_per_iteration},
            {"final_grid_spacing", c.final_grid_spacing},
            {"sgd_a", c.sgd_a},
            {"sgd_A", c.sgd_A},
            {"sgd_alpha", c.sgd_alpha},
            {"mask_threshold", c.mask_threshold},
            {"air_threshold", c.air_threshold},
            {"seed", c.seed}};
}

RegistrationConfig registration_config_from_json(const json& j, RegistrationConfig c)
{
    return guarded("registration", [&] {
        maybe(j, "levels", c.levels);
        maybe(j, "max_iterations_per_level", c.max_iterations_per_level);
        maybe(j, "mi_bins", c.mi_bins);
        maybe(j, "samples_per_iteration", c.samples_per_iteration);
        maybe(j, "final_grid_spacing", c.final_grid_spacing);
        maybe(j, "sgd_a", c.sgd_a);
        maybe(j, "sgd_A", c.sgd_A);
        maybe(j, "sgd_alpha", c.sgd_alpha);
        maybe(j, "mask_threshold", c.mask_threshold);
        maybe(j, "air_threshold", c.air_threshold);
        maybe(j, "seed", c.seed);
        c.validate();
        return c;
    });
}

json to_json(const HistogramSpec& h)
{
    return {{"lo", h.lo}, {"hi", h.hi}, {"bin_width", h.bin_width}};
}

HistogramSpec histogram_from_json(const json& j, HistogramSpec h)
{
    return guarded("histogram", [&] {
        maybe(j, "lo", h.lo);
        maybe(j, "hi", h.hi);
        maybe(j, "bin_width", h.bin_width);
        h.validate();
        return h;
    });
}

json to_json(const CVProtocol& p)
{
    return {{"folds", p.folds}, {"repeats", p.repeats}, {"seed", p.seed}};
}

CVProtocol protocol_from_json(const json& j, CVProtocol p)
{
    return guarded("cv", [&] {
        maybe(j, "folds", p.folds);
        maybe(j, "repeats", p.repeats);
        maybe(j, "seed", p.seed);
        p.validate();
        return p;
    });
}

json to_json(const AnnealingSchedule& s)
{
    return {{"n_iterations", s.n_iterations},
            {"t0", s.t0},
            {"t_start", s.t_start},
            {"early_stop_window", s.early_stop_window}};
}

AnnealingSchedule schedule_from_json(const json& j, AnnealingSchedule s)
{
    return guarded("annealing", [&] {
        maybe(j, "n_iterations", s.n_iterations);
        maybe(j, "t0", s.t0);
        maybe(j, "t_start", s.t_start);
        maybe(j, "early_stop_window", s.early_stop_window);
        s.validate();
        return s;
    });
}

json to_json(const RegressorSpec& s)
{
    json j = {{"kind", to_string(s.kind)}};
    switch (s.kind) {
    case RegressorKind::linear:
        j["fit_intercept"] = s.fit_intercept;
        break;
    case RegressorKind::pls:
        j["n_components"] = s.n_components;
        break;
    case RegressorKind::lasso:
    case RegressorKind::ridge:
        j["lambda"] = s.lambda;
        break;
    case RegressorKind::knn:
        j["k"] = s.k;
        j["weighting"] = to_string(s.weighting);
        j["p"] = s.p;
        break;
    }
    return j;
}

RegressorSpec spec_from_json(const json& j)
{
    return guarded("regressor", [&] {
        RegressorSpec s;
        s.kind = parse_kind(j.at("kind").get<std::string>());
        maybe(j, "fit_intercept", s.fit_intercept);
        maybe(j, "n_components", s.n_components);
        maybe(j, "lambda", s.lambda);
        maybe(j, "k", s.k);
        maybe(j, "p", s.p);
        if (j.contains("weighting"))
            s.weighting = parse_weighting(j.at("weighting").get<std::string>());
        s.validate();
        return s;
    });
}

json to_json(const FittedModel& m, std::span<const std::string> column_names)
{
    json names = json::array();
    for (int c : m.selected_columns)
        names.push_back(c >= 0 && static_cast<std::size_t>(c) < column_names.size()
                            ? column_names[static_cast<std::size_t>(c)]
                            : std::string());
    json j = {{"spec", to_json(m.spec)},
              {"input_columns", m.input_columns},
              {"selected_columns", m.selected_columns},
              {"selected_names", names},
              {"mean", eigen(m.mean)},
              {"scale", eigen(m.scale)}};
    if (m.spec.kind == RegressorKind::knn) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < m.train_rows.rows(); ++r)
            rows.push_back(eigen(m.train_rows.row(r).transpose()));
        j["train_rows"] = rows;
        j["train_targets"] = eigen(m.train_targets);
    } else {
        j["coefficients"] = eigen(m.coefficients);
        j["intercept"] = m.intercept;
        if (m.spec.kind == RegressorKind::pls)
            j["components_used"] = m.components_used;
    }
    return j;
}

FittedModel model_from_json(const json& j)
{
    return guarded("model", [&] {
        FittedModel m;
        m.spec = spec_from_json(j.at("spec"));
        m.input_columns = j.at("input_columns").get<int>();
        m.selected_columns = j.at("selected_columns").get<std::vector<int>>();
        m.mean = read_eigen(j.at("mean"));
        m.scale = read_eigen(j.at("scale"));
        const auto p = static_cast<Eigen::Index>(m.selected_columns.size());
        if (m.mean.size() != p || m.scale.size() != p)
            throw FormatError("model: standardization length differs from the selected columns");
        for (int c : m.selected_columns)
            if (c < 0 || c >= m.input_columns)
                throw FormatError("model: selected column out of range");
        if (m.spec.kind == RegressorKind::knn) {
            const auto& rows = j.at("train_rows");
            m.train_rows.resize(static_cast<Eigen::Index>(rows.size()), p);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].size() != static_cast<std::size_t>(p))
                    throw FormatError("model: ragged training rows");
                m.train_rows.row(static_cast<Eigen::Index>(r)) = read_eigen(rows[r]).transpose();
            }
            m.train_targets = read_eigen(j.at("train_targets"));
            if (m.train_targets.size() != m.train_rows.rows())
                throw FormatError("model: training target count differs from the row count");
        } else {
            m.coefficients = read_eigen(j.at("coefficients"));
            if (m.coefficients.size() != p)
                throw FormatError("model: coefficient count differs from the selected columns");
            m.intercept = j.at("intercept").get<double>();
            maybe(j, "components_used", m.components_used);
        }
        return m;
    });
}

json to_json(const SelectionResult& r, std::span<const std::string> column_names)
{
    json j = {{"kind", to_string(r.kind)},
              {"feature_selection", r.select_features},
              {"failed", r.failed}};
    if (r.failed) {
        j["error"] = r.error;
        return j;
    }
    const auto sel = r.best_config.selected();
    json names = json::array();
    for (int c : sel)
        names.push_back(static_cast<std::size_t>(c) < column_names.size()
                            ? column_names[static_cast<std::size_t>(c)]
                            : std::string());
    std::size_t accepted = 0, failed = 0;
    for (const auto& e : r.trace) {
        accepted += e.accepted;
        failed += e.failed;
    }
    j["spec"] = to_json(r.best_config.spec);
    j["selected_columns"] = sel;
    j["selected_names"] = names;
    j["best_score"] = r.best_score;
    double mse = 0.0;
    const auto per_sample = r.best_cv.per_sample_mean_squared_residual();
    for (double v : per_sample)
        mse += v;
    if (!per_sample.empty())
        mse /= static_cast<double>(per_sample.size());
    j["cv"] = {{"protocol", to_json(r.best_cv.protocol)},
               {"mean_r2", r.best_cv.mean_r2},
               {"std_r2", r.best_cv.std_r2},
               {"rmse_g", std::sqrt(mse)},
               {"fold_r2", r.best_cv.fold_r2}};
    j["stop_reason"] = to_string(r.stop_reason);
    j["stop_iteration"] = r.stop_iteration;
    j["final_temperature"] = r.final_temperature;
    j["trace_summary"] = {{"iterations", r.trace.size()},
                          {"accepted", accepted},
                          {"failed", failed},
                          {"distinct_evaluations", r.evaluations}};
    return j;
}

json to_json(const WilcoxonOutcome& w)
{
    return {{"w_statistic", w.w_statistic},
            {"w_plus", w.w_plus},
            {"w_minus", w.w_minus},
            {"n_effective", w.n_effective},
            {"p_two_sided", w.p_two_sided},
            {"method", to_string(w.method)},
            {"degenerate", w.degenerate}};
}

void write_json(const json& j, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_trace_csv(const SelectionResult& r, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "iteration,score,temperature,accepted,new_best,failed\n";
    for (const auto& e : r.trace)
        out << e.iteration << ',' << format_double(e.score) << ',' << format_double(e.temperature) << ','
            << int(e.accepted) << ',' << int(e.new_best) << ',' << int(e.failed) << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

} // namespace ctmass
