#include "ctmass/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ctmass/error.hpp"
#include "ctmass/nifti.hpp"
#include "ctmass/parallel.hpp"
#include "ctmass/rng.hpp"
#include "ctmass/serialize.hpp"

namespace ctmass {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p)
{
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

void require_file(const fs::path& p, const std::string& what)
{
    if (!fs::exists(p))
        throw IoError(what + " not found: " + p.string());
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void say(std::ostream* log, const std::string& msg)
{
    if (log)
        *log << msg << std::endl;
}

template <class F>
auto stage(const char* name, F&& f)
{
    try {
        return f();
    } catch (const Error&) {
        rethrow_with_context(std::string("stage ") + name + ": ");
    }
}

std::string cell_name(const TableCell& c)
{
    return c.source + "_" + to_string(c.kind) + (c.feature_selection ? "_fs" : "_all");
}

std::string fixed4(double v)
{
    if (!std::isfinite(v))
        return format_double(v);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

RunConfig RunConfig::from_json_file(const fs::path& path)
{
    const json j = read_json(path);
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    RunConfig c;
    try {
        if (!j.is_object())
            throw FormatError("config: expected a JSON object");
        if (j.contains("seed"))
            c.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& a : j.value("atlases", json::array()))
            c.atlases.push_back({resolve(base, a.at("volume").get<std::string>()),
                                 resolve(base, a.at("mask").get<std::string>())});
        for (const auto& s : j.value("subjects", json::array()))
            c.subjects.push_back({s.at("id").get<std::string>(),
                                  resolve(base, s.at("volume").get<std::string>())});
        if (j.contains("weights_csv"))
            c.weights_csv = resolve(base, j.at("weights_csv").get<std::string>());
        if (j.contains("histogram"))
            c.histogram = histogram_from_json(j.at("histogram"));
        if (j.contains("registration"))
            c.registration = registration_config_from_json(j.at("registration"));
        if (j.contains("cv"))
            c.cv = protocol_from_json(j.at("cv"));
        if (j.contains("annealing"))
            c.annealing = schedule_from_json(j.at("annealing"));
        if (j.contains("kinds")) {
            c.kinds.clear();
            for (const auto& k : j.at("kinds"))
                c.kinds.push_back(parse_kind(k.get<std::string>()));
        }
        if (j.contains("out"))
            c.out = resolve(base, j.at("out").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return c;
}

void RunConfig::validate() const
{
    if (!seed)
        throw ArgumentError("config: a master seed is required");
    if (atlases.empty())
        throw ArgumentError("config: at least one atlas is required");
    if (kinds.empty())
        throw ArgumentError("config: at least one regressor kind is required");
    std::set<RegressorKind> unique_kinds(kinds.begin(), kinds.end());
    if (unique_kinds.size() != kinds.size())
        throw ArgumentError("config: duplicate regressor kinds");
    if (subjects.size() < static_cast<std::size_t>(cv.folds))
        throw ArgumentError("config: " + std::to_string(subjects.size()) + " subjects cannot fill " +
                            std::to_string(cv.folds) + " folds");
    histogram.validate();
    registration.validate();
    cv.validate();
    annealing.validate();
    for (std::size_t i = 0; i < atlases.size(); ++i) {
        require_file(atlases[i].volume, "atlas " + std::to_string(i) + " volume");
        require_file(atlases[i].mask, "atlas " + std::to_string(i) + " mask");
    }
    std::set<std::string> ids;
    for (const auto& s : subjects) {
        if (!ids.insert(s.id).second)
            throw ArgumentError("config: duplicate subject id '" + s.id + "'");
        require_file(s.volume, "subject " + s.id + " volume");
    }
    require_file(weights_csv, "weights CSV");
}

StageSeeds stage_seeds(std::uint64_t master)
{
    return {derive_seed(master, {tag("registration")}), derive_seed(master, {tag("cv")}),
            derive_seed(master, {tag("selection")})};
}

std::vector<std::pair<std::string, double>> read_id_value_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(path.string() + ": empty CSV");
    std::vector<std::pair<std::string, double>> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw FormatError(where + ": expected two cells");
        const std::string value = line.substr(comma + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(value, &used);
        } catch (const std::logic_error&) {
            throw FormatError(where + ": not a number: '" + value + "'");
        }
        if (used != value.size() || !std::isfinite(v))
            throw FormatError(where + ": not a finite number: '" + value + "'");
        out.emplace_back(line.substr(0, comma), v);
    }
    return out;
}

std::vector<FeatureSource> feature_sources(int atlases, const HistogramSpec& spec)
{
    if (atlases < 1)
        throw ArgumentError("feature_sources: at least one atlas is required");
    const int block = kMomentFeatures + spec.bins();
    std::vector<FeatureSource> out;
    auto range = [](int lo, int hi) {
        std::vector<int> v;
        for (int i = lo; i < hi; ++i)
            v.push_back(i);
        return v;
    };
    for (int a = 0; a < atlases; ++a)
        out.push_back({"atlas" + std::to_string(a + 1), range(a * block, (a + 1) * block)});
    out.push_back({"mean", range(atlases * block, (atlases + 1) * block)});
    out.push_back({"multi-atlas", range(0, (atlases + 1) * block)});
    return out;
}

std::vector<TableCell> compute_results_table(const FeatureMatrix& matrix, int atlases,
                                             const HistogramSpec& histogram,
                                             const TableOptions& options)
{
    matrix.validate();
    if (matrix.targets.size() != matrix.rows.size())
        throw ArgumentError("results table: every row needs a target");
    const auto sources = feature_sources(atlases, histogram);
    if (matrix.column_count() != static_cast<std::size_t>(sources.back().columns.size()))
        throw ArgumentError("results table: column count does not match the atlas count");

    const auto n = static_cast<Eigen::Index>(matrix.row_count());
    const auto p = static_cast<Eigen::Index>(matrix.column_count());
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < p; ++c)
            X(r, c) = matrix.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(matrix.targets.data(), n);

    struct Job {
        const FeatureSource* source;
        RegressorKind kind;
        bool fs;
    };
    std::vector<Job> jobs;
    for (const auto& s : sources) {
        if (!options.sources.empty() &&
            std::find(options.sources.begin(), options.sources.end(), s.name) == options.sources.end())
            continue;
        for (bool fs : {false, true}) {
            if ((fs && !options.with_selection) || (!fs && !options.without_selection))
                continue;
            for (auto k : options.kinds)
                jobs.push_back({&s, k, fs});
        }
    }

    std::vector<TableCell> cells(jobs.size());
    parallel_for(jobs.size(), options.jobs, [&](std::size_t i) {
        const auto& job = jobs[i];
        Eigen::MatrixXd Xs(n, static_cast<Eigen::Index>(job.source->columns.size()));
        for (std::size_t c = 0; c < job.source->columns.size(); ++c)
            Xs.col(static_cast<Eigen::Index>(c)) = X.col(job.source->columns[c]);
        const std::uint64_t seed = derive_seed(
            options.selection_seed,
            {tag(job.source->name.c_str()), tag(to_string(job.kind).c_str()), job.fs ? 1u : 0u});
        TableCell cell;
        cell.source = job.source->name;
        cell.kind = job.kind;
        cell.feature_selection = job.fs;
        try {
            cell.result = anneal(Xs, y, job.kind, options.schedule, options.protocol, seed,
                                 AnnealOptions{job.fs});
        } catch (const Error& e) {
            cell.result.kind = job.kind;
            cell.result.select_features = job.fs;
            cell.result.failed = true;
            cell.result.error = e.what();
        }
        // Report columns in the coordinates of the full matrix.
        if (!cell.result.failed) {
            std::vector<char> bits(static_cast<std::size_t>(p), 0);
            for (int c : cell.result.best_config.selected())
                bits[static_cast<std::size_t>(job.source->columns[static_cast<std::size_t>(c)])] = 1;
            cell.result.best_config.bits = std::move(bits);
        }
        cells[i] = std::move(cell);
    });
    return cells;
}

const TableCell* find_cell(const std::vector<TableCell>& cells, const std::string& source,
                           RegressorKind kind, bool feature_selection)
{
    for (const auto& c : cells)
        if (c.source == source && c.kind == kind && c.feature_selection == feature_selection)
            return &c;
    return nullptr;
}

std::string render_results_table(const std::vector<TableCell>& cells,
                                 const std::vector<std::string>& sources,
                                 const std::vector<RegressorKind>& kinds)
{
    std::ostringstream out;
    const int first = 12, width = 20;
    auto pad = [](std::string s, int w) {
        if (static_cast<int>(s.size()) < w)
            s.append(static_cast<std::size_t>(w) - s.size(), ' ');
        return s;
    };
    for (bool fs : {false, true}) {
        if (std::none_of(cells.begin(), cells.end(),
                         [&](const TableCell& c) { return c.feature_selection == fs; }))
            continue;
        out << (fs ? "feature selection" : "no feature selection") << '\n';
        out << pad("", first);
        for (auto k : kinds)
            out << pad(to_string(k), width);
        out << '\n';
        for (const auto& s : sources) {
            out << pad(s, first);
            for (auto k : kinds) {
                const auto* c = find_cell(cells, s, k, fs);
                std::string text = "-";
                if (c && c->result.failed)
                    text = "failed";
                else if (c)
                    text = fixed4(c->result.best_cv.mean_r2) + " +- " + fixed4(c->result.best_cv.std_r2);
                out << pad(text, width);
            }
            out << '\n';
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::vector<Atlas> load_atlases(const std::vector<AtlasPaths>& paths)
{
    std::vector<Atlas> atlases;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        try {
            Atlas a{load_nifti(paths[i].volume), load_mask(paths[i].mask)};
            if (!(a.volume.geometry() == a.mask.geometry()))
                throw ArgumentError("mask geometry differs from the volume");
            atlases.push_back(std::move(a));
        } catch (const Error&) {
            rethrow_with_context("atlas " + std::to_string(i) + ": ");
        }
    }
    return atlases;
}

void write_comparisons(const std::vector<TableCell>& cells, const std::vector<RegressorKind>& kinds,
                       const std::vector<std::string>& sources, const fs::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "pipeline_a,pipeline_b,W,n_effective,p,method\n";
    auto emit = [&](const TableCell* a, const TableCell* b) {
        if (!a || !b || a->result.failed || b->result.failed)
            return;
        const auto w = compare_pipelines(a->result.best_cv, b->result.best_cv);
        out << cell_name(*a) << ',' << cell_name(*b) << ',' << format_double(w.w_statistic) << ','
            << w.n_effective << ',' << format_double(w.p_two_sided) << ',' << to_string(w.method) << '\n';
    };
    // Multi-atlas against every other source, then selection against none.
    for (bool fs : {true, false})
        for (auto k : kinds)
            for (const auto& s : sources)
                if (s != "multi-atlas")
                    emit(find_cell(cells, "multi-atlas", k, fs), find_cell(cells, s, k, fs));
    for (auto k : kinds)
        for (const auto& s : sources)
            emit(find_cell(cells, s, k, true), find_cell(cells, s, k, false));
}

} // namespace

FitSummary run_fit(const RunConfig& config, int jobs, std::ostream* log)
{
    config.validate();
    const fs::path out = config.out;
    if (out.empty())
        throw ArgumentError("fit: no output directory given");
    const StageSeeds seeds = stage_seeds(*config.seed);
    Stopwatch clock;

    const auto atlases = stage("loading", [&] { return load_atlases(config.atlases); });
    std::vector<Volume> scans;
    std::vector<std::string> ids;
    std::vector<double> weights;
    stage("loading", [&] {
        std::map<std::string, double> by_id;
        for (const auto& [id, w] : read_id_value_csv(config.weights_csv))
            if (!by_id.emplace(id, w).second)
                throw ArgumentError("weights CSV: duplicate id '" + id + "'");
        for (const auto& s : config.subjects) {
            const auto it = by_id.find(s.id);
            if (it == by_id.end())
                throw ArgumentError("no weight for subject '" + s.id + "'");
            try {
                scans.push_back(load_nifti(s.volume));
            } catch (const Error&) {
                rethrow_with_context("subject " + s.id + ": ");
            }
            ids.push_back(s.id);
            weights.push_back(it->second);
        }
        return 0;
    });
    say(log, "loaded " + std::to_string(atlases.size()) + " atlases and " +
                 std::to_string(scans.size()) + " subjects");

    fs::create_directories(out / "selection");
    fs::create_directories(out / "models");

    TrainingSetOptions tso;
    tso.histogram = config.histogram;
    tso.registration = config.registration;
    tso.registration.seed = seeds.registration;
    tso.jobs = jobs;
    const TrainingSet training = stage("segmentation", [&] {
        return assemble_training_set(scans, atlases, weights, ids, tso);
    });
    write_feature_csv(training.matrix, out / "features.csv");
    {
        std::ofstream qc(out / "qc.csv");
        qc << "id,atlas,mi_initial,mi_final,mask_voxels\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& seg = training.segmentations[i];
            for (std::size_t a = 0; a < seg.masks.size(); ++a)
                qc << ids[i] << ',' << a + 1 << ',' << format_double(seg.reports[a].mi_initial) << ','
                   << format_double(seg.reports[a].mi_final) << ',' << seg.masks[a].count() << '\n';
        }
    }
    say(log, "segmentation and features done");

    const int m = static_cast<int>(atlases.size());
    TableOptions topt;
    topt.kinds = config.kinds;
    topt.schedule = config.annealing;
    topt.protocol = config.cv;
    topt.protocol.seed = seeds.cv;
    topt.selection_seed = seeds.selection;
    topt.jobs = jobs;
    FitSummary summary;
    summary.cells = stage("selection", [&] {
        return compute_results_table(training.matrix, m, config.histogram, topt);
    });
    say(log, "model selection done");

    std::vector<std::string> source_names;
    for (const auto& s : feature_sources(m, config.histogram))
        source_names.push_back(s.name);
    const auto& names = training.matrix.column_names;

    std::ofstream results(out / "results.csv");
    results << "source,kind,feature_selection,mean_r2,std_r2,selected_features,stop_reason,artifact\n";
    for (const auto& c : summary.cells) {
        const std::string artifact = "selection/" + cell_name(c) + ".json";
        write_json(to_json(c.result, names), out / artifact);
        if (!c.result.failed)
            write_trace_csv(c.result, out / "selection" / (cell_name(c) + "_trace.csv"));
        results << c.source << ',' << to_string(c.kind) << ',' << int(c.feature_selection) << ',';
        if (c.result.failed)
            results << "nan,nan,0,failed,";
        else
            results << format_double(c.result.best_cv.mean_r2) << ','
                    << format_double(c.result.best_cv.std_r2) << ','
                    << c.result.best_config.selected_count() << ','
                    << to_string(c.result.stop_reason) << ',';
        results << artifact << '\n';
    }
    results.close();
    {
        std::ofstream txt(out / "results.txt");
        txt << render_results_table(summary.cells, source_names, config.kinds);
    }
    stage("comparison", [&] {
        write_comparisons(summary.cells, config.kinds, source_names, out / "comparisons.csv");
        return 0;
    });

    // Deployed models: multi-atlas features with selection, refit on all rows.
    const auto n = static_cast<Eigen::Index>(training.matrix.row_count());
    const auto p = static_cast<Eigen::Index>(training.matrix.column_count());
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < p; ++c)
            X(r, c) = training.matrix.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(weights.data(), n);

    json bundle;
    bundle["format"] = "ctmass-bundle-1";
    for (const auto& a : config.atlases)
        bundle["atlases"].push_back(
            {{"volume", fs::absolute(a.volume).lexically_normal().string()},
             {"mask", fs::absolute(a.mask).lexically_normal().string()}});
    bundle["histogram"] = to_json(config.histogram);
    bundle["registration"] = to_json(tso.registration);
    bundle["column_names"] = names;
    bundle["models"] = json::object();
    double best = -std::numeric_limits<double>::infinity();
    stage("models", [&] {
        for (auto k : config.kinds) {
            const auto* c = find_cell(summary.cells, "multi-atlas", k, true);
            if (!c || c->result.failed)
                continue;
            const auto sel = c->result.best_config.selected();
            const auto model = fit(c->result.best_config.spec, X, y, sel);
            const std::string rel = "models/" + to_string(k) + ".json";
            json mj = to_json(model, names);
            mj["cv_mean_r2"] = c->result.best_cv.mean_r2;
            mj["cv_std_r2"] = c->result.best_cv.std_r2;
            write_json(mj, out / rel);
            bundle["models"][to_string(k)] = rel;
            if (c->result.best_cv.mean_r2 > best) {
                best = c->result.best_cv.mean_r2;
                summary.best_kind = k;
            }
        }
        return 0;
    });
    bundle["best_kind"] = summary.best_kind ? to_string(*summary.best_kind) : "";
    write_json(bundle, out / "bundle.json");
    say(log, "fit finished in " + fixed4(clock.seconds()) + " s");
    return summary;
}

std::vector<Prediction> run_predict(const fs::path& bundle_path,
                                    const std::vector<SubjectEntry>& subjects,
                                    const std::optional<RegressorKind>& kind, int jobs)
{
    const json bundle = read_json(bundle_path);
    const fs::path base = bundle_path.parent_path().empty() ? fs::path(".") : bundle_path.parent_path();
    std::vector<AtlasPaths> paths;
    std::string model_rel;
    HistogramSpec histogram;
    RegistrationConfig reg;
    std::vector<std::string> names;
    try {
        for (const auto& a : bundle.at("atlases"))
            paths.push_back({resolve(base, a.at("volume").get<std::string>()),
                             resolve(base, a.at("mask").get<std::string>())});
        histogram = histogram_from_json(bundle.at("histogram"));
        reg = registration_config_from_json(bundle.at("registration"));
        names = bundle.at("column_names").get<std::vector<std::string>>();
        const std::string k = kind ? to_string(*kind) : bundle.at("best_kind").get<std::string>();
        if (k.empty() || !bundle.at("models").contains(k))
            throw ArgumentError("bundle has no model for kind '" + k + "'");
        model_rel = bundle.at("models").at(k).get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(bundle_path.string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < paths.size(); ++i) {
        require_file(paths[i].volume, "atlas " + std::to_string(i) + " volume");
        require_file(paths[i].mask, "atlas " + std::to_string(i) + " mask");
    }
    const FittedModel model = model_from_json(read_json(resolve(base, model_rel)));
    if (model.input_columns != static_cast<int>(names.size()))
        throw FormatError("bundle: model width differs from the feature layout");
    if (subjects.empty())
        return {};
    const auto atlases = load_atlases(paths);
    if (feature_count(static_cast<int>(atlases.size()), histogram) != model.input_columns)
        throw FormatError("bundle: atlas count does not match the model's feature layout");

    Eigen::MatrixXd X(static_cast<Eigen::Index>(subjects.size()), model.input_columns);
    parallel_for(subjects.size(), jobs, [&](std::size_t i) {
        try {
            const Volume v = load_nifti(subjects[i].volume);
            RegistrationConfig cfg = reg;
            cfg.seed = derive_seed(reg.seed, {static_cast<std::uint64_t>(i)});
            const auto seg = segment_by_atlases(v, atlases, cfg, 1);
            const auto row = assemble_features(v, seg.masks, histogram);
            for (std::size_t c = 0; c < row.size(); ++c)
                X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
        } catch (const Error&) {
            rethrow_with_context("subject " + subjects[i].id + ": ");
        }
    });
    const Eigen::VectorXd yhat = predict(model, X);
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        out.push_back({subjects[i].id, yhat(static_cast<Eigen::Index>(i))});
    return out;
}

void write_predictions_csv(const std::vector<Prediction>& p, const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "id,predicted_weight_g\n";
    for (const auto& x : p)
        out << x.id << ',' << format_double(x.grams) << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

Metrics compute_metrics(std::span<const double> y, std::span<const double> yhat)
{
    if (y.size() != yhat.size() || y.empty())
        throw ArgumentError("metrics: need equal, nonempty target and prediction lists");
    Metrics m;
    m.n = y.size();
    double ss = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        sum += y[i];
    }
    m.rmse = std::sqrt(ss / static_cast<double>(m.n));
    m.mean_target = sum / static_cast<double>(m.n);
    m.r2 = r2(y, yhat);
    return m;
}

namespace {

// Predicted values reordered to follow `ids`; throws on any id mismatch.
std::vector<double> aligned(const std::vector<std::pair<std::string, double>>& rows,
                            const std::vector<std::string>& ids, const std::string& what)
{
    std::map<std::string, double> by_id;
    for (const auto& [id, v] : rows)
        if (!by_id.emplace(id, v).second)
            throw ArgumentError(what + ": duplicate id '" + id + "'");
    if (by_id.size() != ids.size())
        throw ArgumentError(what + ": " + std::to_string(by_id.size()) + " ids but the truth has " +
                            std::to_string(ids.size()));
    std::vector<double> out;
    for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end())
            throw ArgumentError(what + ": no entry for id '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

} // namespace

Metrics run_evaluate(const fs::path& predictions, const fs::path& truth,
                     const std::vector<fs::path>& compare, const fs::path& out)
{
    const auto pred_rows = read_id_value_csv(predictions);
    std::vector<std::string> ids;
    for (const auto& r : pred_rows)
        ids.push_back(r.first);
    const auto yhat = aligned(pred_rows, ids, predictions.string());
    const auto y = aligned(read_id_value_csv(truth), ids, truth.string());
    const Metrics m = compute_metrics(y, yhat);

    fs::create_directories(out);
    write_json({{"n", m.n}, {"r2", m.r2}, {"rmse_g", m.rmse}, {"mean_target_g", m.mean_target}},
               out / "metrics.json");
    std::vector<double> sq(y.size());
    {
        std::ofstream res(out / "residuals.csv");
        res << "id,target_g,predicted_g,residual_g\n";
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double e = y[i] - yhat[i];
            sq[i] = e * e;
            res << ids[i] << ',' << format_double(y[i]) << ',' << format_double(yhat[i]) << ','
                << format_double(e) << '\n';
        }
    }
    if (!compare.empty()) {
        std::ofstream cmp(out / "comparisons.csv");
        cmp << "pipeline_a,pipeline_b,W,n_effective,p,method\n";
        for (const auto& other : compare) {
            const auto o = aligned(read_id_value_csv(other), ids, other.string());
            std::vector<double> osq(o.size());
            for (std::size_t i = 0; i < o.size(); ++i)
                osq[i] = (y[i] - o[i]) * (y[i] - o[i]);
            const auto w = wilcoxon_signed_rank(sq, osq);
            cmp << predictions.filename().string() << ',' << other.filename().string() << ','
                << format_double(w.w_statistic) << ',' << w.n_effective << ','
                << format_double(w.p_two_sided) << ',' << to_string(w.method) << '\n';
        }
    }
    return m;
}

} // namespace ctmass
