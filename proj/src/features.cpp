#include "ctmass/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ctmass/error.hpp"
#include "ctmass/parallel.hpp"
#include "ctmass/rng.hpp"

namespace ctmass {

void HistogramSpec::validate() const
{
    if (!(hi > lo) || !(bin_width > 0.0))
        throw ArgumentError("histogram: need hi > lo and bin_width > 0");
    const double n = (hi - lo) / bin_width;
    if (std::abs(n - std::round(n)) > 1e-9)
        throw ArgumentError("histogram: bin_width must divide hi - lo");
}

int HistogramSpec::bins() const
{
    validate();
    return static_cast<int>(std::lround((hi - lo) / bin_width));
}

std::vector<double> RegionFeatures::flatten() const
{
    std::vector<double> out{voxel_count, total_hu, mean_hu, std_hu, skewness, kurtosis};
    out.insert(out.end(), histogram.begin(), histogram.end());
    return out;
}

RegionFeatures extract_region_features(const Volume& volume, const Mask& mask,
                                       const HistogramSpec& spec)
{
    if (!(volume.geometry() == mask.geometry()))
        throw ArgumentError("extract_region_features: mask geometry differs from the volume");
    if (!mask.binary())
        throw ArgumentError("extract_region_features: mask must be binary");
    const int bins = spec.bins();

    RegionFeatures r;
    r.histogram.assign(bins, 0.0);
    std::size_t count = 0;
    double sum = 0.0;
    for (std::size_t n = 0; n < volume.size(); ++n) {
        if (!mask.contains(n))
            continue;
        const double v = volume[n];
        ++count;
        sum += v;
        if (v >= spec.lo && v < spec.hi) {
            const int b = std::min(static_cast<int>(std::floor((v - spec.lo) / spec.bin_width)), bins - 1);
            r.histogram[b] += 1.0;
        }
    }
    if (count == 0)
        return r;

    const double nv = static_cast<double>(count);
    const double mean = sum / nv;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (std::size_t n = 0; n < volume.size(); ++n) {
        if (!mask.contains(n))
            continue;
        const double d = volume[n] - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nv;
    m3 /= nv;
    m4 /= nv;

    r.voxel_count = nv;
    r.total_hu = sum;
    r.mean_hu = mean;
    r.std_hu = std::sqrt(m2);
    if (m2 > 0.0) {
        r.skewness = m3 / std::pow(m2, 1.5);
        r.kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return r;
}

Mask mean_mask(std::span<const Mask> masks)
{
    if (masks.empty())
        throw ArgumentError("mean_mask: at least one mask is required");
    const Geometry& g = masks.front().geometry();
    for (const auto& m : masks) {
        if (!(m.geometry() == g))
            throw ArgumentError("mean_mask: mask geometries differ");
        if (!m.binary())
            throw ArgumentError("mean_mask: masks must be binary");
    }
    // Majority with ties included: 2 * votes >= M.
    const std::size_t m = masks.size();
    std::vector<float> out(g.voxel_count());
    for (std::size_t n = 0; n < out.size(); ++n) {
        std::size_t votes = 0;
        for (const auto& mask : masks)
            votes += mask.contains(n);
        out[n] = 2 * votes >= m ? 1.0f : 0.0f;
    }
    return Mask(g, std::move(out));
}

int feature_count(int atlases, const HistogramSpec& spec)
{
    return (kMomentFeatures + spec.bins()) * (atlases + 1);
}

std::vector<std::string> feature_names(int atlases, const HistogramSpec& spec)
{
    const int bins = spec.bins();
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(feature_count(atlases, spec)));
    for (int a = 0; a <= atlases; ++a) {
        const std::string prefix = a < atlases ? "atlas" + std::to_string(a + 1) + "_" : "mean_";
        for (const char* s : {"count", "total_hu", "mean_hu", "std_hu", "skewness", "kurtosis"})
            names.push_back(prefix + s);
        for (int b = 0; b < bins; ++b) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "hist_%02d", b);
            names.push_back(prefix + buf);
        }
    }
    return names;
}

std::vector<double> assemble_features(const Volume& volume, std::span<const Mask> masks,
                                      const HistogramSpec& spec)
{
    if (masks.empty())
        throw ArgumentError("assemble_features: at least one mask is required");
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(feature_count(static_cast<int>(masks.size()), spec)));
    for (const auto& m : masks) {
        const auto block = extract_region_features(volume, m, spec).flatten();
        row.insert(row.end(), block.begin(), block.end());
    }
    const auto block = extract_region_features(volume, mean_mask(masks), spec).flatten();
    row.insert(row.end(), block.begin(), block.end());
    return row;
}

void FeatureMatrix::validate() const
{
    std::set<std::string> unique(column_names.begin(), column_names.end());
    if (unique.size() != column_names.size())
        throw ArgumentError("feature matrix: duplicate column names");
    for (const auto& r : rows)
        if (r.size() != column_names.size())
            throw ArgumentError("feature matrix: row length differs from the column count");
    if (!row_ids.empty() && row_ids.size() != rows.size())
        throw ArgumentError("feature matrix: row id count differs from the row count");
    if (!targets.empty() && targets.size() != rows.size())
        throw ArgumentError("feature matrix: target count differs from the row count");
}

void write_feature_csv(const FeatureMatrix& matrix, const std::filesystem::path& path)
{
    matrix.validate();
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "id";
    for (const auto& n : matrix.column_names)
        out << ',' << n;
    if (!matrix.targets.empty())
        out << ",weight_g";
    out << '\n';
    char buf[40];
    for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
        out << (matrix.row_ids.empty() ? std::to_string(r) : matrix.row_ids[r]);
        for (double v : matrix.rows[r]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        if (!matrix.targets.empty()) {
            std::snprintf(buf, sizeof buf, "%.17g", matrix.targets[r]);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out)
        throw IoError("write failed: " + path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

double parse_double(const std::string& s, const std::string& where)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw FormatError(where + ": trailing characters in number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw FormatError(where + ": not a number: '" + s + "'");
    }
}

} // namespace

FeatureMatrix read_feature_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(path.string() + ": empty CSV");
    auto header = split_csv_line(line);
    if (header.empty() || header.front() != "id")
        throw FormatError(path.string() + ": first column must be 'id'");
    const bool has_target = header.back() == "weight_g";
    FeatureMatrix m;
    m.column_names.assign(header.begin() + 1, header.end() - (has_target ? 1 : 0));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto cells = split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (cells.size() != header.size())
            throw FormatError(where + ": expected " + std::to_string(header.size()) + " cells");
        m.row_ids.push_back(cells.front());
        std::vector<double> row;
        row.reserve(m.column_names.size());
        for (std::size_t c = 1; c <= m.column_names.size(); ++c)
            row.push_back(parse_double(cells[c], where));
        m.rows.push_back(std::move(row));
        if (has_target)
            m.targets.push_back(parse_double(cells.back(), where));
    }
    m.validate();
    return m;
}

TrainingSet assemble_training_set(std::span<const Volume> scans, std::span<const Atlas> atlases,
                                  std::span<const double> weights,
                                  std::span<const std::string> ids,
                                  const TrainingSetOptions& options)
{
    if (scans.size() != weights.size())
        throw ArgumentError("assemble_training_set: " + std::to_string(scans.size()) + " scans but " +
                            std::to_string(weights.size()) + " weights");
    if (scans.size() < 2)
        throw ArgumentError("assemble_training_set: at least two scans are required");
    if (!ids.empty() && ids.size() != scans.size())
        throw ArgumentError("assemble_training_set: id count differs from the scan count");
    if (atlases.empty())
        throw ArgumentError("assemble_training_set: at least one atlas is required");
    options.histogram.validate();

    TrainingSet out;
    out.matrix.column_names = feature_names(static_cast<int>(atlases.size()), options.histogram);
    out.matrix.rows.resize(scans.size());
    out.matrix.targets.assign(weights.begin(), weights.end());
    for (std::size_t i = 0; i < scans.size(); ++i)
        out.matrix.row_ids.push_back(ids.empty() ? std::to_string(i) : ids[i]);
    out.segmentations.resize(scans.size());

    parallel_for(scans.size(), options.jobs, [&](std::size_t i) {
        try {
            RegistrationConfig cfg = options.registration;
            cfg.seed = derive_seed(options.registration.seed, {static_cast<std::uint64_t>(i)});
            out.segmentations[i] = segment_by_atlases(scans[i], atlases, cfg, 1);
            out.matrix.rows[i] = assemble_features(scans[i], out.segmentations[i].masks, options.histogram);
        } catch (const Error&) {
            rethrow_with_context("scan " + out.matrix.row_ids[i] + ": ");
        }
    });
    out.matrix.validate();
    return out;
}

} // namespace ctmass
