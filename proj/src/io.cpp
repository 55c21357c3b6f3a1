#include "lmk/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lmk {

using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_table_atomic(const std::string& path, const Table& table) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw data_error("cannot open for writing: " + tmp);
        for (std::size_t i = 0; i < table.header.size(); ++i)
            out << (i ? "," : "") << table.header[i];
        out << "\n";
        for (const auto& row : table.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << "\n";
        }
        if (!out) throw data_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Table read_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open table: " + path);
    Table table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (first) {
            table.header = std::move(cells);
            first = false;
        } else {
            table.rows.push_back(std::move(cells));
        }
    }
    return table;
}

namespace {

// civil-calendar day arithmetic (proleptic Gregorian)
long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<long>(era) * 146097L + static_cast<long>(doe) - 719468L;
}

void civil_from_days(long z, int& y, int& m, int& d) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long yy = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

} // namespace

long days_from_iso(const std::string& iso) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 ||
        d > 31)
        throw data_error("invalid ISO date: " + iso);
    return days_from_civil(y, m, d);
}

std::string iso_from_days(long days) {
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

std::vector<std::string> DailyCountsFile::series_names() const {
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (const auto& row : rows)
        if (seen.insert(row.series).second) names.push_back(row.series);
    return names;
}

std::vector<std::pair<std::string, long long>> DailyCountsFile::series(
    const std::string& name) const {
    std::vector<std::pair<std::string, long long>> out;
    for (const auto& row : rows)
        if (row.series == name) out.emplace_back(row.date, row.count);
    std::sort(out.begin(), out.end());
    return out;
}

DailyCountsFile load_daily_counts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open counts file: " + path);
    DailyCountsFile file;
    std::string line;
    bool saw_header = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) {
                std::string key = line.substr(1, eq - 1);
                std::string value = line.substr(eq + 1);
                auto trim = [](std::string& s) {
                    s.erase(0, s.find_first_not_of(" \t"));
                    s.erase(s.find_last_not_of(" \t") + 1);
                };
                trim(key);
                trim(value);
                if (key == "population") file.population = std::stoll(value);
                if (key == "country") file.country = value;
            }
            continue;
        }
        if (!saw_header) {
            if (line.find("date") == std::string::npos)
                throw data_error(path + ": expected a 'date,series,count' header");
            saw_header = true;
            continue;
        }
        std::stringstream ss(line);
        DailyCountsFile::Row row;
        std::string count_str;
        if (!std::getline(ss, row.date, ',') || !std::getline(ss, row.series, ',') ||
            !std::getline(ss, count_str, ','))
            throw data_error(path + ": malformed row at line " + std::to_string(line_no));
        days_from_iso(row.date); // validates
        try {
            row.count = std::stoll(count_str);
        } catch (const std::exception&) {
            throw data_error(path + ": bad count at line " + std::to_string(line_no));
        }
        file.rows.push_back(std::move(row));
    }
    if (!saw_header || file.rows.empty())
        throw data_error(path + ": no data rows found");
    return file;
}

void save_daily_counts(const std::string& path, const DailyCountsFile& file) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw data_error("cannot open for writing: " + tmp);
        if (file.population > 0) out << "# population=" << file.population << "\n";
        if (!file.country.empty()) out << "# country=" << file.country << "\n";
        out << "date,series,count\n";
        for (const auto& row : file.rows)
            out << row.date << "," << row.series << "," << row.count << "\n";
    }
    std::filesystem::rename(tmp, path);
}

IngestResult ingest(const DailyCountsFile& file, const StateSpace& states,
                    const IngestConfig& config) {
    if (config.mapping.empty()) throw config_error("ingest mapping is empty");
    const std::int64_t population =
        config.population_override > 0 ? config.population_override : file.population;
    if (population <= 0)
        throw data_error("population unknown: set it in the counts file or the config");

    // Deterministic series order: by mapped state index.
    std::vector<std::pair<int, std::string>> mapped; // (state index, series name)
    for (const auto& [series_name, state_label] : config.mapping)
        mapped.emplace_back(states.index_of(state_label), series_name);
    std::sort(mapped.begin(), mapped.end());
    for (std::size_t i = 1; i < mapped.size(); ++i)
        if (mapped[i].first == mapped[i - 1].first)
            throw config_error("two series map to the same state: " + mapped[i].second +
                               ", " + mapped[i - 1].second);

    // Common date window.
    long lo = config.window_start.empty() ? -1 : days_from_iso(config.window_start);
    long hi = config.window_end.empty() ? -1 : days_from_iso(config.window_end);
    std::vector<std::vector<std::pair<std::string, long long>>> series_data;
    for (const auto& [state, name] : mapped) {
        auto data = file.series(name);
        if (data.empty()) throw data_error("series not found in counts file: " + name);
        series_data.push_back(std::move(data));
        const long first = days_from_iso(series_data.back().front().first);
        const long last = days_from_iso(series_data.back().back().first);
        lo = lo < 0 ? first : std::max(lo, first);
        hi = hi < 0 ? last : std::min(hi, last);
    }
    if (hi - lo + 1 < 2) throw data_error("fewer than 2 days in the common date window");
    const int T = static_cast<int>(hi - lo + 1);

    IngestResult out;
    const int K = static_cast<int>(mapped.size());
    std::vector<int> observed_states;
    for (const auto& [state, name] : mapped) observed_states.push_back(state);
    out.observations.A = AggregationMatrix::selection(states.size(), observed_states);
    out.observations.a_hat.resize(T, K);
    out.observations.population = population;
    for (int t = 0; t < T; ++t) out.observations.dates.push_back(iso_from_days(lo + t));

    for (int k = 0; k < K; ++k) {
        std::map<long, long long> by_day;
        for (const auto& [date, count] : series_data[k]) by_day[days_from_iso(date)] = count;
        std::vector<std::string> gaps;
        long long prev = -1;
        bool monotone = true;
        for (int t = 0; t < T; ++t) {
            const auto it = by_day.find(lo + t);
            if (it == by_day.end()) {
                gaps.push_back(iso_from_days(lo + t));
                continue;
            }
            const long long count = it->second;
            if (count < 0)
                throw data_error("negative count for " + mapped[k].second + " at " +
                                 iso_from_days(lo + t));
            if (count > population)
                throw data_error("count exceeds population for " + mapped[k].second + " at " +
                                 iso_from_days(lo + t));
            if (prev >= 0 && count < prev) monotone = false;
            prev = count;
            out.observations.a_hat(t, k) =
                static_cast<double>(count) / static_cast<double>(population);
        }
        if (!gaps.empty()) {
            std::ostringstream msg;
            msg << "series " << mapped[k].second << " has missing dates:";
            for (const auto& g : gaps) msg << " " << g;
            throw data_error(msg.str());
        }
        const bool flagged_cumulative =
            std::find(config.cumulative_series.begin(), config.cumulative_series.end(),
                      mapped[k].second) != config.cumulative_series.end();
        if (flagged_cumulative && !monotone)
            out.warnings.push_back("cumulative series " + mapped[k].second +
                                   " is not monotone non-decreasing");
    }
    out.observations.validate();
    return out;
}

void save_estimate_result(const std::string& path, const EstimateResult& result,
                          const TransitionModel& model, const ObservationSet& obs) {
    json doc;
    doc["family"] = model.family;
    const auto scale_it = model.attributes.find("covariate_scale");
    doc["covariate_scale"] = scale_it == model.attributes.end() ? 1.0 : scale_it->second;
    doc["theta_names"] = model.theta_names;
    doc["theta_hat"] = std::vector<double>(result.theta_hat.begin(), result.theta_hat.end());
    json path_rows = json::array();
    for (const auto& p : result.p_hat)
        path_rows.push_back(std::vector<double>(p.values.begin(), p.values.end()));
    doc["p_hat"] = std::move(path_rows);
    doc["objective"] = result.objective;
    doc["converged"] = result.converged;
    doc["n_starts_used"] = result.n_starts_used;
    doc["n_distinct_minima"] = result.n_distinct_minima;
    doc["start_objectives"] = result.start_objectives;
    doc["notes"] = result.notes;
    doc["dates"] = obs.dates;
    doc["population"] = obs.population;
    if (result.covariance_theta) {
        json rows = json::array();
        for (int i = 0; i < result.covariance_theta->rows(); ++i) {
            std::vector<double> row(result.covariance_theta->cols());
            for (int j = 0; j < result.covariance_theta->cols(); ++j)
                row[j] = (*result.covariance_theta)(i, j);
            rows.push_back(row);
        }
        doc["covariance_theta"] = std::move(rows);
        doc["covariance_method"] = result.covariance_method;
    }
    json a_rows = json::array();
    for (int k = 0; k < obs.A.K(); ++k) {
        std::vector<double> row(obs.A.J());
        for (int j = 0; j < obs.A.J(); ++j) row[j] = obs.A.rows(k, j);
        a_rows.push_back(row);
    }
    doc["aggregation"] = std::move(a_rows);
    json obs_rows = json::array();
    for (int t = 0; t < obs.T(); ++t) {
        std::vector<double> row(obs.K());
        for (int k = 0; k < obs.K(); ++k) row[k] = obs.a_hat(t, k);
        obs_rows.push_back(row);
    }
    doc["a_hat"] = std::move(obs_rows);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw data_error("cannot open for writing: " + tmp);
        out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

LoadedEstimate load_estimate_result(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open estimate result: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw data_error(std::string("estimate result is not valid JSON: ") + e.what());
    }

    LoadedEstimate out;
    out.family = doc.at("family").get<std::string>();
    out.covariate_scale = doc.value("covariate_scale", 1.0);
    out.theta_names = doc.at("theta_names").get<std::vector<std::string>>();
    const auto theta = doc.at("theta_hat").get<std::vector<double>>();
    out.theta_hat = Eigen::Map<const VectorXd>(theta.data(), theta.size());
    out.objective = doc.at("objective").get<double>();
    out.converged = doc.at("converged").get<bool>();
    if (doc.contains("notes")) out.notes = doc.at("notes").get<std::vector<std::string>>();

    const auto a_rows = doc.at("aggregation").get<std::vector<std::vector<double>>>();
    MatrixXd A(a_rows.size(), a_rows.empty() ? 0 : a_rows[0].size());
    for (std::size_t k = 0; k < a_rows.size(); ++k)
        for (std::size_t j = 0; j < a_rows[k].size(); ++j) A(k, j) = a_rows[k][j];
    out.observations.A = AggregationMatrix(A);
    const auto obs_rows = doc.at("a_hat").get<std::vector<std::vector<double>>>();
    out.observations.a_hat.resize(obs_rows.size(), out.observations.A.K());
    for (std::size_t t = 0; t < obs_rows.size(); ++t)
        for (int k = 0; k < out.observations.A.K(); ++k)
            out.observations.a_hat(t, k) = obs_rows[t][k];
    out.observations.population = doc.value("population", 0LL);
    if (doc.contains("dates"))
        out.observations.dates = doc.at("dates").get<std::vector<std::string>>();

    int t_index = 1;
    for (const auto& row : doc.at("p_hat")) {
        const auto values = row.get<std::vector<double>>();
        VectorXd p = Eigen::Map<const VectorXd>(values.data(), values.size());
        out.p_hat.emplace_back(std::move(p), t_index, 1e-9);
        const VectorXd gap = out.observations.A.rows * out.p_hat.back().values -
                             out.observations.a_hat.row(t_index - 1).transpose();
        if (gap.lpNorm<Eigen::Infinity>() > 1e-10)
            throw data_error("estimate result violates its observation constraints at day " +
                             std::to_string(t_index));
        ++t_index;
    }
    return out;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot hash file: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return hash;
}

} // namespace lmk
