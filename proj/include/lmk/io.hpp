#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lmk/estimation.hpp"
#include "lmk/types.hpp"

namespace lmk {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Comma-delimited UTF-8 with a header row; written to a temporary file and
/// renamed into place so readers never see a partial table.
void write_table_atomic(const std::string& path, const Table& table);
Table read_table(const std::string& path);

/// Days since 1970-01-01 for an ISO-8601 date, and back.
long days_from_iso(const std::string& iso);
std::string iso_from_days(long days);

/// Raw daily count series: rows of (date, series name, count) plus the
/// population and country metadata carried in '#key=value' comment lines.
struct DailyCountsFile {
    struct Row {
        std::string date;
        std::string series;
        long long count = 0;
    };
    std::vector<Row> rows;
    std::int64_t population = 0;
    std::string country;

    std::vector<std::string> series_names() const;
    /// Date-sorted (date, count) pairs of one series.
    std::vector<std::pair<std::string, long long>> series(const std::string& name) const;
};

DailyCountsFile load_daily_counts(const std::string& path);
void save_daily_counts(const std::string& path, const DailyCountsFile& file);

struct IngestConfig {
    std::map<std::string, std::string> mapping; // series name -> state label
    std::vector<std::string> cumulative_series; // warn when non-monotone
    std::string window_start;                   // optional ISO bounds
    std::string window_end;
    std::int64_t population_override = 0;
};

struct IngestResult {
    ObservationSet observations;
    std::vector<std::string> warnings;
};

/// Convert mapped count series to frequencies (count / population), assemble
/// the selection aggregation implied by the mapping, and validate coverage:
/// contiguous dates, counts within [0, population].
IngestResult ingest(const DailyCountsFile& file, const StateSpace& states,
                    const IngestConfig& config);

/// Estimate-result file (JSON): parameters, latent path, diagnostics, and the
/// observation set used, so constraints can be re-validated on load.
void save_estimate_result(const std::string& path, const EstimateResult& result,
                          const TransitionModel& model, const ObservationSet& obs);

struct LoadedEstimate {
    std::string family;
    double covariate_scale = 1.0;
    std::vector<std::string> theta_names;
    VectorXd theta_hat;
    std::vector<ProbVector> p_hat;
    double objective = 0;
    bool converged = false;
    ObservationSet observations;
    std::vector<std::string> notes;
};

/// Load and validate: simplex rows and A p_hat = a_hat within 1e-10.
LoadedEstimate load_estimate_result(const std::string& path);

/// FNV-1a 64-bit content hash, recorded in run manifests.
std::uint64_t fnv1a_file(const std::string& path);

} // namespace lmk
