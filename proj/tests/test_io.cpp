#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lmk/estimation.hpp"
#include "lmk/io.hpp"
#include "lmk/markov.hpp"
#include "lmk/models.hpp"

using namespace lmk;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("lmk_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

} // namespace

TEST_CASE("format_double round-trips exactly") {
    for (double v : {0.1, 1.0 / 3.0, 3.1575e-5, 1609.4379124341003, 0.0, -2.499e-5}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}

TEST_CASE("tables round-trip through the atomic writer") {
    TempDir dir;
    Table table;
    table.header = {"day", "state", "value"};
    table.rows = {{"1", "S", format_double(0.25)}, {"2", "IU", format_double(1e-7)}};
    const std::string path = dir.file("table.csv");
    write_table_atomic(path, table);
    const Table back = read_table(path);
    CHECK(back.header == table.header);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0] == table.rows[0]);
    CHECK(back.rows[1] == table.rows[1]);
    CHECK(!std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("ISO dates: arithmetic and validation") {
    CHECK(days_from_iso("2020-03-17") - days_from_iso("2020-03-16") == 1);
    CHECK(days_from_iso("2020-03-01") - days_from_iso("2020-02-29") == 1); // leap year
    CHECK(iso_from_days(days_from_iso("2020-04-06")) == "2020-04-06");
    CHECK_THROWS_AS(days_from_iso("not-a-date"), data_error);
    CHECK_THROWS_AS(days_from_iso("2020-13-01"), data_error);
}

TEST_CASE("daily counts: load, metadata and round-trip") {
    TempDir dir;
    const std::string path = dir.file("counts.csv");
    {
        std::ofstream out(path);
        out << "# population=1000\n# country=Testland\n";
        out << "date,series,count\n";
        out << "2020-03-16,hospitalized,10\n";
        out << "2020-03-17,hospitalized,12\n";
        out << "2020-03-16,deceased_total,1\n";
        out << "2020-03-17,deceased_total,2\n";
    }
    const DailyCountsFile file = load_daily_counts(path);
    CHECK(file.population == 1000);
    CHECK(file.country == "Testland");
    CHECK(file.series_names().size() == 2);
    CHECK(file.series("hospitalized")[1].second == 12);

    const std::string copy = dir.file("copy.csv");
    save_daily_counts(copy, file);
    const DailyCountsFile again = load_daily_counts(copy);
    CHECK(again.rows.size() == file.rows.size());
    CHECK(again.population == file.population);
}

TEST_CASE("daily counts: empty and malformed files are rejected") {
    TempDir dir;
    const std::string empty = dir.file("empty.csv");
    std::ofstream(empty) << "";
    CHECK_THROWS_AS(load_daily_counts(empty), data_error);

    const std::string bad = dir.file("bad.csv");
    std::ofstream(bad) << "date,series,count\n2020-03-16,hospitalized,ten\n";
    CHECK_THROWS_AS(load_daily_counts(bad), data_error);
}

TEST_CASE("ingest: frequencies, selection matrix and warnings") {
    DailyCountsFile file;
    file.population = 1000;
    for (int d = 0; d < 4; ++d) {
        const std::string date = iso_from_days(days_from_iso("2020-03-16") + d);
        file.rows.push_back({date, "hospitalized", 10 + d});
        file.rows.push_back({date, "deceased_total", 5 - d}); // non-monotone on purpose
    }
    IngestConfig config;
    config.mapping = {{"hospitalized", "ID"}, {"deceased_total", "D"}};
    config.cumulative_series = {"deceased_total"};
    const StateSpace states({"S", "IU", "ID", "R", "D"});
    const IngestResult result = ingest(file, states, config);

    CHECK(result.observations.T() == 4);
    CHECK(result.observations.K() == 2);
    CHECK(result.observations.population == 1000);
    // selection rows ordered by state index: ID (state 3) before D (state 5)
    CHECK(result.observations.A.rows(0, 2) == 1.0);
    CHECK(result.observations.A.rows(1, 4) == 1.0);
    CHECK(result.observations.a_hat(0, 0) == 10.0 / 1000.0); // exact division
    CHECK(result.observations.a_hat(3, 1) == 2.0 / 1000.0);
    REQUIRE(!result.warnings.empty());
    CHECK(result.warnings[0].find("deceased_total") != std::string::npos);
}

TEST_CASE("ingest: missing dates are a hard error listing the gap") {
    DailyCountsFile file;
    file.population = 1000;
    file.rows.push_back({"2020-03-16", "hospitalized", 10});
    file.rows.push_back({"2020-03-18", "hospitalized", 12}); // 03-17 missing
    file.rows.push_back({"2020-03-16", "deceased_total", 1});
    file.rows.push_back({"2020-03-17", "deceased_total", 1});
    file.rows.push_back({"2020-03-18", "deceased_total", 2});
    IngestConfig config;
    config.mapping = {{"hospitalized", "ID"}, {"deceased_total", "D"}};
    const StateSpace states({"S", "IU", "ID", "R", "D"});
    try {
        ingest(file, states, config);
        FAIL("expected a data error");
    } catch (const data_error& e) {
        CHECK(std::string(e.what()).find("2020-03-17") != std::string::npos);
    }
}

TEST_CASE("ingest: counts above the population are rejected") {
    DailyCountsFile file;
    file.population = 100;
    file.rows.push_back({"2020-03-16", "hospitalized", 10});
    file.rows.push_back({"2020-03-17", "hospitalized", 101});
    IngestConfig config;
    config.mapping = {{"hospitalized", "ID"}};
    const StateSpace states({"S", "IU", "ID", "R", "D"});
    CHECK_THROWS_AS(ingest(file, states, config), data_error);
}

TEST_CASE("ingest: panel counts round-trip to exact frequencies") {
    const auto scenario = baseline_scenario("sim-baseline");
    const int N = 5000, T = 6;
    const TrajectoryPanel panel = simulate_panel(scenario.model, scenario.p0, N, T, 41);
    const auto freqs = empirical_frequencies(panel);

    DailyCountsFile file;
    file.population = N;
    const long base = days_from_iso("2020-03-16");
    for (int t = 0; t < T; ++t) {
        long long id_count = 0, d_count = 0;
        for (int i = 0; i < N; ++i) {
            id_count += panel.state(i, t) == 2;
            d_count += panel.state(i, t) == 4;
        }
        file.rows.push_back({iso_from_days(base + t), "detected", id_count});
        file.rows.push_back({iso_from_days(base + t), "deceased", d_count});
    }
    IngestConfig config;
    config.mapping = {{"detected", "ID"}, {"deceased", "D"}};
    const IngestResult result = ingest(file, scenario.model.states, config);
    for (int t = 0; t < T; ++t) {
        CHECK(result.observations.a_hat(t, 0) == freqs[t][2]);
        CHECK(result.observations.a_hat(t, 1) == freqs[t][4]);
    }
}

TEST_CASE("estimate results round-trip through the JSON file") {
    const auto scenario = baseline_scenario("sim-baseline");
    const auto path = propagate(scenario.model, scenario.p0, 9);
    ObservationSet obs;
    obs.A = AggregationMatrix::selection(5, {2, 4});
    obs.population = scenario.population;
    obs.a_hat.resize(10, 2);
    for (int t = 0; t < 10; ++t) obs.a_hat.row(t) = (obs.A.rows * path[t].values).transpose();
    const long base = days_from_iso("2020-03-16");
    for (int t = 0; t < 10; ++t) obs.dates.push_back(iso_from_days(base + t));

    EstimationProblem problem;
    problem.model_family = scenario.model;
    problem.observations = obs;
    problem.settings.multistart = 1;
    const EstimateResult result = estimate(problem);

    TempDir dir;
    const std::string file = dir.file("estimate.json");
    save_estimate_result(file, result, problem.model_family, obs);
    const LoadedEstimate loaded = load_estimate_result(file);

    CHECK(loaded.family == "siurd");
    CHECK((loaded.theta_hat - result.theta_hat).lpNorm<Eigen::Infinity>() <= 1e-12);
    REQUIRE(loaded.p_hat.size() == result.p_hat.size());
    for (std::size_t t = 0; t < loaded.p_hat.size(); ++t)
        CHECK((loaded.p_hat[t].values - result.p_hat[t].values).lpNorm<Eigen::Infinity>() <=
              1e-12);
    CHECK(loaded.objective == result.objective);
    CHECK(loaded.observations.dates[0] == "2020-03-16");
}

TEST_CASE("corrupted estimate results fail constraint validation on load") {
    TempDir dir;
    const std::string file = dir.file("bad.json");
    {
        std::ofstream out(file);
        out << R"({"family":"siurd","covariate_scale":1.0,
                   "theta_names":["a1"],"theta_hat":[0.0],
                   "objective":0.0,"converged":true,
                   "aggregation":[[0,0,1]],
                   "a_hat":[[0.5],[0.5]],
                   "p_hat":[[0.1,0.8,0.1],[0.2,0.6,0.2]],
                   "population":100})";
    }
    CHECK_THROWS_AS(load_estimate_result(file), data_error);
}

TEST_CASE("fnv1a file hashing is content-determined") {
    TempDir dir;
    const std::string a = dir.file("a.txt");
    const std::string b = dir.file("b.txt");
    std::ofstream(a) << "day,state,value\n";
    std::ofstream(b) << "day,state,value\n";
    CHECK(fnv1a_file(a) == fnv1a_file(b));
    std::ofstream(b, std::ios::app) << "1,S,0.5\n";
    CHECK(fnv1a_file(a) != fnv1a_file(b));
}
