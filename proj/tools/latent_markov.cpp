// latent-markov: simulate, estimate, diagnose and project partially observed
// time-varying Markov models from aggregate daily series.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmk/estimation.hpp"
#include "lmk/identification.hpp"
#include "lmk/io.hpp"
#include "lmk/markov.hpp"
#include "lmk/models.hpp"
#include "lmk/projection.hpp"

using json = nlohmann::json;
using namespace lmk;

namespace {

constexpr const char* kVersion = "latent-markov 0.1.0";

struct RunContext {
    std::string command;
    json config;       // resolved effective configuration
    std::string out_dir;
    std::filesystem::path config_dir; // relative input paths resolve against it
    std::uint64_t seed = 20200331;
    std::vector<std::string> input_files;
    std::vector<std::string> output_files;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    std::string out_path(const std::string& name) {
        output_files.push_back(name);
        return (std::filesystem::path(out_dir) / name).string();
    }

    /// A relative input path is taken from the working directory when it
    /// exists there, otherwise relative to the config file's directory.
    std::string input_path(const std::string& path) const {
        const std::filesystem::path p(path);
        if (p.is_absolute() || std::filesystem::exists(p) || config_dir.empty()) return path;
        const std::filesystem::path candidate = config_dir / p;
        return std::filesystem::exists(candidate) ? candidate.string() : path;
    }
};

json load_config_file(const std::string& path, const std::string& command) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw config_error("config is not valid JSON: " + std::string(e.what()));
    }
    if (doc.contains("command")) { // a run manifest: re-use its resolved config
        if (doc.at("command").get<std::string>() != command)
            throw config_error("manifest was produced by '" +
                               doc.at("command").get<std::string>() +
                               "', not by '" + command + "'");
        return doc.at("config");
    }
    return doc;
}

void write_manifest(RunContext& ctx) {
    json doc;
    doc["command"] = ctx.command;
    doc["version"] = kVersion;
    doc["seed"] = ctx.seed;
    doc["config"] = ctx.config;
    json inputs = json::array();
    for (const auto& path : ctx.input_files) {
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(fnv1a_file(path)));
        inputs.push_back({{"path", path}, {"fnv1a64", hex}});
    }
    doc["inputs"] = inputs;
    doc["outputs"] = ctx.output_files;
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - ctx.started)
                             .count();
    doc["timings_ms"] = {{"total", elapsed}};

    const std::string path = (std::filesystem::path(ctx.out_dir) / "manifest.json").string();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

VectorXd theta_from_json(const TransitionModel& model, const json& values) {
    VectorXd theta = model.theta;
    for (const auto& [name, value] : values.items())
        theta[model.theta_index(name)] = value.get<double>();
    return theta;
}

// Model resolution: a zoo scenario name, or a family with explicit theta.
struct ResolvedModel {
    TransitionModel model;
    ProbVector p0;
    std::int64_t population = 0;
};

// The zoo families have fixed theta sizes; build a zero-initialized model of
// the family, then overlay explicit values.
TransitionModel family_template(const std::string& family, double covariate_scale) {
    if (family == "homog3") return build_homog3(Homog3Params{});
    if (family == "sid") return build_sid(SidParams{});
    if (family == "two-region-si") return build_two_region_si(TwoRegionSiParams{});
    if (family == "siurd") {
        SiurdParams p;
        p.covariate_scale = covariate_scale;
        return build_siurd(p);
    }
    throw config_error("unknown model family: " + family);
}

ResolvedModel resolve_model_config(const json& mcfg) {
    ResolvedModel out;
    const std::string scenario_name = mcfg.value("scenario", "");
    if (!scenario_name.empty()) {
        BaselineScenario scenario = baseline_scenario(scenario_name);
        out.model = std::move(scenario.model);
        out.p0 = std::move(scenario.p0);
        out.population = scenario.population;
    } else {
        const std::string family = mcfg.value("family", "");
        if (family.empty())
            throw config_error("model needs either a 'scenario' name or a 'family'");
        out.model = family_template(family, mcfg.value("covariate_scale", 1.0));
        out.p0 = ProbVector::unit(out.model.dim(), 0);
    }
    if (mcfg.contains("theta")) {
        const VectorXd theta = theta_from_json(out.model, mcfg.at("theta"));
        out.model = model_from_family(out.model.family, theta,
                                      mcfg.value("covariate_scale",
                                                 out.model.attributes.count("covariate_scale")
                                                     ? out.model.attributes.at(
                                                           "covariate_scale")
                                                     : 1.0));
    }
    if (mcfg.contains("p0")) {
        const auto values = mcfg.at("p0").get<std::vector<double>>();
        out.p0 = ProbVector(Eigen::Map<const VectorXd>(values.data(), values.size()), 1,
                            1e-9);
    }
    if (mcfg.contains("population")) out.population = mcfg.at("population").get<long long>();
    return out;
}

Table tidy_marginals(const ProjectionOutput& out) {
    Table table;
    table.header = {"day", "state", "value", "scenario"};
    for (int t = 0; t < out.marginals.rows(); ++t)
        for (int j = 0; j < out.marginals.cols(); ++j)
            table.rows.push_back({std::to_string(t + 1), out.state_labels[j],
                                  format_double(out.marginals(t, j)), out.label});
    return table;
}

Table tidy_new_counts(const ProjectionOutput& out) {
    Table table;
    table.header = {"day", "state", "new_count", "scenario"};
    for (int t = 0; t < out.new_counts.rows(); ++t)
        for (int c = 0; c < out.new_counts.cols(); ++c)
            table.rows.push_back({std::to_string(t + 2),
                                  out.state_labels[out.new_count_states[c]],
                                  format_double(out.new_counts(t, c)), out.label});
    return table;
}

Table tidy_peaks(const ProjectionOutput& out) {
    Table table;
    table.header = {"state", "peak_day", "peak_value", "scenario"};
    for (const auto& peak : out.peaks)
        table.rows.push_back({out.state_labels[peak.state], std::to_string(peak.day),
                              format_double(peak.value), out.label});
    return table;
}

IngestResult ingest_from_config(RunContext& ctx, const json& dcfg, const StateSpace& states) {
    std::string file = dcfg.value("file", "");
    if (file.empty()) throw config_error("data.file is required");
    file = std::filesystem::absolute(ctx.input_path(file)).lexically_normal().string();
    ctx.config["data"]["file"] = file; // manifests record the resolved path
    ctx.input_files.push_back(file);
    const DailyCountsFile counts = load_daily_counts(file);

    IngestConfig config;
    if (dcfg.contains("mapping"))
        for (const auto& [series, state] : dcfg.at("mapping").items())
            config.mapping[series] = state.get<std::string>();
    const std::string death_series = dcfg.value("death_series", "");
    if (death_series == "total")
        config.mapping["deceased_total"] = "D";
    else if (death_series == "covid")
        config.mapping["deceased_covid"] = "D";
    else if (!death_series.empty())
        throw config_error("death_series must be 'total' or 'covid'");
    if (dcfg.contains("cumulative"))
        config.cumulative_series = dcfg.at("cumulative").get<std::vector<std::string>>();
    if (dcfg.contains("window")) {
        config.window_start = dcfg.at("window").value("start", "");
        config.window_end = dcfg.at("window").value("end", "");
    }
    config.population_override = dcfg.value("population", 0LL);

    IngestResult result = ingest(counts, states, config);
    for (const auto& warning : result.warnings)
        std::cerr << "warning: " << warning << "\n";
    return result;
}

EstimationProblem estimation_problem(RunContext& ctx, const json& cfg,
                                     const ResolvedModel& resolved,
                                     const IngestResult& ingested) {
    const json ecfg = cfg.value("estimate", json::object());
    EstimationProblem problem;
    problem.model_family = resolved.model;
    problem.observations = ingested.observations;

    VectorXd theta_init = resolved.model.theta;
    const std::string scenario_init = ecfg.value("scenario_init", "");
    if (!scenario_init.empty())
        theta_init = baseline_scenario(scenario_init).model.theta;
    if (ecfg.contains("theta_init"))
        theta_init = theta_from_json(resolved.model, ecfg.at("theta_init"));
    problem.theta_init = theta_init;

    if (ecfg.contains("fixed"))
        problem.fixed = ecfg.at("fixed").get<std::vector<std::string>>();
    if (ecfg.contains("positive"))
        problem.positive = ecfg.at("positive").get<std::vector<std::string>>();
    const std::string latent = ecfg.value("latent_init", "forward-concentrated");
    if (latent == "forward-concentrated")
        problem.latent_init = LatentInit::forward_concentrated;
    else if (latent == "forward-uniform")
        problem.latent_init = LatentInit::forward_uniform;
    else if (latent == "flat")
        problem.latent_init = LatentInit::flat;
    else
        throw config_error("unknown latent_init: " + latent);

    problem.settings.multistart = ecfg.value("multistart", 8);
    problem.settings.max_iterations = ecfg.value("max_iterations", 600);
    problem.settings.perturbation = ecfg.value("perturbation", 0.15);
    problem.settings.use_gls = ecfg.value("gls", false);
    problem.settings.seed = ctx.seed;
    return problem;
}

void emit_fitted_vs_observed(RunContext& ctx, const EstimateResult& result,
                             const TransitionModel& model, const ObservationSet& obs,
                             const DailyCountsFile& counts) {
    Table table;
    table.header = {"date", "name", "kind", "value"};
    const auto dates = obs.dates;
    for (int t = 0; t < obs.T(); ++t) {
        const std::string& date = dates[t];
        for (const auto& name : counts.series_names()) {
            for (const auto& [d, count] : counts.series(name))
                if (d == date)
                    table.rows.push_back({date, name, "observed", std::to_string(count)});
        }
        for (int j = 0; j < model.dim(); ++j) {
            const double count = result.p_hat[t][j] * static_cast<double>(obs.population);
            table.rows.push_back({date, model.states.labels[j] + "_count", "estimated",
                                  format_double(count)});
        }
    }
    write_table_atomic(ctx.out_path("fitted_vs_observed.csv"), table);
}

void emit_comparison(RunContext& ctx, const EstimateResult& result,
                     const TransitionModel& model, const std::string& reference_name) {
    const BaselineScenario reference = baseline_scenario(reference_name);
    Table table;
    table.header = {"quantity", "estimate", "reference", "sign_match", "abs_ratio"};
    for (int i = 0; i < model.theta_dim(); ++i) {
        const double est = result.theta_hat[i];
        const double ref = reference.model.theta[i];
        const bool sign_match = (est > 0) == (ref > 0);
        const double ratio = ref != 0.0 ? std::abs(est / ref) : 0.0;
        table.rows.push_back({model.theta_names[i], format_double(est), format_double(ref),
                              sign_match ? "yes" : "no", format_double(ratio)});
    }
    if (reference_name == "france-estimated" && model.family == "siurd") {
        const FranceReference ref = france_reference();
        const MatrixXd P =
            model.with_theta(result.theta_hat).build(ProbVector::unit(5, 0)).entries;
        const char* labels[3] = {"row2", "row3", "row4"};
        for (int r = 0; r < 3; ++r)
            for (int j = 0; j < 5; ++j) {
                if (ref.reference_rows(r, j) == 0.0) continue;
                const double est = P(r + 1, j);
                const double reference = ref.reference_rows(r, j);
                table.rows.push_back({std::string(labels[r]) + "." +
                                          model.states.labels[j],
                                      format_double(est), format_double(reference),
                                      (est > 0) == (reference > 0) ? "yes" : "no",
                                      format_double(std::abs(est / reference))});
            }
    }
    write_table_atomic(ctx.out_path("comparison.csv"), table);
}

int cmd_simulate(RunContext& ctx) {
    const json scfg = ctx.config.value("simulate", json::object());
    ResolvedModel resolved = resolve_model_config(ctx.config.value("model", json::object()));
    const int horizon = scfg.value("horizon", 60);
    Scenario scenario;
    scenario.model = resolved.model;
    scenario.p_start = resolved.p0;
    scenario.population = resolved.population > 0 ? resolved.population : 1;
    scenario.horizon_days = horizon;
    scenario.label = ctx.config.value("model", json::object()).value("scenario", resolved.model.family);
    if (resolved.model.family == "siurd")
        scenario.new_count_states = {2, 4};
    const ProjectionOutput out = project(scenario);

    write_table_atomic(ctx.out_path("marginals.csv"), tidy_marginals(out));
    write_table_atomic(ctx.out_path("new_counts.csv"), tidy_new_counts(out));

    const int panel_n = scfg.value("panel_n", 0);
    if (panel_n > 0) {
        const std::string feedback = scfg.value("feedback", "realized");
        const TrajectoryPanel panel = simulate_panel(
            scenario.model, scenario.p_start, panel_n, horizon + 1, ctx.seed,
            feedback == "deterministic" ? Feedback::deterministic_path
                                        : Feedback::realized_frequencies);
        const auto freqs = empirical_frequencies(panel);
        Table table;
        table.header = {"day", "state", "frequency", "scenario"};
        for (int t = 0; t < panel.n_days; ++t)
            for (int j = 0; j < panel.n_states; ++j)
                table.rows.push_back({std::to_string(t + 1), out.state_labels[j],
                                      format_double(freqs[t][j]), scenario.label});
        write_table_atomic(ctx.out_path("panel_frequencies.csv"), table);
    }
    write_manifest(ctx);
    return 0;
}

int cmd_estimate(RunContext& ctx, bool with_bootstrap) {
    ResolvedModel resolved = resolve_model_config(ctx.config.value("model", json::object()));
    const json dcfg = ctx.config.value("data", json::object());
    const IngestResult ingested = ingest_from_config(ctx, dcfg, resolved.model.states);
    const DailyCountsFile counts =
        load_daily_counts(ctx.config.at("data").at("file").get<std::string>());

    EstimationProblem problem = estimation_problem(ctx, ctx.config, resolved, ingested);
    EstimateResult result = estimate(problem);
    if (!result.converged)
        std::cerr << "warning: optimizer did not meet its convergence tolerances\n";

    const std::string cov_kind =
        ctx.config.value("estimate", json::object()).value("covariance", "none");
    if (cov_kind == "delta") {
        const DeltaResult delta = delta_method_covariance(problem, result);
        result.covariance_theta =
            delta.covariance.topLeftCorner(problem.model_family.theta_dim(),
                                           problem.model_family.theta_dim());
        result.covariance_method = "delta";
        Table cov;
        cov.header = {"row", "column", "value"};
        for (int i = 0; i < delta.covariance.rows(); ++i)
            for (int j = 0; j < delta.covariance.cols(); ++j)
                cov.rows.push_back({delta.labels[i], delta.labels[j],
                                    format_double(delta.covariance(i, j))});
        write_table_atomic(ctx.out_path("delta_covariance.csv"), cov);
    } else if (cov_kind != "none") {
        throw config_error("estimate.covariance must be 'none' or 'delta'");
    }

    save_estimate_result(ctx.out_path("estimate.json"), result, problem.model_family,
                         problem.observations);
    emit_fitted_vs_observed(ctx, result, problem.model_family, problem.observations, counts);

    Table residuals;
    residuals.header = {"day", "state", "residual"};
    for (int t = 0; t < result.residuals.rows(); ++t)
        for (int j = 0; j < result.residuals.cols(); ++j)
            residuals.rows.push_back({std::to_string(t + 2),
                                      problem.model_family.states.labels[j],
                                      format_double(result.residuals(t, j))});
    write_table_atomic(ctx.out_path("residuals.csv"), residuals);

    const std::string compare = ctx.config.value("estimate", json::object())
                                    .value("compare_scenario", "");
    if (!compare.empty())
        emit_comparison(ctx, result, problem.model_family, compare);

    if (with_bootstrap) {
        const json bcfg = ctx.config.value("bootstrap", json::object());
        BootstrapOptions options;
        options.replicates = bcfg.value("replicates", 200);
        options.seed = ctx.seed + 1;
        const long long pop_override = bcfg.value("population", 0LL);
        if (pop_override > 0) options.population_override = pop_override;
        const BootstrapResult boot = bootstrap_covariance(problem, result, options);
        if (boot.unreliable)
            std::cerr << "warning: more than 20% of bootstrap replicates failed; "
                         "covariance flagged unreliable\n";
        result.covariance_theta = boot.covariance;
        result.covariance_method = "bootstrap";
        save_estimate_result((std::filesystem::path(ctx.out_dir) / "estimate.json").string(),
                             result, problem.model_family, problem.observations);

        Table cov;
        cov.header = {"row", "column", "value"};
        const auto& names = problem.model_family.theta_names;
        for (int i = 0; i < boot.covariance.rows(); ++i)
            for (int j = 0; j < boot.covariance.cols(); ++j)
                cov.rows.push_back({names[i], names[j], format_double(boot.covariance(i, j))});
        write_table_atomic(ctx.out_path("bootstrap_covariance.csv"), cov);

        Table reps;
        reps.header = {"replicate"};
        for (const auto& name : names) reps.header.push_back(name);
        for (int b = 0; b < boot.theta_samples.rows(); ++b) {
            std::vector<std::string> row{std::to_string(b)};
            for (int i = 0; i < boot.theta_samples.cols(); ++i)
                row.push_back(format_double(boot.theta_samples(b, i)));
            reps.rows.push_back(std::move(row));
        }
        write_table_atomic(ctx.out_path("bootstrap_replicates.csv"), reps);
    }
    write_manifest(ctx);
    return 0;
}

int cmd_identify(RunContext& ctx) {
    const json icfg = ctx.config.value("identify", json::object());
    ResolvedModel resolved = resolve_model_config(ctx.config.value("model", json::object()));
    const TransitionModel& model = resolved.model;
    const int T = icfg.value("T", 20);

    VectorXd start;
    if (icfg.contains("start")) {
        const auto values = icfg.at("start").get<std::vector<double>>();
        start = Eigen::Map<const VectorXd>(values.data(), values.size());
    } else if (ctx.config.value("model", json::object()).contains("p0")) {
        start = resolved.p0.values;
    } else {
        // non-stationary default: bulk on the first state, the rest spread
        start = VectorXd::Constant(model.dim(), 0.1 / (model.dim() - 1));
        start[0] = 0.9;
    }
    const auto path = propagate(model, ProbVector(start, 1, 1e-9), T - 1);

    json doc;
    doc["family"] = model.family;
    doc["T"] = T;
    if (model.family == "homog3") {
        std::vector<double> p3;
        for (const auto& p : path) p3.push_back(p[2]);
        const TransitionMatrix P = model.build(ProbVector(start, 1, 1e-9));
        const IdentificationReport report = check_conditions(P, p3);
        doc["J"] = report.J;
        doc["K"] = report.K;
        doc["dim_theta"] = report.dim_theta;
        doc["moment_count"] = report.moment_count;
        doc["param_count"] = report.param_count;
        doc["order_satisfied"] = report.order_satisfied;
        doc["kt_rule_satisfied"] = report.kt_rule_satisfied;
        doc["counting_discrepancy"] = report.counting_discrepancy;
        doc["recursive_structure"] = report.recursive_structure;
        if (report.abc)
            doc["abc"] = {{"a", (*report.abc)[0]}, {"b", (*report.abc)[1]},
                          {"c", (*report.abc)[2]}};
        if (report.underid_order) doc["underid_order"] = *report.underid_order;
        if (report.overid_order) doc["overid_order"] = *report.overid_order;
        doc["notes"] = report.notes;

        Table table;
        table.header = {"condition", "pass", "value", "detail"};
        for (const auto& [name, check] : report.conditions) {
            doc["conditions"][name] = {{"pass", check.pass}, {"value", check.value},
                                       {"detail", check.detail}};
            table.rows.push_back({name, check.pass ? "pass" : "fail",
                                  format_double(check.value), check.detail});
        }
        write_table_atomic(ctx.out_path("conditions.csv"), table);

        // reduced-form fit alongside the closed forms
        try {
            const RecursionFit fit = fit_order2_recursion(p3);
            doc["fit"] = {{"a", fit.a}, {"b", fit.b}, {"c", fit.c},
                          {"rms_residual", fit.rms_residual}};
        } catch (const data_error& e) {
            doc["fit_error"] = e.what();
        }
    } else if (model.family == "sid") {
        std::vector<double> p3;
        for (const auto& p : path) p3.push_back(p[2]);
        SidParams params;
        params.a1 = model.theta[0];
        params.a2 = model.theta[1];
        params.p13 = model.theta[2];
        params.p23 = model.theta[3];
        const SidReducedFormFit fit = sid_reduced_form(params, p3);
        doc["reduced_form_rms_residual"] = fit.rms_residual;
        doc["overid_order"] = fit.overid_order;
        doc["converged"] = fit.converged;
        const IdentificationReport counts = order_condition(3, 1, T, 4);
        doc["moment_count"] = counts.moment_count;
        doc["param_count"] = counts.param_count;
        doc["order_satisfied"] = counts.order_satisfied;
    } else {
        const int K = icfg.value("K", 2);
        const IdentificationReport counts =
            order_condition(model.dim(), K, T, model.theta_dim());
        doc["moment_count"] = counts.moment_count;
        doc["param_count"] = counts.param_count;
        doc["order_satisfied"] = counts.order_satisfied;
        doc["kt_rule_satisfied"] = counts.kt_rule_satisfied;
        doc["counting_discrepancy"] = counts.counting_discrepancy;
    }

    const std::string path_out = ctx.out_path("identification.json");
    const std::string tmp = path_out + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path_out);
    write_manifest(ctx);
    return 0;
}

int cmd_project(RunContext& ctx) {
    const json pcfg = ctx.config.value("project", json::object());
    const int horizon = pcfg.value("horizon", 60);

    Scenario scenario;
    std::string from_estimate = pcfg.value("from_estimate", "");
    if (!from_estimate.empty()) {
        from_estimate =
            std::filesystem::absolute(ctx.input_path(from_estimate)).lexically_normal().string();
        ctx.config["project"]["from_estimate"] = from_estimate;
        ctx.input_files.push_back(from_estimate);
        const LoadedEstimate loaded = load_estimate_result(from_estimate);
        scenario.model = model_from_family(loaded.family, loaded.theta_hat,
                                           loaded.covariate_scale);
        scenario.p_start = loaded.p_hat.back(); // last fitted day
        scenario.population = loaded.observations.population;
        scenario.label = "from-estimate";
    } else {
        ResolvedModel resolved =
            resolve_model_config(ctx.config.value("model", json::object()));
        scenario.model = resolved.model;
        scenario.p_start = resolved.p0;
        scenario.population = resolved.population > 0 ? resolved.population : 1;
        scenario.label = ctx.config.value("model", json::object())
                             .value("scenario", resolved.model.family);
    }
    if (pcfg.contains("p_start")) {
        const auto values = pcfg.at("p_start").get<std::vector<double>>();
        scenario.p_start =
            ProbVector(Eigen::Map<const VectorXd>(values.data(), values.size()), 1, 1e-9);
    }
    if (pcfg.contains("population"))
        scenario.population = pcfg.at("population").get<long long>();
    scenario.horizon_days = horizon;
    if (scenario.model.family == "siurd") scenario.new_count_states = {2, 4};

    std::vector<ProjectionOutput> outputs;
    if (pcfg.contains("scales") && !pcfg.at("scales").empty()) {
        const auto scales = pcfg.at("scales").get<std::vector<double>>();
        const auto params = pcfg.value("scale_params",
                                       std::vector<std::string>{"b1", "b2", "c1", "c2"});
        outputs = sensitivity_scan(scenario, scales, params);
    } else {
        outputs.push_back(project(scenario));
    }

    Table marginals, new_counts, peaks;
    for (const auto& out : outputs) {
        const Table m = tidy_marginals(out);
        const Table n = tidy_new_counts(out);
        const Table p = tidy_peaks(out);
        if (marginals.header.empty()) {
            marginals.header = m.header;
            new_counts.header = n.header;
            peaks.header = p.header;
        }
        marginals.rows.insert(marginals.rows.end(), m.rows.begin(), m.rows.end());
        new_counts.rows.insert(new_counts.rows.end(), n.rows.begin(), n.rows.end());
        peaks.rows.insert(peaks.rows.end(), p.rows.begin(), p.rows.end());
    }
    write_table_atomic(ctx.out_path("marginals.csv"), marginals);
    write_table_atomic(ctx.out_path("new_counts.csv"), new_counts);
    write_table_atomic(ctx.out_path("peaks.csv"), peaks);
    write_manifest(ctx);
    return 0;
}

int dispatch(const std::string& command, RunContext& ctx) {
    std::filesystem::create_directories(ctx.out_dir);
    if (command == "simulate") return cmd_simulate(ctx);
    if (command == "estimate") return cmd_estimate(ctx, false);
    if (command == "bootstrap") return cmd_estimate(ctx, true);
    if (command == "identify") return cmd_identify(ctx);
    if (command == "project") return cmd_project(ctx);
    throw config_error("unknown command: " + command);
}

void apply_flag_overrides(json& config, const std::vector<std::pair<std::string, json>>& kv) {
    for (const auto& [pointer, value] : kv)
        config[json::json_pointer(pointer)] = value;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) +
                 " - estimation and simulation of partially observed time-varying "
                 "Markov models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scenario, family, data_file, from_estimate,
        params_file, death_series;
    std::uint64_t seed = 0;
    bool have_seed = false;
    int horizon = -1, panel_n = -1, multistart = -1, replicates = -1, T = -1;
    long long population = -1;

    const char* env_out = std::getenv("LATENT_MARKOV_OUT");
    const std::string default_out = env_out ? env_out : "out";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (or a run manifest)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
            have_seed = true;
        });
    };

    CLI::App* simulate = app.add_subcommand("simulate", "deterministic run + optional panel");
    add_common(simulate);
    simulate->add_option("--scenario", scenario, "bundled calibration name");
    simulate->add_option("--horizon", horizon, "days to simulate");
    simulate->add_option("--panel-n", panel_n, "panel size (0 = no panel)");

    CLI::App* estimate_cmd = app.add_subcommand("estimate", "fit a model to daily counts");
    add_common(estimate_cmd);
    estimate_cmd->add_option("--data", data_file, "daily counts CSV");
    estimate_cmd->add_option("--model", family, "model family");
    estimate_cmd->add_option("--multistart", multistart, "number of optimizer starts");
    estimate_cmd->add_option("--death-series", death_series, "'total' or 'covid'");

    CLI::App* identify = app.add_subcommand("identify", "identification diagnostics");
    add_common(identify);
    identify->add_option("--model", family, "model family");
    identify->add_option("--params", params_file, "JSON file of parameter values");
    identify->add_option("--T", T, "series length");
    identify->add_option("--scenario", scenario, "bundled calibration name");

    CLI::App* project_cmd = app.add_subcommand("project", "scenario projection");
    add_common(project_cmd);
    project_cmd->add_option("--scenario", scenario, "bundled calibration name");
    project_cmd->add_option("--from-estimate", from_estimate, "estimate.json to project from");
    project_cmd->add_option("--horizon", horizon, "days to project");

    CLI::App* bootstrap = app.add_subcommand("bootstrap", "estimate + parametric bootstrap");
    add_common(bootstrap);
    bootstrap->add_option("--data", data_file, "daily counts CSV");
    bootstrap->add_option("--model", family, "model family");
    bootstrap->add_option("--replicates", replicates, "bootstrap replicates");
    bootstrap->add_option("--population", population, "panel size per replicate");
    bootstrap->add_option("--multistart", multistart, "number of optimizer starts");

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* sub = app.get_subcommands().front();
        RunContext ctx;
        ctx.command = sub->get_name();
        ctx.config = config_path.empty() ? json::object()
                                         : load_config_file(config_path, ctx.command);
        if (!config_path.empty()) {
            ctx.input_files.push_back(config_path);
            ctx.config_dir = std::filesystem::absolute(config_path).parent_path();
        }

        // flag overrides on top of the config file
        std::vector<std::pair<std::string, json>> overrides;
        if (!scenario.empty()) overrides.push_back({"/model/scenario", scenario});
        if (!family.empty()) overrides.push_back({"/model/family", family});
        if (horizon >= 0) {
            overrides.push_back({"/simulate/horizon", horizon});
            overrides.push_back({"/project/horizon", horizon});
        }
        if (panel_n >= 0) overrides.push_back({"/simulate/panel_n", panel_n});
        if (!data_file.empty()) overrides.push_back({"/data/file", data_file});
        if (!death_series.empty()) overrides.push_back({"/data/death_series", death_series});
        if (multistart > 0) overrides.push_back({"/estimate/multistart", multistart});
        if (replicates > 0) overrides.push_back({"/bootstrap/replicates", replicates});
        if (population > 0) overrides.push_back({"/bootstrap/population", population});
        if (T > 0) overrides.push_back({"/identify/T", T});
        if (!from_estimate.empty())
            overrides.push_back({"/project/from_estimate", from_estimate});
        if (!params_file.empty()) {
            std::ifstream in(params_file);
            if (!in) throw config_error("cannot open params file: " + params_file);
            json values;
            in >> values;
            overrides.push_back({"/model/theta", values});
        }
        apply_flag_overrides(ctx.config, overrides);

        ctx.seed = have_seed ? seed : ctx.config.value("seed", 20200331ULL);
        ctx.config["seed"] = ctx.seed;
        ctx.out_dir = !out_dir.empty() ? out_dir : ctx.config.value("out", default_out);
        ctx.config["out"] = ctx.out_dir;

        return dispatch(ctx.command, ctx);
    } catch (const data_error& e) {
        std::cerr << "LMK_ERROR kind=data detail=" << e.what() << "\n";
        return 2;
    } catch (const convergence_error& e) {
        std::cerr << "LMK_ERROR kind=convergence detail=" << e.what() << "\n";
        return 3;
    } catch (const config_error& e) {
        std::cerr << "LMK_ERROR kind=config detail=" << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "LMK_ERROR kind=internal detail=" << e.what() << "\n";
        return 1;
    }
}
