#include "lmk/models.hpp"

#include <cmath>
#include <sstream>

namespace lmk {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

constexpr double kExpOverflow = 700.0;
constexpr double kLogFloor = 1e-300;

double safe_log_ratio(double num, double den) {
    return std::log(std::max(num, kLogFloor)) - std::log(std::max(den, kLogFloor));
}

double safe_logit(double p) { return safe_log_ratio(p, 1.0 - p); }

void check_prob(double value, const std::string& name) {
    if (!(value >= 0.0 && value <= 1.0)) {
        std::ostringstream msg;
        msg << name << " = " << value << " is outside [0,1]";
        throw config_error(msg.str());
    }
}

double guarded_exp(double arg, const char* label) {
    if (arg > kExpOverflow) {
        std::ostringstream msg;
        msg << "exponent overflow in " << label << ": linear index " << arg << " exceeds "
            << kExpOverflow;
        throw builder_domain_error(msg.str());
    }
    return std::exp(arg);
}

// Softmax with reference category 0 pinned at logit 0.
VectorXd softmax_ref0(const VectorXd& logits) {
    const int n = static_cast<int>(logits.size()) + 1;
    double m = 0.0;
    for (int i = 0; i < logits.size(); ++i) m = std::max(m, logits[i]);
    VectorXd u(n);
    u[0] = std::exp(-m);
    for (int i = 1; i < n; ++i) u[i] = std::exp(logits[i - 1] - m);
    return u / u.sum();
}

} // namespace

void Homog3Params::validate() const {
    check_prob(p12, "p12");
    check_prob(p13, "p13");
    check_prob(p21, "p21");
    check_prob(p23, "p23");
    check_prob(p31, "p31");
    check_prob(p32, "p32");
    check_prob(1.0 - p12 - p13, "implied diagonal p11");
    check_prob(1.0 - p21 - p23, "implied diagonal p22");
    check_prob(1.0 - p31 - p32, "implied diagonal p33");
}

TransitionModel build_homog3(const Homog3Params& params) {
    params.validate();

    TransitionModel model;
    model.states = StateSpace({"1", "2", "3"});
    model.family = "homog3";
    model.theta.resize(6);
    model.theta << params.p12, params.p13, params.p21, params.p23, params.p31, params.p32;
    model.theta_names = {"p12", "p13", "p21", "p23", "p31", "p32"};
    model.free_names = model.theta_names;
    model.zero_pattern = ZeroPattern::Constant(3, 3, false);

    model.builder = [](const VectorXd&, const VectorXd& th) {
        MatrixXd P(3, 3);
        P << 1.0 - th[0] - th[1], th[0], th[1],
             th[2], 1.0 - th[2] - th[3], th[3],
             th[4], th[5], 1.0 - th[4] - th[5];
        return P;
    };

    // Per-row log ratios against the implied diagonal.
    model.theta_to_free = [](const VectorXd& th) {
        VectorXd x(6);
        const double d1 = 1.0 - th[0] - th[1];
        const double d2 = 1.0 - th[2] - th[3];
        const double d3 = 1.0 - th[4] - th[5];
        x << safe_log_ratio(th[0], d1), safe_log_ratio(th[1], d1),
             safe_log_ratio(th[2], d2), safe_log_ratio(th[3], d2),
             safe_log_ratio(th[4], d3), safe_log_ratio(th[5], d3);
        return x;
    };
    model.free_to_theta = [](const VectorXd& x) {
        VectorXd th(6);
        for (int r = 0; r < 3; ++r) {
            const VectorXd row = softmax_ref0(x.segment(2 * r, 2));
            th[2 * r] = row[1];
            th[2 * r + 1] = row[2];
        }
        return th;
    };
    return model;
}

std::vector<std::string> SidParams::validate() const {
    check_prob(p13, "p13");
    check_prob(p23, "p23");
    std::vector<std::string> warnings;
    if (p23 <= p13)
        warnings.push_back("mortality p23 <= p13: infectious individuals are usually "
                           "expected to die at a higher daily rate");
    return warnings;
}

TransitionModel build_sid(const SidParams& params) {
    params.validate();

    TransitionModel model;
    model.states = StateSpace({"S", "I", "D"});
    model.family = "sid";
    model.theta.resize(4);
    model.theta << params.a1, params.a2, params.p13, params.p23;
    model.theta_names = {"a1", "a2", "p13", "p23"};
    model.free_names = model.theta_names;

    ZeroPattern zp = ZeroPattern::Constant(3, 3, false);
    zp(1, 0) = true;
    zp(2, 0) = true;
    zp(2, 1) = true;
    model.zero_pattern = zp;

    model.builder = [](const VectorXd& p, const VectorXd& th) {
        // logistic saturates cleanly at both tails, no overflow guard needed
        const double ell = logistic(th[0] + th[1] * p[1]);
        const double p13 = th[2], p23 = th[3];
        MatrixXd P(3, 3);
        P << (1.0 - p13) * (1.0 - ell), (1.0 - p13) * ell, p13,
             0.0, 1.0 - p23, p23,
             0.0, 0.0, 1.0;
        return P;
    };

    model.theta_to_free = [](const VectorXd& th) {
        VectorXd x(4);
        x << th[0], th[1], safe_logit(th[2]), safe_logit(th[3]);
        return x;
    };
    model.free_to_theta = [](const VectorXd& x) {
        VectorXd th(4);
        th << x[0], x[1], logistic(x[2]), logistic(x[3]);
        return th;
    };
    return model;
}

void SiurdParams::validate() const {
    check_prob(p15, "p15");
    check_prob(p23, "p23");
    check_prob(p24, "p24");
    check_prob(p25, "p25");
    check_prob(p34, "p34");
    check_prob(p35, "p35");
    check_prob(p45, "p45");
    check_prob(p22(), "implied diagonal p22");
    check_prob(p33(), "implied diagonal p33");
    check_prob(p44(), "implied diagonal p44");
    if (covariate_scale <= 0.0) throw config_error("covariate_scale must be positive");
}

TransitionModel build_siurd(const SiurdParams& params) {
    params.validate();

    TransitionModel model;
    model.states = StateSpace({"S", "IU", "ID", "R", "D"});
    model.family = "siurd";
    model.theta.resize(13);
    model.theta << params.a1, params.a2, params.b1, params.b2, params.c1, params.c2,
        params.p15, params.p23, params.p24, params.p25, params.p34, params.p35, params.p45;
    model.theta_names = {"a1", "a2", "b1", "b2", "c1", "c2", "p15",
                         "p23", "p24", "p25", "p34", "p35", "p45"};
    model.free_names = model.theta_names;

    ZeroPattern zp = ZeroPattern::Constant(5, 5, false);
    zp(0, 3) = true;                                     // S cannot recover
    zp(1, 0) = true;                                     // no way back to S
    zp(2, 0) = true;
    zp(2, 1) = true;                                     // detection is not undone
    zp(3, 0) = true;
    zp(3, 1) = true;
    zp(3, 2) = true;                                     // no reinfection
    for (int j = 0; j < 4; ++j) zp(4, j) = true;         // death absorbing
    model.zero_pattern = zp;

    const double scale = params.covariate_scale;
    model.attributes["covariate_scale"] = scale;
    model.builder = [scale](const VectorXd& p, const VectorXd& th) {
        const double arg_iu = th[0] + th[2] * (scale * p[1]) + th[4] * (scale * p[2]);
        const double arg_id = th[1] + th[3] * (scale * p[1]) + th[5] * (scale * p[2]);
        const double u2 = guarded_exp(arg_iu, "siurd IU logit");
        const double u3 = guarded_exp(arg_id, "siurd ID logit");
        const double total = 1.0 + u2 + u3;
        const double p15 = th[6];
        const double p23 = th[7], p24 = th[8], p25 = th[9];
        const double p34 = th[10], p35 = th[11];
        const double p45 = th[12];
        MatrixXd P(5, 5);
        P << (1.0 - p15) / total, (1.0 - p15) * u2 / total, (1.0 - p15) * u3 / total, 0.0, p15,
             0.0, 1.0 - p23 - p24 - p25, p23, p24, p25,
             0.0, 0.0, 1.0 - p34 - p35, p34, p35,
             0.0, 0.0, 0.0, 1.0 - p45, p45,
             0.0, 0.0, 0.0, 0.0, 1.0;
        return P;
    };

    model.theta_to_free = [](const VectorXd& th) {
        VectorXd x(13);
        x.head(6) = th.head(6);
        x[6] = safe_logit(th[6]);
        const double d2 = 1.0 - th[7] - th[8] - th[9];
        x[7] = safe_log_ratio(th[7], d2);
        x[8] = safe_log_ratio(th[8], d2);
        x[9] = safe_log_ratio(th[9], d2);
        const double d3 = 1.0 - th[10] - th[11];
        x[10] = safe_log_ratio(th[10], d3);
        x[11] = safe_log_ratio(th[11], d3);
        x[12] = safe_logit(th[12]);
        return x;
    };
    model.free_to_theta = [](const VectorXd& x) {
        VectorXd th(13);
        th.head(6) = x.head(6);
        th[6] = logistic(x[6]);
        const VectorXd row2 = softmax_ref0(x.segment(7, 3));
        th[7] = row2[1];
        th[8] = row2[2];
        th[9] = row2[3];
        const VectorXd row3 = softmax_ref0(x.segment(10, 2));
        th[10] = row3[1];
        th[11] = row3[2];
        th[12] = logistic(x[12]);
        return th;
    };
    return model;
}

TransitionModel build_two_region_si(const TwoRegionSiParams& params) {
    TransitionModel model;
    model.states = StateSpace({"S1", "S2", "I1", "I2"});
    model.family = "two-region-si";
    model.theta.resize(6);
    model.theta << params.alpha1, params.alpha2, params.beta11, params.beta12, params.beta21,
        params.beta22;
    model.theta_names = {"alpha1", "alpha2", "beta11", "beta12", "beta21", "beta22"};
    model.free_names = model.theta_names;

    ZeroPattern zp = ZeroPattern::Constant(4, 4, false);
    zp(0, 1) = true;
    zp(0, 3) = true; // region-1 susceptibles stay in region 1
    zp(1, 0) = true;
    zp(1, 2) = true;
    zp(2, 0) = true;
    zp(2, 1) = true;
    zp(2, 3) = true; // infected absorbing
    zp(3, 0) = true;
    zp(3, 1) = true;
    zp(3, 2) = true;
    model.zero_pattern = zp;

    model.builder = [](const VectorXd& p, const VectorXd& th) {
        const double q1 = logistic(th[0] + th[2] * p[2] + th[3] * p[3]);
        const double q2 = logistic(th[1] + th[4] * p[2] + th[5] * p[3]);
        MatrixXd P(4, 4);
        P << 1.0 - q1, 0.0, q1, 0.0,
             0.0, 1.0 - q2, 0.0, q2,
             0.0, 0.0, 1.0, 0.0,
             0.0, 0.0, 0.0, 1.0;
        return P;
    };

    model.theta_to_free = [](const VectorXd& th) { return th; };
    model.free_to_theta = [](const VectorXd& x) { return x; };

    MatrixXd agg(2, 4);
    agg << 1, 1, 0, 0,
           0, 0, 1, 1;
    model.default_aggregation = AggregationMatrix(agg);
    return model;
}

TransitionModel model_from_family(const std::string& family, const VectorXd& theta,
                                  double covariate_scale) {
    if (family == "homog3") {
        if (theta.size() != 6) throw config_error("homog3 needs 6 parameters");
        Homog3Params p;
        p.p12 = theta[0];
        p.p13 = theta[1];
        p.p21 = theta[2];
        p.p23 = theta[3];
        p.p31 = theta[4];
        p.p32 = theta[5];
        return build_homog3(p);
    }
    if (family == "sid") {
        if (theta.size() != 4) throw config_error("sid needs 4 parameters");
        SidParams p;
        p.a1 = theta[0];
        p.a2 = theta[1];
        p.p13 = theta[2];
        p.p23 = theta[3];
        return build_sid(p);
    }
    if (family == "siurd") {
        if (theta.size() != 13) throw config_error("siurd needs 13 parameters");
        SiurdParams p;
        p.a1 = theta[0];
        p.a2 = theta[1];
        p.b1 = theta[2];
        p.b2 = theta[3];
        p.c1 = theta[4];
        p.c2 = theta[5];
        p.p15 = theta[6];
        p.p23 = theta[7];
        p.p24 = theta[8];
        p.p25 = theta[9];
        p.p34 = theta[10];
        p.p35 = theta[11];
        p.p45 = theta[12];
        p.covariate_scale = covariate_scale;
        return build_siurd(p);
    }
    if (family == "two-region-si") {
        if (theta.size() != 6) throw config_error("two-region-si needs 6 parameters");
        TwoRegionSiParams p;
        p.alpha1 = theta[0];
        p.alpha2 = theta[1];
        p.beta11 = theta[2];
        p.beta12 = theta[3];
        p.beta21 = theta[4];
        p.beta22 = theta[5];
        return build_two_region_si(p);
    }
    throw config_error("unknown model family: " + family);
}

namespace {

SiurdParams sim_baseline_params() {
    SiurdParams p;
    p.a1 = std::log(3e-6);
    p.a2 = std::log(1e-6);
    p.b1 = p.b2 = p.c1 = p.c2 = 500.0 * std::log(25.0); // exp(2 b / 1000) = 25
    p.p15 = 3e-5;
    p.p23 = 1e-6;
    p.p24 = 0.03;
    p.p25 = 0.004;
    p.p34 = 0.03;
    p.p35 = 0.013;
    p.p45 = 3e-5;
    return p;
}

SiurdParams france_params() {
    const FranceReference ref = france_reference();
    SiurdParams p;
    p.a1 = ref.a1;
    p.a2 = ref.a2;
    p.b1 = ref.b1;
    p.b2 = ref.b2;
    p.c1 = ref.c1;
    p.c2 = ref.c2;
    p.p15 = ref.p15;
    p.p23 = ref.reference_rows(0, 2);
    p.p24 = ref.reference_rows(0, 3);
    p.p25 = ref.reference_rows(0, 4);
    p.p34 = ref.reference_rows(1, 3);
    p.p35 = ref.reference_rows(1, 4);
    p.p45 = ref.reference_rows(2, 4);
    return p;
}

} // namespace

FranceReference france_reference() {
    FranceReference ref;
    ref.a1 = -8.6517;
    ref.a2 = -11.1481;
    ref.b1 = 0.0034;
    ref.b2 = 2.499e-5;
    ref.c1 = 8.482e-5;
    ref.c2 = 0.00028;
    ref.p15 = 3.1575e-5;
    // Rows 2 (IU), 3 (ID), 4 (R): off-diagonals are the estimated rates,
    // diagonals the recorded (rounded) row-sum completions.
    ref.reference_rows.resize(3, 5);
    ref.reference_rows << 0, 0.9022, 0.0386, 0.0571, 0.00207,
                          0, 0,      0.7926, 0.1032, 0.0158,
                          0, 0,      0,      0.9999, 1.514e-5;
    return ref;
}

BaselineScenario baseline_scenario(const std::string& name) {
    BaselineScenario scenario;
    scenario.name = name;
    if (name == "sim-baseline" || name == "sim-double-prop" || name == "sim-half-prop") {
        SiurdParams p = sim_baseline_params();
        if (name == "sim-double-prop") {
            p.b1 *= 2;
            p.b2 *= 2;
            p.c1 *= 2;
            p.c2 *= 2;
        } else if (name == "sim-half-prop") {
            p.b1 *= 0.5;
            p.b2 *= 0.5;
            p.c1 *= 0.5;
            p.c2 *= 0.5;
        }
        scenario.model = build_siurd(p);
        scenario.p0 = ProbVector::unit(5, 0, 1);
        scenario.population = 60000000;
        return scenario;
    }
    if (name == "france-estimated") {
        scenario.model = build_siurd(france_params());
        // The reference calibration fixes no initial marginals; estimation
        // runs supply their own start (conventionally the last fitted day).
        scenario.p0 = ProbVector::unit(5, 0, 1);
        scenario.population = 66900000;
        return scenario;
    }
    throw config_error("unknown scenario name: " + name);
}

} // namespace lmk
