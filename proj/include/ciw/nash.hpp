#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciw/decomp.hpp"
#include "ciw/fields.hpp"
#include "ciw/metric.hpp"

namespace ciw {

struct CodimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FrameError : std::runtime_error {
    std::size_t node = 0;
    FrameError(const std::string& m, std::size_t p) : std::runtime_error(m), node(p) {}
};
struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalFrame {
    GridField zeta, eta;
    // reference used for zeta: 0 the stored normal hint, then u - centroid,
    // e_{n+1}, .., e_N, e_1, .., e_n; -1 when chosen node by node
    int reference = -1;
};

// unit normals zeta, eta with zeta.eta = 0; for N = n + 2 eta completes
// (Du, zeta) to a positively oriented frame. zeta projects the first
// reference whose normal part is at least 0.1 of its length at every node.
NormalFrame normal_frame(const ImmersionState& u);

// phase lambda x.xi must be periodic on periodic charts; returns the smallest
// admissible frequency >= lambda (identity on non-periodic charts)
double admissible_frequency(const GridDomain& d, const Eigen::VectorXd& xi, double lambda);
// lambda |xi_i| h_i <= 2 pi / 8 on every axis
bool resolvable(const GridDomain& d, const Eigen::VectorXd& xi, double lambda);

// u + (a / lambda) (sin(lambda x.xi) zeta + cos(lambda x.xi) eta)
GridField spiral_field(const ImmersionState& u, const GridField& a, const Eigen::VectorXd& xi,
                       double lambda, const NormalFrame& frame);
ImmersionState spiral_step(const ImmersionState& u, const GridField& a, const Eigen::VectorXd& xi,
                           double lambda);
ImmersionState spiral_step(const ImmersionState& u, const GridField& a, const Eigen::VectorXd& xi,
                           double lambda, const NormalFrame& frame);
// sup over nodes of |pullback(v) - pullback(u) - a^2 xi xi|
double step_deviation(const ImmersionState& u, const ImmersionState& v, const GridField& a,
                      const Eigen::VectorXd& xi);

struct FrequencyPolicy {
    double lambda_start = 8;
    double growth = 2;  // largest factor per retry
    // retry at lambda * dev / budget * 1.05 (the deviation is first order in
    // 1/lambda), clamped to [1.1, growth]; plain doubling when false
    bool predictive = true;
};

struct StageReport {
    std::vector<double> lambdas;     // one per step, ascending
    std::vector<double> amplitudes;  // sup |a_k|
    std::vector<double> deviations;  // per-step metric deviation
    std::vector<int> attempts;
    double input_error = 0;   // sup |h|
    double error = 0;         // sup |g_target - pullback|
    double tolerance = 0;
    double c0_displacement = 0;
    double c1_displacement = 0;
    double c1_constant = 0;   // c1_displacement / input_error^{1/2}
    double wall_seconds = 0;
    bool success = false;
};

struct StageResult {
    ImmersionState u;
    StageReport report;
};

// amplitudes a_k = mu_k(g_target - pullback(u)); throws ConeError naming the node
std::vector<GridField> stage_amplitudes(const ImmersionState& u, const MetricField& g_target,
                                        const DirectionSet& dirs);
// one stage: s_n spiral steps, each frequency doubled until its deviation is
// at most tol / s_n; throws ResolutionError when the grid cannot carry it
StageResult stage(const ImmersionState& u, const MetricField& g_target, double tol,
                  const DirectionSet& dirs, const FrequencyPolicy& policy = {});

struct Schedule {
    enum class Rule { halving, geometric };
    Rule rule = Rule::halving;
    double eps = 0.5;       // halving: delta_q = eps 2^-q
    double lambda = 2;      // geometric: delta_q = lambda^(-2 theta0 q)
    double theta0 = 1.0 / 7;
    double c0 = 0.9;
    int Q = 3;
    double delta(int q) const;
    void validate() const;
};

struct IterateOptions {
    FrequencyPolicy policy;
    bool keep_history = true;
    // periodic charts: when a stage runs out of resolution, resample the state
    // spectrally onto a grid twice as fine per axis, up to this many points
    std::size_t max_points = 0;
};

struct IterateResult {
    std::vector<GridField> history;  // u_0 .. u_q (only when kept)
    std::vector<StageReport> reports;
    std::vector<double> metric_errors;  // |g_q - pullback(u_q)|_0 for q = 0..
    std::vector<double> short_margins;  // min eigenvalue of g - pullback(u_q)
    ImmersionState final_state;
    std::vector<std::size_t> grid_points;  // grid size of u_q
    int stages_done = 0;
    bool completed = false;
    std::string stop_reason;
};

// g - delta Id
MetricField shifted_metric(const MetricField& g, double delta);
// spectral resampling of a periodic state (map and normal hint)
ImmersionState refine_state(const ImmersionState& s, const std::vector<int>& res);

IterateResult iterate(const ImmersionState& u0, const MetricField& g, const Schedule& sched,
                      const DirectionSet& dirs, const IterateOptions& opt = {});

// named presets
struct NashPreset {
    std::string name;
    ImmersionState u0;
    MetricField g;
    DirectionSet dirs;
    Schedule schedule;
};
// circle of radius r in R^3, target d theta^2 on [0, 2 pi)
NashPreset circle_preset(int M, double r = 0.5, int Q = 6);
// Clifford torus scaled by r in R^4, flat target on the periodic square
NashPreset flat_torus_preset(int M, double r = 0.7, int Q = 3);
// unit square into R^4 with u = s (x1, x2, 0, 0) and target (1 + extra) Id
NashPreset flat_square_preset(int M, double s = 1.0, double extra = 0.1, int Q = 1);
// chart of the unit sphere (polar angle in [pi/4, 3pi/4], azimuth in [0, pi])
// with round target metric; u0 is the sphere scaled by r inside R^5
NashPreset sphere_chart_preset(int M, double r = 0.7, int Q = 2);
NashPreset make_preset(const std::string& name, int M, int Q);

// exact rationals for the exponent calculus
struct Rational {
    std::int64_t num = 0, den = 1;
    Rational() = default;
    Rational(std::int64_t n, std::int64_t d = 1);
    static Rational parse(const std::string& s);
    std::string str() const;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    Rational operator+(const Rational& o) const;
    Rational operator-(const Rational& o) const;
    Rational operator*(const Rational& o) const;
    Rational operator/(const Rational& o) const;
    Rational operator-() const { return Rational(-num, den); }
    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
    bool operator!=(const Rational& o) const { return !(*this == o); }
};

struct ExponentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// theta0 for delta_{q+2}^p = delta_{q+1}^a delta_q^b lambda_q^c lambda_{q+1}^d
// under delta_q = lambda^(-2 theta q), lambda_q = lambda^q
Rational exponent_solve(const Rational& p, const Rational& a, const Rational& b,
                        const Rational& c, const Rational& d);
// the isometric recursion with S steps per stage: p = S, a = S - 1/2, b = 1/2, c = 1, d = -1
Rational isometric_exponent(std::int64_t steps);

struct HolderReport {
    double theta = 0;            // largest exponent with summable sum delta^1/2 lambda^theta
    double fit_residual = 0;
    double c1_constant = 0;      // max increment / delta^{1/2} (when increments given)
    std::vector<double> increment_ratios;
    bool degenerate = false;     // no frequency growth
    std::string note;
};
// delta[q], lambda[q] per stage; increments[q] = |Du_{q+1} - Du_q|_0 (optional)
HolderReport holder_report(const std::vector<double>& delta, const std::vector<double>& lambda,
                           const std::vector<double>& increments = {});

}  // namespace ciw
