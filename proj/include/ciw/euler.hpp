#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciw/decomp.hpp"
#include "ciw/fields.hpp"
#include "json.hpp"

namespace ciw {

struct MeanError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CflError : std::runtime_error {
    double value = 0;
    CflError(const std::string& m, double v) : std::runtime_error(m), value(v) {}
};
struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EnergyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SemidefiniteError : std::runtime_error {
    std::size_t node = 0;
    SemidefiniteError(const std::string& m, std::size_t p) : std::runtime_error(m), node(p) {}
};

// spectral calculus on the periodic 3-torus (every axis periodic); Nyquist
// bins are dropped by the odd-order operators
GridField divergence(const GridField& f);  // vector -> scalar, sym tensor -> vector (row-wise)
GridField curl(const GridField& f);
GridField scalar_gradient(const GridField& f);
// (v . grad) w
GridField advect(const GridField& v, const GridField& w);
// a (x) b symmetrized (a (x) a for a single field)
GridField outer(const GridField& a, const GridField& b);
Eigen::VectorXd field_mean(const GridField& f);

// symmetric trace-free R with div R = f for mean-zero f: per wavevector the
// least Frobenius norm solution of i R(k) k = f(k); homogeneous of degree -1
GridField div_inverse(const GridField& f, double mean_tol = 1e-12);
// divergence-free part with the mean removed
GridField leray_project(const GridField& w);

// Beltrami flows U = sum_k a_k B_k e^{i k.x}
Eigen::Vector3cd beltrami_amplitude(const IVec3& k);

struct BeltramiMode {
    IVec3 k;
    std::complex<double> a;
};
// a_k = amp, a_{-k} = -conj(amp) for every pair of the family
std::vector<BeltramiMode> beltrami_modes(const BeltramiFamily& f, const std::vector<double>& amps);
std::vector<BeltramiMode> single_pair_modes(const IVec3& k, double amp);

struct BeltramiReport {
    double lambda0 = 0;
    double divergence = 0;      // sup |div U|
    double curl_residual = 0;   // sup |curl U - lambda0 U|
    double stationarity = 0;    // sup |div(U (x) U) - grad |U|^2 / 2|
    double imaginary = 0;       // largest imaginary part dropped
    Eigen::Matrix3d mean_stress = Eigen::Matrix3d::Zero();  // torus average of U (x) U
    Eigen::Matrix3d predicted = Eigen::Matrix3d::Zero();    // 1/2 sum |a_k|^2 (Id - k^ k^)
    double stress_error = 0;
};
struct BeltramiFlow {
    GridField U;
    BeltramiReport report;
};
// throws std::invalid_argument when the modes are not on one shell, not closed
// under negation, or violate a_{-k} B_{-k} = conj(a_k B_k)
BeltramiFlow beltrami_flow(const std::vector<BeltramiMode>& modes, const GridDomain& d);

// Mikado flows W = sum_k sqrt(c_k) psi_k(x) k with pipes around closed lines
struct PipeGeometry {
    double radius = 0.6;          // starting radius
    double shrink = 0.85;         // radius factor after a failed placement
    double min_radius = 0.08;
    int offset_denominator = 12;  // offsets p_k on the grid 2 pi / denominator
    int power = 6;                // profile (1 - s^2)^power (1 - c s^2)
};
struct Pipe {
    IVec3 k;
    Eigen::Vector3d p;
    double radius = 0;
    double weight = 0;  // sqrt(c_k)
    double shape = 0;   // c in the profile, fixed by a zero grid mean
    double scale = 0;   // amplitude giving a unit mean square
};
// disjoint placement: distance between the lines of k and k' is at least the sum of radii
std::vector<Pipe> place_pipes(const std::vector<IVec3>& dirs, const std::vector<double>& weights,
                              const PipeGeometry& geo);
// distance between the periodic lines x = p + t k and x = p' + t k'
double line_distance(const IVec3& k, const Eigen::Vector3d& p, const IVec3& kk, const Eigen::Vector3d& pp);
// psi_k at x shifted by -shift (profile times scale)
double pipe_value(const Pipe& pipe, const Eigen::Vector3d& x, int power);

struct MikadoReport {
    // spectral route on the sampled field; limited by aliasing of the pipe edges
    double divergence = 0;       // sup |div W| / (sup |W| max |k|)
    double stationarity = 0;     // sup |div(W (x) W)| / (sup |W|^2 max |k|)
    // pointwise route: k.grad psi_k = 0 as invariance of psi_k along its line,
    // and disjoint supports, which together give div W = 0 and div(W (x) W) = 0
    double line_invariance = 0;  // max |psi_k(x + s k) - psi_k(x)| / max |psi_k|
    double overlap = 0;          // sup over nodes of sum_{k < j} |psi_k psi_j|
    double mean = 0;             // |<W>|
    double stress_error = 0;     // |<W (x) W> - R|_HS
    double profile_mean = 0;     // max_k |<psi_k>|
    double profile_square = 0;   // max_k |<psi_k^2> - 1|
    double min_gap = 0;          // smallest distance minus radii between pipes
    double coefficient_residual = 0;
    std::vector<Pipe> pipes;
};
struct MikadoFlow {
    GridField W;
    MikadoReport report;
};
MikadoFlow mikado_flow(const Eigen::Matrix3d& R, int lambda0, const GridDomain& d,
                       const PipeGeometry& geo = {});

// oscillation profiles W(v, R, xi, tau) and the cell-problem checks
struct OscillationProfile {
    std::string name;
    bool fast_time = false;  // W = base(R)(xi - v tau) when set
    double bound_w = 4;      // declared |W| <= bound_w |R|^{1/2}
    double bound_v = 1;      // declared |d_v W| <= bound_v |R|^{1/2}
    // base(R, shift, grid): the stationary profile evaluated at xi - shift
    std::function<GridField(const Eigen::Matrix3d&, const Eigen::Vector3d&, const GridDomain&)> base;
    GridField evaluate(const Eigen::Vector3d& v, const Eigen::Matrix3d& R, double tau,
                       const GridDomain& d) const;
};
OscillationProfile beltrami_profile(const BeltramiFamily& f);
OscillationProfile mikado_profile(int lambda0, const PipeGeometry& geo = {});
OscillationProfile transported_profile(const OscillationProfile& base);

struct ConditionCheck {
    bool pass = false;
    double measured = 0;
    double tolerance = 0;
};
struct ProfileReport {
    ConditionCheck mean;         // <W> = 0
    ConditionCheck stress;       // <W (x) W> = R
    ConditionCheck cell;         // d_tau W + v.grad W + div(W (x) W) + grad P = 0
    ConditionCheck bound;        // |W| / |R|^{1/2} against bound_w
    ConditionCheck v_derivative; // |d_v W| / |R|^{1/2} against bound_v
    double cell_pressure_rms = 0;
};
ProfileReport profile_validate(const OscillationProfile& W, const Eigen::Matrix3d& R,
                               const Eigen::Vector3d& v, const GridDomain& d, double tau = 0);

// velocity history: piecewise linear in time (a single slice is stationary)
struct VelocityHistory {
    std::vector<double> times;
    std::vector<GridField> v;
    GridField at(double t) const;
};

struct FlowMap {
    double t = 0, t0 = 0;
    GridField D;              // Phi(x, t) = x + D(x)
    double deformation = 0;   // |D Phi - Id|_0
    double grad_v = 0;        // |grad v|_0
    int steps = 0;
};
// Phi solving d_t Phi + v.grad Phi = 0, Phi(x, t0) = x, by tracing the
// characteristic through x back from t to t0 (RK4, tricubic sampling of the
// spectrally doubled velocity); result on `grid` (the velocity grid if empty)
FlowMap inverse_flow(const VelocityHistory& v, double t0, double t, const std::vector<int>& grid = {},
                     double cfl_budget = 1.0);
std::vector<FlowMap> inverse_flow(const VelocityHistory& v, double t0, const std::vector<double>& times,
                                  const std::vector<int>& grid = {}, double cfl_budget = 1.0);

// chi_j with sum chi_j^2 = 1 on [0, T], support [t_{j-1}, t_{j+1}], t_j = j / mu
struct TimePartition {
    double T = 1, mu = 1;
    int count = 0;  // j = 0 .. count - 1
    double center(int j) const { return j / mu; }
    double value(int j, double t) const;
    double derivative(int j, double t) const;
    int parity(int j) const { return (j % 2 == 1) ? 1 : 2; }
    std::vector<int> active(double t) const;
};
TimePartition time_partition(double T, double mu);

struct Subsolution {
    GridField v, p, R;
};
struct GeneralizedSubsolution {
    GridField v, u, q, e;  // u traceless, e = 1/2 tr(R + v (x) v)
};
GeneralizedSubsolution to_generalized(const Subsolution& s, double psd_tol = 1e-10);
Subsolution from_generalized(const GeneralizedSubsolution& g);
double generalized_energy(const Subsolution& s);      // 1/2 int (|v|^2 + tr R)
Eigen::Matrix3d energy_tensor(const Subsolution& s);  // int (v (x) v + R)
double kinetic_energy(const GridField& v);            // 1/2 int |v|^2

// rho(t) = (E_next(t) - 1/2 int |v|^2) / (3 (2 pi)^3); |rho| <= delta_next / 4
// is asserted when delta_next > 0
std::vector<double> energy_gap(const std::function<double(double)>& E_next, const VelocityHistory& v,
                               const std::vector<double>& times, double delta_next = 0);

struct EulerSlice {
    double t = 0;
    GridField v, p, R;  // R is the traceless part
    double rho = 0;
};
struct EulerIterate {
    std::vector<EulerSlice> slices;
    double lambda = 1;  // frequency of the current velocity
    double mu = 0;      // time scale used to build it
    VelocityHistory velocity() const;
    GridField stress(std::size_t s) const;  // rho Id + R
};
EulerIterate seed_iterate(int M, double rho);
// ABC flow (amp (sin z + cos y), amp (sin x + cos z), amp (sin y + cos x)),
// p = -|v|^2 / 2: a stationary Euler solution with curl v = v
EulerIterate abc_iterate(int M, double amp, double rho);

struct InvariantReport {
    double divergence = 0;  // sup |div v| / sup |grad v|
    double trace = 0;       // sup |tr R|
    double cone = 0;        // sup |R / rho - ...| deviation of rho Id + R
    double rho_min = 0;
    double residual = -1;   // Euler-Reynolds residual (stationary slices only)
    bool pass = false;
    std::string failed;
};
InvariantReport check_invariants(const EulerIterate& s, double r, double div_tol = 1e-10,
                                 double residual_tol = 1e-8);

struct EulerStepOptions {
    double T = 6.283185307179586;
    std::vector<double> times;  // sample times; default: 6 over the middle cutoff interval
    bool transport = true, oscillation = true, nash = true;
    int working_grid = 0;       // 0: chosen from lambda and the deformation
    int max_working_grid = 192;
    int flow_grid = 32;
    double next_rho = -1;       // < 0: 2 |R'|_0 / r0 per slice (cone admissible)
    // false: the next iterate keeps only t and rho per slice (working-grid
    // fields are large); its invariants are still checked in the breakdown
    bool keep_fields = true;
};
struct TermReport {
    std::string name;
    double measured = 0, predicted = 0, ratio = 0;
};
struct StepBreakdown {
    double lambda = 0, mu = 0, mu_optimal = 0;
    double delta_next = 0;     // |R_q|_0
    double grad_v = 0;         // |grad v_q|_0, standing for delta_q^{1/2} lambda_q
    int working_grid = 0;
    double deformation = 0;
    std::vector<TermReport> terms;  // transport, oscillation, nash
    double corrector = 0;           // |w_c|_0
    double perturbation = 0;        // |w_o|_0
    double stress_before = 0, stress_after = 0;
    double energy_increment = 0;    // mean over slices of int |v'|^2 - int |v|^2
    double energy_predicted = 0;    // 3 (2 pi)^3 rho
    bool invariants_pass = true;    // check_invariants on every new slice
    std::string invariant_failed;
    nlohmann::json to_json() const;
    const TermReport& term(const std::string& name) const;
};
struct EulerStepResult {
    EulerIterate next;
    StepBreakdown report;
};
// mu* = (delta_{q+1}^{1/2} delta_q^{1/2} lambda_q lambda_{q+1})^{1/2}
double optimal_mu(double delta_next, double grad_v, double lambda_next);
EulerStepResult euler_step(const EulerIterate& s, double lambda_next, double mu,
                           const std::array<BeltramiFamily, 2>& families,
                           const EulerStepOptions& opt = {});

}  // namespace ciw
