#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ciw/fields.hpp"

namespace ciw {

struct MetricField {
    GridField g;
    MetricField() = default;
    // throws if g is not symmetric positive definite at every node
    explicit MetricField(GridField g);
    int n() const { return g.tensor_dim(); }
    static MetricField constant(const GridDomain& d, const Eigen::MatrixXd& A,
                                Calculus mode);
};

struct ImmersionState {
    GridField u;     // vector field with N components
    GridField du;    // component c*n + i holds d_i u^c
    GridField pull;  // (Du)^T Du
    std::vector<std::size_t> degenerate_nodes;
    // optional vector field roughly normal to u (left by the last spiral step)
    GridField normal_hint;

    int n() const { return u.domain().dim; }
    int N() const { return u.components(); }
    // Du at node p as an N x n matrix
    Eigen::MatrixXd jacobian(std::size_t p) const;

    static ImmersionState from(GridField u);
    // periodic spectral maps: derivatives drop Fourier modes below rel times
    // the largest one, so roundoff is not amplified along a chain of steps
    static ImmersionState from(GridField u, double krasny_rel);
};

GridField pullback(const ImmersionState& s);
GridField metric_error(const MetricField& g, const ImmersionState& u);

// pointwise tensor helpers
Eigen::MatrixXd tensor_at(const GridField& t, std::size_t p);
void set_tensor(GridField& t, std::size_t p, const Eigen::MatrixXd& A);
double hs_norm(const Eigen::MatrixXd& A);

struct Shortness {
    enum Kind { strictly_short, short_map, not_short } kind = not_short;
    double margin = 0;          // min over nodes of the smallest eigenvalue of g - u#e
    std::size_t worst_node = 0;
    std::vector<std::size_t> degenerate_nodes;
};
Shortness shortness(const MetricField& g, const ImmersionState& u);

struct ConeMatrix {
    Eigen::MatrixXd A;
    double r = 0;
    double deviation = 0;
    bool accepted = false;
    std::string reason;
};
// |A / (|tr A| / n) - Id| in the Hilbert-Schmidt norm
double cone_deviation(const Eigen::MatrixXd& A);
ConeMatrix cone_check(const Eigen::MatrixXd& A, double r);

struct Curve {
    std::vector<double> t;                // uniform parameter samples
    std::vector<std::vector<double>> x;   // points in the chart
    bool closed = false;                  // x(t) periodic over the sampled period
    double period = 0;                    // parameter period for closed curves
    std::vector<double> winding;          // x(t + period) - x(t) per coordinate
};
Curve read_curve_csv(const std::string& path);
void write_curve_csv(const Curve& c, const std::string& path);

// local 6-point Lagrange interpolation of every component at chart point x
std::vector<double> interpolate(const GridField& f, const std::vector<double>& x);

double curve_length(const Curve& c, const MetricField& g);
double image_length(const ImmersionState& u, const Curve& c);

struct IncrementSplit {
    GridField L, Q;
};
IncrementSplit increment_split(const ImmersionState& u, const GridField& w);

}  // namespace ciw
