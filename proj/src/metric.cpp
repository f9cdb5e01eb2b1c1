#include "ciw/metric.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ciw/fft.hpp"

namespace ciw {

namespace {

constexpr double two_pi = 6.283185307179586;

double min_eig(const Eigen::MatrixXd& A) {
    if (A.rows() == 1) return A(0, 0);
    if (A.rows() == 2) {
        double a = A(0, 0), b = A(0, 1), c = A(1, 1);
        return 0.5 * (a + c) - std::hypot(0.5 * (a - c), b);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

}  // namespace

Eigen::MatrixXd tensor_at(const GridField& t, std::size_t p) {
    int n = t.tensor_dim();
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) A(i, j) = A(j, i) = t.t(i, j, p);
    return A;
}

void set_tensor(GridField& t, std::size_t p, const Eigen::MatrixXd& A) {
    int n = t.tensor_dim();
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) t.at(sym_index(n, i, j), p) = 0.5 * (A(i, j) + A(j, i));
}

double hs_norm(const Eigen::MatrixXd& A) { return A.norm(); }

MetricField::MetricField(GridField gf) : g(std::move(gf)) {
    if (g.rank() != Rank::sym_tensor) throw std::invalid_argument("metric must be a sym tensor");
    for (std::size_t p = 0; p < g.points(); ++p)
        if (!(min_eig(tensor_at(g, p)) > 0))
            throw std::invalid_argument("metric is not positive definite at node " +
                                        std::to_string(p));
}

MetricField MetricField::constant(const GridDomain& d, const Eigen::MatrixXd& A, Calculus mode) {
    auto g = GridField::sym_tensor(d, static_cast<int>(A.rows()), mode);
    for (std::size_t p = 0; p < g.points(); ++p) set_tensor(g, p, A);
    return MetricField(std::move(g));
}

Eigen::MatrixXd ImmersionState::jacobian(std::size_t p) const {
    int nn = n(), NN = N();
    Eigen::MatrixXd J(NN, nn);
    for (int c = 0; c < NN; ++c)
        for (int i = 0; i < nn; ++i) J(c, i) = du.at(c * nn + i, p);
    return J;
}

ImmersionState ImmersionState::from(GridField u) { return from(std::move(u), 0.0); }

ImmersionState ImmersionState::from(GridField u, double krasny_rel) {
    if (u.rank() != Rank::vector) throw std::invalid_argument("immersion must be a vector field");
    ImmersionState s;
    s.u = std::move(u);
    s.du = krasny_rel > 0 ? filtered_gradient(s.u, krasny_rel) : gradient(s.u);
    int n = s.n(), N = s.N();
    s.pull = GridField::sym_tensor(s.u.domain(), n, s.u.mode());
    for (std::size_t p = 0; p < s.u.points(); ++p) {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double v = 0;
                for (int c = 0; c < N; ++c) v += s.du.at(c * n + i, p) * s.du.at(c * n + j, p);
                s.pull.at(sym_index(n, i, j), p) = v;
            }
        // rank test relative to the size of the Jacobian
        Eigen::MatrixXd G = tensor_at(s.pull, p);
        double scale = std::max(1e-300, G.trace());
        if (min_eig(G) <= 1e-12 * scale) s.degenerate_nodes.push_back(p);
    }
    return s;
}

GridField pullback(const ImmersionState& s) { return s.pull; }

GridField metric_error(const MetricField& g, const ImmersionState& u) {
    if (!(g.g.domain() == u.u.domain())) throw std::invalid_argument("metric_error: domains differ");
    GridField h = g.g - u.pull.with_mode(g.g.mode());
    return h;
}

Shortness shortness(const MetricField& g, const ImmersionState& u) {
    GridField h = metric_error(g, u);
    Shortness s;
    s.degenerate_nodes = u.degenerate_nodes;
    s.margin = INFINITY;
    for (std::size_t p = 0; p < h.points(); ++p) {
        double e = min_eig(tensor_at(h, p));
        if (e < s.margin) {
            s.margin = e;
            s.worst_node = p;
        }
    }
    if (s.margin > 1e-10 && s.degenerate_nodes.empty())
        s.kind = Shortness::strictly_short;
    else if (s.margin >= -1e-10)
        s.kind = Shortness::short_map;
    else
        s.kind = Shortness::not_short;
    return s;
}

double cone_deviation(const Eigen::MatrixXd& A) {
    int n = static_cast<int>(A.rows());
    double tr = std::fabs(A.trace()) / n;
    return (A / tr - Eigen::MatrixXd::Identity(n, n)).norm();
}

ConeMatrix cone_check(const Eigen::MatrixXd& A, double r) {
    ConeMatrix c;
    c.A = A;
    c.r = r;
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff())) {
        c.reason = "matrix is not symmetric";
        return c;
    }
    if (!(A.trace() > 0)) {
        c.reason = "trace is not positive";
        c.deviation = INFINITY;
        return c;
    }
    c.deviation = cone_deviation(A);
    c.accepted = c.deviation < r;
    if (!c.accepted) c.reason = "axis deviation " + std::to_string(c.deviation) + " >= r";
    return c;
}

Curve read_curve_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    Curve c;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0])))
            continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
        if (row.size() < 2) throw std::runtime_error("curve csv: need t and coordinates");
        c.t.push_back(row[0]);
        c.x.emplace_back(row.begin() + 1, row.end());
    }
    return c;
}

void write_curve_csv(const Curve& c, const std::string& path) {
    std::ofstream os(path);
    os << "t";
    for (std::size_t a = 0; a < (c.x.empty() ? 0 : c.x[0].size()); ++a) os << ",x" << a + 1;
    os << "\n" << std::setprecision(17);
    for (std::size_t i = 0; i < c.t.size(); ++i) {
        os << c.t[i];
        for (double v : c.x[i]) os << "," << v;
        os << "\n";
    }
}

std::vector<double> interpolate(const GridField& f, const std::vector<double>& x) {
    const auto& d = f.domain();
    if ((int)x.size() != d.dim) throw std::invalid_argument("interpolate: wrong point dimension");
    // per-axis 6-point stencils and Lagrange weights
    std::vector<std::array<int, 6>> idx(d.dim);
    std::vector<std::array<double, 6>> w(d.dim);
    std::vector<int> npts(d.dim);
    for (int a = 0; a < d.dim; ++a) {
        double h = d.spacing(a);
        double s = (x[a] - d.origin[a]) / h;
        int M = d.res[a];
        if (!d.periodic[a]) {
            double tol = 1e-12 * (M - 1);
            if (s < -tol || s > M - 1 + tol) throw DomainError("point outside the chart");
            s = std::clamp(s, 0.0, double(M - 1));
        }
        int i0 = static_cast<int>(std::floor(s));
        int start = i0 - 2;
        if (!d.periodic[a]) start = std::clamp(start, 0, M - 6);
        for (int k = 0; k < 6; ++k) {
            int node = start + k;
            double l = 1;
            for (int m = 0; m < 6; ++m)
                if (m != k) l *= (s - (start + m)) / double(k - m);
            w[a][k] = l;
            idx[a][k] = d.periodic[a] ? ((node % M) + M) % M : node;
        }
        npts[a] = 6;
    }
    std::vector<double> out(f.components(), 0.0);
    std::vector<int> cnt(d.dim, 0);
    while (true) {
        double wt = 1;
        std::size_t p = 0;
        for (int a = 0; a < d.dim; ++a) {
            wt *= w[a][cnt[a]];
            p += static_cast<std::size_t>(idx[a][cnt[a]]) * d.stride(a);
        }
        if (wt != 0)
            for (int c = 0; c < f.components(); ++c) out[c] += wt * f.at(c, p);
        int a = d.dim - 1;
        while (a >= 0 && ++cnt[a] == npts[a]) cnt[a--] = 0;
        if (a < 0) break;
    }
    return out;
}

namespace {

// derivative of sampled curve coordinates with respect to t
std::vector<std::vector<double>> curve_velocity(const Curve& c) {
    std::size_t K = c.t.size();
    if (K < 32) throw std::invalid_argument("curve: need at least 32 samples");
    std::size_t dim = c.x[0].size();
    double dt = c.t[1] - c.t[0];
    for (std::size_t i = 1; i < K; ++i)
        if (std::fabs((c.t[i] - c.t[i - 1]) - dt) > 1e-9 * std::fabs(dt))
            throw std::invalid_argument("curve: parameter samples must be uniform");
    std::vector<std::vector<double>> v(K, std::vector<double>(dim));
    if (c.closed) {
        double P = c.period > 0 ? c.period : dt * K;
        std::vector<int> dims{static_cast<int>(K)};
        for (std::size_t a = 0; a < dim; ++a) {
            std::vector<double> line(K);
            // a lift that winds around a periodic chart: x(t + P) = x(t) + W
            double W = a < c.winding.size() ? c.winding[a] : 0.0;
            for (std::size_t i = 0; i < K; ++i) line[i] = c.x[i][a] - W * (c.t[i] - c.t[0]) / P;
            int Ki = static_cast<int>(K);
            apply_line_multiplier(line.data(), dims, 0, [&](int k) -> cplx {
                if (Ki % 2 == 0 && k == Ki / 2) return 0.0;
                return cplx(0.0, two_pi * k / P);
            });
            for (std::size_t i = 0; i < K; ++i) v[i][a] = line[i] + W / P;
        }
        return v;
    }
    for (std::size_t a = 0; a < dim; ++a) {
        auto f = [&](std::size_t i) { return c.x[i][a]; };
        double s = 1.0 / (12 * dt);
        for (std::size_t i = 2; i + 2 < K; ++i)
            v[i][a] = s * (-f(i + 2) + 8 * f(i + 1) - 8 * f(i - 1) + f(i - 2));
        v[0][a] = s * (-25 * f(0) + 48 * f(1) - 36 * f(2) + 16 * f(3) - 3 * f(4));
        v[1][a] = s * (-3 * f(0) - 10 * f(1) + 18 * f(2) - 6 * f(3) + f(4));
        std::size_t n = K - 1;
        v[n][a] = -s * (-25 * f(n) + 48 * f(n - 1) - 36 * f(n - 2) + 16 * f(n - 3) - 3 * f(n - 4));
        v[n - 1][a] = -s * (-3 * f(n) - 10 * f(n - 1) + 18 * f(n - 2) - 6 * f(n - 3) + f(n - 4));
    }
    return v;
}

// composite Simpson over samples y[0..K-1] with spacing dt; an odd interval
// count closes with the 3/8 rule on the last three intervals
double simpson(const std::vector<double>& y, double dt) {
    std::size_t n = y.size() - 1;
    if (n < 2) throw std::invalid_argument("simpson: too few samples");
    double s = 0;
    std::size_t m = (n % 2 == 0) ? n : n - 3;
    for (std::size_t i = 0; i + 2 <= m; i += 2) s += dt / 3 * (y[i] + 4 * y[i + 1] + y[i + 2]);
    if (m != n) s += 3 * dt / 8 * (y[m] + 3 * y[m + 1] + 3 * y[m + 2] + y[m + 3]);
    return s;
}

double integrate_curve(const Curve& c, const std::vector<double>& integrand) {
    double dt = c.t[1] - c.t[0];
    std::vector<double> y = integrand;
    if (c.closed) y.push_back(integrand[0]);
    return simpson(y, dt);
}

}  // namespace

double curve_length(const Curve& c, const MetricField& g) {
    auto v = curve_velocity(c);
    std::vector<double> f(c.t.size());
    int n = g.n();
    for (std::size_t i = 0; i < c.t.size(); ++i) {
        auto gv = interpolate(g.g, c.x[i]);
        double q = 0;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) q += gv[sym_index(n, a, b)] * v[i][a] * v[i][b];
        f[i] = std::sqrt(std::max(0.0, q));
    }
    return integrate_curve(c, f);
}

double image_length(const ImmersionState& u, const Curve& c) {
    auto v = curve_velocity(c);
    std::vector<double> f(c.t.size());
    int n = u.n(), N = u.N();
    for (std::size_t i = 0; i < c.t.size(); ++i) {
        auto J = interpolate(u.du, c.x[i]);
        double s = 0;
        for (int k = 0; k < N; ++k) {
            double comp = 0;
            for (int a = 0; a < n; ++a) comp += J[k * n + a] * v[i][a];
            s += comp * comp;
        }
        f[i] = std::sqrt(s);
    }
    return integrate_curve(c, f);
}

IncrementSplit increment_split(const ImmersionState& u, const GridField& w) {
    if (!(w.domain() == u.u.domain()) || w.components() != u.N())
        throw std::invalid_argument("increment_split: shape mismatch");
    GridField dw = gradient(w.with_mode(u.u.mode()));
    int n = u.n(), N = u.N();
    IncrementSplit s{GridField::sym_tensor(w.domain(), n, u.u.mode()),
                     GridField::sym_tensor(w.domain(), n, u.u.mode())};
    for (std::size_t p = 0; p < w.points(); ++p)
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double l = 0, q = 0;
                for (int c = 0; c < N; ++c) {
                    double ui = u.du.at(c * n + i, p), uj = u.du.at(c * n + j, p);
                    double wi = dw.at(c * n + i, p), wj = dw.at(c * n + j, p);
                    l += ui * wj + uj * wi;
                    q += wi * wj;
                }
                s.L.at(sym_index(n, i, j), p) = l;
                s.Q.at(sym_index(n, i, j), p) = q;
            }
    return s;
}

}  // namespace ciw
