#include <cmath>
#include <numbers>

#include "ciw/metric.hpp"
#include "doctest.h"

using namespace ciw;
using std::numbers::pi;

namespace {

GridDomain unit_square(int M) { return GridDomain::box({0.0, 0.0}, {1.0, 1.0}, {M, M}); }

GridField linear_map(const GridDomain& d, double c) {
    auto u = GridField::vector(d, 2, GridField::default_mode(d));
    fill(u, [&](const double* x, double* o) { o[0] = c * x[0]; o[1] = c * x[1]; });
    return u;
}

double max_abs_diff(const GridField& a, const GridField& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i)
        m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    return m;
}

MetricField flat(const GridDomain& d) {
    return MetricField::constant(d, Eigen::MatrixXd::Identity(d.dim, d.dim), GridField::default_mode(d));
}

}  // namespace

TEST_CASE("pullback of linear maps") {
    auto d = unit_square(16);
    auto s = ImmersionState::from(linear_map(d, 1.0));
    auto I = flat(d);
    CHECK(max_abs_diff(pullback(s), I.g) <= 1e-12);
    auto s2 = ImmersionState::from(linear_map(d, 2.0));
    CHECK(max_abs_diff(pullback(s2), 4.0 * I.g) <= 1e-11);
}

TEST_CASE("pullback of a graph matches the closed form") {
    double eps = 0.05, lam = 6;
    auto d = GridDomain::torus(2, 64);
    auto u = GridField::vector(d, 3, Calculus::spectral);
    // periodic analogue of (x1, x2, eps sin(lam x1)): the tangential part only
    // enters through its derivative, so use a torus-valued chart map
    fill(u, [&](const double* x, double* o) {
        o[0] = x[0];
        o[1] = x[1];
        o[2] = eps * std::sin(lam * x[0]);
    });
    // x -> x is not periodic; differentiate the periodic part and add Id
    auto per = u;
    for (std::size_t p = 0; p < per.points(); ++p) {
        auto idx = d.unravel(p);
        per.at(0, p) -= d.coord(0, idx[0]);
        per.at(1, p) -= d.coord(1, idx[1]);
    }
    auto s = ImmersionState::from(per);
    for (std::size_t p = 0; p < s.u.points(); ++p) {
        s.du.at(0 * 2 + 0, p) += 1;
        s.du.at(1 * 2 + 1, p) += 1;
    }
    double worst = 0;
    for (std::size_t p = 0; p < s.u.points(); ++p) {
        auto idx = d.unravel(p);
        double x1 = d.coord(0, idx[0]);
        Eigen::MatrixXd J = s.jacobian(p);
        Eigen::MatrixXd G = J.transpose() * J;
        double c = std::cos(lam * x1);
        worst = std::max(worst, std::fabs(G(0, 0) - (1 + eps * eps * lam * lam * c * c)));
        worst = std::max(worst, std::fabs(G(0, 1)));
        worst = std::max(worst, std::fabs(G(1, 1) - 1));
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("metric error and shortness classification") {
    auto d = unit_square(16);
    auto g = flat(d);
    auto iso = ImmersionState::from(linear_map(d, 1.0));
    CHECK(norm(metric_error(g, iso), NormKind::sup) <= 1e-9);

    auto half = ImmersionState::from(linear_map(d, 0.5));
    CHECK(max_abs_diff(metric_error(g, half), 0.75 * g.g) <= 1e-12);

    auto sh = shortness(g, half);
    CHECK(sh.kind == Shortness::strictly_short);
    CHECK(sh.margin == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(shortness(g, iso).kind == Shortness::short_map);
    auto big = shortness(g, ImmersionState::from(linear_map(d, 1.1)));
    CHECK(big.kind == Shortness::not_short);
    CHECK(big.margin == doctest::Approx(-0.21).epsilon(1e-10));
}

TEST_CASE("randomized short map has a positive metric error (eigensolver oracle)") {
    auto d = GridDomain::torus(2, 32);
    auto u = GridField::vector(d, 4, Calculus::spectral);
    fill(u, [](const double* x, double* o) {
        o[0] = 0.4 * std::cos(x[0]) + 0.05 * std::sin(2 * x[1]);
        o[1] = 0.4 * std::sin(x[0]) - 0.04 * std::cos(x[0] + x[1]);
        o[2] = 0.35 * std::cos(x[1]) + 0.03 * std::sin(3 * x[0]);
        o[3] = 0.35 * std::sin(x[1]);
    });
    auto s = ImmersionState::from(u);
    auto g = flat(d);
    auto h = metric_error(g, s);
    double mn = 1e9;
    for (std::size_t p = 0; p < h.points(); ++p) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tensor_at(h, p));
        mn = std::min(mn, es.eigenvalues()(0));
    }
    CHECK(mn > 0);
    auto sh = shortness(g, s);
    CHECK(sh.kind == Shortness::strictly_short);
    CHECK(std::fabs(sh.margin - mn) <= 1e-12);
}

TEST_CASE("cone_check") {
    Eigen::Matrix2d A = 5 * Eigen::Matrix2d::Identity();
    auto c = cone_check(A, 1e-3);
    CHECK(c.accepted);
    CHECK(c.deviation == 0.0);

    double e = 0.05;
    Eigen::Matrix2d B;
    B << 1, 0, 0, 1 + e;
    auto cb = cone_check(B, 0.1);
    CHECK(cb.accepted);
    CHECK(std::fabs(cb.deviation - std::sqrt(2.0) * e / (2 + e)) <= 1e-14);

    Eigen::Matrix2d Cm;
    Cm << 1, 0, 0, -1;
    auto cc = cone_check(Cm, 10.0);
    CHECK_FALSE(cc.accepted);
    CHECK(cc.reason.find("trace") != std::string::npos);
}

TEST_CASE("curve lengths") {
    // polar angle chart with g = d theta^2: the unit circle
    auto d1 = GridDomain::torus(1, 64);
    auto g1 = MetricField::constant(d1, Eigen::MatrixXd::Identity(1, 1), Calculus::spectral);
    Curve c;
    int K = 128;
    for (int i = 0; i < K; ++i) {
        c.t.push_back(2 * pi * i / K);
        c.x.push_back({2 * pi * i / K});
    }
    c.closed = true;
    c.period = 2 * pi;
    c.winding = {2 * pi};
    CHECK(std::fabs(curve_length(c, g1) - 2 * pi) <= 1e-6);

    // unit circle in the flat plane chart
    auto d2 = GridDomain::box({-2.0, -2.0}, {2.0, 2.0}, {41, 41});
    auto g2 = flat(d2);
    Curve r;
    for (int i = 0; i < K; ++i) {
        double t = 2 * pi * i / K;
        r.t.push_back(t);
        r.x.push_back({std::cos(t), std::sin(t)});
    }
    r.closed = true;
    r.period = 2 * pi;
    CHECK(std::fabs(curve_length(r, g2) - 2 * pi) <= 1e-6);

    // scaling: a linear short map shortens every curve by its factor
    auto s = ImmersionState::from(linear_map(d2, 0.7));
    CHECK(std::fabs(image_length(s, r) - 0.7 * curve_length(r, g2)) <= 1e-12);

    Curve out = r;
    out.x[3] = {5.0, 0.0};
    CHECK_THROWS_AS(curve_length(out, g2), DomainError);
}

TEST_CASE("image length of a short map never exceeds the curve length") {
    auto d = GridDomain::torus(2, 64);
    auto g = flat(d);
    auto u = GridField::vector(d, 4, Calculus::spectral);
    fill(u, [](const double* x, double* o) {
        o[0] = 0.6 * std::cos(x[0]);
        o[1] = 0.6 * std::sin(x[0]);
        o[2] = 0.5 * std::cos(x[1] + 0.2 * std::sin(x[0]));
        o[3] = 0.5 * std::sin(x[1] + 0.2 * std::sin(x[0]));
    });
    auto s = ImmersionState::from(u);
    REQUIRE(shortness(g, s).kind == Shortness::strictly_short);
    for (int q = 0; q < 5; ++q) {
        Curve c;
        int K = 256;
        for (int i = 0; i < K; ++i) {
            double t = 2 * pi * i / K;
            c.t.push_back(t);
            c.x.push_back({1.0 + 0.8 * std::cos(t + q), 2.0 + 0.5 * std::sin(2 * t) + 0.1 * q});
        }
        c.closed = true;
        c.period = 2 * pi;
        CHECK(image_length(s, c) <= curve_length(c, g) + 1e-10);
    }
}

TEST_CASE("increment split reconstructs the pullback") {
    auto d = GridDomain::torus(2, 32);
    auto u = GridField::vector(d, 3, Calculus::spectral);
    fill(u, [](const double* x, double* o) {
        o[0] = std::cos(x[0]);
        o[1] = std::sin(x[0]) + 0.2 * std::cos(x[1]);
        o[2] = std::sin(x[1]);
    });
    auto s = ImmersionState::from(u);
    auto zero = GridField::vector(d, 3, Calculus::spectral);
    auto z = increment_split(s, zero);
    CHECK(norm(z.L, NormKind::sup) == 0.0);
    CHECK(norm(z.Q, NormKind::sup) == 0.0);

    auto sp = increment_split(s, u);
    auto p2 = pullback(ImmersionState::from(2.0 * u));
    CHECK(max_abs_diff(pullback(s) + sp.L + sp.Q, p2) <= 1e-10);
    CHECK(max_abs_diff(p2, 4.0 * pullback(s)) <= 1e-10);

    auto w = GridField::vector(d, 3, Calculus::spectral);
    fill(w, [](const double* x, double* o) {
        o[0] = 0.1 * std::sin(5 * x[0] + x[1]);
        o[1] = 0.05 * std::cos(3 * x[1]);
        o[2] = 0.2 * std::sin(x[0] - 2 * x[1]);
    });
    auto ws = increment_split(s, w);
    auto pw = pullback(ImmersionState::from(u + w));
    CHECK(max_abs_diff(pullback(s) + ws.L + ws.Q, pw) <= 1e-10);
}

TEST_CASE("pullback is invariant under rigid motions") {
    auto d = GridDomain::torus(2, 32);
    auto u = GridField::vector(d, 3, Calculus::spectral);
    fill(u, [](const double* x, double* o) {
        o[0] = std::cos(x[0]) * (2 + std::cos(x[1]));
        o[1] = std::sin(x[0]) * (2 + std::cos(x[1]));
        o[2] = std::sin(x[1]);
    });
    Eigen::Matrix3d R = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, -1).normalized()).toRotationMatrix();
    Eigen::Vector3d b(0.3, -4, 2);
    auto v = u;
    for (std::size_t p = 0; p < u.points(); ++p) {
        Eigen::Vector3d x(u.at(0, p), u.at(1, p), u.at(2, p));
        Eigen::Vector3d y = R * x + b;
        for (int c = 0; c < 3; ++c) v.at(c, p) = y(c);
    }
    CHECK(max_abs_diff(pullback(ImmersionState::from(u)), pullback(ImmersionState::from(v))) <=
          1e-12 * 10);
}

TEST_CASE("metric error plus pullback recovers the metric; shortness is scale invariant") {
    auto d = unit_square(16);
    Eigen::Matrix2d A;
    A << 2, 0.3, 0.3, 1.5;
    auto g = MetricField::constant(d, A, Calculus::finite_difference);
    auto s = ImmersionState::from(linear_map(d, 0.8));
    auto h = metric_error(g, s);
    CHECK(max_abs_diff(h + pullback(s), g.g) <= 1e-15);

    double c = 3.0;
    auto gc = MetricField(c * c * g.g);
    auto sc = ImmersionState::from(c * s.u);
    auto s1 = shortness(g, s), s2 = shortness(gc, sc);
    CHECK(s1.kind == s2.kind);
    CHECK(s2.margin == doctest::Approx(c * c * s1.margin).epsilon(1e-12));
}
