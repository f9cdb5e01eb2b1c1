#include <cmath>

#include "ciw/nash.hpp"
#include "doctest.h"

using namespace ciw;

namespace {

constexpr double two_pi = 6.283185307179586;

ImmersionState flat_square_map(int M) {
    auto d = GridDomain::box({0.0, 0.0}, {1.0, 1.0}, {M, M});
    auto u = GridField::vector(d, 4, Calculus::finite_difference);
    fill(u, [](const double* x, double* o) {
        o[0] = x[0];
        o[1] = x[1];
        o[2] = o[3] = 0;
    });
    return ImmersionState::from(std::move(u));
}

GridField constant_scalar(const GridDomain& d, Calculus m, double v) {
    auto a = GridField::scalar(d, m);
    for (auto& x : a.values()) x = v;
    return a;
}

double frame_defect(const ImmersionState& s, const NormalFrame& F) {
    int n = s.n(), N = s.N();
    double worst = 0;
    for (std::size_t p = 0; p < s.u.points(); ++p) {
        double zz = 0, ee = 0, ze = 0;
        for (int c = 0; c < N; ++c) {
            zz += F.zeta.at(c, p) * F.zeta.at(c, p);
            ee += F.eta.at(c, p) * F.eta.at(c, p);
            ze += F.zeta.at(c, p) * F.eta.at(c, p);
        }
        worst = std::max({worst, std::fabs(zz - 1), std::fabs(ee - 1), std::fabs(ze)});
        for (int i = 0; i < n; ++i) {
            double tz = 0, te = 0;
            for (int c = 0; c < N; ++c) {
                tz += s.du.at(c * n + i, p) * F.zeta.at(c, p);
                te += s.du.at(c * n + i, p) * F.eta.at(c, p);
            }
            worst = std::max({worst, std::fabs(tz), std::fabs(te)});
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("normal frame of the flat square is the constant complement") {
    auto s = flat_square_map(16);
    auto F = normal_frame(s);
    CHECK(frame_defect(s, F) < 1e-13);
    // zeta and eta span e3, e4 with (e1, e2, zeta, eta) positively oriented
    for (std::size_t p = 0; p < s.u.points(); p += 37) {
        Eigen::Matrix4d M;
        M << 1, 0, F.zeta.at(0, p), F.eta.at(0, p), 0, 1, F.zeta.at(1, p), F.eta.at(1, p), 0, 0,
            F.zeta.at(2, p), F.eta.at(2, p), 0, 0, F.zeta.at(3, p), F.eta.at(3, p);
        CHECK(M.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("normal frame on the circle and the codimension check") {
    auto P = circle_preset(256);
    auto F = normal_frame(P.u0);
    CHECK(frame_defect(P.u0, F) < 1e-12);

    auto d = GridDomain::torus(1, 64);
    auto u = GridField::vector(d, 2, Calculus::spectral);
    fill(u, [](const double* x, double* o) {
        o[0] = std::cos(x[0]);
        o[1] = std::sin(x[0]);
    });
    CHECK_THROWS_AS(normal_frame(ImmersionState::from(u)), CodimensionError);
}

TEST_CASE("admissible and resolvable frequencies") {
    auto d = GridDomain::torus(2, 64);
    Eigen::VectorXd e1(2), diag(2);
    e1 << 1, 0;
    diag << 1 / std::sqrt(5.0), 2 / std::sqrt(5.0);
    CHECK(admissible_frequency(d, e1, 7.2) == doctest::Approx(8));
    // multiples of sqrt(5) for the (1,2) lattice direction
    CHECK(admissible_frequency(d, diag, 5.0) == doctest::Approx(3 * std::sqrt(5.0)));
    Eigen::VectorXd irr(2);
    irr << std::cos(1.0), std::sin(1.0);
    CHECK_THROWS_AS(admissible_frequency(d, irr, 5.0), ModeError);
    // 64 samples over 2 pi: at most 8 per wavelength up to frequency 8
    CHECK(resolvable(d, e1, 8));
    CHECK_FALSE(resolvable(d, e1, 9));
}

TEST_CASE("spiral step is exact: identity for a = 0, displacement a / lambda") {
    auto P = circle_preset(512);
    const auto& d = P.u0.u.domain();
    Eigen::VectorXd xi(1);
    xi << 1;
    auto zero = constant_scalar(d, Calculus::spectral, 0.0);
    auto same = spiral_step(P.u0, zero, xi, 16);
    double dmax = 0;
    for (std::size_t i = 0; i < same.u.values().size(); ++i)
        dmax = std::max(dmax, std::fabs(same.u.values()[i] - P.u0.u.values()[i]));
    CHECK(dmax == 0.0);

    auto a = GridField::scalar(d, Calculus::spectral);
    fill(a, [](const double* x, double* o) { o[0] = 0.3 + 0.1 * std::cos(x[0]); });
    for (double lam : {16.0, 32.0}) {
        auto v = spiral_step(P.u0, a, xi, lam);
        double sup = 0;
        for (std::size_t p = 0; p < d.size(); ++p) {
            double s = 0;
            for (int c = 0; c < 3; ++c) s += std::pow(v.u.at(c, p) - P.u0.u.at(c, p), 2);
            double r = std::sqrt(s);
            CHECK(r == doctest::Approx(a.at(0, p) / lam).epsilon(1e-12));
            sup = std::max(sup, r);
        }
        CHECK(sup == doctest::Approx(0.4 / lam).epsilon(1e-12));
    }
}

TEST_CASE("spiral step deviation decays like 1 / lambda on a curved map") {
    auto P = circle_preset(2048);
    const auto& d = P.u0.u.domain();
    Eigen::VectorXd xi(1);
    xi << 1;
    auto a = GridField::scalar(d, Calculus::spectral);
    fill(a, [](const double* x, double* o) { o[0] = 0.5 + 0.2 * std::sin(x[0]); });
    std::vector<std::pair<double, double>> pts;
    std::vector<double> lin;
    for (double lam : {16.0, 32.0, 64.0, 128.0}) {
        auto v = spiral_step(P.u0, a, xi, lam);
        pts.emplace_back(lam, step_deviation(P.u0, v, a, xi));
        auto split = increment_split(P.u0, v.u - P.u0.u);
        lin.push_back(lam * norm(split.L, NormKind::sup));
    }
    auto fit = scaling_fit(pts);
    CHECK(fit.slope == doctest::Approx(-1).epsilon(0.2));
    // linear part times lambda stays put under doubling
    for (std::size_t i = 1; i < lin.size(); ++i) CHECK(lin[i] / lin[i - 1] == doctest::Approx(1).epsilon(0.1));
}

TEST_CASE("stage with zero metric error returns the input map") {
    auto P = circle_preset(128);
    MetricField g(P.u0.pull);
    auto r = stage(P.u0, g, 1e-12, P.dirs);
    CHECK(r.report.success);
    CHECK(r.report.error < 1e-12);
    CHECK(r.report.c0_displacement == 0.0);
    REQUIRE(r.report.lambdas.size() == 1);
    CHECK(r.report.lambdas[0] == 0.0);
}

TEST_CASE("stage on the circle meets its tolerance and keeps the map short") {
    auto P = circle_preset(4096);
    double tol = P.schedule.c0 * P.schedule.delta(2);
    auto gq = shifted_metric(P.g, P.schedule.delta(1));
    auto r = stage(P.u0, gq, tol, P.dirs);
    CHECK(r.report.success);
    CHECK(r.report.error <= tol);
    CHECK(r.report.input_error == doctest::Approx(1 - 0.25 - 0.25).epsilon(1e-10));
    auto sh = shortness(P.g, r.u);
    CHECK(sh.margin > 0);
    // the amplitude is sqrt(h) and the displacement a / lambda
    CHECK(r.report.amplitudes[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-10));
    CHECK(r.report.c0_displacement == doctest::Approx(std::sqrt(0.5) / r.report.lambdas[0]).epsilon(1e-10));
}

TEST_CASE("stage reports a cone violation") {
    auto P = circle_preset(64);
    // target below the current pullback: h < 0
    auto g = shifted_metric(P.g, 0.9);
    CHECK_THROWS_AS(stage(P.u0, g, 0.01, P.dirs), ConeError);
}

TEST_CASE("iterate on the circle: stagewise errors and early stop") {
    auto P = circle_preset(256, 0.5, 3);
    IterateOptions o;
    o.policy.growth = 16;
    auto r = iterate(P.u0, P.g, P.schedule, P.dirs, o);
    // no refinement allowed: the grid runs out after a few stages
    CHECK(r.stages_done >= 1);
    CHECK(r.stages_done < 3);
    CHECK_FALSE(r.completed);
    CHECK(r.stop_reason.find("resolution") != std::string::npos);
    for (int q = 0; q < r.stages_done; ++q) {
        CHECK(r.metric_errors[q + 1] <= P.schedule.c0 * P.schedule.delta(q + 2));
        CHECK(r.short_margins[q + 1] > 0);
    }
    CHECK(r.history.size() == static_cast<std::size_t>(r.stages_done + 1));

    o.max_points = 1 << 16;
    auto r2 = iterate(P.u0, P.g, P.schedule, P.dirs, o);
    CHECK(r2.completed);
    CHECK(r2.grid_points.back() > 256);
    double disp = 0, budget = 0;
    for (int q = 0; q < 3; ++q) {
        disp += r2.reports[q].c0_displacement;
        budget += P.schedule.delta(q + 1);
    }
    CHECK(disp <= budget);
    // the image gets longer than the initial pi
    Curve c;
    c.closed = true;
    c.period = two_pi;
    c.winding = {two_pi};
    for (int i = 0; i < 64; ++i) {
        c.t.push_back(two_pi * i / 64);
        c.x.push_back({two_pi * i / 64});
    }
    CHECK(image_length(r2.final_state, c) > 0.5 * two_pi * 1.5);
}

TEST_CASE("iterate rejects maps that are not short enough") {
    auto P = circle_preset(64, 0.9, 2);
    CHECK_THROWS_AS(iterate(P.u0, P.g, P.schedule, P.dirs), std::invalid_argument);
    Schedule s;
    s.c0 = 1.5;
    CHECK_THROWS(s.validate());
}

TEST_CASE("rationals") {
    CHECK(Rational::parse("3/6") == Rational(1, 2));
    CHECK(Rational::parse("-0.25") == Rational(-1, 4));
    CHECK(Rational::parse("7") == Rational(7));
    CHECK((Rational(1, 3) + Rational(1, 6)).str() == "1/2");
    CHECK((Rational(2, 3) * Rational(3, 4)).str() == "1/2");
    CHECK((Rational(1, 2) / Rational(-1, 4)).str() == "-2");
    CHECK_THROWS(Rational(1, 0));
}

TEST_CASE("exponent calculus") {
    CHECK(exponent_solve(1, Rational(1, 2), Rational(1, 2), 1, -1) == Rational(1, 3));
    CHECK(exponent_solve(1, Rational(3, 4), Rational(1, 4), Rational(1, 2), Rational(-1, 2)) == Rational(1, 5));
    CHECK(exponent_solve(3, Rational(5, 2), Rational(1, 2), 1, -1) == Rational(1, 7));
    for (int n : {1, 2, 3}) {
        std::int64_t s = n * (n + 1) / 2;
        CHECK(isometric_exponent(s) == Rational(1, 1 + n * (n + 1)));
        // (n + 1)-fold step count
        std::int64_t s2 = n * (n + 1) * (n + 1) / 2;
        if (n * (n + 1) * (n + 1) % 2 == 0) CHECK(isometric_exponent(s2) == Rational(1, 1 + n * (n + 1) * (n + 1)));
    }
    CHECK_THROWS_AS(exponent_solve(1, Rational(1, 2), Rational(1, 3), 1, -1), ExponentError);
    CHECK_THROWS_AS(exponent_solve(1, Rational(1, 2), Rational(1, 2), 1, 0), ExponentError);
    CHECK_THROWS_AS(exponent_solve(1, 2, -1, 1, -1), ExponentError);
}

TEST_CASE("holder report on synthetic schedules") {
    // geometric schedule with theta0 = 1/7: delta_q = lambda^{-2 theta0 q}
    Rational th = isometric_exponent(3);
    std::vector<double> delta, lambda, inc;
    for (int q = 1; q <= 6; ++q) {
        double lq = std::pow(4.0, q);
        lambda.push_back(lq);
        delta.push_back(std::pow(lq, -2 * th.value()));
        inc.push_back(0.8 * std::sqrt(delta.back()));
    }
    auto r = holder_report(delta, lambda, inc);
    CHECK_FALSE(r.degenerate);
    CHECK(std::fabs(r.theta - 1.0 / 7) < 0.02);
    CHECK(r.c1_constant == doctest::Approx(0.8));

    std::vector<double> flat(4, 8.0), dd{0.5, 0.25, 0.125, 0.0625};
    auto r2 = holder_report(dd, flat);
    CHECK(r2.degenerate);
    CHECK(r2.theta == 1.0);
    CHECK_THROWS(holder_report({0.5, 0.25}, {8, 16}));
}
