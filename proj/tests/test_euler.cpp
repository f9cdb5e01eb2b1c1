#include <cmath>
#include <random>

#include "ciw/euler.hpp"
#include "ciw/metric.hpp"
#include "doctest.h"

using namespace ciw;

namespace {

constexpr double two_pi = 6.283185307179586;

double sup_vec(const GridField& f) {
    double m = 0;
    for (std::size_t p = 0; p < f.points(); ++p) m = std::max(m, f.point_norm(p));
    return m;
}

double sup_abs(const GridField& f) {
    double m = 0;
    for (double x : f.values()) m = std::max(m, std::fabs(x));
    return m;
}

Eigen::Matrix3d mean_matrix(const GridField& t) {
    Eigen::VectorXd m = field_mean(t);
    Eigen::Matrix3d A;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = m(sym_index(3, i, j));
    return A;
}

// random smooth mean-zero vector field with modes |k_i| <= 3
GridField random_field(const GridDomain& d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(-1, 1);
    auto f = GridField::vector(d, 3, Calculus::spectral);
    for (int c = 0; c < 3; ++c)
        for (int m = 0; m < 6; ++m) {
            int k0 = int(U(rng) * 3.4), k1 = int(U(rng) * 3.4), k2 = int(U(rng) * 3.4);
            if (k0 == 0 && k1 == 0 && k2 == 0) k0 = 1;
            double a = U(rng), ph = U(rng) * 3;
            for (std::size_t p = 0; p < d.size(); ++p) {
                auto id = d.unravel(p);
                f.at(c, p) += a * std::cos(k0 * d.coord(0, id[0]) + k1 * d.coord(1, id[1]) + k2 * d.coord(2, id[2]) + ph);
            }
        }
    return f;
}

GridField gradient_of_sin(const GridDomain& d, double amp) {
    auto g = GridField::vector(d, 3, Calculus::spectral);
    fill(g, [&](const double* x, double* o) {
        o[0] = amp * std::cos(x[0]);
        o[1] = o[2] = 0;
    });
    return g;
}

}  // namespace

TEST_CASE("div_inverse of zero is zero") {
    auto d = GridDomain::torus(3, 16);
    auto R = div_inverse(GridField::vector(d, 3, Calculus::spectral));
    CHECK(sup_abs(R) == 0.0);
}

TEST_CASE("div_inverse of (sin x1, 0, 0) is trace free and inverts div") {
    auto d = GridDomain::torus(3, 16);
    auto f = GridField::vector(d, 3, Calculus::spectral);
    fill(f, [](const double* x, double* o) {
        o[0] = std::sin(x[0]);
        o[1] = o[2] = 0;
    });
    auto R = div_inverse(f);
    double tr = 0;
    for (std::size_t p = 0; p < R.points(); ++p) tr = std::max(tr, std::fabs(R.t(0, 0, p) + R.t(1, 1, p) + R.t(2, 2, p)));
    CHECK(tr <= 1e-12);
    CHECK(sup_vec(divergence(R) - f) <= 1e-10);
    CHECK(sup_abs(R) < 10);
    CHECK(sup_abs(R) > 0.1);
}

TEST_CASE("div_inverse is homogeneous of degree -1") {
    auto d = GridDomain::torus(3, 32);
    auto make = [&](int n) {
        auto f = GridField::vector(d, 3, Calculus::spectral);
        fill(f, [&](const double* x, double* o) {
            double ph = n * (x[0] + 2 * x[1] - x[2]);
            o[0] = std::cos(ph);
            o[1] = 0.5 * std::sin(ph);
            o[2] = -0.3 * std::cos(ph);
        });
        return f;
    };
    auto rms = [](const GridField& f) {
        double s = 0;
        for (double x : f.values()) s += x * x;
        return std::sqrt(s / f.values().size());
    };
    double a = rms(div_inverse(make(1))), b = rms(div_inverse(make(2)));
    CHECK(std::fabs(b / a - 0.5) <= 1e-10);
}

TEST_CASE("div_inverse rejects a nonzero mean") {
    auto d = GridDomain::torus(3, 8);
    auto f = GridField::vector(d, 3, Calculus::spectral);
    for (std::size_t p = 0; p < f.points(); ++p) f.at(1, p) = 1e-6;
    CHECK_THROWS_AS(div_inverse(f), MeanError);
}

TEST_CASE("div_inverse on random mean-zero fields") {
    auto d = GridDomain::torus(3, 16);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 5; ++i) {
        auto f = random_field(d, rng);
        auto R = div_inverse(f);
        CHECK(sup_vec(divergence(R) - f) <= 1e-10 * std::max(1.0, sup_abs(f)));
    }
}

TEST_CASE("leray projection") {
    auto d = GridDomain::torus(3, 16);
    auto fam = beltrami_families();
    std::vector<double> amps(fam[0].pairs.size(), 0.3);
    auto U = beltrami_flow(beltrami_modes(fam[0], amps), d).U;

    SUBCASE("divergence-free input is fixed") { CHECK(sup_vec(leray_project(U) - U) <= 1e-12); }
    SUBCASE("pure gradient is removed") { CHECK(sup_vec(leray_project(gradient_of_sin(d, 1.0))) <= 1e-12); }
    SUBCASE("Beltrami part recovered") {
        auto w = U + gradient_of_sin(d, 0.1);
        CHECK(sup_vec(leray_project(w) - U) <= 1e-10);
    }
    SUBCASE("idempotent, orthogonal, mean removed") {
        std::mt19937_64 rng(5);
        auto w = random_field(d, rng);
        for (std::size_t p = 0; p < w.points(); ++p) w.at(2, p) += 0.7;
        auto Pw = leray_project(w);
        CHECK(sup_vec(leray_project(Pw) - Pw) <= 1e-10);
        CHECK(sup_abs(divergence(Pw)) <= 1e-10);
        CHECK(field_mean(Pw).norm() <= 1e-12);
        double ip = 0, nn = 0;
        auto r = w - Pw;
        for (std::size_t i = 0; i < w.values().size(); ++i) {
            ip += Pw.values()[i] * r.values()[i];
            nn += w.values()[i] * w.values()[i];
        }
        // the removed mean is constant, so r is orthogonal to Pw as well
        CHECK(std::fabs(ip) <= 1e-10 * nn);
    }
}

TEST_CASE("beltrami_amplitude conditions") {
    for (IVec3 k : {IVec3{1, 0, 0}, IVec3{0, 2, 0}, IVec3{1, 2, 0}, IVec3{-2, 1, 1}}) {
        auto B = beltrami_amplitude(k);
        Eigen::Vector3cd kc(k[0], k[1], k[2]);
        double lam = std::sqrt(double(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]));
        // written out: Eigen's cross conjugates complex operands
        Eigen::Vector3cd kxB(kc(1) * B(2) - kc(2) * B(1), kc(2) * B(0) - kc(0) * B(2), kc(0) * B(1) - kc(1) * B(0));
        Eigen::Vector3cd ikxB = std::complex<double>(0, 1) * kxB;
        CHECK((ikxB - lam * B).norm() <= 1e-12);
        CHECK(std::abs(kc.dot(B)) <= 1e-12);
        CHECK(std::fabs(B.norm() - 1) <= 1e-12);
        IVec3 mk{-k[0], -k[1], -k[2]};
        CHECK((beltrami_amplitude(mk) + B.conjugate()).norm() == 0.0);
    }
    auto B = beltrami_amplitude({1, 0, 0});
    // (0, 1, i) / sqrt 2 up to a phase
    CHECK(std::fabs(std::abs(B(1)) - std::sqrt(0.5)) <= 1e-12);
    CHECK(std::abs(B(2) - std::complex<double>(0, 1) * B(1)) <= 1e-12);
    CHECK_THROWS(beltrami_amplitude({0, 0, 0}));
}

TEST_CASE("beltrami_flow single pair stress") {
    auto d = GridDomain::torus(3, 8);
    auto F = beltrami_flow(single_pair_modes({1, 0, 0}, 1.0), d);
    Eigen::Matrix3d expect = Eigen::Matrix3d::Identity();
    expect(0, 0) = 0;
    CHECK((F.report.mean_stress - expect).norm() <= 1e-10);
    CHECK(F.report.stress_error <= 1e-10);
    CHECK(F.report.divergence <= 1e-12);
    CHECK(F.report.curl_residual <= 1e-12);
    CHECK(F.report.stationarity <= 1e-12);
    CHECK(F.report.imaginary <= 1e-15);
}

TEST_CASE("beltrami_flow with zero amplitude") {
    auto d = GridDomain::torus(3, 8);
    auto F = beltrami_flow(single_pair_modes({0, 1, 1}, 0.0), d);
    CHECK(sup_abs(F.U) == 0.0);
}

TEST_CASE("beltrami_flow realizes R = Id from the decomposition") {
    auto d = GridDomain::torus(3, 16);
    for (const auto& fam : beltrami_families()) {
        auto amps = beltrami_amplitudes(Eigen::Matrix3d::Identity(), fam);
        auto F = beltrami_flow(beltrami_modes(fam, amps), d);
        CHECK((F.report.mean_stress - Eigen::Matrix3d::Identity()).norm() <= 1e-10);
        CHECK(F.report.curl_residual <= 1e-10);
        CHECK(F.report.stationarity <= 1e-10);
        CHECK(F.report.lambda0 == doctest::Approx(std::sqrt(5.0)));
    }
}

TEST_CASE("beltrami_flow input errors") {
    auto d = GridDomain::torus(3, 8);
    auto modes = single_pair_modes({1, 0, 0}, 1.0);
    modes[1].a = 1.0;  // breaks a_{-k} = -conj(a_k)
    CHECK_THROWS_AS(beltrami_flow(modes, d), std::invalid_argument);
    std::vector<BeltramiMode> open{{IVec3{1, 0, 0}, 1.0}};
    CHECK_THROWS_AS(beltrami_flow(open, d), std::invalid_argument);
    auto mixed = single_pair_modes({1, 0, 0}, 1.0);
    auto other = single_pair_modes({1, 1, 0}, 1.0);
    mixed.insert(mixed.end(), other.begin(), other.end());
    CHECK_THROWS_AS(beltrami_flow(mixed, d), std::invalid_argument);
}

TEST_CASE("mikado_flow R = Id, lambda0 = 1") {
    auto d = GridDomain::torus(3, 48);
    auto F = mikado_flow(Eigen::Matrix3d::Identity(), 1, d);
    const auto& r = F.report;
    CHECK(r.pipes.size() == 3);
    for (const auto& p : r.pipes) CHECK(std::abs(p.k[0]) + std::abs(p.k[1]) + std::abs(p.k[2]) == 1);
    CHECK(r.divergence <= 1e-10);
    CHECK(r.stationarity <= 1e-10);
    CHECK(r.mean <= 1e-12);
    CHECK(r.stress_error <= 1e-8);
    CHECK(r.profile_mean <= 1e-12);
    CHECK(r.profile_square <= 1e-12);
    CHECK(r.min_gap >= 0);
    CHECK(r.line_invariance <= 1e-12);
    CHECK(r.overlap == 0.0);
}

TEST_CASE("mikado single direction depends on the transverse variables only") {
    auto d = GridDomain::torus(3, 32);
    auto pipes = place_pipes({IVec3{1, 0, 0}}, {1.0}, {});
    REQUIRE(pipes.size() == 1);
    pipes[0].shape = 1;
    pipes[0].scale = 1;
    auto W = GridField::vector(d, 3, Calculus::spectral);
    fill(W, [&](const double* x, double* o) {
        o[0] = pipe_value(pipes[0], Eigen::Vector3d(x[0], x[1], x[2]), 6);
        o[1] = o[2] = 0;
    });
    CHECK(sup_abs(divergence(W)) <= 1e-12);
    CHECK(sup_vec(divergence(outer(W, W))) <= 1e-12);
}

TEST_CASE("mikado_flow R = diag(2, 1, 1)") {
    auto d = GridDomain::torus(3, 48);
    Eigen::Matrix3d R = Eigen::Vector3d(2, 1, 1).asDiagonal();
    auto F = mikado_flow(R, 2, d);
    CHECK(F.report.stress_error <= 1e-8);
    CHECK(F.report.min_gap >= 0);
    CHECK(F.report.line_invariance <= 1e-12);
    CHECK(F.report.overlap == 0.0);
    // tilted pipes alias on the grid: the spectral route converges under refinement
    auto G = mikado_flow(R, 2, GridDomain::torus(3, 96));
    CHECK(G.report.divergence < 0.1 * F.report.divergence);
    CHECK(G.report.stationarity < 0.1 * F.report.stationarity);
}

TEST_CASE("pipe placement geometry") {
    // periodic lines along e1 and e2 through offsets 0 and (0,0,pi) are pi apart
    CHECK(line_distance({1, 0, 0}, Eigen::Vector3d::Zero(), {0, 1, 0}, Eigen::Vector3d(0, 0, M_PI)) ==
          doctest::Approx(M_PI));
    // parallel copies
    CHECK(line_distance({1, 0, 0}, Eigen::Vector3d::Zero(), {1, 0, 0}, Eigen::Vector3d(0, 1, 0)) ==
          doctest::Approx(1.0));
    CHECK(line_distance({1, 0, 0}, Eigen::Vector3d::Zero(), {1, 0, 0}, Eigen::Vector3d(0, two_pi - 1, 0)) ==
          doctest::Approx(1.0));
    PipeGeometry geo;
    geo.offset_denominator = 1;  // every line through the origin: no disjoint choice
    CHECK_THROWS_AS(place_pipes({IVec3{1, 0, 0}, IVec3{0, 1, 0}}, {1.0, 1.0}, geo), GeometryError);
}

TEST_CASE("profile_validate: Beltrami and Mikado at v = 0") {
    auto d = GridDomain::torus(3, 16);
    auto fam = beltrami_families();
    auto rb = profile_validate(beltrami_profile(fam[0]), Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), d);
    CHECK(rb.mean.pass);
    CHECK(rb.mean.measured <= 1e-10);
    CHECK(rb.stress.pass);
    CHECK(rb.stress.measured <= 1e-10);
    CHECK(rb.cell.measured <= 1e-8);
    CHECK(rb.bound.pass);
    CHECK(rb.v_derivative.pass);
    CHECK(rb.cell_pressure_rms > 0);

    auto dm = GridDomain::torus(3, 48);
    auto rm = profile_validate(mikado_profile(1), Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), dm);
    CHECK(rm.mean.pass);
    CHECK(rm.stress.pass);
    CHECK(rm.cell.pass);
    CHECK(rm.cell_pressure_rms <= 1e-10);
}

TEST_CASE("transported profile: cell problem holds but the v-derivative grows with tau") {
    auto d = GridDomain::torus(3, 16);
    auto W = transported_profile(beltrami_profile(beltrami_families()[0]));
    Eigen::Vector3d v(0.3, -0.2, 0.1);
    std::vector<double> ratio;
    for (double tau : {1.0, 2.0, 4.0}) {
        auto r = profile_validate(W, Eigen::Matrix3d::Identity(), v, d, tau);
        CHECK(r.cell.measured <= 1e-8);
        CHECK(r.mean.pass);
        CHECK(r.stress.pass);
        CHECK_FALSE(r.v_derivative.pass);
        ratio.push_back(r.v_derivative.measured);
    }
    CHECK(ratio[1] / ratio[0] == doctest::Approx(2.0).epsilon(0.05));
    CHECK(ratio[2] / ratio[1] == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("inverse_flow of zero and constant velocity") {
    auto d = GridDomain::torus(3, 8);
    VelocityHistory vh{{0.0}, {GridField::vector(d, 3, Calculus::spectral)}};
    auto F = inverse_flow(vh, 0.0, 1.5);
    CHECK(sup_abs(F.D) == 0.0);

    Eigen::Vector3d c(0.3, -0.1, 0.2);
    auto v = GridField::vector(d, 3, Calculus::spectral);
    for (int a = 0; a < 3; ++a)
        for (std::size_t p = 0; p < v.points(); ++p) v.at(a, p) = c(a);
    VelocityHistory vc{{0.0}, {v}};
    auto G = inverse_flow(vc, 0.5, 2.0);
    for (int a = 0; a < 3; ++a)
        for (std::size_t p = 0; p < G.D.points(); ++p) CHECK(G.D.at(a, p) == doctest::Approx(-c(a) * 1.5).epsilon(1e-12));
    CHECK(G.deformation <= 1e-10);
    auto H = inverse_flow(vc, 0.5, 0.5);
    CHECK(sup_abs(H.D) == 0.0);
}

TEST_CASE("inverse_flow of a Beltrami mode: deformation linear in time") {
    auto d = GridDomain::torus(3, 16);
    auto U = beltrami_flow(single_pair_modes({0, 1, 1}, 0.5), d).U;
    VelocityHistory vh{{0.0}, {U}};
    auto F1 = inverse_flow(vh, 0.0, 0.05 / 1.0, {}, 1.0);
    double gv = F1.grad_v;
    REQUIRE(gv > 0);
    auto a = inverse_flow(vh, 0.0, 0.05 / gv);
    auto b = inverse_flow(vh, 0.0, 0.1 / gv);
    CHECK(b.deformation <= 0.12);
    CHECK(b.deformation / a.deformation == doctest::Approx(2.0).epsilon(0.2));
    CHECK_THROWS_AS(inverse_flow(vh, 0.0, 10.0 / gv), CflError);
}

TEST_CASE("time_partition") {
    auto P = time_partition(1.0, 4.0);
    CHECK(P.count >= 4);
    double worst = 0;
    for (int i = 0; i <= 2000; ++i) {
        double t = i / 2000.0, s = 0;
        for (int j = 0; j < P.count; ++j) s += P.value(j, t) * P.value(j, t);
        worst = std::max(worst, std::fabs(s - 1));
        auto act = P.active(t);
        CHECK(act.size() <= 2);
        if (act.size() == 2) CHECK(act[1] == act[0] + 1);
    }
    CHECK(worst <= 1e-12);
    for (int j = 0; j + 1 < P.count; ++j) CHECK(P.parity(j) != P.parity(j + 1));
    CHECK(P.parity(1) == 1);
    CHECK(P.parity(2) == 2);

    std::vector<double> scaled;
    for (double mu : {4.0, 8.0, 16.0}) {
        auto Q = time_partition(1.0, mu);
        double m = 0;
        for (int i = 0; i <= 4000; ++i)
            for (int j = 0; j < Q.count; ++j) m = std::max(m, std::fabs(Q.derivative(j, i / 4000.0)));
        scaled.push_back(m / mu);
    }
    for (double s : scaled) CHECK(s == doctest::Approx(scaled[0]).epsilon(1e-3));
    CHECK(scaled[0] < 3.5);
    // derivative against a difference quotient
    double t = 0.37, h = 1e-6;
    CHECK(P.derivative(1, t) == doctest::Approx((P.value(1, t + h) - P.value(1, t - h)) / (2 * h)).epsilon(1e-6));
    CHECK_THROWS(time_partition(1.0, 0.5));
}

TEST_CASE("subsolution conversion") {
    auto d = GridDomain::torus(3, 8);
    SUBCASE("v = 0, R = rho Id") {
        Subsolution s{GridField::vector(d, 3, Calculus::spectral), GridField::scalar(d, Calculus::spectral),
                      GridField::sym_tensor(d, 3, Calculus::spectral)};
        for (std::size_t p = 0; p < s.p.points(); ++p) {
            s.p.at(0, p) = 0.4;
            for (int i = 0; i < 3; ++i) s.R.at(sym_index(3, i, i), p) = 0.2;
        }
        auto g = to_generalized(s);
        CHECK(sup_abs(g.u) <= 1e-15);
        for (std::size_t p = 0; p < s.p.points(); ++p) {
            CHECK(g.e.at(0, p) == doctest::Approx(0.3));
            CHECK(g.q.at(0, p) == doctest::Approx(0.6));
        }
        CHECK(generalized_energy(s) == doctest::Approx(0.3 * std::pow(two_pi, 3)));
    }
    SUBCASE("round trip of a random admissible state") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> N;
        Subsolution s{GridField::vector(d, 3, Calculus::spectral), GridField::scalar(d, Calculus::spectral),
                      GridField::sym_tensor(d, 3, Calculus::spectral)};
        for (std::size_t p = 0; p < s.p.points(); ++p) {
            Eigen::Matrix3d A = Eigen::Matrix3d::NullaryExpr([&](Eigen::Index, Eigen::Index) { return N(rng); });
            Eigen::Matrix3d R = A * A.transpose();
            for (int i = 0; i < 3; ++i)
                for (int j = i; j < 3; ++j) s.R.at(sym_index(3, i, j), p) = R(i, j);
            for (int a = 0; a < 3; ++a) s.v.at(a, p) = N(rng);
            s.p.at(0, p) = N(rng);
        }
        auto back = from_generalized(to_generalized(s));
        CHECK(sup_abs(back.v - s.v) <= 1e-12);
        CHECK(sup_abs(back.p - s.p) <= 1e-12);
        CHECK(sup_abs(back.R - s.R) <= 1e-12);
        Eigen::Matrix3d E = energy_tensor(s);
        CHECK(0.5 * E.trace() == doctest::Approx(generalized_energy(s)).epsilon(1e-12));
    }
    SUBCASE("exact Euler solution gives traceless u") {
        auto it = abc_iterate(8, 1.0, 0.0);
        Subsolution s{it.slices[0].v, it.slices[0].p, GridField::sym_tensor(d, 3, Calculus::spectral)};
        auto g = to_generalized(s);
        for (std::size_t p = 0; p < g.u.points(); ++p) {
            CHECK(std::fabs(g.u.t(0, 0, p) + g.u.t(1, 1, p) + g.u.t(2, 2, p)) <= 1e-12);
            Eigen::Vector3d v(s.v.at(0, p), s.v.at(1, p), s.v.at(2, p));
            CHECK(g.u.t(0, 1, p) == doctest::Approx(v(0) * v(1)));
        }
    }
    SUBCASE("indefinite stress is rejected") {
        Subsolution s{GridField::vector(d, 3, Calculus::spectral), GridField::scalar(d, Calculus::spectral),
                      GridField::sym_tensor(d, 3, Calculus::spectral)};
        s.R.at(sym_index(3, 0, 0), 7) = -0.1;
        try {
            to_generalized(s);
            FAIL("expected SemidefiniteError");
        } catch (const SemidefiniteError& e) {
            CHECK(e.node == 7);
        }
    }
}

TEST_CASE("energy_gap") {
    auto d = GridDomain::torus(3, 8);
    const double vol = std::pow(two_pi, 3);
    VelocityHistory zero{{0.0, 1.0}, {GridField::vector(d, 3, Calculus::spectral), GridField::vector(d, 3, Calculus::spectral)}};
    auto rho = energy_gap([](double) { return 5.0; }, zero, {0.0, 0.5, 1.0});
    for (double r : rho) CHECK(r == doctest::Approx(5.0 / (3 * vol)));

    auto it = abc_iterate(8, 0.5, 0.0);
    VelocityHistory v{{0.0}, {it.slices[0].v}};
    double E = kinetic_energy(it.slices[0].v);
    auto r0 = energy_gap([&](double) { return E; }, v, {0.0});
    CHECK(r0[0] == 0.0);
    CHECK_THROWS_AS(energy_gap([&](double) { return 0.9 * E; }, v, {0.0}), EnergyError);
    // rho bounded by delta / 4 under the bookkeeping
    double delta = 0.2;
    auto ok = energy_gap([&](double) { return E + 0.24 * delta * 3 * vol; }, v, {0.0}, delta);
    CHECK(ok[0] <= delta / 4);
    CHECK_THROWS_AS(energy_gap([&](double) { return E + 0.3 * delta * 3 * vol; }, v, {0.0}, delta), EnergyError);
}

TEST_CASE("ABC iterate is an exact stationary solution") {
    auto it = abc_iterate(16, 0.7, 0.1);
    const auto& v = it.slices[0].v;
    CHECK(sup_vec(curl(v) - v) <= 1e-12);
    auto rep = check_invariants(it, 0.12);
    CHECK(rep.pass);
    CHECK(rep.residual <= 1e-12);
    CHECK(rep.rho_min == doctest::Approx(0.1));
}

TEST_CASE("check_invariants flags a cone violation") {
    auto it = seed_iterate(8, 0.1);
    for (std::size_t p = 0; p < it.slices[0].R.points(); ++p) {
        it.slices[0].R.at(sym_index(3, 0, 0), p) = 0.05;
        it.slices[0].R.at(sym_index(3, 1, 1), p) = -0.05;
    }
    auto rep = check_invariants(it, 0.12);
    CHECK_FALSE(rep.pass);
    CHECK(rep.failed == "stress in the cone");
}

TEST_CASE("euler_step from the seed at small lambda") {
    auto fam = beltrami_families();
    auto it = seed_iterate(16, 0.1);
    EulerStepOptions o;
    o.times = {1.0, 2.5, 4.0};
    auto r = euler_step(it, 4, 1.0 / o.T, fam, o);
    const auto& rep = r.report;
    CHECK(rep.delta_next == doctest::Approx(0.1 * std::sqrt(3.0)));
    CHECK(rep.corrector <= 1e-12);  // constant amplitudes, no flow: w_o is already divergence-free
    CHECK(rep.term("oscillation").measured <= 1e-12);
    CHECK(rep.term("nash").measured == 0.0);
    CHECK(rep.stress_after == doctest::Approx(rep.term("transport").measured));
    CHECK(rep.energy_increment == doctest::Approx(rep.energy_predicted).epsilon(0.1));
    REQUIRE(r.next.slices.size() == 3);
    auto inv = check_invariants(r.next, 0.12, 1e-10, 1e300);
    CHECK(inv.pass);
    auto js = rep.to_json();
    CHECK(js["terms"].size() == 3);
    CHECK(js["working_grid"].get<int>() == rep.working_grid);
}

TEST_CASE("euler_step Nash term halves when lambda doubles") {
    auto fam = beltrami_families();
    auto it = abc_iterate(16, 0.25, 0.1);
    EulerStepOptions o;
    o.transport = o.oscillation = false;
    o.times = {0.0, 0.5};
    auto a = euler_step(it, 4, 1.0, fam, o).report.term("nash").measured;
    auto b = euler_step(it, 8, 1.0, fam, o).report.term("nash").measured;
    CHECK(b / a == doctest::Approx(0.5).epsilon(0.25));
}

TEST_CASE("euler_step errors") {
    auto fam = beltrami_families();
    SUBCASE("cone") {
        auto it = seed_iterate(8, 0.01);
        for (std::size_t p = 0; p < it.slices[0].R.points(); ++p) {
            it.slices[0].R.at(sym_index(3, 0, 0), p) = 0.01;
            it.slices[0].R.at(sym_index(3, 1, 1), p) = -0.01;
        }
        CHECK_THROWS_AS(euler_step(it, 4, 1.0, fam), ConeError);
    }
    SUBCASE("CFL") {
        auto it = abc_iterate(8, 1.0, 0.1);
        try {
            euler_step(it, 4, 0.5, fam);
            FAIL("expected CflError");
        } catch (const CflError& e) {
            CHECK(e.value == 0.5);
        }
    }
    SUBCASE("non-integer frequency") { CHECK_THROWS_AS(euler_step(seed_iterate(8, 0.1), 4.5, 1.0, fam), ModeError); }
    SUBCASE("resolution") {
        EulerStepOptions o;
        o.max_working_grid = 32;
        CHECK_THROWS_AS(euler_step(seed_iterate(8, 0.1), 16, 1.0, fam, o), ResolutionError);
    }
}
