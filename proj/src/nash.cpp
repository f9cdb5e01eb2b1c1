#include "ciw/nash.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ciw {

namespace {

constexpr double two_pi = 6.283185307179586;
constexpr double krasny_level = 1e-13;

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;

SmallMat jacobian_at(const ImmersionState& s, std::size_t p) {
    int n = s.n(), N = s.N();
    SmallMat J(N, n);
    for (int c = 0; c < N; ++c)
        for (int i = 0; i < n; ++i) J(c, i) = s.du.at(c * n + i, p);
    return J;
}

// component of r orthogonal to the columns of T (T has full column rank)
SmallVec project_out(const SmallMat& T, const SmallVec& r) {
    if (T.cols() == 0) return r;
    SmallMat G = T.transpose() * T;
    SmallVec coef = G.ldlt().solve(T.transpose() * r);
    return r - T * coef;
}

SmallVec reference(int which, const ImmersionState& s, std::size_t p, const std::vector<double>& centroid) {
    int n = s.n(), N = s.N();
    SmallVec r = SmallVec::Zero(N);
    if (which == 0) {
        if (s.normal_hint.points() == s.u.points())
            for (int c = 0; c < N; ++c) r(c) = s.normal_hint.at(c, p);
    } else if (which == 1) {
        for (int c = 0; c < N; ++c) r(c) = s.u.at(c, p) - centroid[c];
    } else {
        // e_{n+1}, .., e_N, then e_1, .., e_n
        int j = which - 2;
        int axis = j < N - n ? n + j : j - (N - n);
        r(axis) = 1;
    }
    return r;
}

// generalized cross product of the N - 1 columns of M: the vector v with
// det[M | v] = |v|^2
SmallVec complete_orientation(const SmallMat& M) {
    int N = static_cast<int>(M.rows());
    SmallVec v(N);
    for (int i = 0; i < N; ++i) {
        SmallMat minor(N - 1, N - 1);
        for (int r = 0, rr = 0; r < N; ++r) {
            if (r == i) continue;
            for (int c = 0; c < N - 1; ++c) minor(rr, c) = M(r, c);
            ++rr;
        }
        double sgn = ((i + N - 1) % 2 == 0) ? 1.0 : -1.0;
        v(i) = sgn * (N == 1 ? 1.0 : minor.determinant());
    }
    return v;
}

double sup_hs_difference(const GridField& a, const GridField& b) {
    double m = 0;
    int n = a.tensor_dim();
    for (std::size_t p = 0; p < a.points(); ++p) {
        double s = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double d = a.t(i, j, p) - b.t(i, j, p);
                s += d * d;
            }
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

double sup_norm(const GridField& f) {
    double m = 0;
    for (std::size_t p = 0; p < f.points(); ++p) m = std::max(m, f.point_norm(p));
    return m;
}

double sup_difference(const GridField& a, const GridField& b) {
    double m = 0;
    for (std::size_t p = 0; p < a.points(); ++p) {
        double s = 0;
        for (int c = 0; c < a.components(); ++c) {
            double d = a.at(c, p) - b.at(c, p);
            s += d * d;
        }
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

// integer vector parallel to xi with entries up to 12, if any
bool lattice_vector(const Eigen::VectorXd& xi, std::vector<int>& out) {
    int n = static_cast<int>(xi.size());
    double xmax = xi.cwiseAbs().maxCoeff();
    for (int t = 1; t <= 12; ++t) {
        std::vector<int> p(n);
        bool ok = true;
        for (int i = 0; i < n; ++i) {
            double v = xi(i) / xmax * t;
            p[i] = static_cast<int>(std::lround(v));
            if (std::fabs(v - p[i]) > 1e-9) ok = false;
        }
        if (ok) {
            out = p;
            return true;
        }
    }
    return false;
}

}  // namespace

NormalFrame normal_frame(const ImmersionState& s) {
    int n = s.n(), N = s.N();
    if (N < n + 2)
        throw CodimensionError("normal frame needs N >= n + 2 (got n = " + std::to_string(n) +
                               ", N = " + std::to_string(N) + ")");
    if (N > 8) throw CodimensionError("target dimension above 8 is not supported");
    if (!s.degenerate_nodes.empty())
        throw FrameError("Du is rank deficient", s.degenerate_nodes.front());
    std::size_t P = s.u.points();
    std::vector<double> centroid(N, 0.0);
    for (int c = 0; c < N; ++c) {
        double acc = 0;
        for (std::size_t p = 0; p < P; ++p) acc += s.u.at(c, p);
        centroid[c] = acc / static_cast<double>(P);
    }
    const int ncand = 2 + N;
    const double accept = 0.1;

    // choose the first reference that works at every node so the frame is
    // as smooth as u itself
    auto min_ratio = [&](int which, const std::vector<const GridField*>& prior) {
        double m = 1e300;
        for (std::size_t p = 0; p < P; ++p) {
            SmallMat T = jacobian_at(s, p);
            for (const auto* f : prior) {
                T.conservativeResize(N, T.cols() + 1);
                for (int c = 0; c < N; ++c) T(c, T.cols() - 1) = f->at(c, p);
            }
            SmallVec r = reference(which, s, p, centroid);
            double rn = r.norm();
            double ratio = rn > 0 ? project_out(T, r).norm() / rn : 0.0;
            m = std::min(m, ratio);
            if (m < accept) break;
        }
        return m;
    };

    NormalFrame F;
    F.zeta = GridField::vector(s.u.domain(), N, s.u.mode());
    F.eta = GridField::vector(s.u.domain(), N, s.u.mode());

    auto fill_projected = [&](GridField& out, int which, const std::vector<const GridField*>& prior) {
        for (std::size_t p = 0; p < P; ++p) {
            SmallMat T = jacobian_at(s, p);
            for (const auto* f : prior) {
                T.conservativeResize(N, T.cols() + 1);
                for (int c = 0; c < N; ++c) T(c, T.cols() - 1) = f->at(c, p);
            }
            int w = which;
            SmallVec v;
            if (w >= 0) {
                v = project_out(T, reference(w, s, p, centroid));
            } else {
                // node-wise fallback: first reference with enough normal part
                for (int c = 0; c < ncand; ++c) {
                    SmallVec r = reference(c, s, p, centroid);
                    double rn = r.norm();
                    if (rn == 0) continue;
                    v = project_out(T, r);
                    if (v.norm() / rn >= accept) break;
                }
            }
            v /= v.norm();
            // one more pass against roundoff
            v = project_out(T, v);
            v /= v.norm();
            for (int c = 0; c < N; ++c) out.at(c, p) = v(c);
        }
    };

    int zeta_ref = -1;
    for (int c = 0; c < ncand; ++c)
        if (min_ratio(c, {}) >= accept) {
            zeta_ref = c;
            break;
        }
    F.reference = zeta_ref;
    fill_projected(F.zeta, zeta_ref, {});

    if (N == n + 2) {
        for (std::size_t p = 0; p < P; ++p) {
            SmallMat M(N, n + 1);
            M.leftCols(n) = jacobian_at(s, p);
            for (int c = 0; c < N; ++c) M(c, n) = F.zeta.at(c, p);
            SmallVec v = complete_orientation(M);
            v /= v.norm();
            for (int c = 0; c < N; ++c) F.eta.at(c, p) = v(c);
        }
    } else {
        int eta_ref = -1;
        for (int c = 0; c < ncand; ++c)
            if (min_ratio(c, {&F.zeta}) >= accept) {
                eta_ref = c;
                break;
            }
        fill_projected(F.eta, eta_ref, {&F.zeta});
        if (eta_ref < 0) F.reference = -1;
    }

    if (F.reference < 0) {
        // node-wise choices may jump between neighbours
        const auto& d = s.u.domain();
        for (std::size_t p = 0; p < P; ++p) {
            auto idx = d.unravel(p);
            for (int a = 0; a < d.dim; ++a) {
                if (idx[a] + 1 >= d.res[a] && !d.periodic[a]) continue;
                std::size_t q = idx[a] + 1 < d.res[a] ? p + d.stride(a) : p - idx[a] * d.stride(a);
                double jz = 0, je = 0;
                for (int c = 0; c < N; ++c) {
                    jz += std::pow(F.zeta.at(c, p) - F.zeta.at(c, q), 2);
                    je += std::pow(F.eta.at(c, p) - F.eta.at(c, q), 2);
                }
                if (std::sqrt(jz) > 0.5 || std::sqrt(je) > 0.5)
                    throw FrameError("normal frame jumps between nodes " + std::to_string(p) + " and " +
                                         std::to_string(q),
                                     p);
            }
        }
    }
    return F;
}

double admissible_frequency(const GridDomain& d, const Eigen::VectorXd& xi, double lambda) {
    if (!d.all_periodic()) return lambda;
    std::vector<int> p;
    if (!lattice_vector(xi, p))
        throw ModeError("direction is not parallel to an integer vector; spiral cannot be periodic");
    double period = d.extent[0];
    for (int a = 0; a < d.dim; ++a)
        if (p[a] != 0 && std::fabs(d.extent[a] - period) > 1e-12 * period)
            throw ModeError("spiral on a torus with unequal periods is not supported");
    double pn = 0;
    for (int v : p) pn += double(v) * v;
    double step = std::sqrt(pn) * two_pi / period;
    double m = std::ceil(lambda / step - 1e-9);
    return std::max(1.0, m) * step;
}

bool resolvable(const GridDomain& d, const Eigen::VectorXd& xi, double lambda) {
    for (int a = 0; a < d.dim; ++a)
        if (lambda * std::fabs(xi(a)) * d.spacing(a) > two_pi / 8 + 1e-12) return false;
    return true;
}

GridField spiral_field(const ImmersionState& s, const GridField& a, const Eigen::VectorXd& xi,
                       double lambda, const NormalFrame& F) {
    const auto& d = s.u.domain();
    if (xi.size() != d.dim) throw std::invalid_argument("direction has wrong dimension");
    if (!(a.domain() == d) || a.components() != 1)
        throw std::invalid_argument("amplitude must be a scalar on the same grid");
    if (!resolvable(d, xi, lambda))
        throw ResolutionError("frequency " + std::to_string(lambda) +
                              " is not resolved (fewer than 8 samples per wavelength)");
    if (d.all_periodic()) {
        double adm = admissible_frequency(d, xi, lambda);
        if (std::fabs(adm - lambda) > 1e-9 * lambda)
            throw ModeError("frequency " + std::to_string(lambda) + " breaks periodicity along xi");
    }
    GridField out = s.u;
    int N = s.N();
    std::vector<int> idx(d.dim);
    for (std::size_t p = 0; p < s.u.points(); ++p) {
        double amp = a.at(0, p);
        if (amp == 0) continue;
        auto id = d.unravel(p);
        double phase = 0;
        for (int k = 0; k < d.dim; ++k) phase += d.coord(k, id[k]) * xi(k);
        phase *= lambda;
        double sn = std::sin(phase), cs = std::cos(phase);
        for (int c = 0; c < N; ++c)
            out.at(c, p) += amp / lambda * (sn * F.zeta.at(c, p) + cs * F.eta.at(c, p));
    }
    return out;
}

ImmersionState spiral_step(const ImmersionState& u, const GridField& a, const Eigen::VectorXd& xi,
                           double lambda, const NormalFrame& frame) {
    GridField w = spiral_field(u, a, xi, lambda, frame);
    bool spectral = w.domain().all_periodic() && w.mode() == Calculus::spectral;
    auto next = ImmersionState::from(std::move(w), spectral ? krasny_level : 0.0);
    // sin(phase) zeta + cos(phase) eta is normal to the new tangent up to
    // O(1/lambda), so it seeds the next frame
    const auto& d = u.u.domain();
    next.normal_hint = GridField::vector(d, u.N(), u.u.mode());
    for (std::size_t p = 0; p < u.u.points(); ++p) {
        auto id = d.unravel(p);
        double phase = 0;
        for (int k = 0; k < d.dim; ++k) phase += d.coord(k, id[k]) * xi(k);
        phase *= lambda;
        double sn = std::sin(phase), cs = std::cos(phase);
        for (int c = 0; c < u.N(); ++c)
            next.normal_hint.at(c, p) = sn * frame.zeta.at(c, p) + cs * frame.eta.at(c, p);
    }
    return next;
}

ImmersionState spiral_step(const ImmersionState& u, const GridField& a, const Eigen::VectorXd& xi,
                           double lambda) {
    return spiral_step(u, a, xi, lambda, normal_frame(u));
}

double step_deviation(const ImmersionState& u, const ImmersionState& v, const GridField& a,
                      const Eigen::VectorXd& xi) {
    int n = u.n();
    double m = 0;
    for (std::size_t p = 0; p < u.u.points(); ++p) {
        double a2 = a.at(0, p) * a.at(0, p), s = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double dd = v.pull.t(i, j, p) - u.pull.t(i, j, p) - a2 * xi(i) * xi(j);
                s += dd * dd;
            }
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

std::vector<GridField> stage_amplitudes(const ImmersionState& u, const MetricField& g_target,
                                        const DirectionSet& dirs) {
    int n = u.n();
    if (dirs.n() != n || g_target.n() != n) throw std::invalid_argument("dimension mismatch in stage");
    std::vector<GridField> amps(dirs.size(), GridField::scalar(u.u.domain(), u.u.mode()));
    Eigen::MatrixXd h(n, n);
    for (std::size_t p = 0; p < u.u.points(); ++p) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) h(i, j) = g_target.g.t(i, j, p) - u.pull.t(i, j, p);
        std::vector<double> mu;
        if (h.norm() <= 1e-14) {
            mu.assign(dirs.size(), 0.0);
        } else {
            if (n == 1 && !(h(0, 0) > 0))
                throw ConeError("metric error is not positive at node " + std::to_string(p));
            try {
                mu = local_decompose(h, dirs);
            } catch (const ConeError& e) {
                throw ConeError(std::string(e.what()) + " at node " + std::to_string(p));
            }
        }
        for (int k = 0; k < dirs.size(); ++k) amps[k].at(0, p) = mu[k];
    }
    return amps;
}

StageResult stage(const ImmersionState& u, const MetricField& g_target, double tol,
                  const DirectionSet& dirs, const FrequencyPolicy& policy) {
    auto t0 = std::chrono::steady_clock::now();
    StageResult res;
    auto& rep = res.report;
    rep.tolerance = tol;
    rep.input_error = sup_hs_difference(g_target.g, u.pull);
    auto amps = stage_amplitudes(u, g_target, dirs);
    const auto& d = u.u.domain();
    int S = dirs.size();
    double lambda = policy.lambda_start;
    ImmersionState cur = u;
    for (int k = 0; k < S; ++k) {
        double asup = sup_norm(amps[k]);
        rep.amplitudes.push_back(asup);
        if (asup == 0) {
            rep.lambdas.push_back(0);
            rep.deviations.push_back(0);
            rep.attempts.push_back(0);
            continue;
        }
        NormalFrame F = normal_frame(cur);
        const Eigen::VectorXd& xi = dirs.xi[k];
        lambda = admissible_frequency(d, xi, lambda);
        int attempts = 0;
        while (true) {
            if (!resolvable(d, xi, lambda))
                throw ResolutionError("step " + std::to_string(k) + ": frequency " + std::to_string(lambda) +
                                      " exceeds the grid resolution budget");
            ++attempts;
            ImmersionState next = spiral_step(cur, amps[k], xi, lambda, F);
            double dev = step_deviation(cur, next, amps[k], xi);
            if (dev <= tol / S) {
                rep.lambdas.push_back(lambda);
                rep.deviations.push_back(dev);
                rep.attempts.push_back(attempts);
                cur = std::move(next);
                break;
            }
            double factor = policy.growth;
            if (policy.predictive)
                factor = std::clamp(1.05 * dev / (tol / S), 1.1, policy.growth);
            lambda = admissible_frequency(d, xi, lambda * factor);
        }
    }
    rep.error = sup_hs_difference(g_target.g, cur.pull);
    rep.c0_displacement = sup_difference(cur.u, u.u);
    rep.c1_displacement = sup_difference(cur.du, u.du);
    rep.c1_constant = rep.input_error > 0 ? rep.c1_displacement / std::sqrt(rep.input_error) : 0;
    rep.success = rep.error <= tol;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.u = std::move(cur);
    return res;
}

double Schedule::delta(int q) const {
    if (rule == Rule::halving) return eps * std::pow(2.0, -q);
    return std::pow(lambda, -2.0 * theta0 * q);
}

void Schedule::validate() const {
    if (!(c0 > 0 && c0 < 1)) throw std::invalid_argument("schedule c0 must lie in (0, 1)");
    if (Q < 0) throw std::invalid_argument("schedule Q must be nonnegative");
    if (rule == Rule::halving && !(eps > 0)) throw std::invalid_argument("schedule eps must be positive");
    if (rule == Rule::geometric && !(lambda > 1 && theta0 > 0 && theta0 < 1))
        throw std::invalid_argument("geometric schedule needs lambda > 1 and theta0 in (0, 1)");
}

MetricField shifted_metric(const MetricField& g, double delta) {
    int n = g.n();
    GridField t = g.g;
    for (std::size_t p = 0; p < t.points(); ++p)
        for (int i = 0; i < n; ++i) t.at(sym_index(n, i, i), p) -= delta;
    return MetricField(std::move(t));
}

ImmersionState refine_state(const ImmersionState& s, const std::vector<int>& res) {
    auto r = ImmersionState::from(spectral_resample(s.u, res), krasny_level);
    if (s.normal_hint.points() == s.u.points()) r.normal_hint = spectral_resample(s.normal_hint, res);
    return r;
}

IterateResult iterate(const ImmersionState& u0, const MetricField& g, const Schedule& sched,
                      const DirectionSet& dirs, const IterateOptions& opt) {
    sched.validate();
    int n = u0.n();
    IterateResult out;
    auto sh = shortness(g, u0);
    if (!(sh.margin > sched.delta(0)))
        throw std::invalid_argument("initial map is not short with margin above delta_0 (margin " +
                                    std::to_string(sh.margin) + ")");
    ImmersionState u = u0;
    out.metric_errors.push_back(sup_hs_difference(shifted_metric(g, sched.delta(0)).g, u.pull));
    out.short_margins.push_back(sh.margin);
    if (opt.keep_history) out.history.push_back(u.u);
    out.grid_points.push_back(u.u.points());
    FrequencyPolicy pol = opt.policy;
    MetricField gcur = g;
    for (int q = 0; q < sched.Q; ++q) {
        StageResult r;
        bool done = false;
        while (!done) {
            MetricField gq1 = shifted_metric(gcur, sched.delta(q + 1));
            double tol = sched.c0 * sched.delta(q + 2);
            try {
                r = stage(u, gq1, tol, dirs, pol);
                done = true;
            } catch (const ResolutionError& e) {
                const auto& d = u.u.domain();
                if (d.all_periodic() && u.u.mode() == Calculus::spectral &&
                    (d.size() << d.dim) <= opt.max_points) {
                    std::vector<int> res = d.res;
                    for (auto& m : res) m *= 2;
                    u = refine_state(u, res);
                    gcur = MetricField(spectral_resample(gcur.g, res));
                    continue;
                }
                out.stop_reason = "stage " + std::to_string(q) + ": " + e.what();
                break;
            } catch (const ConeError& e) {
                throw InvariantError("stage " + std::to_string(q) + " input left the certified cone: " + e.what());
            }
        }
        if (!done) break;
        double tol = sched.c0 * sched.delta(q + 2);
        if (!r.report.success)
            throw InvariantError("stage " + std::to_string(q) + " error " + std::to_string(r.report.error) +
                                 " exceeds c0 delta = " + std::to_string(tol));
        u = std::move(r.u);
        auto s2 = shortness(gcur, u);
        if (!(s2.margin > 0))
            throw InvariantError("stage " + std::to_string(q) + " lost strict shortness (margin " +
                                 std::to_string(s2.margin) + ")");
        out.metric_errors.push_back(r.report.error);
        out.short_margins.push_back(s2.margin);
        for (double l : r.report.lambdas) pol.lambda_start = std::max(pol.lambda_start, l);
        out.reports.push_back(std::move(r.report));
        if (opt.keep_history) out.history.push_back(u.u);
        out.grid_points.push_back(u.u.points());
        ++out.stages_done;
    }
    out.completed = out.stages_done == sched.Q;
    out.final_state = std::move(u);
    return out;
}

// presets

NashPreset circle_preset(int M, double r, int Q) {
    NashPreset P;
    P.name = "round-circle";
    auto d = GridDomain::torus(1, M);
    auto u = GridField::vector(d, 3, Calculus::spectral);
    fill(u, [&](const double* x, double* o) {
        o[0] = r * std::cos(x[0]);
        o[1] = r * std::sin(x[0]);
        o[2] = 0;
    });
    P.u0 = ImmersionState::from(std::move(u), krasny_level);
    P.g = MetricField::constant(d, Eigen::MatrixXd::Identity(1, 1), Calculus::spectral);
    P.dirs = primitive_directions(1);
    P.schedule.eps = 0.5;
    P.schedule.c0 = stage_error_factor(P.dirs);
    P.schedule.Q = Q;
    return P;
}

NashPreset flat_torus_preset(int M, double r, int Q) {
    NashPreset P;
    P.name = "flat-torus";
    auto d = GridDomain::torus(2, M);
    auto u = GridField::vector(d, 4, Calculus::spectral);
    fill(u, [&](const double* x, double* o) {
        o[0] = r * std::cos(x[0]);
        o[1] = r * std::sin(x[0]);
        o[2] = r * std::cos(x[1]);
        o[3] = r * std::sin(x[1]);
    });
    P.u0 = ImmersionState::from(std::move(u), krasny_level);
    P.g = MetricField::constant(d, Eigen::MatrixXd::Identity(2, 2), Calculus::spectral);
    P.dirs = lattice_directions(2);
    P.schedule.eps = 0.5 * (1 - r * r);
    P.schedule.c0 = stage_error_factor(P.dirs);
    P.schedule.Q = Q;
    return P;
}

NashPreset flat_square_preset(int M, double s, double extra, int Q) {
    NashPreset P;
    P.name = "flat-square";
    auto d = GridDomain::box({0.0, 0.0}, {1.0, 1.0}, {M, M});
    auto u = GridField::vector(d, 4, Calculus::finite_difference);
    fill(u, [&](const double* x, double* o) {
        o[0] = s * x[0];
        o[1] = s * x[1];
        o[2] = o[3] = 0;
    });
    P.u0 = ImmersionState::from(std::move(u));
    P.g = MetricField::constant(d, (s * s + extra) * Eigen::MatrixXd::Identity(2, 2),
                                Calculus::finite_difference);
    P.dirs = primitive_directions(2);
    P.schedule.eps = 0.5 * extra;
    P.schedule.c0 = stage_error_factor(P.dirs);
    P.schedule.Q = Q;
    return P;
}

NashPreset sphere_chart_preset(int M, double r, int Q) {
    NashPreset P;
    P.name = "scaled-sphere-chart";
    const double pi = 0.5 * two_pi;
    auto d = GridDomain::box({pi / 3, 0.0}, {2 * pi / 3, pi}, {M, M});
    auto u = GridField::vector(d, 5, Calculus::finite_difference);
    fill(u, [&](const double* x, double* o) {
        o[0] = r * std::sin(x[0]) * std::cos(x[1]);
        o[1] = r * std::sin(x[0]) * std::sin(x[1]);
        o[2] = r * std::cos(x[0]);
        o[3] = o[4] = 0;
    });
    P.u0 = ImmersionState::from(std::move(u));
    auto g = GridField::sym_tensor(d, 2, Calculus::finite_difference);
    fill(g, [&](const double* x, double* o) {
        o[0] = 1;
        o[1] = 0;
        o[2] = std::sin(x[0]) * std::sin(x[0]);
    });
    P.g = MetricField(std::move(g));
    P.dirs = primitive_directions(2);
    P.schedule.eps = 0.5 * (1 - r * r) * 0.75;
    P.schedule.c0 = stage_error_factor(P.dirs);
    P.schedule.Q = Q;
    return P;
}

NashPreset make_preset(const std::string& name, int M, int Q) {
    if (name == "round-circle") return circle_preset(M, 0.5, Q);
    if (name == "flat-torus") return flat_torus_preset(M, 0.7, Q);
    if (name == "flat-square") return flat_square_preset(M, 1.0, 0.1, Q);
    if (name == "scaled-sphere-chart") return sphere_chart_preset(M, 0.7, Q);
    throw std::invalid_argument("unknown preset '" + name + "'");
}

// exponent calculus

namespace {
std::int64_t reduce_to_i64(__int128 v) {
    if (v > INT64_MAX || v < INT64_MIN) throw std::overflow_error("rational overflow");
    return static_cast<std::int64_t>(v);
}
Rational make(__int128 n, __int128 d) {
    if (d == 0) throw ExponentError("division by zero in rational arithmetic");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a == 0) a = 1;
    Rational r;
    r.num = reduce_to_i64(n / a);
    r.den = reduce_to_i64(d / a);
    return r;
}
}  // namespace

Rational::Rational(std::int64_t n, std::int64_t d) { *this = make(n, d); }

Rational Rational::parse(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) {
            auto dot = s.find('.');
            if (dot == std::string::npos) return Rational(std::stoll(s), 1);
            // finite decimal
            std::string digits = s.substr(0, dot) + s.substr(dot + 1);
            std::int64_t den = 1;
            for (std::size_t i = dot + 1; i < s.size(); ++i) den *= 10;
            return Rational(std::stoll(digits), den);
        }
        return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
    } catch (const std::logic_error&) {
        throw ExponentError("cannot parse rational '" + s + "'");
    }
}

std::string Rational::str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

Rational Rational::operator+(const Rational& o) const {
    return make(static_cast<__int128>(num) * o.den + static_cast<__int128>(o.num) * den,
                static_cast<__int128>(den) * o.den);
}
Rational Rational::operator-(const Rational& o) const { return *this + (-o); }
Rational Rational::operator*(const Rational& o) const {
    return make(static_cast<__int128>(num) * o.num, static_cast<__int128>(den) * o.den);
}
Rational Rational::operator/(const Rational& o) const {
    if (o.num == 0) throw ExponentError("division by zero in rational arithmetic");
    return make(static_cast<__int128>(num) * o.den, static_cast<__int128>(den) * o.num);
}

Rational exponent_solve(const Rational& p, const Rational& a, const Rational& b, const Rational& c,
                        const Rational& d) {
    // exponents of lambda: -2 theta (q + 2) p = -2 theta (q + 1) a - 2 theta q b + c q + d (q + 1)
    if (p != a + b) throw ExponentError("inconsistent ansatz: p != a + b");
    if (c + d != Rational(0)) throw ExponentError("inconsistent ansatz: c + d != 0");
    Rational coef = Rational(4) * p - Rational(2) * a;
    if (coef.num == 0) throw ExponentError("singular recursion: no theta dependence");
    return -d / coef;
}

Rational isometric_exponent(std::int64_t steps) {
    Rational S(steps);
    return exponent_solve(S, S - Rational(1, 2), Rational(1, 2), Rational(1), Rational(-1));
}

HolderReport holder_report(const std::vector<double>& delta, const std::vector<double>& lambda,
                           const std::vector<double>& increments) {
    if (delta.size() < 3 || lambda.size() != delta.size())
        throw std::invalid_argument("holder report needs at least 3 stages with delta and lambda");
    HolderReport r;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t q = 0; q < delta.size(); ++q) {
        if (!(delta[q] > 0 && lambda[q] > 0)) throw std::invalid_argument("holder report needs positive data");
        pts.emplace_back(lambda[q], delta[q]);
    }
    double lo = pts.front().first, hi = lo;
    for (auto& p : pts) {
        lo = std::min(lo, p.first);
        hi = std::max(hi, p.first);
    }
    if (std::log(hi / lo) < 1e-12) {
        r.degenerate = true;
        r.theta = 1;
        r.note = "schedule-degenerate: frequencies do not grow";
    } else {
        // delta ~ lambda^{-2 theta}: sum delta^{1/2} lambda^theta' converges iff theta' < theta
        auto fit = scaling_fit(pts);
        r.theta = std::clamp(-0.5 * fit.slope, 0.0, 1.0);
        r.fit_residual = fit.residual;
    }
    if (!increments.empty()) {
        if (increments.size() != delta.size())
            throw std::invalid_argument("increments must align with delta");
        for (std::size_t q = 0; q < delta.size(); ++q) {
            double ratio = increments[q] / std::sqrt(delta[q]);
            r.increment_ratios.push_back(ratio);
            r.c1_constant = std::max(r.c1_constant, ratio);
        }
    }
    return r;
}

}  // namespace ciw
