#include "ciw/euler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "ciw/fft.hpp"
#include "ciw/metric.hpp"

namespace ciw {

namespace {

constexpr double two_pi = 6.283185307179586;
constexpr double half_pi = 1.5707963267948966;

void require_torus3(const GridDomain& d, const char* what) {
    if (d.dim != 3 || !d.all_periodic())
        throw DomainError(std::string(what) + " needs a periodic 3-torus");
}

// spectrum of every component of a field on one grid
struct Spectra {
    Fft3 fft;
    std::vector<int> dims;
    double scale[3];
    explicit Spectra(const GridDomain& d) : fft(d.res), dims(d.res) {
        for (int a = 0; a < 3; ++a) scale[a] = two_pi / d.extent[a];
    }
    std::vector<cplx> forward(const double* x) {
        std::vector<cplx> s(fft.spec_size());
        fft.forward(x, s.data());
        return s;
    }
    void inverse(std::vector<cplx> s, double* out) { fft.inverse(s.data(), out); }
    // f(index, k, nyquist)
    template <class F>
    void each(F&& f) const {
        int h = dims[2] / 2 + 1;
        std::size_t q = 0;
        for (int i0 = 0; i0 < dims[0]; ++i0)
            for (int i1 = 0; i1 < dims[1]; ++i1)
                for (int i2 = 0; i2 < h; ++i2, ++q) {
                    bool nyq = (2 * i0 == dims[0]) || (2 * i1 == dims[1]) || (2 * i2 == dims[2]);
                    Eigen::Vector3d k(scale[0] * freq_index(i0, dims[0]), scale[1] * freq_index(i1, dims[1]),
                                      scale[2] * i2);
                    f(q, k, nyq);
                }
    }
};

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

// sup over nodes of the Hilbert-Schmidt norm of the full gradient of a vector field
double sup_gradient(const GridField& v) {
    GridField g = gradient(v.with_mode(Calculus::spectral));
    double m = 0;
    for (std::size_t p = 0; p < g.points(); ++p) {
        double s = 0;
        for (int c = 0; c < g.components(); ++c) s += g.at(c, p) * g.at(c, p);
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

Eigen::Matrix3d mat_at(const GridField& t, std::size_t p) {
    Eigen::Matrix3d A;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = t.t(i, j, p);
    return A;
}

void put_mat(GridField& t, std::size_t p, const Eigen::Matrix3d& A) {
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) t.at(sym_index(3, i, j), p) = A(i, j);
}

bool is_constant(const GridField& f, double tol = 0) {
    for (int c = 0; c < f.components(); ++c) {
        const double* x = f.comp(c);
        for (std::size_t p = 1; p < f.points(); ++p)
            if (std::fabs(x[p] - x[0]) > tol) return false;
    }
    return true;
}

GridField prolong(const GridField& f, int M) {
    if (f.domain().res[0] == M) return f;
    return spectral_resample(f, {M, M, M});
}

Eigen::Vector3d kvec(const IVec3& k) { return Eigen::Vector3d(k[0], k[1], k[2]); }

}  // namespace

// spectral calculus

GridField divergence(const GridField& f) {
    const auto& d = f.domain();
    require_torus3(d, "divergence");
    Spectra S(d);
    if (f.rank() == Rank::sym_tensor) {
        std::vector<std::vector<cplx>> R(6);
        for (int c = 0; c < 6; ++c) R[c] = S.forward(f.comp(c));
        GridField out = GridField::vector(d, 3, Calculus::spectral);
        for (int i = 0; i < 3; ++i) {
            std::vector<cplx> s(S.fft.spec_size());
            S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
                if (nyq) return;
                cplx acc = 0;
                for (int j = 0; j < 3; ++j) acc += cplx(0, k(j)) * R[sym_index(3, i, j)][q];
                s[q] = acc;
            });
            S.inverse(std::move(s), out.comp(i));
        }
        return out;
    }
    if (f.components() != 3) throw std::invalid_argument("divergence needs a 3-vector or a symmetric tensor");
    std::vector<std::vector<cplx>> V(3);
    for (int c = 0; c < 3; ++c) V[c] = S.forward(f.comp(c));
    std::vector<cplx> s(S.fft.spec_size());
    S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
        if (nyq) return;
        s[q] = cplx(0, k(0)) * V[0][q] + cplx(0, k(1)) * V[1][q] + cplx(0, k(2)) * V[2][q];
    });
    GridField out = GridField::scalar(d, Calculus::spectral);
    S.inverse(std::move(s), out.comp(0));
    return out;
}

GridField curl(const GridField& f) {
    const auto& d = f.domain();
    require_torus3(d, "curl");
    if (f.components() != 3) throw std::invalid_argument("curl needs a 3-vector field");
    Spectra S(d);
    std::vector<std::vector<cplx>> V(3);
    for (int c = 0; c < 3; ++c) V[c] = S.forward(f.comp(c));
    GridField out = GridField::vector(d, 3, Calculus::spectral);
    for (int i = 0; i < 3; ++i) {
        int a = (i + 1) % 3, b = (i + 2) % 3;
        std::vector<cplx> s(S.fft.spec_size());
        S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
            if (nyq) return;
            s[q] = cplx(0, k(a)) * V[b][q] - cplx(0, k(b)) * V[a][q];
        });
        S.inverse(std::move(s), out.comp(i));
    }
    return out;
}

GridField scalar_gradient(const GridField& f) {
    const auto& d = f.domain();
    require_torus3(d, "scalar_gradient");
    Spectra S(d);
    auto F = S.forward(f.comp(0));
    GridField out = GridField::vector(d, 3, Calculus::spectral);
    for (int i = 0; i < 3; ++i) {
        std::vector<cplx> s(S.fft.spec_size());
        S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
            if (!nyq) s[q] = cplx(0, k(i)) * F[q];
        });
        S.inverse(std::move(s), out.comp(i));
    }
    return out;
}

GridField advect(const GridField& v, const GridField& w) {
    const auto& d = w.domain();
    require_torus3(d, "advect");
    if (!(v.domain() == d)) throw std::invalid_argument("advect: grids differ");
    Spectra S(d);
    GridField out = GridField::vector(d, w.components(), Calculus::spectral);
    std::vector<double> tmp(w.points());
    for (int c = 0; c < w.components(); ++c) {
        auto W = S.forward(w.comp(c));
        double* o = out.comp(c);
        for (int a = 0; a < 3; ++a) {
            std::vector<cplx> s(S.fft.spec_size());
            S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
                if (!nyq) s[q] = cplx(0, k(a)) * W[q];
            });
            S.inverse(std::move(s), tmp.data());
            const double* va = v.comp(a);
            for (std::size_t p = 0; p < w.points(); ++p) o[p] += va[p] * tmp[p];
        }
    }
    return out;
}

GridField outer(const GridField& a, const GridField& b) {
    if (a.components() != 3 || b.components() != 3 || !(a.domain() == b.domain()))
        throw std::invalid_argument("outer needs two 3-vector fields on one grid");
    GridField t = GridField::sym_tensor(a.domain(), 3, a.mode());
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            double* o = t.comp(sym_index(3, i, j));
            const double *ai = a.comp(i), *aj = a.comp(j), *bi = b.comp(i), *bj = b.comp(j);
            for (std::size_t p = 0; p < a.points(); ++p) o[p] = 0.5 * (ai[p] * bj[p] + aj[p] * bi[p]);
        }
    return t;
}

Eigen::VectorXd field_mean(const GridField& f) {
    Eigen::VectorXd m(f.components());
    for (int c = 0; c < f.components(); ++c) {
        double s = 0;
        const double* x = f.comp(c);
        for (std::size_t p = 0; p < f.points(); ++p) s += x[p];
        m(c) = s / static_cast<double>(f.points());
    }
    return m;
}

GridField div_inverse(const GridField& f, double mean_tol) {
    const auto& d = f.domain();
    require_torus3(d, "div_inverse");
    if (f.components() != 3 || f.rank() != Rank::vector)
        throw std::invalid_argument("div_inverse needs a 3-vector field");
    Eigen::VectorXd m = field_mean(f);
    double ref = std::max(1.0, sup_abs(f));
    for (int c = 0; c < 3; ++c)
        if (std::fabs(m(c)) > mean_tol * ref)
            throw MeanError("div_inverse: component " + std::to_string(c) + " has mean " + std::to_string(m(c)));
    Spectra S(d);
    std::vector<std::vector<cplx>> F(3);
    for (int c = 0; c < 3; ++c) F[c] = S.forward(f.comp(c));
    std::vector<std::vector<cplx>> R(6, std::vector<cplx>(S.fft.spec_size()));
    S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
        double k2 = k.squaredNorm();
        if (nyq || k2 == 0) return;
        // R k = g with g = -i f; R = sym(v k) - (v.k)/3 Id, v = 2/k2 (g - (g.k) k / (4 k2))
        cplx g[3], gk = 0;
        for (int i = 0; i < 3; ++i) {
            g[i] = cplx(0, -1) * F[i][q];
            gk += g[i] * k(i);
        }
        cplx v[3], vk = 0;
        for (int i = 0; i < 3; ++i) {
            v[i] = 2.0 / k2 * (g[i] - gk * k(i) / (4 * k2));
            vk += v[i] * k(i);
        }
        for (int i = 0; i < 3; ++i)
            for (int j = i; j < 3; ++j) {
                cplx r = 0.5 * (v[i] * k(j) + k(i) * v[j]);
                if (i == j) r -= vk / 3.0;
                R[sym_index(3, i, j)][q] = r;
            }
    });
    GridField out = GridField::sym_tensor(d, 3, Calculus::spectral);
    for (int c = 0; c < 6; ++c) S.inverse(std::move(R[c]), out.comp(c));
    return out;
}

GridField leray_project(const GridField& w) {
    const auto& d = w.domain();
    require_torus3(d, "leray_project");
    if (w.components() != 3) throw std::invalid_argument("leray_project needs a 3-vector field");
    Spectra S(d);
    std::vector<std::vector<cplx>> W(3);
    for (int c = 0; c < 3; ++c) W[c] = S.forward(w.comp(c));
    S.each([&](std::size_t q, const Eigen::Vector3d& k, bool nyq) {
        double k2 = k.squaredNorm();
        if (nyq || k2 == 0) {
            for (int c = 0; c < 3; ++c) W[c][q] = 0;
            return;
        }
        cplx kw = k(0) * W[0][q] + k(1) * W[1][q] + k(2) * W[2][q];
        for (int c = 0; c < 3; ++c) W[c][q] -= kw * k(c) / k2;
    });
    GridField out = GridField::vector(d, 3, Calculus::spectral);
    for (int c = 0; c < 3; ++c) S.inverse(std::move(W[c]), out.comp(c));
    return out;
}

// Beltrami flows

Eigen::Vector3cd beltrami_amplitude(const IVec3& k) {
    if (k[0] == 0 && k[1] == 0 && k[2] == 0) throw std::invalid_argument("beltrami_amplitude: k = 0");
    return beltrami_vector(k);
}

std::vector<BeltramiMode> beltrami_modes(const BeltramiFamily& f, const std::vector<double>& amps) {
    if (amps.size() != f.pairs.size()) throw std::invalid_argument("one amplitude per pair expected");
    std::vector<BeltramiMode> out;
    for (std::size_t i = 0; i < f.pairs.size(); ++i) {
        const auto& k = f.pairs[i];
        out.push_back({k, amps[i]});
        out.push_back({IVec3{-k[0], -k[1], -k[2]}, -amps[i]});
    }
    return out;
}

std::vector<BeltramiMode> single_pair_modes(const IVec3& k, double amp) {
    return {{k, amp}, {IVec3{-k[0], -k[1], -k[2]}, -amp}};
}

BeltramiFlow beltrami_flow(const std::vector<BeltramiMode>& modes, const GridDomain& d) {
    require_torus3(d, "beltrami_flow");
    BeltramiFlow out;
    auto& rep = out.report;
    out.U = GridField::vector(d, 3, Calculus::spectral);
    if (modes.empty()) return out;
    int shell = -1;
    double amax = 0;
    for (const auto& m : modes) {
        int s = m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2];
        if (s == 0) throw std::invalid_argument("beltrami_flow: zero wavevector");
        if (shell < 0) shell = s;
        if (s != shell) throw std::invalid_argument("beltrami_flow: wavevectors on different shells");
        amax = std::max(amax, std::abs(m.a));
    }
    rep.lambda0 = std::sqrt(double(shell));
    std::vector<Eigen::Vector3cd> c(modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) c[i] = modes[i].a * beltrami_amplitude(modes[i].k);
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const auto& k = modes[i].k;
        std::size_t j = modes.size();
        for (std::size_t l = 0; l < modes.size(); ++l)
            if (modes[l].k[0] == -k[0] && modes[l].k[1] == -k[1] && modes[l].k[2] == -k[2]) j = l;
        if (j == modes.size())
            throw std::invalid_argument("beltrami_flow: mode set is not closed under negation");
        if ((c[j] - c[i].conjugate()).norm() > 1e-12 * std::max(1.0, amax))
            throw std::invalid_argument("beltrami_flow: reality condition a_{-k} B_{-k} = conj(a_k B_k) fails");
    }
    const double scale = two_pi / d.extent[0];
    double imag = 0;
    for (std::size_t p = 0; p < d.size(); ++p) {
        auto id = d.unravel(p);
        Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
        Eigen::Vector3cd u = Eigen::Vector3cd::Zero();
        for (std::size_t i = 0; i < modes.size(); ++i) {
            double ph = scale * kvec(modes[i].k).dot(x);
            u += c[i] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
        for (int a = 0; a < 3; ++a) {
            out.U.at(a, p) = u(a).real();
            imag = std::max(imag, std::fabs(u(a).imag()));
        }
    }
    rep.imaginary = imag;
    // predicted average stress
    for (const auto& m : modes) {
        Eigen::Vector3d kh = kvec(m.k).normalized();
        rep.predicted += 0.5 * std::norm(m.a) * (Eigen::Matrix3d::Identity() - kh * kh.transpose());
    }
    GridField UU = outer(out.U, out.U);
    Eigen::VectorXd mean = field_mean(UU);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rep.mean_stress(i, j) = mean(sym_index(3, i, j));
    rep.stress_error = (rep.mean_stress - rep.predicted).norm();
    rep.divergence = sup_abs(divergence(out.U));
    rep.curl_residual = sup_vec(curl(out.U) - (rep.lambda0 * scale) * out.U);
    GridField half = GridField::scalar(d, Calculus::spectral);
    for (std::size_t p = 0; p < d.size(); ++p) {
        double s = 0;
        for (int a = 0; a < 3; ++a) s += out.U.at(a, p) * out.U.at(a, p);
        half.at(0, p) = 0.5 * s;
    }
    rep.stationarity = sup_vec(divergence(UU) - scalar_gradient(half));
    return out;
}

// Mikado flows

namespace {

Eigen::Vector3d project_perp(const Eigen::Vector3d& kh, const Eigen::Vector3d& y) { return y - kh.dot(y) * kh; }

// reduced basis of the projection of 2 pi Z^3 onto the plane normal to k
struct PerpLattice {
    Eigen::Vector3d kh, e1, e2;
    Eigen::Matrix2d basis, inv;  // columns in (e1, e2) coordinates
    double shortest = 0;
};

PerpLattice perp_lattice(const IVec3& k) {
    PerpLattice L;
    L.kh = kvec(k).normalized();
    Eigen::Vector3d a = std::fabs(L.kh(0)) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    L.e1 = project_perp(L.kh, a).normalized();
    L.e2 = L.kh.cross(L.e1);
    std::vector<Eigen::Vector2d> pts;
    for (int i = -3; i <= 3; ++i)
        for (int j = -3; j <= 3; ++j)
            for (int l = -3; l <= 3; ++l) {
                Eigen::Vector3d y = two_pi * Eigen::Vector3d(i, j, l);
                Eigen::Vector2d c(L.e1.dot(y), L.e2.dot(y));
                if (c.norm() > 1e-9) pts.push_back(c);
            }
    auto shorter = [](const Eigen::Vector2d& x, const Eigen::Vector2d& y) {
        double a = x.squaredNorm(), b = y.squaredNorm();
        if (std::fabs(a - b) > 1e-12) return a < b;
        return std::make_pair(x(0), x(1)) < std::make_pair(y(0), y(1));
    };
    std::sort(pts.begin(), pts.end(), shorter);
    Eigen::Vector2d b1 = pts.front(), b2 = Eigen::Vector2d::Zero();
    for (const auto& p : pts)
        if (std::fabs(b1(0) * p(1) - b1(1) * p(0)) > 1e-9) {
            b2 = p;
            break;
        }
    L.basis.col(0) = b1;
    L.basis.col(1) = b2;
    L.inv = L.basis.inverse();
    L.shortest = b1.norm();
    return L;
}

// distance from y to the nearest copy of the line through the origin along k
double line_point_distance(const PerpLattice& L, const Eigen::Vector3d& y) {
    Eigen::Vector2d c(L.e1.dot(y), L.e2.dot(y));
    Eigen::Vector2d z = L.inv * c;
    double best = 1e300;
    double f0 = std::floor(z(0)), f1 = std::floor(z(1));
    for (int i = -1; i <= 2; ++i)
        for (int j = -1; j <= 2; ++j) {
            Eigen::Vector2d r = c - L.basis * Eigen::Vector2d(f0 + i, f1 + j);
            best = std::min(best, r.squaredNorm());
        }
    return std::sqrt(best);
}

double profile_shape(double s2, double shape, int power) {
    if (s2 >= 1) return 0;
    return std::pow(1 - s2, power) * (1 - shape * s2);
}

const PerpLattice& cached_lattice(const IVec3& k) {
    static std::map<IVec3, PerpLattice> cache;
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, perp_lattice(k)).first;
    return it->second;
}

}  // namespace

double line_distance(const IVec3& k, const Eigen::Vector3d& p, const IVec3& kk, const Eigen::Vector3d& pp) {
    IVec3 c{k[1] * kk[2] - k[2] * kk[1], k[2] * kk[0] - k[0] * kk[2], k[0] * kk[1] - k[1] * kk[0]};
    if (c[0] == 0 && c[1] == 0 && c[2] == 0) return line_point_distance(cached_lattice(k), p - pp);
    int g = std::gcd(std::gcd(std::abs(c[0]), std::abs(c[1])), std::abs(c[2]));
    double cn = kvec(c).norm();
    double spacing = two_pi * g / cn;
    double s = (p - pp).dot(kvec(c)) / cn;
    return std::fabs(s - spacing * std::round(s / spacing));
}

double pipe_value(const Pipe& pipe, const Eigen::Vector3d& x, int power) {
    const auto& L = cached_lattice(pipe.k);
    double r = line_point_distance(L, x - pipe.p) / pipe.radius;
    return pipe.scale * profile_shape(r * r, pipe.shape, power);
}

std::vector<Pipe> place_pipes(const std::vector<IVec3>& dirs, const std::vector<double>& weights,
                              const PipeGeometry& geo) {
    if (dirs.size() != weights.size()) throw std::invalid_argument("place_pipes: one weight per direction");
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < dirs.size(); ++i)
        if (weights[i] > 0) active.push_back(i);
    const int D = geo.offset_denominator;
    std::string last_failure;
    for (double r = geo.radius; r >= geo.min_radius; r *= geo.shrink) {
        std::vector<Pipe> placed;
        bool ok = true;
        for (std::size_t i : active) {
            const auto& k = dirs[i];
            if (2 * r >= cached_lattice(k).shortest) {
                ok = false;
                last_failure = "line along (" + std::to_string(k[0]) + "," + std::to_string(k[1]) + "," +
                               std::to_string(k[2]) + ") overlaps its own copies";
                break;
            }
            bool found = false;
            for (int a = 0; a < D && !found; ++a)
                for (int b = 0; b < D && !found; ++b)
                    for (int c = 0; c < D && !found; ++c) {
                        Eigen::Vector3d p = (two_pi / D) * Eigen::Vector3d(a, b, c);
                        bool clear = true;
                        for (const auto& q : placed)
                            if (line_distance(k, p, q.k, q.p) < r + q.radius + 1e-9) {
                                clear = false;
                                break;
                            }
                        if (clear) {
                            Pipe pp;
                            pp.k = k;
                            pp.p = p;
                            pp.radius = r;
                            pp.weight = weights[i];
                            placed.push_back(pp);
                            found = true;
                        }
                    }
            if (!found) {
                ok = false;
                last_failure = "no offset clears the lines";
                for (const auto& q : placed)
                    last_failure += " (" + std::to_string(q.k[0]) + "," + std::to_string(q.k[1]) + "," +
                                    std::to_string(q.k[2]) + ")";
                last_failure += " for direction (" + std::to_string(k[0]) + "," + std::to_string(k[1]) + "," +
                                std::to_string(k[2]) + ")";
                break;
            }
        }
        if (ok) return placed;
    }
    throw GeometryError("mikado placement failed down to radius " + std::to_string(geo.min_radius) + ": " +
                        last_failure);
}

namespace {

// fixes shape (zero grid mean) and scale (unit grid mean square) of every pipe
void normalize_pipes(std::vector<Pipe>& pipes, const GridDomain& d, int power) {
    for (auto& pipe : pipes) {
        const auto& L = cached_lattice(pipe.k);
        double S0 = 0, S1 = 0;
        std::vector<double> s2s;
        for (std::size_t p = 0; p < d.size(); ++p) {
            auto id = d.unravel(p);
            Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
            double r = line_point_distance(L, x - pipe.p) / pipe.radius;
            double s2 = r * r;
            if (s2 >= 1) continue;
            double b = std::pow(1 - s2, power);
            S0 += b;
            S1 += b * s2;
            s2s.push_back(s2);
        }
        if (S1 <= 0) throw GeometryError("pipe radius below the grid spacing");
        pipe.shape = S0 / S1;
        double Q = 0;
        for (double s2 : s2s) {
            double v = profile_shape(s2, pipe.shape, power);
            Q += v * v;
        }
        pipe.scale = 1.0 / std::sqrt(Q / static_cast<double>(d.size()));
    }
}

GridField mikado_field(const std::vector<Pipe>& pipes, const GridDomain& d, int power, const Eigen::Vector3d& shift) {
    GridField W = GridField::vector(d, 3, Calculus::spectral);
    for (std::size_t p = 0; p < d.size(); ++p) {
        auto id = d.unravel(p);
        Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
        x -= shift;
        for (const auto& pipe : pipes) {
            double psi = pipe_value(pipe, x, power);
            if (psi == 0) continue;
            for (int a = 0; a < 3; ++a) W.at(a, p) += pipe.weight * psi * pipe.k[a];
        }
    }
    return W;
}

struct MikadoSetup {
    MikadoCoefficients coeffs;
    std::vector<Pipe> pipes;
};

MikadoSetup mikado_setup(const Eigen::Matrix3d& R, int lambda0, const GridDomain& d, const PipeGeometry& geo) {
    MikadoSetup s;
    s.coeffs = mikado_coefficients(R, lambda0);
    std::vector<double> w;
    for (double c : s.coeffs.c) w.push_back(c > 0 ? std::sqrt(c) : 0.0);
    s.pipes = place_pipes(s.coeffs.directions, w, geo);
    normalize_pipes(s.pipes, d, geo.power);
    return s;
}

}  // namespace

MikadoFlow mikado_flow(const Eigen::Matrix3d& R, int lambda0, const GridDomain& d, const PipeGeometry& geo) {
    require_torus3(d, "mikado_flow");
    auto setup = mikado_setup(R, lambda0, d, geo);
    MikadoFlow out;
    auto& rep = out.report;
    rep.pipes = setup.pipes;
    rep.coefficient_residual = setup.coeffs.residual;
    out.W = mikado_field(setup.pipes, d, geo.power, Eigen::Vector3d::Zero());

    double kmax = 0;
    for (const auto& p : setup.pipes) kmax = std::max(kmax, kvec(p.k).norm());
    double wsup = std::max(sup_vec(out.W), 1e-300);
    rep.divergence = sup_abs(divergence(out.W)) / (wsup * kmax);
    GridField WW = outer(out.W, out.W);
    rep.stationarity = sup_vec(divergence(WW)) / (wsup * wsup * kmax);
    rep.mean = field_mean(out.W).norm();
    Eigen::VectorXd m = field_mean(WW);
    Eigen::Matrix3d S;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) S(i, j) = m(sym_index(3, i, j));
    rep.stress_error = (S - R).norm();
    for (const auto& pipe : setup.pipes) {
        std::vector<Pipe> one{pipe};
        one[0].weight = 1;
        double s1 = 0, s2 = 0;
        for (std::size_t p = 0; p < d.size(); ++p) {
            auto id = d.unravel(p);
            Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
            double v = pipe_value(pipe, x, geo.power);
            s1 += v;
            s2 += v * v;
        }
        double N = static_cast<double>(d.size());
        rep.profile_mean = std::max(rep.profile_mean, std::fabs(s1 / N));
        rep.profile_square = std::max(rep.profile_square, std::fabs(s2 / N - 1));
    }
    {
        const double shifts[] = {0.37, 1.3, -2.1};
        std::vector<double> vals(setup.pipes.size());
        for (std::size_t p = 0; p < d.size(); ++p) {
            auto id = d.unravel(p);
            Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
            double sum = 0, sq = 0;
            for (std::size_t i = 0; i < setup.pipes.size(); ++i) {
                const auto& pipe = setup.pipes[i];
                double v = pipe_value(pipe, x, geo.power);
                vals[i] = v;
                sum += std::fabs(v);
                sq += v * v;
                for (double s : shifts) {
                    double w = pipe_value(pipe, x + s * kvec(pipe.k), geo.power);
                    double top = pipe.scale * std::max(1.0, std::fabs(pipe.shape));
                    rep.line_invariance = std::max(rep.line_invariance, std::fabs(w - v) / top);
                }
            }
            rep.overlap = std::max(rep.overlap, 0.5 * (sum * sum - sq));
        }
    }
    rep.min_gap = 1e300;
    for (std::size_t i = 0; i < setup.pipes.size(); ++i)
        for (std::size_t j = i + 1; j < setup.pipes.size(); ++j) {
            const auto &a = setup.pipes[i], &b = setup.pipes[j];
            rep.min_gap = std::min(rep.min_gap, line_distance(a.k, a.p, b.k, b.p) - a.radius - b.radius);
        }
    return out;
}

// oscillation profiles

GridField OscillationProfile::evaluate(const Eigen::Vector3d& v, const Eigen::Matrix3d& R, double tau,
                                       const GridDomain& d) const {
    Eigen::Vector3d shift = fast_time ? Eigen::Vector3d(v * tau) : Eigen::Vector3d::Zero();
    return base(R, shift, d);
}

OscillationProfile beltrami_profile(const BeltramiFamily& f) {
    OscillationProfile W;
    W.name = "beltrami";
    W.bound_w = 4;
    W.bound_v = 1;
    W.base = [f](const Eigen::Matrix3d& R, const Eigen::Vector3d& shift, const GridDomain& d) {
        auto amps = beltrami_amplitudes(R, f);
        auto modes = beltrami_modes(f, amps);
        GridField U = GridField::vector(d, 3, Calculus::spectral);
        std::vector<Eigen::Vector3cd> c;
        for (const auto& m : modes) c.push_back(m.a * beltrami_amplitude(m.k));
        for (std::size_t p = 0; p < d.size(); ++p) {
            auto id = d.unravel(p);
            Eigen::Vector3d x(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
            x -= shift;
            Eigen::Vector3d u = Eigen::Vector3d::Zero();
            for (std::size_t i = 0; i < modes.size(); ++i) {
                double ph = kvec(modes[i].k).dot(x);
                u += (c[i] * std::complex<double>(std::cos(ph), std::sin(ph))).real();
            }
            for (int a = 0; a < 3; ++a) U.at(a, p) = u(a);
        }
        return U;
    };
    return W;
}

OscillationProfile mikado_profile(int lambda0, const PipeGeometry& geo) {
    OscillationProfile W;
    W.name = "mikado";
    W.bound_w = 8;
    W.bound_v = 1;
    W.base = [lambda0, geo](const Eigen::Matrix3d& R, const Eigen::Vector3d& shift, const GridDomain& d) {
        auto setup = mikado_setup(R, lambda0, d, geo);
        return mikado_field(setup.pipes, d, geo.power, shift);
    };
    return W;
}

OscillationProfile transported_profile(const OscillationProfile& base) {
    OscillationProfile W = base;
    W.name = "transported-" + base.name;
    W.fast_time = true;
    return W;
}

ProfileReport profile_validate(const OscillationProfile& W, const Eigen::Matrix3d& R, const Eigen::Vector3d& v,
                               const GridDomain& d, double tau) {
    require_torus3(d, "profile_validate");
    ProfileReport rep;
    GridField w = W.evaluate(v, R, tau, d);
    double rn = R.norm(), rs = std::sqrt(rn);
    double wsup = sup_vec(w);

    rep.mean.measured = field_mean(w).norm();
    rep.mean.tolerance = 1e-10 * std::max(1.0, wsup);
    rep.mean.pass = rep.mean.measured <= rep.mean.tolerance;

    GridField ww = outer(w, w);
    Eigen::VectorXd m = field_mean(ww);
    Eigen::Matrix3d S;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) S(i, j) = m(sym_index(3, i, j));
    rep.stress.measured = (S - R).norm();
    rep.stress.tolerance = 1e-8 * std::max(1.0, rn);
    rep.stress.pass = rep.stress.measured <= rep.stress.tolerance;

    // cell problem: d_tau W + v.grad W + div(W (x) W) = -grad P; the best P
    // removes the gradient part, the residual is the rest
    GridField F = divergence(ww);
    GridField vfield = GridField::vector(d, 3, Calculus::spectral);
    for (int a = 0; a < 3; ++a)
        for (std::size_t p = 0; p < d.size(); ++p) vfield.at(a, p) = v(a);
    F = F + advect(vfield, w);
    if (W.fast_time) {
        const double h = 1e-3;
        GridField acc = (-1.0) * W.evaluate(v, R, tau + 2 * h, d);
        acc = acc + 8.0 * W.evaluate(v, R, tau + h, d);
        acc = acc - 8.0 * W.evaluate(v, R, tau - h, d);
        acc = acc + W.evaluate(v, R, tau - 2 * h, d);
        F = F + (1.0 / (12 * h)) * acc;
    }
    GridField PF = leray_project(F);
    rep.cell.measured = sup_vec(PF);
    rep.cell.tolerance = 1e-8 * std::max(1.0, wsup * wsup);
    rep.cell.pass = rep.cell.measured <= rep.cell.tolerance;
    {
        GridField G = F - PF;  // = -grad P up to the mean
        GridField dG = divergence(G);
        Spectra Sp(d);
        auto s = Sp.forward(dG.comp(0));
        Sp.each([&](std::size_t q, const Eigen::Vector3d& k, bool) {
            double k2 = k.squaredNorm();
            s[q] = k2 > 0 ? s[q] / k2 : 0.0;  // P = Delta^{-1} div G sign-flipped twice
        });
        GridField P = GridField::scalar(d, Calculus::spectral);
        Sp.inverse(std::move(s), P.comp(0));
        double acc = 0;
        for (double x : P.values()) acc += x * x;
        rep.cell_pressure_rms = std::sqrt(acc / static_cast<double>(d.size()));
    }

    rep.bound.measured = rs > 0 ? wsup / rs : 0;
    rep.bound.tolerance = W.bound_w;
    rep.bound.pass = rep.bound.measured <= rep.bound.tolerance;

    double dv = 0;
    const double eps = 1e-4;
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e(a) = eps;
        GridField diff = W.evaluate(v + e, R, tau, d) - W.evaluate(v - e, R, tau, d);
        dv = std::max(dv, sup_vec(diff) / (2 * eps));
    }
    rep.v_derivative.measured = rs > 0 ? dv / rs : 0;
    rep.v_derivative.tolerance = W.bound_v;
    rep.v_derivative.pass = rep.v_derivative.measured <= rep.v_derivative.tolerance;
    return rep;
}

// transport

GridField VelocityHistory::at(double t) const {
    if (v.empty()) throw std::invalid_argument("empty velocity history");
    if (v.size() == 1 || t <= times.front()) return v.front();
    if (t >= times.back()) return v.back();
    std::size_t i = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    double a = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return (1 - a) * v[i - 1] + a * v[i];
}

namespace {

// velocity sampled at arbitrary points: spectral doubling, then tricubic Lagrange
struct VelocitySampler {
    std::vector<GridField> fine;
    std::vector<double> times;
    int M = 0;
    double h = 0;

    explicit VelocitySampler(const VelocityHistory& vh) : times(vh.times) {
        for (const auto& f : vh.v) {
            int M0 = f.domain().res[0];
            fine.push_back(spectral_resample(f, {2 * M0, 2 * M0, 2 * M0}));
        }
        M = fine.front().domain().res[0];
        h = two_pi / M;
    }
    Eigen::Vector3d sample_slice(const GridField& f, const Eigen::Vector3d& x) const {
        int i0[3];
        double w[3][4];
        for (int a = 0; a < 3; ++a) {
            double y = x(a) / h;
            double fl = std::floor(y);
            double s = y - fl;
            i0[a] = static_cast<int>(fl) - 1;
            w[a][0] = -s * (s - 1) * (s - 2) / 6;
            w[a][1] = (s + 1) * (s - 1) * (s - 2) / 2;
            w[a][2] = -(s + 1) * s * (s - 2) / 2;
            w[a][3] = (s + 1) * s * (s - 1) / 6;
        }
        auto wrap = [&](int i) { return ((i % M) + M) % M; };
        Eigen::Vector3d out = Eigen::Vector3d::Zero();
        for (int a = 0; a < 4; ++a) {
            std::size_t ia = static_cast<std::size_t>(wrap(i0[0] + a)) * M * M;
            for (int b = 0; b < 4; ++b) {
                std::size_t ib = ia + static_cast<std::size_t>(wrap(i0[1] + b)) * M;
                double wab = w[0][a] * w[1][b];
                for (int c = 0; c < 4; ++c) {
                    std::size_t p = ib + wrap(i0[2] + c);
                    double wt = wab * w[2][c];
                    for (int k = 0; k < 3; ++k) out(k) += wt * f.at(k, p);
                }
            }
        }
        return out;
    }
    Eigen::Vector3d operator()(const Eigen::Vector3d& x, double t) const {
        if (fine.size() == 1 || t <= times.front()) return sample_slice(fine.front(), x);
        if (t >= times.back()) return sample_slice(fine.back(), x);
        std::size_t i = std::upper_bound(times.begin(), times.end(), t) - times.begin();
        double a = (t - times[i - 1]) / (times[i] - times[i - 1]);
        return (1 - a) * sample_slice(fine[i - 1], x) + a * sample_slice(fine[i], x);
    }
};

FlowMap trace_flow(const VelocitySampler& vs, double grad_v, double vmax, double t0, double t,
                   const GridDomain& d, double cfl_budget) {
    FlowMap F;
    F.t = t;
    F.t0 = t0;
    F.grad_v = grad_v;
    F.D = GridField::vector(d, 3, Calculus::spectral);
    double span = t0 - t;
    if (span == 0 || (grad_v == 0 && vmax == 0)) return F;
    int n = std::max(1, static_cast<int>(std::ceil(std::fabs(span) * grad_v / 0.05)));
    F.steps = n;
    double dt = span / n;
    for (std::size_t p = 0; p < d.size(); ++p) {
        auto id = d.unravel(p);
        Eigen::Vector3d x0(d.coord(0, id[0]), d.coord(1, id[1]), d.coord(2, id[2]));
        Eigen::Vector3d x = x0;
        double s = t;
        for (int i = 0; i < n; ++i) {
            Eigen::Vector3d k1 = vs(x, s);
            Eigen::Vector3d k2 = vs(x + 0.5 * dt * k1, s + 0.5 * dt);
            Eigen::Vector3d k3 = vs(x + 0.5 * dt * k2, s + 0.5 * dt);
            Eigen::Vector3d k4 = vs(x + dt * k3, s + dt);
            x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
            s += dt;
        }
        for (int a = 0; a < 3; ++a) F.D.at(a, p) = x(a) - x0(a);
    }
    F.deformation = sup_gradient(F.D);
    if (F.deformation > cfl_budget)
        throw CflError("flow deformation " + std::to_string(F.deformation) + " exceeds the CFL budget " +
                           std::to_string(cfl_budget),
                       F.deformation);
    return F;
}

}  // namespace

std::vector<FlowMap> inverse_flow(const VelocityHistory& v, double t0, const std::vector<double>& times,
                                  const std::vector<int>& grid, double cfl_budget) {
    if (v.v.empty()) throw std::invalid_argument("inverse_flow: empty velocity history");
    const auto& vd = v.v.front().domain();
    require_torus3(vd, "inverse_flow");
    GridDomain d = grid.empty() ? vd : GridDomain::torus(grid);
    double gv = 0, vmax = 0;
    for (const auto& f : v.v) {
        gv = std::max(gv, sup_gradient(f));
        vmax = std::max(vmax, sup_vec(f));
    }
    VelocitySampler vs(v);
    std::vector<FlowMap> out;
    for (double t : times) out.push_back(trace_flow(vs, gv, vmax, t0, t, d, cfl_budget));
    return out;
}

FlowMap inverse_flow(const VelocityHistory& v, double t0, double t, const std::vector<int>& grid,
                     double cfl_budget) {
    return inverse_flow(v, t0, std::vector<double>{t}, grid, cfl_budget).front();
}

// time cutoffs

namespace {
// smooth monotone ramp with ramp(s) + ramp(1 - s) = 1
double ramp(double s) { return s * s * s * (10 - 15 * s + 6 * s * s); }
double ramp_d(double s) { return 30 * s * s * (1 - s) * (1 - s); }
}  // namespace

double TimePartition::value(int j, double t) const {
    double s = mu * t - j;
    if (s <= -1 || s >= 1) return 0;
    if (s <= 0) return std::sin(half_pi * ramp(1 + s));
    return std::cos(half_pi * ramp(s));
}

double TimePartition::derivative(int j, double t) const {
    double s = mu * t - j;
    if (s <= -1 || s >= 1) return 0;
    if (s <= 0) return mu * half_pi * ramp_d(1 + s) * std::cos(half_pi * ramp(1 + s));
    return -mu * half_pi * ramp_d(s) * std::sin(half_pi * ramp(s));
}

std::vector<int> TimePartition::active(double t) const {
    std::vector<int> out;
    for (int j = 0; j < count; ++j)
        if (value(j, t) != 0) out.push_back(j);
    return out;
}

TimePartition time_partition(double T, double mu) {
    if (!(T > 0 && mu > 0)) throw std::invalid_argument("time_partition needs T > 0 and mu > 0");
    if (mu * T < 1 - 1e-12) throw std::invalid_argument("time_partition needs mu T >= 1");
    TimePartition P;
    P.T = T;
    P.mu = mu;
    P.count = static_cast<int>(std::ceil(mu * T - 1e-12)) + 1;
    return P;
}

// subsolutions

namespace {
double cell_volume(const GridDomain& d) {
    double v = 1;
    for (int a = 0; a < d.dim; ++a) v *= d.extent[a];
    return v / static_cast<double>(d.size());
}
}  // namespace

GeneralizedSubsolution to_generalized(const Subsolution& s, double psd_tol) {
    const auto& d = s.v.domain();
    GeneralizedSubsolution g;
    g.v = s.v;
    g.u = GridField::sym_tensor(d, 3, s.R.mode());
    g.q = s.p;
    g.e = GridField::scalar(d, s.p.mode());
    for (std::size_t p = 0; p < d.size(); ++p) {
        Eigen::Matrix3d R = mat_at(s.R, p);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(R, Eigen::EigenvaluesOnly);
        if (es.eigenvalues()(0) < -psd_tol)
            throw SemidefiniteError("stress has eigenvalue " + std::to_string(es.eigenvalues()(0)) +
                                        " at node " + std::to_string(p),
                                    p);
        Eigen::Vector3d v(s.v.at(0, p), s.v.at(1, p), s.v.at(2, p));
        double e = 0.5 * (R.trace() + v.squaredNorm());
        Eigen::Matrix3d u = R - (2.0 / 3.0) * e * Eigen::Matrix3d::Identity() + v * v.transpose();
        put_mat(g.u, p, u);
        g.q.at(0, p) = s.p.at(0, p) + (2.0 / 3.0) * e;
        g.e.at(0, p) = e;
    }
    return g;
}

Subsolution from_generalized(const GeneralizedSubsolution& g) {
    const auto& d = g.v.domain();
    Subsolution s;
    s.v = g.v;
    s.p = g.q;
    s.R = GridField::sym_tensor(d, 3, g.u.mode());
    for (std::size_t p = 0; p < d.size(); ++p) {
        Eigen::Vector3d v(g.v.at(0, p), g.v.at(1, p), g.v.at(2, p));
        double e = g.e.at(0, p);
        Eigen::Matrix3d R = mat_at(g.u, p) + (2.0 / 3.0) * e * Eigen::Matrix3d::Identity() - v * v.transpose();
        put_mat(s.R, p, R);
        s.p.at(0, p) = g.q.at(0, p) - (2.0 / 3.0) * e;
    }
    return s;
}

double kinetic_energy(const GridField& v) {
    double s = 0;
    for (double x : v.values()) s += x * x;
    return 0.5 * s * cell_volume(v.domain());
}

double generalized_energy(const Subsolution& s) {
    double tr = 0;
    for (std::size_t p = 0; p < s.R.points(); ++p) tr += s.R.t(0, 0, p) + s.R.t(1, 1, p) + s.R.t(2, 2, p);
    return kinetic_energy(s.v) + 0.5 * tr * cell_volume(s.v.domain());
}

Eigen::Matrix3d energy_tensor(const Subsolution& s) {
    Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
    for (std::size_t p = 0; p < s.v.points(); ++p) {
        Eigen::Vector3d v(s.v.at(0, p), s.v.at(1, p), s.v.at(2, p));
        E += v * v.transpose() + mat_at(s.R, p);
    }
    return E * cell_volume(s.v.domain());
}

std::vector<double> energy_gap(const std::function<double(double)>& E_next, const VelocityHistory& v,
                               const std::vector<double>& times, double delta_next) {
    const double vol = std::pow(two_pi, 3);
    std::vector<double> rho;
    for (double t : times) {
        double Ek = kinetic_energy(v.at(t));
        double E = E_next(t);
        double gap = E - Ek;
        if (gap < -1e-12 * std::max(1.0, std::fabs(E)))
            throw EnergyError("energy schedule below the kinetic energy at t = " + std::to_string(t) + " (gap " +
                              std::to_string(gap) + ")");
        double r = std::max(0.0, gap) / (3 * vol);
        if (delta_next > 0 && r > delta_next / 4)
            throw EnergyError("rho = " + std::to_string(r) + " exceeds delta / 4 = " + std::to_string(delta_next / 4) +
                              " at t = " + std::to_string(t));
        rho.push_back(r);
    }
    return rho;
}

// iterates

VelocityHistory EulerIterate::velocity() const {
    VelocityHistory h;
    for (const auto& s : slices) {
        h.times.push_back(s.t);
        h.v.push_back(s.v);
    }
    return h;
}

GridField EulerIterate::stress(std::size_t s) const {
    GridField R = slices.at(s).R;
    for (std::size_t p = 0; p < R.points(); ++p)
        for (int i = 0; i < 3; ++i) R.at(sym_index(3, i, i), p) += slices[s].rho;
    return R;
}

EulerIterate seed_iterate(int M, double rho) {
    auto d = GridDomain::torus(3, M);
    EulerIterate it;
    EulerSlice s;
    s.v = GridField::vector(d, 3, Calculus::spectral);
    s.p = GridField::scalar(d, Calculus::spectral);
    s.R = GridField::sym_tensor(d, 3, Calculus::spectral);
    s.rho = rho;
    it.slices.push_back(std::move(s));
    return it;
}

EulerIterate abc_iterate(int M, double amp, double rho) {
    EulerIterate it = seed_iterate(M, rho);
    auto& s = it.slices.front();
    fill(s.v, [&](const double* x, double* o) {
        o[0] = amp * (std::sin(x[2]) + std::cos(x[1]));
        o[1] = amp * (std::sin(x[0]) + std::cos(x[2]));
        o[2] = amp * (std::sin(x[1]) + std::cos(x[0]));
    });
    for (std::size_t p = 0; p < s.v.points(); ++p) {
        double q = 0;
        for (int a = 0; a < 3; ++a) q += s.v.at(a, p) * s.v.at(a, p);
        s.p.at(0, p) = -0.5 * q;
    }
    it.lambda = 1;
    return it;
}

InvariantReport check_invariants(const EulerIterate& it, double r, double div_tol, double residual_tol) {
    InvariantReport rep;
    rep.rho_min = 1e300;
    bool stationary = it.slices.size() == 1;
    for (std::size_t k = 0; k < it.slices.size(); ++k) {
        const auto& s = it.slices[k];
        double gv = sup_gradient(s.v);
        rep.divergence = std::max(rep.divergence, sup_abs(divergence(s.v)) / std::max(1.0, gv));
        rep.rho_min = std::min(rep.rho_min, s.rho);
        double rsup = 0;
        for (std::size_t p = 0; p < s.R.points(); ++p) {
            rep.trace = std::max(rep.trace, std::fabs(s.R.t(0, 0, p) + s.R.t(1, 1, p) + s.R.t(2, 2, p)));
            rsup = std::max(rsup, hs_norm(mat_at(s.R, p)));
        }
        rep.cone = std::max(rep.cone, s.rho > 0 ? rsup / s.rho : (rsup > 0 ? 1e300 : 0.0));
        if (stationary) {
            GridField res = divergence(outer(s.v, s.v)) + scalar_gradient(s.p) + divergence(s.R);
            rep.residual = sup_vec(res);
        }
    }
    auto fail = [&](const std::string& name) {
        if (rep.failed.empty()) rep.failed = name;
    };
    if (rep.divergence > div_tol) fail("divergence-free velocity");
    if (rep.trace > 1e-12) fail("traceless stress");
    if (rep.rho_min < 0) fail("nonnegative trace part");
    if (rep.cone > r) fail("stress in the cone");
    if (rep.residual > residual_tol) fail("Euler-Reynolds residual");
    rep.pass = rep.failed.empty();
    return rep;
}

// one step

nlohmann::json StepBreakdown::to_json() const {
    nlohmann::json j;
    j["lambda"] = lambda;
    j["mu"] = mu;
    j["mu_optimal"] = mu_optimal;
    j["delta_next"] = delta_next;
    j["grad_v"] = grad_v;
    j["working_grid"] = working_grid;
    j["deformation"] = deformation;
    j["corrector"] = corrector;
    j["perturbation"] = perturbation;
    j["stress_before"] = stress_before;
    j["stress_after"] = stress_after;
    j["energy_increment"] = energy_increment;
    j["energy_predicted"] = energy_predicted;
    j["invariants_pass"] = invariants_pass;
    j["invariant_failed"] = invariant_failed;
    for (const auto& t : terms)
        j["terms"].push_back({{"name", t.name}, {"measured", t.measured}, {"predicted", t.predicted}, {"ratio", t.ratio}});
    return j;
}

const TermReport& StepBreakdown::term(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return t;
    throw std::out_of_range("no term named " + name);
}

double optimal_mu(double delta_next, double grad_v, double lambda_next) {
    return std::sqrt(std::sqrt(delta_next) * grad_v * lambda_next);
}

namespace {

bool smooth_size(int n) {
    for (int p : {2, 3, 5})
        while (n % p == 0) n /= p;
    return n == 1;
}

int next_working_size(int need) {
    int n = std::max(8, need);
    if (n % 2) ++n;
    while (!smooth_size(n)) n += 2;
    return n;
}

// highest per-axis frequency carrying energy above rel of the peak
int band_of(const GridField& f, double rel = 1e-12) {
    const auto& d = f.domain();
    Spectra S(d);
    double peak = 0;
    std::vector<std::vector<cplx>> F;
    for (int c = 0; c < f.components(); ++c) {
        F.push_back(S.forward(f.comp(c)));
        for (const auto& x : F.back()) peak = std::max(peak, std::abs(x));
    }
    if (peak == 0) return 0;
    int band = 0;
    for (const auto& Fc : F)
        S.each([&](std::size_t q, const Eigen::Vector3d& k, bool) {
            if (std::abs(Fc[q]) > rel * peak)
                band = std::max(band, static_cast<int>(std::lround(k.cwiseAbs().maxCoeff())));
        });
    return band;
}

struct SliceState {
    GridField v, p, R;  // R = rho Id + traceless part
    double rho = 0;
    GridField dR;       // material derivative of R (empty when zero)
};

SliceState state_at(const EulerIterate& it, double t) {
    SliceState s;
    const auto& sl = it.slices;
    if (sl.size() == 1 || t <= sl.front().t) {
        const auto& a = t <= sl.front().t ? sl.front() : sl.front();
        s.v = a.v;
        s.p = a.p;
        s.R = it.stress(0);
        s.rho = a.rho;
    } else if (t >= sl.back().t) {
        s.v = sl.back().v;
        s.p = sl.back().p;
        s.R = it.stress(sl.size() - 1);
        s.rho = sl.back().rho;
    } else {
        std::size_t i = 1;
        while (sl[i].t < t) ++i;
        double a = (t - sl[i - 1].t) / (sl[i].t - sl[i - 1].t);
        s.v = (1 - a) * sl[i - 1].v + a * sl[i].v;
        s.p = (1 - a) * sl[i - 1].p + a * sl[i].p;
        GridField R0 = it.stress(i - 1), R1 = it.stress(i);
        s.R = (1 - a) * R0 + a * R1;
        s.rho = (1 - a) * sl[i - 1].rho + a * sl[i].rho;
        s.dR = (1.0 / (sl[i].t - sl[i - 1].t)) * (R1 - R0);
    }
    // material derivative: d_t R + v.grad R
    GridField adv = advect(s.v, s.R);
    bool zero_adv = sup_abs(adv) == 0;
    if (s.dR.points() == 0 && !zero_adv) s.dR = GridField::sym_tensor(s.R.domain(), 3, Calculus::spectral);
    if (!zero_adv) {
        for (int c = 0; c < 6; ++c)
            for (std::size_t p = 0; p < s.R.points(); ++p) s.dR.at(c, p) += adv.at(c, p);
    }
    return s;
}

// amplitudes a_k(R(x)) per pair and their material derivatives Da_k[D_t R]
struct Amplitudes {
    std::vector<GridField> a, da;  // one scalar per pair; da empty when D_t R = 0
    bool constant = false;
    std::vector<double> a0;
};

Amplitudes amplitudes_at(const SliceState& s, const BeltramiFamily& f, double r0) {
    Amplitudes A;
    const auto& d = s.R.domain();
    std::size_t P = f.pairs.size();
    if (is_constant(s.R) && s.dR.points() == 0) {
        Eigen::Matrix3d R = mat_at(s.R, 0);
        double dev = cone_deviation(R);
        if (dev > r0) throw ConeError("stress deviation " + std::to_string(dev) + " exceeds r0 at node 0");
        A.constant = true;
        A.a0 = beltrami_amplitudes(R, f);
        return A;
    }
    A.a.assign(P, GridField::scalar(d, Calculus::spectral));
    if (s.dR.points()) A.da.assign(P, GridField::scalar(d, Calculus::spectral));
    for (std::size_t p = 0; p < d.size(); ++p) {
        Eigen::Matrix3d R = mat_at(s.R, p);
        double dev = cone_deviation(R);
        if (dev > r0)
            throw ConeError("stress deviation " + std::to_string(dev) + " exceeds r0 at node " + std::to_string(p));
        auto a = beltrami_amplitudes(R, f);
        for (std::size_t k = 0; k < P; ++k) A.a[k].at(0, p) = a[k];
        if (s.dR.points()) {
            Eigen::Matrix3d X = mat_at(s.dR, p);
            double eps = 1e-6 * std::max(1.0, R.norm()) / std::max(1e-300, X.norm());
            if (X.norm() == 0) continue;
            auto ap = beltrami_amplitudes(R + eps * X, f);
            auto am = beltrami_amplitudes(R - eps * X, f);
            for (std::size_t k = 0; k < P; ++k) A.da[k].at(0, p) = (ap[k] - am[k]) / (2 * eps);
        }
    }
    return A;
}

// adds coef * sum_pairs 2 Re(b_k B_k e^{i lambda k.(x + D)}) to out
void add_wave(GridField& out, double coef, const BeltramiFamily& f, const std::vector<GridField>* amp,
              const std::vector<double>* amp0, const GridField& D, double lambda) {
    if (coef == 0) return;
    const auto& d = out.domain();
    std::vector<Eigen::Vector3cd> B;
    for (const auto& k : f.pairs) B.push_back(beltrami_amplitude(k));
    for (std::size_t p = 0; p < d.size(); ++p) {
        auto id = d.unravel(p);
        Eigen::Vector3d x(d.coord(0, id[0]) + D.at(0, p), d.coord(1, id[1]) + D.at(1, p),
                          d.coord(2, id[2]) + D.at(2, p));
        for (std::size_t k = 0; k < f.pairs.size(); ++k) {
            double a = amp ? (*amp)[k].at(0, p) : (*amp0)[k];
            if (a == 0) continue;
            double ph = lambda * kvec(f.pairs[k]).dot(x);
            double c = std::cos(ph), s = std::sin(ph);
            for (int j = 0; j < 3; ++j) {
                double re = B[k](j).real() * c - B[k](j).imag() * s;
                out.at(j, p) += coef * 2 * a * re;
            }
        }
    }
}

double sup_hs(const GridField& t) {
    double m = 0;
    for (std::size_t p = 0; p < t.points(); ++p) m = std::max(m, hs_norm(mat_at(t, p)));
    return m;
}

}  // namespace

EulerStepResult euler_step(const EulerIterate& s, double lambda, double mu,
                           const std::array<BeltramiFamily, 2>& families, const EulerStepOptions& opt) {
    if (s.slices.empty()) throw std::invalid_argument("euler_step: empty iterate");
    const auto& sd = s.slices.front().v.domain();
    require_torus3(sd, "euler_step");
    if (!(lambda >= 1) || std::fabs(lambda - std::round(lambda)) > 1e-12)
        throw ModeError("euler_step: lambda must be a positive integer so that the phases are periodic");
    StepBreakdown rep;
    rep.lambda = lambda;
    rep.mu = mu;

    // CFL and cone
    double gv = 0;
    for (const auto& sl : s.slices) gv = std::max(gv, sup_gradient(sl.v));
    rep.grad_v = gv;
    if (mu < gv * (1 - 1e-12))
        throw CflError("mu = " + std::to_string(mu) + " below |grad v|_0 = " + std::to_string(gv), mu);
    if (mu * opt.T < 1 - 1e-12) throw CflError("mu T = " + std::to_string(mu * opt.T) + " below 1", mu);
    double r0 = std::min(families[0].basis.r0, families[1].basis.r0);
    double dnext = 0;
    for (std::size_t k = 0; k < s.slices.size(); ++k) dnext = std::max(dnext, sup_hs(s.stress(k)));
    rep.delta_next = dnext;
    rep.stress_before = dnext;
    rep.mu_optimal = optimal_mu(dnext, gv, lambda);
    TimePartition part = time_partition(opt.T, mu);

    std::vector<double> times = opt.times;
    if (times.empty()) {
        int jm = (part.count - 1) / 2;
        double a = part.center(jm), b = std::min(part.center(jm + 1), opt.T);
        for (int i = 0; i <= 6; ++i) times.push_back(a + (b - a) * i / 6.0);
    }

    // flow maps of every active cutoff, on the flow grid
    VelocityHistory vh = s.velocity();
    int Ms = sd.res[0];
    int fg = std::min(opt.flow_grid, Ms);
    std::map<std::pair<int, double>, FlowMap> flows;
    double deform = 0;
    {
        VelocitySampler vs(vh);
        double vmax = 0;
        for (const auto& f : vh.v) vmax = std::max(vmax, sup_vec(f));
        GridDomain fd = GridDomain::torus(3, fg);
        for (double t : times)
            for (int j : part.active(t)) {
                auto F = trace_flow(vs, gv, vmax, part.center(j), t, fd, 1.0);
                deform = std::max(deform, F.deformation);
                flows.emplace(std::make_pair(j, t), std::move(F));
            }
    }
    rep.deformation = deform;

    // working grid
    int kmax = 0;
    for (const auto& f : families)
        for (const auto& k : f.pairs)
            for (int c : k) kmax = std::max(kmax, std::abs(c));
    int vband = 0;
    for (const auto& sl : s.slices) vband = std::max({vband, band_of(sl.v), band_of(sl.R)});
    double wband = lambda * kmax * (1 + deform) + vband;
    // highest frequency of the quadratic terms; the grid must carry it below Nyquist
    double need = opt.oscillation ? 2 * wband : wband + vband;
    int Mw = opt.working_grid ? opt.working_grid
                              : next_working_size(std::max(Ms, static_cast<int>(std::ceil(2 * need)) + 2));
    if (2 * need + 2 > Mw)
        throw ResolutionError("working grid " + std::to_string(Mw) + " cannot carry frequency " + std::to_string(need));
    if (Mw > opt.max_working_grid)
        throw ResolutionError("working grid " + std::to_string(Mw) + " exceeds the budget " +
                              std::to_string(opt.max_working_grid));
    rep.working_grid = Mw;
    GridDomain wd = GridDomain::torus(3, Mw);

    EulerIterate next;
    next.lambda = lambda;
    next.mu = mu;
    double t1 = 0, t2 = 0, t3 = 0, after = 0, corr = 0, pert = 0, einc = 0, epred = 0;
    const double vol = std::pow(two_pi, 3);
    for (double t : times) {
        SliceState st = state_at(s, t);
        std::array<Amplitudes, 2> amps{amplitudes_at(st, families[0], r0), amplitudes_at(st, families[1], r0)};
        // amplitude fields on the working grid
        std::array<std::vector<GridField>, 2> aw, daw;
        for (int f = 0; f < 2; ++f) {
            if (amps[f].constant) continue;
            for (auto& a : amps[f].a) aw[f].push_back(prolong(a, Mw));
            for (auto& a : amps[f].da) daw[f].push_back(prolong(a, Mw));
        }
        GridField wo = GridField::vector(wd, 3, Calculus::spectral);
        GridField Dtw = GridField::vector(wd, 3, Calculus::spectral);
        for (int j : part.active(t)) {
            int f = part.parity(j) - 1;
            const auto& F = flows.at({j, t});
            GridField D = prolong(F.D, Mw);
            double chi = part.value(j, t), dchi = part.derivative(j, t);
            const std::vector<GridField>* af = amps[f].constant ? nullptr : &aw[f];
            add_wave(wo, chi, families[f], af, &amps[f].a0, D, lambda);
            add_wave(Dtw, dchi, families[f], af, &amps[f].a0, D, lambda);
            if (!daw[f].empty()) add_wave(Dtw, chi, families[f], &daw[f], nullptr, D, lambda);
        }
        GridField v = prolong(st.v, Mw);
        GridField w = leray_project(wo);
        corr = std::max(corr, sup_vec(w - wo));
        pert = std::max(pert, sup_vec(wo));

        GridField total = GridField::vector(wd, 3, Calculus::spectral);
        GridField Rnew = GridField::sym_tensor(wd, 3, Calculus::spectral);
        auto account = [&](const GridField& forcing, double& slot) {
            GridField PF = leray_project(forcing);
            GridField Ri = (-1.0) * div_inverse(PF, 1e-8);
            slot = std::max(slot, sup_hs(Ri));
            Rnew = Rnew + Ri;
            total = total + forcing;
        };
        if (opt.transport) {
            // d_t w = P(D_t w_o - v.grad w_o) + v.grad w - v.grad w ... transport forcing d_t w + v.grad w
            GridField dtwo = Dtw - advect(v, wo);
            account(leray_project(dtwo) + advect(v, w), t1);
        }
        if (opt.oscillation) {
            GridField F2 = divergence(outer(w, w)) - divergence(prolong(st.R, Mw));
            account(F2, t2);
        }
        if (opt.nash) account(advect(w, v), t3);
        for (std::size_t p = 0; p < Rnew.points(); ++p)
            Rnew.at(sym_index(3, 2, 2), p) = -Rnew.at(sym_index(3, 0, 0), p) - Rnew.at(sym_index(3, 1, 1), p);
        double rsup = sup_hs(Rnew);
        after = std::max(after, rsup);

        // pressure: grad(p' - p) = -(I - P) F
        GridField G = total - leray_project(total);
        GridField pnew = prolong(st.p, Mw);
        {
            GridField dG = divergence(G);
            Spectra Sp(wd);
            auto sp = Sp.forward(dG.comp(0));
            Sp.each([&](std::size_t q, const Eigen::Vector3d& k, bool) {
                double k2 = k.squaredNorm();
                sp[q] = k2 > 0 ? sp[q] / k2 : 0.0;
            });
            GridField dp = GridField::scalar(wd, Calculus::spectral);
            Sp.inverse(std::move(sp), dp.comp(0));
            pnew = pnew + dp;
        }

        GridField vnew = v + w;
        double inc = 2 * kinetic_energy(vnew) - 2 * kinetic_energy(v);
        einc += inc / times.size();
        epred += 3 * vol * st.rho / times.size();

        EulerSlice out;
        out.t = t;
        out.v = std::move(vnew);
        out.p = std::move(pnew);
        out.R = std::move(Rnew);
        out.rho = opt.next_rho >= 0 ? opt.next_rho : 2 * rsup / r0;
        {
            EulerIterate one;
            one.lambda = lambda;
            one.slices.push_back(std::move(out));
            auto inv = check_invariants(one, r0, 1e-10, 1e300);
            out = std::move(one.slices[0]);
            if (!inv.pass && rep.invariants_pass) {
                rep.invariants_pass = false;
                rep.invariant_failed = inv.failed;
            }
        }
        if (!opt.keep_fields) out.v = out.p = out.R = GridField();
        next.slices.push_back(std::move(out));
    }
    rep.stress_after = after;
    rep.corrector = corr;
    rep.perturbation = pert;
    rep.energy_increment = einc;
    rep.energy_predicted = epred;
    double sd1 = std::sqrt(dnext);
    auto add_term = [&](const std::string& name, bool on, double measured, double predicted) {
        if (!on) return;
        TermReport t{name, measured, predicted, predicted > 0 ? measured / predicted : 0.0};
        rep.terms.push_back(t);
    };
    add_term("transport", opt.transport, t1, sd1 * mu / lambda);
    add_term("oscillation", opt.oscillation, t2, dnext * s.lambda / lambda + dnext * gv / mu);
    add_term("nash", opt.nash, t3, sd1 * gv / lambda);
    return {std::move(next), std::move(rep)};
}

}  // namespace ciw
