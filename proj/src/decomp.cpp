#include "ciw/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ciw/metric.hpp"
#include "ciw/rng.hpp"

namespace ciw {

Eigen::VectorXd sym_vec(const Eigen::MatrixXd& A) {
    int n = static_cast<int>(A.rows());
    Eigen::VectorXd v(n * (n + 1) / 2);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) v(k++) = 0.5 * (A(i, j) + A(j, i));
    return v;
}

Eigen::MatrixXd sym_mat(const Eigen::VectorXd& v, int n) {
    Eigen::MatrixXd A(n, n);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            A(i, j) = A(j, i) = v(k);
            ++k;
        }
    return A;
}

void RankOneBasis::build() {
    int s = static_cast<int>(mats.size());
    if (s != n * (n + 1) / 2)
        throw ConfigurationError("need " + std::to_string(n * (n + 1) / 2) + " matrices, got " +
                                 std::to_string(s));
    system.resize(s, s);
    for (int k = 0; k < s; ++k) system.col(k) = sym_vec(mats[k]);
    determinant = system.determinant();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (lu.rank() < s || std::fabs(determinant) < 1e-12)
        throw ConfigurationError("rank-one system is singular (det " + std::to_string(determinant) + ")");
    inverse = lu.inverse();
    id_coeffs = coefficients(Eigen::MatrixXd::Identity(n, n));
    for (int k = 0; k < s; ++k)
        if (!(id_coeffs(k) > 0))
            throw ConfigurationError("identity is not interior to the cone (coefficient " +
                                     std::to_string(k) + " = " + std::to_string(id_coeffs(k)) + ")");
}

Eigen::MatrixXd RankOneBasis::reconstruct(const Eigen::VectorXd& c) const {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < mats.size(); ++k) A += c(static_cast<Eigen::Index>(k)) * mats[k];
    return A;
}

double certify_cone_radius(RankOneBasis& b, int samples, std::uint64_t seed) {
    int n = b.n, s = n * (n + 1) / 2;
    std::vector<Eigen::VectorXd> dirs;  // inverse applied to each sampled boundary direction
    if (n > 1) {
        SplitMix64 rng(seed);
        dirs.reserve(samples);
        for (int t = 0; t < samples; ++t) {
            Eigen::MatrixXd B(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) B(i, j) = B(j, i) = rng.normal();
            B -= (B.trace() / n) * Eigen::MatrixXd::Identity(n, n);
            B /= B.norm();
            dirs.push_back(b.inverse * sym_vec(B));
        }
    }
    auto ok = [&](double r) {
        for (const auto& d : dirs)
            for (int k = 0; k < s; ++k)
                if (!(b.id_coeffs(k) + r * d(k) > 0)) return false;
        return true;
    };
    double lo = 0, hi = 2;
    if (ok(hi)) {
        lo = hi;
    } else {
        while (hi - lo > 1e-6) {
            double mid = 0.5 * (lo + hi);
            (ok(mid) ? lo : hi) = mid;
        }
    }
    b.r0 = 0.5 * lo;
    return b.r0;
}

double certify_cone_radius(DirectionSet& d, int samples, std::uint64_t seed) {
    return certify_cone_radius(d.basis, samples, seed);
}

DirectionSet make_direction_set(std::string name, std::vector<Eigen::VectorXd> xi) {
    if (xi.empty()) throw ConfigurationError("empty direction set");
    DirectionSet d;
    d.name = std::move(name);
    int n = static_cast<int>(xi[0].size());
    d.basis.n = n;
    for (auto& v : xi) {
        if (v.size() != n) throw ConfigurationError("directions of mixed dimension");
        v /= v.norm();
        d.basis.mats.push_back(v * v.transpose());
    }
    d.xi = std::move(xi);
    d.basis.build();
    certify_cone_radius(d);
    return d;
}

DirectionSet primitive_directions(int n) {
    std::vector<Eigen::VectorXd> xi;
    if (n == 1) {
        xi.push_back(Eigen::VectorXd::Ones(1));
        return make_direction_set("unit", xi);
    }
    if (n == 2) {
        for (int k = 0; k < 3; ++k) {
            double a = 2.0 * M_PI * k / 3.0 + M_PI / 2.0;
            Eigen::VectorXd v(2);
            v << std::cos(a), std::sin(a);
            xi.push_back(v);
        }
        return make_direction_set("triple-120", xi);
    }
    if (n == 3) {
        // (0, +-1, phi) and its cyclic shifts: the six axes through opposite
        // vertices of the icosahedron
        double phi = 0.5 * (1 + std::sqrt(5.0));
        for (int c = 0; c < 3; ++c)
            for (int sgn : {1, -1}) {
                double base[3] = {0, double(sgn), phi};
                Eigen::VectorXd v(3);
                for (int i = 0; i < 3; ++i) v((i + c) % 3) = base[i];
                xi.push_back(v);
            }
        return make_direction_set("icosahedral", xi);
    }
    throw std::invalid_argument("primitive directions exist for n in {1,2,3}");
}

DirectionSet lattice_directions(int n) {
    if (n == 1) return primitive_directions(1);
    if (n == 2) {
        std::vector<Eigen::VectorXd> xi(3, Eigen::VectorXd(2));
        xi[0] << 1, 0;
        xi[1] << 1, 2;
        xi[2] << -1, 2;
        return make_direction_set("lattice-triple", xi);
    }
    throw std::invalid_argument("lattice directions are provided for n in {1,2}");
}

std::vector<double> local_decompose_squares(const Eigen::MatrixXd& A, const DirectionSet& dirs,
                                            bool check_cone) {
    if (A.rows() != dirs.n() || A.cols() != dirs.n())
        throw std::invalid_argument("matrix size does not match direction set");
    if (check_cone && dirs.n() > 1) {
        if (!(A.trace() > 0)) throw ConeError("matrix trace is not positive");
        double dev = cone_deviation(A);
        if (dev > dirs.basis.r0)
            throw ConeError("matrix deviation " + std::to_string(dev) + " exceeds certified r0 " +
                            std::to_string(dirs.basis.r0));
    }
    Eigen::VectorXd c = dirs.basis.coefficients(A);
    double tol = 1e-12 * std::max(1.0, A.norm());
    std::vector<double> out(c.size());
    for (int k = 0; k < c.size(); ++k) {
        if (c(k) < -tol)
            throw DecompositionError("negative coefficient " + std::to_string(c(k)) + " at index " +
                                         std::to_string(k),
                                     k);
        out[k] = std::max(0.0, c(k));
    }
    return out;
}

std::vector<double> local_decompose(const Eigen::MatrixXd& A, const DirectionSet& dirs) {
    auto c = local_decompose_squares(A, dirs);
    for (auto& v : c) v = std::sqrt(v);
    return c;
}

double stage_error_factor(const DirectionSet& dirs) {
    int n = dirs.n();
    if (n == 1) return 0.9;
    double r = dirs.basis.r0;
    double cmax = std::min(1.0, r / std::sqrt(1 + r * r / n));
    return 0.9 * cmax;
}

// Beltrami families

std::vector<IVec3> shell_pairs(int shell) {
    std::vector<IVec3> out;
    int m = static_cast<int>(std::sqrt(double(shell))) + 1;
    for (int a = -m; a <= m; ++a)
        for (int b = -m; b <= m; ++b)
            for (int c = -m; c <= m; ++c) {
                if (a * a + b * b + c * c != shell) continue;
                int first = a != 0 ? a : (b != 0 ? b : c);
                if (first > 0) out.push_back({a, b, c});
            }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

Eigen::Vector3d unit(const IVec3& k) {
    Eigen::Vector3d v(k[0], k[1], k[2]);
    return v / v.norm();
}

RankOneBasis pair_basis(const std::vector<IVec3>& pairs) {
    RankOneBasis b;
    b.n = 3;
    for (const auto& k : pairs) {
        Eigen::Vector3d h = unit(k);
        b.mats.push_back(Eigen::Matrix3d::Identity() - h * h.transpose());
    }
    b.build();
    return b;
}

bool canonical(const IVec3& k) {
    int first = k[0] != 0 ? k[0] : (k[1] != 0 ? k[1] : k[2]);
    return first > 0;
}

}  // namespace

double family_quality(const std::vector<IVec3>& pairs) {
    if (pairs.size() != 6) return -1;
    try {
        RankOneBasis b = pair_basis(pairs);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(b.inverse);
        return b.id_coeffs.minCoeff() / svd.singularValues()(0);
    } catch (const ConfigurationError&) {
        return -1;
    }
}

BeltramiFamily make_beltrami_family(int shell, std::vector<IVec3> pairs) {
    BeltramiFamily f;
    f.shell = shell;
    f.lambda0 = std::sqrt(double(shell));
    for (const auto& k : pairs)
        if (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] != shell)
            throw ConfigurationError("wavevector off the shell");
    f.pairs = std::move(pairs);
    f.basis = pair_basis(f.pairs);
    certify_cone_radius(f.basis);
    return f;
}

std::array<BeltramiFamily, 2> beltrami_families() {
    // exhaustive search over splittings of a shell's antipodal pairs into two
    // disjoint 6-pair families; the first shell with a valid splitting wins and
    // ties go to the earliest splitting in lexicographic order
    for (int shell = 1; shell <= 50; ++shell) {
        auto P = shell_pairs(shell);
        int m = static_cast<int>(P.size());
        if (m < 12) continue;
        double best = 0;
        std::vector<int> best1, best2;
        std::vector<int> pick(6);
        std::function<void(int, int)> rec1;
        rec1 = [&](int start, int depth) {
            if (depth == 6) {
                std::vector<IVec3> f1;
                std::vector<char> used(m, 0);
                for (int i : pick) {
                    f1.push_back(P[i]);
                    used[i] = 1;
                }
                double q1 = family_quality(f1);
                if (q1 <= best) return;
                std::vector<int> rest;
                for (int i = 0; i < m; ++i)
                    if (!used[i]) rest.push_back(i);
                // second family: first six-subset of the rest (enumerated) with best quality
                std::vector<int> pick2(6);
                std::function<void(int, int)> rec2;
                rec2 = [&](int s2, int d2) {
                    if (d2 == 6) {
                        std::vector<IVec3> f2;
                        for (int i : pick2) f2.push_back(P[i]);
                        double q = std::min(q1, family_quality(f2));
                        if (q > best + 1e-12) {
                            best = q;
                            best1 = pick;
                            best2 = pick2;
                        }
                        return;
                    }
                    for (int t = s2; t < static_cast<int>(rest.size()); ++t) {
                        pick2[d2] = rest[t];
                        rec2(t + 1, d2 + 1);
                    }
                };
                rec2(0, 0);
                return;
            }
            for (int t = start; t < m; ++t) {
                if (depth == 0 && t > 0) return;  // family one holds the first pair
                pick[depth] = t;
                rec1(t + 1, depth + 1);
            }
        };
        rec1(0, 0);
        if (best > 0) {
            std::vector<IVec3> f1, f2;
            for (int i : best1) f1.push_back(P[i]);
            for (int i : best2) f2.push_back(P[i]);
            return {make_beltrami_family(shell, f1), make_beltrami_family(shell, f2)};
        }
    }
    throw ConfigurationError("no shell up to 50 admits two disjoint Beltrami families");
}

Eigen::Vector3cd beltrami_vector(const IVec3& k) {
    if (!canonical(k)) {
        IVec3 mk{-k[0], -k[1], -k[2]};
        return -beltrami_vector(mk).conjugate();
    }
    Eigen::Vector3d kh = unit(k);
    int m = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(k[i]) < std::abs(k[m])) m = i;
    Eigen::Vector3d em = Eigen::Vector3d::Zero();
    em(m) = 1;
    Eigen::Vector3d e1 = kh.cross(em).normalized();
    Eigen::Vector3d e2 = kh.cross(e1);
    using C = std::complex<double>;
    Eigen::Vector3cd B = (e1.cast<C>() + C(0, 1) * e2.cast<C>()) / std::sqrt(2.0);
    int j = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(B(i)) > std::abs(B(j)) + 1e-14) j = i;
    B *= std::conj(B(j)) / std::abs(B(j));
    return B;
}

std::vector<IVec3> BeltramiFamily::wavevectors() const {
    std::vector<IVec3> out;
    for (const auto& k : pairs) {
        out.push_back(k);
        out.push_back({-k[0], -k[1], -k[2]});
    }
    return out;
}

std::vector<Eigen::Vector3cd> BeltramiFamily::amplitude_vectors() const {
    std::vector<Eigen::Vector3cd> out;
    for (const auto& k : wavevectors()) out.push_back(beltrami_vector(k));
    return out;
}

std::vector<double> beltrami_coefficients(const Eigen::Matrix3d& R, const BeltramiFamily& f) {
    double tr = R.trace();
    if (!(tr > 0)) throw ConeError("stress trace is not positive");
    double dev = cone_deviation(R);
    if (dev > f.basis.r0)
        throw ConeError("stress deviation " + std::to_string(dev) + " exceeds family r0 " +
                        std::to_string(f.basis.r0));
    Eigen::VectorXd g2 = f.basis.coefficients(R);
    std::vector<double> out(6);
    for (int k = 0; k < 6; ++k) {
        if (g2(k) < -1e-12 * tr)
            throw DecompositionError("negative gamma^2 at pair " + std::to_string(k), k);
        out[k] = std::sqrt(std::max(0.0, g2(k)));
    }
    return out;
}

std::vector<double> beltrami_amplitudes(const Eigen::Matrix3d& R, const BeltramiFamily& f) {
    // with a_k = sqrt(tr R / 3) gamma_k(R / (tr R / 3)) the amplitudes satisfy
    // 1/2 sum_k |a_k|^2 (Id - k^ k^) = R exactly
    double s = R.trace() / 3.0;
    auto g = beltrami_coefficients(R / s, f);
    for (auto& v : g) v *= std::sqrt(s);
    return g;
}

// Mikado directions

std::vector<IVec3> mikado_candidates(int lambda0) {
    std::vector<IVec3> out;
    for (int a = -lambda0; a <= lambda0; ++a)
        for (int b = -lambda0; b <= lambda0; ++b)
            for (int c = -lambda0; c <= lambda0; ++c) {
                int n2 = a * a + b * b + c * c;
                if (n2 == 0 || n2 > lambda0 * lambda0) continue;
                if (std::gcd(std::gcd(std::abs(a), std::abs(b)), std::abs(c)) != 1) continue;
                IVec3 k{a, b, c};
                if (canonical(k)) out.push_back(k);
            }
    std::sort(out.begin(), out.end(), [](const IVec3& x, const IVec3& y) {
        int nx = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        int ny = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        return nx != ny ? nx < ny : x < y;
    });
    return out;
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    int n = static_cast<int>(A.cols());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<char> passive(n, 0);
    double tol = 1e-14 * std::max(1.0, A.cwiseAbs().maxCoeff()) * std::max(1.0, b.norm());
    for (int outer = 0; outer < 3 * n + 10; ++outer) {
        Eigen::VectorXd w = A.transpose() * (b - A * x);
        int j = -1;
        double wmax = tol;
        for (int i = 0; i < n; ++i)
            if (!passive[i] && w(i) > wmax) {
                wmax = w(i);
                j = i;
            }
        if (j < 0) break;
        passive[j] = 1;
        for (int inner = 0; inner < 3 * n + 10; ++inner) {
            std::vector<int> P;
            for (int i = 0; i < n; ++i)
                if (passive[i]) P.push_back(i);
            Eigen::MatrixXd AP(A.rows(), P.size());
            for (std::size_t t = 0; t < P.size(); ++t) AP.col(t) = A.col(P[t]);
            Eigen::VectorXd zP = AP.completeOrthogonalDecomposition().solve(b);
            bool feasible = true;
            for (int t = 0; t < zP.size(); ++t)
                if (zP(t) <= 0) feasible = false;
            if (feasible) {
                x.setZero();
                for (std::size_t t = 0; t < P.size(); ++t) x(P[t]) = zP(t);
                break;
            }
            double alpha = 1;
            for (std::size_t t = 0; t < P.size(); ++t)
                if (zP(t) <= 0) alpha = std::min(alpha, x(P[t]) / (x(P[t]) - zP(t)));
            for (std::size_t t = 0; t < P.size(); ++t) {
                x(P[t]) += alpha * (zP(t) - x(P[t]));
                if (x(P[t]) <= 1e-15) {
                    x(P[t]) = 0;
                    passive[P[t]] = 0;
                }
            }
        }
    }
    return x;
}

Eigen::VectorXd nonneg_least_norm(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    // dual: minimize 1/2 |(A^T y)_+|^2 - b.y, primal x = (A^T y)_+
    int m = static_cast<int>(A.rows());
    auto primal = [&](const Eigen::VectorXd& y) {
        Eigen::VectorXd z = A.transpose() * y;
        return Eigen::VectorXd(z.cwiseMax(0.0));
    };
    auto phi = [&](const Eigen::VectorXd& y) { return 0.5 * primal(y).squaredNorm() - b.dot(y); };
    Eigen::VectorXd y = (A * A.transpose()).ldlt().solve(b);
    double scale = std::max(1.0, b.norm());
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd x = primal(y);
        Eigen::VectorXd g = A * x - b;
        if (g.norm() <= 1e-15 * scale) break;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
        for (int j = 0; j < A.cols(); ++j)
            if (x(j) > 0) H += A.col(j) * A.col(j).transpose();
        H += 1e-13 * std::max(1.0, H.trace()) * Eigen::MatrixXd::Identity(m, m);
        Eigen::VectorXd d = -H.ldlt().solve(g);
        double f0 = phi(y), t = 1;
        while (t > 1e-12 && phi(y + t * d) > f0 + 1e-4 * t * g.dot(d)) t *= 0.5;
        y += t * d;
    }
    return primal(y);
}

MikadoCoefficients mikado_coefficients(const Eigen::Matrix3d& R, int lambda0, double eig_min,
                                       double eig_max) {
    if (lambda0 < 1) throw std::invalid_argument("lambda0 must be >= 1");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(R);
    double lmin = es.eigenvalues()(0), lmax = es.eigenvalues()(2);
    double slack = 1e-12 * std::max(1.0, lmax);
    if (lmin < eig_min - slack || lmax > eig_max + slack)
        throw std::invalid_argument("stress eigenvalues outside the configured compact set");
    MikadoCoefficients out;
    out.directions = mikado_candidates(lambda0);
    out.scale = eig_max;
    int K = static_cast<int>(out.directions.size());
    Eigen::MatrixXd A(6, K);
    for (int k = 0; k < K; ++k) {
        Eigen::Vector3d v(out.directions[k][0], out.directions[k][1], out.directions[k][2]);
        A.col(k) = sym_vec(v * v.transpose());
    }
    Eigen::VectorXd b = sym_vec(R);
    double tol = 1e-10 * R.norm();
    auto residual = [&](const Eigen::VectorXd& c) {
        Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
        for (int k = 0; k < K; ++k) {
            Eigen::Vector3d v(out.directions[k][0], out.directions[k][1], out.directions[k][2]);
            S += c(k) * v * v.transpose();
        }
        return (S - R).norm();
    };
    Eigen::VectorXd c0 = nnls(A, b);
    double r0 = residual(c0);
    if (r0 > tol)
        throw DecompositionError("stress not representable with |k| <= " + std::to_string(lambda0) +
                                     " (residual " + std::to_string(r0) + "); try lambda0 = " +
                                     std::to_string(lambda0 + 1),
                                 -1);
    // among the exact nonnegative solutions take the one of least norm: it is
    // unique, so the coefficients commute with coordinate permutations
    Eigen::VectorXd c = nonneg_least_norm(A, b);
    double r = residual(c);
    if (!(r <= tol)) {
        c = c0;
        r = r0;
    }
    out.residual = r;
    out.c.resize(K);
    out.gamma.resize(K);
    for (int k = 0; k < K; ++k) {
        out.c[k] = c(k);
        out.gamma[k] = std::sqrt(c(k) / out.scale);
    }
    return out;
}

nlohmann::json certificate(const DirectionSet& d) {
    nlohmann::json j;
    j["name"] = d.name;
    j["n"] = d.n();
    for (const auto& v : d.xi) j["vectors"].push_back(std::vector<double>(v.data(), v.data() + v.size()));
    j["identity_coefficients"] =
        std::vector<double>(d.basis.id_coeffs.data(), d.basis.id_coeffs.data() + d.basis.id_coeffs.size());
    j["determinant"] = d.basis.determinant;
    j["r0"] = d.basis.r0;
    j["c0"] = stage_error_factor(d);
    return j;
}

nlohmann::json certificate(const BeltramiFamily& f) {
    nlohmann::json j;
    j["shell"] = f.shell;
    j["lambda0"] = f.lambda0;
    for (const auto& k : f.pairs) j["pairs"].push_back(k);
    j["identity_coefficients"] =
        std::vector<double>(f.basis.id_coeffs.data(), f.basis.id_coeffs.data() + f.basis.id_coeffs.size());
    j["determinant"] = f.basis.determinant;
    j["r0"] = f.basis.r0;
    return j;
}

}  // namespace ciw
