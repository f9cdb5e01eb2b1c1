#include "ciw/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ciw/fft.hpp"

namespace ciw {

namespace {
constexpr double two_pi = 6.283185307179586;
}

int sym_index(int n, int i, int j) {
    if (i > j) std::swap(i, j);
    return i * n - i * (i - 1) / 2 + (j - i);
}

GridDomain GridDomain::torus(int dim, int m, double period) {
    GridDomain d;
    d.dim = dim;
    d.extent.assign(dim, period);
    d.origin.assign(dim, 0.0);
    d.res.assign(dim, m);
    d.periodic.assign(dim, true);
    d.validate();
    return d;
}

GridDomain GridDomain::torus(std::vector<int> res) {
    GridDomain d;
    d.dim = static_cast<int>(res.size());
    d.extent.assign(d.dim, two_pi);
    d.origin.assign(d.dim, 0.0);
    d.res = std::move(res);
    d.periodic.assign(d.dim, true);
    d.validate();
    return d;
}

GridDomain GridDomain::box(std::vector<double> lo, std::vector<double> hi, std::vector<int> res) {
    GridDomain d;
    d.dim = static_cast<int>(res.size());
    if (lo.size() != res.size() || hi.size() != res.size())
        throw std::invalid_argument("box: dimension mismatch");
    d.origin = lo;
    for (int a = 0; a < d.dim; ++a) d.extent.push_back(hi[a] - lo[a]);
    d.res = std::move(res);
    d.periodic.assign(d.dim, false);
    d.validate();
    return d;
}

void GridDomain::validate() const {
    if (dim < 1 || dim > 3) throw std::invalid_argument("domain: dim must be 1, 2 or 3");
    if ((int)extent.size() != dim || (int)res.size() != dim || (int)periodic.size() != dim ||
        (int)origin.size() != dim)
        throw std::invalid_argument("domain: per-axis data has wrong length");
    for (int a = 0; a < dim; ++a) {
        if (res[a] < 8) throw std::invalid_argument("domain: need at least 8 samples per axis");
        if (!(extent[a] > 0)) throw std::invalid_argument("domain: extent must be positive");
        if (periodic[a]) {
            double m = extent[a] / two_pi;
            if (std::fabs(m - std::round(m)) > 1e-12 || std::round(m) < 1)
                throw std::invalid_argument("domain: periodic extent must be 2*pi*integer");
        }
    }
}

std::size_t GridDomain::size() const {
    std::size_t s = 1;
    for (int r : res) s *= static_cast<std::size_t>(r);
    return s;
}

double GridDomain::spacing(int axis) const {
    return periodic[axis] ? extent[axis] / res[axis] : extent[axis] / (res[axis] - 1);
}

double GridDomain::coord(int axis, int i) const { return origin[axis] + i * spacing(axis); }

bool GridDomain::all_periodic() const {
    return std::all_of(periodic.begin(), periodic.end(), [](bool b) { return b; });
}

std::size_t GridDomain::stride(int axis) const {
    std::size_t s = 1;
    for (int a = dim - 1; a > axis; --a) s *= res[a];
    return s;
}

std::vector<int> GridDomain::unravel(std::size_t idx) const {
    std::vector<int> out(dim);
    for (int a = dim - 1; a >= 0; --a) {
        out[a] = static_cast<int>(idx % res[a]);
        idx /= res[a];
    }
    return out;
}

bool GridDomain::operator==(const GridDomain& o) const {
    return dim == o.dim && extent == o.extent && origin == o.origin && res == o.res &&
           periodic == o.periodic;
}

GridField::GridField(GridDomain dom, Rank rank, int ncomp, Calculus mode)
    : dom_(std::move(dom)), rank_(rank), ncomp_(ncomp), mode_(mode) {
    dom_.validate();
    if (mode_ == Calculus::spectral && !dom_.all_periodic())
        throw ModeError("spectral calculus requires all axes periodic");
    npts_ = dom_.size();
    tdim_ = ncomp;
    if (rank_ == Rank::scalar) {
        ncomp_ = 1;
        tdim_ = 1;
    } else if (rank_ == Rank::sym_tensor) {
        tdim_ = ncomp;
        ncomp_ = sym_size(ncomp);
    }
    v_.assign(static_cast<std::size_t>(ncomp_) * npts_, 0.0);
}

GridField GridField::scalar(const GridDomain& dom, Calculus mode) {
    return GridField(dom, Rank::scalar, 1, mode);
}
GridField GridField::vector(const GridDomain& dom, int N, Calculus mode) {
    return GridField(dom, Rank::vector, N, mode);
}
GridField GridField::sym_tensor(const GridDomain& dom, int n, Calculus mode) {
    return GridField(dom, Rank::sym_tensor, n, mode);
}
Calculus GridField::default_mode(const GridDomain& dom) {
    return dom.all_periodic() ? Calculus::spectral : Calculus::finite_difference;
}

double GridField::t(int i, int j, std::size_t p) const {
    return at(sym_index(tdim_, i, j), p);
}

double GridField::point_norm(std::size_t p) const {
    double s = 0;
    if (rank_ == Rank::sym_tensor) {
        for (int i = 0; i < tdim_; ++i)
            for (int j = i; j < tdim_; ++j) {
                double x = t(i, j, p);
                s += (i == j ? 1.0 : 2.0) * x * x;
            }
    } else {
        for (int c = 0; c < ncomp_; ++c) s += at(c, p) * at(c, p);
    }
    return std::sqrt(s);
}

GridField GridField::with_mode(Calculus m) const {
    GridField g(dom_, rank_, rank_ == Rank::sym_tensor ? tdim_ : ncomp_, m);
    g.v_ = v_;
    return g;
}

namespace {
void check_same(const GridField& a, const GridField& b) {
    if (!(a.domain() == b.domain()) || a.components() != b.components() || a.rank() != b.rank())
        throw std::invalid_argument("field shapes differ");
}
}  // namespace

GridField operator+(const GridField& a, const GridField& b) {
    check_same(a, b);
    GridField r = a;
    for (std::size_t i = 0; i < r.values().size(); ++i) r.values()[i] += b.values()[i];
    return r;
}
GridField operator-(const GridField& a, const GridField& b) {
    check_same(a, b);
    GridField r = a;
    for (std::size_t i = 0; i < r.values().size(); ++i) r.values()[i] -= b.values()[i];
    return r;
}
GridField operator*(double s, const GridField& a) {
    GridField r = a;
    for (auto& x : r.values()) x *= s;
    return r;
}

namespace {

void fd_line(const double* in, double* out, std::size_t stride, int M, double h, bool periodic) {
    auto f = [&](int i) { return in[static_cast<std::size_t>(i) * stride]; };
    double c = 1.0 / (12.0 * h);
    if (periodic) {
        for (int i = 0; i < M; ++i) {
            auto w = [&](int k) { return f(((i + k) % M + M) % M); };
            out[i * stride] = c * (-w(2) + 8 * w(1) - 8 * w(-1) + w(-2));
        }
        return;
    }
    for (int i = 2; i < M - 2; ++i)
        out[i * stride] = c * (-f(i + 2) + 8 * f(i + 1) - 8 * f(i - 1) + f(i - 2));
    out[0] = c * (-25 * f(0) + 48 * f(1) - 36 * f(2) + 16 * f(3) - 3 * f(4));
    out[stride] = c * (-3 * f(0) - 10 * f(1) + 18 * f(2) - 6 * f(3) + f(4));
    int n = M - 1;
    out[n * stride] = -c * (-25 * f(n) + 48 * f(n - 1) - 36 * f(n - 2) + 16 * f(n - 3) - 3 * f(n - 4));
    out[(n - 1) * stride] =
        -c * (-3 * f(n) - 10 * f(n - 1) + 18 * f(n - 2) - 6 * f(n - 3) + f(n - 4));
}

}  // namespace

GridField differentiate(const GridField& f, int axis) {
    const auto& d = f.domain();
    if (axis < 0 || axis >= d.dim) throw std::invalid_argument("differentiate: axis out of range");
    if (f.mode() == Calculus::spectral && !d.periodic[axis])
        throw ModeError("spectral derivative on a non-periodic axis");
    GridField out = f;
    int M = d.res[axis];
    if (f.mode() == Calculus::spectral) {
        double scale = two_pi / d.extent[axis];
        bool even = M % 2 == 0;
        auto mult = [&](int k) -> cplx {
            if (even && k == M / 2) return 0.0;
            return cplx(0.0, scale * k);
        };
        for (int c = 0; c < f.components(); ++c)
            apply_line_multiplier(out.comp(c), d.res, axis, mult);
        return out;
    }
    std::size_t st = d.stride(axis);
    std::size_t outer = d.size() / (st * M);
    double h = d.spacing(axis);
    for (int c = 0; c < f.components(); ++c)
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < st; ++i) {
                std::size_t base = o * st * M + i;
                fd_line(f.comp(c) + base, out.comp(c) + base, st, M, h, d.periodic[axis]);
            }
    return out;
}

GridField gradient(const GridField& f) {
    const auto& d = f.domain();
    GridField out(d, Rank::vector, f.components() * d.dim, f.mode());
    for (int a = 0; a < d.dim; ++a) {
        GridField da = differentiate(f, a);
        for (int c = 0; c < f.components(); ++c)
            std::memcpy(out.comp(c * d.dim + a), da.comp(c), sizeof(double) * f.points());
    }
    return out;
}

double norm(const GridField& f, NormKind kind) {
    if (kind == NormKind::sup) {
        double m = 0;
        for (std::size_t p = 0; p < f.points(); ++p) m = std::max(m, f.point_norm(p));
        return m;
    }
    // full derivative of every stored entry; tensor off-diagonals count twice
    GridField g = gradient(f);
    int dim = f.domain().dim;
    double m = 0;
    for (std::size_t p = 0; p < f.points(); ++p) {
        double s = 0;
        for (int c = 0; c < f.components(); ++c) {
            double w = 1.0;
            if (f.rank() == Rank::sym_tensor) {
                int n = f.tensor_dim();
                for (int i = 0; i < n; ++i)
                    for (int j = i; j < n; ++j)
                        if (sym_index(n, i, j) == c) w = (i == j) ? 1.0 : 2.0;
            }
            for (int a = 0; a < dim; ++a) s += w * g.at(c * dim + a, p) * g.at(c * dim + a, p);
        }
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

namespace {
double diff_norm(const GridField& f, std::size_t p, std::size_t q) {
    double s = 0;
    for (int c = 0; c < f.components(); ++c) {
        double w = 1.0;
        if (f.rank() == Rank::sym_tensor) {
            int n = f.tensor_dim();
            // packed entry c is diagonal iff it starts a row
            w = 2.0;
            for (int i = 0; i < n; ++i)
                if (sym_index(n, i, i) == c) w = 1.0;
        }
        double x = f.at(c, p) - f.at(c, q);
        s += w * x * x;
    }
    return std::sqrt(s);
}
}  // namespace

double holder_seminorm(const GridField& f, double theta) {
    if (!(theta > 0 && theta <= 1)) throw std::invalid_argument("holder_seminorm: theta in (0,1]");
    const auto& d = f.domain();
    double best = 0;
    for (int a = 0; a < d.dim; ++a) {
        int M = d.res[a];
        int smax = d.periodic[a] ? M / 2 : M - 1;
        std::size_t st = d.stride(a);
        double h = d.spacing(a);
        for (int s = 1; s <= smax; s *= 2) {
            double denom = std::pow(s * h, theta);
            for (std::size_t p = 0; p < f.points(); ++p) {
                int i = static_cast<int>((p / st) % M);
                int j = i + s;
                if (j >= M) {
                    if (!d.periodic[a]) continue;
                    j -= M;
                }
                std::size_t q = p + (static_cast<std::size_t>(j) - i) * st;
                best = std::max(best, diff_norm(f, p, q) / denom);
            }
        }
    }
    return best;
}

std::vector<double> MollifierKernel::weights(double h) const {
    int r = static_cast<int>(std::ceil(ell / h)) - 1;
    if (r < 0) r = 0;
    std::vector<double> w(2 * r + 1);
    double s = 0;
    for (int i = -r; i <= r; ++i) {
        double x = i * h / ell;
        double v = std::pow(std::max(0.0, 1 - x * x), power);
        w[i + r] = v;
        s += v;
    }
    // x -> -x is exact in floating point, so w[i] == w[-i] bitwise
    for (auto& v : w) v /= s;
    return w;
}

double MollifierKernel::transform(double h, double k) const {
    auto w = weights(h);
    int r = static_cast<int>(w.size() / 2);
    double s = 0;
    for (int i = -r; i <= r; ++i) s += w[i + r] * std::cos(k * i * h);
    return s;
}

GridField mollify(const GridField& f, const MollifierKernel& k) {
    const auto& d = f.domain();
    for (int a = 0; a < d.dim; ++a)
        if (k.ell < 2 * d.spacing(a) * (1 - 1e-12))
            throw ResolutionError("mollifier scale below two grid spacings");
    GridField cur = f;
    for (int a = 0; a < d.dim; ++a) {
        auto w = k.weights(d.spacing(a));
        int r = static_cast<int>(w.size() / 2);
        int M = d.res[a];
        std::size_t st = d.stride(a);
        std::size_t outer = d.size() / (st * M);
        GridField nxt = cur;
        std::vector<double> line(M), res(M);
        for (int c = 0; c < f.components(); ++c)
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i0 = 0; i0 < st; ++i0) {
                    std::size_t base = o * st * M + i0;
                    const double* src = cur.comp(c) + base;
                    for (int i = 0; i < M; ++i) line[i] = src[i * st];
                    for (int i = 0; i < M; ++i) {
                        double s = 0, wsum = 0;
                        for (int j = -r; j <= r; ++j) {
                            int q = i + j;
                            if (d.periodic[a]) {
                                q %= M;
                                if (q < 0) q += M;
                            } else if (q < 0 || q >= M) {
                                continue;
                            }
                            s += w[j + r] * line[q];
                            wsum += w[j + r];
                        }
                        res[i] = d.periodic[a] ? s : s / wsum;
                    }
                    double* dst = nxt.comp(c) + base;
                    for (int i = 0; i < M; ++i) dst[i * st] = res[i];
                }
        cur = std::move(nxt);
    }
    return cur;
}

double commutator_defect(const GridField& f, const GridField& g, const MollifierKernel& k, int r) {
    if (f.rank() != Rank::scalar || g.rank() != Rank::scalar || !(f.domain() == g.domain()))
        throw std::invalid_argument("commutator_defect: scalar fields on one domain required");
    GridField fg = f;
    for (std::size_t p = 0; p < f.points(); ++p) fg.at(0, p) = f.at(0, p) * g.at(0, p);
    GridField a = mollify(fg, k);
    GridField mf = mollify(f, k), mg = mollify(g, k);
    for (std::size_t p = 0; p < f.points(); ++p) a.at(0, p) -= mf.at(0, p) * mg.at(0, p);
    return norm(a, r == 0 ? NormKind::sup : NormKind::c1_seminorm);
}

ScalingFit scaling_fit(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.size() < 3) throw std::invalid_argument("scaling_fit: need at least 3 pairs");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [s, v] : pairs) {
        if (!(s > 0) || !(v > 0)) throw DomainError("scaling_fit: nonpositive input");
        double x = std::log(s), y = std::log(v);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double n = static_cast<double>(pairs.size());
    ScalingFit fit;
    double den = n * sxx - sx * sx;
    if (den == 0) throw DomainError("scaling_fit: all scales equal");
    fit.slope = (n * sxy - sx * sy) / den;
    fit.intercept = (sy - fit.slope * sx) / n;
    for (auto [s, v] : pairs)
        fit.residual = std::max(fit.residual,
                                std::fabs(std::log(v) - fit.slope * std::log(s) - fit.intercept));
    return fit;
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    // payload is little-endian; x86/arm hosts are little-endian already
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("ciwf: truncated file");
    return v;
}

}  // namespace

void write_ciwf(const GridField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write("CIWF", 4);
    put<std::uint16_t>(os, 1);
    const auto& d = f.domain();
    put<std::uint16_t>(os, static_cast<std::uint16_t>(d.dim));
    for (int a = 0; a < d.dim; ++a) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(d.res[a]));
        put<double>(os, d.extent[a]);
        put<double>(os, d.origin[a]);
        put<std::uint8_t>(os, d.periodic[a] ? 1 : 0);
    }
    put<std::uint8_t>(os, static_cast<std::uint8_t>(f.rank()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(f.tensor_dim()));
    put<std::uint8_t>(os, f.mode() == Calculus::spectral ? 1 : 0);
    for (double v : f.values()) put<double>(os, v);
}

GridField read_ciwf(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CIWF", 4) != 0) throw std::runtime_error("ciwf: bad magic");
    auto ver = get<std::uint16_t>(is);
    if (ver != 1) throw std::runtime_error("ciwf: unsupported version");
    GridDomain d;
    d.dim = get<std::uint16_t>(is);
    for (int a = 0; a < d.dim; ++a) {
        d.res.push_back(static_cast<int>(get<std::uint32_t>(is)));
        d.extent.push_back(get<double>(is));
        d.origin.push_back(get<double>(is));
        d.periodic.push_back(get<std::uint8_t>(is) != 0);
    }
    auto rank = static_cast<Rank>(get<std::uint8_t>(is));
    int tdim = static_cast<int>(get<std::uint32_t>(is));
    auto mode = get<std::uint8_t>(is) ? Calculus::spectral : Calculus::finite_difference;
    GridField f(d, rank, tdim, mode);
    for (auto& v : f.values()) v = get<double>(is);
    return f;
}

void write_csv(const GridField& f, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    const auto& d = f.domain();
    for (int a = 0; a < d.dim; ++a) os << (a ? "," : "") << "x" << a;
    for (int c = 0; c < f.components(); ++c) os << ",c" << c;
    os << "\n" << std::setprecision(17);
    for (std::size_t p = 0; p < f.points(); ++p) {
        auto idx = d.unravel(p);
        for (int a = 0; a < d.dim; ++a) os << (a ? "," : "") << d.coord(a, idx[a]);
        for (int c = 0; c < f.components(); ++c) os << "," << f.at(c, p);
        os << "\n";
    }
}

GridField filtered_gradient(const GridField& f, double rel) {
    const auto& d = f.domain();
    if (!d.all_periodic() || f.mode() != Calculus::spectral)
        throw ModeError("filtered_gradient needs a periodic spectral field");
    Fft3 fft(d.res);
    std::size_t ns = fft.spec_size();
    std::vector<std::vector<cplx>> spec(f.components(), std::vector<cplx>(ns));
    double peak = 0;
    for (int c = 0; c < f.components(); ++c) {
        fft.forward(f.comp(c), spec[c].data());
        for (const auto& z : spec[c]) peak = std::max(peak, std::abs(z));
    }
    double cut = rel * peak;
    for (auto& sc : spec)
        for (auto& z : sc)
            if (std::abs(z) < cut) z = 0;
    GridField out(d, Rank::vector, f.components() * d.dim, f.mode());
    // spectral layout: axes in order, last axis halved
    std::vector<int> sdims = d.res;
    sdims.back() = d.res.back() / 2 + 1;
    std::vector<cplx> work(ns);
    for (int a = 0; a < d.dim; ++a) {
        std::size_t inner = 1;
        for (int b = a + 1; b < d.dim; ++b) inner *= sdims[b];
        int M = d.res[a];
        double scale = two_pi / d.extent[a];
        for (int c = 0; c < f.components(); ++c) {
            for (std::size_t i = 0; i < ns; ++i) {
                int bin = static_cast<int>((i / inner) % sdims[a]);
                int k = a == d.dim - 1 ? bin : freq_index(bin, M);
                if (M % 2 == 0 && std::abs(k) == M / 2) k = 0;
                work[i] = spec[c][i] * cplx(0.0, scale * k);
            }
            fft.inverse(work.data(), out.comp(c * d.dim + a));
        }
    }
    return out;
}

std::size_t krasny_filter(GridField& f, double rel) {
    const auto& d = f.domain();
    if (!d.all_periodic()) throw ModeError("krasny_filter needs a periodic grid");
    Fft3 fft(d.res);
    std::vector<std::vector<cplx>> spec(f.components(), std::vector<cplx>(fft.spec_size()));
    double peak = 0;
    for (int c = 0; c < f.components(); ++c) {
        fft.forward(f.comp(c), spec[c].data());
        for (const auto& z : spec[c]) peak = std::max(peak, std::abs(z));
    }
    double cut = rel * peak;
    std::size_t removed = 0;
    for (int c = 0; c < f.components(); ++c) {
        for (auto& z : spec[c])
            if (z != cplx(0) && std::abs(z) < cut) {
                z = 0;
                ++removed;
            }
        fft.inverse(spec[c].data(), f.comp(c));
    }
    return removed;
}

GridField spectral_resample(const GridField& f, const std::vector<int>& res) {
    const auto& d = f.domain();
    if (!d.all_periodic()) throw ModeError("spectral_resample needs a periodic domain");
    if ((int)res.size() != d.dim) throw std::invalid_argument("spectral_resample: wrong dims");
    GridDomain nd = d;
    nd.res = res;
    GridField out(nd, f.rank(), f.rank() == Rank::sym_tensor ? f.tensor_dim() : f.components(),
                  f.mode());
    for (int c = 0; c < f.components(); ++c) {
        std::vector<int> dims = d.res;
        std::vector<double> cur(f.comp(c), f.comp(c) + f.points());
        for (int a = 0; a < d.dim; ++a) {
            std::vector<int> nd2 = dims;
            nd2[a] = res[a];
            std::size_t n = 1;
            for (int x : nd2) n *= x;
            std::vector<double> nxt(n);
            if (res[a] == dims[a])
                nxt = cur;
            else
                resample_axis(cur.data(), dims, a, res[a], nxt.data());
            cur = std::move(nxt);
            dims = nd2;
        }
        std::memcpy(out.comp(c), cur.data(), sizeof(double) * out.points());
    }
    return out;
}

}  // namespace ciw
