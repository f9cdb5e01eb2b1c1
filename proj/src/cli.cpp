#include "ciw/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "ciw/decomp.hpp"
#include "ciw/euler.hpp"
#include "ciw/nash.hpp"
#include "ciw/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ciw {

const char* const code_version = "ciw 0.1.0";

namespace {

constexpr double two_pi = 6.283185307179586;

// schema

json default_block(const std::string& experiment) {
    if (experiment == "exponents")
        return {{"recursions",
                 json::array({{{"name", "euler-stationary-phase"}, {"p", "1"}, {"a", "1/2"}, {"b", "1/2"}, {"c", "1"}, {"d", "-1"}},
                              {{"name", "euler-transport-cutoff"}, {"p", "1"}, {"a", "3/4"}, {"b", "1/4"}, {"c", "1/2"}, {"d", "-1/2"}},
                              {{"name", "isometric-three-steps"}, {"p", "3"}, {"a", "5/2"}, {"b", "1/2"}, {"c", "1"}, {"d", "-1"}}})},
                {"dimensions", json::array({1, 2, 3})},
                {"step_counts", json::array({1, 2, 3, 6, 18})}};
    if (experiment == "decompose")
        return {{"samples", 1000},
                {"cone_fraction", 0.5},
                {"mikado_lambda0", 2},
                {"flows", {{"enabled", true}, {"M", 64}, {"mikado_samples", 100}, {"beltrami_pair", json::array({1, 0, 0})}}}};
    if (experiment == "verify-commutator")
        return {{"M", 16384}, {"J", 11}, {"thetas", json::array({0.3, 0.5, 0.7})}, {"ell_exponents", json::array({3, 4, 5, 6, 7})},
                {"power", 4}, {"r", 0}};
    if (experiment == "isometric")
        return {{"mode", "iterate"},          {"preset", "round-circle"}, {"M", 256},
                {"Q", 3},                     {"max_points", 1 << 20},          {"growth", 2.0},
                {"predictive", true},         {"export_meshes", true},    {"mesh_max_vertices", 65536},
                {"field_max_points", 1 << 20}, {"spiral_lambdas", json::array({32, 64, 128, 256})}};
    if (experiment == "euler-step")
        return {{"mode", "step"},
                {"background", "seed"},
                {"M", 64},
                {"rho", 0.1},
                {"amp", 0.25},
                {"lambda", 16},
                {"mu", -1.0},
                {"T", two_pi},
                {"times", json::array()},
                {"terms", {{"transport", true}, {"oscillation", true}, {"nash", true}}},
                {"max_working_grid", 192},
                {"flow_grid", 32},
                {"mu_values", json::array({0.5, 0.7, 1.0, 1.4, 2.0, 2.8})},
                {"lambda_values", json::array({8, 16, 32})},
                {"operator_samples", 50},
                {"export_fields", false}};
    return nullptr;
}

const std::vector<std::string> experiments = {"isometric", "euler-step", "decompose", "verify-commutator", "exponents"};

std::string kind_of(const json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    if (v.is_object()) return "object";
    return "null";
}

bool compatible(const json& def, const json& v) {
    std::string a = kind_of(def), b = kind_of(v);
    if (a == b) return true;
    return a == "number" && b == "integer";
}

json merge(const json& def, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
    json out = def;
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string p = path + "/" + it.key();
        if (!def.contains(it.key())) throw ConfigError(p, "unknown key");
        const json& d = def[it.key()];
        if (!compatible(d, it.value())) throw ConfigError(p, "expected " + kind_of(d) + ", got " + kind_of(it.value()));
        if (d.is_object()) {
            out[it.key()] = merge(d, it.value(), p);
        } else if (d.is_array() && !d.empty()) {
            const json& proto = d[0];
            json arr = json::array();
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                std::string pi = p + "/" + std::to_string(i);
                const json& e = it.value()[i];
                if (!compatible(proto, e)) throw ConfigError(pi, "expected " + kind_of(proto) + ", got " + kind_of(e));
                if (proto.is_object()) {
                    for (auto k = proto.begin(); k != proto.end(); ++k)
                        if (!e.contains(k.key())) throw ConfigError(pi + "/" + k.key(), "missing key");
                    arr.push_back(merge(proto, e, pi));
                } else {
                    arr.push_back(e);
                }
            }
            out[it.key()] = arr;
        } else {
            out[it.key()] = it.value();
        }
    }
    return out;
}

void require(bool ok, const std::string& path, const std::string& what) {
    if (!ok) throw ConfigError(path, what);
}

// range checks after merging
void check_ranges(const json& c) {
    const std::string e = c["experiment"];
    const json& b = c[e];
    std::string p = "/" + e;
    if (e == "isometric") {
        std::string m = b["mode"];
        require(m == "iterate" || m == "spiral-law", p + "/mode", "must be iterate or spiral-law");
        std::string pr = b["preset"];
        require(pr == "round-circle" || pr == "flat-torus" || pr == "flat-square" || pr == "scaled-sphere-chart",
                p + "/preset", "unknown preset");
        require(b["M"].get<int>() >= 8, p + "/M", "must be at least 8");
        require(b["Q"].get<int>() >= 0, p + "/Q", "must be nonnegative");
        require(b["growth"].get<double>() > 1, p + "/growth", "must exceed 1");
        require(b["mesh_max_vertices"].get<int>() >= 16, p + "/mesh_max_vertices", "must be at least 16");
        for (const auto& l : b["spiral_lambdas"]) require(l.get<double>() > 0, p + "/spiral_lambdas", "must be positive");
    } else if (e == "euler-step") {
        std::string m = b["mode"];
        require(m == "step" || m == "mu-sweep" || m == "lambda-sweep" || m == "operators", p + "/mode",
                "must be step, mu-sweep, lambda-sweep or operators");
        std::string bg = b["background"];
        require(bg == "seed" || bg == "abc", p + "/background", "must be seed or abc");
        require(b["M"].get<int>() >= 8 && b["M"].get<int>() % 2 == 0, p + "/M", "must be even and at least 8");
        require(b["rho"].get<double>() > 0, p + "/rho", "must be positive");
        require(b["T"].get<double>() > 0, p + "/T", "must be positive");
        require(b["lambda"].get<double>() >= 1, p + "/lambda", "must be at least 1");
        require(b["operator_samples"].get<int>() >= 1, p + "/operator_samples", "must be positive");
    } else if (e == "decompose") {
        require(b["samples"].get<int>() >= 1, p + "/samples", "must be positive");
        double f = b["cone_fraction"];
        require(f > 0 && f <= 1, p + "/cone_fraction", "must lie in (0, 1]");
        require(b["mikado_lambda0"].get<int>() >= 1, p + "/mikado_lambda0", "must be positive");
        require(b["flows"]["beltrami_pair"].size() == 3, p + "/flows/beltrami_pair", "needs three integers");
    } else if (e == "verify-commutator") {
        require(b["M"].get<int>() >= 64, p + "/M", "must be at least 64");
        for (const auto& t : b["thetas"]) require(t.get<double>() > 0 && t.get<double>() < 1, p + "/thetas", "must lie in (0, 1)");
        require(b["ell_exponents"].size() >= 3, p + "/ell_exponents", "needs at least three scales");
    } else if (e == "exponents") {
        for (std::size_t i = 0; i < b["recursions"].size(); ++i)
            for (const char* k : {"p", "a", "b", "c", "d"}) {
                try {
                    Rational::parse(b["recursions"][i][k].get<std::string>());
                } catch (const std::exception&) {
                    throw ConfigError(p + "/recursions/" + std::to_string(i) + "/" + k, "not a rational number");
                }
            }
    }
}

// output helpers

std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    void add(std::vector<std::string> r) { rows.push_back(std::move(r)); }
    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
        f << "\n";
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
            f << "\n";
        }
    }
};

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        out.push_back(cells);
    }
    return out;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    f << j.dump(1) << "\n";
}

std::string hex(const unsigned char* d, unsigned n) {
    std::ostringstream s;
    for (unsigned i = 0; i < n; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(d[i]);
    return s.str();
}

std::string sha256_bytes(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    return hex(md, len);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> line_hashes(const std::string& data) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < data.size()) {
        std::size_t end = data.find('\n', start);
        if (end == std::string::npos) end = data.size();
        out.push_back(sha256_bytes(data.substr(start, end - start)).substr(0, 16));
        start = end + 1;
    }
    return out;
}

bool ends_with(const std::string& s, const std::string& t) {
    return s.size() >= t.size() && s.compare(s.size() - t.size(), t.size(), t) == 0;
}

// random samples from the counter-based generator

Eigen::MatrixXd cone_sample(SplitMix64& rng, int n, double r, double scale) {
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) B(i, j) = B(j, i) = rng.normal();
    B -= (B.trace() / n) * Eigen::MatrixXd::Identity(n, n);
    if (B.norm() > 0) B /= B.norm();
    return scale * (Eigen::MatrixXd::Identity(n, n) + r * rng.uniform() * B);
}

Eigen::Matrix3d spd_sample(SplitMix64& rng, double lo, double hi) {
    Eigen::Matrix3d G;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) G(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(G);
    Eigen::Matrix3d Q = qr.householderQ();
    Eigen::Vector3d ev(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
    return Q * ev.asDiagonal() * Q.transpose();
}

// smooth mean-zero vector field: 8 random modes per component with |k_i| <= 4
GridField field_sample(const GridDomain& d, SplitMix64& rng) {
    auto f = GridField::vector(d, 3, Calculus::spectral);
    for (int c = 0; c < 3; ++c)
        for (int m = 0; m < 8; ++m) {
            int k[3];
            for (int& x : k) x = static_cast<int>(std::floor(rng.uniform(-4, 5)));
            if (k[0] == 0 && k[1] == 0 && k[2] == 0) k[0] = 1;
            double a = rng.normal(), ph = rng.uniform(0, two_pi);
            for (std::size_t p = 0; p < d.size(); ++p) {
                auto id = d.unravel(p);
                f.at(c, p) += a * std::cos(k[0] * d.coord(0, id[0]) + k[1] * d.coord(1, id[1]) + k[2] * d.coord(2, id[2]) + ph);
            }
        }
    return f;
}

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

double rms(const GridField& f) {
    double s = 0;
    for (double x : f.values()) s += x * x;
    return std::sqrt(s / static_cast<double>(f.values().size()));
}

GridField stride_field(const GridField& f, int stride) {
    if (stride == 1) return f;
    const auto& d = f.domain();
    std::vector<int> res;
    std::vector<double> lo, hi;
    for (int a = 0; a < d.dim; ++a) res.push_back(d.res[a] / stride);
    GridDomain s = d;
    s.res = res;
    GridField out(s, f.rank(), f.components(), f.mode());
    for (std::size_t p = 0; p < s.size(); ++p) {
        auto id = s.unravel(p);
        std::size_t q = 0;
        for (int a = 0; a < d.dim; ++a) q += static_cast<std::size_t>(id[a] * stride) * d.stride(a);
        for (int c = 0; c < f.components(); ++c) out.at(c, p) = f.at(c, q);
    }
    return out;
}

std::string write_obj(const GridField& u, const std::string& path) {
    const auto& d = u.domain();
    int n = d.dim, N = u.components();
    if (N > 4) throw MeshError("no projection for maps into R^" + std::to_string(N));
    if (N < 2) throw MeshError("mesh export needs at least two target coordinates");
    if (n > 2) throw MeshError("mesh export handles curves and surfaces only");
    std::string note;
    if (N == 4) note = "orthographic projection dropping coordinate 4";
    auto vtx = [&](std::size_t p) {
        Eigen::Vector3d x = Eigen::Vector3d::Zero();
        for (int c = 0; c < std::min(N, 3); ++c) x(c) = u.at(c, p);
        return x;
    };
    double spread = 0;
    for (std::size_t p = 1; p < u.points(); ++p) spread = std::max(spread, (vtx(p) - vtx(0)).norm());
    if (spread <= 1e-12) throw MeshError("degenerate map: every vertex coincides");
    std::ostringstream s;
    s << "# " << code_version << "\n";
    if (!note.empty()) s << "# " << note << "\n";
    for (std::size_t p = 0; p < u.points(); ++p) {
        auto x = vtx(p);
        s << "v " << num(x(0)) << " " << num(x(1)) << " " << num(x(2)) << "\n";
    }
    if (n == 1) {
        s << "l";
        for (std::size_t p = 0; p < u.points(); ++p) s << " " << p + 1;
        if (d.periodic[0]) s << " 1";
        s << "\n";
    } else {
        int M0 = d.res[0], M1 = d.res[1];
        int e0 = d.periodic[0] ? M0 : M0 - 1, e1 = d.periodic[1] ? M1 : M1 - 1;
        auto id = [&](int i, int j) { return static_cast<std::size_t>((i % M0) * M1 + (j % M1)); };
        for (int i = 0; i < e0; ++i)
            for (int j = 0; j < e1; ++j) {
                std::size_t a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), e = id(i, j + 1);
                for (auto tri : {std::array<std::size_t, 3>{a, b, c}, std::array<std::size_t, 3>{a, c, e}}) {
                    double area = 0.5 * (vtx(tri[1]) - vtx(tri[0])).cross(vtx(tri[2]) - vtx(tri[0])).norm();
                    if (area <= 1e-12)
                        throw MeshError("degenerate triangle at grid cell (" + std::to_string(i) + ", " + std::to_string(j) + ")");
                    s << "f " << tri[0] + 1 << " " << tri[1] + 1 << " " << tri[2] + 1 << "\n";
                }
            }
    }
    std::ofstream f(path, std::ios::binary);
    f << s.str();
    return note;
}

// experiments; each fills the summary and writes its files into dir

struct Context {
    json cfg;
    json block;
    std::string dir;
    std::uint64_t seed = 1;
    json summary;
    std::vector<std::string> files;
    json notes = json::array();
    void add(const std::string& f) { files.push_back(f); }
    std::string path(const std::string& f) const { return (fs::path(dir) / f).string(); }
};

void run_exponents(Context& c) {
    Csv t;
    t.header = {"name", "p", "a", "b", "c", "d", "theta", "value"};
    json rows = json::array();
    for (const auto& r : c.block["recursions"]) {
        Rational p = Rational::parse(r["p"]), a = Rational::parse(r["a"]), b = Rational::parse(r["b"]),
                 cc = Rational::parse(r["c"]), d = Rational::parse(r["d"]);
        std::string th;
        try {
            th = exponent_solve(p, a, b, cc, d).str();
        } catch (const ExponentError& e) {
            th = "error";
        }
        double v = th == "error" ? std::nan("") : Rational::parse(th).value();
        t.add({r["name"], p.str(), a.str(), b.str(), cc.str(), d.str(), th, num(v)});
        rows.push_back({{"name", r["name"]}, {"theta", th}});
    }
    for (int n : c.block["dimensions"]) {
        std::int64_t s = n * (n + 1) / 2;
        Rational th = isometric_exponent(s);
        std::string name = "isometric-dimension-" + std::to_string(n);
        t.add({name, std::to_string(s), (Rational(s) - Rational(1, 2)).str(), "1/2", "1", "-1", th.str(), num(th.value())});
        rows.push_back({{"name", name}, {"theta", th.str()}, {"steps", s},
                        {"expected", Rational(1, 1 + n * (n + 1)).str()}});
    }
    for (int s : c.block["step_counts"]) {
        Rational th = isometric_exponent(s);
        std::string name = "isometric-steps-" + std::to_string(s);
        t.add({name, std::to_string(s), (Rational(s) - Rational(1, 2)).str(), "1/2", "1", "-1", th.str(), num(th.value())});
        rows.push_back({{"name", name}, {"theta", th.str()}, {"steps", s}, {"expected", Rational(1, 1 + 2 * s).str()}});
    }
    t.write(c.path("exponents.csv"));
    c.add("exponents.csv");
    c.summary["rows"] = rows;
}

struct DecomposeSample {
    double nash2 = 0, nash3 = 0, beltrami = 0, mikado = 0, homogeneity = 0;
};

DecomposeSample decompose_sample(std::uint64_t seed, int i, const json& b, const DirectionSet& d2, const DirectionSet& d3,
                                 const BeltramiFamily& f, int lambda0) {
    SplitMix64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    double frac = b["cone_fraction"];
    DecomposeSample s;
    auto recon = [](const DirectionSet& d, const std::vector<double>& c2) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d.n(), d.n());
        for (int k = 0; k < d.size(); ++k) A += c2[k] * d.xi[k] * d.xi[k].transpose();
        return A;
    };
    Eigen::MatrixXd A2 = cone_sample(rng, 2, frac * d2.basis.r0, rng.uniform(0.1, 10));
    s.nash2 = (recon(d2, local_decompose_squares(A2, d2)) - A2).norm() / A2.norm();
    Eigen::MatrixXd A3 = cone_sample(rng, 3, frac * d3.basis.r0, rng.uniform(0.1, 10));
    s.nash3 = (recon(d3, local_decompose_squares(A3, d3)) - A3).norm() / A3.norm();
    double t = rng.uniform(0.1, 10);
    auto mu = local_decompose(A3, d3), mt = local_decompose(t * A3, d3);
    for (int k = 0; k < d3.size(); ++k)
        if (mu[k] > 0) s.homogeneity = std::max(s.homogeneity, std::fabs(mt[k] - std::sqrt(t) * mu[k]) / (std::sqrt(t) * mu[k]));
    Eigen::Matrix3d R = cone_sample(rng, 3, frac * f.basis.r0, rng.uniform(0.5, 3));
    auto a = beltrami_amplitudes(R, f);
    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    for (std::size_t k = 0; k < f.pairs.size(); ++k) {
        Eigen::Vector3d kh(f.pairs[k][0], f.pairs[k][1], f.pairs[k][2]);
        kh.normalize();
        S += a[k] * a[k] * (Eigen::Matrix3d::Identity() - kh * kh.transpose());
    }
    s.beltrami = (S - R).norm() / R.norm();
    Eigen::Matrix3d P = spd_sample(rng, 0.5, 2.0);
    s.mikado = mikado_coefficients(P, lambda0).residual / P.norm();
    return s;
}

struct MikadoSample {
    MikadoReport r;
    Eigen::Matrix3d R;
};

MikadoSample mikado_sample(std::uint64_t seed, int i, const GridDomain& d, int lambda0) {
    SplitMix64 rng(seed * 7919ULL + 0x5bd1e995ULL + static_cast<std::uint64_t>(i));
    MikadoSample s;
    s.R = spd_sample(rng, 0.5, 2.0);
    s.r = mikado_flow(s.R, lambda0, d).report;
    return s;
}

void run_decompose(Context& c) {
    const json& b = c.block;
    auto d2 = primitive_directions(2), d3 = primitive_directions(3);
    auto fam = beltrami_families();
    int lambda0 = b["mikado_lambda0"];
    Csv t;
    t.header = {"sample", "nash_n2", "nash_n3", "homogeneity", "beltrami", "mikado"};
    DecomposeSample worst;
    int N = b["samples"];
    for (int i = 0; i < N; ++i) {
        auto s = decompose_sample(c.seed, i, b, d2, d3, fam[i % 2], lambda0);
        t.add({std::to_string(i), num(s.nash2), num(s.nash3), num(s.homogeneity), num(s.beltrami), num(s.mikado)});
        worst.nash2 = std::max(worst.nash2, s.nash2);
        worst.nash3 = std::max(worst.nash3, s.nash3);
        worst.homogeneity = std::max(worst.homogeneity, s.homogeneity);
        worst.beltrami = std::max(worst.beltrami, s.beltrami);
        worst.mikado = std::max(worst.mikado, s.mikado);
    }
    t.write(c.path("decompositions.csv"));
    c.add("decompositions.csv");
    c.summary["worst"] = {{"nash_n2", worst.nash2}, {"nash_n3", worst.nash3}, {"homogeneity", worst.homogeneity},
                          {"beltrami", worst.beltrami}, {"mikado", worst.mikado}};
    c.summary["certified_radius"] = {{"nash_n2", d2.basis.r0}, {"nash_n3", d3.basis.r0}, {"beltrami", fam[0].basis.r0}};

    const json& fl = b["flows"];
    if (!fl["enabled"].get<bool>()) return;
    int M = fl["M"];
    auto dom = GridDomain::torus(3, M);
    IVec3 k{fl["beltrami_pair"][0].get<int>(), fl["beltrami_pair"][1].get<int>(), fl["beltrami_pair"][2].get<int>()};
    auto bf = beltrami_flow(single_pair_modes(k, 1.0), dom);
    Eigen::Vector3d kh(k[0], k[1], k[2]);
    kh.normalize();
    Eigen::Matrix3d expect = Eigen::Matrix3d::Identity() - kh * kh.transpose();
    c.summary["beltrami_pair"] = {{"stress_error", (bf.report.mean_stress - expect).norm()},
                                  {"divergence", bf.report.divergence},
                                  {"curl_residual", bf.report.curl_residual},
                                  {"stationarity", bf.report.stationarity}};
    Csv m;
    m.header = {"sample", "pipes", "radius", "divergence_spectral", "stationarity_spectral", "line_invariance", "overlap",
                "mean", "stress_error", "profile_mean", "profile_square", "min_gap"};
    json w = {{"divergence_spectral", 0.0}, {"stationarity_spectral", 0.0}, {"line_invariance", 0.0}, {"overlap", 0.0},
              {"mean", 0.0}, {"stress_error", 0.0}, {"profile_mean", 0.0}, {"profile_square", 0.0}, {"min_gap", 1e300}};
    int geometry_failures = 0;
    for (int i = 0; i < fl["mikado_samples"].get<int>(); ++i) {
        MikadoSample s;
        try {
            s = mikado_sample(c.seed, i, dom, lambda0);
        } catch (const GeometryError& e) {
            ++geometry_failures;
            m.add({std::to_string(i), "0", "nan", "nan", "nan", "nan", "nan", "nan", "nan", "nan", "nan", "nan"});
            continue;
        }
        const auto& r = s.r;
        double R0 = s.R.norm();
        double se = r.stress_error / R0;
        m.add({std::to_string(i), std::to_string(r.pipes.size()), num(r.pipes.empty() ? 0 : r.pipes[0].radius),
               num(r.divergence), num(r.stationarity), num(r.line_invariance), num(r.overlap), num(r.mean), num(se),
               num(r.profile_mean), num(r.profile_square), num(r.min_gap)});
        auto up = [&](const char* key, double v) { w[key] = std::max(w[key].get<double>(), v); };
        up("divergence_spectral", r.divergence);
        up("stationarity_spectral", r.stationarity);
        up("line_invariance", r.line_invariance);
        up("overlap", r.overlap);
        up("mean", r.mean);
        up("stress_error", se);
        up("profile_mean", r.profile_mean);
        up("profile_square", r.profile_square);
        w["min_gap"] = std::min(w["min_gap"].get<double>(), r.min_gap);
    }
    m.write(c.path("mikado.csv"));
    c.add("mikado.csv");
    c.summary["mikado"] = w;
    c.summary["mikado_geometry_failures"] = geometry_failures;
}

GridField weierstrass(int M, double theta, int J) {
    auto d = GridDomain::torus(1, M);
    auto g = GridField::scalar(d, Calculus::spectral);
    fill(g, [&](const double* x, double* o) {
        double s = 0;
        for (int j = 0; j <= J; ++j) s += std::pow(2.0, -j * theta) * std::cos(std::ldexp(1.0, j) * x[0]);
        o[0] = s;
    });
    return g;
}

void run_commutator(Context& c) {
    const json& b = c.block;
    Csv t;
    t.header = {"theta", "ell", "defect"};
    json fits = json::array();
    for (double th : b["thetas"]) {
        auto w = weierstrass(b["M"], th, b["J"]);
        std::vector<std::pair<double, double>> pts;
        for (int e : b["ell_exponents"]) {
            double ell = std::ldexp(1.0, -e);
            double v = commutator_defect(w, w, {ell, b["power"].get<int>()}, b["r"].get<int>());
            pts.push_back({ell, v});
            t.add({num(th), num(ell), num(v)});
        }
        auto f = scaling_fit(pts);
        fits.push_back({{"theta", th}, {"slope", f.slope}, {"expected", 2 * th}, {"residual", f.residual}});
    }
    t.write(c.path("commutator.csv"));
    c.add("commutator.csv");
    c.summary["fits"] = fits;
}

Curve parameter_circle(int samples) {
    Curve cv;
    cv.closed = true;
    cv.period = two_pi;
    cv.winding = {two_pi};
    for (int i = 0; i < samples; ++i) {
        cv.t.push_back(two_pi * i / samples);
        cv.x.push_back({two_pi * i / samples});
    }
    return cv;
}

int mesh_stride(const GridDomain& d, int max_vertices) {
    int s = 1;
    while (true) {
        std::size_t pts = 1;
        bool ok = true;
        for (int a = 0; a < d.dim; ++a) {
            if (d.res[a] % s) ok = false;
            pts *= static_cast<std::size_t>(d.res[a] / s);
        }
        if (!ok) return s / 2;
        if (pts <= static_cast<std::size_t>(max_vertices)) return s;
        s *= 2;
    }
}

void export_stage_mesh(Context& c, const GridField& u, int q) {
    int stride = mesh_stride(u.domain(), c.block["mesh_max_vertices"]);
    std::string name = "stage_" + std::to_string(q) + ".obj";
    try {
        std::string note = write_obj(stride_field(u, stride), c.path(name));
        c.add(name);
        json n = {{"file", name}, {"stride", stride}};
        if (!note.empty()) n["projection"] = note;
        c.notes.push_back(n);
    } catch (const MeshError& e) {
        c.notes.push_back({{"file", name}, {"skipped", e.what()}});
    }
}

void run_isometric(Context& c) {
    const json& b = c.block;
    std::string preset = b["preset"];
    int M = b["M"], Q = b["Q"];
    if (b["mode"] == "spiral-law") {
        // flat square into R^4, a = 1, xi = e1
        auto P = flat_square_preset(M, 1.0, 0.1, 1);
        auto a = GridField::scalar(P.u0.u.domain(), P.u0.u.mode());
        for (auto& x : a.values()) x = 1;
        Eigen::VectorXd xi = Eigen::VectorXd::Unit(2, 0);
        Csv t;
        t.header = {"lambda", "deviation", "lambda_times_deviation"};
        std::vector<std::pair<double, double>> pts;
        for (double l : b["spiral_lambdas"]) {
            auto v = spiral_step(P.u0, a, xi, l);
            double dev = step_deviation(P.u0, v, a, xi);
            pts.push_back({l, dev});
            t.add({num(l), num(dev), num(l * dev)});
        }
        t.write(c.path("spiral_law.csv"));
        c.add("spiral_law.csv");
        json pj = json::array();
        for (auto& p : pts) pj.push_back({{"lambda", p.first}, {"deviation", p.second}});
        c.summary["points"] = pj;
        try {
            auto f = scaling_fit(pts);
            c.summary["slope"] = f.slope;
        } catch (const std::exception& e) {
            c.summary["slope"] = nullptr;
            c.summary["slope_note"] = e.what();
        }
        return;
    }
    auto P = make_preset(preset, M, Q);
    IterateOptions o;
    o.policy.growth = b["growth"];
    o.policy.predictive = b["predictive"];
    o.max_points = b["max_points"].get<std::size_t>();
    o.keep_history = b["export_meshes"].get<bool>();
    auto r = iterate(P.u0, P.g, P.schedule, P.dirs, o);
    Csv t;
    t.header = {"stage", "grid_points", "steps", "lambda_first", "lambda_last", "input_error", "error", "tolerance",
                "delta", "c0_displacement", "c1_displacement", "c1_constant", "short_margin"};
    json stages = json::array();
    double disp = 0, budget = 0;
    for (int q = 0; q < r.stages_done; ++q) {
        const auto& s = r.reports[q];
        disp += s.c0_displacement;
        budget += P.schedule.delta(q + 1);
        t.add({std::to_string(q), std::to_string(r.grid_points[q + 1]), std::to_string(s.lambdas.size()),
               num(s.lambdas.front()), num(s.lambdas.back()), num(s.input_error), num(s.error), num(s.tolerance),
               num(P.schedule.delta(q + 1)), num(s.c0_displacement), num(s.c1_displacement), num(s.c1_constant),
               num(r.short_margins[q + 1])});
        stages.push_back({{"stage", q}, {"error", s.error}, {"tolerance", s.tolerance}, {"delta", P.schedule.delta(q + 1)},
                          {"delta_next", P.schedule.delta(q + 2)}, {"c0_displacement", s.c0_displacement},
                          {"c1_displacement", s.c1_displacement}, {"input_error", s.input_error},
                          {"lambda_last", s.lambdas.back()}, {"grid_points", r.grid_points[q + 1]}});
    }
    t.write(c.path("stages.csv"));
    c.add("stages.csv");
    c.summary["preset"] = preset;
    c.summary["c0"] = P.schedule.c0;
    c.summary["stages"] = stages;
    c.summary["stages_done"] = r.stages_done;
    c.summary["completed"] = r.completed;
    c.summary["stop_reason"] = r.stop_reason;
    c.summary["displacement"] = disp;
    c.summary["displacement_budget"] = budget;
    if (P.u0.n() == 1) {
        auto cv = parameter_circle(4096);
        c.summary["image_length"] = image_length(r.final_state, cv);
        c.summary["target_length"] = two_pi;
    }
    if (o.keep_history)
        for (std::size_t q = 0; q < r.history.size(); ++q) export_stage_mesh(c, r.history[q], static_cast<int>(q));
    if (r.final_state.u.points() <= b["field_max_points"].get<std::size_t>()) {
        write_ciwf(r.final_state.u, c.path("final_map.ciwf"));
        c.add("final_map.ciwf");
    } else {
        c.notes.push_back({{"file", "final_map.ciwf"}, {"skipped", "grid larger than field_max_points"}});
    }
    if (disp > budget) throw RunInvariantError("C0 displacement budget", num(disp) + " > " + num(budget));
    if (!r.completed) throw ResolutionError(r.stop_reason);
}

EulerIterate background(const json& b) {
    if (b["background"] == "abc") return abc_iterate(b["M"], b["amp"], b["rho"]);
    return seed_iterate(b["M"], b["rho"]);
}

EulerStepOptions step_options(const json& b) {
    EulerStepOptions o;
    o.T = b["T"];
    for (double t : b["times"]) o.times.push_back(t);
    o.transport = b["terms"]["transport"];
    o.oscillation = b["terms"]["oscillation"];
    o.nash = b["terms"]["nash"];
    o.max_working_grid = b["max_working_grid"];
    o.flow_grid = b["flow_grid"];
    return o;
}

double step_mu(const json& b) {
    double mu = b["mu"];
    return mu > 0 ? mu : 1.0 / b["T"].get<double>();
}

void run_euler(Context& c) {
    const json& b = c.block;
    auto fam = beltrami_families();
    double r0 = std::min(fam[0].basis.r0, fam[1].basis.r0);
    std::string mode = b["mode"];
    if (mode == "operators") {
        auto d = GridDomain::torus(3, b["M"]);
        Csv t;
        t.header = {"sample", "div_inverse_residual", "trace", "asymmetry", "leray_idempotence", "leray_divergence",
                    "leray_orthogonality"};
        double w_div = 0, w_tr = 0, w_id = 0, w_ld = 0, w_or = 0;
        for (int i = 0; i < b["operator_samples"].get<int>(); ++i) {
            SplitMix64 rng(c.seed * 104729ULL + static_cast<std::uint64_t>(i));
            auto f = field_sample(d, rng);
            auto R = div_inverse(f, 1e-10);
            double res = sup_vec(divergence(R) - f) / std::max(1.0, sup_abs(f));
            double tr = 0;
            for (std::size_t p = 0; p < R.points(); ++p) tr = std::max(tr, std::fabs(R.t(0, 0, p) + R.t(1, 1, p) + R.t(2, 2, p)));
            auto P = leray_project(f);
            double idem = sup_vec(leray_project(P) - P) / std::max(1.0, sup_abs(f));
            double ld = sup_abs(divergence(P)) / std::max(1.0, sup_abs(f));
            double ip = 0, nn = 0;
            for (std::size_t q = 0; q < f.values().size(); ++q) {
                ip += P.values()[q] * (f.values()[q] - P.values()[q]);
                nn += f.values()[q] * f.values()[q];
            }
            double orth = std::fabs(ip) / nn;
            // stored symmetrically, so the asymmetry is zero by construction
            t.add({std::to_string(i), num(res), num(tr), "0", num(idem), num(ld), num(orth)});
            w_div = std::max(w_div, res);
            w_tr = std::max(w_tr, tr);
            w_id = std::max(w_id, idem);
            w_ld = std::max(w_ld, ld);
            w_or = std::max(w_or, orth);
        }
        // homogeneity: one mode at k and 2k
        auto mode_field = [&](int n) {
            auto f = GridField::vector(d, 3, Calculus::spectral);
            fill(f, [&](const double* x, double* o) {
                double ph = n * (x[0] + 2 * x[1] - x[2]);
                o[0] = std::cos(ph);
                o[1] = 0.5 * std::sin(ph);
                o[2] = -0.3 * std::cos(ph);
            });
            return f;
        };
        double ratio = rms(div_inverse(mode_field(2))) / rms(div_inverse(mode_field(1)));
        t.write(c.path("operators.csv"));
        c.add("operators.csv");
        c.summary["worst"] = {{"div_inverse_residual", w_div}, {"trace", w_tr}, {"leray_idempotence", w_id},
                              {"leray_divergence", w_ld}, {"leray_orthogonality", w_or}};
        c.summary["homogeneity_ratio"] = ratio;
        return;
    }
    auto it = background(b);
    auto opt = step_options(b);
    if (mode == "step") {
        auto r = euler_step(it, b["lambda"], step_mu(b), fam, opt);
        c.summary["breakdown"] = r.report.to_json();
        auto inv = check_invariants(r.next, r0, 1e-10, 1e300);
        c.summary["invariants"] = {{"divergence", inv.divergence}, {"trace", inv.trace}, {"cone", inv.cone},
                                   {"rho_min", inv.rho_min}, {"pass", inv.pass}, {"failed", inv.failed}};
        c.summary["stress_before"] = r.report.stress_before;
        c.summary["reduction"] = r.report.stress_before / std::max(1e-300, r.report.stress_after);
        Csv e;
        e.header = {"t", "rho_next", "stress_next", "energy_increment", "energy_predicted"};
        VelocityHistory vh = it.velocity();
        for (const auto& s : r.next.slices) {
            double rs = 0;
            for (std::size_t p = 0; p < s.R.points(); ++p) {
                double q = 0;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) q += s.R.t(i, j, p) * s.R.t(i, j, p);
                rs = std::max(rs, std::sqrt(q));
            }
            GridField v0 = spectral_resample(vh.at(s.t), s.v.domain().res);
            double inc = 2 * (kinetic_energy(s.v) - kinetic_energy(v0));
            e.add({num(s.t), num(s.rho), num(rs), num(inc), num(3 * std::pow(two_pi, 3) * it.slices.front().rho)});
        }
        e.write(c.path("energy.csv"));
        c.add("energy.csv");
        write_json(r.report.to_json(), c.path("breakdown.json"));
        c.add("breakdown.json");
        if (b["export_fields"].get<bool>()) {
            const auto& mid = r.next.slices[r.next.slices.size() / 2];
            write_ciwf(mid.v, c.path("velocity_next.ciwf"));
            write_ciwf(mid.R, c.path("stress_next.ciwf"));
            c.add("velocity_next.ciwf");
            c.add("stress_next.ciwf");
        }
        if (!inv.pass) throw RunInvariantError(inv.failed, "after the Euler step");
        return;
    }
    opt.keep_fields = false;
    Csv t;
    t.header = {"lambda", "mu", "status", "stress_after", "transport", "oscillation", "nash", "working_grid", "deformation",
                "energy_ratio"};
    json pts = json::array();
    auto one = [&](double lambda, double mu) {
        try {
            auto r = euler_step(it, lambda, mu, fam, opt);
            const auto& rp = r.report;
            auto term = [&](const char* n) {
                for (const auto& x : rp.terms)
                    if (x.name == n) return num(x.measured);
                return std::string("nan");
            };
            double er = rp.energy_predicted > 0 ? rp.energy_increment / rp.energy_predicted : std::nan("");
            t.add({num(lambda), num(mu), "ok", num(rp.stress_after), term("transport"), term("oscillation"), term("nash"),
                   std::to_string(rp.working_grid), num(rp.deformation), num(er)});
            json j = {{"lambda", lambda}, {"mu", mu}, {"status", "ok"}, {"stress_after", rp.stress_after},
                      {"mu_optimal", rp.mu_optimal}, {"grad_v", rp.grad_v}, {"delta_next", rp.delta_next},
                      {"energy_ratio", er}};
            for (const auto& x : rp.terms) j[x.name] = x.measured;
            pts.push_back(j);
            if (!rp.invariants_pass) throw RunInvariantError(rp.invariant_failed, "after the Euler step");
        } catch (const CflError& e) {
            t.add({num(lambda), num(mu), "cfl", "nan", "nan", "nan", "nan", "0", num(e.value), "nan"});
            pts.push_back({{"lambda", lambda}, {"mu", mu}, {"status", "cfl"}});
        }
    };
    if (mode == "mu-sweep") {
        for (double mu : b["mu_values"]) one(b["lambda"], mu);
        double best = std::nan(""), bestv = 1e300, opt_mu = std::nan("");
        for (const auto& p : pts)
            if (p["status"] == "ok") {
                opt_mu = p["mu_optimal"];
                if (p["stress_after"].get<double>() < bestv) {
                    bestv = p["stress_after"];
                    best = p["mu"];
                }
            }
        c.summary["measured_optimum"] = best;
        c.summary["predicted_optimum"] = opt_mu;
        std::vector<std::pair<double, double>> tr;
        for (const auto& p : pts)
            if (p["status"] == "ok" && p.contains("transport")) tr.push_back({p["mu"], p["transport"]});
        if (tr.size() >= 2) c.summary["transport_slope"] = scaling_fit(tr).slope;
    } else {
        double mu = step_mu(b);
        for (double l : b["lambda_values"]) one(l, mu);
        std::vector<std::pair<double, double>> nash;
        for (const auto& p : pts)
            if (p["status"] == "ok" && p.contains("nash")) nash.push_back({p["lambda"], p["nash"]});
        if (nash.size() >= 2) c.summary["nash_slope"] = scaling_fit(nash).slope;
    }
    c.summary["points"] = pts;
    t.write(c.path("sweep.csv"));
    c.add("sweep.csv");
}

json file_entry(const std::string& dir, const std::string& name) {
    std::string data = slurp((fs::path(dir) / name).string());
    json e = {{"path", name}, {"bytes", data.size()}, {"sha256", sha256_bytes(data)}};
    if (ends_with(name, ".csv")) e["line_sha256"] = line_hashes(data);
    return e;
}

}  // namespace

std::string sha256_file(const std::string& path) { return sha256_bytes(slurp(path)); }

std::string export_mesh(const ImmersionState& u, const std::string& path) { return write_obj(u.u, path); }

json resolve_config(const json& raw) {
    if (!raw.is_object()) throw ConfigError("/", "config must be a JSON object");
    if (!raw.contains("experiment")) throw ConfigError("/experiment", "missing key");
    if (!raw["experiment"].is_string()) throw ConfigError("/experiment", "expected string");
    std::string e = raw["experiment"];
    if (std::find(experiments.begin(), experiments.end(), e) == experiments.end())
        throw ConfigError("/experiment", "unknown experiment '" + e + "'");
    json def = {{"experiment", e}, {"seed", 1}, {"output", ""}, {e, default_block(e)}};
    json out = merge(def, raw, "");
    if (!out["seed"].is_number_unsigned() && !(out["seed"].is_number_integer() && out["seed"].get<std::int64_t>() >= 0))
        throw ConfigError("/seed", "expected a nonnegative integer");
    check_ranges(out);
    return out;
}

RunResult run(const json& config, const std::string& out_dir, std::optional<std::uint64_t> seed) {
    RunResult res;
    json cfg;
    try {
        cfg = resolve_config(config);
    } catch (const ConfigError& e) {
        res.exit_code = exit_config;
        res.message = e.what();
        return res;
    }
    if (seed) cfg["seed"] = *seed;
    Context c;
    c.cfg = cfg;
    c.seed = cfg["seed"].get<std::uint64_t>();
    std::string e = cfg["experiment"];
    c.block = cfg[e];
    c.dir = out_dir;
    fs::create_directories(out_dir);
    try {
        if (e == "exponents") run_exponents(c);
        else if (e == "decompose") run_decompose(c);
        else if (e == "verify-commutator") run_commutator(c);
        else if (e == "isometric") run_isometric(c);
        else run_euler(c);
        res.message = "ok";
    } catch (const RunInvariantError& x) {
        res.exit_code = exit_invariant;
        res.message = "invariant failed: " + x.invariant + " (" + x.what() + ")";
    } catch (const InvariantError& x) {
        res.exit_code = exit_invariant;
        res.message = std::string("invariant failed: ") + x.what();
    } catch (const ConeError& x) {
        res.exit_code = exit_invariant;
        res.message = std::string("invariant failed: cone (") + x.what() + ")";
    } catch (const ResolutionError& x) {
        res.exit_code = exit_budget;
        res.message = std::string("resolution budget: ") + x.what();
    } catch (const CflError& x) {
        res.exit_code = exit_budget;
        res.message = std::string("CFL budget: ") + x.what();
    } catch (const GeometryError& x) {
        res.exit_code = exit_invariant;
        res.message = std::string("invariant failed: pipe geometry (") + x.what() + ")";
    } catch (const SemidefiniteError& x) {
        res.exit_code = exit_invariant;
        res.message = std::string("invariant failed: semidefinite stress (") + x.what() + ")";
    } catch (const EnergyError& x) {
        res.exit_code = exit_invariant;
        res.message = std::string("invariant failed: energy gap (") + x.what() + ")";
    }
    c.summary["experiment"] = e;
    c.summary["exit_code"] = res.exit_code;
    c.summary["message"] = res.message;
    write_json(c.summary, c.path("summary.json"));
    c.add("summary.json");
    json manifest = {{"code_version", code_version}, {"experiment", e}, {"config", cfg}, {"seed", c.seed},
                     {"threads", 1}, {"notes", c.notes}, {"exit_code", res.exit_code}, {"message", res.message}};
    json files = json::array();
    for (const auto& f : c.files) files.push_back(file_entry(out_dir, f));
    manifest["files"] = files;
    write_json(manifest, c.path("manifest.json"));
    res.summary = c.summary;
    res.files = c.files;
    res.files.push_back("manifest.json");
    return res;
}

VerifyReport verify(const std::string& manifest_path) {
    VerifyReport rep;
    json m;
    try {
        m = json::parse(slurp(manifest_path));
    } catch (const std::exception& e) {
        rep.complete = false;
        rep.checks.push_back({"manifest readable", false, e.what()});
        return rep;
    }
    fs::path dir = fs::path(manifest_path).parent_path();
    bool all = true;
    std::map<std::string, bool> intact;
    for (const auto& f : m["files"]) {
        std::string name = f["path"];
        fs::path p = dir / name;
        if (!fs::exists(p)) {
            rep.complete = false;
            all = false;
            rep.checks.push_back({"artifact " + name, false, "missing (incomplete run)"});
            intact[name] = false;
            continue;
        }
        std::string data = slurp(p.string());
        bool ok = sha256_bytes(data) == f["sha256"].get<std::string>();
        std::string detail = ok ? "checksum ok" : "checksum mismatch";
        if (!ok && f.contains("line_sha256")) {
            auto now = line_hashes(data);
            const auto& was = f["line_sha256"];
            std::size_t offset = 0, start = 0;
            std::size_t i = 0;
            for (; i < now.size() && i < was.size(); ++i) {
                if (now[i] != was[i].get<std::string>()) break;
                std::size_t end = data.find('\n', start);
                start = end == std::string::npos ? data.size() : end + 1;
            }
            offset = start;
            detail = "checksum mismatch at byte offset " + std::to_string(offset) + " (line " + std::to_string(i + 1) + ")";
        }
        intact[name] = ok;
        all = all && ok;
        rep.checks.push_back({"artifact " + name, ok, detail});
    }
    // replay of invariants from the stored artifacts
    std::string e = m.value("experiment", "");
    const json& cfg = m["config"];
    auto readable = [&](const std::string& n) { return intact.count(n) && fs::exists(dir / n); };
    try {
        if (e == "exponents" && readable("exponents.csv")) {
            auto rows = read_csv((dir / "exponents.csv").string());
            bool ok = true;
            for (std::size_t i = 1; i < rows.size(); ++i) {
                const auto& r = rows[i];
                if (r.size() < 8) {
                    ok = false;
                    break;
                }
                std::string th;
                try {
                    th = exponent_solve(Rational::parse(r[1]), Rational::parse(r[2]), Rational::parse(r[3]),
                                        Rational::parse(r[4]), Rational::parse(r[5])).str();
                } catch (const std::exception&) {
                    th = "error";
                }
                ok = ok && th == r[6];
            }
            rep.checks.push_back({"exponents recomputed", ok, ok ? "every row matches" : "a stored exponent differs"});
        } else if (e == "decompose" && readable("decompositions.csv")) {
            auto rows = read_csv((dir / "decompositions.csv").string());
            const json& b = cfg["decompose"];
            auto d2 = primitive_directions(2), d3 = primitive_directions(3);
            auto fam = beltrami_families();
            bool ok = rows.size() > 1;
            for (std::size_t i = 1; i < rows.size() && i <= 10; ++i) {
                int s = static_cast<int>(i - 1);
                auto x = decompose_sample(m["seed"].get<std::uint64_t>(), s, b, d2, d3, fam[s % 2], b["mikado_lambda0"]);
                ok = ok && rows[i].size() >= 6 && rows[i][1] == num(x.nash2) && rows[i][2] == num(x.nash3) &&
                     rows[i][4] == num(x.beltrami) && rows[i][5] == num(x.mikado);
            }
            double worst = 0;
            for (std::size_t i = 1; i < rows.size(); ++i)
                for (int k : {1, 2, 4}) worst = std::max(worst, std::stod(rows[i][k]));
            rep.checks.push_back({"decompositions replayed", ok, "first samples recomputed from the seed"});
            rep.checks.push_back({"decomposition residuals", worst <= 1e-12, "worst " + num(worst)});
        } else if (e == "verify-commutator" && readable("commutator.csv")) {
            auto rows = read_csv((dir / "commutator.csv").string());
            auto sum = json::parse(slurp((dir / "summary.json").string()));
            std::map<std::string, std::vector<std::pair<double, double>>> by;
            for (std::size_t i = 1; i < rows.size(); ++i) by[rows[i][0]].push_back({std::stod(rows[i][1]), std::stod(rows[i][2])});
            bool ok = true;
            std::size_t k = 0;
            for (auto& [th, pts] : by) {
                (void)th;
                double s = scaling_fit(pts).slope;
                bool found = false;
                for (const auto& f : sum["fits"])
                    if (std::fabs(f["slope"].get<double>() - s) <= 1e-12) found = true;
                ok = ok && found;
                ++k;
            }
            rep.checks.push_back({"commutator fits recomputed", ok && k > 0, std::to_string(k) + " fits"});
        } else if (e == "isometric" && readable("final_map.ciwf")) {
            const json& b = cfg["isometric"];
            auto u = read_ciwf((dir / "final_map.ciwf").string());
            auto sum = json::parse(slurp((dir / "summary.json").string()));
            int done = sum["stages_done"];
            if (done > 0) {
                auto P = make_preset(b["preset"], u.domain().res[0], b["Q"]);
                auto s = ImmersionState::from(u, 1e-13);
                auto err = metric_error(shifted_metric(P.g, P.schedule.delta(done)), s);
                double worst = 0;
                for (std::size_t p = 0; p < err.points(); ++p) worst = std::max(worst, hs_norm(tensor_at(err, p)));
                double tol = P.schedule.c0 * P.schedule.delta(done + 1);
                rep.checks.push_back({"final metric error", worst <= tol, num(worst) + " against " + num(tol)});
                auto sh = shortness(P.g, s);
                rep.checks.push_back({"final map short", sh.margin > 0, "margin " + num(sh.margin)});
            }
        } else if (e == "euler-step" && readable("summary.json")) {
            auto sum = json::parse(slurp((dir / "summary.json").string()));
            if (readable("velocity_next.ciwf")) {
                auto v = read_ciwf((dir / "velocity_next.ciwf").string());
                double dv = sup_abs(divergence(v));
                rep.checks.push_back({"stored velocity divergence-free", dv <= 1e-10, num(dv)});
            }
            if (readable("stress_next.ciwf")) {
                auto R = read_ciwf((dir / "stress_next.ciwf").string());
                double tr = 0;
                for (std::size_t p = 0; p < R.points(); ++p) tr = std::max(tr, std::fabs(R.t(0, 0, p) + R.t(1, 1, p) + R.t(2, 2, p)));
                rep.checks.push_back({"stored stress traceless", tr <= 1e-12, num(tr)});
            }
            if (sum.contains("invariants"))
                rep.checks.push_back({"recorded invariants", sum["invariants"]["pass"].get<bool>(),
                                      sum["invariants"]["pass"].get<bool>() ? std::string("all hold")
                                                                            : sum["invariants"]["failed"].get<std::string>()});
            if (readable("energy.csv")) {
                auto rows = read_csv((dir / "energy.csv").string());
                double worst = 0;
                for (std::size_t i = 1; i < rows.size(); ++i) {
                    double s = std::stod(rows[i][2]), rho = std::stod(rows[i][1]);
                    if (rho > 0) worst = std::max(worst, s / rho);
                }
                auto fam = beltrami_families();
                double r0 = std::min(fam[0].basis.r0, fam[1].basis.r0);
                rep.checks.push_back({"stored stress in the cone", worst <= r0, num(worst) + " against " + num(r0)});
            }
        }
    } catch (const std::exception& x) {
        rep.checks.push_back({"replay", false, x.what()});
    }
    bool pass = all && rep.complete;
    for (const auto& ch : rep.checks) pass = pass && ch.pass;
    rep.pass = pass;
    return rep;
}

}  // namespace ciw
