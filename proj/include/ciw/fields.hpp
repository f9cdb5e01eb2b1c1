#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ciw {

struct ModeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ResolutionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Calculus { spectral, finite_difference };
enum class Rank { scalar, vector, sym_tensor };

// number of packed entries of a symmetric n x n tensor
inline int sym_size(int n) { return n * (n + 1) / 2; }
// packed index of entry (i,j), upper triangle row by row
int sym_index(int n, int i, int j);

struct GridDomain {
    int dim = 1;
    std::vector<double> extent;
    std::vector<double> origin;
    std::vector<int> res;
    std::vector<bool> periodic;

    // [0, 2*pi*m)^n with m = 1, all axes periodic
    static GridDomain torus(int dim, int m, double period = 6.283185307179586);
    static GridDomain torus(std::vector<int> res);
    // closed box [lo, hi] per axis (samples include both ends)
    static GridDomain box(std::vector<double> lo, std::vector<double> hi,
                          std::vector<int> res);

    void validate() const;
    std::size_t size() const;
    double spacing(int axis) const;
    double coord(int axis, int i) const;
    int max_frequency(int axis) const { return res[axis] / 2; }
    bool all_periodic() const;
    // C order: axis 0 slowest
    std::size_t stride(int axis) const;
    std::vector<int> unravel(std::size_t idx) const;
    bool operator==(const GridDomain& o) const;
};

class GridField {
  public:
    GridField() = default;
    GridField(GridDomain dom, Rank rank, int ncomp, Calculus mode);

    static GridField scalar(const GridDomain& dom, Calculus mode);
    static GridField vector(const GridDomain& dom, int N, Calculus mode);
    static GridField sym_tensor(const GridDomain& dom, int n, Calculus mode);
    static Calculus default_mode(const GridDomain& dom);

    const GridDomain& domain() const { return dom_; }
    Rank rank() const { return rank_; }
    // number of stored components (N for vectors, n(n+1)/2 for tensors)
    int components() const { return ncomp_; }
    // n for tensors, N for vectors, 1 for scalars
    int tensor_dim() const { return tdim_; }
    Calculus mode() const { return mode_; }
    std::size_t points() const { return npts_; }

    double* comp(int c) { return v_.data() + c * npts_; }
    const double* comp(int c) const { return v_.data() + c * npts_; }
    double& at(int c, std::size_t p) { return v_[c * npts_ + p]; }
    double at(int c, std::size_t p) const { return v_[c * npts_ + p]; }
    // symmetric tensor access
    double t(int i, int j, std::size_t p) const;
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    // pointwise norm: Euclidean for vectors, Hilbert-Schmidt for tensors
    double point_norm(std::size_t p) const;
    GridField with_mode(Calculus m) const;

  private:
    GridDomain dom_;
    Rank rank_ = Rank::scalar;
    int ncomp_ = 1;
    int tdim_ = 1;
    Calculus mode_ = Calculus::finite_difference;
    std::size_t npts_ = 0;
    std::vector<double> v_;
};

GridField operator+(const GridField& a, const GridField& b);
GridField operator-(const GridField& a, const GridField& b);
GridField operator*(double s, const GridField& a);

// samples f(x) at every node; f receives coordinates and writes ncomp values
template <class F>
void fill(GridField& g, F&& f) {
    const auto& d = g.domain();
    std::vector<double> x(d.dim);
    std::vector<double> out(g.components());
    for (std::size_t p = 0; p < g.points(); ++p) {
        auto idx = d.unravel(p);
        for (int a = 0; a < d.dim; ++a) x[a] = d.coord(a, idx[a]);
        f(x.data(), out.data());
        for (int c = 0; c < g.components(); ++c) g.at(c, p) = out[c];
    }
}

GridField differentiate(const GridField& f, int axis);
// derivative of every component along every axis: result has ncomp*dim
// components, component c*dim + axis
GridField gradient(const GridField& f);

// spectral gradient on a periodic grid that first drops modes below rel times
// the largest mode (same layout as gradient)
GridField filtered_gradient(const GridField& f, double rel);

enum class NormKind { sup, c1_seminorm };
double norm(const GridField& f, NormKind kind);
double holder_seminorm(const GridField& f, double theta);

struct MollifierKernel {
    double ell = 0.1;
    int power = 4;  // profile (1 - s^2)^power on [-1, 1]
    // one-dimensional discrete weights at offsets -r..r for spacing h
    std::vector<double> weights(double h) const;
    // discrete Fourier factor of the normalized weights at angular frequency k
    double transform(double h, double k) const;
};

GridField mollify(const GridField& f, const MollifierKernel& k);
double commutator_defect(const GridField& f, const GridField& g,
                         const MollifierKernel& k, int r);

struct ScalingFit {
    double slope = 0;
    double intercept = 0;
    double residual = 0;
};
ScalingFit scaling_fit(const std::vector<std::pair<double, double>>& pairs);

// binary container and CSV export
void write_ciwf(const GridField& f, const std::string& path);
GridField read_ciwf(const std::string& path);
void write_csv(const GridField& f, const std::string& path);

// zeroes every Fourier mode whose magnitude is below rel times the largest
// mode of the field (all components share the threshold); periodic grids only.
// Keeps roundoff at unused high modes from being amplified by repeated
// spectral differentiation. Returns the number of modes removed.
std::size_t krasny_filter(GridField& f, double rel = 1e-13);

// band-limited resampling of a periodic field onto a finer (or equal) grid
GridField spectral_resample(const GridField& f, const std::vector<int>& res);

}  // namespace ciw
