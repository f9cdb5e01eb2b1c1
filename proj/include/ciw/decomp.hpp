#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ciw {

struct ConeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DecompositionError : std::runtime_error {
    int index = -1;
    DecompositionError(const std::string& m, int i) : std::runtime_error(m), index(i) {}
};
struct ConfigurationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using IVec3 = std::array<int, 3>;

// entries (i <= j) of a symmetric matrix, row by row
Eigen::VectorXd sym_vec(const Eigen::MatrixXd& A);
Eigen::MatrixXd sym_mat(const Eigen::VectorXd& v, int n);

// A = sum_k c_k M_k for a fixed basis {M_k} of Sym(n) with Id interior to the
// positive cone; shared by the metric directions and the Beltrami families
struct RankOneBasis {
    int n = 0;
    std::vector<Eigen::MatrixXd> mats;
    Eigen::MatrixXd system;   // columns sym_vec(M_k)
    Eigen::MatrixXd inverse;  // fixed inverse, applied as a plain product
    Eigen::VectorXd id_coeffs;
    double determinant = 0;
    double r0 = 0;  // certified radius (half of the sampled boundary radius)

    void build();
    Eigen::VectorXd coefficients(const Eigen::MatrixXd& A) const { return inverse * sym_vec(A); }
    Eigen::MatrixXd reconstruct(const Eigen::VectorXd& c) const;
};

struct DirectionSet {
    std::string name;
    std::vector<Eigen::VectorXd> xi;
    RankOneBasis basis;
    int n() const { return basis.n; }
    int size() const { return static_cast<int>(xi.size()); }
};

DirectionSet make_direction_set(std::string name, std::vector<Eigen::VectorXd> xi);
// n = 1: {1}; n = 2: three unit vectors at 120 degrees; n = 3: the six
// icosahedral axes. Each set is certified (r0) on construction.
DirectionSet primitive_directions(int n);
// direction sets whose vectors are multiples of integer vectors, needed for
// spirals on periodic charts: n = 1: {1}; n = 2: {(1,0), (1,2)/sqrt5, (-1,2)/sqrt5}
DirectionSet lattice_directions(int n);

// largest r (bisection to 1e-6 over [0, 2]) such that every sampled boundary
// matrix Id + r B (B traceless, |B| = 1) has positive coefficients; returns
// half of it and stores it in the basis
double certify_cone_radius(RankOneBasis& b, int samples = 10000, std::uint64_t seed = 7);
double certify_cone_radius(DirectionSet& d, int samples = 10000, std::uint64_t seed = 7);

// mu_k >= 0 with A = sum mu_k^2 xi_k xi_k^T
std::vector<double> local_decompose(const Eigen::MatrixXd& A, const DirectionSet& dirs);
std::vector<double> local_decompose_squares(const Eigen::MatrixXd& A, const DirectionSet& dirs,
                                            bool check_cone = true);

// c0: 0.9 of the largest c with delta Id + E in C_{r0} whenever |E| <= c delta
double stage_error_factor(const DirectionSet& dirs);

struct BeltramiFamily {
    int shell = 0;  // |k|^2
    double lambda0 = 0;
    std::vector<IVec3> pairs;  // one representative per antipodal pair
    RankOneBasis basis;        // M_k = Id - k^ k^ per pair
    // all wavevectors of the family, k and -k, with their amplitude vectors
    std::vector<IVec3> wavevectors() const;
    std::vector<Eigen::Vector3cd> amplitude_vectors() const;
};

// unit B_k with k.B_k = 0 and i k x B_k = |k| B_k; canonical k (first nonzero
// entry positive) get a fixed gauge, the others B_{-k} = -conj(B_k)
Eigen::Vector3cd beltrami_vector(const IVec3& k);

// canonical integer vectors with |k|^2 = shell and first nonzero entry positive
std::vector<IVec3> shell_pairs(int shell);
// quality of a 6-pair family: min Id coefficient / |A^-1|_2, or -1 if invalid
double family_quality(const std::vector<IVec3>& pairs);
// two disjoint families on the smallest shell that admits them
std::array<BeltramiFamily, 2> beltrami_families();
BeltramiFamily make_beltrami_family(int shell, std::vector<IVec3> pairs);

// gamma per pair: R = sum_pairs gamma^2 (Id - k^ k^) = 1/2 sum_{k in family} gamma_k^2 (...)
std::vector<double> beltrami_coefficients(const Eigen::Matrix3d& R, const BeltramiFamily& f);
// amplitudes a per pair with 1/2 sum_k |a_k|^2 (Id - k^ k^) = R for R in the cone
std::vector<double> beltrami_amplitudes(const Eigen::Matrix3d& R, const BeltramiFamily& f);

struct MikadoCoefficients {
    std::vector<IVec3> directions;  // candidate integer directions
    std::vector<double> c;          // Gamma_k^2 with R = sum c_k k k^T
    std::vector<double> gamma;      // sqrt(c_k / scale), in [0, 1]
    double scale = 1;               // upper eigenvalue bound of the compact set
    double residual = 0;            // |sum c_k k k^T - R|_HS
};

// primitive integer k (gcd 1, first nonzero entry positive) with |k| <= lambda0,
// ordered by |k|^2 then lexicographically
std::vector<IVec3> mikado_candidates(int lambda0);
MikadoCoefficients mikado_coefficients(const Eigen::Matrix3d& R, int lambda0, double eig_min = 0.5,
                                       double eig_max = 2.0);

// Lawson-Hanson active set; returns x >= 0 minimizing |Ax - b|
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);
// x >= 0 of least Euclidean norm with Ax = b (semismooth Newton on the dual)
Eigen::VectorXd nonneg_least_norm(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

nlohmann::json certificate(const DirectionSet& d);
nlohmann::json certificate(const BeltramiFamily& f);

}  // namespace ciw
