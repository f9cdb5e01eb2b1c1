#include "ciw/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace ciw {

namespace {

std::mutex planner_mutex;

struct LinePlans {
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    std::size_t nreal = 0, nspec = 0;
};

// plans are cached per (dims, axis); they are executed with the new-array
// interface on fftw_malloc'd buffers so alignment always matches
std::map<std::pair<std::vector<int>, int>, LinePlans>& line_cache() {
    static std::map<std::pair<std::vector<int>, int>, LinePlans> c;
    return c;
}

LinePlans make_line_plans(const std::vector<int>& dims, int axis) {
    int rank = static_cast<int>(dims.size());
    std::vector<int> odims = dims;
    odims[axis] = dims[axis] / 2 + 1;
    std::vector<std::ptrdiff_t> istr(rank), ostr(rank);
    std::ptrdiff_t si = 1, so = 1;
    for (int a = rank - 1; a >= 0; --a) {
        istr[a] = si;
        ostr[a] = so;
        si *= dims[a];
        so *= odims[a];
    }
    LinePlans lp;
    lp.nreal = static_cast<std::size_t>(si);
    lp.nspec = static_cast<std::size_t>(so);

    fftw_iodim d{dims[axis], static_cast<int>(istr[axis]), static_cast<int>(ostr[axis])};
    std::vector<fftw_iodim> hm;
    for (int a = 0; a < rank; ++a) {
        if (a == axis) continue;
        hm.push_back({dims[a], static_cast<int>(istr[a]), static_cast<int>(ostr[a])});
    }
    fftw_iodim dinv{dims[axis], static_cast<int>(ostr[axis]), static_cast<int>(istr[axis])};
    std::vector<fftw_iodim> hminv;
    for (int a = 0; a < rank; ++a) {
        if (a == axis) continue;
        hminv.push_back({dims[a], static_cast<int>(ostr[a]), static_cast<int>(istr[a])});
    }
    double* r = fftw_alloc_real(lp.nreal);
    fftw_complex* c = fftw_alloc_complex(lp.nspec);
    lp.fwd = fftw_plan_guru_dft_r2c(1, &d, static_cast<int>(hm.size()), hm.data(), r, c,
                                    FFTW_ESTIMATE);
    lp.inv = fftw_plan_guru_dft_c2r(1, &dinv, static_cast<int>(hminv.size()), hminv.data(),
                                    c, r, FFTW_ESTIMATE);
    fftw_free(r);
    fftw_free(c);
    if (!lp.fwd || !lp.inv) throw std::runtime_error("fftw: line plan creation failed");
    return lp;
}

}  // namespace

void apply_line_multiplier(double* data, const std::vector<int>& dims, int axis,
                           const std::function<cplx(int)>& mult) {
    LinePlans lp;
    {
        std::lock_guard<std::mutex> lock(planner_mutex);
        auto key = std::make_pair(dims, axis);
        auto& cache = line_cache();
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, make_line_plans(dims, axis)).first;
        lp = it->second;
    }
    int M = dims[axis];
    int H = M / 2 + 1;
    double* r = fftw_alloc_real(lp.nreal);
    auto* c = reinterpret_cast<cplx*>(fftw_alloc_complex(lp.nspec));
    std::memcpy(r, data, lp.nreal * sizeof(double));
    fftw_execute_dft_r2c(lp.fwd, r, reinterpret_cast<fftw_complex*>(c));

    std::vector<cplx> m(H);
    for (int k = 0; k < H; ++k) m[k] = mult(k) / static_cast<double>(M);
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
    std::size_t outer = lp.nspec / (inner * H);
    for (std::size_t o = 0; o < outer; ++o)
        for (int k = 0; k < H; ++k) {
            cplx* row = c + (o * H + k) * inner;
            for (std::size_t i = 0; i < inner; ++i) row[i] *= m[k];
        }
    fftw_execute_dft_c2r(lp.inv, reinterpret_cast<fftw_complex*>(c), r);
    std::memcpy(data, r, lp.nreal * sizeof(double));
    fftw_free(r);
    fftw_free(c);
}

namespace {

struct Plan1 {
    fftw_plan fwd = nullptr, inv = nullptr;
};

Plan1 plan1(int M) {
    static std::map<int, Plan1> cache;
    std::lock_guard<std::mutex> lock(planner_mutex);
    auto it = cache.find(M);
    if (it != cache.end()) return it->second;
    double* r = fftw_alloc_real(M);
    fftw_complex* c = fftw_alloc_complex(M / 2 + 1);
    Plan1 p;
    p.fwd = fftw_plan_dft_r2c_1d(M, r, c, FFTW_ESTIMATE);
    p.inv = fftw_plan_dft_c2r_1d(M, c, r, FFTW_ESTIMATE);
    fftw_free(r);
    fftw_free(c);
    cache[M] = p;
    return p;
}

}  // namespace

void resample_axis(const double* in, const std::vector<int>& dims, int axis, int Mnew,
                   double* out) {
    int M = dims[axis];
    if (Mnew < M) throw std::invalid_argument("resample_axis: cannot coarsen");
    std::size_t inner = 1, outer = 1;
    for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
    for (int a = 0; a < axis; ++a) outer *= dims[a];
    Plan1 ps = plan1(M), pt = plan1(Mnew);
    double* rs = fftw_alloc_real(M);
    auto* cs = reinterpret_cast<cplx*>(fftw_alloc_complex(M / 2 + 1));
    double* rt = fftw_alloc_real(Mnew);
    auto* ct = reinterpret_cast<cplx*>(fftw_alloc_complex(Mnew / 2 + 1));
    int H = M / 2 + 1, Ht = Mnew / 2 + 1;
    bool split = (M % 2 == 0) && Mnew > M;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const double* src = in + o * M * inner + i;
            for (int k = 0; k < M; ++k) rs[k] = src[k * inner];
            fftw_execute_dft_r2c(ps.fwd, rs, reinterpret_cast<fftw_complex*>(cs));
            for (int k = 0; k < Ht; ++k) ct[k] = 0.0;
            for (int k = 0; k < H; ++k) ct[k] = cs[k] / static_cast<double>(M);
            if (split) ct[M / 2] *= 0.5;
            fftw_execute_dft_c2r(pt.inv, reinterpret_cast<fftw_complex*>(ct), rt);
            double* dst = out + o * Mnew * inner + i;
            for (int k = 0; k < Mnew; ++k) dst[k * inner] = rt[k];
        }
    fftw_free(rs);
    fftw_free(cs);
    fftw_free(rt);
    fftw_free(ct);
}

Fft3::Fft3(std::vector<int> dims) : dims_(std::move(dims)) {
    int rank = static_cast<int>(dims_.size());
    if (rank < 1 || rank > 3) throw std::invalid_argument("Fft3 handles one to three dims");
    nreal_ = 1;
    for (int a = 0; a < rank; ++a) nreal_ *= static_cast<std::size_t>(dims_[a]);
    nspec_ = nreal_ / dims_.back() * (dims_.back() / 2 + 1);
    rbuf_ = fftw_alloc_real(nreal_);
    cbuf_ = fftw_alloc_complex(nspec_);
    std::lock_guard<std::mutex> lock(planner_mutex);
    fwd_ = fftw_plan_dft_r2c(rank, dims_.data(), rbuf_, static_cast<fftw_complex*>(cbuf_), FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r(rank, dims_.data(), static_cast<fftw_complex*>(cbuf_), rbuf_, FFTW_ESTIMATE);
}

Fft3::~Fft3() {
    std::lock_guard<std::mutex> lock(planner_mutex);
    fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
    fftw_destroy_plan(static_cast<fftw_plan>(inv_));
    fftw_free(rbuf_);
    fftw_free(cbuf_);
}

void Fft3::forward(const double* in, cplx* out) {
    std::memcpy(rbuf_, in, nreal_ * sizeof(double));
    fftw_execute(static_cast<fftw_plan>(fwd_));
    std::memcpy(out, cbuf_, nspec_ * sizeof(cplx));
}

void Fft3::inverse(cplx* in, double* out) {
    std::memcpy(cbuf_, in, nspec_ * sizeof(cplx));
    fftw_execute(static_cast<fftw_plan>(inv_));
    double s = 1.0 / static_cast<double>(nreal_);
    for (std::size_t i = 0; i < nreal_; ++i) out[i] = rbuf_[i] * s;
}

}  // namespace ciw
