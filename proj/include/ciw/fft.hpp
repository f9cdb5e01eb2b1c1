#pragma once

#include <complex>
#include <functional>
#include <vector>

namespace ciw {

using cplx = std::complex<double>;

// signed frequency index of bin i on an M-point grid; Nyquist maps to M/2
inline int freq_index(int i, int M) { return i <= M / 2 ? i : i - M; }

// multiplies the 1-D spectrum of every line along `axis` by mult(k), where k is
// the signed bin index; data is real, C-ordered with the given dims
void apply_line_multiplier(double* data, const std::vector<int>& dims, int axis,
                           const std::function<cplx(int)>& mult);

// band-limited resampling along one axis (Mnew >= M); the Nyquist bin of the
// source is split evenly between +M/2 and -M/2 so the result stays real
void resample_axis(const double* in, const std::vector<int>& dims, int axis, int Mnew,
                   double* out);

// full real transforms on an M0 x M1 x M2 grid (last axis halved); one- and
// two-dimensional grids are accepted as well
class Fft3 {
  public:
    explicit Fft3(std::vector<int> dims);
    ~Fft3();
    Fft3(const Fft3&) = delete;
    Fft3& operator=(const Fft3&) = delete;

    std::size_t real_size() const { return nreal_; }
    std::size_t spec_size() const { return nspec_; }
    const std::vector<int>& dims() const { return dims_; }
    int half() const { return dims_.back() / 2 + 1; }

    // unnormalized forward transform
    void forward(const double* in, cplx* out);
    // inverse including the 1/N normalization; `in` is not preserved
    void inverse(cplx* in, double* out);

  private:
    std::vector<int> dims_;
    std::size_t nreal_, nspec_;
    void* fwd_ = nullptr;
    void* inv_ = nullptr;
    double* rbuf_ = nullptr;
    void* cbuf_ = nullptr;
};

}  // namespace ciw
