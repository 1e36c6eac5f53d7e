#pragma once

// Small signal-processing kit for the corpus generator: FFTW-backed real
// transforms, a weighted overlap-add STFT, and a two-pole resonator.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace ockd::corpus::dsp {

using Spectrum = std::vector<std::complex<double>>;

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanFree {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

}  // namespace detail

/// Forward real FFT; returns n/2 + 1 bins.
inline Spectrum rfft(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::unique_ptr<double, detail::FftwFree> in(fftw_alloc_real(x.size()));
  std::unique_ptr<fftw_complex, detail::FftwFree> out(fftw_alloc_complex(x.size() / 2 + 1));
  std::unique_ptr<fftw_plan_s, detail::PlanFree> plan(
      fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE));
  std::copy(x.begin(), x.end(), in.get());
  fftw_execute(plan.get());
  Spectrum s(x.size() / 2 + 1);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = {out.get()[k][0], out.get()[k][1]};
  return s;
}

/// Inverse of rfft for a length-n signal, including the 1/n scale.
inline std::vector<double> irfft(const Spectrum& s, std::size_t n) {
  std::unique_ptr<fftw_complex, detail::FftwFree> in(fftw_alloc_complex(n / 2 + 1));
  std::unique_ptr<double, detail::FftwFree> out(fftw_alloc_real(n));
  std::unique_ptr<fftw_plan_s, detail::PlanFree> plan(
      fftw_plan_dft_c2r_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE));
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    in.get()[k][0] = s[k].real();
    in.get()[k][1] = s[k].imag();
  }
  fftw_execute(plan.get());
  std::vector<double> x(out.get(), out.get() + n);
  for (double& v : x) v /= static_cast<double>(n);
  return x;
}

inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

/// Analyses `x` with Hann-windowed frames, lets `edit` rewrite each frame's
/// spectrum, and resynthesizes by weighted overlap-add. The frame index is
/// passed to `edit`. Output has the input's length.
inline std::vector<double> stft_process(
    std::span<const double> x, std::size_t frame, std::size_t hop,
    const std::function<void(std::size_t, Spectrum&)>& edit) {
  const auto w = hann(frame);
  std::vector<double> padded(x.size() + 2 * frame, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(frame));
  std::vector<double> out(padded.size(), 0.0), norm(padded.size(), 0.0);
  std::vector<double> buf(frame);

  std::unique_ptr<double, detail::FftwFree> rin(fftw_alloc_real(frame));
  std::unique_ptr<fftw_complex, detail::FftwFree> cbuf(fftw_alloc_complex(frame / 2 + 1));
  std::unique_ptr<double, detail::FftwFree> rout(fftw_alloc_real(frame));
  std::unique_ptr<fftw_plan_s, detail::PlanFree> fwd(
      fftw_plan_dft_r2c_1d(static_cast<int>(frame), rin.get(), cbuf.get(), FFTW_ESTIMATE));
  std::unique_ptr<fftw_plan_s, detail::PlanFree> inv(
      fftw_plan_dft_c2r_1d(static_cast<int>(frame), cbuf.get(), rout.get(), FFTW_ESTIMATE));
  Spectrum spec(frame / 2 + 1);

  std::size_t index = 0;
  for (std::size_t start = 0; start + frame <= padded.size(); start += hop, ++index) {
    for (std::size_t i = 0; i < frame; ++i) rin.get()[i] = padded[start + i] * w[i];
    fftw_execute(fwd.get());
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] = {cbuf.get()[k][0], cbuf.get()[k][1]};
    edit(index, spec);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      cbuf.get()[k][0] = spec[k].real();
      cbuf.get()[k][1] = spec[k].imag();
    }
    fftw_execute(inv.get());
    for (std::size_t i = 0; i < frame; ++i) {
      out[start + i] += rout.get()[i] / static_cast<double>(frame) * w[i];
      norm[start + i] += w[i] * w[i];
    }
  }
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double nrm = norm[i + frame];
    y[i] = nrm > 1e-8 ? out[i + frame] / nrm : 0.0;
  }
  return y;
}

/// Two-pole resonator with unity gain at DC (Klatt form).
class Resonator {
 public:
  void set(double freq_hz, double bandwidth_hz, double sample_rate) {
    const double r = std::exp(-std::numbers::pi * bandwidth_hz / sample_rate);
    b_ = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq_hz / sample_rate);
    c_ = -r * r;
    a_ = 1.0 - b_ - c_;
  }
  double operator()(double x) {
    const double y = a_ * x + b_ * y1_ + c_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a_ = 1.0, b_ = 0.0, c_ = 0.0;
  double y1_ = 0.0, y2_ = 0.0;
};

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

inline double peak(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

}  // namespace ockd::corpus::dsp
