/*
 * Copyright 2026 The cryoclass Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"

// Thin FFTW wrapper. Plans are created once per shape with FFTW_ESTIMATE
// (deterministic algorithm choice) under a lock and executed through the
// new-array interface on private aligned buffers, which is thread safe.

namespace cryoclass::fft {

namespace detail {

enum class Kind { Forward2d, Backward2d, ComplexToReal1d };

class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(Kind kind, int n0, int n1) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(static_cast<int>(kind), n0, n1);
        if (auto it = plans_.find(key); it != plans_.end())
            return it->second;
        fftw_plan plan = nullptr;
        if (kind == Kind::ComplexToReal1d) {
            auto* in = fftw_alloc_complex(static_cast<std::size_t>(n0 / 2 + 1));
            auto* out = fftw_alloc_real(static_cast<std::size_t>(n0));
            plan = fftw_plan_dft_c2r_1d(n0, in, out, FFTW_ESTIMATE);
            fftw_free(in);
            fftw_free(out);
        } else {
            auto* buf = fftw_alloc_complex(static_cast<std::size_t>(n0) * n1);
            plan = fftw_plan_dft_2d(n0, n1, buf, buf, kind == Kind::Forward2d ? FFTW_FORWARD : FFTW_BACKWARD,
                                    FFTW_ESTIMATE);
            fftw_free(buf);
        }
        if (plan == nullptr)
            throw NumericalError("FFTW could not create a plan");
        plans_.emplace(key, plan);
        return plan;
    }

    PlanCache(const PlanCache&) = delete;
    PlanCache& operator=(const PlanCache&) = delete;

private:
    PlanCache() = default;
    ~PlanCache() {
        for (auto& [key, plan] : plans_)
            fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

struct ComplexBuffer {
    explicit ComplexBuffer(std::size_t n) : data(fftw_alloc_complex(n)), size(n) {}
    ~ComplexBuffer() { fftw_free(data); }
    ComplexBuffer(const ComplexBuffer&) = delete;
    ComplexBuffer& operator=(const ComplexBuffer&) = delete;
    fftw_complex* data;
    std::size_t size;
};

struct RealBuffer {
    explicit RealBuffer(std::size_t n) : data(fftw_alloc_real(n)), size(n) {}
    ~RealBuffer() { fftw_free(data); }
    RealBuffer(const RealBuffer&) = delete;
    RealBuffer& operator=(const RealBuffer&) = delete;
    double* data;
    std::size_t size;
};

inline ComplexGrid transform2d(const ComplexGrid& in, Kind kind) {
    const int rows = static_cast<int>(in.rows()), cols = static_cast<int>(in.cols());
    ComplexBuffer buf(static_cast<std::size_t>(rows) * cols);
    auto* z = reinterpret_cast<std::complex<double>*>(buf.data);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            z[static_cast<std::size_t>(r) * cols + c] = in(r, c);
    fftw_execute_dft(PlanCache::instance().get(kind, rows, cols), buf.data, buf.data);
    ComplexGrid out(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out(r, c) = z[static_cast<std::size_t>(r) * cols + c];
    return out;
}

} // namespace detail

/// Unnormalized forward DFT, standard (origin at index 0) ordering.
inline ComplexGrid forward(const ComplexGrid& in) { return detail::transform2d(in, detail::Kind::Forward2d); }

/// Inverse DFT including the 1/N normalization.
inline ComplexGrid inverse(const ComplexGrid& in) {
    ComplexGrid out = detail::transform2d(in, detail::Kind::Backward2d);
    out /= static_cast<double>(in.size());
    return out;
}

/// Moves the center sample of an odd-sized grid to index (0, 0).
template <class Grid>
Grid ifftshift(const Grid& in) {
    const int p = static_cast<int>(in.rows());
    const int c = (p - 1) / 2;
    Grid out(in.rows(), in.cols());
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
            out(y, x) = in((y + c) % p, (x + c) % p);
    return out;
}

/// Inverse of ifftshift: index (0, 0) goes to the center.
template <class Grid>
Grid fftshift(const Grid& in) {
    const int p = static_cast<int>(in.rows());
    const int c = (p - 1) / 2;
    Grid out(in.rows(), in.cols());
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
            out((y + c) % p, (x + c) % p) = in(y, x);
    return out;
}

/// DFT of a grid whose spatial origin is its center pixel, returned with the
/// DC term at the center. Requires odd side.
inline ComplexGrid centered_forward(const ComplexGrid& in) { return fftshift(forward(ifftshift(in))); }

inline ComplexGrid centered_inverse(const ComplexGrid& in) { return fftshift(inverse(ifftshift(in))); }

/// Evaluates f(l) = Re(h[0]) + 2 * sum_{m>=1} Re(h[m] exp(2 pi i m l / L)) for
/// l = 0..L-1, i.e. a real trigonometric polynomial sampled on a uniform grid.
/// Uses a complex-to-real FFT when the degree fits below the Nyquist index and
/// direct summation otherwise.
inline void cosine_series(std::span<const std::complex<double>> h, int samples, std::span<double> out) {
    require(samples >= 1 && out.size() == static_cast<std::size_t>(samples), "cosine_series: bad output size");
    const int degree = static_cast<int>(h.size()) - 1;
    if (degree < (samples + 1) / 2 && samples >= 4) {
        const std::size_t half = static_cast<std::size_t>(samples / 2 + 1);
        detail::ComplexBuffer in(half);
        detail::RealBuffer res(static_cast<std::size_t>(samples));
        auto* z = reinterpret_cast<std::complex<double>*>(in.data);
        for (std::size_t k = 0; k < half; ++k)
            z[k] = 0.0;
        if (!h.empty())
            z[0] = std::real(h[0]);
        for (int m = 1; m <= degree; ++m)
            z[m] = h[static_cast<std::size_t>(m)];
        fftw_execute_dft_c2r(detail::PlanCache::instance().get(detail::Kind::ComplexToReal1d, samples, 0), in.data,
                             res.data);
        for (int l = 0; l < samples; ++l)
            out[static_cast<std::size_t>(l)] = res.data[l];
        return;
    }
    const double two_pi = 2.0 * std::acos(-1.0);
    for (int l = 0; l < samples; ++l) {
        double acc = h.empty() ? 0.0 : std::real(h[0]);
        for (int m = 1; m <= degree; ++m) {
            const double a = two_pi * m * l / samples;
            acc += 2.0 * std::real(h[static_cast<std::size_t>(m)] * std::complex<double>(std::cos(a), std::sin(a)));
        }
        out[static_cast<std::size_t>(l)] = acc;
    }
}

} // namespace cryoclass::fft
