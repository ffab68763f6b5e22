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

#include <cmath>
#include <numbers>
#include <string>

#include "cryoclass/error.hpp"
#include "cryoclass/fft.hpp"
#include "cryoclass/image.hpp"

namespace cryoclass {

/// Microscope parameters of one defocus group. Units follow the usual
/// microscope-side conventions and are converted to Angstrom internally.
struct CtfParams {
    double defocus_um = 1.0;    // underfocus, micrometers
    double cs_mm = 2.0;         // spherical aberration, millimeters
    double lambda_pm = 2.51;    // electron wavelength, picometers
    double b_factor = 10.0;     // envelope decay, applied to the generalized frequency
    double amp_contrast = 0.07; // in [0, 1)
    double pixel_size = 2.82;   // Angstrom

    void validate() const {
        if (!(cs_mm > 0.0) || !(lambda_pm > 0.0) || !(pixel_size > 0.0))
            throw PreconditionError("CTF parameters need cs_mm > 0, lambda_pm > 0 and pixel_size > 0");
        if (!(b_factor >= 0.0))
            throw PreconditionError("CTF b_factor must be non-negative");
        if (!(amp_contrast >= 0.0 && amp_contrast < 1.0))
            throw PreconditionError("CTF amp_contrast must lie in [0, 1)");
        if (!std::isfinite(defocus_um))
            throw PreconditionError("CTF defocus must be finite");
    }

    bool operator==(const CtfParams&) const = default;
};

namespace ctf_detail {
inline constexpr double kAngPerMicron = 1e4;
inline constexpr double kAngPerMillimeter = 1e7;
inline constexpr double kAngPerPicometer = 1e-2;
} // namespace ctf_detail

/// Generalized (dimensionless) frequency scale (Cs * lambda^3)^(1/4), in Angstrom.
inline double generalized_frequency_scale(const CtfParams& p) {
    const double cs = p.cs_mm * ctf_detail::kAngPerMillimeter;
    const double lambda = p.lambda_pm * ctf_detail::kAngPerPicometer;
    return std::pow(cs * lambda * lambda * lambda, 0.25);
}

/// Generalized defocus dz / (Cs * lambda)^(1/2).
inline double generalized_defocus(const CtfParams& p) {
    const double cs = p.cs_mm * ctf_detail::kAngPerMillimeter;
    const double lambda = p.lambda_pm * ctf_detail::kAngPerPicometer;
    return p.defocus_um * ctf_detail::kAngPerMicron / std::sqrt(cs * lambda);
}

/// CTF at spatial frequency magnitude k (1/Angstrom):
///   exp(-B k^2) sin(gamma - phi),  gamma = -pi dz k^2 + pi/2 k^4
/// in generalized units, with phi = atan(a / sqrt(1 - a^2)) for amplitude
/// contrast a, i.e. sqrt(1 - a^2) sin(gamma) - a cos(gamma): amplitude and
/// phase contrast share their sign at low frequency and CTF(0) = -a
/// (phi = 0 reproduces the pure weak-phase form). Depends on k only
/// through k^2, so negative k is accepted.
inline double ctf_eval(const CtfParams& params, double k) {
    if (!std::isfinite(k))
        throw PreconditionError("ctf_eval: non-finite spatial frequency");
    const double kh = generalized_frequency_scale(params) * k;
    const double kh2 = kh * kh;
    const double dz = generalized_defocus(params);
    const double a = params.amp_contrast;
    const double phase = a > 0.0 ? std::atan(a / std::sqrt(1.0 - a * a)) : 0.0;
    const double gamma = -std::numbers::pi * dz * kh2 + 0.5 * std::numbers::pi * kh2 * kh2;
    return std::exp(-params.b_factor * kh2) * std::sin(gamma - phase);
}

/// CTF sampled on the centered frequency grid of a p x p image (DC at the center).
struct CtfGrid {
    PixelGrid values;
    CtfParams params;

    [[nodiscard]] int side() const { return static_cast<int>(values.rows()); }
};

inline CtfGrid ctf_grid(const CtfParams& params, int p) {
    if (p < 1 || p % 2 == 0)
        throw PreconditionError("ctf_grid: image side must be odd, got " + std::to_string(p));
    params.validate();
    CtfGrid grid{PixelGrid(p, p), params};
    const int c = (p - 1) / 2;
    const double dk = 1.0 / (p * params.pixel_size);
    for (int v = -c; v <= c; ++v)
        for (int u = -c; u <= c; ++u)
            grid.values(v + c, u + c) = ctf_eval(params, dk * std::sqrt(static_cast<double>(u * u + v * v)));
    return grid;
}

/// Grid of ones: the identity operator, convenient for tests and CTF-free data.
inline CtfGrid unit_ctf_grid(int p) {
    CtfGrid grid{PixelGrid::Ones(p, p), CtfParams{}};
    return grid;
}

namespace ctf_detail {

inline void check_shape(int image_side, const CtfGrid& grid, const char* what) {
    if (image_side != grid.side())
        throw PreconditionError(std::string(what) + ": image side " + std::to_string(image_side) +
                                " does not match CTF grid side " + std::to_string(grid.side()));
}

/// Multiplies the spectrum of a (complex) image by a centered real filter.
/// Translation commutes with the filter, so no spatial shift is needed.
inline ComplexGrid filter(const ComplexGrid& image, const PixelGrid& centered_filter) {
    ComplexGrid spectrum = fft::forward(image);
    const PixelGrid f = fft::ifftshift(centered_filter);
    spectrum.array() *= f.array().cast<std::complex<double>>();
    return fft::inverse(spectrum);
}

} // namespace ctf_detail

/// Convolution with the point spread function, done as a Fourier multiply.
inline Image apply_ctf(const Image& image, const CtfGrid& grid) {
    ctf_detail::check_shape(image.side(), grid, "apply_ctf");
    const ComplexGrid out = ctf_detail::filter(image.pixels.cast<std::complex<double>>(), grid.values);
    return Image(out.real(), image.pixel_size);
}

/// Complex-valued variant used to push basis functions through the CTF.
inline ComplexGrid apply_ctf(const ComplexGrid& image, const CtfGrid& grid) {
    ctf_detail::check_shape(static_cast<int>(image.rows()), grid, "apply_ctf");
    return ctf_detail::filter(image, grid.values);
}

/// Multiplies Fourier coefficients by sign(CTF); exact zeros stay zero.
inline Image phase_flip(const Image& image, const CtfGrid& grid) {
    ctf_detail::check_shape(image.side(), grid, "phase_flip");
    const PixelGrid sign = grid.values.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    const ComplexGrid out = ctf_detail::filter(image.pixels.cast<std::complex<double>>(), sign);
    return Image(out.real(), image.pixel_size);
}

} // namespace cryoclass
