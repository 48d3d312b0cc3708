#pragma once

// Two-wavelength absolute-temperature estimation. A contour at a fraction of
// the peak intensity bounds the melt-pool region; the channel-ratio
// temperature calibrates a Wien-form prefactor that converts the long-
// wavelength image into per-pixel temperatures.

#include <cstdint>
#include <string>
#include <vector>

#include "ptwin/common.hpp"

namespace ptwin {

struct RadiancePair {
    Array2D<float> i1;  // short-wavelength channel (750 nm)
    Array2D<float> i2;  // long-wavelength channel (900 nm)
    double pixel_pitch_um = 21.0;

    void validate() const;
};

struct PyroCalibration {
    double c1 = 0.0;
    double c2 = 0.0;
    double p2 = 14388.0;  // nm K
    double beta = 0.7;
    double lambda1_nm = 750.0;
    double lambda2_nm = 900.0;

    void validate() const;
};

struct ContourSegment {
    double r0, c0, r1, c1;  // sub-pixel endpoints in (row, col) coordinates
};

struct ContourRegion {
    Array2D<std::uint8_t> mask;  // pixels with intensity >= level
    std::vector<ContourSegment> boundary;
    double level = 0.0;
};

// level = beta * max(I)
double contour_level(const Array2D<float>& image, double beta);

// Threshold mask plus a marching-squares boundary with linear edge
// interpolation (16-case table; saddle cells resolved by the cell average).
ContourRegion contour_region(const Array2D<float>& image, double beta);

// T_R = 1 / (c1 ln R + c2); the denominator must be positive.
double temperature_ratio(double ratio, const PyroCalibration& cal);

// A_lambda = mean(I1) * exp(p2 / (lambda1 * T_R))
double a_lambda(double i1_mean, double t_r, const PyroCalibration& cal);

enum class PixelStatus : std::uint8_t { Outside = 0, Valid = 1, Invalid = 2 };

struct TemperatureField {
    Array2D<float> kelvin;           // defined where status == Valid
    Array2D<std::uint8_t> status;    // PixelStatus values
    double t_ratio = 0.0;
    double a_lambda_value = 0.0;
};

// Per-pixel hybrid-mode temperature over the contour region of I1. Pixels
// where the prefactor ratio is not above one are marked Invalid rather than
// failing the whole frame.
TemperatureField hybrid_temperature(const RadiancePair& pair, const PyroCalibration& cal);

// Grey-body Wien-form forward model. Each channel carries a flat-field gain
// of (lambda/lambda1)^5 so the two channels share a common prefactor, which
// is what the hybrid inversion assumes of a calibrated instrument.
RadiancePair synth_radiance(const Array2D<float>& temperature_k, double emissivity,
                            const PyroCalibration& cal, double pixel_pitch_um = 21.0);

// Least-squares fit of (c1, c2) against the forward model over a uniform
// temperature ladder; ships as the default-calibration fixture.
PyroCalibration fit_calibration(PyroCalibration cal, double t_lo_k = 1200.0,
                                double t_hi_k = 3500.0, int steps = 24);

}  // namespace ptwin
