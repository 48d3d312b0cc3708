#include "ptwin/pyrometry.hpp"

#include <cmath>

namespace ptwin {

void RadiancePair::validate() const {
    if (i1.rows() != i2.rows() || i1.cols() != i2.cols())
        throw DimensionError("radiance channels differ in shape");
    for (const float v : i1.raw())
        if (v < 0.f) throw DomainError("negative radiance in channel 1");
    for (const float v : i2.raw())
        if (v < 0.f) throw DomainError("negative radiance in channel 2");
}

void PyroCalibration::validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("contour beta must lie in (0,1)");
    if (!(p2 > 0.0)) throw ConfigError("radiation constant p2 must be positive");
    if (!(lambda1_nm > 0.0 && lambda2_nm > 0.0)) throw ConfigError("wavelengths must be positive");
}

double contour_level(const Array2D<float>& image, double beta) {
    if (image.empty()) throw DomainError("contour level of an empty image");
    float mx = image.raw()[0];
    for (const float v : image.raw()) mx = std::max(mx, v);
    return beta * static_cast<double>(mx);
}

namespace {

enum Edge { kTop, kRight, kBottom, kLeft };

// Crossing point of `level` on a cell edge, linear in the corner intensities.
ContourSegment make_segment(const Array2D<float>& img, std::size_t r, std::size_t c, double level,
                            Edge a, Edge b) {
    auto corner = [&](int dr, int dc) {
        return static_cast<double>(img.at(r + static_cast<std::size_t>(dr),
                                          c + static_cast<std::size_t>(dc)));
    };
    auto point = [&](Edge e, double& pr, double& pc) {
        double va, vb;
        switch (e) {
            case kTop:
                va = corner(0, 0);
                vb = corner(0, 1);
                pr = static_cast<double>(r);
                pc = static_cast<double>(c) + (level - va) / (vb - va);
                break;
            case kBottom:
                va = corner(1, 0);
                vb = corner(1, 1);
                pr = static_cast<double>(r) + 1.0;
                pc = static_cast<double>(c) + (level - va) / (vb - va);
                break;
            case kLeft:
                va = corner(0, 0);
                vb = corner(1, 0);
                pr = static_cast<double>(r) + (level - va) / (vb - va);
                pc = static_cast<double>(c);
                break;
            case kRight:
            default:
                va = corner(0, 1);
                vb = corner(1, 1);
                pr = static_cast<double>(r) + (level - va) / (vb - va);
                pc = static_cast<double>(c) + 1.0;
                break;
        }
    };
    ContourSegment s{};
    point(a, s.r0, s.c0);
    point(b, s.r1, s.c1);
    return s;
}

}  // namespace

ContourRegion contour_region(const Array2D<float>& image, double beta) {
    if (image.empty()) throw DomainError("contour region of an empty image");
    ContourRegion region;
    region.level = contour_level(image, beta);
    region.mask = Array2D<std::uint8_t>(image.rows(), image.cols(), 0);
    for (std::size_t i = 0; i < image.raw().size(); ++i)
        region.mask.raw()[i] = static_cast<double>(image.raw()[i]) >= region.level ? 1 : 0;

    if (image.rows() < 2 || image.cols() < 2) return region;
    for (std::size_t r = 0; r + 1 < image.rows(); ++r)
        for (std::size_t c = 0; c + 1 < image.cols(); ++c) {
            const bool tl = region.mask.at(r, c) != 0;
            const bool tr = region.mask.at(r, c + 1) != 0;
            const bool br = region.mask.at(r + 1, c + 1) != 0;
            const bool bl = region.mask.at(r + 1, c) != 0;
            const int idx = (tl ? 1 : 0) | (tr ? 2 : 0) | (br ? 4 : 0) | (bl ? 8 : 0);
            auto emit = [&](Edge a, Edge b) {
                region.boundary.push_back(make_segment(image, r, c, region.level, a, b));
            };
            switch (idx) {
                case 0:
                case 15:
                    break;  // all corners on one side: no boundary in this cell
                case 1: emit(kLeft, kTop); break;
                case 2: emit(kTop, kRight); break;
                case 3: emit(kLeft, kRight); break;
                case 4: emit(kRight, kBottom); break;
                case 6: emit(kTop, kBottom); break;
                case 7: emit(kLeft, kBottom); break;
                case 8: emit(kBottom, kLeft); break;
                case 9: emit(kTop, kBottom); break;
                case 11: emit(kRight, kBottom); break;
                case 12: emit(kLeft, kRight); break;
                case 13: emit(kTop, kRight); break;
                case 14: emit(kLeft, kTop); break;
                case 5: {  // saddle: TL and BR above
                    const double center = 0.25 * (static_cast<double>(image.at(r, c)) +
                                                  image.at(r, c + 1) + image.at(r + 1, c) +
                                                  image.at(r + 1, c + 1));
                    if (center >= region.level) {
                        emit(kTop, kRight);
                        emit(kBottom, kLeft);
                    } else {
                        emit(kLeft, kTop);
                        emit(kRight, kBottom);
                    }
                    break;
                }
                case 10: {  // saddle: TR and BL above
                    const double center = 0.25 * (static_cast<double>(image.at(r, c)) +
                                                  image.at(r, c + 1) + image.at(r + 1, c) +
                                                  image.at(r + 1, c + 1));
                    if (center >= region.level) {
                        emit(kLeft, kTop);
                        emit(kRight, kBottom);
                    } else {
                        emit(kTop, kRight);
                        emit(kBottom, kLeft);
                    }
                    break;
                }
                default: break;
            }
        }
    return region;
}

double temperature_ratio(double ratio, const PyroCalibration& cal) {
    if (!(ratio > 0.0)) throw DomainError("channel ratio must be positive");
    const double denom = cal.c1 * std::log(ratio) + cal.c2;
    if (!(denom > 0.0))
        throw DomainError("ratio temperature undefined: c1 ln R + c2 is not positive");
    return 1.0 / denom;
}

double a_lambda(double i1_mean, double t_r, const PyroCalibration& cal) {
    if (!(t_r > 0.0)) throw DomainError("prefactor requires a positive ratio temperature");
    return i1_mean * std::exp(cal.p2 / (cal.lambda1_nm * t_r));
}

TemperatureField hybrid_temperature(const RadiancePair& pair, const PyroCalibration& cal) {
    pair.validate();
    const ContourRegion region = contour_region(pair.i1, cal.beta);
    double s1 = 0.0, s2 = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < region.mask.raw().size(); ++i) {
        if (!region.mask.raw()[i]) continue;
        s1 += static_cast<double>(pair.i1.raw()[i]);
        s2 += static_cast<double>(pair.i2.raw()[i]);
        ++n;
    }
    if (n == 0) throw DomainError("contour region is empty");
    const double i1_mean = s1 / static_cast<double>(n);
    const double i2_mean = s2 / static_cast<double>(n);
    if (!(i2_mean > 0.0)) throw DomainError("long-wavelength channel is dark over the region");

    TemperatureField field;
    field.t_ratio = temperature_ratio(i1_mean / i2_mean, cal);
    field.a_lambda_value = a_lambda(i1_mean, field.t_ratio, cal);
    field.kelvin = Array2D<float>(pair.i1.rows(), pair.i1.cols(), 0.f);
    field.status = Array2D<std::uint8_t>(pair.i1.rows(), pair.i1.cols(),
                                         static_cast<std::uint8_t>(PixelStatus::Outside));
    for (std::size_t i = 0; i < region.mask.raw().size(); ++i) {
        if (!region.mask.raw()[i]) continue;
        const double i2 = static_cast<double>(pair.i2.raw()[i]);
        if (i2 > 0.0 && field.a_lambda_value / i2 > 1.0) {
            const double t = cal.p2 / (cal.lambda2_nm * std::log(field.a_lambda_value / i2));
            field.kelvin.raw()[i] = static_cast<float>(t);
            field.status.raw()[i] = static_cast<std::uint8_t>(PixelStatus::Valid);
        } else {
            field.status.raw()[i] = static_cast<std::uint8_t>(PixelStatus::Invalid);
        }
    }
    return field;
}

namespace {
// Wien-form spectral shape with the instrument's flat-field gain folded in;
// the gain normalizes the lambda^-5 factor between channels so both share the
// same grey-body prefactor.
double channel_radiance(double t_k, double lambda_nm, double emissivity,
                        const PyroCalibration& cal) {
    const double shape = std::pow(cal.lambda1_nm / lambda_nm, 5.0);
    const double gain = 1.0 / shape;
    return emissivity * shape * gain * std::exp(-cal.p2 / (lambda_nm * t_k));
}
}  // namespace

RadiancePair synth_radiance(const Array2D<float>& temperature_k, double emissivity,
                            const PyroCalibration& cal, double pixel_pitch_um) {
    if (temperature_k.empty()) throw DomainError("empty temperature image");
    RadiancePair pair;
    pair.pixel_pitch_um = pixel_pitch_um;
    pair.i1 = Array2D<float>(temperature_k.rows(), temperature_k.cols());
    pair.i2 = Array2D<float>(temperature_k.rows(), temperature_k.cols());
    for (std::size_t i = 0; i < temperature_k.raw().size(); ++i) {
        const double t = static_cast<double>(temperature_k.raw()[i]);
        if (!(t > 0.0)) throw DomainError("temperatures must be positive");
        pair.i1.raw()[i] = static_cast<float>(channel_radiance(t, cal.lambda1_nm, emissivity, cal));
        pair.i2.raw()[i] = static_cast<float>(channel_radiance(t, cal.lambda2_nm, emissivity, cal));
    }
    return pair;
}

PyroCalibration fit_calibration(PyroCalibration cal, double t_lo_k, double t_hi_k, int steps) {
    if (steps < 2 || !(t_lo_k > 0.0) || !(t_hi_k > t_lo_k))
        throw ConfigError("calibration ladder needs at least two increasing temperatures");
    // least squares for 1/T = c1 x + c2 with x = ln(I1/I2)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < steps; ++i) {
        const double t = t_lo_k + (t_hi_k - t_lo_k) * static_cast<double>(i) / (steps - 1);
        const double r = channel_radiance(t, cal.lambda1_nm, 1.0, cal) /
                         channel_radiance(t, cal.lambda2_nm, 1.0, cal);
        const double x = std::log(r);
        const double y = 1.0 / t;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(steps);
    const double denom = n * sxx - sx * sx;
    if (std::fabs(denom) < 1e-30) throw DomainError("degenerate calibration ladder");
    cal.c1 = (n * sxy - sx * sy) / denom;
    cal.c2 = (sy - cal.c1 * sx) / n;
    return cal;
}

}  // namespace ptwin
