#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cifgen/cif.hpp"

namespace cifgen {

inline constexpr double kCuKalpha = 1.5406;
inline constexpr int kGridSize = 1000;
inline constexpr double kQMin = 0.0;
inline constexpr double kQMax = 10.0;
inline constexpr double kQStep = 0.01;

struct Peak {
    double q = 0;          // 1/angstrom
    double intensity = 0;  // relative, max 1 over the list
    int multiplicity = 0;  // number of (hkl) merged into this peak
    std::array<int, 3> hkl{};  // representative reflection
};

struct PeakList {
    std::vector<Peak> peaks;  // strictly increasing q
    double wavelength = kCuKalpha;
};

enum class FormFactorModel {
    CromerMann,
    AtomicNumber,  // f = Z, angle independent
};

struct PeakOptions {
    double wavelength = kCuKalpha;
    double q_max = kQMax;
    double merge_tol = 1e-5;
    FormFactorModel form_factors = FormFactorModel::CromerMann;
};

struct TransformParams {
    double fwhm = 0.05;
    double eta = 0.5;
    double noise_var = 0.0;
    std::uint64_t seed = 0;

    double gamma() const noexcept { return fwhm / 2; }
    double sigma() const noexcept;
};

struct PxrdProfile {
    std::vector<double> y;  // kGridSize values on q_grid()
};

/// q_i = kQMin + i * kQStep for i in [0, kGridSize).
const std::vector<double>& q_grid();

/// Kinematic powder pattern of a full-cell structure (every site of
/// multiplicity 1). Reflections with sin(theta) >= 1 are unreachable and
/// skipped. Peaks closer than merge_tol coalesce; zero-intensity reflections
/// are kept so systematic absences can be inspected.
PeakList compute_peaks(const CrystalStructure& s, const PeakOptions& options = {});

/// Pseudo-Voigt sum on the grid before normalization and noise.
std::vector<double> accumulate_profile(const PeakList& p, double fwhm, double eta);

/// Broadens, normalizes to max 1, then adds seeded Gaussian noise.
PxrdProfile transform(const PeakList& p, const TransformParams& t);

/// fwhm ~ U(0.001, 0.1), noise_var ~ U(0.001, 0.05), eta = 0.5, seed from rng.
TransformParams sample_transform(std::mt19937_64& rng);

/// The clean evaluation transform: fwhm 0.05, eta 0.5, no noise.
TransformParams clean_transform() noexcept;

/// Header comment with the transform, then "q,intensity" rows.
std::string profile_to_csv(const PxrdProfile& p, const TransformParams& t);
PxrdProfile profile_from_csv(std::string_view text);

}  // namespace cifgen
