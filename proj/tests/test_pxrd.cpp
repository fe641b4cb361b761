#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cifgen/error.hpp"
#include "cifgen/pxrd.hpp"
#include "fixtures.hpp"

using namespace cifgen;

namespace {

const Peak* peak_near(const PeakList& p, double q, double tol = 1e-6) {
    for (const auto& peak : p.peaks)
        if (std::abs(peak.q - q) < tol) return &peak;
    return nullptr;
}

double lorentz_polarization(double q, double wavelength) {
    const double s = q * wavelength / (4 * std::numbers::pi);
    const double theta = std::asin(s);
    return (1 + std::pow(std::cos(2 * theta), 2)) / (s * s * std::cos(theta));
}

PeakList single_peak(double q, double intensity = 1.0) {
    PeakList p;
    p.peaks.push_back({q, intensity, 1, {1, 0, 0}});
    return p;
}

}  // namespace

TEST(Pxrd, GridSpacing) {
    const auto& q = q_grid();
    ASSERT_EQ(q.size(), 1000u);
    EXPECT_DOUBLE_EQ(q.front(), 0.0);
    EXPECT_NEAR(q.back(), 9.99, 1e-12);
    EXPECT_NEAR(q[314], 3.14, 1e-12);
}

TEST(Pxrd, SimpleCubicFirstPeak) {
    const auto p = compute_peaks(fixtures::simple_cubic("Cu", 4.0));
    ASSERT_FALSE(p.peaks.empty());
    EXPECT_NEAR(p.peaks.front().q, 2 * std::numbers::pi / 4.0, 1e-4);
    EXPECT_NEAR(p.peaks.front().q, 1.5708, 1e-4);
    EXPECT_EQ(p.peaks.front().multiplicity, 6);
    for (std::size_t i = 1; i < p.peaks.size(); ++i) EXPECT_LT(p.peaks[i - 1].q, p.peaks[i].q);
    double top = 0;
    for (const auto& peak : p.peaks) top = std::max(top, peak.intensity);
    EXPECT_DOUBLE_EQ(top, 1.0);
}

TEST(Pxrd, BodyCentredAbsences) {
    const double a = 3.0;
    const auto p = compute_peaks(fixtures::bcc("Fe", a));
    // h + k + l odd vanishes
    for (auto hkl : {std::array{1, 0, 0}, std::array{1, 1, 1}, std::array{2, 1, 0}}) {
        const double q = 2 * std::numbers::pi / a * std::sqrt(hkl[0] * hkl[0] + hkl[1] * hkl[1] + hkl[2] * hkl[2]);
        const auto* peak = peak_near(p, q);
        ASSERT_NE(peak, nullptr) << q;
        EXPECT_LT(peak->intensity, 1e-12);
    }
    const auto* allowed = peak_near(p, 2 * std::numbers::pi / a * std::sqrt(2.0));
    ASSERT_NE(allowed, nullptr);
    EXPECT_GT(allowed->intensity, 0.1);
}

TEST(Pxrd, FaceCentredAbsences) {
    const double a = 3.6;
    const auto p = compute_peaks(fixtures::fcc("Cu", a));
    // mixed parity vanishes: (100), (110), (210)
    for (double n2 : {1.0, 2.0, 5.0}) {
        const auto* peak = peak_near(p, 2 * std::numbers::pi / a * std::sqrt(n2));
        ASSERT_NE(peak, nullptr);
        EXPECT_LT(peak->intensity, 1e-12);
    }
    for (double n2 : {3.0, 4.0}) {
        const auto* peak = peak_near(p, 2 * std::numbers::pi / a * std::sqrt(n2));
        ASSERT_NE(peak, nullptr);
        EXPECT_GT(peak->intensity, 0.05);
    }
}

TEST(Pxrd, IntensityRatioMatchesKinematicOracle) {
    // one atom per cell: |F|^2 is constant with f = Z, so the ratio is
    // multiplicity times Lorentz-polarization
    PeakOptions opts;
    opts.form_factors = FormFactorModel::AtomicNumber;
    const double a = 3.5;
    const auto p = compute_peaks(fixtures::simple_cubic("Cu", a), opts);
    const double q100 = 2 * std::numbers::pi / a, q110 = q100 * std::sqrt(2.0), q111 = q100 * std::sqrt(3.0);
    const auto *p100 = peak_near(p, q100), *p110 = peak_near(p, q110), *p111 = peak_near(p, q111);
    ASSERT_TRUE(p100 && p110 && p111);
    EXPECT_EQ(p110->multiplicity, 12);
    EXPECT_EQ(p111->multiplicity, 8);
    const double l = kCuKalpha;
    EXPECT_NEAR(p110->intensity / p100->intensity,
                12 * lorentz_polarization(q110, l) / (6 * lorentz_polarization(q100, l)), 1e-9);
    EXPECT_NEAR(p111->intensity / p100->intensity,
                8 * lorentz_polarization(q111, l) / (6 * lorentz_polarization(q100, l)), 1e-9);
}

TEST(Pxrd, UnreachableReflectionsSkipped) {
    PeakOptions opts;
    opts.wavelength = 3.0;  // 4 pi / lambda = 4.19 < q_max
    const auto p = compute_peaks(fixtures::simple_cubic("Cu", 3.0), opts);
    for (const auto& peak : p.peaks) EXPECT_LT(peak.q * opts.wavelength / (4 * std::numbers::pi), 1.0);
}

TEST(Pxrd, OriginShiftInvariance) {
    auto s = fixtures::rocksalt("Na", "Cl", 5.64);
    auto shifted = s;
    for (auto& site : shifted.sites)
        for (int d = 0; d < 3; ++d) site.frac[static_cast<std::size_t>(d)] = wrap_unit(site.frac[static_cast<std::size_t>(d)] + 0.125 * (d + 1));
    const auto a = compute_peaks(s), b = compute_peaks(shifted);
    ASSERT_EQ(a.peaks.size(), b.peaks.size());
    for (std::size_t i = 0; i < a.peaks.size(); ++i) {
        EXPECT_NEAR(a.peaks[i].q, b.peaks[i].q, 1e-9);
        EXPECT_NEAR(a.peaks[i].intensity, b.peaks[i].intensity, 1e-9);
    }
}

TEST(Pxrd, EmptyStructureRejected) {
    CrystalStructure s;
    s.lattice = fixtures::cubic(3);
    EXPECT_THROW(compute_peaks(s), Error);
}

TEST(Pxrd, GaussianWidth) {
    TransformParams t;
    t.fwhm = 0.05;
    EXPECT_NEAR(t.sigma(), 0.021233, 1e-6);
    EXPECT_DOUBLE_EQ(t.gamma(), 0.025);
}

TEST(Pxrd, PseudoVoigtShape) {
    // unit height at the centre and half height at x = fwhm / 2
    const auto y = accumulate_profile(single_peak(5.0), 0.2, 0.5);
    EXPECT_NEAR(y[500], 1.0, 1e-12);
    EXPECT_NEAR(y[510], 0.5, 1e-12);
    EXPECT_NEAR(y[490], 0.5, 1e-12);
    const auto lor = accumulate_profile(single_peak(5.0), 0.2, 1.0);
    EXPECT_NEAR(lor[520], 1.0 / 5.0, 1e-12);  // 1 / (1 + (0.2 / 0.1)^2)
    const auto gau = accumulate_profile(single_peak(5.0), 0.2, 0.0);
    const double sigma = 0.2 / (2 * std::sqrt(2 * std::log(2.0)));
    EXPECT_NEAR(gau[520], std::exp(-0.04 / (2 * sigma * sigma)), 1e-12);
}

TEST(Pxrd, CleanTransformNormalized) {
    const auto p = compute_peaks(fixtures::rocksalt("Na", "Cl", 5.64));
    const auto y = transform(p, clean_transform()).y;
    ASSERT_EQ(y.size(), 1000u);
    EXPECT_DOUBLE_EQ(*std::max_element(y.begin(), y.end()), 1.0);
    EXPECT_GE(*std::min_element(y.begin(), y.end()), 0.0);
}

TEST(Pxrd, NoiseVarianceAndDeterminism) {
    const auto p = compute_peaks(fixtures::fcc("Cu", 3.61));
    TransformParams t = clean_transform();
    const auto clean = transform(p, t).y;
    t.noise_var = 0.01;
    t.seed = 17;
    const auto noisy = transform(p, t).y;
    EXPECT_EQ(noisy, transform(p, t).y);
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) mean += noisy[i] - clean[i];
    mean /= static_cast<double>(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) var += std::pow(noisy[i] - clean[i] - mean, 2);
    var /= static_cast<double>(clean.size() - 1);
    EXPECT_NEAR(var, 0.01, 0.0015);
    EXPECT_NEAR(mean, 0.0, 0.01);
    t.seed = 18;
    EXPECT_NE(noisy, transform(p, t).y);
}

TEST(Pxrd, SampledTransformRanges) {
    std::mt19937_64 rng(123);
    double fwhm_sum = 0, noise_sum = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto t = sample_transform(rng);
        ASSERT_GE(t.fwhm, 0.001);
        ASSERT_LT(t.fwhm, 0.1);
        ASSERT_GE(t.noise_var, 0.001);
        ASSERT_LT(t.noise_var, 0.05);
        ASSERT_EQ(t.eta, 0.5);
        fwhm_sum += t.fwhm;
        noise_sum += t.noise_var;
    }
    EXPECT_NEAR(fwhm_sum / n, 0.0505, 5e-4);
    EXPECT_NEAR(noise_sum / n, 0.0255, 5e-4);
}

TEST(Pxrd, CsvRoundTrip) {
    const auto p = compute_peaks(fixtures::bcc("W", 3.16));
    TransformParams t = clean_transform();
    t.noise_var = 0.002;
    t.seed = 4;
    const auto profile = transform(p, t);
    EXPECT_EQ(profile_from_csv(profile_to_csv(profile, t)).y, profile.y);
    EXPECT_THROW(profile_from_csv("q,intensity\n0.00,1\n"), Error);
}
