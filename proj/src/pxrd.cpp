#include "cifgen/pxrd.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include <Eigen/Dense>

#include "cifgen/assets.hpp"
#include "cifgen/error.hpp"
#include "detail/text.hpp"

namespace cifgen {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

struct Scatterer {
    Vec3 frac;
    const CromerMann* cm = nullptr;
    double z = 0;
};

struct Reflection {
    double q;
    double intensity;
    std::array<int, 3> hkl;
};

}  // namespace

double TransformParams::sigma() const noexcept { return fwhm / (2 * std::sqrt(2 * std::log(2.0))); }

const std::vector<double>& q_grid() {
    static const std::vector<double> grid = [] {
        std::vector<double> g(kGridSize);
        for (int i = 0; i < kGridSize; ++i) g[static_cast<std::size_t>(i)] = kQMin + i * kQStep;
        return g;
    }();
    return grid;
}

PeakList compute_peaks(const CrystalStructure& s, const PeakOptions& options) {
    if (s.sites.empty()) throw Error(ErrorCode::EmptyStructure, "structure has no sites");
    s.lattice.validate();
    if (!(options.wavelength > 0)) throw Error(ErrorCode::InvalidArgument, "wavelength must be positive");

    std::vector<Scatterer> atoms;
    for (const auto& site : s.sites) {
        if (site.multiplicity != 1)
            throw Error(ErrorCode::InvariantViolation, "site " + site.label + " is not expanded to the full cell");
        Scatterer a;
        a.frac = Vec3(site.frac[0], site.frac[1], site.frac[2]);
        a.z = element(site.element).z;
        if (options.form_factors == FormFactorModel::CromerMann) {
            a.cm = find_cromer_mann(site.element);
            if (!a.cm) throw Error(ErrorCode::UnsupportedElement, "no form factor for " + site.element);
        }
        atoms.push_back(a);
    }

    const Mat3 m = s.lattice.matrix();
    const Mat3 recip = m.inverse().transpose();  // rows a*, b*, c* without 2 pi
    const double q_limit = std::min(options.q_max, 4 * std::numbers::pi / options.wavelength);
    const double g_limit = q_limit / kTwoPi;
    const int hmax = static_cast<int>(std::floor(g_limit * m.row(0).norm())) + 1;
    const int kmax = static_cast<int>(std::floor(g_limit * m.row(1).norm())) + 1;
    const int lmax = static_cast<int>(std::floor(g_limit * m.row(2).norm())) + 1;

    std::vector<Reflection> refl;
    for (int h = -hmax; h <= hmax; ++h)
        for (int k = -kmax; k <= kmax; ++k)
            for (int l = -lmax; l <= lmax; ++l) {
                if (h == 0 && k == 0 && l == 0) continue;
                const Vec3 g = h * recip.row(0) + k * recip.row(1) + l * recip.row(2);
                const double q = kTwoPi * g.norm();
                if (q > q_limit) continue;
                const double sin_theta = q * options.wavelength / (4 * std::numbers::pi);
                if (sin_theta >= 1) continue;
                const double s_val = q / (4 * std::numbers::pi);
                std::complex<double> f_sum = 0;
                for (const auto& a : atoms) {
                    const double f = a.cm ? (*a.cm)(s_val) : a.z;
                    const double phase = kTwoPi * (h * a.frac[0] + k * a.frac[1] + l * a.frac[2]);
                    f_sum += f * std::complex<double>(std::cos(phase), std::sin(phase));
                }
                const double theta = std::asin(sin_theta);
                const double cos2t = std::cos(2 * theta);
                const double lp = (1 + cos2t * cos2t) / (sin_theta * sin_theta * std::cos(theta));
                refl.push_back({q, std::norm(f_sum) * lp, {h, k, l}});
            }
    if (refl.empty()) throw Error(ErrorCode::NoReflectionsInRange, "no reflection with Q <= " + std::to_string(q_limit));

    std::sort(refl.begin(), refl.end(), [](const Reflection& a, const Reflection& b) {
        if (a.q != b.q) return a.q < b.q;
        return a.hkl > b.hkl;
    });

    PeakList out;
    out.wavelength = options.wavelength;
    std::size_t i = 0;
    while (i < refl.size()) {
        std::size_t j = i;
        double q_sum = 0, i_sum = 0;
        while (j < refl.size() && refl[j].q - refl[i].q <= options.merge_tol) {
            q_sum += refl[j].q;
            i_sum += refl[j].intensity;
            ++j;
        }
        Peak p;
        p.q = q_sum / static_cast<double>(j - i);
        p.intensity = i_sum;
        p.multiplicity = static_cast<int>(j - i);
        p.hkl = refl[i].hkl;
        out.peaks.push_back(p);
        i = j;
    }
    double top = 0;
    for (const auto& p : out.peaks) top = std::max(top, p.intensity);
    if (!(top > 0)) throw Error(ErrorCode::NoReflectionsInRange, "all reflections have zero intensity");
    for (auto& p : out.peaks) p.intensity /= top;
    return out;
}

std::vector<double> accumulate_profile(const PeakList& p, double fwhm, double eta) {
    if (!(fwhm > 0)) throw Error(ErrorCode::InvalidArgument, "fwhm must be positive");
    const TransformParams t{fwhm, eta, 0, 0};
    const double gamma = t.gamma(), sigma = t.sigma();
    const auto& grid = q_grid();
    std::vector<double> y(grid.size(), 0.0);
    for (const auto& peak : p.peaks) {
        if (peak.intensity == 0) continue;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double x = grid[i] - peak.q;
            const double u = x / gamma;
            const double lor = 1 / (1 + u * u);
            const double gau = std::exp(-x * x / (2 * sigma * sigma));
            y[i] += peak.intensity * (eta * lor + (1 - eta) * gau);
        }
    }
    return y;
}

PxrdProfile transform(const PeakList& p, const TransformParams& t) {
    PxrdProfile out;
    out.y = accumulate_profile(p, t.fwhm, t.eta);
    const double top = *std::max_element(out.y.begin(), out.y.end());
    if (top > 0)
        for (auto& v : out.y) v /= top;
    if (t.noise_var > 0) {
        std::mt19937_64 rng(t.seed);
        std::normal_distribution<double> noise(0.0, std::sqrt(t.noise_var));
        for (auto& v : out.y) v += noise(rng);
    }
    return out;
}

TransformParams sample_transform(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> fwhm(0.001, 0.1);
    std::uniform_real_distribution<double> noise(0.001, 0.05);
    TransformParams t;
    t.fwhm = fwhm(rng);
    t.noise_var = noise(rng);
    t.eta = 0.5;
    t.seed = rng();
    return t;
}

TransformParams clean_transform() noexcept { return TransformParams{0.05, 0.5, 0.0, 0}; }

std::string profile_to_csv(const PxrdProfile& p, const TransformParams& t) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "# fwhm=%.17g eta=%.17g noise_var=%.17g seed=%llu\nq,intensity\n", t.fwhm, t.eta,
                  t.noise_var, static_cast<unsigned long long>(t.seed));
    out += buf;
    const auto& grid = q_grid();
    for (std::size_t i = 0; i < p.y.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.2f,%.17g\n", i < grid.size() ? grid[i] : 0.0, p.y[i]);
        out += buf;
    }
    return out;
}

PxrdProfile profile_from_csv(std::string_view text) {
    PxrdProfile p;
    bool header = false;
    for (auto line : detail::split_lines(text)) {
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        if (!header) {
            header = true;
            if (line != "q,intensity") throw Error(ErrorCode::GridMismatch, "expected header 'q,intensity'");
            continue;
        }
        auto fields = detail::split(line, ',');
        if (fields.size() != 2) throw Error(ErrorCode::GridMismatch, "profile row '" + std::string(line) + "'");
        auto q = detail::parse_double(fields[0]);
        auto y = detail::parse_double(fields[1]);
        if (!q || !y) throw Error(ErrorCode::BadNumber, "profile row '" + std::string(line) + "'");
        const double expected = kQMin + static_cast<double>(p.y.size()) * kQStep;
        if (std::abs(*q - expected) > 1e-6) throw Error(ErrorCode::GridMismatch, "q=" + std::string(fields[0]) + " off grid");
        p.y.push_back(*y);
    }
    if (p.y.size() != static_cast<std::size_t>(kGridSize))
        throw Error(ErrorCode::GridMismatch, "profile has " + std::to_string(p.y.size()) + " points, expected 1000");
    return p;
}

}  // namespace cifgen
