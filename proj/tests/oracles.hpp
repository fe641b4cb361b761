#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour obviousness over speed.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "cifgen/cif.hpp"
#include "cifgen/evaluation.hpp"
#include "fixtures.hpp"

namespace oracles {

inline double periodic_distance(Eigen::Vector3d df, const Eigen::Matrix3d& rows) {
    for (int i = 0; i < 3; ++i) df[i] -= std::round(df[i]);
    double best = 1e300;
    for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j)
            for (int k = -1; k <= 1; ++k)
                best = std::min(best, (rows.transpose() * (df + Eigen::Vector3d(i, j, k))).norm());
    return best;
}

inline double angle(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
    return std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

// Every unimodular S with entries in {-1, 0, 1}, every permutation of the
// atoms, every anchor translation.
inline bool directed_brute_force(const cifgen::CrystalStructure& a, const cifgen::CrystalStructure& b,
                                 const cifgen::MatchTolerances& tol) {
    const std::size_t n = a.sites.size();
    const Eigen::Matrix3d ma = a.lattice.matrix(), mb = b.lattice.matrix();
    const double angles_a[3] = {angle(ma.row(1), ma.row(2)), angle(ma.row(0), ma.row(2)), angle(ma.row(0), ma.row(1))};
    std::vector<std::size_t> perm(n);
    int digits[9];
    for (int code = 0; code < 19683; ++code) {
        int c = code;
        for (int& d : digits) {
            d = c % 3 - 1;
            c /= 3;
        }
        Eigen::Matrix3d s;
        s << digits[0], digits[1], digits[2], digits[3], digits[4], digits[5], digits[6], digits[7], digits[8];
        if (std::abs(s.determinant() - 1.0) > 1e-9) continue;
        const Eigen::Matrix3d m2 = s * mb;
        bool lattice_ok = true;
        for (int r = 0; r < 3 && lattice_ok; ++r)
            lattice_ok = std::abs(std::log(m2.row(r).norm() / ma.row(r).norm())) <= std::log(1 + tol.ltol);
        if (!lattice_ok) continue;
        if (std::abs(angle(m2.row(1), m2.row(2)) - angles_a[0]) > tol.angle_tol) continue;
        if (std::abs(angle(m2.row(0), m2.row(2)) - angles_a[1]) > tol.angle_tol) continue;
        if (std::abs(angle(m2.row(0), m2.row(1)) - angles_a[2]) > tol.angle_tol) continue;

        const Eigen::Matrix3d s_inv = s.inverse();
        std::vector<Eigen::Vector3d> fb;
        for (const auto& site : b.sites)
            fb.push_back((Eigen::RowVector3d(site.frac[0], site.frac[1], site.frac[2]) * s_inv).transpose());
        const cifgen::Lattice la = cifgen::Lattice::from_matrix(ma), lb = cifgen::Lattice::from_matrix(m2);
        const Eigen::Matrix3d avg = cifgen::Lattice{(la.a + lb.a) / 2, (la.b + lb.b) / 2, (la.c + lb.c) / 2,
                                                    (la.alpha + lb.alpha) / 2, (la.beta + lb.beta) / 2,
                                                    (la.gamma + lb.gamma) / 2}
                                        .matrix();
        const double threshold = tol.stol * std::cbrt(std::abs(avg.determinant()) / static_cast<double>(n));

        std::iota(perm.begin(), perm.end(), std::size_t{0});
        do {
            bool species = true;
            for (std::size_t i = 0; i < n && species; ++i) species = a.sites[i].element == b.sites[perm[i]].element;
            if (!species) continue;
            const Eigen::Vector3d fa0(a.sites[0].frac[0], a.sites[0].frac[1], a.sites[0].frac[2]);
            const Eigen::Vector3d shift = fa0 - fb[perm[0]];
            bool all = true;
            for (std::size_t i = 0; i < n && all; ++i) {
                const Eigen::Vector3d fa(a.sites[i].frac[0], a.sites[i].frac[1], a.sites[i].frac[2]);
                all = periodic_distance(fa - fb[perm[i]] - shift, avg) <= threshold;
            }
            if (all) return true;
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    return false;
}

inline bool brute_force_match(const cifgen::CrystalStructure& a, const cifgen::CrystalStructure& b,
                              const cifgen::MatchTolerances& tol = {}) {
    if (a.sites.size() != b.sites.size()) return false;
    if (cifgen::reduce(a.composition()) != cifgen::reduce(b.composition())) return false;
    return directed_brute_force(a, b, tol) && directed_brute_force(b, a, tol);
}

struct MatchFixture {
    std::string name;
    cifgen::CrystalStructure a, b;
    bool expected;
};

inline cifgen::CrystalStructure p1(cifgen::Lattice l, std::vector<cifgen::Site> sites) {
    return fixtures::structure("P1", l, std::move(sites));
}

inline cifgen::CrystalStructure shifted(cifgen::CrystalStructure s, double dx, double dy, double dz) {
    for (auto& site : s.sites) {
        site.frac[0] = cifgen::wrap_unit(site.frac[0] + dx);
        site.frac[1] = cifgen::wrap_unit(site.frac[1] + dy);
        site.frac[2] = cifgen::wrap_unit(site.frac[2] + dz);
    }
    return cifgen::standardize(s);
}

inline cifgen::CrystalStructure scaled(cifgen::CrystalStructure s, double f) {
    s.lattice.a *= f;
    s.lattice.b *= f;
    s.lattice.c *= f;
    return cifgen::standardize(s);
}

// Twenty hand-built pairs; the expected verdict is written down from the
// geometry, then also confirmed by the brute-force matcher.
inline std::vector<MatchFixture> match_fixtures() {
    using fixtures::site;
    std::vector<MatchFixture> f;
    const auto nacl = fixtures::rocksalt("Na", "Cl", 5.64);
    const auto cscl = fixtures::structure("Pm-3m", fixtures::cubic(4.12), {site("Cs", 0, 0, 0), site("Cl", 0.5, 0.5, 0.5)});
    const auto fe = fixtures::bcc("Fe", 2.87);
    const auto cu = fixtures::fcc("Cu", 3.61);
    const cifgen::Lattice tet{3.0, 3.0, 3.3, 90, 90, 90};
    const cifgen::Lattice hex{2.95, 2.95, 4.68, 90, 90, 120};
    const auto hcp = fixtures::structure("P6_3/mmc", hex, {site("Ti", 1.0 / 3, 2.0 / 3, 0.25), site("Ti", 2.0 / 3, 1.0 / 3, 0.75)});

    f.push_back({"identical rocksalt", nacl, nacl, true});
    f.push_back({"rocksalt 5% larger", nacl, scaled(nacl, 1.05), true});
    f.push_back({"rocksalt 50% larger", nacl, scaled(nacl, 1.5), false});
    f.push_back({"different chemistry", nacl, fixtures::rocksalt("K", "Cl", 5.64), false});
    f.push_back({"bcc origin shift", fe, shifted(fe, 0.13, 0.21, 0.4), true});
    {
        auto permuted = cu;
        std::reverse(permuted.sites.begin(), permuted.sites.end());
        f.push_back({"fcc site order", cu, permuted, true});
    }
    f.push_back({"tetragonal axis relabel", p1(tet, {site("Sn", 0, 0, 0), site("O", 0.5, 0.5, 0.3)}),
                 p1({3.3, 3.0, 3.0, 90, 90, 90}, {site("Sn", 0, 0, 0), site("O", 0.3, 0.5, 0.5)}), true});
    f.push_back({"tetragonal c/a 1.1 vs 1.6", p1(tet, {site("Sn", 0, 0, 0)}), p1({3.0, 3.0, 4.8, 90, 90, 90}, {site("Sn", 0, 0, 0)}), false});
    f.push_back({"orthorhombic vs 95 degree monoclinic",
                 p1({3.0, 4.0, 5.0, 90, 90, 90}, {site("Mg", 0, 0, 0), site("O", 0.5, 0.5, 0.5)}),
                 p1({3.0, 4.0, 5.0, 90, 95, 90}, {site("Mg", 0, 0, 0), site("O", 0.5, 0.5, 0.5)}), true});
    f.push_back({"orthorhombic vs 115 degree monoclinic",
                 p1({3.0, 4.0, 5.0, 90, 90, 90}, {site("Mg", 0, 0, 0), site("O", 0.5, 0.5, 0.5)}),
                 p1({3.0, 4.0, 5.0, 90, 115, 90}, {site("Mg", 0, 0, 0), site("O", 0.5, 0.5, 0.5)}), false});
    {
        auto jiggled = nacl;
        for (std::size_t i = 0; i < jiggled.sites.size(); ++i) jiggled.sites[i].frac[i % 3] = cifgen::wrap_unit(jiggled.sites[i].frac[i % 3] + 0.04);
        f.push_back({"rocksalt small displacements", nacl, cifgen::standardize(jiggled), true});
    }
    f.push_back({"caesium chloride vs anion at corner",
                 cscl, fixtures::structure("Pm-3m", fixtures::cubic(4.12), {site("Cs", 0.5, 0.5, 0.5), site("Cl", 0, 0, 0)}), true});
    f.push_back({"caesium chloride vs layered AB",
                 cscl, p1(fixtures::cubic(4.12), {site("Cs", 0, 0, 0), site("Cl", 0, 0, 0.5)}), false});
    f.push_back({"bcc primitive vs doubled cell", fe,
                 p1({5.74, 2.87, 2.87, 90, 90, 90}, {site("Fe", 0, 0, 0), site("Fe", 0.25, 0.5, 0.5), site("Fe", 0.5, 0, 0), site("Fe", 0.75, 0.5, 0.5)}),
                 false});
    f.push_back({"ordered supercells along different axes",
                 p1({6.0, 3.0, 3.0, 90, 90, 90}, {site("Cu", 0, 0, 0), site("Au", 0.5, 0, 0)}),
                 p1({3.0, 6.0, 3.0, 90, 90, 90}, {site("Au", 0, 0.5, 0), site("Cu", 0, 0, 0)}), true});
    f.push_back({"sheared description of the same lattice",
                 p1({3.0, 4.0, 5.0, 90, 90, 90}, {site("Zn", 0, 0, 0), site("S", 0.5, 0.5, 0.25)}),
                 p1({3.0, 4.0, std::sqrt(34.0), 90, std::acos(-3.0 / std::sqrt(34.0)) * 180 / std::numbers::pi, 90},
                    {site("Zn", 0, 0, 0), site("S", 0.75, 0.5, 0.25)}),
                 true});
    f.push_back({"hcp identical", hcp, hcp, true});
    f.push_back({"hcp c/a stretched 4%", hcp,
                 fixtures::structure("P6_3/mmc", {2.95, 2.95, 4.87, 90, 90, 120}, {site("Ti", 1.0 / 3, 2.0 / 3, 0.25), site("Ti", 2.0 / 3, 1.0 / 3, 0.75)}),
                 true});
    f.push_back({"hcp vs simple hexagonal pair", hcp,
                 fixtures::structure("P6/mmm", hex, {site("Ti", 0, 0, 0), site("Ti", 0, 0, 0.5)}), false});
    f.push_back({"perovskite-like AB vs BA sites",
                 p1(fixtures::cubic(3.9), {site("Sr", 0, 0, 0), site("Ti", 0.5, 0.5, 0.5), site("O", 0.5, 0.5, 0), site("O", 0.5, 0, 0.5), site("O", 0, 0.5, 0.5)}),
                 p1(fixtures::cubic(3.9), {site("Sr", 0, 0, 0), site("Ti", 0.5, 0.5, 0.5), site("O", 0.5, 0, 0), site("O", 0, 0.5, 0), site("O", 0, 0, 0.5)}),
                 false});
    return f;
}

}  // namespace oracles
