#pragma once

#include <string>
#include <vector>

#include "cifgen/cif.hpp"

namespace fixtures {

inline cifgen::Site site(const std::string& element, double x, double y, double z) {
    cifgen::Site s;
    s.element = element;
    s.frac = {x, y, z};
    return s;
}

inline cifgen::CrystalStructure structure(const std::string& sg, cifgen::Lattice lattice,
                                          std::vector<cifgen::Site> sites) {
    cifgen::CrystalStructure s;
    s.spacegroup_symbol = sg;
    s.lattice = lattice;
    s.sites = std::move(sites);
    return cifgen::standardize(s);
}

inline cifgen::Lattice cubic(double a) { return {a, a, a, 90, 90, 90}; }

inline cifgen::CrystalStructure simple_cubic(const std::string& el, double a) {
    return structure("Pm-3m", cubic(a), {site(el, 0, 0, 0)});
}

inline cifgen::CrystalStructure bcc(const std::string& el, double a) {
    return structure("Im-3m", cubic(a), {site(el, 0, 0, 0), site(el, 0.5, 0.5, 0.5)});
}

inline cifgen::CrystalStructure fcc(const std::string& el, double a) {
    return structure("Fm-3m", cubic(a),
                     {site(el, 0, 0, 0), site(el, 0.5, 0.5, 0), site(el, 0.5, 0, 0.5), site(el, 0, 0.5, 0.5)});
}

inline cifgen::CrystalStructure rocksalt(const std::string& a, const std::string& b, double len) {
    std::vector<cifgen::Site> sites;
    for (auto f : {cifgen::Frac{0, 0, 0}, cifgen::Frac{0.5, 0.5, 0}, cifgen::Frac{0.5, 0, 0.5}, cifgen::Frac{0, 0.5, 0.5}}) {
        sites.push_back(site(a, f[0], f[1], f[2]));
        sites.push_back(site(b, cifgen::wrap_unit(f[0] + 0.5), f[1], f[2]));
    }
    return structure("Fm-3m", cubic(len), sites);
}

}  // namespace fixtures
