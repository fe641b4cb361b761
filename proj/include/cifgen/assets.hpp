#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>

namespace cifgen {

/// One row of data/elements.csv.
///
/// Column order: symbol, z, electronegativity (Pauling), atomic_radius,
/// covalent_radius, ionic_radius. Radii are in angstrom.
struct ElementInfo {
    std::string symbol;
    int z = 0;
    double electronegativity = 0.0;
    double atomic_radius = 0.0;
    double covalent_radius = 0.0;
    double ionic_radius = 0.0;
};

/// One row of data/spacegroups.csv: number, Hermann-Mauguin symbol, crystal system.
struct SpaceGroupInfo {
    int number = 0;
    std::string symbol;
    std::string crystal_system;
};

/// Four-Gaussian X-ray form factor, one row of data/cromer_mann.csv.
struct CromerMann {
    std::array<double, 4> a{};
    std::array<double, 4> b{};
    double c = 0.0;

    /// f(s) with s = sin(theta)/lambda in 1/angstrom.
    double operator()(double s) const noexcept;
};

// Tables are parsed once from the embedded CSV assets; lookups are thread-safe.
std::span<const ElementInfo> elements();
const ElementInfo* find_element(std::string_view symbol) noexcept;
const ElementInfo& element(std::string_view symbol);  // throws UnknownElement

std::span<const SpaceGroupInfo> space_groups();
const SpaceGroupInfo* find_space_group(std::string_view symbol) noexcept;
const SpaceGroupInfo* find_space_group(int number) noexcept;

const CromerMann* find_cromer_mann(std::string_view symbol) noexcept;

/// Raw asset text as shipped, for tools that re-export the tables.
std::string_view elements_csv() noexcept;
std::string_view spacegroups_csv() noexcept;
std::string_view cromer_mann_csv() noexcept;

}  // namespace cifgen
