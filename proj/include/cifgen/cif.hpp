#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cifgen {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Frac = std::array<double, 3>;

/// Unit-cell parameters. Lengths in angstrom, angles in degrees.
struct Lattice {
    double a = 0, b = 0, c = 0;
    double alpha = 90, beta = 90, gamma = 90;

    /// Throws InvariantViolation unless lengths are positive, angles lie in
    /// (0, 180) and the cell volume is positive and finite.
    void validate() const;

    double volume() const noexcept;

    /// Rows are the lattice vectors in Cartesian coordinates with a along x
    /// and b in the xy plane.
    Mat3 matrix() const noexcept;

    /// G = M M^T.
    Mat3 metric() const noexcept;

    static Lattice from_matrix(const Mat3& rows) noexcept;

    bool operator==(const Lattice&) const = default;
};

struct Site {
    std::string element;
    std::string label;
    Frac frac{};
    double occupancy = 1.0;
    int multiplicity = 1;
    std::optional<int> oxidation_state;  // parsed decoration, removed by standardize

    bool operator==(const Site&) const = default;
};

/// Affine operator in fractional coordinates, parsed from
/// `_symmetry_equiv_pos_as_xyz` strings such as "-x+1/2, y, z".
struct SymmetryOp {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    std::string text = "x, y, z";

    static SymmetryOp parse(std::string_view xyz);
    bool is_identity() const noexcept;
    Frac apply(const Frac& f) const noexcept;

    bool operator==(const SymmetryOp& o) const { return text == o.text; }
};

/// Per-element properties appended to standardized CIFs.
struct AtomTypeProps {
    std::string element;
    double electronegativity = 0;
    double radius = 0;
    double ionic_radius = 0;

    bool operator==(const AtomTypeProps&) const = default;
};

/// Element symbol -> atom count.
using Composition = std::map<std::string, int>;

/// A parsed or standardized crystal. Fields beyond the lattice and sites keep
/// what the CIF declared so validity checks can compare declared against
/// derived values.
struct CrystalStructure {
    std::string data_name;
    Lattice lattice;
    std::vector<Site> sites;
    std::string spacegroup_symbol;
    int spacegroup_number = 0;
    int formula_units_z = 0;
    std::vector<SymmetryOp> symmetry_ops;
    std::vector<AtomTypeProps> atom_types;
    std::string formula_sum;
    std::string formula_structural;
    std::optional<double> declared_volume;

    /// Multiplicity-weighted site elements.
    Composition composition() const;

    std::size_t atom_count() const noexcept;

    bool operator==(const CrystalStructure&) const = default;
};

struct ParseOptions {
    /// When false, an unknown space-group symbol is kept verbatim instead of
    /// raising UnknownSpaceGroup, so validity checks can score it.
    bool strict_space_group = true;
};

/// Parses one `data_` block of the supported CIF subset.
///
/// Only the closed tag set of the tokenizer vocabulary is accepted; any other
/// tag raises UnknownTag. Numeric fields may carry a parenthesised standard
/// uncertainty, which is discarded.
CrystalStructure parse_cif(std::string_view text, const ParseOptions& options = {});

/// Applies the uniform conversion pipeline: symmetry expansion, oxidation
/// decorations dropped, full occupancy enforced, coordinates wrapped into
/// [0,1), every float rounded to four decimals, sites ordered by atomic
/// number then position, formula fields regenerated and element properties
/// attached. Idempotent.
CrystalStructure standardize(const CrystalStructure& s);

/// Canonical CIF text. Deterministic; every float has four decimals and the
/// document ends with an empty line.
std::string write_cif(const CrystalStructure& s);

// Formula helpers. Elements are ordered by ascending atomic number.
std::vector<std::pair<std::string, int>> sorted_by_z(const Composition& c);
std::string formula_compact(const Composition& c);  // "O4Ti2"
std::string formula_spaced(const Composition& c);   // "O4 Ti2"
std::string formula_reduced(const Composition& c);  // "O2Ti"
Composition reduce(const Composition& c);
int formula_units(const Composition& c);  // gcd of counts
/// Parses "O4 Ti2", "TiO2" or "Fe"; throws UnknownElement / MalformedCif.
Composition parse_formula(std::string_view text);

/// Wraps into [0, 1).
double wrap_unit(double x) noexcept;

}  // namespace cifgen
