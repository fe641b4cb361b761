#pragma once

#include <array>
#include <string_view>

namespace cifgen {

/// The closed CIF tag set: the only tags the parser accepts and the only tag
/// tokens in the vocabulary. Order is the vocabulary order.
inline constexpr std::array<std::string_view, 31> kCifTags = {
    "data_",
    "loop_",
    "_symmetry_space_group_name_H-M",
    "_symmetry_Int_Tables_number",
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
    "_cell_volume",
    "_atom_site_fract_x",
    "_atom_site_fract_y",
    "_atom_site_fract_z",
    "_atom_site_occupancy",
    "_symmetry_equiv_pos_as_xyz",
    "_chemical_formula_structural",
    "_cell_formula_units_Z",
    "_chemical_name_systematic",
    "_chemical_formula_sum",
    "_atom_site_symmetry_multiplicity",
    "_atom_site_attached_hydrogens",
    "_atom_site_label",
    "_atom_site_type_symbol",
    "_atom_site_B_iso_or_equiv",
    "_symmetry_equiv_pos_site_id",
    "_atom_type_symbol",
    "_atom_type_electronegativity",
    "_atom_type_radius",
    "_atom_type_ionic_radius",
    "_atom_type_oxidation_number",
};

constexpr bool is_supported_tag(std::string_view tag) noexcept {
    for (auto t : kCifTags)
        if (t == tag) return true;
    return false;
}

}  // namespace cifgen
