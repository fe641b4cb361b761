#include "cifgen/cif.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cifgen/assets.hpp"
#include "cifgen/error.hpp"
#include "cifgen/tags.hpp"
#include "cifgen/util.hpp"
#include "detail/text.hpp"

namespace cifgen {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// ---------------------------------------------------------------------------
// Lexing

struct Word {
    std::string text;
    bool quoted = false;
    int line = 0;
};

std::vector<Word> lex(std::string_view text) {
    std::vector<Word> words;
    int line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        std::size_t i = 0;
        while (i < line.size()) {
            const char ch = line[i];
            if (ch == ' ' || ch == '\t') {
                ++i;
                continue;
            }
            if (ch == '#') break;
            if (ch == ';' && i == 0)
                throw Error(ErrorCode::MalformedCif,
                            "line " + std::to_string(line_no) + ": semicolon text fields are not supported");
            if (ch == '\'' || ch == '"') {
                // A quote closes only when followed by whitespace or end of line.
                std::size_t j = i + 1;
                while (j < line.size() &&
                       !(line[j] == ch && (j + 1 == line.size() || line[j + 1] == ' ' || line[j + 1] == '\t')))
                    ++j;
                if (j >= line.size())
                    throw Error(ErrorCode::MalformedCif, "line " + std::to_string(line_no) + ": unterminated quote");
                words.push_back({std::string(line.substr(i + 1, j - i - 1)), true, line_no});
                i = j + 1;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
            words.push_back({std::string(line.substr(i, j - i)), false, line_no});
            i = j;
        }
    }
    return words;
}

bool is_tag(const Word& w) { return !w.quoted && !w.text.empty() && w.text.front() == '_'; }
bool is_keyword(const Word& w, std::string_view prefix) {
    return !w.quoted && w.text.size() >= prefix.size() && w.text.compare(0, prefix.size(), prefix) == 0;
}

// Tag -> column of values. Single items become one-element columns.
struct Block {
    std::string name;
    std::unordered_map<std::string, std::vector<Word>> columns;

    const std::vector<Word>* column(std::string_view tag) const {
        auto it = columns.find(std::string(tag));
        return it == columns.end() ? nullptr : &it->second;
    }
    const Word* single(std::string_view tag) const {
        const auto* col = column(tag);
        return (col && !col->empty()) ? &col->front() : nullptr;
    }
};

void check_tag(const Word& w) {
    if (!is_supported_tag(w.text))
        throw Error(ErrorCode::UnknownTag, "line " + std::to_string(w.line) + ": '" + w.text + "'");
}

Block read_block(std::string_view text) {
    const auto words = lex(text);
    Block block;
    bool have_block = false;
    std::size_t i = 0;
    auto add = [&](const Word& tag, std::vector<Word> values) {
        if (block.columns.count(tag.text))
            throw Error(ErrorCode::MalformedCif, "line " + std::to_string(tag.line) + ": duplicate tag " + tag.text);
        block.columns.emplace(tag.text, std::move(values));
    };
    while (i < words.size()) {
        const Word& w = words[i];
        if (is_keyword(w, "data_")) {
            if (have_block) throw Error(ErrorCode::MalformedCif, "more than one data_ block");
            have_block = true;
            block.name = w.text.substr(5);
            ++i;
            continue;
        }
        if (!have_block)
            throw Error(ErrorCode::MalformedCif, "line " + std::to_string(w.line) + ": content before data_");
        if (!w.quoted && w.text == "loop_") {
            ++i;
            std::vector<Word> tags;
            while (i < words.size() && is_tag(words[i])) {
                check_tag(words[i]);
                tags.push_back(words[i++]);
            }
            if (tags.empty()) throw Error(ErrorCode::MalformedCif, "line " + std::to_string(w.line) + ": empty loop_");
            std::vector<std::vector<Word>> cols(tags.size());
            std::size_t n = 0;
            while (i < words.size() && !is_tag(words[i]) && !is_keyword(words[i], "data_") &&
                   !(!words[i].quoted && words[i].text == "loop_")) {
                cols[n % tags.size()].push_back(words[i++]);
                ++n;
            }
            if (n % tags.size() != 0)
                throw Error(ErrorCode::MalformedCif,
                            "line " + std::to_string(w.line) + ": loop value count is not a multiple of its tags");
            for (std::size_t t = 0; t < tags.size(); ++t) add(tags[t], std::move(cols[t]));
            continue;
        }
        if (is_tag(w)) {
            check_tag(w);
            if (i + 1 >= words.size() || is_tag(words[i + 1]) || is_keyword(words[i + 1], "data_") ||
                (!words[i + 1].quoted && words[i + 1].text == "loop_"))
                throw Error(ErrorCode::MalformedCif, "line " + std::to_string(w.line) + ": " + w.text + " has no value");
            add(w, {words[i + 1]});
            i += 2;
            continue;
        }
        throw Error(ErrorCode::MalformedCif, "line " + std::to_string(w.line) + ": stray value '" + w.text + "'");
    }
    if (!have_block) throw Error(ErrorCode::MalformedCif, "no data_ block");
    return block;
}

// ---------------------------------------------------------------------------
// Field conversion

double to_number(const Word& w, std::string_view tag) {
    std::string_view s = w.text;
    // strip standard uncertainty: 4.6500(3)
    if (auto p = s.find('('); p != std::string_view::npos && s.back() == ')') s = s.substr(0, p);
    auto v = detail::parse_double(s);
    if (!v || !std::isfinite(*v))
        throw Error(ErrorCode::BadNumber, "line " + std::to_string(w.line) + ": " + std::string(tag) + " = '" + w.text + "'");
    return *v;
}

int to_int(const Word& w, std::string_view tag) {
    const double v = to_number(w, tag);
    if (v != std::floor(v) || std::abs(v) > 1e9)
        throw Error(ErrorCode::BadNumber, "line " + std::to_string(w.line) + ": " + std::string(tag) + " is not an integer");
    return static_cast<int>(v);
}

double required_number(const Block& b, std::string_view tag) {
    const Word* w = b.single(tag);
    if (!w) throw Error(ErrorCode::MissingTag, std::string(tag));
    return to_number(*w, tag);
}

// "Fe2+" -> ("Fe", 2); "O2-" -> ("O", -2); "Fe" -> ("Fe", nullopt)
std::pair<std::string, std::optional<int>> split_species(std::string_view s) {
    std::size_t n = 0;
    if (n < s.size() && std::isupper(static_cast<unsigned char>(s[n]))) ++n;
    if (n < s.size() && std::islower(static_cast<unsigned char>(s[n]))) ++n;
    std::string symbol(s.substr(0, n));
    std::string_view rest = s.substr(n);
    if (rest.empty()) return {symbol, std::nullopt};
    const char sign = rest.back();
    if (sign == '+' || sign == '-') {
        rest.remove_suffix(1);
        int mag = 1;
        if (!rest.empty()) {
            auto v = detail::parse_int(rest);
            if (!v) return {std::string(s), std::nullopt};
            mag = static_cast<int>(*v);
        }
        return {symbol, sign == '+' ? mag : -mag};
    }
    return {std::string(s), std::nullopt};
}

std::string element_from_label(std::string_view label) {
    std::size_t n = 0;
    if (n < label.size() && std::isupper(static_cast<unsigned char>(label[n]))) ++n;
    if (n < label.size() && std::islower(static_cast<unsigned char>(label[n]))) ++n;
    return std::string(label.substr(0, n));
}

std::string normalize_hm(std::string_view s) {
    std::string out;
    for (char c : s)
        if (c != ' ') out.push_back(c);
    return out;
}

bool frac_close(const Frac& a, const Frac& b, double tol) {
    for (int k = 0; k < 3; ++k) {
        double d = a[k] - b[k];
        d -= std::round(d);
        if (std::abs(d) > tol) return false;
    }
    return true;
}

std::string xyz_component(const Mat3& r, const Vec3& t, int row) {
    static const char* axes = "xyz";
    std::string s;
    for (int k = 0; k < 3; ++k) {
        const double c = r(row, k);
        if (c == 0) continue;
        if (c < 0)
            s += '-';
        else if (!s.empty())
            s += '+';
        if (std::abs(c) != 1) s += format_fixed(std::abs(c), 0);
        s += axes[k];
    }
    if (t[row] != 0) {
        // express as a small fraction when possible
        const double v = t[row];
        std::string frac;
        for (int den : {1, 2, 3, 4, 6, 8, 12}) {
            const double num = v * den;
            if (std::abs(num - std::round(num)) < 1e-9) {
                const long n = std::lround(num);
                frac = std::to_string(std::labs(n)) + (den == 1 ? "" : "/" + std::to_string(den));
                s += (n < 0 ? "-" : (s.empty() ? "" : "+"));
                s += frac;
                break;
            }
        }
        if (frac.empty()) s += (v < 0 ? "" : "+") + format_fixed(v, 4);
    }
    return s.empty() ? "0" : s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Lattice

void Lattice::validate() const {
    for (double len : {a, b, c})
        if (!(len > 0) || !std::isfinite(len))
            throw Error(ErrorCode::InvariantViolation, "cell lengths must be positive, got " + format_fixed(len, 4));
    for (double ang : {alpha, beta, gamma})
        if (!(ang > 0 && ang < 180))
            throw Error(ErrorCode::InvariantViolation, "cell angles must lie in (0, 180), got " + format_fixed(ang, 4));
    const double v = volume();
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorCode::InvariantViolation, "cell volume is not positive");
}

double Lattice::volume() const noexcept {
    const double ca = std::cos(alpha * kDeg), cb = std::cos(beta * kDeg), cg = std::cos(gamma * kDeg);
    const double arg = 1 - ca * ca - cb * cb - cg * cg + 2 * ca * cb * cg;
    return arg > 0 ? a * b * c * std::sqrt(arg) : std::numeric_limits<double>::quiet_NaN();
}

Mat3 Lattice::matrix() const noexcept {
    const double ca = std::cos(alpha * kDeg), cb = std::cos(beta * kDeg);
    const double cg = std::cos(gamma * kDeg), sg = std::sin(gamma * kDeg);
    const double cy = (ca - cb * cg) / sg;
    const double cz2 = 1 - cb * cb - cy * cy;
    Mat3 m;
    m << a, 0, 0,                    //
        b * cg, b * sg, 0,           //
        c * cb, c * cy, c * std::sqrt(std::max(cz2, 0.0));
    return m;
}

Mat3 Lattice::metric() const noexcept {
    const Mat3 m = matrix();
    return m * m.transpose();
}

Lattice Lattice::from_matrix(const Mat3& rows) noexcept {
    const Vec3 va = rows.row(0), vb = rows.row(1), vc = rows.row(2);
    auto angle = [](const Vec3& u, const Vec3& v) {
        const double c = std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0);
        return std::acos(c) / kDeg;
    };
    return Lattice{va.norm(), vb.norm(), vc.norm(), angle(vb, vc), angle(va, vc), angle(va, vb)};
}

// ---------------------------------------------------------------------------
// Symmetry operators

SymmetryOp SymmetryOp::parse(std::string_view xyz) {
    SymmetryOp op;
    op.rotation.setZero();
    op.translation.setZero();
    auto parts = detail::split(xyz, ',');
    if (parts.size() != 3) throw Error(ErrorCode::MalformedCif, "symmetry operator '" + std::string(xyz) + "'");
    for (int row = 0; row < 3; ++row) {
        std::string_view p = parts[row];
        std::size_t i = 0;
        while (i < p.size()) {
            double sign = 1;
            while (i < p.size() && (p[i] == '+' || p[i] == '-' || p[i] == ' ')) {
                if (p[i] == '-') sign = -sign;
                ++i;
            }
            std::size_t j = i;
            while (j < p.size() && (std::isdigit(static_cast<unsigned char>(p[j])) || p[j] == '.' || p[j] == '/')) ++j;
            double coef = 1;
            bool has_number = j > i;
            if (has_number) {
                std::string_view num = p.substr(i, j - i);
                if (auto slash = num.find('/'); slash != std::string_view::npos) {
                    auto n = detail::parse_double(num.substr(0, slash));
                    auto d = detail::parse_double(num.substr(slash + 1));
                    if (!n || !d || *d == 0) throw Error(ErrorCode::BadNumber, "symmetry operator '" + std::string(xyz) + "'");
                    coef = *n / *d;
                } else {
                    auto n = detail::parse_double(num);
                    if (!n) throw Error(ErrorCode::BadNumber, "symmetry operator '" + std::string(xyz) + "'");
                    coef = *n;
                }
            }
            i = j;
            if (i < p.size() && p[i] == '*') ++i;
            if (i < p.size() && (p[i] == 'x' || p[i] == 'y' || p[i] == 'z' || p[i] == 'X' || p[i] == 'Y' || p[i] == 'Z')) {
                const int axis = std::tolower(static_cast<unsigned char>(p[i])) - 'x';
                op.rotation(row, axis) += sign * coef;
                ++i;
            } else if (has_number) {
                op.translation[row] += sign * coef;
            } else if (i < p.size()) {
                throw Error(ErrorCode::MalformedCif, "symmetry operator '" + std::string(xyz) + "'");
            }
        }
    }
    op.text.clear();
    for (int row = 0; row < 3; ++row) {
        if (row) op.text += ", ";
        op.text += xyz_component(op.rotation, op.translation, row);
    }
    return op;
}

bool SymmetryOp::is_identity() const noexcept {
    return rotation == Mat3::Identity() && translation.isZero();
}

Frac SymmetryOp::apply(const Frac& f) const noexcept {
    const Vec3 v = rotation * Vec3(f[0], f[1], f[2]) + translation;
    return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// Structure

Composition CrystalStructure::composition() const {
    Composition c;
    for (const auto& s : sites) c[s.element] += s.multiplicity;
    return c;
}

std::size_t CrystalStructure::atom_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sites) n += static_cast<std::size_t>(s.multiplicity);
    return n;
}

double wrap_unit(double x) noexcept {
    double w = x - std::floor(x);
    if (w >= 1.0) w = 0.0;
    return w;
}

CrystalStructure parse_cif(std::string_view text, const ParseOptions& options) {
    const Block b = read_block(text);
    CrystalStructure s;
    s.data_name = b.name;

    s.lattice.a = required_number(b, "_cell_length_a");
    s.lattice.b = required_number(b, "_cell_length_b");
    s.lattice.c = required_number(b, "_cell_length_c");
    s.lattice.alpha = required_number(b, "_cell_angle_alpha");
    s.lattice.beta = required_number(b, "_cell_angle_beta");
    s.lattice.gamma = required_number(b, "_cell_angle_gamma");
    s.lattice.validate();

    const Word* hm = b.single("_symmetry_space_group_name_H-M");
    if (!hm) throw Error(ErrorCode::MissingTag, "_symmetry_space_group_name_H-M");
    s.spacegroup_symbol = normalize_hm(hm->text);
    const SpaceGroupInfo* group = find_space_group(s.spacegroup_symbol);
    if (!group && options.strict_space_group)
        throw Error(ErrorCode::UnknownSpaceGroup, "'" + s.spacegroup_symbol + "'");
    if (const Word* num = b.single("_symmetry_Int_Tables_number"))
        s.spacegroup_number = to_int(*num, "_symmetry_Int_Tables_number");
    else if (group)
        s.spacegroup_number = group->number;

    if (const Word* v = b.single("_cell_volume")) s.declared_volume = to_number(*v, "_cell_volume");
    if (const Word* w = b.single("_chemical_formula_sum")) s.formula_sum = w->text;
    if (const Word* w = b.single("_chemical_formula_structural")) s.formula_structural = w->text;

    // atom sites
    const auto* xs = b.column("_atom_site_fract_x");
    const auto* ys = b.column("_atom_site_fract_y");
    const auto* zs = b.column("_atom_site_fract_z");
    if (!xs) throw Error(ErrorCode::MissingTag, "_atom_site_fract_x");
    if (!ys) throw Error(ErrorCode::MissingTag, "_atom_site_fract_y");
    if (!zs) throw Error(ErrorCode::MissingTag, "_atom_site_fract_z");
    const auto* types = b.column("_atom_site_type_symbol");
    const auto* labels = b.column("_atom_site_label");
    if (!types && !labels) throw Error(ErrorCode::MissingTag, "_atom_site_type_symbol");
    const auto* occ = b.column("_atom_site_occupancy");
    const auto* mult = b.column("_atom_site_symmetry_multiplicity");
    const std::size_t n = xs->size();
    auto same_len = [&](const std::vector<Word>* col, std::string_view tag) {
        if (col && col->size() != n)
            throw Error(ErrorCode::MalformedCif, std::string(tag) + " column length differs from _atom_site_fract_x");
    };
    same_len(ys, "_atom_site_fract_y");
    same_len(zs, "_atom_site_fract_z");
    same_len(types, "_atom_site_type_symbol");
    same_len(labels, "_atom_site_label");
    same_len(occ, "_atom_site_occupancy");
    same_len(mult, "_atom_site_symmetry_multiplicity");
    if (n == 0) throw Error(ErrorCode::MissingTag, "_atom_site_fract_x has no rows");

    s.sites.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Site site;
        if (types) {
            auto [symbol, ox] = split_species((*types)[i].text);
            site.element = symbol;
            site.oxidation_state = ox;
        } else {
            site.element = element_from_label((*labels)[i].text);
        }
        if (!find_element(site.element))
            throw Error(ErrorCode::UnknownElement, "line " + std::to_string((types ? *types : *labels)[i].line) +
                                                       ": '" + site.element + "'");
        site.label = labels ? (*labels)[i].text : site.element + std::to_string(i);
        site.frac = {to_number((*xs)[i], "_atom_site_fract_x"), to_number((*ys)[i], "_atom_site_fract_y"),
                     to_number((*zs)[i], "_atom_site_fract_z")};
        if (occ) site.occupancy = to_number((*occ)[i], "_atom_site_occupancy");
        if (mult) {
            site.multiplicity = to_int((*mult)[i], "_atom_site_symmetry_multiplicity");
            if (site.multiplicity < 1)
                throw Error(ErrorCode::InvariantViolation, "site multiplicity must be positive");
        }
        s.sites.push_back(std::move(site));
    }

    if (const Word* z = b.single("_cell_formula_units_Z"))
        s.formula_units_z = to_int(*z, "_cell_formula_units_Z");
    else
        s.formula_units_z = formula_units(s.composition());

    if (const auto* ops = b.column("_symmetry_equiv_pos_as_xyz")) {
        for (const auto& w : *ops) s.symmetry_ops.push_back(SymmetryOp::parse(w.text));
        // an identity-only loop says nothing; dropping it makes parse(write(s)) == s
        if (std::all_of(s.symmetry_ops.begin(), s.symmetry_ops.end(), [](const SymmetryOp& op) { return op.is_identity(); }))
            s.symmetry_ops.clear();
    }

    if (const auto* sym = b.column("_atom_type_symbol")) {
        const auto* en = b.column("_atom_type_electronegativity");
        const auto* rad = b.column("_atom_type_radius");
        const auto* ion = b.column("_atom_type_ionic_radius");
        for (std::size_t i = 0; i < sym->size(); ++i) {
            AtomTypeProps p;
            p.element = split_species((*sym)[i].text).first;
            if (!find_element(p.element)) throw Error(ErrorCode::UnknownElement, "'" + p.element + "'");
            if (en && i < en->size()) p.electronegativity = to_number((*en)[i], "_atom_type_electronegativity");
            if (rad && i < rad->size()) p.radius = to_number((*rad)[i], "_atom_type_radius");
            if (ion && i < ion->size()) p.ionic_radius = to_number((*ion)[i], "_atom_type_ionic_radius");
            s.atom_types.push_back(std::move(p));
        }
    }
    return s;
}

CrystalStructure standardize(const CrystalStructure& in) {
    CrystalStructure s;
    in.lattice.validate();

    for (const auto& site : in.sites) {
        if (!find_element(site.element)) throw Error(ErrorCode::UnsupportedElement, "'" + site.element + "'");
        if (site.occupancy != 1.0)
            throw Error(ErrorCode::PartialOccupancy,
                        "site " + site.label + " has occupancy " + format_fixed(site.occupancy, 4));
    }

    const SpaceGroupInfo* group = find_space_group(in.spacegroup_symbol);
    if (!group) throw Error(ErrorCode::UnknownSpaceGroup, "'" + in.spacegroup_symbol + "'");
    s.spacegroup_symbol = group->symbol;
    s.spacegroup_number = group->number;

    s.lattice = Lattice{round_to(in.lattice.a, 4),     round_to(in.lattice.b, 4),    round_to(in.lattice.c, 4),
                        round_to(in.lattice.alpha, 4), round_to(in.lattice.beta, 4), round_to(in.lattice.gamma, 4)};
    s.lattice.validate();

    const bool expand = std::any_of(in.symmetry_ops.begin(), in.symmetry_ops.end(),
                                    [](const SymmetryOp& op) { return !op.is_identity(); });
    std::vector<Site> sites;
    for (const auto& site : in.sites) {
        if (!expand) {
            Site out = site;
            out.oxidation_state.reset();
            for (auto& x : out.frac) x = wrap_unit(round_to(wrap_unit(x), 4));
            sites.push_back(std::move(out));
            continue;
        }
        std::vector<Frac> orbit;
        for (const auto& op : in.symmetry_ops) {
            Frac f = op.apply(site.frac);
            for (auto& x : f) x = wrap_unit(x);
            if (std::none_of(orbit.begin(), orbit.end(), [&](const Frac& g) { return frac_close(f, g, 1e-4); }))
                orbit.push_back(f);
        }
        for (const auto& f : orbit) {
            Site out;
            out.element = site.element;
            out.frac = f;
            for (auto& x : out.frac) x = wrap_unit(round_to(x, 4));
            sites.push_back(std::move(out));
        }
    }

    std::stable_sort(sites.begin(), sites.end(), [](const Site& l, const Site& r) {
        const int zl = element(l.element).z, zr = element(r.element).z;
        if (zl != zr) return zl < zr;
        if (l.frac != r.frac) return l.frac < r.frac;
        return l.multiplicity < r.multiplicity;
    });
    for (std::size_t i = 0; i < sites.size(); ++i) {
        sites[i].label = sites[i].element + std::to_string(i);
        sites[i].occupancy = 1.0;
    }
    s.sites = std::move(sites);

    const Composition comp = s.composition();
    s.data_name = formula_compact(comp);
    s.formula_sum = formula_spaced(comp);
    s.formula_structural = formula_reduced(comp);
    s.formula_units_z = formula_units(comp);
    s.declared_volume = round_to(s.lattice.volume(), 4);
    for (const auto& [symbol, count] : sorted_by_z(comp)) {
        const auto& e = element(symbol);
        s.atom_types.push_back({symbol, round_to(e.electronegativity, 4), round_to(e.atomic_radius, 4),
                                round_to(e.ionic_radius, 4)});
    }
    return s;
}

std::string write_cif(const CrystalStructure& s) {
    std::ostringstream out;
    const Composition comp = s.composition();
    out << "data_" << (s.data_name.empty() ? formula_compact(comp) : s.data_name) << '\n';
    out << "_symmetry_space_group_name_H-M " << s.spacegroup_symbol << '\n';
    out << "_symmetry_Int_Tables_number " << s.spacegroup_number << '\n';
    out << "_cell_length_a " << format_fixed(s.lattice.a, 4) << '\n';
    out << "_cell_length_b " << format_fixed(s.lattice.b, 4) << '\n';
    out << "_cell_length_c " << format_fixed(s.lattice.c, 4) << '\n';
    out << "_cell_angle_alpha " << format_fixed(s.lattice.alpha, 4) << '\n';
    out << "_cell_angle_beta " << format_fixed(s.lattice.beta, 4) << '\n';
    out << "_cell_angle_gamma " << format_fixed(s.lattice.gamma, 4) << '\n';
    out << "_cell_volume " << format_fixed(s.declared_volume.value_or(s.lattice.volume()), 4) << '\n';
    out << "_cell_formula_units_Z " << (s.formula_units_z > 0 ? s.formula_units_z : formula_units(comp)) << '\n';
    out << "_chemical_formula_structural "
        << (s.formula_structural.empty() ? formula_reduced(comp) : s.formula_structural) << '\n';
    out << "_chemical_formula_sum '" << (s.formula_sum.empty() ? formula_spaced(comp) : s.formula_sum) << "'\n";
    if (!s.atom_types.empty()) {
        out << "loop_\n_atom_type_symbol\n_atom_type_electronegativity\n_atom_type_radius\n_atom_type_ionic_radius\n";
        for (const auto& t : s.atom_types)
            out << t.element << ' ' << format_fixed(t.electronegativity, 4) << ' ' << format_fixed(t.radius, 4) << ' '
                << format_fixed(t.ionic_radius, 4) << '\n';
    }
    out << "loop_\n_symmetry_equiv_pos_site_id\n_symmetry_equiv_pos_as_xyz\n";
    if (s.symmetry_ops.empty()) {
        out << "1 'x, y, z'\n";
    } else {
        for (std::size_t i = 0; i < s.symmetry_ops.size(); ++i)
            out << i + 1 << " '" << s.symmetry_ops[i].text << "'\n";
    }
    out << "loop_\n_atom_site_type_symbol\n_atom_site_label\n_atom_site_symmetry_multiplicity\n"
           "_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n_atom_site_occupancy\n";
    for (const auto& site : s.sites)
        out << site.element << ' ' << site.label << ' ' << site.multiplicity << ' ' << format_fixed(site.frac[0], 4)
            << ' ' << format_fixed(site.frac[1], 4) << ' ' << format_fixed(site.frac[2], 4) << ' '
            << format_fixed(site.occupancy, 4) << '\n';
    out << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Formulae

std::vector<std::pair<std::string, int>> sorted_by_z(const Composition& c) {
    std::vector<std::pair<std::string, int>> v(c.begin(), c.end());
    std::sort(v.begin(), v.end(), [](const auto& l, const auto& r) {
        const auto* el = find_element(l.first);
        const auto* er = find_element(r.first);
        const int zl = el ? el->z : 1000, zr = er ? er->z : 1000;
        return zl != zr ? zl < zr : l.first < r.first;
    });
    return v;
}

std::string formula_compact(const Composition& c) {
    std::string s;
    for (const auto& [el, n] : sorted_by_z(c)) s += el + std::to_string(n);
    return s;
}

std::string formula_spaced(const Composition& c) {
    std::string s;
    for (const auto& [el, n] : sorted_by_z(c)) {
        if (!s.empty()) s += ' ';
        s += el + std::to_string(n);
    }
    return s;
}

int formula_units(const Composition& c) {
    int g = 0;
    for (const auto& [el, n] : c) g = std::gcd(g, n);
    return g;
}

Composition reduce(const Composition& c) {
    const int g = formula_units(c);
    Composition r;
    if (g == 0) return r;
    for (const auto& [el, n] : c)
        if (n != 0) r[el] = n / g;
    return r;
}

std::string formula_reduced(const Composition& c) {
    std::string s;
    for (const auto& [el, n] : sorted_by_z(reduce(c))) {
        s += el;
        if (n != 1) s += std::to_string(n);
    }
    return s;
}

Composition parse_formula(std::string_view text) {
    Composition c;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == ' ') {
            ++i;
            continue;
        }
        if (!std::isupper(static_cast<unsigned char>(text[i])))
            throw Error(ErrorCode::MalformedCif, "formula '" + std::string(text) + "'");
        std::size_t j = i + 1;
        if (j < text.size() && std::islower(static_cast<unsigned char>(text[j]))) ++j;
        const std::string symbol(text.substr(i, j - i));
        if (!find_element(symbol)) throw Error(ErrorCode::UnknownElement, "'" + symbol + "' in formula");
        std::size_t k = j;
        while (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) ++k;
        int count = 1;
        if (k > j) {
            auto v = detail::parse_int(text.substr(j, k - j));
            if (!v || *v <= 0 || *v > 100000)
                throw Error(ErrorCode::MalformedCif, "formula '" + std::string(text) + "'");
            count = static_cast<int>(*v);
        }
        if (k < text.size() && text[k] == '.') throw Error(ErrorCode::MalformedCif, "fractional formula counts");
        c[symbol] += count;
        i = k;
    }
    if (c.empty()) throw Error(ErrorCode::MalformedCif, "empty formula");
    return c;
}

}  // namespace cifgen
