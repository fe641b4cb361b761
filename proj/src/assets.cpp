#include "cifgen/assets.hpp"

#include <charconv>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "cifgen/embedded_assets.hpp"
#include "cifgen/error.hpp"
#include "detail/text.hpp"

namespace cifgen {

namespace {

// Splits a CSV asset into rows of fields, skipping '#' comments and the header.
std::vector<std::vector<std::string_view>> csv_rows(std::string_view text) {
    std::vector<std::vector<std::string_view>> rows;
    bool header_seen = false;
    for (std::string_view line : detail::split_lines(text)) {
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        rows.push_back(detail::split(line, ','));
    }
    return rows;
}

double number(std::string_view field) {
    auto value = detail::parse_double(field);
    if (!value) throw Error(ErrorCode::BadNumber, "asset field '" + std::string(field) + "'");
    return *value;
}

struct Tables {
    std::vector<ElementInfo> elements;
    std::unordered_map<std::string, std::size_t> element_index;
    std::vector<SpaceGroupInfo> groups;
    std::unordered_map<std::string, std::size_t> group_index;
    std::unordered_map<std::string, CromerMann> form_factors;

    Tables() {
        for (const auto& f : csv_rows(embedded::elements_csv)) {
            ElementInfo e;
            e.symbol = std::string(f.at(0));
            e.z = static_cast<int>(number(f.at(1)));
            e.electronegativity = number(f.at(2));
            e.atomic_radius = number(f.at(3));
            e.covalent_radius = number(f.at(4));
            e.ionic_radius = number(f.at(5));
            element_index.emplace(e.symbol, elements.size());
            elements.push_back(std::move(e));
        }
        for (const auto& f : csv_rows(embedded::spacegroups_csv)) {
            SpaceGroupInfo g;
            g.number = static_cast<int>(number(f.at(0)));
            g.symbol = std::string(f.at(1));
            g.crystal_system = std::string(f.at(2));
            group_index.emplace(g.symbol, groups.size());
            groups.push_back(std::move(g));
        }
        for (const auto& f : csv_rows(embedded::cromer_mann_csv)) {
            CromerMann cm;
            for (int i = 0; i < 4; ++i) {
                cm.a[i] = number(f.at(1 + i));
                cm.b[i] = number(f.at(5 + i));
            }
            cm.c = number(f.at(9));
            form_factors.emplace(std::string(f.at(0)), cm);
        }
    }
};

const Tables& tables() {
    static const Tables t;
    return t;
}

}  // namespace

double CromerMann::operator()(double s) const noexcept {
    const double s2 = s * s;
    double f = c;
    for (int i = 0; i < 4; ++i) f += a[i] * std::exp(-b[i] * s2);
    return f;
}

std::span<const ElementInfo> elements() { return tables().elements; }

const ElementInfo* find_element(std::string_view symbol) noexcept {
    const auto& t = tables();
    auto it = t.element_index.find(std::string(symbol));
    return it == t.element_index.end() ? nullptr : &t.elements[it->second];
}

const ElementInfo& element(std::string_view symbol) {
    if (const auto* e = find_element(symbol)) return *e;
    throw Error(ErrorCode::UnknownElement, "'" + std::string(symbol) + "'");
}

std::span<const SpaceGroupInfo> space_groups() { return tables().groups; }

const SpaceGroupInfo* find_space_group(std::string_view symbol) noexcept {
    const auto& t = tables();
    auto it = t.group_index.find(std::string(symbol));
    return it == t.group_index.end() ? nullptr : &t.groups[it->second];
}

const SpaceGroupInfo* find_space_group(int number) noexcept {
    const auto& g = tables().groups;
    if (number < 1 || number > static_cast<int>(g.size())) return nullptr;
    return &g[number - 1];
}

const CromerMann* find_cromer_mann(std::string_view symbol) noexcept {
    const auto& t = tables();
    auto it = t.form_factors.find(std::string(symbol));
    return it == t.form_factors.end() ? nullptr : &it->second;
}

std::string_view elements_csv() noexcept { return embedded::elements_csv; }
std::string_view spacegroups_csv() noexcept { return embedded::spacegroups_csv; }
std::string_view cromer_mann_csv() noexcept { return embedded::cromer_mann_csv; }

}  // namespace cifgen
