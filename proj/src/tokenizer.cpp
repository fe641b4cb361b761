#include "cifgen/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "cifgen/assets.hpp"
#include "cifgen/error.hpp"
#include "cifgen/tags.hpp"
#include "cifgen/util.hpp"

namespace cifgen {

namespace {

constexpr std::array<std::string_view, 89> kAtoms = {
    "Si", "C",  "Pb", "I",  "Br", "Cl", "Eu", "O",  "Fe", "Sb", "In", "S",  "N",  "U",  "Mn", "Lu", "Se", "Tl",
    "Hf", "Ir", "Ca", "Ta", "Cr", "K",  "Pm", "Mg", "Zn", "Cu", "Sn", "Ti", "B",  "W",  "P",  "H",  "Pd", "As",
    "Co", "Np", "Tc", "Hg", "Pu", "Al", "Tm", "Tb", "Ho", "Nb", "Ge", "Zr", "Cd", "V",  "Sr", "Ni", "Rh", "Th",
    "Na", "Ru", "La", "Re", "Y",  "Er", "Ce", "Pt", "Ga", "Li", "Cs", "F",  "Ba", "Te", "Mo", "Gd", "Pr", "Bi",
    "Sc", "Ag", "Rb", "Dy", "Yb", "Nd", "Au", "Os", "Pa", "Sm", "Be", "Ac", "Xe", "Kr", "He", "Ne", "Ar",
};

constexpr std::array<std::string_view, 10> kDigits = {"1", "2", "3", "4", "5", "6", "7", "8", "9", "0"};

}  // namespace

std::string_view to_string(TokenCategory c) noexcept {
    switch (c) {
        case TokenCategory::Atom: return "atom";
        case TokenCategory::CifTag: return "cif_tag";
        case TokenCategory::SpaceGroup: return "spacegroup";
        case TokenCategory::Digit: return "digit";
        case TokenCategory::Special: return "special";
    }
    return "special";
}

Vocabulary::Vocabulary() {
    auto add = [&](TokenCategory cat, std::string token, std::string text) {
        const int id = static_cast<int>(entries_.size());
        entries_.push_back({id, cat, token, text});
        by_token_.emplace(token, id);
        return id;
    };
    cond_ = add(TokenCategory::Special, "<cond>", "");
    for (auto a : kAtoms) add(TokenCategory::Atom, std::string(a), std::string(a));
    for (auto t : kCifTags) add(TokenCategory::CifTag, std::string(t), std::string(t));
    for (const auto& g : space_groups()) add(TokenCategory::SpaceGroup, g.symbol + "_sg", g.symbol);
    for (auto d : kDigits) add(TokenCategory::Digit, std::string(d), std::string(d));
    for (std::string_view s : {"x", "y", "z", ".", "(", ")", "'", ","})
        add(TokenCategory::Special, std::string(s), std::string(s));
    space_ = add(TokenCategory::Special, "<space>", " ");
    newline_ = add(TokenCategory::Special, "<newline>", "\n");
    unk_ = add(TokenCategory::Special, "<unk>", std::string(kUnknownGlyph));
    pad_ = add(TokenCategory::Special, "<pad>", "");

    // Encoding table: first insertion wins, so insert in priority order.
    for (TokenCategory cat : {TokenCategory::SpaceGroup, TokenCategory::CifTag, TokenCategory::Atom,
                              TokenCategory::Digit, TokenCategory::Special}) {
        for (const auto& e : entries_) {
            if (e.category != cat || e.text.empty() || e.id == unk_) continue;
            by_text_.emplace(e.text, e.id);
            max_len_ = std::max(max_len_, e.text.size());
        }
    }
    hash_ = fnv1a64(to_tsv());
}

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary v;
    return v;
}

const VocabEntry& Vocabulary::at(int id) const {
    if (id < 0 || id >= static_cast<int>(entries_.size()))
        throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(id));
    return entries_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
    auto it = by_token_.find(std::string(token));
    if (it == by_token_.end()) return std::nullopt;
    return it->second;
}

std::size_t Vocabulary::count(TokenCategory c) const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.category == c;
    return n;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size() / 2);
    std::string key;
    std::size_t i = 0;
    while (i < text.size()) {
        int match = -1;
        std::size_t len = std::min(max_len_, text.size() - i);
        for (; len > 0; --len) {
            key.assign(text.substr(i, len));
            if (auto it = by_text_.find(key); it != by_text_.end()) {
                match = it->second;
                break;
            }
        }
        if (match < 0) {
            const unsigned char b = static_cast<unsigned char>(text[i]);
            char shown[8];
            std::snprintf(shown, sizeof shown, b >= 0x20 && b < 0x7f ? "'%c'" : "0x%02x", b);
            throw Error(ErrorCode::UnknownToken, std::string(shown) + " at byte offset " + std::to_string(i));
        }
        ids.push_back(match);
        i += len;
    }
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += at(id).text;
    return out;
}

std::string Vocabulary::to_tsv() const {
    std::string out = "# vocab v1\n";
    for (const auto& e : entries_) {
        out += std::to_string(e.id);
        out += '\t';
        out += to_string(e.category);
        out += '\t';
        out += e.token;
        out += '\n';
    }
    return out;
}

}  // namespace cifgen
