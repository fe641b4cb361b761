#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cifgen {

enum class TokenCategory { Atom, CifTag, SpaceGroup, Digit, Special };

std::string_view to_string(TokenCategory c) noexcept;

struct VocabEntry {
    int id = 0;
    TokenCategory category = TokenCategory::Special;
    std::string token;  // display form; specials use <space>, <newline>, ..., space groups carry "_sg"
    std::string text;   // what the token renders to on decode
};

/// Replacement character emitted when decoding <unk>.
inline constexpr std::string_view kUnknownGlyph = "\xEF\xBF\xBD";

/// The fixed 373-entry vocabulary.
///
/// Id layout: 0 = <cond>, then atoms, CIF tags, space groups (by number),
/// digits 1..9 0, and the remaining specials x y z . ( ) ' , <space>
/// <newline> <unk> <pad>.
class Vocabulary {
public:
    static const Vocabulary& standard();

    std::size_t size() const noexcept { return entries_.size(); }
    std::span<const VocabEntry> entries() const noexcept { return entries_; }
    const VocabEntry& at(int id) const;  // throws IdOutOfRange
    std::optional<int> find(std::string_view token) const;
    std::size_t count(TokenCategory c) const noexcept;

    int cond_id() const noexcept { return cond_; }
    int pad_id() const noexcept { return pad_; }
    int unk_id() const noexcept { return unk_; }
    int newline_id() const noexcept { return newline_; }
    int space_id() const noexcept { return space_; }

    /// Longest match over rendered text with priority
    /// space group > CIF tag > atom > digit/special.
    /// Throws UnknownToken with the byte offset of the first unmatched byte.
    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    /// id<TAB>category<TAB>token per line, preceded by a version comment.
    std::string to_tsv() const;
    /// FNV-1a of to_tsv(); stamped into packed corpora and checkpoints.
    std::uint64_t hash() const noexcept { return hash_; }

private:
    Vocabulary();

    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, int> by_text_;
    std::unordered_map<std::string, int> by_token_;
    std::size_t max_len_ = 0;
    int cond_ = 0, pad_ = 0, unk_ = 0, newline_ = 0, space_ = 0;
    std::uint64_t hash_ = 0;
};

}  // namespace cifgen
