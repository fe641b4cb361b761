#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cifgen {

inline constexpr int kDefaultContext = 3076;

enum class SlotKind : std::uint8_t { Cond = 0, Token = 1, Pad = 2 };

struct Slot {
    SlotKind kind = SlotKind::Pad;
    int value = 0;  // Cond: profile index, Token: token id, Pad: pad id

    bool operator==(const Slot&) const = default;
};

/// One fixed-length training window. Per-slot arrays all have length C.
struct PackedSegment {
    std::vector<Slot> slots;
    std::vector<int> positions;
    std::vector<int> doc_ids;  // block index within the segment, -1 for padding
    std::vector<int> sources;  // corpus item index, -1 for padding

    int context() const noexcept { return static_cast<int>(slots.size()); }
    /// Slot k is trained to predict slots[k + 1] iff this holds.
    bool has_target(int k) const noexcept;

    bool operator==(const PackedSegment&) const = default;
};

struct PackItem {
    std::vector<int> tokens;
    int profile = -1;  // index into the profile table; ignored when unconditioned
};

struct PackOptions {
    int context = kDefaultContext;
    bool conditioned = true;
    int pad_id = 0;
};

struct PackStats {
    std::size_t segments = 0;
    std::size_t split_items = 0;  // items continued in a later segment
    std::size_t pad_slots = 0;
};

/// Greedy in-order fill. A block opens with a Cond slot (when conditioned)
/// followed by its tokens, positions counting from 0. An item that does not
/// fit is split; its continuation opens the next segment with a fresh Cond
/// slot for the same profile. Throws EmptyCorpus if there is nothing to pack.
std::vector<PackedSegment> pack(std::span<const PackItem> corpus, const PackOptions& options,
                                PackStats* stats = nullptr);

/// Row-major C x C boolean matrix: M(k, l) = 1 iff slots k and l share a
/// block (doc id >= 0) and l <= k.
struct AttentionMask {
    int size = 0;
    std::vector<std::uint8_t> bits;

    bool operator()(int k, int l) const noexcept {
        return bits[static_cast<std::size_t>(k) * static_cast<std::size_t>(size) + static_cast<std::size_t>(l)] != 0;
    }
};

AttentionMask build_mask(const PackedSegment& seg);

/// Binary corpus of packed segments, little-endian:
///   "CGPK" u32 version=1, u32 C, u64 vocab hash, u64 segment count, then per
///   segment C records of (u8 kind, i32 value, i32 position, i32 doc, i32 source).
std::string serialize_packed(std::span<const PackedSegment> segments, std::uint64_t vocab_hash);
std::vector<PackedSegment> deserialize_packed(std::string_view bytes, std::uint64_t expected_vocab_hash);

}  // namespace cifgen
