#include "cifgen/packing.hpp"

#include <cstring>

#include "cifgen/error.hpp"

namespace cifgen {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t get(int width) {
        if (pos_ + static_cast<std::size_t>(width) > bytes_.size())
            throw Error(ErrorCode::Io, "packed corpus truncated at byte " + std::to_string(pos_));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string_view take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw Error(ErrorCode::Io, "packed corpus truncated");
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

PackedSegment empty_segment(int c, int pad_id) {
    PackedSegment s;
    s.slots.assign(static_cast<std::size_t>(c), Slot{SlotKind::Pad, pad_id});
    s.positions.assign(static_cast<std::size_t>(c), 0);
    s.doc_ids.assign(static_cast<std::size_t>(c), -1);
    s.sources.assign(static_cast<std::size_t>(c), -1);
    return s;
}

}  // namespace

bool PackedSegment::has_target(int k) const noexcept {
    const auto next = static_cast<std::size_t>(k) + 1;
    if (k < 0 || next >= slots.size()) return false;
    return slots[next].kind == SlotKind::Token && doc_ids[next] == doc_ids[static_cast<std::size_t>(k)] &&
           doc_ids[next] >= 0;
}

std::vector<PackedSegment> pack(std::span<const PackItem> corpus, const PackOptions& options, PackStats* stats) {
    const int c = options.context;
    if (c < 2) throw Error(ErrorCode::InvalidArgument, "context must be at least 2");
    bool any = false;
    for (const auto& item : corpus) any = any || !item.tokens.empty();
    if (!any) throw Error(ErrorCode::EmptyCorpus, "no tokens to pack");

    PackStats st;
    std::vector<PackedSegment> out;
    PackedSegment seg = empty_segment(c, options.pad_id);
    int used = 0, doc = 0;
    const int head = options.conditioned ? 1 : 0;

    auto flush = [&] {
        st.pad_slots += static_cast<std::size_t>(c - used);
        out.push_back(std::move(seg));
        seg = empty_segment(c, options.pad_id);
        used = 0;
        doc = 0;
    };

    for (std::size_t idx = 0; idx < corpus.size(); ++idx) {
        const auto& item = corpus[idx];
        std::size_t next = 0;
        bool continued = false;
        while (next < item.tokens.size()) {
            // a block needs room for its Cond slot and at least one token
            if (c - used < head + 1) flush();
            int pos = 0;
            auto place = [&](Slot slot) {
                const auto k = static_cast<std::size_t>(used++);
                seg.slots[k] = slot;
                seg.positions[k] = pos++;
                seg.doc_ids[k] = doc;
                seg.sources[k] = static_cast<int>(idx);
            };
            if (options.conditioned) place({SlotKind::Cond, item.profile});
            while (next < item.tokens.size() && used < c) place({SlotKind::Token, item.tokens[next++]});
            ++doc;
            if (next < item.tokens.size()) {
                if (!continued) ++st.split_items;
                continued = true;
                flush();
            }
        }
    }
    if (used > 0) flush();
    st.segments = out.size();
    if (stats) *stats = st;
    return out;
}

AttentionMask build_mask(const PackedSegment& seg) {
    AttentionMask m;
    m.size = seg.context();
    const auto n = static_cast<std::size_t>(m.size);
    m.bits.assign(n * n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        if (seg.doc_ids[k] < 0) continue;
        for (std::size_t l = 0; l <= k; ++l) m.bits[k * n + l] = seg.doc_ids[l] == seg.doc_ids[k];
    }
    return m;
}

std::string serialize_packed(std::span<const PackedSegment> segments, std::uint64_t vocab_hash) {
    const std::uint32_t c = segments.empty() ? 0 : static_cast<std::uint32_t>(segments.front().context());
    std::string out = "CGPK";
    put_u32(out, 1);
    put_u32(out, c);
    put_u64(out, vocab_hash);
    put_u64(out, segments.size());
    for (const auto& s : segments) {
        if (static_cast<std::uint32_t>(s.context()) != c)
            throw Error(ErrorCode::ShapeMismatch, "segments have different context lengths");
        for (std::size_t k = 0; k < c; ++k) {
            out.push_back(static_cast<char>(s.slots[k].kind));
            put_u32(out, static_cast<std::uint32_t>(s.slots[k].value));
            put_u32(out, static_cast<std::uint32_t>(s.positions[k]));
            put_u32(out, static_cast<std::uint32_t>(s.doc_ids[k]));
            put_u32(out, static_cast<std::uint32_t>(s.sources[k]));
        }
    }
    return out;
}

std::vector<PackedSegment> deserialize_packed(std::string_view bytes, std::uint64_t expected_vocab_hash) {
    Reader r(bytes);
    if (r.take(4) != "CGPK") throw Error(ErrorCode::Io, "not a packed corpus (bad magic)");
    if (const auto v = r.get(4); v != 1) throw Error(ErrorCode::Io, "unsupported packed corpus version " + std::to_string(v));
    const auto c = static_cast<std::size_t>(r.get(4));
    if (r.get(8) != expected_vocab_hash) throw Error(ErrorCode::Io, "packed corpus was built with a different vocabulary");
    const auto n = r.get(8);
    std::vector<PackedSegment> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        PackedSegment s = empty_segment(static_cast<int>(c), 0);
        for (std::size_t k = 0; k < c; ++k) {
            const auto kind = r.get(1);
            if (kind > 2) throw Error(ErrorCode::Io, "bad slot kind");
            s.slots[k] = {static_cast<SlotKind>(kind), static_cast<int>(static_cast<std::int32_t>(r.get(4)))};
            s.positions[k] = static_cast<std::int32_t>(r.get(4));
            s.doc_ids[k] = static_cast<std::int32_t>(r.get(4));
            s.sources[k] = static_cast<std::int32_t>(r.get(4));
        }
        out.push_back(std::move(s));
    }
    if (!r.done()) throw Error(ErrorCode::Io, "trailing bytes after packed corpus");
    return out;
}

}  // namespace cifgen
