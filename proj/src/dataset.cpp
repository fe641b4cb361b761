#include "cifgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>
#include <random>

#include "cifgen/assets.hpp"
#include "cifgen/error.hpp"
#include "cifgen/evaluation.hpp"
#include "cifgen/tokenizer.hpp"
#include "cifgen/util.hpp"

namespace cifgen {

namespace {

Site make_site(const std::string& element, const Frac& f) {
    Site s;
    s.element = element;
    s.frac = f;
    return s;
}

CrystalStructure build(const std::string& family, const std::string& a, const std::string& b, double d,
                       std::mt19937_64& rng) {
    CrystalStructure s;
    std::vector<Site> sites;
    auto cubic = [&](double len) { s.lattice = Lattice{len, len, len, 90, 90, 90}; };
    if (family == "sc") {
        s.spacegroup_symbol = "Pm-3m";
        cubic(d);
        sites = {make_site(a, {0, 0, 0})};
    } else if (family == "bcc") {
        s.spacegroup_symbol = "Im-3m";
        cubic(2 * d / std::sqrt(3.0));
        sites = {make_site(a, {0, 0, 0}), make_site(a, {0.5, 0.5, 0.5})};
    } else if (family == "fcc") {
        s.spacegroup_symbol = "Fm-3m";
        cubic(d * std::sqrt(2.0));
        sites = {make_site(a, {0, 0, 0}), make_site(a, {0.5, 0.5, 0}), make_site(a, {0.5, 0, 0.5}),
                 make_site(a, {0, 0.5, 0.5})};
    } else if (family == "cscl") {
        s.spacegroup_symbol = "Pm-3m";
        cubic(2 * d / std::sqrt(3.0));
        sites = {make_site(a, {0, 0, 0}), make_site(b, {0.5, 0.5, 0.5})};
    } else if (family == "rocksalt") {
        s.spacegroup_symbol = "Fm-3m";
        cubic(2 * d);
        for (const Frac& f : {Frac{0, 0, 0}, Frac{0.5, 0.5, 0}, Frac{0.5, 0, 0.5}, Frac{0, 0.5, 0.5}}) {
            sites.push_back(make_site(a, f));
            sites.push_back(make_site(b, {wrap_unit(f[0] + 0.5), f[1], f[2]}));
        }
    } else if (family == "tetragonal") {
        s.spacegroup_symbol = "P4/mmm";
        std::uniform_real_distribution<double> ratio(1.1, 1.25);
        s.lattice = Lattice{d, d, d * ratio(rng), 90, 90, 90};
        sites = {make_site(a, {0, 0, 0})};
    } else if (family == "hcp") {
        s.spacegroup_symbol = "P6_3/mmc";
        s.lattice = Lattice{d, d, d * std::sqrt(8.0 / 3.0), 90, 90, 120};
        sites = {make_site(a, {1.0 / 3, 2.0 / 3, 0.25}), make_site(a, {2.0 / 3, 1.0 / 3, 0.75})};
    } else if (family == "orthorhombic") {
        s.spacegroup_symbol = "Pmmm";
        std::uniform_real_distribution<double> rb(1.05, 1.15), rc(1.15, 1.25);
        s.lattice = Lattice{d, d * rb(rng), d * rc(rng), 90, 90, 90};
        sites = {make_site(a, {0, 0, 0})};
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown synthetic family '" + family + "'");
    }
    s.sites = std::move(sites);
    s.symmetry_ops = {SymmetryOp{}};
    return standardize(s);
}

bool is_binary(const std::string& family) { return family == "cscl" || family == "rocksalt"; }

}  // namespace

CorpusEntry make_entry(const CrystalStructure& input, bool with_peaks) {
    const CrystalStructure s = standardize(input);
    CorpusEntry e;
    e.cif = write_cif(s);
    e.id = to_hex(fnv1a64(e.cif));
    e.tokens = Vocabulary::standard().encode(e.cif);
    if (with_peaks) e.peaks = compute_peaks(s);
    e.spacegroup_number = s.spacegroup_number;
    e.volume_per_formula_unit = s.lattice.volume() / std::max(1, s.formula_units_z);
    e.reduced_formula = formula_reduced(s.composition());
    if (const auto* g = find_space_group(s.spacegroup_number)) e.crystal_system = g->crystal_system;
    return e;
}

std::vector<CorpusEntry> dedup(std::span<const CorpusEntry> entries) {
    std::map<std::pair<std::string, int>, std::size_t> best;
    std::vector<std::pair<std::string, int>> order;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto key = std::make_pair(entries[i].reduced_formula, entries[i].spacegroup_number);
        auto it = best.find(key);
        if (it == best.end()) {
            best.emplace(key, i);
            order.push_back(key);
            continue;
        }
        const auto& cur = entries[it->second];
        const auto& cand = entries[i];
        if (cand.volume_per_formula_unit < cur.volume_per_formula_unit ||
            (cand.volume_per_formula_unit == cur.volume_per_formula_unit && cand.id < cur.id))
            it->second = i;
    }
    std::vector<CorpusEntry> out;
    out.reserve(order.size());
    for (const auto& key : order) out.push_back(entries[best[key]]);
    return out;
}

int split_bin(int spacegroup_number) {
    if (spacegroup_number < 1 || spacegroup_number > 230)
        throw Error(ErrorCode::InvalidArgument, "space-group number " + std::to_string(spacegroup_number));
    return (spacegroup_number + 9) / 10 - 1;
}

Split stratified_split(std::span<const CorpusEntry> entries, const SplitFractions& f, std::uint64_t seed) {
    if (entries.empty()) throw Error(ErrorCode::EmptyCorpus, "nothing to split");
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw Error(ErrorCode::InvalidArgument, "split fractions must be non-negative and sum to 1");
    std::map<int, std::vector<std::size_t>> bins;
    for (std::size_t i = 0; i < entries.size(); ++i) bins[split_bin(entries[i].spacegroup_number)].push_back(i);
    Split out;
    for (auto& [bin, idx] : bins) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return entries[a].id < entries[b].id; });
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(bin)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n = idx.size();
        std::size_t n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
        std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val));
        n_train = std::clamp<std::size_t>(n_train, 1, n);
        n_val = std::min(n_val, n - n_train);
        for (std::size_t i = 0; i < n; ++i) {
            auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
            dst.push_back(entries[idx[i]]);
        }
    }
    return out;
}

std::vector<CrystalStructure> make_synthetic_structures(const SyntheticSpec& spec, std::uint64_t seed) {
    std::vector<CrystalStructure> out;
    if (spec.size == 0) return out;
    if (spec.families.empty()) throw Error(ErrorCode::InvalidArgument, "no synthetic families");
    out.reserve(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) {
        std::mt19937_64 rng(derive_seed(seed, i));
        bool done = false;
        for (int attempt = 0; attempt < 200 && !done; ++attempt) {
            const auto& family = spec.families[rng() % spec.families.size()];
            std::string a, b;
            if (is_binary(family)) {
                if (spec.salts.empty()) continue;
                const auto& pair = spec.salts[rng() % spec.salts.size()];
                a = pair[0];
                b = pair[1];
            } else {
                if (spec.metals.empty()) continue;
                a = spec.metals[rng() % spec.metals.size()];
            }
            std::uniform_real_distribution<double> jitter(1 - spec.jitter, 1 + spec.jitter);
            const double d = expected_bond_length(a, b.empty() ? a : b) * jitter(rng);
            CrystalStructure s = build(family, a, b, d, rng);
            if (!check_validity(parse_cif(write_cif(s))).valid()) continue;
            out.push_back(std::move(s));
            done = true;
        }
        if (!done) throw Error(ErrorCode::InvalidArgument, "synthetic spec yields no valid structure");
    }
    return out;
}

std::vector<CorpusEntry> make_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed, bool with_peaks) {
    std::vector<CorpusEntry> out;
    for (const auto& s : make_synthetic_structures(spec, seed)) out.push_back(make_entry(s, with_peaks));
    return out;
}

std::string manifest_jsonl(std::span<const CorpusEntry> entries) {
    std::string out;
    for (const auto& e : entries) {
        nlohmann::ordered_json j = {{"id", e.id},
                                    {"formula", e.reduced_formula},
                                    {"spacegroup_number", e.spacegroup_number},
                                    {"volume_per_formula_unit", e.volume_per_formula_unit},
                                    {"crystal_system", e.crystal_system},
                                    {"n_tokens", e.tokens.size()}};
        // entries built without peaks carry no count rather than a misleading zero
        if (!e.peaks.peaks.empty()) j["n_peaks"] = e.peaks.peaks.size();
        out += j.dump() + "\n";
    }
    return out;
}

std::string tokens_jsonl(std::span<const CorpusEntry> entries) {
    std::string out;
    for (const auto& e : entries) {
        nlohmann::ordered_json j = {{"id", e.id}, {"tokens", e.tokens}};
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<std::size_t> EpochShuffler::order(std::uint64_t epoch) const {
    std::vector<std::size_t> idx(n_);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed_, epoch));
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

}  // namespace cifgen
