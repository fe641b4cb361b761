#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cifgen/cif.hpp"
#include "cifgen/pxrd.hpp"

namespace cifgen {

struct CorpusEntry {
    std::string id;  // hex FNV-1a of the canonical CIF text
    std::string cif;
    std::vector<int> tokens;
    PeakList peaks;
    int spacegroup_number = 0;
    double volume_per_formula_unit = 0;
    std::string reduced_formula;
    std::string crystal_system;
};

/// Standardizes, serializes, tokenizes and simulates one structure.
CorpusEntry make_entry(const CrystalStructure& s, bool with_peaks = true);

/// Keeps, for each (reduced formula, space-group number) key, the entry with
/// the lowest volume per formula unit; ties go to the smaller id. Survivors
/// keep the order in which their key first appeared.
std::vector<CorpusEntry> dedup(std::span<const CorpusEntry> entries);

/// Space groups 1-10 -> 0, 11-20 -> 1, ...
int split_bin(int spacegroup_number);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct Split {
    std::vector<CorpusEntry> train, val, test;
};

/// Per bin: order by id, seeded shuffle, then round each share; every
/// nonempty bin contributes at least one training entry.
Split stratified_split(std::span<const CorpusEntry> entries, const SplitFractions& fractions, std::uint64_t seed);

struct SyntheticSpec {
    std::size_t size = 100;
    /// Any of: sc, bcc, fcc, cscl, rocksalt, tetragonal, hcp, orthorhombic.
    std::vector<std::string> families = {"sc", "bcc", "fcc", "cscl", "rocksalt", "tetragonal", "hcp", "orthorhombic"};
    std::vector<std::string> metals = {"Fe", "Cu", "Al", "Ni", "Mo", "W", "Ag", "Au", "Pt", "Pd",
                                       "Cr", "V",  "Nb", "Ta", "Mg", "Ti", "Zr", "Co", "Zn", "Rh"};
    std::vector<std::array<std::string, 2>> salts = {{"Na", "Cl"}, {"K", "Cl"}, {"Mg", "O"}, {"Ca", "O"},
                                                     {"Li", "F"},  {"Cs", "Cl"}, {"Na", "F"}, {"K", "Br"},
                                                     {"Rb", "Cl"}, {"Ba", "O"},  {"Sr", "O"}, {"Cs", "Br"}};
    /// Nearest-neighbour distance is the expected bond length times U(1 - jitter, 1 + jitter).
    double jitter = 0.05;
};

/// Standardized structures that pass all four validity checks, sampled by
/// rejection. Deterministic per seed.
std::vector<CrystalStructure> make_synthetic_structures(const SyntheticSpec& spec, std::uint64_t seed);
std::vector<CorpusEntry> make_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed, bool with_peaks = true);

/// One line per entry: id, formula, space group, volume per formula unit,
/// crystal system, token count, peak count.
std::string manifest_jsonl(std::span<const CorpusEntry> entries);
/// One line per entry: {"id": ..., "tokens": [...]}.
std::string tokens_jsonl(std::span<const CorpusEntry> entries);

/// Fresh permutation of [0, n) per epoch, reproducible from (seed, epoch).
class EpochShuffler {
public:
    EpochShuffler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
    std::vector<std::size_t> order(std::uint64_t epoch) const;

private:
    std::size_t n_;
    std::uint64_t seed_;
};

}  // namespace cifgen
