#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cifgen/cif.hpp"
#include "cifgen/model.hpp"
#include "cifgen/pxrd.hpp"

namespace cifgen {

/// sqrt(sum (y_ref - y_gen)^2 / sum y_ref^2) with unit weights.
/// Throws GridMismatch on length mismatch and ZeroReference if y_ref is all zero.
double rwp(std::span<const double> y_ref, std::span<const double> y_gen);

struct ValidityFlags {
    bool formula = false;             // FM
    bool site_multiplicity = false;   // SM
    bool bond_length = false;         // BL
    bool space_group = false;         // SG

    bool valid() const noexcept { return formula && site_multiplicity && bond_length && space_group; }
    bool operator==(const ValidityFlags&) const = default;
};

struct BondScore {
    std::size_t pairs = 0;
    std::size_t within = 0;
    double score() const noexcept { return pairs ? static_cast<double>(within) / static_cast<double>(pairs) : 0.0; }
};

/// Expected bond length: sum of ionic radii when the electronegativity
/// difference is at least 1.7, otherwise sum of covalent radii.
double expected_bond_length(std::string_view a, std::string_view b);

/// Neighbours are pairs closer than 1.3 x the expected length, plus each
/// atom's nearest neighbour. A pair is reasonable when its length is within
/// 30% of the expected length.
BondScore bond_length_score(const CrystalStructure& s);

/// The four checks on a parsed (not standardized) structure. A check that
/// cannot be evaluated counts as failed.
ValidityFlags check_validity(const CrystalStructure& s);
/// Parses leniently first; unparseable text fails every check.
ValidityFlags check_validity(std::string_view cif_text);

struct NiggliResult {
    Mat3 basis;      // rows
    Eigen::Matrix3i transform;  // basis = transform * input basis
};

/// Krivy-Gruber reduction; eps is relative to the cell volume^(2/3).
NiggliResult niggli_reduce(const Mat3& basis, double eps = 1e-5);

struct MatchTolerances {
    double ltol = 0.3;
    double stol = 0.5;
    double angle_tol = 10.0;  // degrees
};

/// Equal reduced composition and atom count, a lattice correspondence
/// within tolerances between the Niggli cells, and a translation plus site
/// assignment with every periodic displacement at most
/// stol * (V / n)^(1/3). Checked in both directions, so the relation is
/// symmetric.
bool structures_match(const CrystalStructure& a, const CrystalStructure& b, const MatchTolerances& tol = {});

struct EvalReport {
    std::string id;
    std::optional<double> rwp;  // absent when the generated CIF cannot be simulated
    ValidityFlags validity;
    bool matched = false;

    bool valid() const noexcept { return validity.valid(); }
};

/// Reference profile and generated profile both use the clean transform.
EvalReport evaluate_pair(std::string id, std::string_view reference_cif, std::string_view generated_cif,
                         const MatchTolerances& tol = {});

struct CorpusMetrics {
    std::size_t n = 0;
    double match_rate = 0;     // percent
    double valid_rate = 0;     // percent
    double formula_rate = 0;   // percent, FM
    double space_group_rate = 0;
    double bond_length_rate = 0;
    double site_multiplicity_rate = 0;
    double rwp_mean = 0;
    double rwp_std = 0;  // sample standard deviation, 0 for fewer than two values
    std::size_t rwp_count = 0;
};

CorpusMetrics aggregate(std::span<const EvalReport> reports);

/// id,rwp,FM,SM,BL,SG,valid,matched
std::string reports_csv(std::span<const EvalReport> reports);
/// FM,SG,BL,SM,valid,MR,rwp_mean,rwp_std,n
std::string metrics_csv(const CorpusMetrics& m);

struct Projection {
    MatrixR coords;                // n x k
    Eigen::VectorXd variances;     // k leading eigenvalues, descending
    MatrixR components;            // k x D
    Eigen::RowVectorXd mean;
};

/// Mean-centred PCA via the eigendecomposition of the sample covariance.
/// Throws DegenerateCovariance with fewer than k + 1 rows or zero variance.
Projection pca(const MatrixR& embeddings, int k = 2);

struct EmbeddingMeta {
    std::string crystal_system;
    double log_volume = 0;
    double mean_z = 0;
};

EmbeddingMeta embedding_meta(const CrystalStructure& s);

/// pc1,...,pck,crystal_system,log_volume,mean_z
std::string embeddings_csv(const Projection& p, std::span<const EmbeddingMeta> meta);

}  // namespace cifgen
