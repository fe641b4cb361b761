#include "cifgen/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>

#include "cifgen/assets.hpp"
#include "cifgen/error.hpp"

namespace cifgen {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 to_vec(const Frac& f) { return Vec3(f[0], f[1], f[2]); }

Vec3 wrap(Vec3 f) {
    for (int i = 0; i < 3; ++i) f[i] = wrap_unit(f[i]);
    return f;
}

// Shortest Cartesian length of a fractional difference over periodic images.
double min_image(const Vec3& df, const Mat3& lattice) {
    Vec3 base = df;
    for (int i = 0; i < 3; ++i) base[i] -= std::round(base[i]);
    double best = std::numeric_limits<double>::infinity();
    for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j)
            for (int k = -1; k <= 1; ++k) {
                const Vec3 f = base + Vec3(i, j, k);
                best = std::min(best, (lattice.transpose() * f).norm());
            }
    return best;
}

double angle_deg(const Vec3& u, const Vec3& v) {
    return std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0)) / kDeg;
}

// Full-cell copy of a parsed structure; unknown space groups are treated as P1.
CrystalStructure full_cell(const CrystalStructure& s) {
    CrystalStructure c = s;
    if (!find_space_group(c.spacegroup_symbol)) c.spacegroup_symbol = "P1";
    return standardize(c);
}

// Kuhn's augmenting-path matching on a dense boolean adjacency matrix.
bool perfect_matching(const std::vector<std::vector<char>>& adj) {
    const std::size_t n = adj.size();
    std::vector<int> match(n, -1);
    std::vector<char> seen;
    std::function<bool(std::size_t)> augment = [&](std::size_t u) {
        for (std::size_t v = 0; v < n; ++v) {
            if (!adj[u][v] || seen[v]) continue;
            seen[v] = 1;
            if (match[v] < 0 || augment(static_cast<std::size_t>(match[v]))) {
                match[v] = static_cast<int>(u);
                return true;
            }
        }
        return false;
    };
    for (std::size_t u = 0; u < n; ++u) {
        seen.assign(n, 0);
        if (!augment(u)) return false;
    }
    return true;
}

struct Atoms {
    std::vector<std::string> species;
    std::vector<Vec3> frac;
};

Atoms atoms_in_basis(const CrystalStructure& s, const Eigen::Matrix3d& inv_transform) {
    Atoms a;
    for (const auto& site : s.sites) {
        a.species.push_back(site.element);
        const Eigen::RowVector3d f = to_vec(site.frac).transpose() * inv_transform;
        a.frac.push_back(wrap(f.transpose()));
    }
    return a;
}

bool sites_match(const Atoms& a, const Atoms& b, const Mat3& lattice, double threshold) {
    const std::size_t n = a.frac.size();
    // anchor on the rarest species of a
    std::map<std::string, int> counts;
    for (const auto& s : a.species) ++counts[s];
    std::size_t anchor = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (counts[a.species[i]] < counts[a.species[anchor]]) anchor = i;

    for (std::size_t j = 0; j < n; ++j) {
        if (b.species[j] != a.species[anchor]) continue;
        const Vec3 shift = a.frac[anchor] - b.frac[j];
        bool ok = true;
        for (const auto& [element, count] : counts) {
            std::vector<std::size_t> ia, ib;
            for (std::size_t i = 0; i < n; ++i) {
                if (a.species[i] == element) ia.push_back(i);
                if (b.species[i] == element) ib.push_back(i);
            }
            if (ia.size() != ib.size()) return false;
            std::vector<std::vector<char>> adj(ia.size(), std::vector<char>(ib.size(), 0));
            for (std::size_t p = 0; p < ia.size(); ++p)
                for (std::size_t q = 0; q < ib.size(); ++q)
                    adj[p][q] = min_image(a.frac[ia[p]] - (b.frac[ib[q]] + shift), lattice) <= threshold;
            if (!perfect_matching(adj)) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    }
    return false;
}

// The two bases may be rotated against each other, so average the cell
// parameters rather than the Cartesian rows.
Mat3 average_cell(const Mat3& x, const Mat3& y) {
    const Lattice lx = Lattice::from_matrix(x), ly = Lattice::from_matrix(y);
    return Lattice{(lx.a + ly.a) / 2,         (lx.b + ly.b) / 2,       (lx.c + ly.c) / 2,
                   (lx.alpha + ly.alpha) / 2, (lx.beta + ly.beta) / 2, (lx.gamma + ly.gamma) / 2}
        .matrix();
}

bool directed_match(const CrystalStructure& a, const CrystalStructure& b, const MatchTolerances& tol) {
    const auto ra = niggli_reduce(a.lattice.matrix());
    const auto rb = niggli_reduce(b.lattice.matrix());
    const Atoms atoms_a = atoms_in_basis(a, ra.transform.cast<double>().inverse());
    const Atoms atoms_b = atoms_in_basis(b, rb.transform.cast<double>().inverse());
    const Mat3& ma = ra.basis;
    const Mat3& mb = rb.basis;
    const double log_ltol = std::log(1.0 + tol.ltol);

    std::array<std::vector<Eigen::Vector3i>, 3> cands;
    for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j)
            for (int k = -2; k <= 2; ++k) {
                if (i == 0 && j == 0 && k == 0) continue;
                const Vec3 v = (Eigen::RowVector3d(i, j, k) * mb).transpose();
                for (int r = 0; r < 3; ++r)
                    if (std::abs(std::log(v.norm() / ma.row(r).norm())) <= log_ltol) cands[r].emplace_back(i, j, k);
            }

    const double angles_a[3] = {angle_deg(ma.row(1), ma.row(2)), angle_deg(ma.row(0), ma.row(2)),
                                angle_deg(ma.row(0), ma.row(1))};
    const std::size_t n = atoms_a.frac.size();
    for (const auto& u : cands[0])
        for (const auto& v : cands[1])
            for (const auto& w : cands[2]) {
                Eigen::Matrix3i s;
                s.row(0) = u.transpose();
                s.row(1) = v.transpose();
                s.row(2) = w.transpose();
                if (s.cast<double>().determinant() < 0.5 || s.cast<double>().determinant() > 1.5) continue;
                const Mat3 mb2 = s.cast<double>() * mb;
                if (std::abs(angle_deg(mb2.row(1), mb2.row(2)) - angles_a[0]) > tol.angle_tol) continue;
                if (std::abs(angle_deg(mb2.row(0), mb2.row(2)) - angles_a[1]) > tol.angle_tol) continue;
                if (std::abs(angle_deg(mb2.row(0), mb2.row(1)) - angles_a[2]) > tol.angle_tol) continue;
                const Eigen::Matrix3d s_inv = s.cast<double>().inverse();
                Atoms atoms_b2 = atoms_b;
                for (auto& f : atoms_b2.frac) f = wrap((f.transpose() * s_inv).transpose());
                const Mat3 avg = average_cell(ma, mb2);
                const double volume = std::abs(avg.determinant());
                const double threshold = tol.stol * std::cbrt(volume / static_cast<double>(n));
                if (sites_match(atoms_a, atoms_b2, avg, threshold)) return true;
            }
    return false;
}

}  // namespace

double rwp(std::span<const double> y_ref, std::span<const double> y_gen) {
    if (y_ref.size() != y_gen.size())
        throw Error(ErrorCode::GridMismatch,
                    std::to_string(y_ref.size()) + " reference points vs " + std::to_string(y_gen.size()));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < y_ref.size(); ++i) {
        const double d = y_ref[i] - y_gen[i];
        num += d * d;
        den += y_ref[i] * y_ref[i];
    }
    if (den == 0) throw Error(ErrorCode::ZeroReference, "reference profile is identically zero");
    return std::sqrt(num / den);
}

double expected_bond_length(std::string_view a, std::string_view b) {
    const auto& ea = element(a);
    const auto& eb = element(b);
    if (std::abs(ea.electronegativity - eb.electronegativity) >= 1.7) return ea.ionic_radius + eb.ionic_radius;
    return ea.covalent_radius + eb.covalent_radius;
}

BondScore bond_length_score(const CrystalStructure& s) {
    BondScore score;
    const std::size_t n = s.sites.size();
    if (n == 0) return score;
    const Mat3 m = s.lattice.matrix();
    const double volume = s.lattice.volume();

    double cmax = 0;
    for (const auto& p : s.sites)
        for (const auto& q : s.sites) cmax = std::max(cmax, 1.3 * expected_bond_length(p.element, q.element));
    const double shortest = std::min({m.row(0).norm(), m.row(1).norm(), m.row(2).norm()});
    const double radius = std::max(cmax, shortest);
    int range[3];
    for (int axis = 0; axis < 3; ++axis) {
        const Vec3 cross = m.row((axis + 1) % 3).cross(m.row((axis + 2) % 3));
        const double spacing = volume / cross.norm();
        range[axis] = static_cast<int>(std::ceil(radius / spacing)) + 1;
    }

    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 fi = to_vec(s.sites[i].frac);
        double nearest = std::numeric_limits<double>::infinity();
        double nearest_expected = 0;
        bool nearest_counted = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double expected = expected_bond_length(s.sites[i].element, s.sites[j].element);
            const Vec3 fj = to_vec(s.sites[j].frac);
            for (int a = -range[0]; a <= range[0]; ++a)
                for (int b = -range[1]; b <= range[1]; ++b)
                    for (int c = -range[2]; c <= range[2]; ++c) {
                        if (i == j && a == 0 && b == 0 && c == 0) continue;
                        const Vec3 df = fj + Vec3(a, b, c) - fi;
                        const double d = (m.transpose() * df).norm();
                        const bool neighbour = d <= 1.3 * expected;
                        if (neighbour) {
                            ++score.pairs;
                            if (std::abs(d - expected) <= 0.3 * expected) ++score.within;
                        }
                        if (d < nearest) {
                            nearest = d;
                            nearest_expected = expected;
                            nearest_counted = neighbour;
                        }
                    }
        }
        if (!nearest_counted && std::isfinite(nearest)) {
            ++score.pairs;
            if (std::abs(nearest - nearest_expected) <= 0.3 * nearest_expected) ++score.within;
        }
    }
    return score;
}

ValidityFlags check_validity(const CrystalStructure& s) {
    ValidityFlags f;
    const Composition sites = s.composition();
    std::optional<Composition> sum;
    try {
        if (!s.formula_sum.empty()) sum = parse_formula(s.formula_sum);
    } catch (const Error&) {
    }
    if (sum && !s.formula_structural.empty()) {
        try {
            const Composition structural = parse_formula(s.formula_structural);
            f.formula = reduce(*sum) == reduce(sites) && reduce(structural) == reduce(*sum);
        } catch (const Error&) {
        }
    }
    f.site_multiplicity = sum && *sum == sites;
    try {
        const auto score = bond_length_score(full_cell(s));
        f.bond_length = score.pairs > 0 && score.within == score.pairs;
    } catch (const Error&) {
    }
    const auto* group = find_space_group(s.spacegroup_symbol);
    f.space_group = group && group->number == s.spacegroup_number;
    return f;
}

ValidityFlags check_validity(std::string_view cif_text) {
    try {
        return check_validity(parse_cif(cif_text, ParseOptions{.strict_space_group = false}));
    } catch (const Error&) {
        return {};
    }
}

NiggliResult niggli_reduce(const Mat3& basis, double eps) {
    Mat3 m = basis;
    Eigen::Matrix3i t = Eigen::Matrix3i::Identity();
    const double e = eps * std::pow(std::abs(basis.determinant()), 2.0 / 3.0);
    auto sign = [e](double x) { return x > e ? 1 : (x < -e ? -1 : 0); };
    auto apply = [&](const Eigen::Matrix3i& op) {
        m = op.cast<double>() * m;
        t = op * t;
    };

    for (int iter = 0; iter < 10000; ++iter) {
        const double A = m.row(0).squaredNorm(), B = m.row(1).squaredNorm(), C = m.row(2).squaredNorm();
        double xi = 2 * m.row(1).dot(m.row(2)), eta = 2 * m.row(0).dot(m.row(2)), zeta = 2 * m.row(0).dot(m.row(1));
        Eigen::Matrix3i op;
        // N1
        if (A > B + e || (std::abs(A - B) <= e && std::abs(xi) > std::abs(eta) + e)) {
            op << 0, 1, 0, 1, 0, 0, 0, 0, -1;
            apply(op);
            continue;
        }
        // N2
        if (B > C + e || (std::abs(B - C) <= e && std::abs(eta) > std::abs(zeta) + e)) {
            op << -1, 0, 0, 0, 0, 1, 0, 1, 0;
            apply(op);
            continue;
        }
        // N3 / N4
        const int l = sign(xi), mm = sign(eta), n = sign(zeta);
        int i = 1, j = 1, k = 1;
        if (l * mm * n == 1) {
            i = l < 0 ? -1 : 1;
            j = mm < 0 ? -1 : 1;
            k = n < 0 ? -1 : 1;
        } else {
            if (l == 1) i = -1;
            if (mm == 1) j = -1;
            if (n == 1) k = -1;
            if (i * j * k == -1) {
                if (l == 0)
                    i = -1;
                else if (mm == 0)
                    j = -1;
                else if (n == 0)
                    k = -1;
            }
        }
        if (i * j * k == 1 && (i != 1 || j != 1 || k != 1)) {
            op << i, 0, 0, 0, j, 0, 0, 0, k;
            apply(op);
            xi = 2 * m.row(1).dot(m.row(2));
            eta = 2 * m.row(0).dot(m.row(2));
            zeta = 2 * m.row(0).dot(m.row(1));
        }
        // N5
        if (std::abs(xi) > B + e || (std::abs(xi - B) <= e && 2 * eta < zeta - e) ||
            (std::abs(xi + B) <= e && zeta < -e)) {
            const int s = xi > 0 ? 1 : -1;
            op << 1, 0, 0, 0, 1, 0, 0, -s, 1;
            apply(op);
            continue;
        }
        // N6
        if (std::abs(eta) > A + e || (std::abs(eta - A) <= e && 2 * xi < zeta - e) ||
            (std::abs(eta + A) <= e && zeta < -e)) {
            const int s = eta > 0 ? 1 : -1;
            op << 1, 0, 0, 0, 1, 0, -s, 0, 1;
            apply(op);
            continue;
        }
        // N7
        if (std::abs(zeta) > A + e || (std::abs(zeta - A) <= e && 2 * xi < eta - e) ||
            (std::abs(zeta + A) <= e && eta < -e)) {
            const int s = zeta > 0 ? 1 : -1;
            op << 1, 0, 0, -s, 1, 0, 0, 0, 1;
            apply(op);
            continue;
        }
        // N8
        const double sum = xi + eta + zeta + A + B;
        if (sum < -e || (std::abs(sum) <= e && 2 * (A + eta) + zeta > e)) {
            op << 1, 0, 0, 0, 1, 0, 1, 1, 1;
            apply(op);
            continue;
        }
        return {m, t};
    }
    throw Error(ErrorCode::InvariantViolation, "Niggli reduction did not converge");
}

bool structures_match(const CrystalStructure& a, const CrystalStructure& b, const MatchTolerances& tol) {
    if (a.sites.empty() || b.sites.empty()) return false;
    for (const auto* s : {&a, &b})
        for (const auto& site : s->sites)
            if (site.multiplicity != 1) return false;
    if (a.sites.size() != b.sites.size()) return false;
    if (reduce(a.composition()) != reduce(b.composition())) return false;
    try {
        return directed_match(a, b, tol) && directed_match(b, a, tol);
    } catch (const Error&) {
        return false;
    }
}

EvalReport evaluate_pair(std::string id, std::string_view reference_cif, std::string_view generated_cif,
                         const MatchTolerances& tol) {
    EvalReport r;
    r.id = std::move(id);
    const CrystalStructure ref = standardize(parse_cif(reference_cif));
    CrystalStructure gen_parsed;
    try {
        gen_parsed = parse_cif(generated_cif, ParseOptions{.strict_space_group = false});
    } catch (const Error&) {
        return r;
    }
    r.validity = check_validity(gen_parsed);
    CrystalStructure gen;
    try {
        gen = full_cell(gen_parsed);
    } catch (const Error&) {
        return r;
    }
    const auto ref_profile = transform(compute_peaks(ref), clean_transform());
    try {
        const auto gen_profile = transform(compute_peaks(gen), clean_transform());
        r.rwp = rwp(ref_profile.y, gen_profile.y);
    } catch (const Error&) {
    }
    r.matched = structures_match(ref, gen, tol);
    return r;
}

CorpusMetrics aggregate(std::span<const EvalReport> reports) {
    CorpusMetrics m;
    m.n = reports.size();
    if (reports.empty()) return m;
    std::size_t matched = 0, valid = 0, fm = 0, sg = 0, bl = 0, sm = 0;
    std::vector<double> rwps;
    for (const auto& r : reports) {
        matched += r.matched;
        valid += r.valid();
        fm += r.validity.formula;
        sg += r.validity.space_group;
        bl += r.validity.bond_length;
        sm += r.validity.site_multiplicity;
        if (r.rwp) rwps.push_back(*r.rwp);
    }
    const double n = static_cast<double>(reports.size());
    m.match_rate = 100.0 * static_cast<double>(matched) / n;
    m.valid_rate = 100.0 * static_cast<double>(valid) / n;
    m.formula_rate = 100.0 * static_cast<double>(fm) / n;
    m.space_group_rate = 100.0 * static_cast<double>(sg) / n;
    m.bond_length_rate = 100.0 * static_cast<double>(bl) / n;
    m.site_multiplicity_rate = 100.0 * static_cast<double>(sm) / n;
    m.rwp_count = rwps.size();
    if (!rwps.empty()) {
        double sum = 0;
        for (double v : rwps) sum += v;
        m.rwp_mean = sum / static_cast<double>(rwps.size());
        if (rwps.size() > 1) {
            double sq = 0;
            for (double v : rwps) sq += (v - m.rwp_mean) * (v - m.rwp_mean);
            m.rwp_std = std::sqrt(sq / static_cast<double>(rwps.size() - 1));
        }
    }
    return m;
}

std::string reports_csv(std::span<const EvalReport> reports) {
    std::string out = "id,rwp,FM,SM,BL,SG,valid,matched\n";
    char buf[64];
    for (const auto& r : reports) {
        out += r.id;
        out += ',';
        if (r.rwp) {
            std::snprintf(buf, sizeof buf, "%.6f", *r.rwp);
            out += buf;
        }
        for (bool b : {r.validity.formula, r.validity.site_multiplicity, r.validity.bond_length,
                       r.validity.space_group, r.valid(), r.matched}) {
            out += ',';
            out += b ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

std::string metrics_csv(const CorpusMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "FM,SG,BL,SM,valid,MR,rwp_mean,rwp_std,n\n%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.6f,%.6f,%zu\n",
                  m.formula_rate, m.space_group_rate, m.bond_length_rate, m.site_multiplicity_rate, m.valid_rate,
                  m.match_rate, m.rwp_mean, m.rwp_std, m.n);
    return buf;
}

Projection pca(const MatrixR& x, int k) {
    if (k < 1 || k > x.cols()) throw Error(ErrorCode::InvalidArgument, "k must lie in [1, embedding dimension]");
    if (x.rows() < k + 1)
        throw Error(ErrorCode::DegenerateCovariance,
                    "need at least " + std::to_string(k + 1) + " embeddings, got " + std::to_string(x.rows()));
    Projection p;
    p.mean = x.colwise().mean();
    const MatrixR centered = x.rowwise() - p.mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::DegenerateCovariance, "eigendecomposition failed");
    const auto& values = solver.eigenvalues();
    const auto& vectors = solver.eigenvectors();
    const auto d = x.cols();
    if (!(values[d - 1] > 0)) throw Error(ErrorCode::DegenerateCovariance, "embeddings have zero variance");
    p.variances.resize(k);
    p.components.resize(k, d);
    for (int i = 0; i < k; ++i) {
        p.variances[i] = std::max(0.0, values[d - 1 - i]);
        Eigen::VectorXd v = vectors.col(d - 1 - i);
        // fix the sign so the largest-magnitude entry is positive
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        p.components.row(i) = v.transpose();
    }
    p.coords = centered * p.components.transpose();
    return p;
}

EmbeddingMeta embedding_meta(const CrystalStructure& s) {
    EmbeddingMeta m;
    if (const auto* g = find_space_group(s.spacegroup_symbol)) m.crystal_system = g->crystal_system;
    m.log_volume = std::log(s.lattice.volume());
    double z = 0;
    std::size_t n = 0;
    for (const auto& site : s.sites) {
        z += element(site.element).z * site.multiplicity;
        n += static_cast<std::size_t>(site.multiplicity);
    }
    m.mean_z = n ? z / static_cast<double>(n) : 0.0;
    return m;
}

std::string embeddings_csv(const Projection& p, std::span<const EmbeddingMeta> meta) {
    if (meta.size() != static_cast<std::size_t>(p.coords.rows()))
        throw Error(ErrorCode::ShapeMismatch, "metadata rows differ from projected rows");
    std::string out;
    for (Eigen::Index i = 0; i < p.coords.cols(); ++i) out += "pc" + std::to_string(i + 1) + ",";
    out += "crystal_system,log_volume,mean_z\n";
    char buf[64];
    for (Eigen::Index r = 0; r < p.coords.rows(); ++r) {
        for (Eigen::Index i = 0; i < p.coords.cols(); ++i) {
            std::snprintf(buf, sizeof buf, "%.9g,", p.coords(r, i));
            out += buf;
        }
        const auto& m = meta[static_cast<std::size_t>(r)];
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", m.log_volume, m.mean_z);
        out += m.crystal_system + buf;
    }
    return out;
}

}  // namespace cifgen
