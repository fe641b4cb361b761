// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <numbers>
#include <random>
#include <string>

#include "cifgen/dataset.hpp"
#include "cifgen/error.hpp"
#include "cifgen/evaluation.hpp"
#include "cifgen/model.hpp"
#include "cifgen/packing.hpp"
#include "cifgen/pxrd.hpp"
#include "cifgen/tokenizer.hpp"
#include "cifgen/trainer.hpp"
#include "cifgen/util.hpp"
#include "oracles.hpp"

using namespace cifgen;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// 1 ------------------------------------------------------------------------
Outcome tokenizer_round_trip() {
    const auto t0 = Clock::now();
    const auto& v = Vocabulary::standard();
    const bool counts = v.size() == 373 && v.count(TokenCategory::Atom) == 89 && v.count(TokenCategory::CifTag) == 31 &&
                        v.count(TokenCategory::SpaceGroup) == 230 && v.count(TokenCategory::Digit) == 10 &&
                        v.count(TokenCategory::Special) == 13;
    SyntheticSpec spec;
    spec.size = 500;
    const auto structures = make_synthetic_structures(spec, 2024);
    std::size_t ok = 0;
    for (const auto& s : structures) {
        const auto text = write_cif(s);
        if (v.decode(v.encode(text)) == text) ++ok;
    }
    const double secs = seconds_since(t0);
    return {counts && ok == 500 && structures.size() == 500 && secs < 10.0,
            "counts " + std::string(counts ? "ok" : "wrong") + ", round trip " + std::to_string(ok) + "/500, " +
                fmt("%.2f s", secs)};
}

// 2 ------------------------------------------------------------------------
Outcome pxrd_physics() {
    auto relative_forbidden = [](const CrystalStructure& s, auto forbidden) {
        const auto peaks = compute_peaks(s);
        double worst = 0;
        for (const auto& p : peaks.peaks) {
            const auto [h, k, l] = p.hkl;
            if (forbidden(h, k, l)) worst = std::max(worst, p.intensity);
        }
        return worst;
    };
    const double bcc = relative_forbidden(fixtures::bcc("Fe", 2.87), [](int h, int k, int l) { return (h + k + l) % 2 != 0; });
    const double fcc = relative_forbidden(fixtures::fcc("Cu", 3.61), [](int h, int k, int l) {
        const bool all_even = h % 2 == 0 && k % 2 == 0 && l % 2 == 0;
        const bool all_odd = h % 2 != 0 && k % 2 != 0 && l % 2 != 0;
        return !(all_even || all_odd);
    });
    const auto sc = compute_peaks(fixtures::simple_cubic("Cu", 4.0));
    const double first = sc.peaks.empty() ? 0.0 : sc.peaks.front().q;
    TransformParams t;
    t.fwhm = 0.05;
    const double sigma_closed = 0.05 / (2 * std::sqrt(2 * std::numbers::ln2));
    const double sigma_err = std::abs(t.sigma() - sigma_closed);
    const bool pass = bcc < 1e-12 && fcc < 1e-12 && std::abs(first - std::numbers::pi / 2) < 1e-4 && sigma_err <= 1e-12;
    return {pass, "bcc forbidden " + fmt("%.1e", bcc) + ", fcc forbidden " + fmt("%.1e", fcc) + ", sc first q " +
                      fmt("%.6f", first) + ", sigma err " + fmt("%.1e", sigma_err)};
}

// 3 ------------------------------------------------------------------------
Outcome transform_family() {
    const auto peaks = compute_peaks(fixtures::rocksalt("Na", "Cl", 5.64));
    const auto a = transform(peaks, clean_transform());
    const auto b = transform(peaks, clean_transform());
    const bool deterministic = a.y == b.y;

    std::mt19937_64 rng(77);
    const int n = 100000;
    double fmin = 1, fmax = 0, nmin = 1, nmax = 0, fsum = 0, nsum = 0;
    for (int i = 0; i < n; ++i) {
        const auto t = sample_transform(rng);
        fmin = std::min(fmin, t.fwhm);
        fmax = std::max(fmax, t.fwhm);
        nmin = std::min(nmin, t.noise_var);
        nmax = std::max(nmax, t.noise_var);
        fsum += t.fwhm;
        nsum += t.noise_var;
    }
    const double fmean = fsum / n, nmean = nsum / n;
    const bool bounds = fmin >= 0.001 && fmax <= 0.1 && nmin >= 0.001 && nmax <= 0.05;
    const bool means = std::abs(fmean / 0.0505 - 1) < 0.02 && std::abs(nmean / 0.0255 - 1) < 0.02;
    return {deterministic && bounds && means, "deterministic " + std::string(deterministic ? "yes" : "no") +
                                                  ", fwhm [" + fmt("%.5f", fmin) + ", " + fmt("%.5f", fmax) +
                                                  "] mean " + fmt("%.5f", fmean) + ", noise [" + fmt("%.5f", nmin) +
                                                  ", " + fmt("%.5f", nmax) + "] mean " + fmt("%.5f", nmean)};
}

// 4 ------------------------------------------------------------------------
Outcome rwp_laws() {
    const auto y = transform(compute_peaks(fixtures::fcc("Cu", 3.61)), clean_transform()).y;
    auto scaled = [&](double c) {
        std::vector<double> out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = c * y[i];
        return out;
    };
    double worst = std::abs(rwp(y, y));
    worst = std::max(worst, std::abs(rwp(y, scaled(0)) - 1));
    worst = std::max(worst, std::abs(rwp(y, scaled(2)) - 1));
    for (double c : {0.0, 0.5, 2.0}) worst = std::max(worst, std::abs(rwp(y, scaled(c)) - std::abs(1 - c)));
    return {worst <= 1e-12, "max deviation " + fmt("%.1e", worst)};
}

// shared toy model for 5 and 6 ---------------------------------------------
ModelConfig toy_config(int context) {
    ModelConfig c;
    c.embed_dim = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.context = context;
    c.cond_hidden = 16;
    return c;
}

void jitter(Model& m, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, scale);
    for (auto& v : m.parameters()) v += n(rng);
}

struct ToyCorpus {
    std::vector<std::vector<int>> tokens;
    std::vector<PxrdProfile> profiles;
};

ToyCorpus toy_corpus(std::size_t count, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.size = count;
    spec.families = {"sc", "bcc", "cscl"};
    ToyCorpus c;
    for (const auto& e : make_synthetic_corpus(spec, seed)) {
        c.tokens.push_back(e.tokens);
        c.profiles.push_back(transform(e.peaks, clean_transform()));
    }
    return c;
}

PackedSegment pack_one_segment(const ToyCorpus& c, int context) {
    std::vector<PackItem> items;
    for (std::size_t i = 0; i < c.tokens.size(); ++i) items.push_back({c.tokens[i], static_cast<int>(i)});
    PackOptions o;
    o.context = context;
    o.pad_id = Vocabulary::standard().pad_id();
    return pack(items, o).front();
}

// 5 ------------------------------------------------------------------------
Outcome mask_isolation() {
    const auto corpus = toy_corpus(3, 5);
    int total = 0;
    for (const auto& t : corpus.tokens) total += static_cast<int>(t.size()) + 1;
    const int context = total + 4;
    Model m(toy_config(context), 1);
    jitter(m, 2, 0.05);
    const auto base = pack_one_segment(corpus, context);
    const auto logits = m.forward(base, build_mask(base), corpus.profiles);

    bool pass = true;
    std::size_t compared = 0;
    for (int victim = 0; victim < 3; ++victim) {
        for (int mode = 0; mode < 2; ++mode) {
            auto changed = corpus;
            if (mode == 0) {
                auto& t = changed.tokens[static_cast<std::size_t>(victim)];
                t[t.size() / 2] = (t[t.size() / 2] + 7) % 360 + 1;
            } else {
                for (auto& v : changed.profiles[static_cast<std::size_t>(victim)].y) v = 1 - v;
            }
            const auto seg = pack_one_segment(changed, context);
            const auto other = m.forward(seg, build_mask(seg), changed.profiles);
            for (int k = 0; k < seg.context(); ++k) {
                if (seg.doc_ids[static_cast<std::size_t>(k)] < 0 || seg.doc_ids[static_cast<std::size_t>(k)] == victim)
                    continue;
                for (int v = 0; v < other.cols(); ++v) {
                    ++compared;
                    if (logits(k, v) != other(k, v)) pass = false;
                }
            }
        }
    }
    return {pass && compared > 0, "3 blocks, token and profile perturbations, " + std::to_string(compared) +
                                      " logits compared bitwise"};
}

// 6 ------------------------------------------------------------------------
Outcome gradient_check() {
    const auto corpus = toy_corpus(2, 9);
    const int context = 48;
    std::vector<PackItem> items;
    for (std::size_t i = 0; i < 2; ++i) {
        std::vector<int> head(corpus.tokens[i].begin(), corpus.tokens[i].begin() + 18);
        items.push_back({head, static_cast<int>(i)});
    }
    PackOptions o;
    o.context = context;
    o.pad_id = Vocabulary::standard().pad_id();
    const auto seg = pack(items, o).front();
    const auto mask = build_mask(seg);

    Model m(toy_config(context), 3);
    jitter(m, 4, 0.05);
    std::vector<double> grad(m.parameters().size(), 0.0);
    m.accumulate_gradient(seg, mask, corpus.profiles, grad, 1.0);
    auto total = [&] {
        double s = 0;
        for (double v : token_losses(m.forward(seg, mask, corpus.profiles), seg))
            if (!std::isnan(v)) s += v;
        return s;
    };
    std::mt19937_64 rng(5);
    // five-point stencil: O(h^4) truncation, and round-off of the summed
    // loss stays far below the smallest probed derivatives
    double worst = 0;
    const double h = 1e-3;
    for (int probe = 0; probe < 50; ++probe) {
        const std::size_t idx = rng() % m.parameters().size();
        auto p = m.parameters();
        const double old = p[idx];
        auto at = [&](double x) {
            p[idx] = x;
            return total();
        };
        const double fd = (at(old - 2 * h) - 8 * at(old - h) + 8 * at(old + h) - at(old + 2 * h)) / (12 * h);
        p[idx] = old;
        const double rel = std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        worst = std::max(worst, rel);
    }
    return {worst < 1e-3, "50 random parameters, max relative error " + fmt("%.2e", worst)};
}

// 7 ------------------------------------------------------------------------
Outcome uniform_loss() {
    ModelConfig c = toy_config(64);
    Model m(c, 7);
    for (auto& v : m.tensor("wte")) v = 0;
    const auto corpus = toy_corpus(1, 3);
    std::vector<int> head(corpus.tokens[0].begin(), corpus.tokens[0].begin() + 40);
    PackOptions o;
    o.context = 64;
    o.pad_id = Vocabulary::standard().pad_id();
    const auto seg = pack(std::vector<PackItem>{{head, 0}}, o).front();
    const double loss = segment_loss(m.forward(seg, build_mask(seg), corpus.profiles), seg);
    return {std::abs(loss - std::log(373.0)) <= 1e-6, "loss " + fmt("%.9f", loss) + " vs ln 373 " + fmt("%.9f", std::log(373.0))};
}

// 8 ------------------------------------------------------------------------
struct Pair {
    std::vector<int> a, b;
    std::vector<PeakList> peaks;
    std::size_t diverge = 0;  // first token index where a and b differ
};

Pair distinguishable_pair() {
    Pair p;
    const auto ea = make_entry(fixtures::simple_cubic("Cu", 2.55));
    const auto eb = make_entry(fixtures::simple_cubic("Cu", 2.95));
    p.a = ea.tokens;
    p.b = eb.tokens;
    p.peaks = {ea.peaks, eb.peaks};
    while (p.diverge < std::min(p.a.size(), p.b.size()) && p.a[p.diverge] == p.b[p.diverge]) ++p.diverge;
    return p;
}

/// Mean loss of predicting the first differing token, each sequence under its clean profile.
double distinguishing_loss(const Model& m, const Pair& p, bool conditioned) {
    double sum = 0;
    for (int which = 0; which < 2; ++which) {
        const auto& tokens = which == 0 ? p.a : p.b;
        PackOptions o;
        o.context = m.config().context;
        o.conditioned = conditioned;
        o.pad_id = Vocabulary::standard().pad_id();
        const auto seg = pack(std::vector<PackItem>{{tokens, 0}}, o).front();
        std::vector<PxrdProfile> profiles;
        if (conditioned) profiles.push_back(transform(p.peaks[static_cast<std::size_t>(which)], clean_transform()));
        const auto losses = token_losses(m.forward(seg, build_mask(seg), profiles), seg);
        // slot predicting token `diverge` sits one before it; a Cond head shifts by one
        const std::size_t slot = p.diverge - 1 + (conditioned ? 1 : 0);
        sum += losses[slot];
    }
    return sum / 2;
}

struct ConditioningRun {
    double loss = 0;
    int steps = 0;
};

ConditioningRun train_pair(const Pair& p, bool conditioned, int max_steps, double stop_below) {
    ModelConfig mc;
    mc.embed_dim = 32;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.context = static_cast<int>(std::max(p.a.size(), p.b.size())) + 2;
    mc.cond_hidden = 32;
    Model model(mc, 8);

    TrainData data;
    data.peaks = p.peaks;
    PackOptions o;
    o.context = mc.context;
    o.conditioned = conditioned;
    o.pad_id = Vocabulary::standard().pad_id();
    // one segment per structure, so neither is split away from its prefix
    for (int i = 0; i < 2; ++i) {
        auto seg = pack(std::vector<PackItem>{{i == 0 ? p.a : p.b, i}}, o);
        data.train.insert(data.train.end(), seg.begin(), seg.end());
    }

    TrainConfig tc;
    tc.max_steps = max_steps;
    tc.batch_size = 2;
    tc.grad_accum = 1;
    tc.learning_rate = 3e-3;
    tc.min_lr = 3e-4;
    tc.warmup_steps = 20;
    tc.decay_steps = max_steps;
    tc.weight_decay = 0.0;
    tc.seed = 12;
    tc.augment = true;
    Trainer trainer(model, tc, data);
    ConditioningRun r;
    while (trainer.completed_steps() < max_steps) {
        trainer.step();
        if (trainer.completed_steps() % 50 == 0) {
            r.loss = distinguishing_loss(model, p, conditioned);
            r.steps = trainer.completed_steps();
            if (r.loss < stop_below) return r;
        }
    }
    r.loss = distinguishing_loss(model, p, conditioned);
    r.steps = trainer.completed_steps();
    return r;
}

Outcome conditioning_efficacy() {
    const auto t0 = Clock::now();
    const Pair p = distinguishable_pair();
    const auto cond = train_pair(p, true, 2000, 0.1);
    const auto uncond = train_pair(p, false, 2000, -1.0);
    const double secs = seconds_since(t0);
    const bool pass = cond.loss < 0.1 && uncond.loss >= 0.6 && secs < 900;
    return {pass, "conditioned " + fmt("%.4f", cond.loss) + " nats at step " + std::to_string(cond.steps) +
                      ", unconditioned " + fmt("%.4f", uncond.loss) + " nats at step " + std::to_string(uncond.steps) +
                      ", " + fmt("%.0f s", secs)};
}

// 9 ------------------------------------------------------------------------
Outcome memorization() {
    const auto entry = make_entry(fixtures::rocksalt("Na", "Cl", 5.64));
    ModelConfig mc;
    mc.embed_dim = 32;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.context = static_cast<int>(entry.tokens.size()) + 2;
    mc.cond_hidden = 32;
    Model model(mc, 21);
    TrainData data;
    data.peaks = {entry.peaks};
    PackOptions o;
    o.context = mc.context;
    o.pad_id = Vocabulary::standard().pad_id();
    data.train = pack(std::vector<PackItem>{{entry.tokens, 0}}, o);
    TrainConfig tc;
    tc.max_steps = 600;
    tc.batch_size = 1;
    tc.grad_accum = 1;
    tc.learning_rate = 3e-3;
    tc.min_lr = 3e-4;
    tc.warmup_steps = 20;
    tc.decay_steps = 600;
    tc.weight_decay = 0.0;
    tc.seed = 22;
    tc.augment = false;
    Trainer trainer(model, tc, data);
    const auto profile = transform(entry.peaks, clean_transform());
    std::vector<int> out;
    while (trainer.completed_steps() < tc.max_steps) {
        trainer.step();
        if (trainer.completed_steps() % 100 == 0) {
            out = generate(model, {}, &profile, {});
            if (out == entry.tokens) break;
        }
    }
    const std::size_t n = std::min(out.size(), entry.tokens.size());
    std::size_t agree = 0;
    while (agree < n && out[agree] == entry.tokens[agree]) ++agree;
    return {out == entry.tokens, std::to_string(entry.tokens.size()) + " tokens, greedy output agrees on first " +
                                     std::to_string(agree) + " after " + std::to_string(trainer.completed_steps()) +
                                     " steps"};
}

// 10 -----------------------------------------------------------------------
Outcome evaluation_suite() {
    std::size_t agree = 0, total = 0;
    for (const auto& f : oracles::match_fixtures()) {
        ++total;
        const bool brute = oracles::brute_force_match(f.a, f.b);
        if (brute == f.expected && structures_match(f.a, f.b) == brute && structures_match(f.b, f.a) == brute) ++agree;
    }

    const auto text = write_cif(fixtures::rocksalt("Na", "Cl", 5.64));
    auto replace_line = [](std::string t, const std::string& prefix, const std::string& line) {
        const auto start = t.find(prefix);
        if (start == std::string::npos) return t;
        return t.replace(start, t.find('\n', start) - start, line);
    };
    std::string stretched = text;
    for (const char* axis : {"a", "b", "c"})
        stretched = replace_line(stretched, std::string("_cell_length_") + axis, std::string("_cell_length_") + axis + " 7.8960");
    const bool flags =
        check_validity(text) == ValidityFlags{true, true, true, true} &&
        check_validity(replace_line(text, "_chemical_formula_structural", "_chemical_formula_structural Na2Cl")) ==
            ValidityFlags{false, true, true, true} &&
        check_validity(replace_line(text, "_chemical_formula_sum", "_chemical_formula_sum 'Na8 Cl8'")) ==
            ValidityFlags{true, false, true, true} &&
        check_validity(stretched) == ValidityFlags{true, true, false, true} &&
        check_validity(replace_line(text, "_symmetry_Int_Tables_number", "_symmetry_Int_Tables_number 221")) ==
            ValidityFlags{true, true, true, false};

    std::vector<EvalReport> reports(4);
    reports[0] = {"a", 0.1, {true, true, true, true}, true};
    reports[1] = {"b", 0.3, {true, false, true, true}, false};
    reports[2] = {"c", std::nullopt, {}, false};
    reports[3] = {"d", 0.5, {true, true, true, true}, true};
    const auto m = aggregate(reports);
    const bool counts = m.match_rate == 50.0 && m.valid_rate == 50.0 && m.formula_rate == 75.0 &&
                        m.site_multiplicity_rate == 50.0 && m.space_group_rate == 75.0 && m.rwp_count == 3 &&
                        std::abs(m.rwp_mean - 0.3) < 1e-12;
    return {agree == total && total == 20 && flags && counts,
            "match fixtures " + std::to_string(agree) + "/" + std::to_string(total) + ", validity patterns " +
                (flags ? "ok" : "wrong") + ", aggregation " + (counts ? "ok" : "wrong")};
}

// 11 -----------------------------------------------------------------------
Outcome stratified_split_check() {
    std::mt19937_64 rng(3);
    std::vector<CorpusEntry> entries(1000);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        entries[i].id = to_hex(fnv1a64("acceptance" + std::to_string(i)));
        entries[i].spacegroup_number = 1 + static_cast<int>(rng() % 230);
    }
    bool rule = split_bin(145) == 14;
    for (int sg = 1; sg <= 230; ++sg) rule = rule && split_bin(sg) == static_cast<int>(std::ceil(sg / 10.0)) - 1;

    const auto split = stratified_split(entries, {}, 17);
    std::multiset<std::string> got, want;
    for (const auto* part : {&split.train, &split.val, &split.test})
        for (const auto& e : *part) got.insert(e.id);
    for (const auto& e : entries) want.insert(e.id);
    const bool partition = got == want;

    std::map<int, std::array<int, 3>> per_bin;
    std::map<int, int> sizes;
    for (const auto& e : entries) ++sizes[split_bin(e.spacegroup_number)];
    int part_index = 0;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& e : *part) ++per_bin[split_bin(e.spacegroup_number)][static_cast<std::size_t>(part_index)];
        ++part_index;
    }
    bool proportional = true;
    for (const auto& [bin, n] : sizes) {
        const auto& c = per_bin[bin];
        proportional = proportional && c[0] >= 1 && std::abs(c[0] - 0.8 * n) <= 1.0 && std::abs(c[1] - 0.1 * n) <= 1.0 &&
                       std::abs(c[2] - 0.1 * n) <= 1.0;
    }
    return {rule && partition && proportional, "bins " + std::string(rule ? "ok" : "wrong") + ", partition " +
                                                   (partition ? "ok" : "broken") + ", per-bin shares " +
                                                   (proportional ? "within one entry" : "off") + ", sizes " +
                                                   std::to_string(split.train.size()) + "/" +
                                                   std::to_string(split.val.size()) + "/" +
                                                   std::to_string(split.test.size())};
}

// 12 -----------------------------------------------------------------------
Outcome parameter_accounting() {
    const Model m{ModelConfig{}};
    std::size_t cond = 0, body = 0;
    for (const auto& t : m.tensors()) (t.conditioning ? cond : body) += t.size();
    const double phi = static_cast<double>(cond) / 1e6, theta = static_cast<double>(body) / 1e6;
    const bool pass = std::abs(phi / 0.78 - 1) <= 0.02 && std::abs(theta / 26.94 - 1) <= 0.02 &&
                      cond == m.conditioning_parameter_count() && body == m.transformer_parameter_count();
    return {pass, "Phi " + fmt("%.4fM", phi) + ", Theta " + fmt("%.4fM", theta)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"tokenizer vocabulary and 500-CIF round trip", tokenizer_round_trip},
        {"PXRD absences, simple-cubic peak, sigma", pxrd_physics},
        {"transformation family bounds and determinism", transform_family},
        {"Rwp closed forms", rwp_laws},
        {"mask isolation", mask_isolation},
        {"finite-difference gradient", gradient_check},
        {"uniform-logit loss", uniform_loss},
        {"conditioning efficacy", conditioning_efficacy},
        {"single-CIF memorization", memorization},
        {"evaluation suite", evaluation_suite},
        {"stratified split", stratified_split_check},
        {"parameter accounting", parameter_accounting},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
