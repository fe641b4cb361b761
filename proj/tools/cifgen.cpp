#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cifgen/cif.hpp"
#include "cifgen/dataset.hpp"
#include "cifgen/error.hpp"
#include "cifgen/evaluation.hpp"
#include "cifgen/model.hpp"
#include "cifgen/packing.hpp"
#include "cifgen/pxrd.hpp"
#include "cifgen/tokenizer.hpp"
#include "cifgen/trainer.hpp"
#include "cifgen/util.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace cifgen;
using cli::RunConfig;
using cli::UsageError;

namespace {

struct Globals {
    std::string workdir = ".";
    int jobs = 1;
    bool print_config = false;
};

fs::path resolve(const Globals& g, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(g.workdir) / path;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot read " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text)) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

/// Regular files with the given extension, sorted by name.
std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results go through
/// caller-owned slots, so output order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

CrystalStructure load_structure(const fs::path& p) {
    try {
        return standardize(parse_cif(read_file(p)));
    } catch (const Error& e) {
        throw Error(e.code(), p.string() + ": " + e.what());
    }
}

PxrdProfile clean_profile_of(const CrystalStructure& s) { return transform(compute_peaks(s), clean_transform()); }

// ---------------------------------------------------------------- vocab

int cmd_vocab(const Globals& g, const std::string& out) {
    const auto tsv = Vocabulary::standard().to_tsv();
    if (out.empty() || out == "-")
        std::cout << tsv;
    else
        write_file(resolve(g, out), tsv);
    return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::size_t size = 100;
    std::uint64_t seed = 0;
    std::string out_dir = "synthetic";
    std::vector<std::string> families;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
    SyntheticSpec spec;
    spec.size = a.size;
    if (!a.families.empty()) spec.families = a.families;
    const auto corpus = make_synthetic_corpus(spec, a.seed, false);
    const fs::path dir = resolve(g, a.out_dir);
    fs::create_directories(dir);
    const int width = std::max<int>(4, static_cast<int>(std::to_string(corpus.size()).size()));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        std::string name = std::to_string(i);
        name.insert(0, static_cast<std::size_t>(width) - std::min<std::size_t>(width, name.size()), '0');
        write_file(dir / ("synth_" + name + ".cif"), corpus[i].cif);
    }
    write_file(dir / "manifest.jsonl", manifest_jsonl(corpus));
    std::cerr << "wrote " << corpus.size() << " structures to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::vector<std::string> inputs;
    std::string out_dir = ".";
    TransformParams transform = clean_transform();
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
    const fs::path out = resolve(g, a.out_dir);
    fs::create_directories(out);
    std::vector<fs::path> paths;
    for (const auto& in : a.inputs) paths.push_back(resolve(g, in));
    parallel_for(paths.size(), g.jobs, [&](std::size_t i) {
        const auto s = load_structure(paths[i]);
        const auto profile = transform(compute_peaks(s), a.transform);
        write_file(out / (paths[i].stem().string() + ".csv"), profile_to_csv(profile, a.transform));
    });
    return 0;
}

// ---------------------------------------------------------------- train

const std::set<std::string>& train_keys() {
    static const std::set<std::string> keys = {
        // model
        "embed_dim", "n_layers", "n_heads", "context", "cond_hidden", "cond_layers", "ffn_multiplier", "dropout",
        // optimizer
        "max_steps", "batch_size", "grad_accum", "learning_rate", "min_lr", "warmup_steps", "decay_steps",
        "weight_decay", "beta1", "beta2", "adam_eps", "grad_clip", "augment", "eval_interval",
        // data
        "corpus_dir", "synthetic_size", "synthetic_families", "conditioned", "train_fraction", "val_fraction",
        "test_fraction", "test_out",
        // seeds
        "seed", "model_seed", "train_seed", "split_seed", "synthetic_seed",
        // outputs
        "checkpoint", "log", "checkpoint_interval"};
    return keys;
}

struct TrainPlan {
    ModelConfig model;
    TrainConfig train;
    std::uint64_t model_seed = 0, split_seed = 0, synthetic_seed = 0;
    std::string corpus_dir;
    std::size_t synthetic_size = 0;
    std::vector<std::string> synthetic_families;
    bool conditioned = true;
    SplitFractions fractions;
    std::string test_out;
    std::string checkpoint;
    std::string log;
    int checkpoint_interval = 1000;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

TrainPlan plan_from(const RunConfig& c, int jobs) {
    c.reject_unknown(train_keys());
    TrainPlan p;
    p.checkpoint = c.require_string("checkpoint");
    ModelConfig& m = p.model;
    m.embed_dim = c.get_int("embed_dim", m.embed_dim);
    m.n_layers = c.get_int("n_layers", m.n_layers);
    m.n_heads = c.get_int("n_heads", m.n_heads);
    m.context = c.get_int("context", m.context);
    m.cond_hidden = c.get_int("cond_hidden", m.cond_hidden);
    m.cond_layers = c.get_int("cond_layers", m.cond_layers);
    m.ffn_multiplier = c.get_int("ffn_multiplier", m.ffn_multiplier);
    m.dropout = c.get_double("dropout", m.dropout);

    TrainConfig& t = p.train;
    if (!c.has("max_steps")) c.require_string("max_steps");
    t.max_steps = c.get_int("max_steps", t.max_steps);
    t.batch_size = c.get_int("batch_size", t.batch_size);
    t.grad_accum = c.get_int("grad_accum", t.grad_accum);
    t.learning_rate = c.get_double("learning_rate", t.learning_rate);
    t.min_lr = c.get_double("min_lr", t.min_lr);
    t.warmup_steps = c.get_int("warmup_steps", t.warmup_steps);
    t.decay_steps = c.get_int("decay_steps", t.decay_steps);
    t.weight_decay = c.get_double("weight_decay", t.weight_decay);
    t.beta1 = c.get_double("beta1", t.beta1);
    t.beta2 = c.get_double("beta2", t.beta2);
    t.adam_eps = c.get_double("adam_eps", t.adam_eps);
    t.grad_clip = c.get_double("grad_clip", t.grad_clip);
    t.augment = c.get_bool("augment", t.augment);
    t.eval_interval = c.get_int("eval_interval", t.eval_interval);
    t.jobs = jobs;

    const std::uint64_t master = c.get_u64("seed", 0);
    p.model_seed = c.get_u64("model_seed", derive_seed(master, 1));
    t.seed = c.get_u64("train_seed", derive_seed(master, 2));
    p.split_seed = c.get_u64("split_seed", derive_seed(master, 3));
    p.synthetic_seed = c.get_u64("synthetic_seed", derive_seed(master, 4));

    p.corpus_dir = c.get_string("corpus_dir", "");
    p.synthetic_size = c.get_u64("synthetic_size", 0);
    if (p.corpus_dir.empty() == (p.synthetic_size == 0))
        throw UsageError("exactly one of 'corpus_dir' and 'synthetic_size' must be set");
    p.synthetic_families = split_list(c.get_string("synthetic_families", ""));
    p.conditioned = c.get_bool("conditioned", true);
    p.fractions.train = c.get_double("train_fraction", p.fractions.train);
    p.fractions.val = c.get_double("val_fraction", p.fractions.val);
    p.fractions.test = c.get_double("test_fraction", p.fractions.test);
    p.test_out = c.get_string("test_out", "");
    p.log = c.get_string("log", "train_log.csv");
    p.checkpoint_interval = c.get_int("checkpoint_interval", p.checkpoint_interval);

    try {
        m.validate();
        t.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return p;
}

std::string effective_config(const TrainPlan& p) {
    std::ostringstream o;
    o.precision(17);
    const auto& m = p.model;
    const auto& t = p.train;
    o << "embed_dim = " << m.embed_dim << "\nn_layers = " << m.n_layers << "\nn_heads = " << m.n_heads
      << "\ncontext = " << m.context << "\ncond_hidden = " << m.cond_hidden << "\ncond_layers = " << m.cond_layers
      << "\nffn_multiplier = " << m.ffn_multiplier << "\ndropout = " << m.dropout << "\n";
    o << "max_steps = " << t.max_steps << "\nbatch_size = " << t.batch_size << "\ngrad_accum = " << t.grad_accum
      << "\nlearning_rate = " << t.learning_rate << "\nmin_lr = " << t.min_lr << "\nwarmup_steps = " << t.warmup_steps
      << "\ndecay_steps = " << t.decay_steps << "\nweight_decay = " << t.weight_decay << "\nbeta1 = " << t.beta1
      << "\nbeta2 = " << t.beta2 << "\nadam_eps = " << t.adam_eps << "\ngrad_clip = " << t.grad_clip
      << "\naugment = " << (t.augment ? "true" : "false") << "\neval_interval = " << t.eval_interval << "\n";
    if (!p.corpus_dir.empty()) o << "corpus_dir = " << p.corpus_dir << "\n";
    if (p.synthetic_size) {
        o << "synthetic_size = " << p.synthetic_size << "\nsynthetic_families = ";
        for (std::size_t i = 0; i < p.synthetic_families.size(); ++i) o << (i ? "," : "") << p.synthetic_families[i];
        o << "\n";
    }
    o << "conditioned = " << (p.conditioned ? "true" : "false") << "\ntrain_fraction = " << p.fractions.train
      << "\nval_fraction = " << p.fractions.val << "\ntest_fraction = " << p.fractions.test << "\n";
    if (!p.test_out.empty()) o << "test_out = " << p.test_out << "\n";
    o << "model_seed = " << p.model_seed << "\ntrain_seed = " << t.seed << "\nsplit_seed = " << p.split_seed
      << "\nsynthetic_seed = " << p.synthetic_seed << "\n";
    o << "checkpoint = " << p.checkpoint << "\nlog = " << p.log << "\ncheckpoint_interval = " << p.checkpoint_interval
      << "\n";
    return o.str();
}

std::vector<CorpusEntry> load_corpus(const Globals& g, const TrainPlan& p) {
    if (p.synthetic_size) {
        SyntheticSpec spec;
        spec.size = p.synthetic_size;
        if (!p.synthetic_families.empty()) spec.families = p.synthetic_families;
        return make_synthetic_corpus(spec, p.synthetic_seed);
    }
    const auto paths = list_files(resolve(g, p.corpus_dir), ".cif");
    std::vector<CorpusEntry> entries(paths.size());
    parallel_for(paths.size(), g.jobs, [&](std::size_t i) { entries[i] = make_entry(load_structure(paths[i])); });
    return entries;
}

TrainData build_train_data(const Split& split, const TrainPlan& p) {
    TrainData d;
    std::vector<PackItem> train_items, val_items;
    for (const auto& e : split.train) {
        train_items.push_back({e.tokens, static_cast<int>(d.peaks.size())});
        d.peaks.push_back(e.peaks);
    }
    for (const auto& e : split.val) {
        val_items.push_back({e.tokens, static_cast<int>(d.peaks.size())});
        d.peaks.push_back(e.peaks);
    }
    PackOptions o;
    o.context = p.model.context;
    o.conditioned = p.conditioned;
    o.pad_id = Vocabulary::standard().pad_id();
    d.train = pack(train_items, o);
    if (!val_items.empty()) d.val = pack(val_items, o);
    return d;
}

int cmd_train(const Globals& g, const std::string& config_path, const std::vector<std::string>& overrides,
              bool resume) {
    if (config_path.empty()) throw UsageError("train requires --config");
    RunConfig c = RunConfig::load(resolve(g, config_path));
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    const TrainPlan p = plan_from(c, g.jobs);
    if (g.print_config) {
        std::cout << effective_config(p);
        return 0;
    }

    const auto corpus = load_corpus(g, p);
    const auto unique = dedup(corpus);
    const Split split = stratified_split(unique, p.fractions, p.split_seed);
    std::cerr << "corpus " << corpus.size() << ", unique " << unique.size() << ", split " << split.train.size() << "/"
              << split.val.size() << "/" << split.test.size() << "\n";
    if (!p.test_out.empty()) {
        const fs::path dir = resolve(g, p.test_out);
        fs::create_directories(dir);
        for (const auto& e : split.test) write_file(dir / (e.id + ".cif"), e.cif);
    }
    const TrainData data = build_train_data(split, p);

    const fs::path ck_path = resolve(g, p.checkpoint);
    Model model(p.model, p.model_seed);
    std::optional<Checkpoint> ck;
    if (resume) {
        if (!fs::exists(ck_path)) throw Error(ErrorCode::Io, "no checkpoint to resume from at " + ck_path.string());
        ck = load_checkpoint(ck_path);
        if (!(ck->model == p.model))
            throw Error(ErrorCode::BadCheckpoint, "checkpoint model configuration differs from the config file");
        model = model_from_checkpoint(*ck);
    }
    Trainer trainer(model, p.train, data);
    if (ck) {
        trainer.restore(ck->step, std::move(ck->adam));
        std::cerr << "resuming at step " << ck->step << "\n";
    }

    TrainRunOptions opts;
    opts.checkpoint_path = ck_path;
    opts.log_path = resolve(g, p.log);
    opts.checkpoint_interval = p.checkpoint_interval;
    opts.on_step = [&](const StepResult& r, std::optional<double> val) {
        if (r.step % std::max(1, p.train.eval_interval) != 0 && r.step != p.train.max_steps) return;
        std::fprintf(stderr, "step %d lr %.3g loss %.4f", r.step, r.lr, r.train_loss);
        if (val) std::fprintf(stderr, " val %.4f", *val);
        std::fputc('\n', stderr);
    };
    run_training(trainer, p.train, opts);
    return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string checkpoint;
    std::string profile = "auto";  // CSV path, "reference", "none" or "auto"
    std::string reference;         // CIF; supplies the profile and descriptors
    std::string desc = "none";
    std::string composition;
    std::string spacegroup;
    std::string ref_dir;
    std::string out_dir;
    std::string out;
    DecodeParams decode;
};

std::string prompt_text(const std::string& desc, const std::string& formula, const std::string& spacegroup) {
    if (desc == "none") return "data_";
    if (formula.empty()) throw UsageError("--desc " + desc + " needs a composition");
    std::string text = "data_" + formula + "\n";
    if (desc == "comp+sg") {
        if (spacegroup.empty()) throw UsageError("--desc comp+sg needs a space group");
        text += "_symmetry_space_group_name_H-M " + spacegroup + "\n";
    }
    return text;
}

struct Generated {
    std::string text;
    bool parses = false;
    std::string diagnostic;
};

Generated generate_one(const Model& model, const std::string& prompt, const PxrdProfile* profile,
                       const DecodeParams& params) {
    const auto& vocab = Vocabulary::standard();
    const auto ids = generate(model, vocab.encode(prompt), profile, params);
    Generated g;
    g.text = vocab.decode(ids);
    try {
        parse_cif(g.text);
        g.parses = true;
    } catch (const Error& e) {
        g.diagnostic = e.what();
    }
    return g;
}

int cmd_generate(const Globals& g, const GenerateArgs& a) {
    if (a.desc != "none" && a.desc != "comp" && a.desc != "comp+sg")
        throw UsageError("--desc must be none, comp or comp+sg");
    const Checkpoint ck = load_checkpoint(resolve(g, a.checkpoint));
    const Model model = model_from_checkpoint(ck);

    if (!a.ref_dir.empty()) {
        if (a.out_dir.empty()) throw UsageError("--ref-dir needs --out-dir");
        const auto refs = list_files(resolve(g, a.ref_dir), ".cif");
        const fs::path out = resolve(g, a.out_dir);
        fs::create_directories(out);
        std::vector<char> ok(refs.size(), 0);
        parallel_for(refs.size(), g.jobs, [&](std::size_t i) {
            const auto s = load_structure(refs[i]);
            const auto profile = clean_profile_of(s);
            const auto prompt = prompt_text(a.desc, s.data_name, s.spacegroup_symbol);
            DecodeParams params = a.decode;
            params.seed = derive_seed(a.decode.seed, i);
            const auto r = generate_one(model, prompt, a.profile == "none" ? nullptr : &profile, params);
            // unparseable output is kept so the evaluation scores it as invalid
            write_file(out / refs[i].filename(), r.text);
            ok[i] = r.parses;
        });
        const auto good = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
        std::cerr << "generated " << refs.size() << " CIFs, " << good << " parse\n";
        return 0;
    }

    std::optional<PxrdProfile> profile;
    std::string formula, spacegroup = a.spacegroup;
    if (!a.composition.empty()) formula = formula_compact(parse_formula(a.composition));
    if (!a.reference.empty()) {
        const auto s = load_structure(resolve(g, a.reference));
        if (a.profile == "reference" || a.profile == "auto") profile = clean_profile_of(s);
        if (formula.empty()) formula = s.data_name;
        if (spacegroup.empty()) spacegroup = s.spacegroup_symbol;
    } else if (a.profile == "reference") {
        throw UsageError("--profile reference needs --reference");
    }
    if (a.profile != "none" && a.profile != "reference" && a.profile != "auto") profile = profile_from_csv(read_file(resolve(g, a.profile)));

    const auto r = generate_one(model, prompt_text(a.desc, formula, spacegroup), profile ? &*profile : nullptr, a.decode);
    if (!r.parses) {
        const fs::path raw = resolve(g, a.out.empty() ? "generated.raw" : fs::path(a.out).replace_extension(".raw").string());
        write_file(raw, r.text);
        std::cerr << "generated text does not parse (" << r.diagnostic << "); raw text saved to " << raw.string() << "\n";
        return 1;
    }
    if (a.out.empty() || a.out == "-")
        std::cout << r.text;
    else
        write_file(resolve(g, a.out), r.text);
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string ref_dir;
    std::string gen_dir;
    std::string out_dir = ".";
    MatchTolerances tol;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
    const auto refs = list_files(resolve(g, a.ref_dir), ".cif");
    const auto gens = list_files(resolve(g, a.gen_dir), ".cif");
    std::set<std::string> ref_names, gen_names;
    for (const auto& p : refs) ref_names.insert(p.filename().string());
    for (const auto& p : gens) gen_names.insert(p.filename().string());
    if (ref_names != gen_names) {
        std::vector<std::string> missing, extra;
        std::set_difference(ref_names.begin(), ref_names.end(), gen_names.begin(), gen_names.end(),
                            std::back_inserter(missing));
        std::set_difference(gen_names.begin(), gen_names.end(), ref_names.begin(), ref_names.end(),
                            std::back_inserter(extra));
        throw Error(ErrorCode::InvalidArgument, "reference and generated sets differ: " +
                                                    std::to_string(missing.size()) + " without a generated file, " +
                                                    std::to_string(extra.size()) + " without a reference");
    }
    if (refs.empty()) throw Error(ErrorCode::EmptyCorpus, "no .cif files in " + a.ref_dir);
    const fs::path gen_dir = resolve(g, a.gen_dir);
    std::vector<EvalReport> reports(refs.size());
    parallel_for(refs.size(), g.jobs, [&](std::size_t i) {
        reports[i] = evaluate_pair(refs[i].stem().string(), read_file(refs[i]), read_file(gen_dir / refs[i].filename()),
                                   a.tol);
    });
    const auto metrics = aggregate(reports);
    const fs::path out = resolve(g, a.out_dir);
    write_file(out / "eval_report.csv", reports_csv(reports));
    write_file(out / "metrics.csv", metrics_csv(metrics));
    std::cout << metrics_csv(metrics);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cifgen: PXRD-conditioned crystal structure generation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("-w,--workdir", g.workdir, "Base directory for every relative path")->capture_default_str();
    app.add_option("-j,--jobs", g.jobs, "Worker threads for per-file work")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--print-effective-config", g.print_config, "Print the resolved configuration and exit");

    std::string vocab_out;
    auto* vocab = app.add_subcommand("vocab", "Write the token vocabulary as TSV");
    vocab->add_option("-o,--out", vocab_out, "Output file ('-' for stdout)");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus of canonical CIFs plus manifest.jsonl");
    synth->add_option("-n,--size", synth_args.size, "Number of structures")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "Seed")->capture_default_str();
    synth->add_option("-o,--out-dir", synth_args.out_dir, "Output directory")->capture_default_str();
    synth->add_option("--families", synth_args.families,
                      "Subset of sc,bcc,fcc,cscl,rocksalt,tetragonal,hcp,orthorhombic")->delimiter(',');

    SimulateArgs sim_args;
    auto* simulate = app.add_subcommand("simulate", "Simulate PXRD profiles (q,intensity CSV on the fixed grid)");
    simulate->add_option("cifs", sim_args.inputs, "CIF files")->required();
    simulate->add_option("-o,--out-dir", sim_args.out_dir, "Directory for <stem>.csv")->capture_default_str();
    simulate->add_option("--fwhm", sim_args.transform.fwhm, "Peak FWHM in 1/angstrom")->capture_default_str();
    simulate->add_option("--eta", sim_args.transform.eta, "Lorentzian fraction")->capture_default_str();
    simulate->add_option("--noise", sim_args.transform.noise_var, "Gaussian noise variance")->capture_default_str();
    simulate->add_option("--seed", sim_args.transform.seed, "Noise seed")->capture_default_str();

    std::string train_config;
    std::vector<std::string> train_overrides;
    bool resume = false;
    auto* train = app.add_subcommand("train", "Train a model from a key = value config file");
    train->add_option("-c,--config", train_config, "Config file")->required();
    train->add_option("--set", train_overrides, "Override a config key (key=value); repeatable");
    train->add_flag("--resume", resume, "Continue from the checkpoint named in the config");
    train->footer(
        "Config keys (key = value, '#' starts a comment). Required: checkpoint, max_steps, and one of\n"
        "corpus_dir or synthetic_size.\n"
        "  model:     embed_dim n_layers n_heads context cond_hidden cond_layers ffn_multiplier dropout\n"
        "  optimizer: batch_size grad_accum learning_rate min_lr warmup_steps decay_steps weight_decay\n"
        "             beta1 beta2 adam_eps grad_clip augment eval_interval\n"
        "  data:      corpus_dir synthetic_size synthetic_families conditioned train_fraction val_fraction\n"
        "             test_fraction test_out\n"
        "  seeds:     seed (master); model_seed train_seed split_seed synthetic_seed default to values\n"
        "             derived from it\n"
        "  outputs:   checkpoint log checkpoint_interval");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Generate CIF text from a checkpoint");
    gen->add_option("--checkpoint", gen_args.checkpoint, "Checkpoint file")->required();
    gen->add_option("--profile", gen_args.profile,
                    "Profile CSV, 'reference' (clean profile of the reference CIF), 'none', or 'auto' (reference when one is given)")->capture_default_str();
    gen->add_option("--reference", gen_args.reference, "Reference CIF supplying profile and descriptors");
    gen->add_option("--desc", gen_args.desc, "Prompt descriptors: none, comp or comp+sg")->capture_default_str();
    gen->add_option("--composition", gen_args.composition, "Formula for the comp prompt, e.g. Na4Cl4");
    gen->add_option("--spacegroup", gen_args.spacegroup, "Hermann-Mauguin symbol for the comp+sg prompt");
    gen->add_option("--temperature", gen_args.decode.temperature, "0 decodes greedily")->capture_default_str();
    gen->add_option("--top-k", gen_args.decode.top_k, "Keep the k most likely tokens (0 keeps all)")->capture_default_str();
    gen->add_option("--seed", gen_args.decode.seed, "Sampling seed")->capture_default_str();
    gen->add_option("--max-tokens", gen_args.decode.max_new_tokens, "Limit on new tokens (-1: none)")->capture_default_str();
    gen->add_option("-o,--out", gen_args.out, "Output CIF ('-' for stdout)");
    gen->add_option("--ref-dir", gen_args.ref_dir, "Batch mode: one generation per reference CIF");
    gen->add_option("--out-dir", gen_args.out_dir, "Batch mode output directory");

    EvaluateArgs eval_args;
    auto* evaluate = app.add_subcommand("evaluate", "Compare generated CIFs with references of the same file name");
    evaluate->add_option("--ref", eval_args.ref_dir, "Reference directory")->required();
    evaluate->add_option("--gen", eval_args.gen_dir, "Generated directory")->required();
    evaluate->add_option("-o,--out-dir", eval_args.out_dir, "Where eval_report.csv and metrics.csv go")->capture_default_str();
    evaluate->add_option("--ltol", eval_args.tol.ltol, "Fractional length tolerance")->capture_default_str();
    evaluate->add_option("--stol", eval_args.tol.stol, "Site tolerance")->capture_default_str();
    evaluate->add_option("--angle-tol", eval_args.tol.angle_tol, "Angle tolerance in degrees")->capture_default_str();
    evaluate->footer("eval_report.csv columns: id,rwp,FM,SM,BL,SG,valid,matched\n"
                     "metrics.csv columns: FM,SG,BL,SM,valid,MR,rwp_mean,rwp_std,n (rates in percent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (g.print_config && !train->parsed()) {
            std::cout << "workdir = " << g.workdir << "\njobs = " << g.jobs << "\n";
            for (const auto* sub : app.get_subcommands())
                std::cout << "[" << sub->get_name() << "]\n" << sub->config_to_str(true, false);
            return 0;
        }
        if (vocab->parsed()) return cmd_vocab(g, vocab_out);
        if (synth->parsed()) return cmd_synth(g, synth_args);
        if (simulate->parsed()) return cmd_simulate(g, sim_args);
        if (train->parsed()) return cmd_train(g, train_config, train_overrides, resume);
        if (gen->parsed()) return cmd_generate(g, gen_args);
        if (evaluate->parsed()) return cmd_evaluate(g, eval_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
