#ifndef MCADOT_CLI_HPP
#define MCADOT_CLI_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "augment.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "evalr.hpp"
#include "nnet.hpp"
#include "phantom.hpp"
#include "preproc.hpp"
#include "trainer.hpp"
#include "volume.hpp"

/// Command-line front end. Subcommands mirror the pipeline stages (synth,
/// preprocess, train, predict, evaluate) so each stage is independently
/// scriptable. Configuration merges flag > config file > default; every
/// effective value is echoed at startup and recorded under --out as
/// run_config.txt, which carries no timestamps so reruns stay byte-identical.
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
namespace mcadot::cli {

using trainer::CaseRecord;
using trainer::Hemisphere;
using trainer::Split;
using trainer::TrainingSample;
using trainer::Weakness;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

namespace detail {

namespace fs = std::filesystem;

/// Argument misuse discovered after parsing (missing required flag, --n 0).
/// Maps to kExitUsage, unlike data_error which maps to kExitData.
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config merging
// ---------------------------------------------------------------------------

/// One merged configuration key: the flag that can pin it, a parser for
/// config-file text and a renderer for the effective value.
struct KeyBinding {
    CLI::Option* opt = nullptr;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

/// Registry of every key a subcommand understands. The config file may set
/// any registered key; a key whose flag was given on the command line is
/// left alone (flags win). Unknown keys are rejected by name.
class ConfigMap {
  public:
    void bind(const std::string& key, CLI::Option* opt, std::function<void(const std::string&)> set,
              std::function<std::string()> get) {
        require(keys_.emplace(key, KeyBinding{opt, std::move(set), std::move(get)}).second,
                "config: key '" + key + "' bound twice");
    }

    void bind_int(const std::string& key, CLI::Option* opt, int* v) {
        bind(
            key, opt,
            [v, key](const std::string& s) {
                long long x = parse_long(s, "config key " + key);
                require(x >= std::numeric_limits<int>::min() && x <= std::numeric_limits<int>::max(),
                        "config key " + key + ": value out of range");
                *v = static_cast<int>(x);
            },
            [v] { return std::to_string(*v); });
    }

    void bind_long(const std::string& key, CLI::Option* opt, long long* v) {
        bind(
            key, opt, [v, key](const std::string& s) { *v = parse_long(s, "config key " + key); },
            [v] { return std::to_string(*v); });
    }

    void bind_u64(const std::string& key, CLI::Option* opt, std::uint64_t* v) {
        bind(
            key, opt,
            [v, key](const std::string& s) {
                long long x = parse_long(s, "config key " + key);
                require(x >= 0, "config key " + key + ": must be >= 0");
                *v = static_cast<std::uint64_t>(x);
            },
            [v] { return std::to_string(*v); });
    }

    void bind_double(const std::string& key, CLI::Option* opt, double* v) {
        bind(
            key, opt, [v, key](const std::string& s) { *v = parse_double(s, "config key " + key); },
            [v] { return format_double(*v); });
    }

    void bind_string(const std::string& key, CLI::Option* opt, std::string* v) {
        bind(
            key, opt, [v](const std::string& s) { *v = s; }, [v] { return *v; });
    }

    void bind_bool01(const std::string& key, CLI::Option* opt, bool* v) {
        bind(
            key, opt,
            [v, key](const std::string& s) {
                long long x = parse_long(s, "config key " + key);
                require(x == 0 || x == 1, "config key " + key + ": must be 0 or 1");
                *v = x == 1;
            },
            [v] { return std::string(*v ? "1" : "0"); });
    }

    /// Applies a config file on top of the defaults, skipping keys already
    /// pinned by a flag. No-op when no file was given.
    void merge_file(const std::string& config_path) const {
        if (config_path.empty()) return;
        for (const auto& [k, v] : read_kv_file(config_path)) {
            auto it = keys_.find(k);
            if (it == keys_.end())
                throw data_error("config: unknown key '" + k + "'; known keys: " + known_keys());
            if (it->second.opt != nullptr && it->second.opt->count() > 0) continue;
            it->second.set(v);
        }
    }

    std::string known_keys() const {
        std::string out;
        for (const auto& [k, b] : keys_) {
            if (!out.empty()) out += ", ";
            out += k;
        }
        return out;
    }

    /// "key = value" lines for every effective value, in sorted key order.
    std::vector<std::string> lines() const {
        std::vector<std::string> out;
        out.reserve(keys_.size());
        for (const auto& [k, b] : keys_) out.push_back(k + " = " + b.get());
        return out;
    }

  private:
    std::map<std::string, KeyBinding> keys_;
};

/// Echoes the effective configuration and records it under the run
/// directory. Called once per command, before any work starts.
inline void emit_config(const std::string& command, const ConfigMap& cfg, const std::string& out_dir) {
    std::vector<std::string> lines;
    lines.push_back("command = " + command);
    for (const std::string& l : cfg.lines()) lines.push_back(l);
    std::string text;
    for (const std::string& l : lines) {
        std::cout << "config: " << l << "\n";
        text += l;
        text += '\n';
    }
    fs::create_directories(out_dir);
    write_file_bytes((fs::path(out_dir) / "run_config.txt").string(),
                     reinterpret_cast<const unsigned char*>(text.data()), text.size());
}

inline void require_flag(const std::string& value, const char* flag) {
    if (value.empty()) throw usage_error(std::string("missing required flag ") + flag);
}

inline void require_workers(int workers) {
    if (workers < 1) throw usage_error("--workers must be >= 1");
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Phantom spec for the requested volume dims. Anatomy and motion shrink
/// with the in-plane size so small volumes stay valid; the dot slice band
/// is clamped into the volume. Defaults are kept when dims are 512 or more.
inline phantom::PhantomSpec spec_for_dims(int nx, int ny, int nz) {
    phantom::PhantomSpec s;
    double k = std::min(nx, ny) / 512.0;
    s.nx = nx;
    s.ny = ny;
    s.nz = nz;
    if (k < 1.0) {
        s.brain_ax = std::floor(s.brain_ax * k);
        s.brain_ay = std::floor(s.brain_ay * k);
        s.center_jitter = std::max(1.0, std::floor(s.center_jitter * k));
        s.max_shift_px = std::max(2.0, std::floor(s.max_shift_px * k));
    }
    if (s.dot_slice_hi > nz) {
        s.dot_slice_hi = nz;
        s.dot_slice_lo = std::min(s.dot_slice_lo, s.dot_slice_hi);
        s.dot_run_hi = std::min(s.dot_run_hi, s.dot_slice_hi - s.dot_slice_lo + 1);
        s.dot_run_lo = std::min(s.dot_run_lo, s.dot_run_hi);
    }
    s.validate();
    return s;
}

/// CLI-side preprocessing default: ROI origins live on the 512 reference
/// grid so synthetic cohorts of any in-plane size get anatomically matched
/// crops. The library default stays off for direct pixel-coordinate use.
inline preproc::PreprocConfig default_preproc() {
    preproc::PreprocConfig pp;
    pp.roi_on_reference_grid = true;
    return pp;
}

inline std::vector<CaseRecord> split_records(const std::vector<CaseRecord>& cohort, Split split) {
    std::vector<CaseRecord> out;
    for (const CaseRecord& rec : cohort)
        if (rec.split == split) out.push_back(rec);
    return out;
}

inline std::vector<TrainingSample> build_split(const std::vector<CaseRecord>& cohort, Split split,
                                               const preproc::PreprocConfig& pp, int workers) {
    trainer::DatasetBuildResult r = trainer::build_dataset(split_records(cohort, split), pp, workers);
    for (const trainer::CaseFailure& f : r.failures)
        std::cerr << "warning: skipped case " << f.case_id << ": " << f.message << "\n";
    std::cout << trainer::to_string(split) << " split: " << r.summary() << "\n";
    return std::move(r.samples);
}

/// Test-split samples for evaluate/predict: either a preprocessed archive
/// directory (--samples) or a manifest preprocessed on the fly with the
/// default configuration. Custom preprocessing goes through `preprocess`.
inline std::vector<TrainingSample> load_test_samples(const std::string& samples_dir,
                                                     const std::string& manifest, int workers) {
    if (!samples_dir.empty())
        return trainer::load_samples((fs::path(samples_dir) / "samples_test.bin").string());
    if (manifest.empty()) throw usage_error("pass --manifest or --samples");
    return build_split(trainer::load_manifest(manifest), Split::Test, default_preproc(), workers);
}

inline std::string checkpoint_path(const std::string& out_dir, const char* name) {
    return (fs::path(out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out, config;
    long long n = 0;
    double prevalence = phantom::kDefaultPrevalence;
    std::uint64_t seed = 0;
    int workers = 1;
    int nx = 512, ny = 512, nz = 30;
    std::vector<int> dims_flag;
    ConfigMap cfg;
    CLI::Option* opt_dims = nullptr;
};

inline void register_synth(CLI::App& app, SynthArgs& a) {
    CLI::App* sub = app.add_subcommand("synth", "generate a synthetic cohort with manifest");
    sub->add_option("--config", a.config, "key = value file merged under the flags");
    CLI::Option* out = sub->add_option("--out", a.out, "output directory");
    CLI::Option* n = sub->add_option("--n", a.n, "number of cases");
    CLI::Option* prev = sub->add_option("--prevalence", a.prevalence, "fraction of positive cases");
    CLI::Option* seed = sub->add_option("--seed", a.seed, "master seed");
    CLI::Option* workers = sub->add_option("--workers", a.workers, "parallel case generation");
    a.opt_dims = sub->add_option("--dims", a.dims_flag, "volume dims nx ny nz")->expected(3);

    a.cfg.bind_string("out", out, &a.out);
    a.cfg.bind_long("n", n, &a.n);
    a.cfg.bind_double("prevalence", prev, &a.prevalence);
    a.cfg.bind_u64("seed", seed, &a.seed);
    a.cfg.bind_int("workers", workers, &a.workers);
    a.cfg.bind_int("nx", a.opt_dims, &a.nx);
    a.cfg.bind_int("ny", a.opt_dims, &a.ny);
    a.cfg.bind_int("nz", a.opt_dims, &a.nz);
}

inline int cmd_synth(SynthArgs& a) {
    if (a.opt_dims->count() > 0) {
        a.nx = a.dims_flag[0];
        a.ny = a.dims_flag[1];
        a.nz = a.dims_flag[2];
    }
    a.cfg.merge_file(a.config);
    require_flag(a.out, "--out");
    if (a.n < 1) throw usage_error("--n must be >= 1");
    require_workers(a.workers);
    emit_config("synth", a.cfg, a.out);

    phantom::PhantomSpec spec = spec_for_dims(a.nx, a.ny, a.nz);
    std::vector<CaseRecord> cohort = phantom::generate_cohort(spec, static_cast<int>(a.n),
                                                              a.prevalence, a.seed, a.out, a.workers);
    long long positives = 0;
    for (const CaseRecord& rec : cohort) positives += rec.has_mca ? 1 : 0;
    std::printf("synth: wrote %lld cases (%lld positive) to %s\n", a.n, positives, a.out.c_str());
    std::cout << "manifest: " << (fs::path(a.out) / "manifest.tsv").string() << "\n";
    std::cout << evalr::contingency(cohort).to_string();
    return kExitOk;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string manifest, out, config;
    int workers = 1;
    preproc::PreprocConfig pp = default_preproc();
    std::pair<int, int> slice_range{0, 0};
    std::pair<double, double> hu_window{0, 0};
    std::pair<int, int> roi_left{0, 0};
    std::pair<int, int> roi_right{0, 0};
    std::string mapping = "contralateral";
    ConfigMap cfg;
    CLI::Option* opt_slice = nullptr;
    CLI::Option* opt_hu = nullptr;
    CLI::Option* opt_roi_left = nullptr;
    CLI::Option* opt_roi_right = nullptr;
};

inline void register_preprocess(CLI::App& app, PreprocessArgs& a) {
    CLI::App* sub = app.add_subcommand("preprocess", "turn a cohort into 128x128 hemisphere samples");
    sub->add_option("--config", a.config, "key = value file merged under the flags");
    CLI::Option* manifest = sub->add_option("--manifest", a.manifest, "cohort manifest");
    CLI::Option* out = sub->add_option("--out", a.out, "output directory");
    CLI::Option* workers = sub->add_option("--workers", a.workers, "parallel case preprocessing");
    a.opt_slice = sub->add_option("--slice-range", a.slice_range, "first and last slice, 1-based inclusive");
    a.opt_hu = sub->add_option("--hu-window", a.hu_window, "HU window lo hi");
    CLI::Option* bone = sub->add_option("--bone-threshold", a.pp.bone_threshold, "HU above which voxels count as bone");
    a.opt_roi_left = sub->add_option("--roi-left", a.roi_left, "left ROI origin x y");
    a.opt_roi_right = sub->add_option("--roi-right", a.roi_right, "right ROI origin x y");
    CLI::Option* mapping = sub->add_option("--mapping", a.mapping, "weakness to hemisphere mapping")
                               ->check(CLI::IsMember({"contralateral", "ipsilateral"}));
    CLI::Option* bins = sub->add_option("--bins", a.pp.bins, "equalization histogram bins");
    CLI::Option* refgrid = sub->add_option("--reference-grid", a.pp.roi_on_reference_grid,
                                           "read ROI origins on the 512 reference grid (0/1)");

    a.cfg.bind_string("manifest", manifest, &a.manifest);
    a.cfg.bind_string("out", out, &a.out);
    a.cfg.bind_int("workers", workers, &a.workers);
    a.cfg.bind_int("slice_first", a.opt_slice, &a.pp.slice_first);
    a.cfg.bind_int("slice_last", a.opt_slice, &a.pp.slice_last);
    a.cfg.bind_double("hu_lo", a.opt_hu, &a.pp.hu_lo);
    a.cfg.bind_double("hu_hi", a.opt_hu, &a.pp.hu_hi);
    a.cfg.bind_double("bone_threshold", bone, &a.pp.bone_threshold);
    a.cfg.bind_int("left_x0", a.opt_roi_left, &a.pp.left_x0);
    a.cfg.bind_int("left_y0", a.opt_roi_left, &a.pp.left_y0);
    a.cfg.bind_int("right_x0", a.opt_roi_right, &a.pp.right_x0);
    a.cfg.bind_int("right_y0", a.opt_roi_right, &a.pp.right_y0);
    a.cfg.bind_string("mapping", mapping, &a.mapping);
    a.cfg.bind_int("bins", bins, &a.pp.bins);
    a.cfg.bind_bool01("reference_grid", refgrid, &a.pp.roi_on_reference_grid);
}

inline int cmd_preprocess(PreprocessArgs& a) {
    if (a.opt_slice->count() > 0) {
        a.pp.slice_first = a.slice_range.first;
        a.pp.slice_last = a.slice_range.second;
    }
    if (a.opt_hu->count() > 0) {
        a.pp.hu_lo = a.hu_window.first;
        a.pp.hu_hi = a.hu_window.second;
    }
    if (a.opt_roi_left->count() > 0) {
        a.pp.left_x0 = a.roi_left.first;
        a.pp.left_y0 = a.roi_left.second;
    }
    if (a.opt_roi_right->count() > 0) {
        a.pp.right_x0 = a.roi_right.first;
        a.pp.right_y0 = a.roi_right.second;
    }
    a.cfg.merge_file(a.config);
    require(a.mapping == "contralateral" || a.mapping == "ipsilateral",
            "config key mapping: expected contralateral or ipsilateral");
    a.pp.mapping = a.mapping == "ipsilateral" ? preproc::PreprocConfig::WeaknessMapping::ipsilateral
                                              : preproc::PreprocConfig::WeaknessMapping::contralateral;
    require_flag(a.manifest, "--manifest");
    require_flag(a.out, "--out");
    require_workers(a.workers);
    a.pp.validate();
    emit_config("preprocess", a.cfg, a.out);

    std::vector<CaseRecord> cohort = trainer::load_manifest(a.manifest);
    if (cohort.empty()) std::cerr << "warning: manifest lists no cases; archives will be empty\n";
    std::vector<TrainingSample> train = build_split(cohort, Split::Train, a.pp, a.workers);
    std::vector<TrainingSample> test = build_split(cohort, Split::Test, a.pp, a.workers);
    trainer::write_samples(train, (fs::path(a.out) / "samples_train.bin").string());
    trainer::write_samples(test, (fs::path(a.out) / "samples_test.bin").string());
    std::printf("preprocess: wrote %zu samples (%zu train, %zu test) to %s\n",
                train.size() + test.size(), train.size(), test.size(), a.out.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest, samples, out, config, resume;
    std::string arch = "desk";
    int workers = 1;
    trainer::TrainConfig tc;
    std::pair<double, double> aug_zoom{0, 0};
    ConfigMap cfg;
    CLI::Option* opt_zoom = nullptr;
};

inline void register_train(CLI::App& app, TrainArgs& a) {
    CLI::App* sub = app.add_subcommand("train", "train the segmentation network");
    sub->add_option("--config", a.config, "key = value file merged under the flags");
    CLI::Option* manifest = sub->add_option("--manifest", a.manifest, "cohort manifest (preprocessed with defaults)");
    CLI::Option* samples = sub->add_option("--samples", a.samples, "directory holding preprocess output");
    CLI::Option* out = sub->add_option("--out", a.out, "output directory");
    CLI::Option* resume = sub->add_option("--resume", a.resume, "checkpoint to continue from");
    CLI::Option* workers = sub->add_option("--workers", a.workers, "parallel sample preparation");
    CLI::Option* epochs = sub->add_option("--epochs", a.tc.epochs, "training epochs");
    CLI::Option* lr = sub->add_option("--lr", a.tc.lr, "Adam learning rate");
    CLI::Option* batch = sub->add_option("--batch-size", a.tc.batch_size, "samples per batch");
    CLI::Option* seed = sub->add_option("--seed", a.tc.seed, "master seed");
    CLI::Option* sigma = sub->add_option("--sigma", a.tc.sigma, "Dice smoothing term");
    CLI::Option* arch = sub->add_option("--arch", a.arch, "architecture preset")
                            ->check(CLI::IsMember({"desk", "vgg16"}));
    a.opt_zoom = sub->add_option("--aug-zoom", a.aug_zoom, "zoom band lo hi");
    CLI::Option* shift = sub->add_option("--aug-shift", a.tc.augment.max_shift_px, "max augmentation shift, px");
    CLI::Option* rot = sub->add_option("--aug-rot", a.tc.augment.max_rotation_deg, "max augmentation rotation, deg");
    CLI::Option* hflip = sub->add_option("--aug-hflip", a.tc.augment.hflip, "horizontal flip augmentation (0/1)");

    a.cfg.bind_string("manifest", manifest, &a.manifest);
    a.cfg.bind_string("samples", samples, &a.samples);
    a.cfg.bind_string("out", out, &a.out);
    a.cfg.bind_string("resume", resume, &a.resume);
    a.cfg.bind_int("workers", workers, &a.workers);
    a.cfg.bind_long("epochs", epochs, &a.tc.epochs);
    a.cfg.bind_double("lr", lr, &a.tc.lr);
    a.cfg.bind_int("batch_size", batch, &a.tc.batch_size);
    a.cfg.bind_u64("seed", seed, &a.tc.seed);
    a.cfg.bind_double("sigma", sigma, &a.tc.sigma);
    a.cfg.bind_string("arch", arch, &a.arch);
    a.cfg.bind_double("zoom_lo", a.opt_zoom, &a.tc.augment.zoom_lo);
    a.cfg.bind_double("zoom_hi", a.opt_zoom, &a.tc.augment.zoom_hi);
    a.cfg.bind_double("max_shift_px", shift, &a.tc.augment.max_shift_px);
    a.cfg.bind_double("max_rotation_deg", rot, &a.tc.augment.max_rotation_deg);
    a.cfg.bind_bool01("hflip", hflip, &a.tc.augment.hflip);
}

inline int cmd_train(TrainArgs& a) {
    if (a.opt_zoom->count() > 0) {
        a.tc.augment.zoom_lo = a.aug_zoom.first;
        a.tc.augment.zoom_hi = a.aug_zoom.second;
    }
    a.cfg.merge_file(a.config);
    require_flag(a.out, "--out");
    require_workers(a.workers);
    a.tc.arch = nnet::ArchConfig::named(a.arch);
    a.tc.validate();
    emit_config("train", a.cfg, a.out);

    std::vector<TrainingSample> train_set, val_set;
    if (!a.samples.empty()) {
        train_set = trainer::load_samples((fs::path(a.samples) / "samples_train.bin").string());
        std::string val_path = (fs::path(a.samples) / "samples_test.bin").string();
        if (fs::exists(val_path)) val_set = trainer::load_samples(val_path);
    } else {
        if (a.manifest.empty()) throw usage_error("pass --manifest or --samples");
        std::vector<CaseRecord> cohort = trainer::load_manifest(a.manifest);
        train_set = build_split(cohort, Split::Train, default_preproc(), a.workers);
        val_set = build_split(cohort, Split::Test, default_preproc(), a.workers);
    }
    require(!train_set.empty(), "train: no training samples");
    if (a.tc.lr == 0.0) std::cerr << "warning: lr is 0; parameters will not change\n";

    trainer::Checkpoint<float> resume;
    bool has_resume = !a.resume.empty();
    if (has_resume) resume = trainer::load_checkpoint<float>(a.resume, &a.tc.arch);

    trainer::TrainResult r = trainer::train(
        train_set, a.tc, val_set.empty() ? nullptr : &val_set, has_resume ? &resume : nullptr,
        a.workers, [&](const trainer::EpochStats& st) {
            std::printf("epoch %lld/%lld  mean_loss %.6f  mean_soft_dice %.6f\n", st.epoch,
                        a.tc.epochs, st.mean_loss, st.mean_soft_dice);
        });
    for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";

    std::string final_path = checkpoint_path(a.out, "checkpoint.ckpt");
    trainer::save_checkpoint(r.model, &r.adam, a.tc.epochs, final_path);
    trainer::write_history(r.history, (fs::path(a.out) / "history.tsv").string());
    std::printf("train: %zu samples, %lld epochs; wrote %s\n", train_set.size(), a.tc.epochs,
                final_path.c_str());
    if (r.has_best) {
        std::string best_path = checkpoint_path(a.out, "checkpoint_best.ckpt");
        trainer::save_checkpoint(r.best_model, static_cast<nnet::AdamState<float>*>(nullptr),
                                 r.best_epoch, best_path);
        std::printf("train: best validation loss %s at epoch %lld; wrote %s\n",
                    format_double(r.best_val_loss).c_str(), r.best_epoch, best_path.c_str());
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate / predict
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string manifest, samples, out, config, checkpoint;
    double threshold = 0.5;
    int workers = 1;
    ConfigMap cfg;
};

inline void register_eval(CLI::App& app, const char* name, const char* help, EvalArgs& a) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", a.config, "key = value file merged under the flags");
    CLI::Option* manifest = sub->add_option("--manifest", a.manifest, "cohort manifest (preprocessed with defaults)");
    CLI::Option* samples = sub->add_option("--samples", a.samples, "directory holding preprocess output");
    CLI::Option* out = sub->add_option("--out", a.out, "output directory");
    CLI::Option* ckpt = sub->add_option("--checkpoint", a.checkpoint, "trained checkpoint");
    CLI::Option* thr = sub->add_option("--threshold", a.threshold, "binarization threshold");
    CLI::Option* workers = sub->add_option("--workers", a.workers, "parallel inference");

    a.cfg.bind_string("manifest", manifest, &a.manifest);
    a.cfg.bind_string("samples", samples, &a.samples);
    a.cfg.bind_string("out", out, &a.out);
    a.cfg.bind_string("checkpoint", ckpt, &a.checkpoint);
    a.cfg.bind_double("threshold", thr, &a.threshold);
    a.cfg.bind_int("workers", workers, &a.workers);
}

inline int cmd_evaluate(EvalArgs& a) {
    a.cfg.merge_file(a.config);
    require_flag(a.out, "--out");
    require_flag(a.checkpoint, "--checkpoint");
    require_workers(a.workers);
    emit_config("evaluate", a.cfg, a.out);

    trainer::Checkpoint<float> ck = trainer::load_checkpoint<float>(a.checkpoint);
    std::vector<TrainingSample> test = load_test_samples(a.samples, a.manifest, a.workers);
    if (test.empty()) std::cerr << "warning: no test samples; report covers an empty split\n";

    evalr::DscReport rep = evalr::evaluate_cohort(ck.model, test, a.threshold, a.workers);
    std::string summary = rep.summary();
    std::cout << summary;
    write_file_bytes((fs::path(a.out) / "report.txt").string(),
                     reinterpret_cast<const unsigned char*>(summary.data()), summary.size());
    std::string tsv = rep.to_tsv();
    write_file_bytes((fs::path(a.out) / "report.tsv").string(),
                     reinterpret_cast<const unsigned char*>(tsv.data()), tsv.size());
    std::printf("evaluate: wrote report.txt and report.tsv to %s\n", a.out.c_str());
    return kExitOk;
}

/// PGM triptych [raw | ground truth | prediction] for one sample, 8-bit.
inline void write_overlay(const TrainingSample& s, const std::vector<std::uint8_t>& pred,
                          const std::string& path) {
    const int k = TrainingSample::kSize;
    std::string text = "P5\n" + std::to_string(3 * k) + " " + std::to_string(k) + "\n255\n";
    std::vector<unsigned char> bytes(text.begin(), text.end());
    bytes.reserve(bytes.size() + static_cast<std::size_t>(3 * k * k));
    for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
            double v = std::clamp(static_cast<double>(s.image[static_cast<std::size_t>(y * k + x)]), 0.0, 1.0);
            bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
        for (int x = 0; x < k; ++x)
            bytes.push_back(s.target[static_cast<std::size_t>(y * k + x)] != 0 ? 255 : 0);
        for (int x = 0; x < k; ++x)
            bytes.push_back(pred[static_cast<std::size_t>(y * k + x)] != 0 ? 255 : 0);
    }
    write_file_bytes(path, bytes.data(), bytes.size());
}

inline int cmd_predict(EvalArgs& a) {
    a.cfg.merge_file(a.config);
    require_flag(a.out, "--out");
    require_flag(a.checkpoint, "--checkpoint");
    require_workers(a.workers);
    emit_config("predict", a.cfg, a.out);

    trainer::Checkpoint<float> ck = trainer::load_checkpoint<float>(a.checkpoint);
    std::vector<TrainingSample> test = load_test_samples(a.samples, a.manifest, a.workers);
    if (test.empty()) std::cerr << "warning: no test samples; nothing to predict\n";

    const int k = TrainingSample::kSize;
    std::vector<std::vector<std::uint8_t>> preds(test.size());
    parallel_for(test.size(), a.workers, [&](std::size_t i) {
        const TrainingSample& s = test[i];
        s.validate();
        nnet::Tensor4<float> x(1, 1, k, k);
        std::copy(s.image.begin(), s.image.end(), x.data.begin());
        nnet::Tensor4<float> probs = nnet::forward(ck.model, x);
        std::vector<float> p(probs.data.begin(), probs.data.end());
        preds[i] = evalr::binarize(p, a.threshold);
    });

    // Stack each case/hemisphere stream back into a mask volume, one slice
    // per sample, in first-appearance order.
    std::vector<std::pair<std::string, Hemisphere>> groups;
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto key = std::make_pair(test[i].case_id, static_cast<int>(test[i].hemisphere));
        auto [it, fresh] = members.emplace(key, std::vector<std::size_t>{});
        if (fresh) groups.emplace_back(test[i].case_id, test[i].hemisphere);
        it->second.push_back(i);
    }

    std::string index = "case_id\tslice\themisphere\tvolume\toverlay\n";
    std::size_t overlays = 0;
    for (const auto& [case_id, hemi] : groups) {
        std::vector<std::size_t>& idx = members[{case_id, static_cast<int>(hemi)}];
        std::sort(idx.begin(), idx.end(), [&](std::size_t p, std::size_t q) {
            return test[p].slice_index < test[q].slice_index;
        });
        volume::MaskVolume mv(k, k, static_cast<int>(idx.size()), 0);
        std::string stem = "pred_" + case_id + "_" + trainer::to_string(hemi);
        for (std::size_t z = 0; z < idx.size(); ++z) {
            const TrainingSample& s = test[idx[z]];
            std::copy(preds[idx[z]].begin(), preds[idx[z]].end(),
                      mv.voxels.begin() + static_cast<std::ptrdiff_t>(z) * k * k);
            char num[16];
            std::snprintf(num, sizeof num, "%03d", s.slice_index);
            std::string overlay = "overlay_" + case_id + "_s" + num + "_" + trainer::to_string(hemi) + ".pgm";
            write_overlay(s, preds[idx[z]], (fs::path(a.out) / overlay).string());
            ++overlays;
            index += case_id + "\t" + std::to_string(s.slice_index) + "\t" + trainer::to_string(hemi) +
                     "\t" + stem + ".json\t" + overlay + "\n";
        }
        volume::write_volume(mv, (fs::path(a.out) / stem).string());
    }
    write_file_bytes((fs::path(a.out) / "index.tsv").string(),
                     reinterpret_cast<const unsigned char*>(index.data()), index.size());
    std::printf("predict: wrote %zu mask volumes and %zu overlays to %s\n", groups.size(), overlays,
                a.out.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"hyperdense MCA dot sign segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    PreprocessArgs preprocess;
    TrainArgs train;
    EvalArgs evaluate, predict;
    register_synth(app, synth);
    register_preprocess(app, preprocess);
    register_train(app, train);
    register_eval(app, "evaluate", "score a checkpoint on the test split", evaluate);
    register_eval(app, "predict", "write predicted masks and overlay images", predict);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    if (app.got_subcommand("synth")) return cmd_synth(synth);
    if (app.got_subcommand("preprocess")) return cmd_preprocess(preprocess);
    if (app.got_subcommand("train")) return cmd_train(train);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(evaluate);
    if (app.got_subcommand("predict")) return cmd_predict(predict);
    throw std::logic_error("unreachable: subcommand required");
}

}  // namespace detail

/// Parses and runs one command line; returns the process exit code.
inline int run_cli(int argc, const char* const* argv) {
    try {
        return detail::run(argc, argv);
    } catch (const detail::usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace mcadot::cli

#endif
