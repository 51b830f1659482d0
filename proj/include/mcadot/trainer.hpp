#ifndef MCADOT_TRAINER_HPP
#define MCADOT_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "augment.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "nnet.hpp"
#include "preproc.hpp"

namespace mcadot::trainer {

// Checkpoint serialization lives next to the parameter layout it encodes.
using nnet::Checkpoint;
using nnet::load_checkpoint;
using nnet::save_checkpoint;

struct TrainConfig {
    long long epochs = 200;
    double lr = 1e-5;
    int batch_size = 8;
    std::uint64_t seed = 0;
    augment::AugmentConfig augment;
    nnet::ArchConfig arch = nnet::ArchConfig::desk();
    double sigma = 1.0;  // Dice smoothing, forwarded to the loss

    void validate() const {
        require(epochs >= 1, "train config: epochs must be >= 1");
        require(batch_size >= 1, "train config: batch_size must be >= 1");
        require(std::isfinite(lr) && lr >= 0.0, "train config: lr must be finite and >= 0");
        require(std::isfinite(sigma) && sigma > 0.0, "train config: sigma must be > 0");
        augment.validate();
        arch.validate();
    }
};

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct CaseFailure {
    std::string case_id;
    std::string message;
};

struct DatasetBuildResult {
    std::vector<TrainingSample> samples;
    std::vector<CaseFailure> failures;  // eligible cases whose preprocessing failed
    std::size_t eligible_cases = 0;     // cases with weakness != None
    std::size_t positive_samples = 0;   // samples with at least one target pixel set

    std::string summary() const {
        char buf[192];
        std::snprintf(buf, sizeof buf,
                      "%zu samples (%zu with positive targets) from %zu of %zu eligible cases; "
                      "%zu cases skipped",
                      samples.size(), positive_samples, eligible_cases - failures.size(),
                      eligible_cases, failures.size());
        return buf;
    }
};

/// Concatenates preprocess_case over every case with a recorded side of
/// weakness, in cohort order. Cases without weakness carry no usable ROI and
/// contribute nothing. A failing case is skipped and reported instead of
/// aborting the build; callers decide whether a partial dataset is acceptable.
/// Split filtering is the caller's job: pass only the cases to be used.
inline DatasetBuildResult build_dataset(const std::vector<CaseRecord>& cohort,
                                        const preproc::PreprocConfig& cfg, int workers = 1) {
    std::vector<const CaseRecord*> eligible;
    for (const CaseRecord& rec : cohort)
        if (rec.weakness != Weakness::None) eligible.push_back(&rec);

    // Per-case slots keep the assembly order fixed regardless of workers.
    std::vector<std::vector<TrainingSample>> slots(eligible.size());
    std::vector<std::string> errors(eligible.size());
    parallel_for(eligible.size(), workers, [&](std::size_t i) {
        try {
            slots[i] = preproc::preprocess_case(*eligible[i], cfg);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    DatasetBuildResult r;
    r.eligible_cases = eligible.size();
    for (std::size_t i = 0; i < eligible.size(); ++i) {
        if (!errors[i].empty()) {
            r.failures.push_back({eligible[i]->case_id, errors[i]});
            continue;
        }
        for (TrainingSample& s : slots[i]) {
            if (s.has_positive_target()) ++r.positive_samples;
            r.samples.push_back(std::move(s));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    long long epoch = 0;  // 1-based; cumulative across resumed runs
    double mean_loss = 0;
    double mean_soft_dice = 0;
};

inline std::string format_history_line(const EpochStats& e) {
    return std::to_string(e.epoch) + "\t" + format_double(e.mean_loss) + "\t" +
           format_double(e.mean_soft_dice);
}

/// One epoch per line: epoch, mean loss, mean soft-Dice, tab-separated.
inline void write_history(const std::vector<EpochStats>& history, const std::string& path) {
    std::string text = "epoch\tmean_loss\tmean_soft_dice\n";
    for (const EpochStats& e : history) {
        text += format_history_line(e);
        text += '\n';
    }
    write_file_bytes(path, reinterpret_cast<const unsigned char*>(text.data()), text.size());
}

struct TrainResult {
    nnet::FcnModel<float> model;      // parameters after the final epoch
    nnet::AdamState<float> adam;      // optimizer state after the final epoch
    std::vector<EpochStats> history;  // one entry per epoch run by this call
    std::vector<std::string> warnings;

    bool has_best = false;  // set when a non-empty validation set is supplied
    nnet::FcnModel<float> best_model;
    long long best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

inline void fill_batch(const std::vector<TrainingSample>& samples, std::size_t lo, std::size_t hi,
                       nnet::Tensor4<float>& x, nnet::Tensor4<float>& y) {
    const int k = TrainingSample::kSize;
    const int bn = static_cast<int>(hi - lo);
    x = nnet::Tensor4<float>(bn, 1, k, k);
    y = nnet::Tensor4<float>(bn, 1, k, k);
    for (int b = 0; b < bn; ++b) {
        const TrainingSample& s = samples[lo + static_cast<std::size_t>(b)];
        std::copy(s.image.begin(), s.image.end(), x.sample(b));
        float* yp = y.sample(b);
        for (std::size_t i = 0; i < s.target.size(); ++i) yp[i] = static_cast<float>(s.target[i]);
    }
}

inline std::string batch_provenance(const std::vector<TrainingSample>& samples, std::size_t lo,
                                    std::size_t hi) {
    std::string out;
    for (std::size_t j = lo; j < hi; ++j) {
        const TrainingSample& s = samples[j];
        if (!out.empty()) out += ", ";
        out += s.case_id + "/slice " + std::to_string(s.slice_index) + "/" +
               to_string(s.hemisphere);
    }
    return out;
}

/// Forward-only mean loss and mean soft-Dice over a dataset, batched the same
/// way as training (the Dice sums couple samples within a batch, so the batch
/// partition is part of the metric's definition).
inline std::pair<double, double> dataset_loss(const nnet::FcnModel<float>& model,
                                              const std::vector<TrainingSample>& samples,
                                              int batch_size, double sigma, int workers) {
    const std::size_t n = samples.size();
    double loss_sum = 0, dice_sum = 0;
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch_size));
        nnet::Tensor4<float> x, y;
        fill_batch(samples, lo, hi, x, y);
        nnet::Tensor4<float> probs(x.n, model.arch.out_channels, x.h, x.w);
        parallel_for(static_cast<std::size_t>(x.n), workers, [&](std::size_t i) {
            nnet::Tensor4<float> one = nnet::sample_view_copy(x, static_cast<int>(i));
            nnet::Tensor4<float> p = nnet::forward(model, one);
            std::copy(p.data.begin(), p.data.end(), probs.sample(static_cast<int>(i)));
        });
        nnet::LossResult<float> l = nnet::loss_bce_dice(probs, y, sigma);
        const double bn = static_cast<double>(hi - lo);
        loss_sum += l.loss * bn;
        dice_sum += l.soft_dice * bn;
    }
    return {loss_sum / static_cast<double>(n), dice_sum / static_cast<double>(n)};
}

}  // namespace detail

/// Runs the seeded epoch loop: shuffle, per-sample augmentation, mini-batches,
/// forward, combined BCE + soft-Dice loss, backward, Adam step. The epoch
/// stream is derived from (seed, epoch) and the augmentation stream for slot j
/// from (seed, epoch, j), so the whole run is a pure function of (dataset,
/// config) and resuming from a checkpoint at an epoch boundary reproduces the
/// uninterrupted run exactly. Workers only change wall time, never results.
///
/// `validation`, when non-empty, selects a best-by-validation-loss snapshot.
/// `resume` continues from a saved checkpoint (architecture must match; the
/// checkpointed optimizer state, including its learning rate, wins).
inline TrainResult train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                         const std::vector<TrainingSample>* validation = nullptr,
                         const Checkpoint<float>* resume = nullptr, int workers = 1,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    require(!dataset.empty(), "train: dataset is empty");
    for (const TrainingSample& s : dataset) s.validate();
    if (validation)
        for (const TrainingSample& s : *validation) s.validate();

    TrainResult r;
    const bool any_positive = std::any_of(dataset.begin(), dataset.end(), [](const TrainingSample& s) {
        return s.has_positive_target();
    });
    if (!any_positive)
        r.warnings.push_back(
            "train: no positive target pixels in the dataset; the model can only learn the "
            "background class");

    long long start_epoch = 0;
    if (resume) {
        require(resume->model.arch == cfg.arch,
                "train: resume checkpoint architecture does not match the config");
        require(resume->has_adam, "train: resume checkpoint lacks optimizer state");
        require(resume->epoch < cfg.epochs, "train: checkpoint already completed the requested epochs");
        r.model = resume->model;
        r.adam = resume->adam;
        start_epoch = resume->epoch;
        if (r.adam.lr != cfg.lr)
            r.warnings.push_back("train: resuming with the checkpoint's learning rate " +
                                 format_double(r.adam.lr) + ", not the configured " +
                                 format_double(cfg.lr));
    } else {
        r.model = nnet::build_model<float>(cfg.arch, cfg.seed);
        r.adam = nnet::make_adam(r.model, cfg.lr);
    }

    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);

    for (long long epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const std::uint64_t epoch_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
        Rng shuffle_rng(epoch_seed);
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        // Partitioned augmentation streams: slot j's spec depends only on
        // (seed, epoch, j), so any worker arrangement draws the same specs.
        std::vector<TrainingSample> aug(n);
        parallel_for(n, workers, [&](std::size_t j) {
            Rng srng(mix_seed(epoch_seed, j + 1));
            augment::AugmentSpec spec = augment::sample_spec(srng, cfg.augment);
            aug[j] = augment::apply(dataset[order[j]], spec);
        });

        double loss_sum = 0, dice_sum = 0;
        for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
            nnet::Tensor4<float> x, y;
            detail::fill_batch(aug, lo, hi, x, y);
            nnet::BackwardResult<float> res =
                nnet::batch_forward_backward(r.model, x, y, cfg.sigma, workers);
            if (!std::isfinite(res.loss.loss))
                throw std::runtime_error(
                    "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(lo / static_cast<std::size_t>(cfg.batch_size) + 1) + " (" +
                    detail::batch_provenance(aug, lo, hi) + ")");
            nnet::adam_step(r.model.params, res.grads, r.adam);
            const double bn = static_cast<double>(hi - lo);
            loss_sum += res.loss.loss * bn;
            dice_sum += res.loss.soft_dice * bn;
        }

        EpochStats st;
        st.epoch = epoch;
        st.mean_loss = loss_sum / static_cast<double>(n);
        st.mean_soft_dice = dice_sum / static_cast<double>(n);
        r.history.push_back(st);
        if (on_epoch) on_epoch(st);

        if (validation && !validation->empty()) {
            auto [val_loss, val_dice] =
                detail::dataset_loss(r.model, *validation, cfg.batch_size, cfg.sigma, workers);
            (void)val_dice;
            if (val_loss < r.best_val_loss) {
                r.best_val_loss = val_loss;
                r.best_model = r.model;
                r.best_epoch = epoch;
                r.has_best = true;
            }
        }
    }
    return r;
}

}  // namespace mcadot::trainer

#endif
