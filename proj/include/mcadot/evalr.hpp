#ifndef MCADOT_EVALR_HPP
#define MCADOT_EVALR_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cohort.hpp"
#include "common.hpp"
#include "nnet.hpp"

namespace mcadot::evalr {

using trainer::CaseRecord;
using trainer::Hemisphere;
using trainer::TrainingSample;
using trainer::Weakness;

// ---------------------------------------------------------------------------
// Dice similarity coefficient
// ---------------------------------------------------------------------------

/// DSC = 2|A n B| / (|A| + |B|) by integer voxel counting. Two empty masks
/// score 1.0: a correctly predicted negative is perfect agreement, and the
/// convention keeps dsc(a, a) = 1 for every mask.
inline double dsc(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    require(a.size() == b.size(), "dsc: mask dims differ");
    std::uint64_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i] <= 1 && b[i] <= 1, "dsc: masks must be binary");
        na += a[i];
        nb += b[i];
        ni += static_cast<std::uint64_t>(a[i] & b[i]);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

/// Strictly-greater-than thresholding, so a probability equal to the
/// threshold stays negative.
inline std::vector<std::uint8_t> binarize(const std::vector<float>& probs,
                                          double threshold = 0.5) {
    require(threshold > 0.0 && threshold < 1.0, "binarize: threshold must lie in (0, 1)");
    std::vector<std::uint8_t> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        out[i] = static_cast<double>(probs[i]) > threshold ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Per-case sensitivity
// ---------------------------------------------------------------------------

/// Detection counts over positive cases. With no positive case the ratio is
/// undefined, so the result says so instead of inventing a number.
struct Sensitivity {
    std::uint64_t positive_cases = 0;
    std::uint64_t detected_cases = 0;

    bool applicable() const { return positive_cases > 0; }

    double value() const {
        require(applicable(), "sensitivity: no positive cases, value is undefined");
        return static_cast<double>(detected_cases) / static_cast<double>(positive_cases);
    }

    std::string to_string() const {
        if (!applicable()) return "n/a (no positive cases)";
        return format_double(value()) + " (" + std::to_string(detected_cases) + "/" +
               std::to_string(positive_cases) + ")";
    }
};

/// A positive case counts as detected iff some predicted-positive pixel
/// overlaps the true mask in some slice of that case. predictions[i] pairs
/// with samples[i]; grouping is by the samples' case provenance.
inline Sensitivity case_sensitivity(const std::vector<std::vector<std::uint8_t>>& predictions,
                                    const std::vector<TrainingSample>& samples) {
    require(predictions.size() == samples.size(),
            "sensitivity: predictions/samples length mismatch");
    std::map<std::string, std::pair<bool, bool>> cases;  // case_id -> (positive, detected)
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TrainingSample& s = samples[i];
        require(predictions[i].size() == s.target.size(),
                "sensitivity: prediction dims differ from sample " + s.case_id);
        auto& [positive, detected] = cases[s.case_id];
        positive = positive || s.has_positive_target();
        for (std::size_t j = 0; j < s.target.size(); ++j)
            if (predictions[i][j] && s.target[j]) {
                detected = true;
                break;
            }
    }
    Sensitivity out;
    for (auto& [id, flags] : cases) {
        if (!flags.first) continue;
        ++out.positive_cases;
        if (flags.second) ++out.detected_cases;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cohort contingency analysis
// ---------------------------------------------------------------------------

struct ContingencyTable {
    std::uint64_t mca_weak = 0;      // has_mca, weakness recorded
    std::uint64_t mca_noweak = 0;    // has_mca, no weakness (structurally zero)
    std::uint64_t nomca_weak = 0;
    std::uint64_t nomca_noweak = 0;

    std::uint64_t mca_total() const { return mca_weak + mca_noweak; }
    std::uint64_t nomca_total() const { return nomca_weak + nomca_noweak; }
    std::uint64_t weak_total() const { return mca_weak + nomca_weak; }
    std::uint64_t noweak_total() const { return mca_noweak + nomca_noweak; }
    std::uint64_t total() const { return mca_total() + nomca_total(); }

    std::string to_string() const {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "              weakness  no-weakness  total\n"
                      "  dot sign    %8llu  %11llu  %5llu\n"
                      "  no dot sign %8llu  %11llu  %5llu\n"
                      "  total       %8llu  %11llu  %5llu\n",
                      static_cast<unsigned long long>(mca_weak),
                      static_cast<unsigned long long>(mca_noweak),
                      static_cast<unsigned long long>(mca_total()),
                      static_cast<unsigned long long>(nomca_weak),
                      static_cast<unsigned long long>(nomca_noweak),
                      static_cast<unsigned long long>(nomca_total()),
                      static_cast<unsigned long long>(weak_total()),
                      static_cast<unsigned long long>(noweak_total()),
                      static_cast<unsigned long long>(total()));
        return buf;
    }
};

/// Cross-tabulates lesion presence against recorded side of weakness.
inline ContingencyTable contingency(const std::vector<CaseRecord>& cohort) {
    ContingencyTable t;
    for (const CaseRecord& rec : cohort) {
        const bool weak = rec.weakness != Weakness::None;
        if (rec.has_mca)
            ++(weak ? t.mca_weak : t.mca_noweak);
        else
            ++(weak ? t.nomca_weak : t.nomca_noweak);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Cohort evaluation report
// ---------------------------------------------------------------------------

struct SampleResult {
    std::string case_id;
    int slice_index = 0;
    Hemisphere hemisphere = Hemisphere::Left;
    bool positive_target = false;
    double dsc = 0;
};

struct CaseResult {
    std::string case_id;
    bool positive = false;
    double dsc = 0;  // over per-hemisphere slice unions
};

struct DscReport {
    double threshold = 0.5;
    std::vector<SampleResult> per_sample;
    std::vector<CaseResult> per_case;

    // The reference figure of merit is ambiguous about its averaging
    // population, so all three candidates are computed and labeled.
    double mean_dsc_samples = 0;           // over every sample
    double mean_dsc_positive_samples = 0;  // over samples with a nonempty target
    double mean_dsc_cases = 0;             // over per-case aggregated masks
    bool has_positive_samples = false;

    Sensitivity sensitivity;
    double fp_pixel_rate = 0;  // predicted-positive pixels among target-negative pixels

    std::string summary() const {
        auto line = [](const char* label, const std::string& value) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "%-28s%s\n", label, value.c_str());
            return std::string(buf);
        };
        std::string out;
        out += line("samples evaluated", std::to_string(per_sample.size()));
        out += line("cases evaluated", std::to_string(per_case.size()));
        out += line("threshold", format_double(threshold));
        out += line("mean DSC, all samples", format_double(mean_dsc_samples));
        out += line("mean DSC, positive samples",
                    has_positive_samples ? format_double(mean_dsc_positive_samples)
                                         : std::string("n/a (no positive samples)"));
        out += line("mean DSC, per case", format_double(mean_dsc_cases));
        out += line("case sensitivity", sensitivity.to_string());
        out += line("false-positive pixel rate", format_double(fp_pixel_rate));
        return out;
    }

    /// One line per sample: case, slice, hemisphere, target positivity, DSC.
    std::string to_tsv() const {
        std::string out = "case_id\tslice\themisphere\tpositive_target\tdsc\n";
        for (const SampleResult& s : per_sample) {
            out += s.case_id + "\t" + std::to_string(s.slice_index) + "\t" +
                   trainer::to_string(s.hemisphere) + "\t" + (s.positive_target ? "1" : "0") +
                   "\t" + format_double(s.dsc) + "\n";
        }
        return out;
    }
};

/// Scores precomputed probability maps against the samples they were
/// predicted from. Split out from evaluate_cohort so oracle predictions can
/// be scored without a model. Per-case DSC unions masks across a case's
/// slices within each hemisphere (the two hemisphere ROIs are distinct
/// anatomy, so their pixels are pooled, never overlaid), answering "was the
/// lesion segmented somewhere in this patient".
inline DscReport evaluate_predictions(const std::vector<std::vector<float>>& probs,
                                      const std::vector<TrainingSample>& dataset,
                                      double threshold = 0.5) {
    require(probs.size() == dataset.size(), "evaluate: probs/dataset length mismatch");
    DscReport rep;
    rep.threshold = threshold;

    struct CaseAccum {
        // hemisphere -> (union of predictions, union of targets)
        std::map<int, std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> hemi;
        bool positive = false;
    };
    std::map<std::string, CaseAccum> cases;

    std::uint64_t fp_px = 0, negative_px = 0;
    double dsc_sum = 0, dsc_pos_sum = 0;
    std::size_t positive_samples = 0;
    std::vector<std::vector<std::uint8_t>> preds(dataset.size());

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const TrainingSample& s = dataset[i];
        s.validate();
        require(probs[i].size() == s.target.size(),
                "evaluate: prediction dims differ from sample " + s.case_id);
        preds[i] = binarize(probs[i], threshold);

        SampleResult sr;
        sr.case_id = s.case_id;
        sr.slice_index = s.slice_index;
        sr.hemisphere = s.hemisphere;
        sr.positive_target = s.has_positive_target();
        sr.dsc = dsc(preds[i], s.target);
        rep.per_sample.push_back(sr);

        dsc_sum += sr.dsc;
        if (sr.positive_target) {
            ++positive_samples;
            dsc_pos_sum += sr.dsc;
        }
        for (std::size_t j = 0; j < s.target.size(); ++j) {
            if (s.target[j]) continue;
            ++negative_px;
            if (preds[i][j]) ++fp_px;
        }

        CaseAccum& acc = cases[s.case_id];
        acc.positive = acc.positive || sr.positive_target;
        auto& [pu, tu] = acc.hemi[static_cast<int>(s.hemisphere)];
        if (pu.empty()) {
            pu.assign(s.target.size(), 0);
            tu.assign(s.target.size(), 0);
        }
        for (std::size_t j = 0; j < s.target.size(); ++j) {
            pu[j] |= preds[i][j];
            tu[j] |= s.target[j];
        }
    }

    double case_dsc_sum = 0;
    for (auto& [id, acc] : cases) {
        std::uint64_t na = 0, nb = 0, ni = 0;
        for (auto& [h, masks] : acc.hemi)
            for (std::size_t j = 0; j < masks.first.size(); ++j) {
                na += masks.first[j];
                nb += masks.second[j];
                ni += static_cast<std::uint64_t>(masks.first[j] & masks.second[j]);
            }
        CaseResult cr;
        cr.case_id = id;
        cr.positive = acc.positive;
        cr.dsc = (na + nb == 0) ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
        rep.per_case.push_back(cr);
        case_dsc_sum += cr.dsc;
    }

    const double n = static_cast<double>(dataset.size());
    rep.mean_dsc_samples = dataset.empty() ? 0.0 : dsc_sum / n;
    rep.has_positive_samples = positive_samples > 0;
    rep.mean_dsc_positive_samples =
        rep.has_positive_samples ? dsc_pos_sum / static_cast<double>(positive_samples) : 0.0;
    rep.mean_dsc_cases =
        rep.per_case.empty() ? 0.0 : case_dsc_sum / static_cast<double>(rep.per_case.size());
    rep.sensitivity = case_sensitivity(preds, dataset);
    rep.fp_pixel_rate =
        negative_px == 0 ? 0.0 : static_cast<double>(fp_px) / static_cast<double>(negative_px);
    return rep;
}

/// Runs inference over the dataset and scores it. Inference is read-only
/// over the model, so samples run in parallel; results are identical for any
/// worker count.
inline DscReport evaluate_cohort(const nnet::FcnModel<float>& model,
                                 const std::vector<TrainingSample>& dataset,
                                 double threshold = 0.5, int workers = 1) {
    const int k = TrainingSample::kSize;
    std::vector<std::vector<float>> probs(dataset.size());
    parallel_for(dataset.size(), workers, [&](std::size_t i) {
        const TrainingSample& s = dataset[i];
        s.validate();
        nnet::Tensor4<float> x(1, 1, k, k);
        std::copy(s.image.begin(), s.image.end(), x.data.begin());
        nnet::Tensor4<float> p = nnet::forward(model, x);
        probs[i].assign(p.data.begin(), p.data.end());
    });
    return evaluate_predictions(probs, dataset, threshold);
}

}  // namespace mcadot::evalr

#endif
