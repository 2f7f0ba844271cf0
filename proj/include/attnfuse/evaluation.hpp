#ifndef ATTNFUSE_EVALUATION_HPP
#define ATTNFUSE_EVALUATION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "attnfuse/backbone.hpp"
#include "attnfuse/data_synth.hpp"
#include "attnfuse/training.hpp"

namespace attnfuse {

/// (K+1)^2 pixel counts; rows = ground truth, cols = prediction.
struct ConfusionMatrix {
    int num_classes = 0; // K+1 including background
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(int classes_with_bg = 0)
        : num_classes(classes_with_bg),
          counts(static_cast<std::size_t>(classes_with_bg) * classes_with_bg, 0) {}

    std::int64_t& at(int gt, int pred) {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::int64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    void merge(const ConfusionMatrix& o);
    std::int64_t total() const;
};

/// Per-pixel argmax over all K+1 channels; ties go to the lowest channel.
SegMask pseudo_labels(const Tensor3& attn);

ConfusionMatrix confusion(const SegMask& pred, const SegMask& gt, int k);

/// Mean IoU percentage over the K+1 classes; classes absent from both pred
/// and gt are skipped.
double miou(const ConfusionMatrix& cm);
double miou(const SegMask& pred, const SegMask& gt, int k);

/// Pseudo-label mIoU of a model over a split (merged confusion matrix).
double evaluate_model(const BackboneParams& params, const std::vector<Sample>& split,
                      int threads = 0);
std::vector<double> per_image_miou(const BackboneParams& params,
                                   const std::vector<Sample>& split, int threads = 0);

struct AblationReport {
    std::vector<std::string> conditions;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> miou; // [condition][seed]
    std::string config_hash;

    double median(const std::string& condition) const;
};

/// Trains and evaluates the scale/fusion/reactivation conditions once per
/// seed: every single scale, the scale-pair fusions, the full fusion with and
/// without reactivation, plus the pretrained baseline. One pretraining run is
/// shared by all conditions of a seed.
AblationReport run_ablation_suite(const DatasetManifest& dataset, const TrainConfig& base,
                                  const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const AblationReport& report);
std::string ablation_summary(const AblationReport& report);

} // namespace attnfuse

#endif
