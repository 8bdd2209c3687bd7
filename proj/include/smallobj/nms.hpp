#pragma once

#include <vector>

#include "smallobj/box.hpp"

namespace smallobj {

enum class NmsMode { Gaussian, Linear, Hard };

struct SoftNmsConfig {
    double sigma = 1.1;         // Gaussian decay width
    double nt = 0.9;            // overlap threshold; used by hard/linear only
    double score_floor = 0.001; // final cut after rescoring
    NmsMode mode = NmsMode::Gaussian;

    void validate() const;  // sigma > 0, nt in [0,1], floor >= 0
};

// Classic greedy suppression: per class, keep the score argmax and drop
// neighbors with IoU strictly above the threshold. Ties break toward the
// lower original index. Surviving detections keep their scores.
std::vector<Detection> nms_hard(const std::vector<Detection>& dets,
                                double iou_threshold);

// Soft suppression, per class. Gaussian mode decays every remaining score by
// exp(-max(0, ciou)^2 / sigma) so non-overlapping boxes are untouched; the
// floor is applied only after the loop. Hard mode reproduces nms_hard;
// linear mode scales by (1 - iou) above nt. Box geometry is never modified.
std::vector<Detection> soft_nms(const std::vector<Detection>& dets,
                                const SoftNmsConfig& cfg);

}  // namespace smallobj
