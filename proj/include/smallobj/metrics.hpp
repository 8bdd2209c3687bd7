#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smallobj/box.hpp"

namespace smallobj {

struct GroundTruth {
    int image_id = 0;
    BBox box;
    int category_id = 0;
};

struct ImageDetection {
    int image_id = 0;
    Detection det;
};

struct Category {
    int id = 0;
    std::string name;
};

// Outcome of greedy matching, aligned with the input detection order.
struct MatchResult {
    std::vector<bool> is_tp;        // per detection
    std::vector<int> matched_gt;    // index into the gt list, -1 if unmatched
};

// Greedy matcher: detections are visited in descending score order (ties by
// input index) and each one claims the unmatched same-image, same-class GT
// with the highest IoU >= iou_threshold (ties by lower gt index).
MatchResult match_detections(const std::vector<ImageDetection>& dets,
                             const std::vector<GroundTruth>& gts,
                             double iou_threshold);

struct ScoredLabel {
    double score = 0.0;
    bool tp = false;
};

// 11-point interpolated AP: mean of p_interp(r) over r = 0.0, 0.1, ..., 1.0,
// where p_interp(r) is the maximum precision at recall >= r (0 if no rank
// reaches that recall). num_gt == 0 yields 0.
double average_precision_11pt(std::vector<ScoredLabel> labeled, std::size_t num_gt);

// Arithmetic mean; throws std::invalid_argument when no class is evaluable.
double map_over_classes(const std::vector<double>& per_class_ap);

enum class SizeBucket { Small, Medium, Large };

// Area buckets: small <= 32*32, medium <= 96*96, large above.
SizeBucket size_bucket(double area);

struct SizeAp {
    double ap_s = 0.0;
    double ap_m = 0.0;
    double ap_l = 0.0;
};

// AP restricted to each GT size bucket. Detections matched to a GT outside
// the bucket under evaluation are ignored (neither TP nor FP); unmatched
// detections count as FP in every bucket. A bucket with no GT reports 0.
SizeAp ap_by_size(const std::vector<ImageDetection>& dets,
                  const std::vector<GroundTruth>& gts,
                  double iou_threshold);

// Mean of mAP evaluated independently at IoU thresholds 0.50:0.05:0.95.
double ap_over_iou_range(const std::vector<ImageDetection>& dets,
                         const std::vector<GroundTruth>& gts);

struct ClassReport {
    int category_id = 0;
    std::string name;
    double ap50 = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

struct EvalReport {
    double map50 = 0.0;
    double ap50_95 = 0.0;
    double ap_s = 0.0;
    double ap_m = 0.0;
    double ap_l = 0.0;
    std::vector<ClassReport> per_class;
};

// Full evaluation driver. Throws std::invalid_argument when a detection or GT
// references a category id absent from `categories`, or when no category has
// any ground truth.
EvalReport evaluate(const std::vector<ImageDetection>& dets,
                    const std::vector<GroundTruth>& gts,
                    const std::vector<Category>& categories,
                    double iou_threshold = 0.5);

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace smallobj
