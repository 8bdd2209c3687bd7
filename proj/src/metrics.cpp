#include "smallobj/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace smallobj {

namespace {

// descending score, ties keep input order
std::vector<std::size_t> score_order(const std::vector<ImageDetection>& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].det.score > dets[b].det.score;
    });
    return order;
}

std::vector<int> classes_with_gt(const std::vector<GroundTruth>& gts) {
    std::set<int> ids;
    for (const GroundTruth& g : gts) ids.insert(g.category_id);
    return {ids.begin(), ids.end()};
}

double map_at(const std::vector<ImageDetection>& dets,
              const std::vector<GroundTruth>& gts,
              double iou_threshold) {
    MatchResult match = match_detections(dets, gts, iou_threshold);
    std::vector<double> aps;
    for (int cls : classes_with_gt(gts)) {
        std::vector<ScoredLabel> labeled;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].det.class_id == cls)
                labeled.push_back({dets[i].det.score, match.is_tp[i]});
        }
        std::size_t num_gt = 0;
        for (const GroundTruth& g : gts)
            if (g.category_id == cls) ++num_gt;
        aps.push_back(average_precision_11pt(std::move(labeled), num_gt));
    }
    return map_over_classes(aps);
}

double bucket_ap(const std::vector<ImageDetection>& dets,
                 const std::vector<GroundTruth>& gts,
                 double iou_threshold, SizeBucket bucket) {
    std::vector<GroundTruth> in_bucket, out_bucket;
    for (const GroundTruth& g : gts) {
        (size_bucket(g.box.area()) == bucket ? in_bucket : out_bucket).push_back(g);
    }
    if (in_bucket.empty()) return 0.0;

    MatchResult primary = match_detections(dets, in_bucket, iou_threshold);

    // detections left over after the in-bucket pass may still belong to a GT
    // of another size class; those are ignored rather than counted as FP
    std::vector<ImageDetection> leftovers;
    std::vector<std::size_t> leftover_index;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (!primary.is_tp[i]) {
            leftovers.push_back(dets[i]);
            leftover_index.push_back(i);
        }
    }
    MatchResult secondary = match_detections(leftovers, out_bucket, iou_threshold);
    std::vector<bool> ignored(dets.size(), false);
    for (std::size_t k = 0; k < leftovers.size(); ++k) {
        if (secondary.is_tp[k]) ignored[leftover_index[k]] = true;
    }

    std::vector<double> aps;
    for (int cls : classes_with_gt(in_bucket)) {
        std::vector<ScoredLabel> labeled;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].det.class_id != cls || ignored[i]) continue;
            labeled.push_back({dets[i].det.score, primary.is_tp[i]});
        }
        std::size_t num_gt = 0;
        for (const GroundTruth& g : in_bucket)
            if (g.category_id == cls) ++num_gt;
        aps.push_back(average_precision_11pt(std::move(labeled), num_gt));
    }
    return map_over_classes(aps);
}

std::string num_str(double x) { return nlohmann::json(x).dump(); }

}  // namespace

MatchResult match_detections(const std::vector<ImageDetection>& dets,
                             const std::vector<GroundTruth>& gts,
                             double iou_threshold) {
    MatchResult res;
    res.is_tp.assign(dets.size(), false);
    res.matched_gt.assign(dets.size(), -1);
    std::vector<bool> used(gts.size(), false);
    for (std::size_t i : score_order(dets)) {
        const ImageDetection& d = dets[i];
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            if (gts[g].image_id != d.image_id) continue;
            if (gts[g].category_id != d.det.class_id) continue;
            double overlap = iou(d.det.box, gts[g].box);
            if (overlap < iou_threshold) continue;
            if (overlap > best_iou) {
                best = static_cast<int>(g);
                best_iou = overlap;
            }
        }
        if (best >= 0) {
            used[best] = true;
            res.is_tp[i] = true;
            res.matched_gt[i] = best;
        }
    }
    return res;
}

double average_precision_11pt(std::vector<ScoredLabel> labeled, std::size_t num_gt) {
    if (num_gt == 0) return 0.0;
    std::stable_sort(labeled.begin(), labeled.end(),
                     [](const ScoredLabel& a, const ScoredLabel& b) {
                         return a.score > b.score;
                     });
    const std::size_t n = labeled.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labeled[k].tp) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    // recall is nondecreasing along ranks, so "max precision at recall >= r"
    // is a suffix maximum of the precision curve
    for (std::size_t k = n; k-- > 1;) {
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    double sum = 0.0;
    for (int i = 0; i <= 10; ++i) {
        double r = i / 10.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 11.0;
}

double map_over_classes(const std::vector<double>& per_class_ap) {
    if (per_class_ap.empty())
        throw std::invalid_argument("map: no evaluable class (no category has ground truth)");
    double sum = std::accumulate(per_class_ap.begin(), per_class_ap.end(), 0.0);
    return sum / static_cast<double>(per_class_ap.size());
}

SizeBucket size_bucket(double area) {
    if (area <= 32.0 * 32.0) return SizeBucket::Small;
    if (area <= 96.0 * 96.0) return SizeBucket::Medium;
    return SizeBucket::Large;
}

SizeAp ap_by_size(const std::vector<ImageDetection>& dets,
                  const std::vector<GroundTruth>& gts,
                  double iou_threshold) {
    SizeAp out;
    out.ap_s = bucket_ap(dets, gts, iou_threshold, SizeBucket::Small);
    out.ap_m = bucket_ap(dets, gts, iou_threshold, SizeBucket::Medium);
    out.ap_l = bucket_ap(dets, gts, iou_threshold, SizeBucket::Large);
    return out;
}

double ap_over_iou_range(const std::vector<ImageDetection>& dets,
                         const std::vector<GroundTruth>& gts) {
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) {
        double threshold = (50 + 5 * i) / 100.0;
        sum += map_at(dets, gts, threshold);
    }
    return sum / 10.0;
}

EvalReport evaluate(const std::vector<ImageDetection>& dets,
                    const std::vector<GroundTruth>& gts,
                    const std::vector<Category>& categories,
                    double iou_threshold) {
    std::set<int> known;
    for (const Category& c : categories) known.insert(c.id);
    for (const GroundTruth& g : gts) {
        if (!known.count(g.category_id))
            throw std::invalid_argument("evaluate: ground truth references unknown category id " +
                                        std::to_string(g.category_id));
    }
    for (const ImageDetection& d : dets) {
        if (!known.count(d.det.class_id))
            throw std::invalid_argument("evaluate: detection references unknown category id " +
                                        std::to_string(d.det.class_id));
    }

    MatchResult match = match_detections(dets, gts, iou_threshold);

    EvalReport report;
    std::vector<double> evaluable_aps;
    for (const Category& cat : categories) {
        std::vector<ScoredLabel> labeled;
        long tp = 0, fp = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].det.class_id != cat.id) continue;
            labeled.push_back({dets[i].det.score, match.is_tp[i]});
            (match.is_tp[i] ? tp : fp) += 1;
        }
        std::size_t num_gt = 0;
        for (const GroundTruth& g : gts)
            if (g.category_id == cat.id) ++num_gt;

        ClassReport cls;
        cls.category_id = cat.id;
        cls.name = cat.name;
        cls.ap50 = average_precision_11pt(std::move(labeled), num_gt);
        cls.tp = tp;
        cls.fp = fp;
        cls.fn = static_cast<long>(num_gt) - tp;
        report.per_class.push_back(std::move(cls));
        if (num_gt > 0) evaluable_aps.push_back(report.per_class.back().ap50);
    }

    report.map50 = map_over_classes(evaluable_aps);
    report.ap50_95 = ap_over_iou_range(dets, gts);
    SizeAp sizes = ap_by_size(dets, gts, iou_threshold);
    report.ap_s = sizes.ap_s;
    report.ap_m = sizes.ap_m;
    report.ap_l = sizes.ap_l;
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["map"] = report.map50;
    j["ap50_95"] = report.ap50_95;
    j["ap_s"] = report.ap_s;
    j["ap_m"] = report.ap_m;
    j["ap_l"] = report.ap_l;
    nlohmann::json per_class = nlohmann::json::object();
    for (const ClassReport& c : report.per_class) per_class[c.name] = c.ap50;
    j["per_class"] = per_class;
    return j.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "category_id,name,ap50,tp,fp,fn\n";
    for (const ClassReport& c : report.per_class) {
        out << c.category_id << ',' << c.name << ',' << num_str(c.ap50) << ','
            << c.tp << ',' << c.fp << ',' << c.fn << '\n';
    }
    return out.str();
}

}  // namespace smallobj
