#include "smallobj/nms.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace smallobj {

namespace {

struct Indexed {
    Detection det;
    std::size_t index;  // position in the caller's list, for tie-breaking
    bool alive = true;
};

// argmax over alive entries; ties go to the lower original index because
// the scan is in index order
int find_top(const std::vector<Indexed>& items) {
    int best = -1;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].alive) continue;
        if (best < 0 || items[i].det.score > items[best].det.score) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::map<int, std::vector<Indexed>> split_by_class(
    const std::vector<Detection>& dets) {
    std::map<int, std::vector<Indexed>> groups;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        groups[dets[i].class_id].push_back({dets[i], i, true});
    }
    return groups;
}

}  // namespace

void SoftNmsConfig::validate() const {
    if (!(sigma > 0)) throw std::invalid_argument("soft-nms: sigma must be > 0");
    if (nt < 0 || nt > 1) throw std::invalid_argument("soft-nms: nt must be in [0,1]");
    if (score_floor < 0) throw std::invalid_argument("soft-nms: score floor must be >= 0");
}

std::vector<Detection> nms_hard(const std::vector<Detection>& dets,
                                double iou_threshold) {
    if (!(iou_threshold >= 0 && iou_threshold <= 1))
        throw std::invalid_argument("nms: iou threshold must be in [0,1]");
    std::vector<Detection> out;
    for (auto& [class_id, group] : split_by_class(dets)) {
        for (;;) {
            int top = find_top(group);
            if (top < 0) break;
            Indexed& picked = group[top];
            picked.alive = false;
            out.push_back(picked.det);
            for (Indexed& other : group) {
                if (!other.alive) continue;
                if (iou(picked.det.box, other.det.box) > iou_threshold) {
                    other.alive = false;
                }
            }
        }
    }
    return out;
}

std::vector<Detection> soft_nms(const std::vector<Detection>& dets,
                                const SoftNmsConfig& cfg) {
    cfg.validate();
    for (const Detection& d : dets) {
        if (d.score < 0 || d.score > 1)
            throw std::invalid_argument("soft-nms: scores must be in [0,1]");
    }

    std::vector<Detection> out;
    for (auto& [class_id, group] : split_by_class(dets)) {
        for (;;) {
            int top = find_top(group);
            if (top < 0) break;
            Indexed& picked = group[top];
            picked.alive = false;
            out.push_back(picked.det);
            for (Indexed& other : group) {
                if (!other.alive) continue;
                switch (cfg.mode) {
                    case NmsMode::Gaussian: {
                        double c = std::max(0.0, ciou_metric(picked.det.box, other.det.box));
                        other.det.score *= std::exp(-(c * c) / cfg.sigma);
                        break;
                    }
                    case NmsMode::Linear: {
                        double o = iou(picked.det.box, other.det.box);
                        if (o > cfg.nt) other.det.score *= 1.0 - o;
                        break;
                    }
                    case NmsMode::Hard: {
                        if (iou(picked.det.box, other.det.box) > cfg.nt) {
                            other.alive = false;  // matches nms_hard exactly
                        }
                        break;
                    }
                }
            }
        }
    }

    if (cfg.mode != NmsMode::Hard) {
        std::erase_if(out, [&](const Detection& d) { return d.score < cfg.score_floor; });
    }
    return out;
}

}  // namespace smallobj
