#include "smallobj/box.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smallobj {

double iou(const BBox& a, const BBox& b) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: invalid box");
    double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double ciou_metric(const BBox& a, const BBox& b) {
    double overlap = iou(a, b);

    double cw = std::max(a.x_max, b.x_max) - std::min(a.x_min, b.x_min);
    double ch = std::max(a.y_max, b.y_max) - std::min(a.y_min, b.y_min);
    double c2 = cw * cw + ch * ch;
    if (c2 <= 0) return overlap;  // both boxes are the same point

    double dx = a.center_x() - b.center_x();
    double dy = a.center_y() - b.center_y();
    double rho2 = dx * dx + dy * dy;

    // atan2(w, h) extends arctan(w/h) to zero-height boxes
    double diff = std::atan2(a.width(), a.height()) - std::atan2(b.width(), b.height());
    double v = 4.0 / (M_PI * M_PI) * diff * diff;
    double alpha = v > 0 ? v / ((1.0 - overlap) + v) : 0.0;

    return overlap - rho2 / c2 - alpha * v;
}

double ciou_loss(const BBox& a, const BBox& b) {
    return 1.0 - ciou_metric(a, b);
}

}  // namespace smallobj
