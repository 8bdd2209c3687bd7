#pragma once

namespace smallobj {

// Axis-aligned box in pixel corner coordinates.
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    bool valid() const { return x_min <= x_max && y_min <= y_max; }
};

struct Detection {
    BBox box;
    int class_id = 0;
    double score = 0.0;
};

// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

// IoU minus the center-distance and aspect-ratio penalties; in (-1, 1].
// When both boxes collapse to the same point the penalties vanish and the
// value is the plain IoU.
double ciou_metric(const BBox& a, const BBox& b);

// 1 - ciou_metric, always >= 0.
double ciou_loss(const BBox& a, const BBox& b);

}  // namespace smallobj
