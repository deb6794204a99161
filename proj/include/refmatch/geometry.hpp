#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace refmatch {

/// Axis-aligned box in normalized [0,1]^2 image coordinates.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }
    std::array<double, 2> center() const { return {x + 0.5 * w, y + 0.5 * h}; }

    /// Throws Validation unless 0 <= x,y <= 1, w,h > 0 and the box stays
    /// inside the unit square within 1e-9.
    void validate() const;
};

double center_distance(const BBox& a, const BBox& b);

/// Intersection over union; 0 for disjoint boxes, 1 for identical ones.
double box_iou(const BBox& a, const BBox& b);

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union. In [-1, 1]; equals IoU when the enclosing box is the union.
double box_giou(const BBox& a, const BBox& b);

/// Row-major soft mask. Ground-truth masks hold exactly {0,1}; predictions
/// may hold any value in [0,1].
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    static Mask zeros(int width, int height);

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
    double sum() const;

    void validate() const;
};

/// Grayscale image; same storage contract as Mask, values in [0,1].
using Image = Mask;

/// Soft Dice with 1e-8 smoothing in the denominator. Symmetric.
double mask_dice(const Mask& pred, const Mask& gt);

/// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
double mask_bce(const Mask& pred, const Mask& gt);

/// Pixel IoU after thresholding both masks at `threshold`.
double mask_iou(const Mask& a, const Mask& b, double threshold = 0.5);

/// Tight normalized bounding box of mask values > 0. Throws Validation for
/// an all-zero mask.
BBox mask_bounds(const Mask& mask);

}  // namespace refmatch
