#include "refmatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "refmatch/error.hpp"

namespace refmatch {

namespace {
constexpr double kBoundsEps = 1e-9;
constexpr double kDiceEps = 1e-8;
constexpr double kBceClamp = 1e-7;

void require_same_dims(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw_validation("mask dimension mismatch: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    }
}
}  // namespace

void BBox::validate() const {
    if (!(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h))) {
        throw_validation("bbox has non-finite field");
    }
    if (x < 0.0 || y < 0.0 || x > 1.0 || y > 1.0) {
        throw_validation("bbox origin outside [0,1]");
    }
    if (w <= 0.0 || h <= 0.0) {
        throw_validation("bbox width/height must be positive");
    }
    if (x + w > 1.0 + kBoundsEps || y + h > 1.0 + kBoundsEps) {
        throw_validation("bbox extends past the unit square");
    }
}

double center_distance(const BBox& a, const BBox& b) {
    auto ca = a.center();
    auto cb = b.center();
    return std::hypot(ca[0] - cb[0], ca[1] - cb[1]);
}

double box_iou(const BBox& a, const BBox& b) {
    double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double box_giou(const BBox& a, const BBox& b) {
    double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    double ex = std::max(a.x2(), b.x2()) - std::min(a.x, b.x);
    double ey = std::max(a.y2(), b.y2()) - std::min(a.y, b.y);
    double enclosing = ex * ey;
    double iou = uni > 0.0 ? inter / uni : 0.0;
    if (enclosing <= 0.0) {
        return iou;
    }
    return iou - (enclosing - uni) / enclosing;
}

Mask Mask::zeros(int width, int height) {
    Mask m;
    m.width = width;
    m.height = height;
    m.values.assign(static_cast<std::size_t>(width) * height, 0.0);
    return m;
}

double Mask::sum() const {
    double total = 0.0;
    for (double v : values) total += v;
    return total;
}

void Mask::validate() const {
    if (width <= 0 || height <= 0) {
        throw_validation("mask dimensions must be positive");
    }
    if (values.size() != static_cast<std::size_t>(width) * height) {
        throw_validation("mask value count does not match width*height");
    }
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw_validation("mask value outside [0,1]");
        }
    }
}

double mask_dice(const Mask& pred, const Mask& gt) {
    require_same_dims(pred, gt);
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        inter += pred.values[i] * gt.values[i];
        sp += pred.values[i];
        sg += gt.values[i];
    }
    return 2.0 * inter / (sp + sg + kDiceEps);
}

double mask_bce(const Mask& pred, const Mask& gt) {
    require_same_dims(pred, gt);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        double p = std::clamp(pred.values[i], kBceClamp, 1.0 - kBceClamp);
        double g = gt.values[i];
        total += -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
    }
    return total / static_cast<double>(pred.values.size());
}

double mask_iou(const Mask& a, const Mask& b, double threshold) {
    require_same_dims(a, b);
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        bool pa = a.values[i] >= threshold;
        bool pb = b.values[i] >= threshold;
        inter += (pa && pb) ? 1.0 : 0.0;
        uni += (pa || pb) ? 1.0 : 0.0;
    }
    return uni > 0.0 ? inter / uni : 0.0;
}

BBox mask_bounds(const Mask& mask) {
    int min_x = mask.width, min_y = mask.height, max_x = -1, max_y = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y) > 0.0) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0) {
        throw_validation("mask has no nonzero pixels");
    }
    BBox box;
    box.x = static_cast<double>(min_x) / mask.width;
    box.y = static_cast<double>(min_y) / mask.height;
    box.w = static_cast<double>(max_x + 1 - min_x) / mask.width;
    box.h = static_cast<double>(max_y + 1 - min_y) / mask.height;
    return box;
}

}  // namespace refmatch
