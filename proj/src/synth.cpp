#include "refmatch/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

#include "refmatch/error.hpp"
#include "refmatch/io.hpp"
#include "refmatch/rng.hpp"

namespace refmatch {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kPlacementAttempts = 1000;
constexpr double kPlacementMargin = 0.02;

enum class ShapeKind { Ellipse, Rectangle, Ribbon };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Ellipse;
    double cx = 0, cy = 0;
    double rx = 0, ry = 0;
    double angle = 0;
    double amplitude = 0;  // ribbon bend, normalized units
    double intensity = 0;

    double bound_radius() const {
        return std::hypot(rx, ry + amplitude);
    }

    bool contains(double u, double v) const {
        double du = u - cx;
        double dv = v - cy;
        double ca = std::cos(angle), sa = std::sin(angle);
        double a = du * ca + dv * sa;
        double b = -du * sa + dv * ca;
        switch (kind) {
            case ShapeKind::Ellipse:
                return (a * a) / (rx * rx) + (b * b) / (ry * ry) <= 1.0;
            case ShapeKind::Rectangle:
                return std::abs(a) <= rx && std::abs(b) <= ry;
            case ShapeKind::Ribbon:
                return std::abs(a) <= rx &&
                       std::abs(b - amplitude * std::sin(kPi * a / rx)) <= ry;
        }
        return false;
    }
};

Mask rasterize(const ShapeSpec& shape, int width, int height) {
    Mask mask = Mask::zeros(width, height);
    for (int y = 0; y < height; ++y) {
        double v = (y + 0.5) / height;
        for (int x = 0; x < width; ++x) {
            double u = (x + 0.5) / width;
            if (shape.contains(u, v)) mask.at(x, y) = 1.0;
        }
    }
    return mask;
}

bool placement_clear(const ShapeSpec& candidate, std::span<const ShapeSpec> placed) {
    for (const ShapeSpec& other : placed) {
        double d = std::hypot(candidate.cx - other.cx, candidate.cy - other.cy);
        if (d <= candidate.bound_radius() + other.bound_radius() + kPlacementMargin) {
            return false;
        }
    }
    return true;
}

ShapeSpec sample_shape(Rng& rng, double region_scale, int canvas_min) {
    ShapeSpec shape;
    switch (rng.uniform_int(0, 2)) {
        case 0:
            shape.kind = ShapeKind::Ellipse;
            shape.rx = region_scale * rng.uniform(0.05, 0.11);
            shape.ry = region_scale * rng.uniform(0.05, 0.11);
            break;
        case 1:
            shape.kind = ShapeKind::Rectangle;
            shape.rx = region_scale * rng.uniform(0.045, 0.10);
            shape.ry = region_scale * rng.uniform(0.045, 0.10);
            break;
        default:
            shape.kind = ShapeKind::Ribbon;
            shape.rx = region_scale * rng.uniform(0.12, 0.20);
            // Keep the band at least ~1.5 px thick so it rasterizes.
            shape.ry = std::max(region_scale * rng.uniform(0.02, 0.035),
                                1.6 / canvas_min);
            shape.amplitude = region_scale * rng.uniform(0.02, 0.05);
            break;
    }
    shape.angle = rng.uniform(0.0, kPi);
    double r = shape.bound_radius();
    shape.cx = rng.uniform(r + kPlacementMargin, 1.0 - r - kPlacementMargin);
    shape.cy = rng.uniform(r + kPlacementMargin, 1.0 - r - kPlacementMargin);
    return shape;
}

void flip_horizontal(Mask& mask) {
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width / 2; ++x) {
            std::swap(mask.at(x, y), mask.at(mask.width - 1 - x, y));
        }
    }
}

double snap_to_gray_levels(double v) { return std::round(v * 255.0) / 255.0; }

}  // namespace

void SceneConfig::validate() const {
    if (n_regions <= 0) {
        throw_validation("n_regions must be positive");
    }
    if (static_cast<int>(labels.size()) != n_regions) {
        throw_validation("label count must equal n_regions");
    }
    std::set<std::string> unique(labels.begin(), labels.end());
    if (static_cast<int>(unique.size()) != n_regions) {
        throw_validation("labels must be distinct");
    }
    if (canvas_width < 32 || canvas_height < 32) {
        throw_validation("canvas must be at least 32x32");
    }
    if (position_sigma < 0 || scale_sigma < 0) {
        throw_validation("noise sigmas must be nonnegative");
    }
    if (!(intensity_min > 0 && intensity_max <= 1.0 && intensity_min < intensity_max)) {
        throw_validation("intensity range must satisfy 0 < min < max <= 1");
    }
    if (mirror_prob < 0 || mirror_prob > 1) {
        throw_validation("mirror_prob must lie in [0,1]");
    }
    if (region_scale <= 0) {
        throw_validation("region_scale must be positive");
    }
    if (feature_dim < 16) {
        throw_validation("feature_dim must be at least 16");
    }
}

ScenePair generate_scene_pair(const SceneConfig& config) {
    config.validate();
    Rng root(config.seed);
    Rng place_rng = root.split(1);
    Rng jitter_rng = root.split(2);
    Rng mirror_rng = root.split(3);

    const int canvas_min = std::min(config.canvas_width, config.canvas_height);

    // Distinct intensities, snapped to the 255-level gray grid so PGM
    // round-trips are exact.
    std::vector<double> intensities;
    for (int i = 0; i < config.n_regions; ++i) {
        double t = config.n_regions == 1
                       ? 1.0
                       : static_cast<double>(i) / (config.n_regions - 1);
        intensities.push_back(
            snap_to_gray_levels(config.intensity_min +
                                t * (config.intensity_max - config.intensity_min)));
    }
    {
        std::set<double> unique(intensities.begin(), intensities.end());
        if (unique.size() != intensities.size()) {
            throw_validation("intensity range too narrow for distinct region intensities");
        }
    }
    place_rng.shuffle(intensities);

    std::vector<ShapeSpec> reference_shapes;
    for (int i = 0; i < config.n_regions; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
            ShapeSpec candidate = sample_shape(place_rng, config.region_scale, canvas_min);
            candidate.intensity = intensities[static_cast<std::size_t>(i)];
            if (!placement_clear(candidate, reference_shapes)) continue;
            Mask mask = rasterize(candidate, config.canvas_width, config.canvas_height);
            if (mask.sum() == 0.0) continue;
            reference_shapes.push_back(candidate);
            placed = true;
            break;
        }
        if (!placed) {
            throw_validation("region placement failed after 1000 attempts; "
                             "reduce n_regions or region_scale");
        }
    }

    // Target layout: per-region jitter, re-drawn wholesale until the layout
    // stays disjoint so noisy scenes keep zero pairwise overlap.
    bool mirrored = mirror_rng.uniform01() < config.mirror_prob;
    std::vector<ShapeSpec> target_shapes;
    std::vector<RegionPerturbation> provenance;
    bool accepted = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !accepted; ++attempt) {
        target_shapes.clear();
        provenance.clear();
        bool ok = true;
        for (const ShapeSpec& ref_shape : reference_shapes) {
            RegionPerturbation p;
            p.dx = jitter_rng.normal(0.0, config.position_sigma);
            p.dy = jitter_rng.normal(0.0, config.position_sigma);
            p.scale = std::clamp(1.0 + jitter_rng.normal(0.0, config.scale_sigma), 0.3, 2.0);
            ShapeSpec shape = ref_shape;
            shape.rx *= p.scale;
            shape.ry *= p.scale;
            shape.amplitude *= p.scale;
            double r = shape.bound_radius();
            if (2.0 * (r + kPlacementMargin) >= 1.0) {
                ok = false;
                break;
            }
            shape.cx = std::clamp(ref_shape.cx + p.dx, r + kPlacementMargin,
                                  1.0 - r - kPlacementMargin);
            shape.cy = std::clamp(ref_shape.cy + p.dy, r + kPlacementMargin,
                                  1.0 - r - kPlacementMargin);
            if (!placement_clear(shape, target_shapes)) {
                ok = false;
                break;
            }
            target_shapes.push_back(shape);
            provenance.push_back(p);
        }
        if (!ok) continue;
        accepted = true;
        for (const ShapeSpec& shape : target_shapes) {
            Mask mask = rasterize(shape, config.canvas_width, config.canvas_height);
            if (mask.sum() == 0.0) {
                accepted = false;
                break;
            }
        }
    }
    if (!accepted) {
        throw_validation("target jitter failed to stay disjoint after 1000 attempts; "
                         "reduce position_sigma or n_regions");
    }

    ScenePair pair;
    pair.seed = config.seed;
    pair.mirrored = mirrored;
    pair.provenance = provenance;
    pair.reference_image = Image::zeros(config.canvas_width, config.canvas_height);
    pair.target_image = Image::zeros(config.canvas_width, config.canvas_height);

    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "scene-%016llx",
                  static_cast<unsigned long long>(config.seed));
    pair.reference.id = id_buf;
    pair.reference.image_ref = "";

    for (int i = 0; i < config.n_regions; ++i) {
        const std::string& label = config.labels[static_cast<std::size_t>(i)];
        const ShapeSpec& ref_shape = reference_shapes[static_cast<std::size_t>(i)];
        Mask ref_mask = rasterize(ref_shape, config.canvas_width, config.canvas_height);
        for (std::size_t px = 0; px < ref_mask.values.size(); ++px) {
            if (ref_mask.values[px] > 0.0) pair.reference_image.values[px] = ref_shape.intensity;
        }
        pair.reference.regions[label] = TemplateRegion{mask_bounds(ref_mask), ref_mask};

        ShapeSpec tgt_shape = target_shapes[static_cast<std::size_t>(i)];
        Mask tgt_mask = rasterize(tgt_shape, config.canvas_width, config.canvas_height);
        if (mirrored) flip_horizontal(tgt_mask);
        for (std::size_t px = 0; px < tgt_mask.values.size(); ++px) {
            if (tgt_mask.values[px] > 0.0) pair.target_image.values[px] = tgt_shape.intensity;
        }
        GtRegion gt;
        gt.label = label;
        gt.mask = tgt_mask;
        gt.box = mask_bounds(tgt_mask);
        gt.intensity = tgt_shape.intensity;
        pair.target_regions.push_back(std::move(gt));
    }

    pair.reference.feature = extract_features(pair.reference_image, config.feature_dim);
    return pair;
}

FeatureVector extract_features(const Image& image, int dim) {
    if (dim < 16) {
        throw_validation("extract_features requires dim >= 16");
    }
    image.validate();
    auto [min_it, max_it] = std::minmax_element(image.values.begin(), image.values.end());
    if (*min_it == *max_it) {
        throw_validation("extract_features on a blank (zero-variance) image");
    }
    constexpr int kHistBins = 8;
    int grid = static_cast<int>(std::floor(std::sqrt(static_cast<double>(dim - kHistBins))));
    FeatureVector feature;
    feature.values.assign(static_cast<std::size_t>(dim), 0.0);

    for (int gy = 0; gy < grid; ++gy) {
        int y0 = gy * image.height / grid;
        int y1 = (gy + 1) * image.height / grid;
        for (int gx = 0; gx < grid; ++gx) {
            int x0 = gx * image.width / grid;
            int x1 = (gx + 1) * image.width / grid;
            double total = 0.0;
            int count = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    total += image.at(x, y);
                    ++count;
                }
            }
            feature.values[static_cast<std::size_t>(gy * grid + gx)] =
                count > 0 ? total / count : 0.0;
        }
    }
    for (double v : image.values) {
        int bin = std::min(static_cast<int>(v * kHistBins), kHistBins - 1);
        feature.values[static_cast<std::size_t>(grid * grid + bin)] +=
            1.0 / static_cast<double>(image.values.size());
    }

    double norm = 0.0;
    for (double v : feature.values) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : feature.values) v /= norm;
    return feature;
}

FeatureGrid make_feature_grid(const Image& image, int dim, double gain) {
    if (dim < 8) {
        throw_validation("make_feature_grid requires dim >= 8");
    }
    image.validate();
    const int rbf_bins = dim - 4;
    const double sigma = 0.75 / rbf_bins;
    FeatureGrid grid;
    grid.width = image.width;
    grid.height = image.height;
    grid.dim = dim;
    grid.values.assign(static_cast<std::size_t>(dim) * image.width * image.height, 0.0);
    for (int y = 0; y < image.height; ++y) {
        double v_norm = (y + 0.5) / image.height;
        for (int x = 0; x < image.width; ++x) {
            double u_norm = (x + 0.5) / image.width;
            double value = image.at(x, y);
            std::span<double> f = grid.at(x, y);
            for (int k = 0; k < rbf_bins; ++k) {
                double center = (k + 0.5) / rbf_bins;
                double d = (value - center) / sigma;
                f[static_cast<std::size_t>(k)] = gain * std::exp(-0.5 * d * d);
            }
            f[static_cast<std::size_t>(rbf_bins)] = gain * 0.25 * u_norm;
            f[static_cast<std::size_t>(rbf_bins) + 1] = gain * 0.25 * v_norm;
            f[static_cast<std::size_t>(rbf_bins) + 2] = gain * 0.25;
            f[static_cast<std::size_t>(rbf_bins) + 3] = gain * value;
        }
    }
    return grid;
}

std::vector<DetectedRegion> regions_from_ground_truth(const ScenePair& pair,
                                                      std::vector<std::string>* gold_out) {
    std::vector<std::size_t> order(pair.target_regions.size());
    std::iota(order.begin(), order.end(), 0u);
    // Scanline order of centers, independent of label placement order.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        auto ca = pair.target_regions[a].box.center();
        auto cb = pair.target_regions[b].box.center();
        return std::tie(ca[1], ca[0]) < std::tie(cb[1], cb[0]);
    });
    std::vector<DetectedRegion> detected;
    if (gold_out) gold_out->clear();
    for (std::size_t idx : order) {
        const GtRegion& gt = pair.target_regions[idx];
        detected.push_back({gt.box, gt.mask, gt.intensity});
        if (gold_out) gold_out->push_back(gt.label);
    }
    return detected;
}

std::vector<DetectedRegion> detect_regions(const Image& image, double threshold) {
    image.validate();
    std::vector<int> component(image.values.size(), -1);
    std::vector<DetectedRegion> regions;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            std::size_t idx = static_cast<std::size_t>(y) * image.width + x;
            if (image.values[idx] < threshold || component[idx] >= 0) continue;
            int id = static_cast<int>(regions.size());
            // BFS flood fill, 4-connectivity.
            Mask mask = Mask::zeros(image.width, image.height);
            double total = 0.0;
            int count = 0;
            std::deque<std::pair<int, int>> queue{{x, y}};
            component[idx] = id;
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                mask.at(cx, cy) = 1.0;
                total += image.at(cx, cy);
                ++count;
                constexpr std::array<std::array<int, 2>, 4> steps{
                    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
                for (const auto& step : steps) {
                    int nx = cx + step[0], ny = cy + step[1];
                    if (nx < 0 || ny < 0 || nx >= image.width || ny >= image.height) continue;
                    std::size_t nidx = static_cast<std::size_t>(ny) * image.width + nx;
                    if (image.values[nidx] < threshold || component[nidx] >= 0) continue;
                    component[nidx] = id;
                    queue.emplace_back(nx, ny);
                }
            }
            DetectedRegion region;
            region.mask = std::move(mask);
            region.box = mask_bounds(region.mask);
            region.mean_intensity = total / count;
            regions.push_back(std::move(region));
        }
    }
    // detect order is already scanline order of first pixels; normalize to
    // center scanline order to match regions_from_ground_truth.
    std::sort(regions.begin(), regions.end(), [](const DetectedRegion& a, const DetectedRegion& b) {
        auto ca = a.box.center();
        auto cb = b.box.center();
        return std::tie(ca[1], ca[0]) < std::tie(cb[1], cb[0]);
    });
    return regions;
}

namespace {

double offset_distortion(std::span<const std::array<double, 2>> ref_centers,
                         std::span<const std::array<double, 2>> tgt_centers,
                         std::span<const int> mapping) {
    double total = 0.0;
    for (std::size_t i = 0; i < ref_centers.size(); ++i) {
        for (std::size_t j = i + 1; j < ref_centers.size(); ++j) {
            double rx = ref_centers[i][0] - ref_centers[j][0];
            double ry = ref_centers[i][1] - ref_centers[j][1];
            double tx = tgt_centers[static_cast<std::size_t>(mapping[i])][0] -
                        tgt_centers[static_cast<std::size_t>(mapping[j])][0];
            double ty = tgt_centers[static_cast<std::size_t>(mapping[i])][1] -
                        tgt_centers[static_cast<std::size_t>(mapping[j])][1];
            total += std::hypot(rx - tx, ry - ty);
        }
    }
    return total;
}

// Exhaustive best bijection ref -> target by offset-graph distortion.
std::pair<std::vector<int>, double> best_bijection(
    std::span<const std::array<double, 2>> ref_centers,
    std::span<const std::array<double, 2>> tgt_centers) {
    std::vector<int> perm(ref_centers.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_distortion = offset_distortion(ref_centers, tgt_centers, perm);
    while (std::next_permutation(perm.begin(), perm.end())) {
        double d = offset_distortion(ref_centers, tgt_centers, perm);
        if (d < best_distortion) {
            best_distortion = d;
            best = perm;
        }
    }
    return {best, best_distortion};
}

// Sorted distances to all other centers; reflection-invariant signature for
// the non-bijective fallback path.
std::vector<std::vector<double>> distance_profiles(
    std::span<const std::array<double, 2>> centers) {
    std::vector<std::vector<double>> profiles(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) {
        for (std::size_t j = 0; j < centers.size(); ++j) {
            if (i == j) continue;
            profiles[i].push_back(std::hypot(centers[i][0] - centers[j][0],
                                             centers[i][1] - centers[j][1]));
        }
        std::sort(profiles[i].begin(), profiles[i].end());
    }
    return profiles;
}

double profile_distance(const std::vector<double>& a, const std::vector<double>& b) {
    std::size_t common = std::min(a.size(), b.size());
    double total = 0.0;
    for (std::size_t k = 0; k < common; ++k) {
        total += (a[k] - b[k]) * (a[k] - b[k]);
    }
    // Unpaired profile entries carry a fixed penalty.
    total += 0.25 * static_cast<double>(std::max(a.size(), b.size()) - common);
    return std::sqrt(total);
}

}  // namespace

RelabelResult relational_label(const Template& reference,
                               std::span<const DetectedRegion> targets,
                               const RelabelOptions& options) {
    if (reference.regions.empty()) {
        throw_validation("relational_label requires an annotated reference");
    }
    if (targets.empty()) {
        throw_validation("relational_label requires at least one detected region");
    }
    std::vector<std::string> labels;
    std::vector<std::array<double, 2>> ref_centers;
    for (const auto& [label, region] : reference.regions) {
        labels.push_back(label);
        ref_centers.push_back(region.box.center());
    }
    std::vector<std::array<double, 2>> tgt_centers;
    for (const DetectedRegion& t : targets) tgt_centers.push_back(t.box.center());
    std::vector<std::array<double, 2>> tgt_mirrored = tgt_centers;
    for (auto& c : tgt_mirrored) c[0] = 1.0 - c[0];

    RelabelResult result;
    const std::size_t n = ref_centers.size();
    if (targets.size() == n && n <= 8) {
        auto [mapping, distortion] = best_bijection(ref_centers, tgt_centers);
        result.distortion = distortion;
        if (options.try_mirror) {
            auto [m_mapping, m_distortion] = best_bijection(ref_centers, tgt_mirrored);
            if (m_distortion < distortion) {
                mapping = m_mapping;
                result.distortion = m_distortion;
                result.used_mirror = true;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            result.labels[mapping[i]] = labels[i];
        }
        return result;
    }

    // Count mismatch or large n: sorted-distance profiles + OT matching with
    // dummy padding. Profiles are reflection-invariant, so no mirror
    // hypothesis is needed here.
    auto ref_profiles = distance_profiles(ref_centers);
    auto tgt_profiles = distance_profiles(tgt_centers);
    CostMatrix cost = CostMatrix::zeros(static_cast<int>(targets.size()), static_cast<int>(n));
    for (std::size_t t = 0; t < targets.size(); ++t) {
        for (std::size_t r = 0; r < n; ++r) {
            cost.at(static_cast<int>(t), static_cast<int>(r)) =
                profile_distance(tgt_profiles[t], ref_profiles[r]);
        }
    }
    Assignment assignment = match_cost_matrix(cost, options.match);
    double total_cost = 0.0;
    for (std::size_t k = 0; k < assignment.pairs.size(); ++k) {
        auto [t, r] = assignment.pairs[k];
        result.labels[t] = labels[static_cast<std::size_t>(r)];
        total_cost += cost.at(t, r);
    }
    for (int r : assignment.unassigned_labels) {
        result.unassigned_labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    result.distortion = total_cost;
    return result;
}

double region_mean_intensity(const Image& image, const Mask& mask) {
    if (image.width != mask.width || image.height != mask.height) {
        throw_validation("region_mean_intensity dims mismatch");
    }
    double total = 0.0, weight = 0.0;
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        if (mask.values[i] > 0.0) {
            total += image.values[i] * mask.values[i];
            weight += mask.values[i];
        }
    }
    if (weight == 0.0) {
        throw_validation("region_mean_intensity on an empty mask");
    }
    return total / weight;
}

namespace {

constexpr std::uint64_t kSegEmbeddingSeed = 0x5EEDFACEull;
constexpr int kDescriptorDim = 6;

void push_descriptor(std::vector<double>& out, const BBox& box, double intensity) {
    auto c = box.center();
    out.push_back(c[0]);
    out.push_back(c[1]);
    out.push_back(box.w);
    out.push_back(box.h);
    out.push_back(intensity);
    out.push_back(box.area());
}

}  // namespace

SegEmbedding make_seg_embedding(const GtRegion& target_region,
                                const std::optional<TemplateRegion>& ref_region,
                                double ref_intensity, int d_vlm) {
    if (d_vlm <= 0) {
        throw_validation("d_vlm must be positive");
    }
    std::vector<double> descriptor;
    descriptor.reserve(2 * kDescriptorDim);
    push_descriptor(descriptor, target_region.box, target_region.intensity);
    if (ref_region.has_value()) {
        push_descriptor(descriptor, ref_region->box, ref_intensity);
    } else {
        descriptor.insert(descriptor.end(), kDescriptorDim, 0.0);
    }

    // One fixed random linear map shared by every call.
    Rng rng(kSegEmbeddingSeed);
    SegEmbedding h;
    h.values.assign(static_cast<std::size_t>(d_vlm), 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(descriptor.size()));
    for (int o = 0; o < d_vlm; ++o) {
        double acc = 0.0;
        for (double d : descriptor) {
            acc += rng.normal() * scale * d;
        }
        h.values[static_cast<std::size_t>(o)] = acc;
    }
    return h;
}

SegEmbedding make_seg_embedding(const ScenePair& pair, const std::string& label, int d_vlm) {
    const GtRegion* target = nullptr;
    for (const GtRegion& gt : pair.target_regions) {
        if (gt.label == label) {
            target = &gt;
            break;
        }
    }
    if (!target) {
        throw_validation("make_seg_embedding: unknown label '" + label + "'");
    }
    auto it = pair.reference.regions.find(label);
    if (it == pair.reference.regions.end()) {
        throw_validation("make_seg_embedding: label '" + label + "' missing from reference");
    }
    double ref_intensity = region_mean_intensity(pair.reference_image, it->second.mask);
    return make_seg_embedding(*target, it->second, ref_intensity, d_vlm);
}

void save_scene(const ScenePair& pair, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_pgm(pair.reference_image, dir / "reference.pgm");
    save_pgm(pair.target_image, dir / "target.pgm");

    Template to_save = pair.reference;
    to_save.image_ref = "reference.pgm";
    write_text_file(dir / "template.json", dump_json(template_to_json(to_save)));

    json regions = json::object();
    json provenance = json::object();
    for (std::size_t i = 0; i < pair.target_regions.size(); ++i) {
        const GtRegion& gt = pair.target_regions[i];
        regions[gt.label] = json{{"bbox", {gt.box.x, gt.box.y, gt.box.w, gt.box.h}},
                                 {"mask_rle", mask_to_rle(gt.mask)},
                                 {"mask_w", gt.mask.width},
                                 {"mask_h", gt.mask.height},
                                 {"intensity", gt.intensity}};
        const RegionPerturbation& p = pair.provenance[i];
        provenance[gt.label] = json{{"dx", p.dx}, {"dy", p.dy}, {"scale", p.scale}};
    }
    json labels = json::array();
    for (const GtRegion& gt : pair.target_regions) labels.push_back(gt.label);
    json truth{{"seed", pair.seed},
               {"mirrored", pair.mirrored},
               {"labels", labels},
               {"regions", regions},
               {"provenance", provenance}};
    write_text_file(dir / "truth.json", dump_json(truth));
}

ScenePair load_scene(const std::filesystem::path& dir) {
    ScenePair pair;
    pair.reference_image = load_pgm(dir / "reference.pgm");
    pair.target_image = load_pgm(dir / "target.pgm");
    pair.reference = template_from_json(load_json_file(dir / "template.json"));

    json truth = load_json_file(dir / "truth.json");
    pair.seed = truth.at("seed").get<std::uint64_t>();
    pair.mirrored = truth.at("mirrored").get<bool>();
    const json& regions = truth.at("regions");
    const json& provenance = truth.at("provenance");
    for (const auto& label_json : truth.at("labels")) {
        std::string label = label_json.get<std::string>();
        const json& r = regions.at(label);
        GtRegion gt;
        gt.label = label;
        const auto& bbox = r.at("bbox");
        gt.box = BBox{bbox.at(0).get<double>(), bbox.at(1).get<double>(),
                      bbox.at(2).get<double>(), bbox.at(3).get<double>()};
        gt.mask = mask_from_rle(r.at("mask_rle").get<std::string>(), r.at("mask_w").get<int>(),
                                r.at("mask_h").get<int>());
        gt.intensity = r.at("intensity").get<double>();
        pair.target_regions.push_back(std::move(gt));
        const json& p = provenance.at(label);
        pair.provenance.push_back({p.at("dx").get<double>(), p.at("dy").get<double>(),
                                   p.at("scale").get<double>()});
    }
    return pair;
}

}  // namespace refmatch
