#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refmatch/bank.hpp"
#include "refmatch/fusion.hpp"
#include "refmatch/geometry.hpp"
#include "refmatch/ot.hpp"

namespace refmatch {

struct SceneConfig {
    int n_regions = 4;
    std::vector<std::string> labels;  // one per region
    int canvas_width = 64;
    int canvas_height = 64;
    double position_sigma = 0.0;  // target center jitter, normalized units
    double scale_sigma = 0.0;     // target size jitter, multiplicative
    double intensity_min = 0.25;
    double intensity_max = 1.0;
    double mirror_prob = 0.0;
    double region_scale = 1.0;  // multiplies the built-in shape size ranges
    int feature_dim = 64;       // retrieval feature dimensionality
    std::uint64_t seed = 0;

    void validate() const;
};

struct GtRegion {
    std::string label;
    BBox box;
    Mask mask;
    double intensity = 0.0;
};

struct RegionPerturbation {
    double dx = 0.0;
    double dy = 0.0;
    double scale = 1.0;
};

/// Fully annotated reference plus a jittered (optionally mirrored) target
/// whose ground truth stays on the harness side.
struct ScenePair {
    Template reference;
    Image reference_image;
    Image target_image;
    std::vector<GtRegion> target_regions;        // in label placement order
    std::vector<RegionPerturbation> provenance;  // parallel to target_regions
    bool mirrored = false;
    std::uint64_t seed = 0;
};

/// Places non-overlapping ellipse/rectangle/ribbon regions with distinct
/// intensities, then constructs the target by per-region Gaussian jitter and
/// optional horizontal mirroring. Deterministic per seed. Throws after 1000
/// rejected placements, suggesting fewer regions.
ScenePair generate_scene_pair(const SceneConfig& config);

/// Stand-in retrieval feature: sqrt(dim-8)-grid pooled mean intensities
/// concatenated with an 8-bin global intensity histogram, zero-padded to
/// dim, L2-normalized. Errors on dim < 16 and on blank (zero-variance)
/// images.
FeatureVector extract_features(const Image& image, int dim);

/// Stand-in per-pixel encoder used by the fusion path: an RBF bank over
/// intensity plus damped spatial coordinates, all scaled by `gain`.
FeatureGrid make_feature_grid(const Image& image, int dim, double gain);

/// A target region with its label hidden.
struct DetectedRegion {
    BBox box;
    Mask mask;
    double mean_intensity = 0.0;
};

/// Ground-truth regions, labels stripped, in scanline order of their
/// centers. `gold_out`, when given, receives the matching hidden labels for
/// scoring.
std::vector<DetectedRegion> regions_from_ground_truth(const ScenePair& pair,
                                                      std::vector<std::string>* gold_out = nullptr);

/// Connected-component detector stub over foreground intensity.
std::vector<DetectedRegion> detect_regions(const Image& image, double threshold);

struct RelabelOptions {
    bool try_mirror = true;
    MatchConfig match;  // used by the non-bijective / large-n fallback path
};

struct RelabelResult {
    std::map<int, std::string> labels;  // detected index -> label
    bool used_mirror = false;
    double distortion = 0.0;
    std::vector<std::string> unassigned_labels;
};

/// Deterministic relational labeler: assigns reference labels to target
/// regions by minimizing pairwise center-offset distortion between the
/// reference layout and the target layout, exactly (all bijections) for
/// n <= 8 and via the OT matcher on sorted-distance profiles otherwise.
/// The mirrored hypothesis (x-flipped target centers) is adopted only when
/// strictly better.
RelabelResult relational_label(const Template& reference,
                               std::span<const DetectedRegion> targets,
                               const RelabelOptions& options = {});

/// <Seg>-token stand-in: a fixed seeded random linear map applied to the
/// concatenated target-region and reference-region descriptors.
SegEmbedding make_seg_embedding(const GtRegion& target_region,
                                const std::optional<TemplateRegion>& ref_region,
                                double ref_intensity, int d_vlm);
SegEmbedding make_seg_embedding(const ScenePair& pair, const std::string& label, int d_vlm);

/// Mean image intensity over a mask's nonzero pixels.
double region_mean_intensity(const Image& image, const Mask& mask);

/// Scene persistence: reference.pgm, target.pgm, template.json, truth.json
/// inside `dir`.
void save_scene(const ScenePair& pair, const std::filesystem::path& dir);
ScenePair load_scene(const std::filesystem::path& dir);

}  // namespace refmatch
