#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refmatch/geometry.hpp"
#include "refmatch/io.hpp"

namespace refmatch {

struct FeatureVector {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
    void validate() const;
};

/// Cosine of the angle between two feature vectors. Errors on dimension
/// mismatch and on zero-norm inputs.
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

struct TemplateRegion {
    BBox box;
    Mask mask;
};

/// Annotated reference image: one retrieval feature plus per-label regions.
struct Template {
    std::string id;
    FeatureVector feature;
    std::string image_ref;
    std::map<std::string, TemplateRegion> regions;
};

struct ReferenceBank {
    int dim = 0;
    std::vector<Template> templates;

    /// Checks id uniqueness, feature dimensions, mask/box consistency
    /// (every region box must bound its mask's nonzero pixels within one
    /// pixel). Throws Validation on the first violation.
    void validate() const;
};

struct RetrievalHit {
    int index = -1;  // position in bank.templates
    double similarity = 0.0;
};

/// Top-k templates by cosine similarity, exhaustive scan, ties broken by
/// earliest bank position. `require_labels`, when non-empty, restricts
/// candidates to templates containing every named label; k is then clamped
/// to the candidate count.
std::vector<RetrievalHit> retrieve(const ReferenceBank& bank, const FeatureVector& query,
                                   int k, std::span<const std::string> require_labels = {});

/// Row-major run-length encoding, "count:value" runs joined by commas.
std::string mask_to_rle(const Mask& mask);
Mask mask_from_rle(const std::string& rle, int width, int height);

json template_to_json(const Template& tmpl);
Template template_from_json(const json& value);

json bank_to_json(const ReferenceBank& bank);
ReferenceBank bank_from_json(const json& value);

void save_bank(const ReferenceBank& bank, const std::filesystem::path& path);
ReferenceBank load_bank(const std::filesystem::path& path);

}  // namespace refmatch
