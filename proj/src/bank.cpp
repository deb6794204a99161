#include "refmatch/bank.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <unordered_set>

#include "refmatch/error.hpp"

namespace refmatch {

void FeatureVector::validate() const {
    if (values.empty()) {
        throw_validation("feature vector is empty");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw_validation("feature vector has non-finite value");
        }
    }
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
    if (a.values.size() != b.values.size()) {
        throw_validation("cosine_similarity dimension mismatch: " +
                         std::to_string(a.values.size()) + " vs " +
                         std::to_string(b.values.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw_validation("cosine_similarity undefined for zero-norm vector");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

void ReferenceBank::validate() const {
    std::unordered_set<std::string> ids;
    for (const Template& t : templates) {
        if (!ids.insert(t.id).second) {
            throw_validation("duplicate template id '" + t.id + "'");
        }
        t.feature.validate();
        if (t.feature.dim() != dim) {
            throw_validation("template '" + t.id + "' feature dim " +
                             std::to_string(t.feature.dim()) + " != bank dim " +
                             std::to_string(dim));
        }
        for (const auto& [label, region] : t.regions) {
            region.mask.validate();
            region.box.validate();
            BBox bounds = mask_bounds(region.mask);
            double px = 1.0 / region.mask.width;
            double py = 1.0 / region.mask.height;
            if (bounds.x < region.box.x - px || bounds.y < region.box.y - py ||
                bounds.x2() > region.box.x2() + px || bounds.y2() > region.box.y2() + py) {
                throw_validation("template '" + t.id + "' region '" + label +
                                 "': box does not bound mask pixels");
            }
        }
    }
}

std::vector<RetrievalHit> retrieve(const ReferenceBank& bank, const FeatureVector& query,
                                   int k, std::span<const std::string> require_labels) {
    if (bank.templates.empty()) {
        throw_validation("retrieve called on an empty bank");
    }
    if (k <= 0 || k > static_cast<int>(bank.templates.size())) {
        throw_validation("retrieve k must be in [1, bank size]");
    }
    std::vector<RetrievalHit> hits;
    hits.reserve(bank.templates.size());
    for (std::size_t i = 0; i < bank.templates.size(); ++i) {
        const Template& t = bank.templates[i];
        bool eligible = true;
        for (const std::string& label : require_labels) {
            if (!t.regions.count(label)) {
                eligible = false;
                break;
            }
        }
        if (!eligible) continue;
        hits.push_back({static_cast<int>(i), cosine_similarity(query, t.feature)});
    }
    // Stable on equal similarity, so earlier bank positions win.
    std::stable_sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        return a.similarity > b.similarity;
    });
    if (static_cast<int>(hits.size()) > k) {
        hits.resize(static_cast<std::size_t>(k));
    }
    return hits;
}

std::string mask_to_rle(const Mask& mask) {
    std::string out;
    std::size_t i = 0;
    while (i < mask.values.size()) {
        double value = mask.values[i];
        std::size_t run = 1;
        while (i + run < mask.values.size() && mask.values[i + run] == value) ++run;
        if (!out.empty()) out += ',';
        out += std::to_string(run) + ":" + format_double(value);
        i += run;
    }
    return out;
}

Mask mask_from_rle(const std::string& rle, int width, int height) {
    Mask mask;
    mask.width = width;
    mask.height = height;
    mask.values.reserve(static_cast<std::size_t>(width) * height);
    std::size_t pos = 0;
    while (pos < rle.size()) {
        std::size_t comma = rle.find(',', pos);
        if (comma == std::string::npos) comma = rle.size();
        std::size_t colon = rle.find(':', pos);
        if (colon == std::string::npos || colon >= comma) {
            throw_validation("malformed RLE run near '" + rle.substr(pos, comma - pos) + "'");
        }
        char* end = nullptr;
        long count = std::strtol(rle.c_str() + pos, &end, 10);
        if (count <= 0 || end != rle.c_str() + colon) {
            throw_validation("malformed RLE count near '" + rle.substr(pos, comma - pos) + "'");
        }
        double value = std::strtod(rle.c_str() + colon + 1, &end);
        if (end != rle.c_str() + comma) {
            throw_validation("malformed RLE value near '" + rle.substr(pos, comma - pos) + "'");
        }
        mask.values.insert(mask.values.end(), static_cast<std::size_t>(count), value);
        pos = comma + 1;
    }
    if (mask.values.size() != static_cast<std::size_t>(width) * height) {
        throw_validation("RLE length " + std::to_string(mask.values.size()) +
                         " does not match mask dims " + std::to_string(width) + "x" +
                         std::to_string(height));
    }
    mask.validate();
    return mask;
}

json template_to_json(const Template& tmpl) {
    json regions = json::object();
    for (const auto& [label, region] : tmpl.regions) {
        regions[label] = json{{"bbox", {region.box.x, region.box.y, region.box.w, region.box.h}},
                              {"mask_rle", mask_to_rle(region.mask)},
                              {"mask_w", region.mask.width},
                              {"mask_h", region.mask.height}};
    }
    return json{{"id", tmpl.id},
                {"feature", tmpl.feature.values},
                {"image_ref", tmpl.image_ref},
                {"regions", regions}};
}

Template template_from_json(const json& value) {
    Template tmpl;
    tmpl.id = value.at("id").get<std::string>();
    tmpl.feature.values = value.at("feature").get<std::vector<double>>();
    tmpl.image_ref = value.at("image_ref").get<std::string>();
    for (const auto& [label, region_json] : value.at("regions").items()) {
        TemplateRegion region;
        const auto& bbox = region_json.at("bbox");
        region.box = BBox{bbox.at(0).get<double>(), bbox.at(1).get<double>(),
                          bbox.at(2).get<double>(), bbox.at(3).get<double>()};
        region.mask = mask_from_rle(region_json.at("mask_rle").get<std::string>(),
                                    region_json.at("mask_w").get<int>(),
                                    region_json.at("mask_h").get<int>());
        tmpl.regions[label] = std::move(region);
    }
    return tmpl;
}

json bank_to_json(const ReferenceBank& bank) {
    json templates = json::array();
    for (const Template& t : bank.templates) {
        templates.push_back(template_to_json(t));
    }
    return json{{"dim", bank.dim}, {"templates", templates}};
}

ReferenceBank bank_from_json(const json& value) {
    ReferenceBank bank;
    bank.dim = value.at("dim").get<int>();
    for (const auto& t : value.at("templates")) {
        bank.templates.push_back(template_from_json(t));
    }
    bank.validate();
    return bank;
}

void save_bank(const ReferenceBank& bank, const std::filesystem::path& path) {
    bank.validate();
    write_text_file(path, dump_json(bank_to_json(bank)));
}

ReferenceBank load_bank(const std::filesystem::path& path) {
    return bank_from_json(load_json_file(path));
}

}  // namespace refmatch
