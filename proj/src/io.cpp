#include "refmatch/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refmatch/error.hpp"

namespace refmatch {

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

namespace {

void dump_value(const json& value, std::string& out, int indent, int depth) {
    const bool compact = indent <= 0;
    const std::string pad =
        compact ? "" : std::string(static_cast<std::size_t>(indent) * depth, ' ');
    const std::string pad_in =
        compact ? "" : std::string(static_cast<std::size_t>(indent) * (depth + 1), ' ');
    switch (value.type()) {
        case json::value_t::object: {
            if (value.empty()) {
                out += "{}";
                return;
            }
            out += compact ? "{" : "{\n";
            bool first = true;
            for (auto it = value.begin(); it != value.end(); ++it) {
                if (!first) out += compact ? "," : ",\n";
                first = false;
                out += pad_in;
                out += nlohmann::json(it.key()).dump();
                out += ": ";
                dump_value(it.value(), out, indent, depth + 1);
            }
            if (!compact) out += "\n" + pad;
            out += "}";
            return;
        }
        case json::value_t::array: {
            if (value.empty()) {
                out += "[]";
                return;
            }
            // Scalar-only arrays stay on one line; they are overwhelmingly
            // feature vectors and coordinate tuples.
            bool scalars_only = compact;
            if (!compact) {
                scalars_only = true;
                for (const auto& item : value) {
                    if (item.is_structured()) {
                        scalars_only = false;
                        break;
                    }
                }
            }
            out += "[";
            bool first = true;
            for (const auto& item : value) {
                if (!first) out += scalars_only ? ", " : ",";
                if (!scalars_only) out += "\n" + pad_in;
                first = false;
                dump_value(item, out, indent, depth + 1);
            }
            if (!scalars_only) out += "\n" + pad;
            out += "]";
            return;
        }
        case json::value_t::string:
            out += nlohmann::json(value.get<std::string>()).dump();
            return;
        case json::value_t::boolean:
            out += value.get<bool>() ? "true" : "false";
            return;
        case json::value_t::number_integer:
            out += std::to_string(value.get<std::int64_t>());
            return;
        case json::value_t::number_unsigned:
            out += std::to_string(value.get<std::uint64_t>());
            return;
        case json::value_t::number_float: {
            double d = value.get<double>();
            if (!std::isfinite(d)) {
                throw_internal("refusing to serialize non-finite float");
            }
            out += format_double(d);
            return;
        }
        case json::value_t::null:
        default:
            out += "null";
            return;
    }
}

}  // namespace

std::string dump_json(const json& value, int indent) {
    std::string out;
    dump_value(value, out, indent, 0);
    out += "\n";
    return out;
}

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw_parse(origin + ": malformed JSON at byte " + std::to_string(e.byte) + ": " +
                    e.what());
    }
}

json load_json_file(const std::filesystem::path& path) {
    return parse_json(read_text_file(path), path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw_validation("cannot open for writing: " + path.string());
    }
    out << content;
    if (!out) {
        throw_validation("write failed: " + path.string());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw_validation("cannot open for reading: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_pgm(const Image& image, const std::filesystem::path& path) {
    std::string out = "P2\n";
    out += std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            int level = static_cast<int>(std::lround(image.at(x, y) * 255.0));
            if (x > 0) out += ' ';
            out += std::to_string(level);
        }
        out += '\n';
    }
    write_text_file(path, out);
}

Image load_pgm(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string magic;
    in >> magic;
    if (magic != "P2") {
        throw_parse(path.string() + ": expected P2 portable graymap, got '" + magic + "'");
    }
    int width = 0, height = 0, maxval = 0;
    in >> width >> height >> maxval;
    if (!in || width <= 0 || height <= 0 || maxval <= 0) {
        throw_parse(path.string() + ": bad PGM header");
    }
    Image image = Image::zeros(width, height);
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        int level = 0;
        in >> level;
        if (!in) {
            throw_parse(path.string() + ": truncated PGM pixel data at index " +
                        std::to_string(i));
        }
        image.values[i] = static_cast<double>(level) / maxval;
    }
    return image;
}

}  // namespace refmatch
