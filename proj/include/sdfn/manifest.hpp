#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/error.hpp"
#include "sdfn/labels.hpp"
#include "sdfn/phantom.hpp"

namespace sdfn {

/// One manifest line: where the image and mask live plus the ground truth.
struct ManifestRow {
    std::string image_id;
    std::string patient_id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    LabelVector labels{};
    std::vector<LesionBox> lesions;
    bool misaligned = false;
    bool has_object = false;
    bool operator==(const ManifestRow&) const = default;
};

inline std::vector<std::string> manifest_columns() {
    std::vector<std::string> cols{"image_id", "patient_id", "image_path", "mask_path"};
    for (auto name : kClassNames) cols.emplace_back(name);
    cols.insert(cols.end(), {"lesions", "misaligned", "has_object"});
    return cols;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

/// "c:x0:y0:x1:y1" entries joined by ';' (class given by name).
inline std::string pack_lesions(const std::vector<LesionBox>& lesions) {
    std::string out;
    for (const auto& l : lesions) {
        if (!out.empty()) out += ';';
        out += std::string(kClassNames[l.cls]) + ":" + std::to_string(l.box.x0) + ":" + std::to_string(l.box.y0) + ":" +
               std::to_string(l.box.x1) + ":" + std::to_string(l.box.y1);
    }
    return out;
}

inline std::vector<LesionBox> unpack_lesions(const std::string& field) {
    std::vector<LesionBox> out;
    if (field.empty()) return out;
    for (const auto& entry : split(field, ';')) {
        const auto parts = split(entry, ':');
        if (parts.size() != 5) throw ParseError("malformed lesion entry '" + entry + "'", 0);
        const auto cls = class_index(parts[0]);
        if (!cls) throw ParseError("unknown lesion class '" + parts[0] + "'", 0);
        try {
            out.push_back({*cls, {std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]), std::stoi(parts[4])}});
        } catch (const std::exception&) {
            throw ParseError("malformed lesion coordinates in '" + entry + "'", 0);
        }
    }
    return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const auto cols = manifest_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
    for (const auto& r : rows) {
        for (const auto* field : {&r.image_id, &r.patient_id, &r.image_path, &r.mask_path})
            if (field->find_first_of(",\n") != std::string::npos) throw Error("manifest field contains a separator: " + *field);
        out << r.image_id << ',' << r.patient_id << ',' << r.image_path << ',' << r.mask_path;
        for (double l : r.labels) out << ',' << (l != 0.0 ? 1 : 0);
        out << ',' << pack_lesions(r.lesions) << ',' << (r.misaligned ? 1 : 0) << ',' << (r.has_object ? 1 : 0) << "\n";
    }
}

/// Parses a manifest; the header must list every column in canonical order.
inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PrerequisiteError("gen-data", "cannot open manifest " + path.string());
    std::string line;
    std::size_t offset = 0;
    if (!std::getline(in, line)) throw ParseError("manifest " + path.string() + " is empty", 0);
    const auto header = split(line, ',');
    const auto cols = manifest_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i >= header.size()) throw ParseError("manifest missing column '" + cols[i] + "'", offset);
        if (header[i] != cols[i])
            throw ParseError("manifest column " + std::to_string(i + 1) + " should be '" + cols[i] + "' but is '" + header[i] + "'",
                             offset);
    }
    if (header.size() != cols.size()) throw ParseError("manifest has unexpected extra columns", offset);
    offset += line.size() + 1;

    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            offset += 1;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != cols.size())
            throw ParseError("manifest row has " + std::to_string(f.size()) + " fields, expected " + std::to_string(cols.size()), offset);
        ManifestRow r;
        r.image_id = f[0];
        r.patient_id = f[1];
        r.image_path = f[2];
        r.mask_path = f[3];
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const auto& v = f[4 + c];
            if (v != "0" && v != "1")
                throw ParseError("label column '" + std::string(kClassNames[c]) + "' must be 0 or 1, got '" + v + "'", offset);
            r.labels[c] = v == "1" ? 1.0 : 0.0;
        }
        try {
            r.lesions = unpack_lesions(f[4 + kNumClasses]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), offset);
        }
        auto flag = [&](const std::string& v, const char* name) {
            if (v != "0" && v != "1") throw ParseError(std::string("column '") + name + "' must be 0 or 1", offset);
            return v == "1";
        };
        r.misaligned = flag(f[5 + kNumClasses], "misaligned");
        r.has_object = flag(f[6 + kNumClasses], "has_object");
        rows.push_back(std::move(r));
        offset += line.size() + 1;
    }
    return rows;
}

inline ManifestRow manifest_row(const PhantomRecord& rec) {
    return {rec.image_id,  rec.patient_id, "images/" + rec.image_id + ".pgm", "masks/" + rec.image_id + ".pgm",
            rec.labels,    rec.lesions,    rec.misaligned,                    rec.has_object};
}

/// Writes images, masks, the manifest and the spec into `dir`.
inline std::vector<ManifestRow> write_corpus(const std::filesystem::path& dir, const PhantomSpec& spec,
                                             const std::vector<PhantomRecord>& corpus) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    std::vector<ManifestRow> rows;
    rows.reserve(corpus.size());
    for (const auto& rec : corpus) rows.push_back(manifest_row(rec));
    parallel_for(corpus.size(), [&](std::size_t i) {
        write_pgm(dir / rows[i].image_path, corpus[i].image);
        write_pgm(dir / rows[i].mask_path, corpus[i].lung_mask);
    });
    write_manifest(dir / "manifest.csv", rows);
    write_phantom_spec(dir / "phantom.spec", spec);
    return rows;
}

}  // namespace sdfn
