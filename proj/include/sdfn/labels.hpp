#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace sdfn {

inline constexpr std::size_t kNumClasses = 14;

/// Pathology slots of a label vector, in canonical order.
enum class Pathology : std::size_t {
    Atelectasis,
    Cardiomegaly,
    Effusion,
    Infiltration,
    Mass,
    Nodule,
    Pneumonia,
    Pneumothorax,
    Consolidation,
    Edema,
    Emphysema,
    Fibrosis,
    PleuralThickening,
    Hernia,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames{
    "atelectasis", "cardiomegaly", "effusion", "infiltration", "mass",     "nodule",             "pneumonia",
    "pneumothorax", "consolidation", "edema",  "emphysema",    "fibrosis", "pleural_thickening", "hernia"};

/// Display names matching the usual report row labels.
inline constexpr std::array<std::string_view, kNumClasses> kClassTitles{
    "Atelectasis", "Cardiomegaly", "Effusion", "Infiltration", "Mass",     "Nodule",             "Pneumonia",
    "Pneumothorax", "Consolidation", "Edema",  "Emphysema",    "Fibrosis", "Pleural Thickening", "Hernia"};

using LabelVector = std::array<double, kNumClasses>;

constexpr std::size_t index_of(Pathology p) { return static_cast<std::size_t>(p); }

inline std::optional<std::size_t> class_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (kClassNames[i] == name) return i;
    return std::nullopt;
}

}  // namespace sdfn
