#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/error.hpp"
#include "sdfn/image.hpp"
#include "sdfn/labels.hpp"
#include "sdfn/lrg.hpp"
#include "sdfn/parallel.hpp"
#include "sdfn/random.hpp"

namespace sdfn {

/// Classes whose lesions are drawn only inside the lung fields.
inline constexpr std::array<bool, kNumClasses> kLungConfined{true, false, true, true, true, true, true,
                                                            true, true,  true,  false, true, true, false};

/// Classes drawn from the small lesion size range.
inline constexpr std::array<bool, kNumClasses> kSmallLesion{false, false, false, false, false, true, false,
                                                           false, false, false, false, false, false, false};

struct PhantomSpec {
    int extent = 256;
    std::array<double, kNumClasses> prevalence{0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2};
    double small_lesion_min = 2.0;  // diameters in pixels at `extent`
    double small_lesion_max = 5.0;
    double large_lesion_min = 20.0;
    double large_lesion_max = 60.0;
    double misalignment_prob = 0.1;
    double object_prob = 0.1;
    double noise = 0.02;
    int patients = 100;
    int images_per_patient = 4;

    int count() const { return patients * images_per_patient; }

    void validate() const {
        if (extent < 16) throw ConfigError("phantom spec: extent must be at least 16");
        for (std::size_t c = 0; c < kNumClasses; ++c)
            if (!(prevalence[c] >= 0.0 && prevalence[c] <= 1.0))
                throw ConfigError("phantom spec: prevalence." + std::string(kClassNames[c]) + " must lie in [0,1]");
        if (!(small_lesion_min > 0.0 && small_lesion_min <= small_lesion_max && large_lesion_min <= large_lesion_max))
            throw ConfigError("phantom spec: lesion ranges must be positive and ordered");
        if (!(small_lesion_max < large_lesion_min))
            throw ConfigError("phantom spec: small lesion upper bound must be below the large lesion lower bound");
        for (double p : {misalignment_prob, object_prob})
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("phantom spec: probabilities must lie in [0,1]");
        if (!(noise >= 0.0)) throw ConfigError("phantom spec: noise must be non-negative");
        if (patients < 1 || images_per_patient < 1) throw ConfigError("phantom spec: patient and image counts must be positive");
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> kv;
        auto num = [](double v) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        };
        kv["extent"] = std::to_string(extent);
        for (std::size_t c = 0; c < kNumClasses; ++c) kv["prevalence." + std::string(kClassNames[c])] = num(prevalence[c]);
        kv["small_lesion_min"] = num(small_lesion_min);
        kv["small_lesion_max"] = num(small_lesion_max);
        kv["large_lesion_min"] = num(large_lesion_min);
        kv["large_lesion_max"] = num(large_lesion_max);
        kv["misalignment_prob"] = num(misalignment_prob);
        kv["object_prob"] = num(object_prob);
        kv["noise"] = num(noise);
        kv["patients"] = std::to_string(patients);
        kv["images_per_patient"] = std::to_string(images_per_patient);
        return kv;
    }

    /// Applies key/value overrides; unknown keys are an error.
    void apply(const std::map<std::string, std::string>& kv) {
        for (const auto& [key, value] : kv) {
            auto real = [&] {
                try {
                    std::size_t used = 0;
                    const double v = std::stod(value, &used);
                    if (used != value.size()) throw std::invalid_argument(value);
                    return v;
                } catch (const std::exception&) {
                    throw ConfigError("phantom spec: '" + key + "' expects a number, got '" + value + "'");
                }
            };
            auto integer = [&] {
                const double v = real();
                if (v != std::floor(v)) throw ConfigError("phantom spec: '" + key + "' expects an integer");
                return static_cast<int>(v);
            };
            if (key == "extent") {
                extent = integer();
            } else if (key.rfind("prevalence.", 0) == 0) {
                const auto idx = class_index(key.substr(11));
                if (!idx) throw ConfigError("phantom spec: unknown class in '" + key + "'");
                prevalence[*idx] = real();
            } else if (key == "small_lesion_min") {
                small_lesion_min = real();
            } else if (key == "small_lesion_max") {
                small_lesion_max = real();
            } else if (key == "large_lesion_min") {
                large_lesion_min = real();
            } else if (key == "large_lesion_max") {
                large_lesion_max = real();
            } else if (key == "misalignment_prob") {
                misalignment_prob = real();
            } else if (key == "object_prob") {
                object_prob = real();
            } else if (key == "noise") {
                noise = real();
            } else if (key == "patients") {
                patients = integer();
            } else if (key == "images_per_patient") {
                images_per_patient = integer();
            } else {
                throw ConfigError("phantom spec: unknown key '" + key + "'");
            }
        }
        validate();
    }

    bool operator==(const PhantomSpec&) const = default;
};

/// key = value lines; '#' starts a comment.
inline PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open phantom spec " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    PhantomSpec spec;
    spec.apply(kv);
    return spec;
}

inline void write_phantom_spec(const std::filesystem::path& path, const PhantomSpec& spec) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& [k, v] : spec.to_map()) out << k << " = " << v << "\n";
}

struct LesionBox {
    std::size_t cls = 0;
    BoundingBox box;
    bool operator==(const LesionBox&) const = default;
};

struct PhantomRecord {
    std::string image_id;
    std::string patient_id;
    Image image;
    BinaryMask lung_mask;
    LabelVector labels{};
    std::vector<LesionBox> lesions;
    bool misaligned = false;
    bool has_object = false;
};

namespace phantom_detail {

constexpr double kAir = 0.10;
constexpr double kEmphysemaAir = 0.30;
constexpr double kBody = 0.55;
constexpr double kLung = 0.25;
constexpr double kHeart = 0.68;
constexpr double kObject = 0.95;

struct Ellipse {
    double cx = 0, cy = 0, ax = 1, ay = 1;
    double c = 1, s = 0;  // cosine and sine of the orientation

    Ellipse() = default;
    Ellipse(double cx_, double cy_, double ax_, double ay_, double angle)
        : cx(cx_), cy(cy_), ax(ax_), ay(ay_), c(std::cos(angle)), s(std::sin(angle)) {}

    /// Normalized radius: < 1 inside.
    double rho(double u, double v) const {
        const double du = u - cx, dv = v - cy;
        const double p = (c * du + s * dv) / ax, q = (-s * du + c * dv) / ay;
        return std::sqrt(p * p + q * q);
    }
};

enum class Shape { Disc, SoftEllipse, Gaussian, BottomBand, ApexBand, Haze, Line, Rim, OutsideBody };

struct Lesion {
    std::size_t cls = 0;
    Shape shape = Shape::Disc;
    Ellipse e;      // geometry for disc/ellipse/gaussian shapes
    int side = 0;   // lung index for side-specific shapes
    double level = 0;  // band boundary in scene units
    double u1 = 0, v1 = 0, half_width = 0;  // line segment end and half thickness
    double delta = 0;
};

struct Anatomy {
    Ellipse body, heart;
    std::array<Ellipse, 2> lungs;
    bool emphysema = false;
    double air = kAir;
};

/// Smooth inside-weight: 1 well inside, 0 at and beyond the boundary.
inline double edge_weight(double rho, double softness) { return std::clamp((1.0 - rho) / softness, 0.0, 1.0); }

/// Scene point inside the lung fields (which exclude the heart)?
inline int lung_at(const Anatomy& a, double u, double v) {
    if (a.heart.rho(u, v) < 1.0) return -1;
    for (int s = 0; s < 2; ++s)
        if (a.lungs[s].rho(u, v) < 1.0) return s;
    return -1;
}

/// Lesion weight at a scene point (0 = not part of the lesion).
inline double lesion_weight(const Lesion& l, const Anatomy& a, double u, double v, int lung) {
    if (kLungConfined[l.cls] && lung < 0) return 0.0;
    switch (l.shape) {
        case Shape::Disc:
            return l.e.rho(u, v) < 1.0 ? 1.0 : 0.0;
        case Shape::SoftEllipse:
            return edge_weight(l.e.rho(u, v), 0.35);
        case Shape::Gaussian: {
            const double r = l.e.rho(u, v);
            return r < 1.0 ? std::exp(-2.5 * r * r) : 0.0;
        }
        case Shape::BottomBand:
            return lung == l.side && v > l.level ? 1.0 : 0.0;
        case Shape::ApexBand:
            return lung == l.side && v < l.level ? 1.0 : 0.0;
        case Shape::Haze: {
            const auto& e = a.lungs[static_cast<std::size_t>(lung)];
            return 0.4 + 0.6 * std::clamp((v - (e.cy - e.ay)) / (2 * e.ay), 0.0, 1.0);
        }
        case Shape::Line: {
            const double du = l.u1 - l.e.cx, dv = l.v1 - l.e.cy;
            const double t = std::clamp(((u - l.e.cx) * du + (v - l.e.cy) * dv) / (du * du + dv * dv), 0.0, 1.0);
            return std::hypot(u - (l.e.cx + t * du), v - (l.e.cy + t * dv)) < l.half_width ? 1.0 : 0.0;
        }
        case Shape::Rim: {
            if (lung != l.side) return 0.0;
            const auto& e = a.lungs[static_cast<std::size_t>(l.side)];
            const bool lateral = l.side == 0 ? u < e.cx : u > e.cx;
            return lateral && e.rho(u, v) > l.level ? 1.0 : 0.0;
        }
        case Shape::OutsideBody:
            return a.body.rho(u, v) >= 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

/// Rejection-samples a scene point well inside a lung field.
inline std::pair<double, double> point_in_lung(const Anatomy& a, int side, double inset, Rng& rng) {
    const auto& e = a.lungs[static_cast<std::size_t>(side)];
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double u = rng.uniform(e.cx - e.ax, e.cx + e.ax), v = rng.uniform(e.cy - e.ay, e.cy + e.ay);
        if (e.rho(u, v) < 1.0 - inset && a.heart.rho(u, v) > 1.0 + inset) return {u, v};
    }
    return {e.cx, e.cy};
}

inline Anatomy make_anatomy(Rng& patient) {
    Anatomy a;
    a.body = {0.5, 0.52, 0.44 + 0.02 * patient.uniform(-1, 1), 0.47, 0.0};
    const double lung_ax = 0.13 + 0.01 * patient.uniform(-1, 1);
    const double lung_ay = 0.30 + 0.02 * patient.uniform(-1, 1);
    for (int s = 0; s < 2; ++s) {
        const double sign = s == 0 ? -1.0 : 1.0;
        a.lungs[static_cast<std::size_t>(s)] = {0.5 + sign * (0.19 + 0.008 * patient.uniform(-1, 1)),
                                                0.47 + 0.01 * patient.uniform(-1, 1), lung_ax, lung_ay,
                                                sign * 0.05 * patient.uniform(0, 1)};
    }
    a.heart = {0.52, 0.66, 0.085, 0.11, 0.0};
    return a;
}

inline Lesion make_lesion(std::size_t cls, Anatomy& a, const PhantomSpec& spec, Rng& rng) {
    const double px = 1.0 / spec.extent;
    const double small_d = rng.uniform(spec.small_lesion_min, spec.small_lesion_max) * px;
    const double d = rng.uniform(spec.large_lesion_min, spec.large_lesion_max) * px;
    const int side = static_cast<int>(rng.integer(0, 1));
    const auto& lung = a.lungs[static_cast<std::size_t>(side)];
    Lesion l;
    l.cls = cls;
    switch (static_cast<Pathology>(cls)) {
        case Pathology::Atelectasis: {
            auto [u, v] = point_in_lung(a, side, 0.2, rng);
            l.shape = Shape::SoftEllipse;
            l.e = {u, v, d / 2, d / 6, rng.uniform(-0.3, 0.3)};
            l.delta = 0.30;
            break;
        }
        case Pathology::Effusion:
            l.shape = Shape::BottomBand;
            l.side = side;
            l.level = lung.cy + lung.ay - d / 2;
            l.delta = 0.35;
            break;
        case Pathology::Infiltration: {
            auto [u, v] = point_in_lung(a, side, 0.3, rng);
            l.shape = Shape::Gaussian;
            l.e = {u, v, d / 5, d / 5, 0.0};
            l.delta = 0.22;
            break;
        }
        case Pathology::Mass: {
            auto [u, v] = point_in_lung(a, side, 0.3, rng);
            l.shape = Shape::SoftEllipse;
            l.e = {u, v, d / 2.5, d / 2.5, 0.0};
            l.delta = 0.35;
            break;
        }
        case Pathology::Nodule: {
            auto [u, v] = point_in_lung(a, side, 0.1, rng);
            l.shape = Shape::Disc;
            l.e = {u, v, small_d / 2, small_d / 2, 0.0};
            l.delta = 0.55;
            break;
        }
        case Pathology::Pneumonia: {
            auto [u, v] = point_in_lung(a, side, 0.2, rng);
            l.shape = Shape::Gaussian;
            l.e = {u, v, d / 2, d / 2, 0.0};
            l.delta = 0.35;
            break;
        }
        case Pathology::Pneumothorax:
            l.shape = Shape::ApexBand;
            l.side = side;
            l.level = lung.cy - lung.ay + d / 1.5;
            l.delta = -0.15;
            break;
        case Pathology::Consolidation: {
            auto [u, v] = point_in_lung(a, side, 0.25, rng);
            l.shape = Shape::Disc;
            l.e = {u, v, d / 2, d / 3, rng.uniform(-0.5, 0.5)};
            l.delta = 0.40;
            break;
        }
        case Pathology::Edema:
            l.shape = Shape::Haze;
            l.delta = 0.15;
            break;
        case Pathology::Fibrosis: {
            auto [u, v] = point_in_lung(a, side, 0.2, rng);
            const double theta = rng.uniform(0, std::numbers::pi);
            l.shape = Shape::Line;
            l.e.cx = u;
            l.e.cy = v;
            l.u1 = u + d * std::cos(theta);
            l.v1 = v + d * std::sin(theta);
            l.half_width = 1.0 * px;
            l.delta = 0.35;
            break;
        }
        case Pathology::PleuralThickening:
            l.shape = Shape::Rim;
            l.side = side;
            l.level = 1.0 - std::min(0.5, d / 4 / lung.ax);
            l.delta = 0.30;
            break;
        case Pathology::Hernia:
            l.shape = Shape::Disc;
            l.e = {0.5 + rng.uniform(-0.02, 0.02), 0.88, d / 2.5, d / 3.5, 0.0};
            l.delta = 0.25;
            break;
        case Pathology::Cardiomegaly:
            a.heart.ax *= rng.uniform(1.35, 1.6);
            a.heart.ay *= rng.uniform(1.15, 1.3);
            a.heart.cy += 0.02;
            break;
        case Pathology::Emphysema:
            a.emphysema = true;
            a.air = kEmphysemaAir;
            l.shape = Shape::OutsideBody;
            break;
    }
    return l;
}

inline int lesion_count(std::size_t cls, Rng& rng) {
    switch (static_cast<Pathology>(cls)) {
        case Pathology::Nodule:
            return static_cast<int>(rng.integer(1, 3));
        case Pathology::Infiltration:
            return static_cast<int>(rng.integer(3, 5));
        case Pathology::Fibrosis:
            return 3;
        default:
            return 1;
    }
}

}  // namespace phantom_detail

/// One phantom, fully determined by (spec, seed, index).
inline PhantomRecord generate_phantom(const PhantomSpec& spec, std::uint64_t seed, std::size_t index) {
    using namespace phantom_detail;
    const std::size_t patient = index / static_cast<std::size_t>(spec.images_per_patient);
    Rng patient_rng(mix_seed(seed, 0x5A7E17ULL + patient));
    Rng rng(mix_seed(seed, index));
    Anatomy a = make_anatomy(patient_rng);

    PhantomRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof buf, "img%05zu", index);
    rec.image_id = buf;
    std::snprintf(buf, sizeof buf, "pat%04zu", patient);
    rec.patient_id = buf;

    // Cardiomegaly first: heart size changes the lung fields every lesion is confined to.
    std::vector<Lesion> lesions;
    std::array<bool, kNumClasses> attempted{};
    for (std::size_t c = 0; c < kNumClasses; ++c) attempted[c] = rng.bernoulli(spec.prevalence[c]);
    const std::size_t cardio = index_of(Pathology::Cardiomegaly);
    if (attempted[cardio]) make_lesion(cardio, a, spec, rng);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!attempted[c] || c == cardio) continue;
        const int n = lesion_count(c, rng);
        for (int i = 0; i < n; ++i) lesions.push_back(make_lesion(c, a, spec, rng));
    }

    // Scene-to-pixel misalignment: rotation about the center plus a shift.
    double angle = 0.0, shift_u = 0.0, shift_v = 0.0;
    if (rng.bernoulli(spec.misalignment_prob)) {
        rec.misaligned = true;
        angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
        shift_u = rng.uniform(-0.08, 0.08);
        shift_v = rng.uniform(-0.08, 0.08);
    }
    // Irrelevant bright object in an upper corner, outside body and lungs.
    Ellipse object;
    if (rng.bernoulli(spec.object_prob)) {
        rec.has_object = true;
        const bool left = rng.bernoulli(0.5);
        object = {left ? rng.uniform(0.04, 0.10) : rng.uniform(0.90, 0.96), rng.uniform(0.04, 0.10), rng.uniform(0.02, 0.035),
                  rng.uniform(0.015, 0.03), rng.uniform(0, std::numbers::pi)};
    }
    Rng noise(rng.next());

    const int S = spec.extent;
    rec.image = Image(S, S);
    rec.lung_mask = BinaryMask(S, S);
    std::vector<BoundingBox> boxes(lesions.size());
    std::vector<bool> drawn(lesions.size(), false);
    BoundingBox heart_box{S, S, -1, -1};
    bool heart_drawn = false;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double pu = (x + 0.5) / S - 0.5 - shift_u, pv = (y + 0.5) / S - 0.5 - shift_v;
            const double u = 0.5 + ca * pu + sa * pv, v = 0.5 - sa * pu + ca * pv;

            const double wb = edge_weight(a.body.rho(u, v), 0.03);
            double value = a.air + (kBody - a.air) * wb;
            double wl = 0.0;
            for (const auto& e : a.lungs) wl = std::max(wl, edge_weight(e.rho(u, v), 0.08));
            const double rh = a.heart.rho(u, v);
            const double wh = edge_weight(rh, 0.06);
            value += (kLung - kBody) * wl * (1.0 - wh);
            value += (kHeart - value) * wh * (rh < 1.0 ? 1.0 : 0.0);
            if (rh < 1.0) {
                heart_drawn = true;
                heart_box = box_union(heart_box, {x, y, x, y});
            }
            const int lung = lung_at(a, u, v);
            if (lung >= 0) rec.lung_mask.set(x, y);
            for (std::size_t i = 0; i < lesions.size(); ++i) {
                const double w = lesion_weight(lesions[i], a, u, v, lung);
                if (w <= 0.0) continue;
                value += lesions[i].delta * w;
                boxes[i] = drawn[i] ? box_union(boxes[i], {x, y, x, y}) : BoundingBox{x, y, x, y};
                drawn[i] = true;
            }
            if (rec.has_object && object.rho(u, v) < 1.0) value = kObject;
            if (spec.noise > 0.0) value += spec.noise * noise.normal();
            rec.image.at(x, y) = std::clamp(value, 0.0, 1.0);
        }

    if (attempted[cardio] && heart_drawn) {
        rec.labels[cardio] = 1.0;
        rec.lesions.push_back({cardio, heart_box});
    }
    for (std::size_t i = 0; i < lesions.size(); ++i) {
        if (!drawn[i]) continue;
        rec.labels[lesions[i].cls] = 1.0;
        rec.lesions.push_back({lesions[i].cls, boxes[i]});
    }
    std::stable_sort(rec.lesions.begin(), rec.lesions.end(), [](const LesionBox& p, const LesionBox& q) { return p.cls < q.cls; });
    return rec;
}

/// Whole corpus in index order; records are generated in parallel.
inline std::vector<PhantomRecord> generate_corpus(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<PhantomRecord> out(static_cast<std::size_t>(spec.count()));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = generate_phantom(spec, seed, i); });
    return out;
}

}  // namespace sdfn
