#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "sdfn/densenet.hpp"
#include "sdfn/error.hpp"
#include "sdfn/phantom.hpp"
#include "sdfn/train.hpp"
#include "sdfn/unet.hpp"

namespace sdfn {

/// Everything one pipeline run needs. Directories are resolved against the
/// directory holding the configuration file.
struct PipelineConfig {
    std::filesystem::path corpus_dir = "corpus";
    std::filesystem::path weights_dir = "weights";
    std::filesystem::path reports_dir = "reports";
    std::uint64_t seed = 7;
    PhantomSpec phantom;
    double test_fraction = 0.2;
    int folds = 5;
    UNetConfig segmenter;
    DenseNetConfig global;
    DenseNetConfig local;
    TrainConfig train_segmenter = TrainConfig::segmentation();
    TrainConfig train_extractor = TrainConfig::classification();
    TrainConfig train_fusion = TrainConfig::classification();

    void validate() const {
        phantom.validate();
        segmenter.validate();
        global.validate();
        local.validate();
        train_segmenter.validate();
        train_extractor.validate();
        train_fusion.validate();
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("config: split.test_fraction must lie in (0,1)");
        if (folds < 2) throw ConfigError("config: split.folds must be at least 2");
    }
};

namespace config_detail {

using nlohmann::json;

/// Reads keys from one JSON object and rejects any key nobody asked for.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: '" + path(key) + "' has the wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    Section child(const char* key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, path(key));
    }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("config: unknown key '" + path(key) + "'");
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline void read_unet(Section s, UNetConfig& c) {
    s.get("input_size", c.input_size);
    s.get("depth", c.depth);
    s.get("base_channels", c.base_channels);
    s.get("batch_norm", c.batch_norm);
    s.finish();
}

inline void read_densenet(Section s, DenseNetConfig& c) {
    s.get("input_size", c.input_size);
    s.get("stem_channels", c.stem_channels);
    s.get("stem_kernel", c.stem_kernel);
    s.get("stem_stride", c.stem_stride);
    s.get("stem_pool", c.stem_pool);
    s.get("growth_rate", c.growth_rate);
    s.get("blocks", c.blocks);
    s.get("compression", c.compression);
    s.get("batch_norm", c.batch_norm);
    c.feature_dim = c.derived_feature_dim();
    s.get("feature_dim", c.feature_dim);
    s.finish();
}

inline void read_train(Section s, TrainConfig& c) {
    s.get("learning_rate", c.learning_rate);
    s.get("decay", c.decay);
    s.get("batch_size", c.batch_size);
    s.get("max_epochs", c.max_epochs);
    s.get("plateau_patience", c.plateau_patience);
    s.get("plateau_factor", c.plateau_factor);
    s.get("validation_fraction", c.validation_fraction);
    s.get("augment", c.augment);
    s.get("max_rotation_deg", c.ranges.max_rotation_deg);
    s.get("max_shift", c.ranges.max_shift);
    s.get("min_zoom", c.ranges.min_zoom);
    s.get("max_zoom", c.ranges.max_zoom);
    s.get("flip_prob", c.ranges.flip_prob);
    s.finish();
}

/// Phantom keys use the spec-file names; numbers or strings are accepted.
inline void read_phantom(Section s, const json& j, PhantomSpec& spec) {
    std::map<std::string, std::string> kv;
    for (const auto& [key, value] : j.items()) {
        if (value.is_number_integer())
            kv[key] = std::to_string(value.get<long long>());
        else if (value.is_number())
            kv[key] = nlohmann::json(value).dump();
        else if (value.is_string())
            kv[key] = value.get<std::string>();
        else
            throw ConfigError("config: '" + s.path(key) + "' must be a number");
    }
    spec.apply(kv);
}

}  // namespace config_detail

inline PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using config_detail::Section;
    PipelineConfig c;
    Section root(j, "");
    root.get("seed", c.seed);
    {
        auto paths = root.child("paths");
        std::string corpus = c.corpus_dir.string(), weights = c.weights_dir.string(), reports = c.reports_dir.string();
        paths.get("corpus", corpus);
        paths.get("weights", weights);
        paths.get("reports", reports);
        paths.finish();
        c.corpus_dir = base_dir / corpus;
        c.weights_dir = base_dir / weights;
        c.reports_dir = base_dir / reports;
    }
    if (root.has("phantom")) {
        auto section = root.child("phantom");
        config_detail::read_phantom(section, root.raw("phantom"), c.phantom);
    }
    {
        auto split = root.child("split");
        split.get("test_fraction", c.test_fraction);
        split.get("folds", c.folds);
        split.finish();
    }
    config_detail::read_unet(root.child("segmenter"), c.segmenter);
    config_detail::read_densenet(root.child("global"), c.global);
    config_detail::read_densenet(root.child("local"), c.local);
    {
        auto train = root.child("train");
        config_detail::read_train(train.child("segmenter"), c.train_segmenter);
        config_detail::read_train(train.child("extractor"), c.train_extractor);
        config_detail::read_train(train.child("fusion"), c.train_fusion);
        train.finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_pipeline_config(j, std::filesystem::absolute(path).parent_path());
}

}  // namespace sdfn
