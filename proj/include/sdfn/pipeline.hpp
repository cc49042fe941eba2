#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdfn/checkpoint.hpp"
#include "sdfn/config.hpp"
#include "sdfn/evaluation.hpp"
#include "sdfn/fusion.hpp"
#include "sdfn/lrg.hpp"
#include "sdfn/manifest.hpp"
#include "sdfn/metrics.hpp"
#include "sdfn/phantom.hpp"
#include "sdfn/train.hpp"
#include "sdfn/unet.hpp"

namespace sdfn {

// ---------------------------------------------------------------------------
// Seeds derived from the global seed, one per random consumer.

enum class SeedUse : std::uint64_t {
    TestSplit = 1,
    Folds,
    SegmenterInit,
    SegmenterTrain,
    GlobalInit,
    GlobalTrain,
    LocalInit,
    LocalTrain,
    FusionInit,
    FusionTrain,
};

inline std::uint64_t derived_seed(std::uint64_t seed, SeedUse use) { return mix_seed(seed, 1000 + static_cast<std::uint64_t>(use)); }

// ---------------------------------------------------------------------------
// In-memory building blocks shared by the CLI stages and the acceptance runs

inline std::vector<Image> resized(const std::vector<Image>& images, int size) {
    std::vector<Image> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) { out[i] = resize_bilinear(images[i], size, size); });
    return out;
}

/// Lung masks at each image's own extent: the segmenter runs at its input
/// size and its probability map is resized back before thresholding at 0.5.
inline std::vector<BinaryMask> segment_lungs(MiniUNet& net, const std::vector<Image>& images) {
    const int s = net.config().input_size;
    const auto probs = predict_masks(net, resized(images, s));
    std::vector<BinaryMask> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        out[i] = threshold(resize_bilinear(probs[i], images[i].width, images[i].height), 0.5);
    });
    return out;
}

inline std::vector<LungRegion> lung_regions(const std::vector<Image>& images, const std::vector<BinaryMask>& masks,
                                            const Margins& reference = kReferenceMargins) {
    if (images.size() != masks.size()) throw ShapeError("lung_regions: image and mask counts differ");
    std::vector<LungRegion> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) { out[i] = generate_lung_region(images[i], masks[i], reference); });
    return out;
}

/// Fused-model probabilities for images already at the extractor input sizes.
inline std::vector<LabelVector> predict_sdfn(SdfnModel& model, const std::vector<Image>& whole, const std::vector<Image>& crops,
                                             std::size_t batch = 32) {
    if (whole.size() != crops.size()) throw ShapeError("predict_sdfn: whole-image and crop counts differ");
    NoGradGuard no_grad;
    std::vector<std::size_t> all(whole.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<LabelVector> out;
    for (const auto& b : detail::batches(all, batch)) {
        const auto probs = sdfn_forward(model, image_batch(whole, b), image_batch(crops, b)).probs;
        for (std::size_t i = 0; i < b.size(); ++i) {
            LabelVector v{};
            std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(i * kNumClasses), kNumClasses, v.begin());
            out.push_back(v);
        }
    }
    return out;
}

inline double mean_dice(const std::vector<BinaryMask>& predicted, const std::vector<BinaryMask>& truth) {
    if (predicted.size() != truth.size() || predicted.empty()) throw ShapeError("mean_dice: mismatched or empty mask lists");
    double s = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) s += dice(predicted[i], truth[i]);
    return s / static_cast<double>(predicted.size());
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline void write_history_csv(const std::filesystem::path& path, const TrainResult& r) {
    auto out = detail::open_report(path);
    out << "epoch,train_loss,val_loss,val_mean_auc,learning_rate,selected\n";
    for (const auto& e : r.history)
        out << e.epoch << ',' << detail::general(e.train_loss) << ',' << detail::general(e.val_loss) << ','
            << (std::isnan(e.val_mean_auc) ? std::string("") : detail::general(e.val_mean_auc)) << ','
            << detail::general(e.learning_rate) << ',' << (e.epoch == r.best_epoch ? 1 : 0) << "\n";
}

// ---------------------------------------------------------------------------
// On-disk layout

class Workspace {
public:
    explicit Workspace(const PipelineConfig& cfg) : cfg_(cfg) {}

    std::filesystem::path manifest() const { return cfg_.corpus_dir / "manifest.csv"; }
    std::filesystem::path split() const { return cfg_.corpus_dir / "split.csv"; }
    std::filesystem::path lrg_dir() const { return cfg_.corpus_dir / "lrg"; }
    std::filesystem::path boxes() const { return lrg_dir() / "boxes.csv"; }
    std::filesystem::path crop(const std::string& id) const { return lrg_dir() / "crops" / (id + ".pgm"); }
    std::filesystem::path predicted_mask(const std::string& id) const { return lrg_dir() / "masks" / (id + ".pgm"); }
    std::filesystem::path image(const ManifestRow& r) const { return cfg_.corpus_dir / r.image_path; }
    std::filesystem::path mask(const ManifestRow& r) const { return cfg_.corpus_dir / r.mask_path; }

    std::filesystem::path segmenter() const { return cfg_.weights_dir / "segmenter.sdfw"; }
    std::filesystem::path extractor(const std::string& view) const { return cfg_.weights_dir / (view + ".sdfw"); }
    std::filesystem::path fusion() const { return cfg_.weights_dir / "fusion.sdfw"; }

    std::filesystem::path reports() const { return cfg_.reports_dir; }
    std::filesystem::path cam_dir() const { return cfg_.reports_dir / "cam"; }

private:
    const PipelineConfig& cfg_;
};

/// Manifest rows plus the train/test assignment written by gen-data.
struct CorpusIndex {
    std::vector<ManifestRow> rows;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;

    std::vector<std::string> groups(const std::vector<std::size_t>& idx) const {
        std::vector<std::string> g;
        for (auto i : idx) g.push_back(rows[i].patient_id);
        return g;
    }
    std::vector<LabelVector> labels(const std::vector<std::size_t>& idx) const {
        std::vector<LabelVector> l;
        for (auto i : idx) l.push_back(rows[i].labels);
        return l;
    }
    std::vector<std::string> ids(const std::vector<std::size_t>& idx) const {
        std::vector<std::string> out;
        for (auto i : idx) out.push_back(rows[i].image_id);
        return out;
    }
};

inline void write_split(const std::filesystem::path& path, const std::vector<ManifestRow>& rows, const std::vector<std::size_t>& test) {
    std::vector<bool> is_test(rows.size(), false);
    for (auto i : test) is_test[i] = true;
    auto out = detail::open_report(path);
    out << "image_id,split\n";
    for (std::size_t i = 0; i < rows.size(); ++i) out << rows[i].image_id << ',' << (is_test[i] ? "test" : "train") << "\n";
}

inline CorpusIndex load_corpus_index(const Workspace& ws) {
    CorpusIndex idx;
    idx.rows = read_manifest(ws.manifest());
    std::ifstream in(ws.split());
    if (!in) throw PrerequisiteError("gen-data", "cannot open " + ws.split().string());
    std::string line;
    std::getline(in, line);
    if (line != "image_id,split") throw ParseError(ws.split().string() + ": bad header", 0);
    std::size_t i = 0, offset = line.size() + 1;
    while (std::getline(in, line)) {
        const auto f = split(line, ',');
        if (i >= idx.rows.size() || f.size() != 2 || f[0] != idx.rows[i].image_id || (f[1] != "train" && f[1] != "test"))
            throw ParseError(ws.split().string() + ": row does not match the manifest", offset);
        (f[1] == "test" ? idx.test : idx.train).push_back(i);
        offset += line.size() + 1;
        ++i;
    }
    if (i != idx.rows.size()) throw ParseError(ws.split().string() + ": fewer rows than the manifest", offset);
    return idx;
}

/// Reads originals and resizes them to `size` without keeping the full-resolution copies.
inline std::vector<Image> load_images_resized(const Workspace& ws, const CorpusIndex& c, const std::vector<std::size_t>& idx, int size) {
    std::vector<Image> out(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) { out[k] = resize_bilinear(read_pgm(ws.image(c.rows[idx[k]])), size, size); });
    return out;
}

inline std::vector<Image> load_crops_resized(const Workspace& ws, const CorpusIndex& c, const std::vector<std::size_t>& idx, int size) {
    std::vector<Image> out(idx.size());
    for (auto i : idx)
        if (!std::filesystem::exists(ws.crop(c.rows[i].image_id)))
            throw PrerequisiteError("run-lrg", "no lung-region crop for " + c.rows[i].image_id);
    parallel_for(idx.size(), [&](std::size_t k) { out[k] = resize_bilinear(read_pgm(ws.crop(c.rows[idx[k]].image_id)), size, size); });
    return out;
}

struct BoxRecord {
    BoundingBox box;
    LrgStatus status;
};

inline void write_boxes(const std::filesystem::path& path, const std::vector<std::string>& ids, const std::vector<BoxRecord>& boxes) {
    auto out = detail::open_report(path);
    out << "image_id,x0,y0,x1,y1,status\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& b = boxes[i].box;
        out << ids[i] << ',' << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << ',' << boxes[i].status.str() << "\n";
    }
}

inline std::map<std::string, BoxRecord> read_boxes(const Workspace& ws) {
    std::ifstream in(ws.boxes());
    if (!in) throw PrerequisiteError("run-lrg", "cannot open " + ws.boxes().string());
    std::map<std::string, BoxRecord> out;
    std::string line;
    std::getline(in, line);
    std::size_t offset = line.size() + 1;
    if (line != "image_id,x0,y0,x1,y1,status") throw ParseError(ws.boxes().string() + ": bad header", 0);
    while (std::getline(in, line)) {
        const auto f = split(line, ',');
        if (f.size() != 6) throw ParseError(ws.boxes().string() + ": expected 6 fields", offset);
        try {
            out[f[0]] = {{std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4])}, LrgStatus::parse(f[5])};
        } catch (const std::invalid_argument&) {
            throw ParseError(ws.boxes().string() + ": malformed coordinates", offset);
        }
        offset += line.size() + 1;
    }
    return out;
}

inline void require_file(const std::filesystem::path& path, const std::string& stage) {
    if (!std::filesystem::exists(path)) throw PrerequisiteError(stage, path.string() + " not found");
}

inline MiniUNet load_segmenter(const PipelineConfig& cfg, const Workspace& ws) {
    require_file(ws.segmenter(), "train-seg");
    MiniUNet net(cfg.segmenter, 0);
    load_checkpoint(ws.segmenter(), "segmenter", cfg.segmenter.echo(), net.parameters());
    return net;
}

inline const DenseNetConfig& view_config(const PipelineConfig& cfg, const std::string& view) {
    if (view == "global") return cfg.global;
    if (view == "local") return cfg.local;
    throw ConfigError("unknown view '" + view + "' (expected global or local)");
}

inline MiniDenseNet load_extractor(const PipelineConfig& cfg, const Workspace& ws, const std::string& view) {
    require_file(ws.extractor(view), "train-extractor --view=" + view);
    MiniDenseNet net(view_config(cfg, view), 0);
    load_checkpoint(ws.extractor(view), "extractor-" + view, net.config().echo(), net.parameters());
    return net;
}

/// Both extractors plus the fusion head, checked against the checksums the
/// fusion stage recorded for the extractors it was trained on.
inline SdfnModel load_sdfn(const PipelineConfig& cfg, const Workspace& ws) {
    require_file(ws.fusion(), "train-fusion");
    MiniDenseNet global = load_extractor(cfg, ws, "global");
    SdfnModel model(std::move(global), load_extractor(cfg, ws, "local"), 0);
    const Meta meta = load_checkpoint(ws.fusion(), "fusion", model.echo(), model.fusion_parameters());
    const auto g = hex64(checksum(model.global.parameters())), l = hex64(checksum(model.local.parameters()));
    auto recorded = [&](const char* key) {
        const auto it = meta.find(key);
        return it == meta.end() ? std::string() : it->second;
    };
    if (recorded("global_checksum_after") != g || recorded("local_checksum_after") != l)
        throw ConfigError("fusion head was trained on different extractor weights; re-run train-fusion");
    return model;
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_gen_data(const PipelineConfig& cfg, std::ostream& log) {
    const Workspace ws(cfg);
    log << "gen-data: " << cfg.phantom.count() << " phantoms at " << cfg.phantom.extent << "x" << cfg.phantom.extent << "\n";
    const auto corpus = generate_corpus(cfg.phantom, cfg.seed);
    std::filesystem::remove_all(ws.lrg_dir());
    const auto rows = write_corpus(cfg.corpus_dir, cfg.phantom, corpus);
    std::vector<std::string> groups;
    for (const auto& r : rows) groups.push_back(r.patient_id);
    const auto [train, test] = grouped_holdout(groups, cfg.test_fraction, derived_seed(cfg.seed, SeedUse::TestSplit));
    write_split(ws.split(), rows, test);
    log << "gen-data: " << train.size() << " train / " << test.size() << " test images written to " << cfg.corpus_dir.string() << "\n";
}

inline void stage_train_seg(const PipelineConfig& cfg, std::ostream& log) {
    const Workspace ws(cfg);
    const auto c = load_corpus_index(ws);
    const int s = cfg.segmenter.input_size;
    auto masks_at = [&](const std::vector<std::size_t>& idx) {
        std::vector<BinaryMask> m(idx.size());
        parallel_for(idx.size(), [&](std::size_t k) { m[k] = resize_mask(read_mask_pgm(ws.mask(c.rows[idx[k]])), s, s); });
        return m;
    };
    SegmentationSet data{load_images_resized(ws, c, c.train, s), masks_at(c.train), c.groups(c.train)};
    MiniUNet net(cfg.segmenter, derived_seed(cfg.seed, SeedUse::SegmenterInit));
    TrainConfig tc = cfg.train_segmenter;
    tc.seed = derived_seed(cfg.seed, SeedUse::SegmenterTrain);
    const auto result = train_segmenter(net, data, tc, [&](const EpochRecord& e) {
        log << "train-seg: epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << "\n";
    });
    save_checkpoint(ws.segmenter(), "segmenter", cfg.segmenter.echo(), net.parameters(),
                    {{"best_epoch", std::to_string(result.best_epoch)}, {"selector", result.selector}, {"train", tc.echo()}});
    write_history_csv(ws.reports() / "history_segmenter.csv", result);

    const auto test_images = load_images_resized(ws, c, c.test, s);
    const auto truth = masks_at(c.test);
    const auto probs = predict_masks(net, test_images);
    auto out = detail::open_report(ws.reports() / "segmentation.csv");
    out << "image_id,dsc,iou\n";
    double dsc_sum = 0.0, iou_sum = 0.0;
    for (std::size_t k = 0; k < c.test.size(); ++k) {
        const auto pred = threshold(probs[k], 0.5);
        const double d = dice(pred, truth[k]), j = iou(pred, truth[k]);
        dsc_sum += d;
        iou_sum += j;
        out << c.rows[c.test[k]].image_id << ',' << detail::fixed(d) << ',' << detail::fixed(j) << "\n";
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, c.test.size()));
    out << "mean," << detail::fixed(dsc_sum / n) << ',' << detail::fixed(iou_sum / n) << "\n";
    log << "train-seg: best epoch " << result.best_epoch << ", held-out mean DSC " << detail::fixed(dsc_sum / n, 4) << " IoU "
        << detail::fixed(iou_sum / n, 4) << "\n";
}

inline void stage_run_lrg(const PipelineConfig& cfg, std::ostream& log, const Margins& reference = kReferenceMargins) {
    const Workspace ws(cfg);
    const auto c = load_corpus_index(ws);
    MiniUNet net = load_segmenter(cfg, ws);
    std::filesystem::create_directories(ws.lrg_dir() / "crops");
    std::filesystem::create_directories(ws.lrg_dir() / "masks");
    std::vector<BoxRecord> boxes(c.rows.size());
    std::map<std::string, std::size_t> counts;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < c.rows.size(); start += kChunk) {
        const std::size_t end = std::min(c.rows.size(), start + kChunk);
        std::vector<Image> images(end - start);
        parallel_for(images.size(), [&](std::size_t k) { images[k] = read_pgm(ws.image(c.rows[start + k])); });
        const auto masks = segment_lungs(net, images);
        const auto regions = lung_regions(images, masks, reference);
        parallel_for(images.size(), [&](std::size_t k) {
            const auto& id = c.rows[start + k].image_id;
            write_pgm(ws.predicted_mask(id), masks[k]);
            write_pgm(ws.crop(id), regions[k].crop);
        });
        for (std::size_t k = 0; k < images.size(); ++k) {
            boxes[start + k] = {regions[k].box, regions[k].status};
            ++counts[regions[k].status.str()];
        }
    }
    std::vector<std::string> ids;
    for (const auto& r : c.rows) ids.push_back(r.image_id);
    write_boxes(ws.boxes(), ids, boxes);
    auto out = detail::open_report(ws.reports() / "lrg_status.csv");
    out << "status,count\n";
    for (const auto& [status, n] : counts) out << status << ',' << n << "\n";
    log << "run-lrg: " << c.rows.size() << " lung regions;";
    for (const auto& [status, n] : counts) log << " " << status << "=" << n;
    log << "\n";
}

inline void stage_train_extractor(const PipelineConfig& cfg, const std::string& view, std::ostream& log) {
    const Workspace ws(cfg);
    const DenseNetConfig& dc = view_config(cfg, view);
    const auto c = load_corpus_index(ws);
    ClassificationSet data;
    data.images = view == "global" ? load_images_resized(ws, c, c.train, dc.input_size) : load_crops_resized(ws, c, c.train, dc.input_size);
    data.labels = c.labels(c.train);
    data.groups = c.groups(c.train);
    const bool global = view == "global";
    MiniDenseNet net(dc, derived_seed(cfg.seed, global ? SeedUse::GlobalInit : SeedUse::LocalInit));
    TrainConfig tc = cfg.train_extractor;
    tc.seed = derived_seed(cfg.seed, global ? SeedUse::GlobalTrain : SeedUse::LocalTrain);
    const auto result = train_classifier(net, data, tc, [&](const EpochRecord& e) {
        log << "train-extractor " << view << ": epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss
            << " val_mean_auc " << e.val_mean_auc << "\n";
    });
    save_checkpoint(ws.extractor(view), "extractor-" + view, dc.echo(), net.parameters(),
                    {{"best_epoch", std::to_string(result.best_epoch)}, {"selector", result.selector}, {"train", tc.echo()}});
    write_history_csv(ws.reports() / ("history_" + view + ".csv"), result);
    log << "train-extractor " << view << ": kept epoch " << result.best_epoch << "\n";
}

inline void stage_train_fusion(const PipelineConfig& cfg, std::ostream& log) {
    const Workspace ws(cfg);
    const auto c = load_corpus_index(ws);
    MiniDenseNet global = load_extractor(cfg, ws, "global");
    SdfnModel model(std::move(global), load_extractor(cfg, ws, "local"), derived_seed(cfg.seed, SeedUse::FusionInit));
    FusionSet data{load_images_resized(ws, c, c.train, cfg.global.input_size), load_crops_resized(ws, c, c.train, cfg.local.input_size),
                   c.labels(c.train), c.groups(c.train)};
    TrainConfig tc = cfg.train_fusion;
    tc.seed = derived_seed(cfg.seed, SeedUse::FusionTrain);
    const auto r = train_fusion(model, data, tc, [&](const EpochRecord& e) {
        log << "train-fusion: epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_mean_auc "
            << e.val_mean_auc << "\n";
    });
    save_checkpoint(ws.fusion(), "fusion", model.echo(), model.fusion_parameters(),
                    {{"best_epoch", std::to_string(r.train.best_epoch)},
                     {"selector", r.train.selector},
                     {"train", tc.echo()},
                     {"global_checksum_before", hex64(r.global_checksum_before)},
                     {"global_checksum_after", hex64(r.global_checksum_after)},
                     {"local_checksum_before", hex64(r.local_checksum_before)},
                     {"local_checksum_after", hex64(r.local_checksum_after)}});
    write_history_csv(ws.reports() / "history_fusion.csv", r.train);
    log << "train-fusion: kept epoch " << r.train.best_epoch << "; extractor checksums unchanged (global " << hex64(r.global_checksum_after)
        << ", local " << hex64(r.local_checksum_after) << ")\n";
}

inline constexpr const char* kWholeImageMethod = "whole_image";
inline constexpr const char* kLungRegionMethod = "lung_region";
inline constexpr const char* kFusedMethod = "sdfn";

/// Test-split AUCs of the whole-image extractor, the lung-region extractor
/// and the fused model, all on the same images and the same crops.
inline EvalReport evaluate_models(SdfnModel& model, const std::vector<Image>& whole, const std::vector<Image>& crops,
                                  const std::vector<LabelVector>& labels, const std::vector<std::string>& ids,
                                  const std::vector<std::string>& groups, int folds, std::uint64_t fold_seed) {
    std::vector<MethodPredictions> methods{{kWholeImageMethod, predict_probs(model.global, whole)},
                                           {kLungRegionMethod, predict_probs(model.local, crops)},
                                           {kFusedMethod, predict_sdfn(model, whole, crops)}};
    return evaluate_predictions(methods, labels, ids, groups, folds, fold_seed);
}

inline EvalReport stage_evaluate(const PipelineConfig& cfg, std::ostream& log) {
    const Workspace ws(cfg);
    require_file(ws.fusion(), "train-fusion");
    const auto c = load_corpus_index(ws);
    SdfnModel model = load_sdfn(cfg, ws);
    const auto whole = load_images_resized(ws, c, c.test, cfg.global.input_size);
    const auto crops = load_crops_resized(ws, c, c.test, cfg.local.input_size);
    const auto report = evaluate_models(model, whole, crops, c.labels(c.test), c.ids(c.test), c.groups(c.test), cfg.folds,
                                        derived_seed(cfg.seed, SeedUse::Folds));
    write_eval_report(ws.reports(), report);
    log << "evaluate: " << report.test_images << " test images; mean AUC";
    for (const auto& m : report.methods) log << " " << m.name << "=" << detail::fixed(m.mean, 4);
    log << "\n";
    return report;
}

/// Fused heatmaps for the requested ids and classes. Empty `ids` means the
/// first four test images; empty `classes` means each image's positive
/// labels, or its highest-scoring class when it has none.
inline void stage_cam(const PipelineConfig& cfg, std::vector<std::string> ids, const std::vector<std::string>& classes, std::ostream& log) {
    const Workspace ws(cfg);
    require_file(ws.fusion(), "train-fusion");
    const auto c = load_corpus_index(ws);
    SdfnModel model = load_sdfn(cfg, ws);
    const auto boxes = read_boxes(ws);
    std::vector<std::size_t> requested_classes;
    for (const auto& name : classes) {
        const auto ci = class_index(name);
        if (!ci) throw ConfigError("cam: unknown class '" + name + "'");
        requested_classes.push_back(*ci);
    }
    if (ids.empty())
        for (std::size_t k = 0; k < std::min<std::size_t>(4, c.test.size()); ++k) ids.push_back(c.rows[c.test[k]].image_id);
    std::filesystem::create_directories(ws.cam_dir());
    for (const auto& id : ids) {
        const auto row = std::find_if(c.rows.begin(), c.rows.end(), [&](const ManifestRow& r) { return r.image_id == id; });
        if (row == c.rows.end()) throw ConfigError("cam: unknown image id '" + id + "'");
        const auto box = boxes.find(id);
        if (box == boxes.end()) throw PrerequisiteError("run-lrg", "no box for " + id);
        require_file(ws.crop(id), "run-lrg");
        const Image original = read_pgm(ws.image(*row));
        const Image whole = resize_bilinear(original, cfg.global.input_size, cfg.global.input_size);
        const Image crop_img = resize_bilinear(read_pgm(ws.crop(id)), cfg.local.input_size, cfg.local.input_size);
        const std::vector<std::size_t> one{0};
        NoGradGuard no_grad;
        const auto out = sdfn_forward(model, image_batch({whole}, one), image_batch({crop_img}, one));

        auto sidecar = detail::open_report(ws.cam_dir() / (id + ".csv"));
        sidecar << "class,label,logit,probability\n";
        std::size_t top = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            sidecar << kClassNames[k] << ',' << (row->labels[k] != 0.0 ? 1 : 0) << ',' << detail::general(out.logits.data()[k]) << ','
                    << detail::general(out.probs.data()[k]) << "\n";
            if (out.probs.data()[k] > out.probs.data()[top]) top = k;
        }
        std::vector<std::size_t> targets = requested_classes;
        if (targets.empty()) {
            for (std::size_t k = 0; k < kNumClasses; ++k)
                if (row->labels[k] != 0.0) targets.push_back(k);
            if (targets.empty()) targets.push_back(top);
        }
        for (auto k : targets) {
            const auto [h1, h2] = cam(model, out.global.feature_maps, out.local.feature_maps, k);
            const Heatmap fused = fuse_and_rescale(h1, h2, box->second.box, original.width, original.height);
            Image gray = fused.map;
            for (double& v : gray.pixels) v /= 255.0;
            const std::string stem = id + "_" + std::string(kClassNames[k]);
            write_pgm(ws.cam_dir() / (stem + ".pgm"), gray);
            write_ppm(ws.cam_dir() / (stem + "_overlay.ppm"), overlay(original, fused));
            log << "cam: " << stem << " written\n";
        }
    }
}

}  // namespace sdfn
