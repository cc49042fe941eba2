#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sdfn/acceptance.hpp"
#include "sdfn/config.hpp"
#include "sdfn/manifest.hpp"
#include "sdfn/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kPrerequisite = 3, kAssertion = 4 };

std::vector<std::string> csv_list(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    for (auto& item : sdfn::split(s, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

sdfn::Margins parse_margins(const std::string& s) {
    const auto parts = sdfn::split(s, ',');
    if (parts.size() != 4) throw sdfn::ConfigError("--lrg-margins expects left,top,right,bottom");
    try {
        return {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])};
    } catch (const std::exception&) {
        throw sdfn::ConfigError("--lrg-margins expects four integers");
    }
}

std::vector<int> parse_criteria(const std::string& s) {
    std::vector<int> out;
    for (const auto& item : csv_list(s)) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw sdfn::ConfigError("--criteria expects a list of criterion numbers");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    sdfn::tune_allocator();
    CLI::App app{"Lung-region and whole-image fusion pipeline for chest X-ray classification"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Pipeline configuration (JSON)")->required();
        sub->add_option("--seed", seed, "Override the configured seed");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate the phantom corpus and test split");
    auto* seg = app.add_subcommand("train-seg", "Train the lung segmenter");
    auto* lrg = app.add_subcommand("run-lrg", "Segment every image and cache lung-region crops");
    auto* ext = app.add_subcommand("train-extractor", "Train one feature extractor");
    auto* fus = app.add_subcommand("train-fusion", "Train the fusion head on frozen extractors");
    auto* eval = app.add_subcommand("evaluate", "Compare whole-image, lung-region and fused models on the test split");
    auto* camc = app.add_subcommand("cam", "Write class activation heatmaps");
    auto* ver = app.add_subcommand("verify", "Run the acceptance suite");
    for (auto* sub : {gen, seg, lrg, ext, fus, eval, camc, ver}) common(sub);

    std::string view;
    ext->add_option("--view", view, "Which extractor to train")->required()->check(CLI::IsMember({"global", "local"}));
    std::string ids, classes;
    camc->add_option("--ids", ids, "Comma-separated image ids (default: first test images)");
    camc->add_option("--classes", classes, "Comma-separated class names (default: positive labels, else the top class)");
    std::string margins, criteria;
    ver->add_option("--lrg-margins", margins, "Margins left,top,right,bottom handed to the lung region generator");
    ver->add_option("--criteria", criteria, "Comma-separated criterion numbers to run (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        sdfn::PipelineConfig cfg = sdfn::load_pipeline_config(config_path);
        if (seed) cfg.seed = *seed;
        auto& log = std::cerr;
        if (gen->parsed()) sdfn::stage_gen_data(cfg, log);
        if (seg->parsed()) sdfn::stage_train_seg(cfg, log);
        if (lrg->parsed()) sdfn::stage_run_lrg(cfg, log);
        if (ext->parsed()) sdfn::stage_train_extractor(cfg, view, log);
        if (fus->parsed()) sdfn::stage_train_fusion(cfg, log);
        if (eval->parsed()) sdfn::stage_evaluate(cfg, log);
        if (camc->parsed()) {
            sdfn::stage_cam(cfg, csv_list(ids), csv_list(classes), log);
        }
        if (ver->parsed()) {
            sdfn::acceptance::Options options;
            if (!margins.empty()) options.lrg_reference = parse_margins(margins);
            options.criteria = parse_criteria(criteria);
            options.work_dir = cfg.reports_dir / "verify";
            options.log = &log;
            const auto results = sdfn::acceptance::run_suite(options, std::cout);
            std::size_t failed = 0;
            for (const auto& r : results) failed += r.passed ? 0 : 1;
            std::cout << (failed ? "FAILED " : "ALL PASSED ") << results.size() - failed << "/" << results.size() << "\n";
            return failed ? kAssertion : kOk;
        }
        return kOk;
    } catch (const sdfn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const sdfn::PrerequisiteError& e) {
        std::cerr << e.what() << "\n";
        return kPrerequisite;
    } catch (const sdfn::AssertionFailure& e) {
        std::cerr << "assertion failed: " << e.what() << "\n";
        return kAssertion;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
}
