// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "astain/checkpoint.hpp"
#include "astain/detect.hpp"
#include "astain/synthetic.hpp"
#include "astain/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace astain {

namespace {

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot write '" + path.string() + "'");
    os << j.dump(2) << "\n";
}

json stain_to_json(const StainModel& m) {
    return json{{"absorbance",
                 {{m.a[0][0], m.a[0][1]}, {m.a[1][0], m.a[1][1]}, {m.a[2][0], m.a[2][1]}}},
                {"background_intensity", m.i0},
                {"concentration_scale", {m.concentration_scale[0], m.concentration_scale[1]}}};
}

StainModel stain_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DatasetError("cannot open stain reference '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DatasetError("malformed stain reference '" + path + "': " + e.what());
    }
    StainModel m;
    try {
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 2; ++k) m.a[i][k] = j.at("absorbance").at(i).at(k).get<double>();
        m.i0 = j.at("background_intensity").get<double>();
        for (int k = 0; k < 2; ++k) m.concentration_scale[k] = j.at("concentration_scale").at(k).get<double>();
    } catch (const json::exception& e) {
        throw DatasetError("malformed stain reference '" + path + "': " + e.what());
    }
    return m;
}

StainModel resolve_reference(const std::string& path) {
    return path.empty() ? default_reference_stain() : stain_from_json_file(path);
}

struct TrainArgs {
    std::string dataset, out, hard_negatives, reference;
    TrainingConfig config;
};

int cmd_train(const TrainArgs& a) {
    fs::create_directories(a.out);
    TrainingConfig config = a.config;
    config.reference = resolve_reference(a.reference);
    config.checkpoint_path = (fs::path(a.out) / "model.ckpt").string();
    config.log_path = (fs::path(a.out) / "train_log.csv").string();

    const Dataset dataset = load_dataset(a.dataset);
    config.validate(dataset.num_domains(Split::Train));  // reject conflicts before any work

    std::vector<MinedCenter> mined;
    if (!a.hard_negatives.empty()) mined = read_mined_csv(a.hard_negatives);

    json snapshot{{"command", "train"},
                  {"dataset", a.dataset},
                  {"out", a.out},
                  {"seed", config.seed},
                  {"iterations", config.total_iterations},
                  {"batch_size", config.batch_size},
                  {"lr", config.base_lr},
                  {"lr_decay", config.lr_decay},
                  {"lr_decay_interval", config.lr_decay_interval},
                  {"weight_decay", config.weight_decay},
                  {"momentum", config.momentum},
                  {"lr_d", config.lambda_d},
                  {"alpha_max", config.alpha_max},
                  {"cycle_length", config.cycle_length},
                  {"warmup_fraction", config.warmup_fraction},
                  {"ca", config.color_augmentation},
                  {"sn", config.stain_normalization},
                  {"dann", config.dann},
                  {"shared_domain_forward", config.shared_domain_forward},
                  {"hard_negatives", a.hard_negatives},
                  {"hard_negative_ratio", config.hard_negative_ratio},
                  {"random_negatives_per_image", config.random_negatives_per_image},
                  {"reference", stain_to_json(config.reference)}};
    write_json(snapshot, fs::path(a.out) / "train.config.json");

    run_training(config, dataset, mined);
    ASTAIN_LOG_INFO("training finished, checkpoint at %s", config.checkpoint_path.c_str());
    return 0;
}

struct NormalizeArgs {
    std::string input, out, reference;
    double percentile = 99.0;
};

int cmd_normalize(const NormalizeArgs& a) {
    const StainModel reference = resolve_reference(a.reference);
    fs::create_directories(a.out);
    write_json(json{{"command", "normalize"},
                    {"input", a.input},
                    {"out", a.out},
                    {"percentile", a.percentile},
                    {"reference", stain_to_json(reference)}},
               fs::path(a.out) / "normalize.config.json");

    if (!fs::is_directory(a.input)) throw DatasetError("'" + a.input + "' is not a directory");
    int failures = 0, written = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a.input)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext != ".png" && ext != ".ppm" && ext != ".PNG" && ext != ".PPM") continue;
        const fs::path rel = fs::relative(entry.path(), a.input);
        const fs::path dst = fs::path(a.out) / rel;
        fs::create_directories(dst.parent_path());
        try {
            const RgbImage img = read_image(entry.path().string());
            const StainModel own = estimate_stain_matrix(img);
            write_image(normalize_image(img, reference, a.percentile), dst.string());
            write_json(stain_to_json(own), dst.string() + ".stain.json");
            ++written;
        } catch (const Error& e) {
            ++failures;
            ASTAIN_LOG_INFO("skipping '%s': %s", entry.path().c_str(), e.what());
        }
    }
    ASTAIN_LOG_INFO("normalized %d image(s), skipped %d", written, failures);
    return failures == 0 ? 0 : 1;
}

struct EvaluateArgs {
    std::string checkpoint, dataset, out, reference;
    std::string split = "internal-test";
    std::string select_on;
    double threshold = -1.0;
    double radius = 30.0;
    bool sn = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const bool have_threshold = a.threshold >= 0.0;
    const bool have_select = !a.select_on.empty();
    if (have_threshold == have_select)
        throw ValueError("provide exactly one of --threshold and --select-on validation");
    if (have_select && a.select_on != "validation")
        throw ValueError("the operating point may only be selected on the validation split, not on '" + a.select_on +
                         "'");

    fs::create_directories(a.out);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Dataset dataset = load_dataset(a.dataset);
    const Split split = split_from_string(a.split);
    const StainModel reference = resolve_reference(a.reference);
    if (a.sn) {
        normalize_split(dataset, split, reference);
        if (have_select && split != Split::Validation) normalize_split(dataset, Split::Validation, reference);
    }

    write_json(json{{"command", "evaluate"},
                    {"checkpoint", a.checkpoint},
                    {"dataset", a.dataset},
                    {"split", a.split},
                    {"select_on", a.select_on},
                    {"threshold", a.threshold},
                    {"radius", a.radius},
                    {"sn", a.sn},
                    {"reference", stain_to_json(reference)}},
               fs::path(a.out) / "evaluate.config.json");

    double threshold = a.threshold;
    bool warning = false;
    if (have_select) {
        const OperatingPoint op = select_operating_point(ckpt.model, dataset, Split::Validation, a.radius);
        threshold = op.threshold;
        warning = op.no_detections;
    }

    const F1Report report = evaluate(ckpt.model, dataset, split, threshold, a.radius);
    json out{{"split", a.split},
             {"threshold", threshold},
             {"radius", a.radius},
             {"true_positives", report.true_positives},
             {"false_positives", report.false_positives},
             {"false_negatives", report.false_negatives},
             {"precision", report.precision},
             {"recall", report.recall},
             {"f1", report.f1},
             {"threshold_selected_on_validation", have_select}};
    if (warning) out["no_detections_warning"] = true;
    write_json(out, fs::path(a.out) / "report.json");
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
}

struct InferArgs {
    std::string checkpoint, image, out, reference;
    bool sn = false;
};

int cmd_infer(const InferArgs& a) {
    fs::create_directories(a.out);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    RgbImage img = read_image(a.image);
    const StainModel reference = resolve_reference(a.reference);
    if (a.sn) img = normalize_image(img, reference);

    write_json(json{{"command", "infer"},
                    {"checkpoint", a.checkpoint},
                    {"image", a.image},
                    {"sn", a.sn},
                    {"reference", stain_to_json(reference)}},
               fs::path(a.out) / "infer.config.json");

    const ProbabilityMap map = dense_inference(ckpt.model, img);
    const std::string stem = fs::path(a.image).stem().string();
    const std::string dst = (fs::path(a.out) / (stem + ".pmap")).string();
    write_probability_map(map, dst);
    ASTAIN_LOG_INFO("wrote %dx%d probability map to %s", map.rows, map.cols, dst.c_str());
    return 0;
}

struct MineArgs {
    std::string checkpoint, dataset, out;
    int count = 1000;
    double exclusion_radius = 15.0;
    uint64_t seed = 1;
};

int cmd_mine(const MineArgs& a) {
    fs::create_directories(a.out);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Dataset dataset = load_dataset(a.dataset);
    write_json(json{{"command", "mine"},
                    {"checkpoint", a.checkpoint},
                    {"dataset", a.dataset},
                    {"count", a.count},
                    {"exclusion_radius", a.exclusion_radius},
                    {"seed", a.seed}},
               fs::path(a.out) / "mine.config.json");
    Rng rng(mix_seed(a.seed, 0x4d494e45));
    const auto samples = mine_hard_negatives(ckpt.model, dataset, a.count, a.exclusion_radius, rng);
    write_mined_csv(samples, (fs::path(a.out) / "mined.csv").string());
    ASTAIN_LOG_INFO("mined %zu hard negatives", samples.size());
    return 0;
}

struct SynthArgs {
    std::string out;
    std::string format = "png";
    uint64_t seed = 7;
    SyntheticConfig config;
};

int cmd_synth(const SynthArgs& a) {
    write_json(json{{"command", "synth"},
                    {"out", a.out},
                    {"seed", a.seed},
                    {"domains", a.config.domains},
                    {"external_domains", a.config.external_domains},
                    {"train_images_per_domain", a.config.train_images_per_domain},
                    {"validation_images_per_domain", a.config.validation_images_per_domain},
                    {"internal_test_images_per_domain", a.config.internal_test_images_per_domain},
                    {"external_test_images_per_domain", a.config.external_test_images_per_domain},
                    {"image_size", a.config.image_size},
                    {"positives_per_image", a.config.positives_per_image},
                    {"match_radius", a.config.match_radius},
                    {"format", a.format}},
               fs::path(a.out) / "synth.config.json");
    const Dataset ds = generate_synthetic_dataset(a.config, a.seed);
    save_dataset(ds, a.out, a.format);
    ASTAIN_LOG_INFO("wrote synthetic dataset with %zu cases under %s", ds.cases.size(), a.out.c_str());
    return 0;
}

struct ExportFeaturesArgs {
    std::string checkpoint, dataset, out;
    std::string split = "train";
    int per_domain = 40;
    uint64_t seed = 1;
};

int cmd_export_features(const ExportFeaturesArgs& a) {
    fs::create_directories(a.out);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Dataset dataset = load_dataset(a.dataset);
    const Split split = split_from_string(a.split);
    write_json(json{{"command", "export-features"},
                    {"checkpoint", a.checkpoint},
                    {"dataset", a.dataset},
                    {"split", a.split},
                    {"per_domain", a.per_domain},
                    {"seed", a.seed}},
               fs::path(a.out) / "export-features.config.json");

    const auto patches = sample_labeled_patches(dataset, split, a.per_domain, mix_seed(a.seed, 0x46454154));
    const FeatureTable table = compute_features(ckpt.model, patches);
    write_feature_csv(table, (fs::path(a.out) / "features.csv").string());
    ASTAIN_LOG_INFO("exported %zu feature rows", table.size());
    return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
    CLI::App app{"domain-adversarial mitosis detection pipeline"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train a classifier (baseline, CA, SN and/or DANN)");
    t->add_option("--dataset", train.dataset, "dataset root directory")->required();
    t->add_option("--out", train.out, "output directory")->required();
    t->add_option("--seed", train.config.seed, "training seed");
    t->add_option("--iterations", train.config.total_iterations, "total training iterations");
    t->add_option("--batch-size", train.config.batch_size, "batch size");
    t->add_option("--lr", train.config.base_lr, "base learning rate (lambda_M)");
    t->add_option("--lr-d", train.config.lambda_d, "domain learning rate (lambda_D)");
    t->add_option("--alpha-max", train.config.alpha_max, "peak adversarial strength");
    t->add_option("--cycle-length", train.config.cycle_length, "alpha cycle length in iterations");
    t->add_option("--warmup-fraction", train.config.warmup_fraction, "zero-alpha fraction of each cycle");
    t->add_flag("--ca", train.config.color_augmentation, "enable color augmentation");
    t->add_flag("--sn", train.config.stain_normalization, "stain-normalize training images first");
    t->add_flag("--dann", train.config.dann, "enable domain-adversarial training");
    t->add_option("--hard-negatives", train.hard_negatives, "mined.csv from the mine subcommand");
    t->add_option("--hard-negative-ratio", train.config.hard_negative_ratio,
                  "fraction of negatives drawn from the mined pool");
    t->add_option("--random-negatives-per-image", train.config.random_negatives_per_image,
                  "random negative pool size per image");
    t->add_option("--reference", train.reference, "stain reference JSON (for --sn)");

    NormalizeArgs norm;
    auto* n = app.add_subcommand("normalize", "stain-normalize a directory of images");
    n->add_option("--input", norm.input, "input directory")->required();
    n->add_option("--out", norm.out, "output directory")->required();
    n->add_option("--reference", norm.reference, "stain reference JSON");
    n->add_option("--percentile", norm.percentile, "concentration scaling percentile");

    EvaluateArgs eval;
    auto* e = app.add_subcommand("evaluate", "F1 evaluation of a checkpoint on a dataset split");
    e->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
    e->add_option("--dataset", eval.dataset, "dataset root directory")->required();
    e->add_option("--out", eval.out, "output directory")->required();
    e->add_option("--split", eval.split, "split to evaluate (validation, internal-test, external-test)");
    e->add_option("--threshold", eval.threshold, "fixed operating point in [0, 1]");
    e->add_option("--select-on", eval.select_on, "select the operating point (only 'validation' is allowed)");
    e->add_option("--radius", eval.radius, "matching radius in pixels");
    e->add_flag("--sn", eval.sn, "stain-normalize images before inference");
    e->add_option("--reference", eval.reference, "stain reference JSON");

    InferArgs infer;
    auto* f = app.add_subcommand("infer", "write the dense probability map of one image");
    f->add_option("--checkpoint", infer.checkpoint, "model checkpoint")->required();
    f->add_option("--image", infer.image, "input image (.png or .ppm)")->required();
    f->add_option("--out", infer.out, "output directory")->required();
    f->add_flag("--sn", infer.sn, "stain-normalize the image before inference");
    f->add_option("--reference", infer.reference, "stain reference JSON");

    MineArgs mine;
    auto* m = app.add_subcommand("mine", "sample hard negatives from the probability maps");
    m->add_option("--checkpoint", mine.checkpoint, "model checkpoint")->required();
    m->add_option("--dataset", mine.dataset, "dataset root directory")->required();
    m->add_option("--out", mine.out, "output directory")->required();
    m->add_option("--count", mine.count, "number of hard negatives");
    m->add_option("--exclusion-radius", mine.exclusion_radius, "exclusion radius around annotations (px)");
    m->add_option("--seed", mine.seed, "sampling seed");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate the synthetic multi-domain dataset");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--seed", synth.seed, "generation seed");
    s->add_option("--domains", synth.config.domains, "number of training domains");
    s->add_option("--external-domains", synth.config.external_domains, "number of held-out domains");
    s->add_option("--images-per-domain", synth.config.train_images_per_domain, "training images per domain");
    s->add_option("--validation-images", synth.config.validation_images_per_domain, "validation images per domain");
    s->add_option("--internal-test-images", synth.config.internal_test_images_per_domain,
                  "internal-test images per domain");
    s->add_option("--external-test-images", synth.config.external_test_images_per_domain,
                  "external-test images per held-out domain");
    s->add_option("--image-size", synth.config.image_size, "square image size in pixels");
    s->add_option("--positives", synth.config.positives_per_image, "mitoses per image");
    s->add_option("--match-radius", synth.config.match_radius, "evaluation radius the layout respects");
    s->add_option("--format", synth.format, "image format (png or ppm)");

    ExportFeaturesArgs exf;
    auto* x = app.add_subcommand("export-features", "export layer-4 features of sampled patches as CSV");
    x->add_option("--checkpoint", exf.checkpoint, "model checkpoint")->required();
    x->add_option("--dataset", exf.dataset, "dataset root directory")->required();
    x->add_option("--out", exf.out, "output directory")->required();
    x->add_option("--split", exf.split, "split to sample patches from");
    x->add_option("--per-domain", exf.per_domain, "patches per domain");
    x->add_option("--seed", exf.seed, "patch sampling seed");

    std::vector<char*> argv;
    argv.reserve(args.size());
    for (auto& a : args) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    try {
        if (app.got_subcommand(t)) return cmd_train(train);
        if (app.got_subcommand(n)) return cmd_normalize(norm);
        if (app.got_subcommand(e)) return cmd_evaluate(eval);
        if (app.got_subcommand(f)) return cmd_infer(infer);
        if (app.got_subcommand(m)) return cmd_mine(mine);
        if (app.got_subcommand(s)) return cmd_synth(synth);
        if (app.got_subcommand(x)) return cmd_export_features(exf);
    } catch (const Error& err) {
        ASTAIN_LOG_ERROR("%s", err.what());
        return 1;
    } catch (const std::exception& err) {
        ASTAIN_LOG_ERROR("unexpected failure: %s", err.what());
        return 1;
    }
    return 1;
}

}  // namespace astain
