#include "patchspn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchspn/autoencoder.hpp"
#include "patchspn/circuit.hpp"
#include "patchspn/config.hpp"
#include "patchspn/em.hpp"
#include "patchspn/errors.hpp"
#include "patchspn/evaluate.hpp"
#include "patchspn/image.hpp"
#include "patchspn/parallel.hpp"
#include "patchspn/patches.hpp"
#include "patchspn/region_graph.hpp"
#include "patchspn/scoring.hpp"
#include "patchspn/tensor_io.hpp"

namespace patchspn {

namespace {

namespace fs = std::filesystem;

// Stage identifiers for the seed fan-out; stable across releases.
enum Stage : std::uint64_t {
    kStageSynth = 1,
    kStagePatches = 2,
    kStageTrainAe = 3,
    kStageEncode = 4,
    kStageTrainSpn = 5,
    kStageScore = 6,
};

std::uint64_t stage_seed(const RunConfig& cfg, Stage stage) { return derive_seed(cfg.seed, stage); }

std::set<std::string> parse_labels(const std::string& csv) {
    std::set<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.insert(item);
    }
    if (out.empty()) throw ValueError("empty label filter");
    return out;
}

std::vector<DatasetEntry> filtered_entries(const fs::path& manifest, const std::string& labels_csv) {
    const std::set<std::string> wanted = parse_labels(labels_csv);
    std::vector<DatasetEntry> out;
    for (auto& e : read_manifest(manifest)) {
        if (wanted.count(e.label)) out.push_back(std::move(e));
    }
    if (out.empty()) {
        throw ValueError("no manifest entries with label(s) " + labels_csv + " in " + manifest.string());
    }
    return out;
}

struct SynthArgs {
    std::size_t healthy = 200, mass = 40, calc = 20, size = 128;
    std::string out;
};

int cmd_synth_data(const RunConfig& cfg, const SynthArgs& args) {
    RunLock lock(args.out);
    const auto images =
        make_synthetic_dataset(args.healthy, args.mass, args.calc, args.size, stage_seed(cfg, kStageSynth));
    write_dataset(args.out, images);
    RunManifest manifest("synth-data", cfg);
    manifest.add_output(fs::path(args.out) / "manifest.txt");
    for (const auto& img : images) {
        manifest.add_output(fs::path(args.out) / ("images/" + img.image_id + ".pgm"));
    }
    manifest.write(args.out);
    std::cout << "wrote " << images.size() << " images to " << args.out << "\n";
    return 0;
}

struct ExtractArgs {
    std::string data;  // manifest path
    std::string labels = "healthy";
    std::string out;
};

int cmd_extract_patches(const RunConfig& cfg, const ExtractArgs& args) {
    RunLock lock(args.out);
    const fs::path manifest_path(args.data);
    const fs::path base = manifest_path.parent_path();
    const auto entries = filtered_entries(manifest_path, args.labels);
    const auto [train_entries, val_entries] = split_dataset(entries, cfg.train_frac, stage_seed(cfg, kStagePatches));

    const std::uint64_t seed = stage_seed(cfg, kStagePatches);
    std::size_t global_index = 0;
    const auto extract_split = [&](const std::vector<DatasetEntry>& split) {
        PatchSet set;
        for (const auto& entry : split) {
            const LabeledImage img = load_entry(entry, base);
            Rng rng(derive_seed(seed, 1000 + global_index++));
            set.append(extract_patches(img, cfg.patches_per_image, cfg.patch_size, rng, true));
        }
        return set;
    };
    const PatchSet train_set = extract_split(train_entries);
    const PatchSet val_set = extract_split(val_entries);

    const fs::path train_path = fs::path(args.out) / "train_patches.aetn";
    const fs::path val_path = fs::path(args.out) / "val_patches.aetn";
    save_patchset(train_path, train_set);
    save_patchset(val_path, val_set);

    RunManifest manifest("extract-patches", cfg);
    manifest.add_input(manifest_path);
    manifest.add_output(train_path);
    manifest.add_output(val_path);
    manifest.write(args.out);
    std::cout << "extracted " << train_set.count() << " train / " << val_set.count()
              << " val patches from " << entries.size() << " images\n";
    return 0;
}

struct TrainAeArgs {
    std::string train, val, out;
};

int cmd_train_ae(const RunConfig& cfg, const TrainAeArgs& args) {
    RunLock lock(args.out);
    const PatchSet train_set = load_patchset(args.train);
    PatchSet val_set;
    if (!args.val.empty()) val_set = load_patchset(args.val);

    AeModel model = AeModel::build(cfg.ae_config(), stage_seed(cfg, kStageTrainAe));
    const AeTrainConfig train_cfg = cfg.ae_train_config(stage_seed(cfg, kStageTrainAe));
    const AeTrainTrace trace = train_ae(model, train_set.patches, val_set.patches, train_cfg);

    const fs::path model_path = fs::path(args.out) / "model.aeckpt";
    const fs::path trace_path = fs::path(args.out) / "train_trace.csv";
    model.save(model_path);
    write_train_trace_csv(trace_path, trace);

    RunManifest manifest("train-ae", cfg);
    manifest.add_input(args.train);
    if (!args.val.empty()) manifest.add_input(args.val);
    manifest.add_output(model_path);
    manifest.add_output(trace_path);
    manifest.write(args.out);
    std::cout << "trained " << cfg.ae_variant << " for " << train_cfg.epochs
              << " epochs; final train loss " << trace.train_loss.back() << "\n";
    return 0;
}

struct EncodeArgs {
    std::string model, patches, out;
};

int cmd_encode(const RunConfig& cfg, const EncodeArgs& args) {
    RunLock lock(args.out);
    const AeModel model = AeModel::load(args.model);
    const PatchSet set = load_patchset(args.patches);
    const Tensor latents = model.encode(set.patches);
    const fs::path latents_path = fs::path(args.out) / "latents.aetn";
    save_tensor(latents_path, latents, DType::f32);

    RunManifest manifest("encode", cfg);
    manifest.add_input(args.model);
    manifest.add_input(args.patches);
    manifest.add_output(latents_path);
    manifest.write(args.out);
    std::cout << "encoded " << latents.dim(0) << " patches to " << latents.dim(1) << "-d latents\n";
    return 0;
}

struct TrainSpnArgs {
    std::string latents, val, out;
};

int cmd_train_spn(const RunConfig& cfg, const TrainSpnArgs& args) {
    RunLock lock(args.out);
    Tensor data = load_tensor(args.latents);
    if (data.rank() != 2) throw ValueError("latent tensor must be rank 2 (n, dims)");
    const std::size_t n = data.dim(0), dims = data.dim(1);

    // z-score with training-set statistics; the stats ship with the circuit.
    std::vector<double> mean(dims, 0.0), sd(dims, 0.0);
    for (std::size_t v = 0; v < dims; ++v) {
        double m = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += data[r * dims + v];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = data[r * dims + v] - m;
            var += d * d;
        }
        mean[v] = m;
        sd[v] = std::max(std::sqrt(var / static_cast<double>(n)), 1e-6);
    }
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t v = 0; v < dims; ++v) {
            data[r * dims + v] = (data[r * dims + v] - mean[v]) / sd[v];
        }
    }
    Tensor val_data;
    const Tensor* val_ptr = nullptr;
    if (!args.val.empty()) {
        val_data = load_tensor(args.val);
        if (val_data.rank() != 2 || val_data.dim(1) != dims) {
            throw ValueError("validation latents must match training latent dims");
        }
        for (std::size_t r = 0; r < val_data.dim(0); ++r) {
            for (std::size_t v = 0; v < dims; ++v) {
                val_data[r * dims + v] = (val_data[r * dims + v] - mean[v]) / sd[v];
            }
        }
        val_ptr = &val_data;
    }

    const std::uint64_t seed = stage_seed(cfg, kStageTrainSpn);
    const RegionGraph rg = build_region_graph(dims, cfg.spn_depth, cfg.spn_replicas, derive_seed(seed, 1));
    Circuit circuit = materialize(rg, cfg.spn_roots, cfg.resolved_spn_sums(), cfg.spn_inputs,
                                  derive_seed(seed, 2));
    circuit.set_standardization(mean, sd);

    EmConfig em_cfg = cfg.em_config(derive_seed(seed, 3));
    const EmTrace trace = em_fit(circuit, data, val_ptr, em_cfg);

    const fs::path circuit_path = fs::path(args.out) / "circuit.spn";
    const fs::path trace_path = fs::path(args.out) / "em_trace.csv";
    save_circuit(circuit_path, circuit);
    write_em_trace_csv(trace_path, trace);

    RunManifest manifest("train-spn", cfg);
    manifest.add_input(args.latents);
    if (!args.val.empty()) manifest.add_input(args.val);
    manifest.add_output(circuit_path);
    manifest.add_output(trace_path);
    manifest.write(args.out);
    std::cout << "trained RAT-SPN (depth " << cfg.spn_depth << ", R " << cfg.spn_replicas << ", I "
              << cfg.spn_inputs << "); mean train LL " << trace.train_ll.back() << "\n";
    return 0;
}

struct ScoreArgs {
    std::string data, model, spn, labels = "mass,calcification", out;
};

int cmd_score(const RunConfig& cfg, const ScoreArgs& args) {
    RunLock lock(args.out);
    const fs::path manifest_path(args.data);
    const fs::path base = manifest_path.parent_path();
    const auto entries = filtered_entries(manifest_path, args.labels);
    const AeModel model = AeModel::load(args.model);
    Circuit circuit;
    const Circuit* circuit_ptr = nullptr;
    if (!args.spn.empty()) {
        circuit = load_circuit(args.spn);
        circuit_ptr = &circuit;
    }

    const std::uint64_t seed = stage_seed(cfg, kStageScore);
    std::ofstream index(fs::path(args.out) / "scores_index.txt");
    if (!index) throw IoError("cannot write scores index in " + args.out);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const LabeledImage img = load_entry(entries[i], base);
        const HeatmapResult hm = score_image(img, model, circuit_ptr, cfg.stride, derive_seed(seed, i));
        save_heatmap(args.out, img.image_id, hm);
        index << img.image_id << '\n';
    }
    index.close();

    RunManifest manifest("score", cfg);
    manifest.add_input(manifest_path);
    manifest.add_input(args.model);
    if (!args.spn.empty()) manifest.add_input(args.spn);
    for (const auto& e : entries) {
        manifest.add_output(fs::path(args.out) / (e.image_id + "_heatmap.aetn"));
    }
    manifest.write(args.out);
    std::cout << "scored " << entries.size() << " images"
              << (circuit_ptr != nullptr ? " with RAT-SPN likelihoods\n" : " with AE scores\n");
    return 0;
}

struct SegmentArgs {
    std::string scores, data, labels = "mass,calcification", out;
};

int cmd_segment(const RunConfig& cfg, const SegmentArgs& args) {
    RunLock lock(args.out);
    const fs::path manifest_path(args.data);
    const auto entries = filtered_entries(manifest_path, args.labels);
    RunManifest manifest("segment", cfg);
    manifest.add_input(manifest_path);
    for (const auto& e : entries) {
        HeatmapResult hm = load_heatmap(args.scores, e.image_id);
        threshold_heatmap(hm, cfg.percentile);
        const fs::path seg_path = fs::path(args.out) / (e.image_id + "_segmentation.pgm");
        write_mask_pgm(seg_path, hm.segmentation);
        manifest.add_output(seg_path);
    }
    manifest.write(args.out);
    std::cout << "segmented " << entries.size() << " heatmaps at percentile " << cfg.percentile << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string scores, data, labels = "mass,calcification", out;
};

int cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
    RunLock lock(args.out);
    const fs::path manifest_path(args.data);
    const fs::path base = manifest_path.parent_path();
    const auto entries = filtered_entries(manifest_path, args.labels);

    std::vector<LabeledImage> images;
    std::vector<HeatmapResult> heatmaps;
    for (const auto& e : entries) {
        images.push_back(load_entry(e, base));
        heatmaps.push_back(load_heatmap(args.scores, e.image_id));
    }
    EvaluationResult result = evaluate_scored_images(heatmaps, images, cfg.percentile);
    write_metrics_report(args.out, result.report);
    const fs::path hist_path = fs::path(args.out) / "histograms.csv";
    export_score_histograms(hist_path, result.healthy_scores, result.anomalous_scores, 50);

    RunManifest manifest("evaluate", cfg);
    manifest.add_input(manifest_path);
    manifest.add_output(fs::path(args.out) / "metrics.txt");
    manifest.add_output(fs::path(args.out) / "per_image.csv");
    manifest.add_output(hist_path);
    manifest.write(args.out);
    std::cout << "pixelwise AUC " << result.report.pixelwise << ", imagewise AUC "
              << result.report.imagewise.mean << " +- " << result.report.imagewise.stddev << "\n";
    return 0;
}

struct ReportArgs {
    std::vector<std::string> entries;  // name=metrics_dir
    std::string out;
};

int cmd_report(const RunConfig& cfg, const ReportArgs& args) {
    RunLock lock(args.out);
    std::ofstream table(fs::path(args.out) / "report.csv");
    if (!table) throw IoError("cannot write report in " + args.out);
    table << "model,pixelwise_auc,imagewise_auc_mean,imagewise_auc_std,hausdorff_mean,hausdorff_std,"
             "gap_statistic\n";
    RunManifest manifest("report", cfg);
    for (const auto& spec : args.entries) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ValueError("report entry must be name=metrics_dir: " + spec);
        const std::string name = spec.substr(0, eq);
        const fs::path dir = spec.substr(eq + 1);
        std::ifstream is(dir / "metrics.txt");
        if (!is) throw IoError("missing metrics.txt under " + dir.string());
        manifest.add_input(dir / "metrics.txt");
        std::map<std::string, std::string> kv;
        std::string line;
        while (std::getline(is, line)) {
            const auto e = line.find('=');
            if (e != std::string::npos) kv[line.substr(0, e)] = line.substr(e + 1);
        }
        table << name << ',' << kv["pixelwise_auc"] << ',' << kv["imagewise_auc_mean"] << ','
              << kv["imagewise_auc_std"] << ',' << kv["hausdorff_mean"] << ',' << kv["hausdorff_std"]
              << ',' << kv["gap_statistic"] << '\n';
    }
    table.close();
    manifest.add_output(fs::path(args.out) / "report.csv");
    manifest.write(args.out);
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    RunConfig cfg;
    // --config is honored before flag binding so flags override file values.
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        try {
            if (arg == "--config" && i + 1 < argc) {
                cfg = RunConfig::from_file(argv[i + 1]);
            } else if (arg.rfind("--config=", 0) == 0) {
                cfg = RunConfig::from_file(arg.substr(9));
            }
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    }

    CLI::App app{"patch-wise anomaly detection with autoencoders and RAT-SPN density models"};
    app.require_subcommand(0, 1);
    std::string config_path;
    bool print_config = false;
    app.add_option("--config", config_path, "configuration file ([section] key=value lines)");
    app.add_flag("--print-config", print_config, "print the fully resolved configuration and exit");
    app.add_option("--threads", cfg.threads, "worker thread cap (0 = hardware)");
    app.add_option("--seed", cfg.seed, "global seed; stages derive their own streams from it");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth-data", "generate the seeded synthetic dataset");
    synth_cmd->add_option("--healthy", synth.healthy, "healthy image count");
    synth_cmd->add_option("--mass", synth.mass, "mass image count");
    synth_cmd->add_option("--calc", synth.calc, "calcification image count");
    synth_cmd->add_option("--size", synth.size, "square image size in pixels (>= 128)");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();

    ExtractArgs extract;
    auto* extract_cmd = app.add_subcommand("extract-patches", "sample training patches from a dataset");
    extract_cmd->add_option("--data", extract.data, "dataset manifest")->required();
    extract_cmd->add_option("--labels", extract.labels, "comma-separated labels to use");
    extract_cmd->add_option("--per-image", cfg.patches_per_image, "patches per image");
    extract_cmd->add_option("--train-frac", cfg.train_frac, "subject-level training fraction");
    extract_cmd->add_option("--out", extract.out, "output directory")->required();

    TrainAeArgs train_ae_args;
    auto* train_ae_cmd = app.add_subcommand("train-ae", "train an autoencoder on patch tensors");
    train_ae_cmd->add_option("--train", train_ae_args.train, "training patch tensor")->required();
    train_ae_cmd->add_option("--val", train_ae_args.val, "validation patch tensor");
    train_ae_cmd->add_option("--variant", cfg.ae_variant, "cae | bvae | vqvae");
    train_ae_cmd->add_option("--epochs", cfg.ae_epochs, "epochs (0 = variant default)");
    train_ae_cmd->add_option("--lr", cfg.ae_lr, "learning rate (0 = variant default)");
    train_ae_cmd->add_option("--batch", cfg.ae_batch, "batch size");
    train_ae_cmd->add_option("--latent", cfg.latent_dim, "latent dimensionality");
    train_ae_cmd->add_option("--out", train_ae_args.out, "output directory")->required();

    EncodeArgs encode_args;
    auto* encode_cmd = app.add_subcommand("encode", "encode patches to latent features");
    encode_cmd->add_option("--model", encode_args.model, "autoencoder checkpoint")->required();
    encode_cmd->add_option("--patches", encode_args.patches, "patch tensor")->required();
    encode_cmd->add_option("--out", encode_args.out, "output directory")->required();

    TrainSpnArgs train_spn_args;
    auto* train_spn_cmd = app.add_subcommand("train-spn", "fit a RAT-SPN to latent features by EM");
    train_spn_cmd->add_option("--latents", train_spn_args.latents, "training latent tensor")->required();
    train_spn_cmd->add_option("--val", train_spn_args.val, "validation latent tensor");
    train_spn_cmd->add_option("--depth", cfg.spn_depth, "region-graph depth");
    train_spn_cmd->add_option("--replicas", cfg.spn_replicas, "region-graph replicas (R)");
    train_spn_cmd->add_option("--inputs", cfg.spn_inputs, "input distributions per leaf region (I)");
    train_spn_cmd->add_option("--sums", cfg.spn_sums, "sum nodes per internal region (0 = inputs)");
    train_spn_cmd->add_option("--roots", cfg.spn_roots, "root sum nodes (C)");
    train_spn_cmd->add_option("--em-epochs", cfg.em_epochs, "EM epochs");
    train_spn_cmd->add_option("--em-batch", cfg.em_batch, "EM batch size");
    train_spn_cmd->add_option("--em-step", cfg.em_step, "stochastic EM step size");
    train_spn_cmd->add_option("--em-mode", cfg.em_mode, "full_batch | stochastic");
    train_spn_cmd->add_option("--out", train_spn_args.out, "output directory")->required();

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "score images patch-by-patch into heatmaps");
    score_cmd->add_option("--data", score_args.data, "dataset manifest")->required();
    score_cmd->add_option("--model", score_args.model, "autoencoder checkpoint")->required();
    score_cmd->add_option("--spn", score_args.spn, "trained circuit (optional; AE-only scores without)");
    score_cmd->add_option("--labels", score_args.labels, "labels to score");
    score_cmd->add_option("--stride", cfg.stride, "scoring stride in pixels");
    score_cmd->add_option("--out", score_args.out, "output directory")->required();

    SegmentArgs segment_args;
    auto* segment_cmd = app.add_subcommand("segment", "threshold heatmaps into binary segmentations");
    segment_cmd->add_option("--scores", segment_args.scores, "directory written by `score`")->required();
    segment_cmd->add_option("--data", segment_args.data, "dataset manifest")->required();
    segment_cmd->add_option("--labels", segment_args.labels, "labels to segment");
    segment_cmd->add_option("--percentile", cfg.percentile, "threshold percentile");
    segment_cmd->add_option("--out", segment_args.out, "output directory")->required();

    EvaluateArgs evaluate_args;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "compute AUC/Hausdorff metrics for heatmaps");
    evaluate_cmd->add_option("--scores", evaluate_args.scores, "directory written by `score`")->required();
    evaluate_cmd->add_option("--data", evaluate_args.data, "dataset manifest")->required();
    evaluate_cmd->add_option("--labels", evaluate_args.labels, "labels to evaluate");
    evaluate_cmd->add_option("--percentile", cfg.percentile, "segmentation percentile");
    evaluate_cmd->add_option("--out", evaluate_args.out, "output directory")->required();

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "combine metrics reports into one table");
    report_cmd->add_option("--entry", report_args.entries, "name=metrics_dir (repeatable)")->required();
    report_cmd->add_option("--out", report_args.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    set_max_threads(cfg.threads);
    if (print_config) {
        std::cout << cfg.to_text();
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 1;
    }

    std::string active_out = cfg.output_root;
    try {
        if (synth_cmd->parsed()) {
            active_out = synth.out;
            return cmd_synth_data(cfg, synth);
        }
        if (extract_cmd->parsed()) {
            active_out = extract.out;
            return cmd_extract_patches(cfg, extract);
        }
        if (train_ae_cmd->parsed()) {
            active_out = train_ae_args.out;
            return cmd_train_ae(cfg, train_ae_args);
        }
        if (encode_cmd->parsed()) {
            active_out = encode_args.out;
            return cmd_encode(cfg, encode_args);
        }
        if (train_spn_cmd->parsed()) {
            active_out = train_spn_args.out;
            return cmd_train_spn(cfg, train_spn_args);
        }
        if (score_cmd->parsed()) {
            active_out = score_args.out;
            return cmd_score(cfg, score_args);
        }
        if (segment_cmd->parsed()) {
            active_out = segment_args.out;
            return cmd_segment(cfg, segment_args);
        }
        if (evaluate_cmd->parsed()) {
            active_out = evaluate_args.out;
            return cmd_evaluate(cfg, evaluate_args);
        }
        if (report_cmd->parsed()) {
            active_out = report_args.out;
            return cmd_report(cfg, report_args);
        }
        std::cerr << app.help();
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        std::error_code ec;
        std::filesystem::create_directories(active_out, ec);
        std::ofstream diag(fs::path(active_out) / "diagnostics.txt");
        diag << "numerical failure\n" << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace patchspn
