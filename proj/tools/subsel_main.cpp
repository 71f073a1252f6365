// subsel: uncertainty-aware submodular subset selection for visual
// attribution. Subcommands: gen-data, train, fit-stats, explain, eval,
// selftest. Exit codes: 0 ok, 2 configuration error, 3 data error,
// 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "subsel/checkpoint.hpp"
#include "subsel/dataset.hpp"
#include "subsel/errors.hpp"
#include "subsel/graph.hpp"
#include "subsel/metrics.hpp"
#include "subsel/pipeline.hpp"
#include "subsel/train.hpp"
#include "subsel/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace subsel;

namespace {

struct CommonArgs {
    std::uint64_t seed = 0;
};

struct PartitionArgs {
    std::string kind = "grid";
    int grid_n = 7;
    int grid_m = 7;
    int slic_k = 16;
    double slic_compactness = 0.1;
    int slic_iterations = 10;
    bool slic_fixed = false;
    std::vector<double> fill;
};

void add_partition_flags(CLI::App* cmd, PartitionArgs& args) {
    cmd->add_option("--partition", args.kind, "Partition strategy: grid or slic")
        ->check(CLI::IsMember({"grid", "slic"}));
    cmd->add_option("--grid-n", args.grid_n, "Grid size N (N x N cells)");
    cmd->add_option("--grid-m", args.grid_m, "Grid divisions m (N*N divisible by m)");
    cmd->add_option("--slic-k", args.slic_k, "Requested superpixel count");
    cmd->add_option("--slic-compactness", args.slic_compactness, "SLIC compactness");
    cmd->add_option("--slic-iterations", args.slic_iterations, "SLIC iterations");
    cmd->add_flag("--slic-fixed", args.slic_fixed,
                  "Fixed-compactness SLIC instead of the adaptive variant");
    cmd->add_option("--fill", args.fill,
                    "Masking fill value per channel (default: training mean from stats)");
}

PartitionConfig to_partition_config(const PartitionArgs& args) {
    PartitionConfig p;
    p.kind = args.kind == "slic" ? PartitionConfig::Kind::Slic : PartitionConfig::Kind::Grid;
    p.grid_n = args.grid_n;
    p.grid_m = args.grid_m;
    p.slic.k = args.slic_k;
    p.slic.compactness = args.slic_compactness;
    p.slic.iterations = args.slic_iterations;
    p.slic.adaptive = !args.slic_fixed;
    p.fill = args.fill;
    return p;
}

struct ObjectiveArgs {
    std::string kind = "attribution";
    double mu1 = 1.0, mu2 = 1.0, mu3 = 1.0, mu4 = 1.0;
    bool no_confidence = false;
    int target_class = -1;
    std::vector<int> box;  // x y w h
    int box_class = 0;
};

void add_objective_flags(CLI::App* cmd, ObjectiveArgs& args) {
    cmd->add_option("--objective", args.kind, "Objective composition: attribution or object")
        ->check(CLI::IsMember({"attribution", "object"}));
    cmd->add_option("--mu1", args.mu1, "Confidence weight");
    cmd->add_option("--mu2", args.mu2, "Effectiveness / clue weight");
    cmd->add_option("--mu3", args.mu3, "Consistency / object-collaboration weight");
    cmd->add_option("--mu4", args.mu4, "Collaboration weight (attribution only)");
    cmd->add_flag("--no-confidence", args.no_confidence, "Disable the confidence term (ablation)");
    cmd->add_option("--target-class", args.target_class,
                    "Class to explain (-1: the model's prediction)");
    cmd->add_option("--box", args.box, "Detection query box: x y w h (object objective)")
        ->expected(4);
    cmd->add_option("--box-class", args.box_class, "Detection query class id");
}

ObjectiveConfig to_objective_config(const ObjectiveArgs& args) {
    ObjectiveConfig o;
    o.kind = args.kind == "object" ? ObjectiveKind::Object : ObjectiveKind::Attribution;
    o.weights = {args.mu1, args.mu2, args.mu3, args.mu4};
    o.confidence_enabled = !args.no_confidence;
    o.target_class = args.target_class;
    if (!args.box.empty()) {
        o.query.x = args.box[0];
        o.query.y = args.box[1];
        o.query.w = args.box[2];
        o.query.h = args.box[3];
    }
    o.query.class_id = args.box_class;
    return o;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << text;
}

std::vector<Image> load_images(const DatasetManifest& manifest,
                               const std::vector<DatasetEntry>& entries) {
    std::vector<Image> images;
    images.reserve(entries.size());
    for (const DatasetEntry& e : entries) {
        images.push_back(load_entry_image(manifest, e));
    }
    return images;
}

int run_selftest(std::uint64_t seed, bool quick) {
    int failures = 0;
    auto check = [&failures](bool ok, const std::string& name) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
        if (!ok) {
            ++failures;
        }
    };

    // gradients vs central differences on small random dense nets
    {
        bool ok = true;
        const int trials = quick ? 3 : 8;
        for (int t = 0; t < trials && ok; ++t) {
            RngStream rng = RngStream::derive(seed, {static_cast<std::uint64_t>(t), 701u});
            Graph g;
            const int x = g.input(Shape{6});
            const int w1 = g.input(Shape{5, 6});
            const int b1 = g.input(Shape{5});
            const int h = g.tanh(g.affine(x, w1, b1));
            const int w2 = g.input(Shape{3, 5});
            const int b2 = g.input(Shape{3});
            const int out = g.sum(g.relu(g.affine(h, w2, b2)));
            std::vector<Tensor> inputs = {Tensor(Shape{6}), Tensor(Shape{5, 6}), Tensor(Shape{5}),
                                          Tensor(Shape{3, 5}), Tensor(Shape{3})};
            for (Tensor& tensor : inputs) {
                for (std::int64_t i = 0; i < tensor.size(); ++i) {
                    tensor[i] = 2.0 * rng.uniform() - 1.0;
                }
            }
            const std::vector<Tensor> values = g.forward(inputs);
            const std::vector<Tensor> grads = g.backward(values, out);
            for (int which = 0; which < 5 && ok; ++which) {
                const int node = g.input_ids()[static_cast<std::size_t>(which)];
                const Tensor fd = finite_difference_oracle(g, out, inputs, node, 1e-5);
                const Tensor& an = grads[static_cast<std::size_t>(node)];
                for (std::int64_t i = 0; i < fd.size(); ++i) {
                    const double denom = std::max({std::abs(fd[i]), std::abs(an[i]), 1e-8});
                    if (std::abs(fd[i] - an[i]) / denom > 1e-4) {
                        ok = false;
                        break;
                    }
                }
            }
        }
        check(ok, "gradient check vs finite differences");
    }

    // greedy near-optimality on seeded coverage instances
    {
        bool ok = true;
        const int instances = quick ? 10 : 25;
        for (int t = 0; t < instances && ok; ++t) {
            const CoverageInstance inst = make_coverage_instance(seed + static_cast<std::uint64_t>(t));
            const Objective obj = inst.objective();
            const SelectionTrace g = greedy(obj, 10, 4);
            const BruteForceResult opt = brute_force(obj, 10, 4);
            if (g.objective_values.back() < 0.6321205588 * opt.value) {
                ok = false;
            }
            const SelectionTrace lazy = lazy_greedy(obj, 10, 4);
            if (lazy.order != g.order) {
                ok = false;
            }
        }
        check(ok, "greedy (1-1/e) bound and lazy-greedy agreement on coverage instances");
    }

    // Mahalanobis reduces to Euclidean at identity covariance
    {
        bool ok = true;
        RngStream rng = RngStream::derive(seed, {99u});
        const std::size_t dim = 4;
        std::vector<std::vector<double>> eye(dim, std::vector<double>(dim, 0.0));
        for (std::size_t i = 0; i < dim; ++i) {
            eye[i][i] = 1.0;
        }
        const TrainStats stats = TrainStats::from_descriptor_moments(
            std::vector<double>(dim, 0.0), eye, 0.0);
        for (int t = 0; t < (quick ? 100 : 1000); ++t) {
            Descriptor d;
            for (std::size_t i = 0; i < dim; ++i) {
                d.values.push_back(2.0 * rng.uniform() - 1.0);
            }
            if (std::abs(mahalanobis_score(stats, d) - l2_norm(d.values)) > 1e-9) {
                ok = false;
                break;
            }
        }
        check(ok, "identity-covariance Mahalanobis equals Euclidean");
    }

    // modulation envelope
    {
        bool ok = true;
        RngStream rng = RngStream::derive(seed, {123u});
        TrainStats stats;
        stats.centroid = {0.0, 0.0, 0.0};
        stats.rho0 = 1.0;
        for (int t = 0; t < (quick ? 1000 : 10000); ++t) {
            const double beta = rng.uniform() * 0.99;
            const double gamma = 0.05 + 2.0 * rng.uniform();
            std::vector<double> feature = {4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0,
                                           4.0 * rng.uniform() - 2.0};
            const double u = modulation_factor(stats, feature, beta, gamma);
            if (beta > 0.0 && (u <= 1.0 - beta || u >= 1.0 + beta)) {
                ok = false;
            }
            if (modulation_factor(stats, feature, 0.0, gamma) != 1.0) {
                ok = false;
            }
        }
        check(ok, "modulation factor stays inside (1-beta, 1+beta)");
    }

    // trapezoid hand cases
    {
        const bool ok = trapezoid_auc({0.0, 1.0}, {1.0, 1.0}) == 1.0 &&
                        trapezoid_auc({0.0, 0.5, 1.0}, {0.0, 0.5, 1.0}) == 0.5 &&
                        trapezoid_auc({0.0, 0.5, 1.0}, {0.0, 1.0, 1.0}) == 0.75;
        check(ok, "trapezoid AUC hand cases");
    }

    if (failures > 0) {
        std::fprintf(stderr, "selftest: %d check(s) failed\n", failures);
        return 4;
    }
    std::printf("selftest: all checks passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-aware submodular subset selection for visual attribution"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::ignore_all);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shape benchmark");
    std::uint64_t gen_seed = 0;
    std::string gen_out = "dataset";
    DatasetConfig gen_cfg;
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--image-size", gen_cfg.image_size, "Image side length");
    gen->add_option("--train-per-class", gen_cfg.train_per_class, "Training images per class");
    gen->add_option("--test-per-class", gen_cfg.test_per_class, "ID test images per class");
    gen->add_option("--related-per-class", gen_cfg.related_per_class, "Related-shift images per class");
    gen->add_option("--complementary-per-class", gen_cfg.complementary_per_class,
                    "Complementary images per held-out shape");
    gen->add_option("--transformed-per-kind", gen_cfg.transformed_per_kind,
                    "Transformed images per transform kind");
    gen->add_option("--noise-sigma", gen_cfg.noise_sigma, "Gaussian noise sigma");
    gen->add_option("--blur-radius", gen_cfg.blur_radius, "Box blur radius in pixels");
    gen->add_option("--rotation-deg", gen_cfg.rotation_deg, "Rotation magnitude in degrees");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a reference model on a manifest");
    std::string train_manifest, train_out = "checkpoint";
    std::string train_arch = "cnn";
    TrainConfig train_cfg;
    train_cmd->add_option("--manifest", train_manifest, "Dataset manifest path")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint output directory")->required();
    train_cmd->add_option("--arch", train_arch, "Architecture: cnn or mlp")
        ->check(CLI::IsMember({"cnn", "mlp"}));
    train_cmd->add_option("--epochs", train_cfg.epochs, "Training epochs");
    train_cmd->add_option("--lr", train_cfg.lr, "Learning rate");
    train_cmd->add_option("--seed", train_cfg.seed, "Init/shuffle seed");

    // fit-stats
    auto* fit = app.add_subcommand("fit-stats", "Fit training statistics for the confidence score");
    std::string fit_manifest, fit_checkpoint, fit_out = "stats.json";
    UncertaintyConfig fit_cfg;
    std::vector<std::string> fit_layers;
    fit->add_option("--manifest", fit_manifest, "Dataset manifest path")->required();
    fit->add_option("--checkpoint", fit_checkpoint, "Model checkpoint directory")->required();
    fit->add_option("--out", fit_out, "Stats JSON output path");
    fit->add_option("--alpha", fit_cfg.alpha, "Base noise scale");
    fit->add_option("--beta", fit_cfg.beta, "Modulation amplitude, in [0,1)");
    fit->add_option("--gamma", fit_cfg.gamma, "Modulation sensitivity");
    fit->add_option("--lambda", fit_cfg.lambda_ridge, "Ridge (0: auto)");
    fit->add_option("--passes", fit_cfg.passes, "Stochastic passes T");
    fit->add_option("--seed", fit_cfg.seed, "Perturbation seed");
    fit->add_option("--layers", fit_layers, "Descriptor layers (default: all trainable)");

    // explain
    auto* explain_cmd = app.add_subcommand("explain", "Explain one image");
    std::string ex_checkpoint, ex_stats, ex_image, ex_out = "explain_out";
    PartitionArgs ex_partition;
    ObjectiveArgs ex_objective;
    int ex_k = 0;
    bool ex_lazy = false;
    std::uint64_t ex_seed = 0;
    explain_cmd->add_option("--checkpoint", ex_checkpoint, "Model checkpoint directory")->required();
    explain_cmd->add_option("--stats", ex_stats, "Stats JSON path")->required();
    explain_cmd->add_option("--image", ex_image, "Input image (PNG or PGM)")->required();
    explain_cmd->add_option("--out", ex_out, "Output directory");
    explain_cmd->add_option("--k", ex_k, "Subset budget (0: all candidates)");
    explain_cmd->add_flag("--lazy", ex_lazy, "Lazy greedy instead of plain greedy");
    explain_cmd->add_option("--seed", ex_seed, "Run seed (echoed into the report)");
    add_partition_flags(explain_cmd, ex_partition);
    add_objective_flags(explain_cmd, ex_objective);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Aggregate explanation metrics over a manifest");
    std::string ev_checkpoint, ev_stats, ev_manifest, ev_out = "eval_out";
    std::string ev_split = "test", ev_shift = "all", ev_ablation = "none";
    PartitionArgs ev_partition;
    ObjectiveArgs ev_objective;
    int ev_k = 0, ev_workers = 1, ev_random_orders = 0;
    std::uint64_t ev_seed = 0;
    eval_cmd->add_option("--checkpoint", ev_checkpoint, "Model checkpoint directory")->required();
    eval_cmd->add_option("--stats", ev_stats, "Stats JSON path")->required();
    eval_cmd->add_option("--manifest", ev_manifest, "Dataset manifest path")->required();
    eval_cmd->add_option("--out", ev_out, "Output directory");
    eval_cmd->add_option("--split", ev_split, "Split filter: train, test, or empty for all");
    eval_cmd->add_option("--shift", ev_shift, "Shift filter: id|related|complementary|transformed|all");
    eval_cmd->add_option("--k", ev_k, "Subset budget (0: all candidates)");
    eval_cmd->add_option("--workers", ev_workers, "Worker threads");
    eval_cmd->add_option("--random-orders", ev_random_orders,
                         "Random orderings per image for insertion-AUC comparison");
    eval_cmd->add_option("--ablation", ev_ablation, "none, conf-off, or both")
        ->check(CLI::IsMember({"none", "conf-off", "both"}));
    eval_cmd->add_option("--seed", ev_seed, "Run seed");
    add_partition_flags(eval_cmd, ev_partition);
    add_objective_flags(eval_cmd, ev_objective);

    // selftest
    auto* selftest_cmd = app.add_subcommand("selftest", "Run built-in numeric checks");
    std::uint64_t st_seed = 0;
    bool st_quick = false;
    selftest_cmd->add_option("--seed", st_seed, "Check seed");
    selftest_cmd->add_flag("--quick", st_quick, "Smaller trial counts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const DatasetManifest manifest = generate_dataset(gen_seed, gen_out, gen_cfg);
            std::printf("gen-data: wrote %zu images under %s\n", manifest.entries.size(),
                        gen_out.c_str());
            return 0;
        }

        if (train_cmd->parsed()) {
            const DatasetManifest manifest = load_manifest(train_manifest);
            const std::vector<DatasetEntry> entries = filter_entries(manifest, "train", "id");
            if (entries.empty()) {
                throw DataError("train: manifest has no training entries");
            }
            const std::vector<Image> images = load_images(manifest, entries);
            std::vector<int> labels;
            labels.reserve(entries.size());
            for (const DatasetEntry& e : entries) {
                labels.push_back(e.label);
            }
            const Shape input_shape{manifest.channels, manifest.image_size, manifest.image_size};
            const int classes = static_cast<int>(manifest.class_names.size());
            LayeredModel model = train_arch == "mlp"
                                     ? LayeredModel::reference_mlp(input_shape, classes)
                                     : LayeredModel::reference_cnn(input_shape, classes);
            model.init_random(train_cfg.seed);
            train_cfg.verbose = true;
            train_model(model, images, labels, train_cfg);
            save_checkpoint(model, train_out);
            std::printf("train: checkpoint written to %s\n", train_out.c_str());
            return 0;
        }

        if (fit->parsed()) {
            const DatasetManifest manifest = load_manifest(fit_manifest);
            const LayeredModel model = load_checkpoint(fit_checkpoint);
            const std::vector<DatasetEntry> entries = filter_entries(manifest, "train", "id");
            if (entries.empty()) {
                throw DataError("fit-stats: manifest has no training entries");
            }
            const std::vector<Image> images = load_images(manifest, entries);
            fit_cfg.layers = fit_layers;
            TrainStats stats = fit_train_stats(model, images, fit_cfg);
            std::vector<int> labels;
            labels.reserve(entries.size());
            for (const DatasetEntry& e : entries) {
                labels.push_back(e.label);
            }
            stats.prototypes = fit_prototypes(model, images, labels, model.class_count());
            save_train_stats(stats, fit_out);
            std::printf("fit-stats: stats written to %s\n", fit_out.c_str());
            return 0;
        }

        if (explain_cmd->parsed()) {
            const LayeredModel model = load_checkpoint(ex_checkpoint);
            const TrainStats stats = load_train_stats(ex_stats);
            const Image image = load_image(ex_image);
            ExplainConfig cfg;
            cfg.partition = to_partition_config(ex_partition);
            cfg.objective = to_objective_config(ex_objective);
            cfg.k = ex_k;
            cfg.lazy = ex_lazy;
            cfg.seed = ex_seed;
            cfg.echo_extra = {{"checkpoint", ex_checkpoint}, {"stats", ex_stats}, {"image", ex_image}};
            const ExplainResult result =
                run_explain(model, stats, image, fs::path(ex_image).filename().string(), cfg);
            write_explain_outputs(result, ex_out);
            std::printf("explain: insertion_auc=%.6f deletion_auc=%.6f confidence=%.6f -> %s\n",
                        result.report.insertion.auc, result.report.deletion.auc,
                        result.report.full_image_score.confidence, ex_out.c_str());
            return 0;
        }

        if (eval_cmd->parsed()) {
            const LayeredModel model = load_checkpoint(ev_checkpoint);
            const TrainStats stats = load_train_stats(ev_stats);
            const DatasetManifest manifest = load_manifest(ev_manifest);
            EvalConfig cfg;
            cfg.explain.partition = to_partition_config(ev_partition);
            cfg.explain.objective = to_objective_config(ev_objective);
            cfg.explain.k = ev_k;
            cfg.explain.seed = ev_seed;
            cfg.split = ev_split;
            cfg.shift = ev_shift;
            cfg.random_orders = ev_random_orders;
            cfg.workers = ev_workers;

            std::error_code ec;
            fs::create_directories(ev_out, ec);
            auto run_variant = [&](bool confidence_on, const std::string& tag) {
                EvalConfig variant = cfg;
                variant.explain.objective.confidence_enabled = confidence_on;
                const EvalTable table = run_eval(model, stats, manifest, variant);
                write_file((fs::path(ev_out) / ("eval" + tag + ".json")).string(), table.table_json);
                write_file((fs::path(ev_out) / ("eval" + tag + ".csv")).string(), table.table_csv);
                for (const EvalAggregate& a : table.aggregates) {
                    std::printf("eval%s: shift=%-13s n=%-4lld ins=%.4f del=%.4f unc=%.4f\n",
                                tag.c_str(), a.shift.c_str(), static_cast<long long>(a.count),
                                a.mean_insertion_auc, a.mean_deletion_auc, a.mean_uncertainty);
                }
            };
            if (ev_ablation == "none") {
                run_variant(cfg.explain.objective.confidence_enabled, "");
            } else if (ev_ablation == "conf-off") {
                run_variant(false, "_conf_off");
            } else {
                run_variant(true, "_conf_on");
                run_variant(false, "_conf_off");
            }
            return 0;
        }

        if (selftest_cmd->parsed()) {
            return run_selftest(st_seed, st_quick);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
