#include "subsel/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double confidence_of_raw(const TrainStats& stats, double raw) {
    return confidence_scores(stats, {raw})[0].confidence;
}

json partition_echo(const PartitionConfig& p) {
    json j;
    j["kind"] = p.kind == PartitionConfig::Kind::Grid ? "grid" : "slic";
    j["grid_n"] = p.grid_n;
    j["grid_m"] = p.grid_m;
    j["slic_k"] = p.slic.k;
    j["slic_compactness"] = p.slic.compactness;
    j["slic_iterations"] = p.slic.iterations;
    j["slic_adaptive"] = p.slic.adaptive;
    j["fill"] = p.fill;
    return j;
}

json objective_echo(const ObjectiveConfig& o) {
    json j;
    j["kind"] = o.kind == ObjectiveKind::Attribution ? "attribution" : "object";
    j["mu1"] = o.weights.mu1;
    j["mu2"] = o.weights.mu2;
    j["mu3"] = o.weights.mu3;
    j["mu4"] = o.weights.mu4;
    j["confidence_enabled"] = o.confidence_enabled;
    j["target_class"] = o.target_class;
    j["box"] = {o.query.x, o.query.y, o.query.w, o.query.h};
    j["box_class"] = o.query.class_id;
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

Component make_confidence_component(const LayeredModel& model, const CandidateSet& candidates,
                                    const TrainStats& stats, double weight) {
    Component c;
    c.name = "confidence";
    c.weight = weight;
    c.fn = [&model, &candidates, &stats](const std::vector<int>& subset) {
        if (subset.empty()) {
            return 0.0;
        }
        const Image img = compose(candidates, subset);
        const Descriptor d = compute_descriptor(model, img, stats, stats.config);
        return confidence_of_raw(stats, mahalanobis_score(stats, d));
    };
    return c;
}

Objective make_attribution_objective(const LayeredModel& model, const CandidateSet& candidates,
                                     const TrainStats& stats,
                                     const std::shared_ptr<const ScoreContext>& ctx,
                                     const ClassPrototype& prototype, int class_id,
                                     const ObjectiveConfig& config) {
    std::vector<Component> components;
    components.push_back(make_confidence_component(
        model, candidates, stats, config.confidence_enabled ? config.weights.mu1 : 0.0));

    Component eff;
    eff.name = "effectiveness";
    eff.weight = config.weights.mu2;
    eff.fn = [ctx](const std::vector<int>& subset) {
        if (subset.empty()) {
            return 0.0;
        }
        return effectiveness(*ctx, subset);
    };
    components.push_back(std::move(eff));

    Component cons;
    cons.name = "consistency";
    cons.weight = config.weights.mu3;
    auto proto = std::make_shared<ClassPrototype>(prototype);
    cons.fn = [&model, &candidates, proto](const std::vector<int>& subset) {
        return consistency(model, candidates, subset, *proto);
    };
    components.push_back(std::move(cons));

    Component colla;
    colla.name = "collaboration";
    colla.weight = config.weights.mu4;
    colla.fn = [&model, &candidates, class_id](const std::vector<int>& subset) {
        return collaboration(model, candidates, subset, class_id);
    };
    components.push_back(std::move(colla));

    return Objective(ObjectiveKind::Attribution, std::move(components));
}

Objective make_object_objective(const LayeredModel& model, const CandidateSet& candidates,
                                const TrainStats& stats, const Detector& detector,
                                const ObjectiveConfig& config) {
    std::vector<Component> components;
    components.push_back(make_confidence_component(
        model, candidates, stats, config.confidence_enabled ? config.weights.mu1 : 0.0));

    Component clue_c;
    clue_c.name = "clue";
    clue_c.weight = config.weights.mu2;
    const DetectionQuery query = config.query;
    clue_c.fn = [&detector, &candidates, query](const std::vector<int>& subset) {
        return clue(detector, candidates, subset, query);
    };
    components.push_back(std::move(clue_c));

    Component colla;
    colla.name = "collaboration_obj";
    colla.weight = config.weights.mu3;
    colla.fn = [&detector, &candidates, query](const std::vector<int>& subset) {
        return collaboration_obj(detector, candidates, subset, query);
    };
    components.push_back(std::move(colla));

    return Objective(ObjectiveKind::Object, std::move(components));
}

std::vector<std::string> component_names(const Objective& objective) {
    std::vector<std::string> names;
    for (const Component& c : objective.components()) {
        names.push_back(c.name);
    }
    return names;
}

CandidateSet build_candidates(const LayeredModel& model, const Image& image,
                              const PartitionConfig& config, const TrainStats& stats) {
    std::vector<double> fill = config.fill;
    if (fill.empty()) {
        fill = stats.fill;
    }
    if (fill.empty()) {
        fill.assign(static_cast<std::size_t>(image.channels), 0.5);
    }
    if (static_cast<int>(fill.size()) == 1 && image.channels > 1) {
        fill.assign(static_cast<std::size_t>(image.channels), fill[0]);
    }
    if (config.kind == PartitionConfig::Kind::Slic) {
        return slic_candidates(image, config.slic, std::move(fill));
    }
    const SaliencyMap saliency = gradient_saliency(model, image);
    return grid_candidates(image, saliency, config.grid_n, config.grid_m, std::move(fill));
}

ExplainResult run_explain(const LayeredModel& model, const TrainStats& stats, const Image& image,
                          const std::string& image_id, const ExplainConfig& config,
                          const Detector* detector) {
    ExplainResult result;
    result.candidates = build_candidates(model, image, config.partition, stats);
    const CandidateSet& candidates = result.candidates;
    const int ground = candidates.size();
    const int k = config.k == 0 ? ground : config.k;
    if (k < 1 || k > ground) {
        throw ConfigError("explain: k must lie in [1, |V|]");
    }

    const ForwardRecord rec = forward_with_activations(model, image);
    const int explained_class =
        config.objective.target_class >= 0 ? config.objective.target_class : rec.predicted_class;
    if (explained_class >= model.class_count()) {
        throw ConfigError("explain: target class out of range");
    }

    // Full-image uncertainty, scored as a single-element batch.
    const Descriptor full_d = compute_descriptor(model, image, stats, stats.config);
    const double full_raw = mahalanobis_score(stats, full_d);
    ExplainReport& report = result.report;
    report.full_image_score = confidence_scores(stats, {full_raw})[0];

    std::shared_ptr<const ScoreContext> ctx;
    std::unique_ptr<Objective> objective;
    std::unique_ptr<MockDetector> fallback_detector;
    if (config.objective.kind == ObjectiveKind::Attribution) {
        ctx = std::make_shared<const ScoreContext>(model, candidates);
        ClassPrototype prototype;
        prototype.class_id = explained_class;
        if (static_cast<std::size_t>(explained_class) < stats.prototypes.size() &&
            !stats.prototypes[static_cast<std::size_t>(explained_class)].empty()) {
            prototype.feature = stats.prototypes[static_cast<std::size_t>(explained_class)];
        } else {
            // no stored prototype: fall back to the class centroid proxy
            prototype.feature = stats.centroid;
        }
        objective = std::make_unique<Objective>(make_attribution_objective(
            model, candidates, stats, ctx, prototype, explained_class, config.objective));
    } else {
        if (detector == nullptr) {
            fallback_detector = std::make_unique<MockDetector>(candidates.fill);
            detector = fallback_detector.get();
        }
        config.objective.query.validate(image.width, image.height);
        objective = std::make_unique<Objective>(
            make_object_objective(model, candidates, stats, *detector, config.objective));
    }

    report.image_id = image_id;
    report.explained_class = explained_class;
    report.predicted_class = rec.predicted_class;
    report.trace = config.lazy ? lazy_greedy(*objective, ground, k) : greedy(*objective, ground, k);
    report.trace_component_names = component_names(*objective);

    report.insertion = insertion_curve(model, candidates, report.trace.order, explained_class);
    report.deletion = deletion_curve(model, candidates, report.trace.order, explained_class);

    // Confidence of each greedy prefix; reuse the breakdown when the
    // confidence component is live, recompute otherwise (ablation runs).
    const int conf_index = 0;
    for (std::size_t t = 0; t < report.trace.order.size(); ++t) {
        if (config.objective.confidence_enabled) {
            report.step_confidence.push_back(report.trace.component_breakdown[t][conf_index]);
        } else {
            const std::vector<int> prefix(report.trace.order.begin(),
                                          report.trace.order.begin() + static_cast<long>(t) + 1);
            const Descriptor d =
                compute_descriptor(model, compose(candidates, prefix), stats, stats.config);
            report.step_confidence.push_back(
                confidence_of_raw(stats, mahalanobis_score(stats, d)));
        }
    }

    json j;
    j["format_version"] = 1;
    j["image_id"] = image_id;
    j["seed"] = config.seed;
    j["explained_class"] = explained_class;
    j["predicted_class"] = rec.predicted_class;
    j["full_image"] = {{"uncertainty_raw", report.full_image_score.raw},
                       {"uncertainty", report.full_image_score.normalized},
                       {"confidence", report.full_image_score.confidence}};
    j["candidates"] = json::parse(candidate_metadata_json(candidates));
    j["selection"] = json::parse(report.trace.to_json(report.trace_component_names));
    j["insertion"] = {{"auc", report.insertion.auc}, {"xs", report.insertion.xs}, {"ys", report.insertion.ys}};
    j["deletion"] = {{"auc", report.deletion.auc}, {"xs", report.deletion.xs}, {"ys", report.deletion.ys}};
    j["step_confidence"] = report.step_confidence;
    json echo;
    echo["partition"] = partition_echo(config.partition);
    echo["objective"] = objective_echo(config.objective);
    echo["k"] = k;
    echo["lazy"] = config.lazy;
    echo["seed"] = config.seed;
    for (const auto& [key, value] : config.echo_extra) {
        echo[key] = value;
    }
    j["config"] = std::move(echo);
    report.report_json = j.dump(2) + "\n";
    return result;
}

void write_explain_outputs(const ExplainResult& result, const std::string& out_dir) {
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (!fs::exists(root)) {
        throw DataError("explain: cannot create output directory " + out_dir);
    }
    write_text_file(root / "report.json", result.report.report_json);
    write_text_file(root / "insertion.csv", curve_to_csv(result.report.insertion));
    write_text_file(root / "deletion.csv", curve_to_csv(result.report.deletion));
    for (std::size_t t = 0; t < result.report.trace.order.size(); ++t) {
        const int element = result.report.trace.order[t];
        char name[64];
        std::snprintf(name, sizeof(name), "mask_step%02zu_elem%03d.png", t, element);
        save_png_mask((root / name).string(), subset_mask(result.candidates, {element}),
                      result.candidates.base_image.height, result.candidates.base_image.width);
    }
}

EvalTable run_eval(const LayeredModel& model, const TrainStats& stats,
                   const DatasetManifest& manifest, const EvalConfig& config) {
    const std::vector<DatasetEntry> entries =
        filter_entries(manifest, config.split, config.shift);
    if (entries.empty()) {
        throw DataError("eval: no entries match split/shift filter");
    }
    if (config.workers < 1) {
        throw ConfigError("eval: workers must be >= 1");
    }
    if (config.random_orders < 0) {
        throw ConfigError("eval: random_orders must be >= 0");
    }

    std::vector<EvalRow> rows(entries.size());
    std::vector<std::string> errors(entries.size());
    std::atomic<std::size_t> cursor{0};

    auto eval_one = [&](std::size_t i) {
        const DatasetEntry& entry = entries[i];
        const Image image = load_entry_image(manifest, entry);

        ExplainConfig per_image = config.explain;
        per_image.objective.target_class = -1;  // explain the model's own prediction
        const ExplainResult res =
            run_explain(model, stats, image, entry.path, per_image, nullptr);

        EvalRow row;
        row.image = entry.path;
        row.shift = shift_name(entry.shift);
        row.transform = entry.transform;
        row.label = entry.label;
        row.predicted = res.report.predicted_class;
        row.insertion_auc = res.report.insertion.auc;
        row.deletion_auc = res.report.deletion.auc;
        row.uncertainty = res.report.full_image_score.normalized;

        if (config.random_orders > 0) {
            const int ground = res.candidates.size();
            const int k = static_cast<int>(res.report.trace.order.size());
            double sum = 0.0;
            for (int r = 0; r < config.random_orders; ++r) {
                RngStream rng = RngStream::derive(config.explain.seed,
                                                  {static_cast<std::uint64_t>(i),
                                                   static_cast<std::uint64_t>(r), 0x0D3Du});
                std::vector<int> order(static_cast<std::size_t>(ground));
                for (int u = 0; u < ground; ++u) {
                    order[static_cast<std::size_t>(u)] = u;
                }
                for (std::size_t v = order.size(); v > 1; --v) {
                    const std::size_t w = static_cast<std::size_t>(rng.uniform_int(v));
                    std::swap(order[v - 1], order[w]);
                }
                order.resize(static_cast<std::size_t>(k));
                sum += insertion_curve(model, res.candidates, order, res.report.explained_class).auc;
            }
            row.random_mean_insertion = sum / config.random_orders;
        }
        rows[i] = std::move(row);
    };

    auto worker = [&]() {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= entries.size()) {
                return;
            }
            try {
                eval_one(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    for (int w = 1; w < config.workers; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (std::thread& t : pool) {
        t.join();
    }
    for (const std::string& err : errors) {
        if (!err.empty()) {
            throw DataError("eval: " + err);
        }
    }

    EvalTable table;
    table.rows = std::move(rows);

    const std::vector<std::string> shift_order = {"id", "related", "complementary", "transformed"};
    for (const std::string& shift : shift_order) {
        EvalAggregate agg;
        agg.shift = shift;
        std::int64_t labeled = 0, correct = 0;
        for (const EvalRow& row : table.rows) {
            if (row.shift != shift) {
                continue;
            }
            ++agg.count;
            agg.mean_insertion_auc += row.insertion_auc;
            agg.mean_deletion_auc += row.deletion_auc;
            agg.mean_uncertainty += row.uncertainty;
            agg.mean_random_insertion += row.random_mean_insertion;
            if (row.label >= 0) {
                ++labeled;
                if (row.label == row.predicted) {
                    ++correct;
                }
            }
        }
        if (agg.count == 0) {
            continue;
        }
        agg.mean_insertion_auc /= static_cast<double>(agg.count);
        agg.mean_deletion_auc /= static_cast<double>(agg.count);
        agg.mean_uncertainty /= static_cast<double>(agg.count);
        agg.mean_random_insertion /= static_cast<double>(agg.count);
        agg.accuracy = labeled > 0 ? static_cast<double>(correct) / static_cast<double>(labeled) : -1.0;
        table.aggregates.push_back(std::move(agg));
    }

    json jrows = json::array();
    for (const EvalRow& row : table.rows) {
        jrows.push_back({{"image", row.image},
                         {"shift", row.shift},
                         {"transform", row.transform},
                         {"label", row.label},
                         {"predicted", row.predicted},
                         {"insertion_auc", row.insertion_auc},
                         {"deletion_auc", row.deletion_auc},
                         {"uncertainty", row.uncertainty},
                         {"random_mean_insertion", row.random_mean_insertion}});
    }
    json jaggs = json::array();
    for (const EvalAggregate& a : table.aggregates) {
        jaggs.push_back({{"shift", a.shift},
                         {"count", a.count},
                         {"accuracy", a.accuracy},
                         {"mean_insertion_auc", a.mean_insertion_auc},
                         {"mean_deletion_auc", a.mean_deletion_auc},
                         {"mean_uncertainty", a.mean_uncertainty},
                         {"mean_random_insertion", a.mean_random_insertion}});
    }
    json j = {{"format_version", 1},
              {"split", config.split},
              {"shift", config.shift},
              {"seed", config.explain.seed},
              {"random_orders", config.random_orders},
              {"confidence_enabled", config.explain.objective.confidence_enabled},
              {"rows", jrows},
              {"aggregates", jaggs}};
    table.table_json = j.dump(2) + "\n";

    std::string csv =
        "shift,count,accuracy,mean_insertion_auc,mean_deletion_auc,mean_uncertainty,mean_random_insertion\n";
    char buf[256];
    for (const EvalAggregate& a : table.aggregates) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", a.shift.c_str(),
                      static_cast<long long>(a.count), a.accuracy, a.mean_insertion_auc,
                      a.mean_deletion_auc, a.mean_uncertainty, a.mean_random_insertion);
        csv += buf;
    }
    table.table_csv = std::move(csv);
    return table;
}

}  // namespace subsel
