#include "refmatch/cli.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "refmatch/bank.hpp"
#include "refmatch/error.hpp"
#include "refmatch/io.hpp"
#include "refmatch/pipeline.hpp"
#include "refmatch/report.hpp"
#include "refmatch/rng.hpp"
#include "refmatch/synth.hpp"
#include "refmatch/train.hpp"

namespace refmatch {

namespace fs = std::filesystem;

namespace {

int thread_cap() {
    if (const char* env = std::getenv("REFMATCH_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Index-parallel loop with deterministic result slots; rethrows the first
/// worker exception.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    int workers = std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto body = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct ManifestWriter {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    json inputs = json::object();
    json outputs = json::object();
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    void write(const fs::path& path) const {
        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       started)
                             .count();
        json manifest{{"schema_version", 1},
                      {"command", command},
                      {"argv", argv},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"tool_version", kToolVersion},
                      {"duration_seconds", seconds}};
        write_text_file(path, dump_json(manifest));
    }
};

SceneConfig scene_config_from_json(const json& value) {
    SceneConfig config;
    if (value.value("schema_version", 1) != 1) {
        throw_validation("unsupported scene config schema_version");
    }
    config.n_regions = value.value("n_regions", config.n_regions);
    if (value.contains("labels")) {
        config.labels = value.at("labels").get<std::vector<std::string>>();
    } else {
        config.labels.clear();
        for (int i = 0; i < config.n_regions; ++i) {
            config.labels.push_back("region_" + std::string(1, static_cast<char>('a' + i)));
        }
    }
    config.canvas_width = value.value("canvas_width", config.canvas_width);
    config.canvas_height = value.value("canvas_height", config.canvas_height);
    config.position_sigma = value.value("position_sigma", config.position_sigma);
    config.scale_sigma = value.value("scale_sigma", config.scale_sigma);
    config.intensity_min = value.value("intensity_min", config.intensity_min);
    config.intensity_max = value.value("intensity_max", config.intensity_max);
    config.mirror_prob = value.value("mirror_prob", config.mirror_prob);
    config.region_scale = value.value("region_scale", config.region_scale);
    config.feature_dim = value.value("feature_dim", config.feature_dim);
    config.seed = value.value("seed", config.seed);
    config.validate();
    return config;
}

json scene_config_to_json(const SceneConfig& config) {
    json labels = json::array();
    for (const std::string& label : config.labels) labels.push_back(label);
    return json{{"schema_version", 1},
                {"n_regions", config.n_regions},
                {"labels", labels},
                {"canvas_width", config.canvas_width},
                {"canvas_height", config.canvas_height},
                {"position_sigma", config.position_sigma},
                {"scale_sigma", config.scale_sigma},
                {"intensity_min", config.intensity_min},
                {"intensity_max", config.intensity_max},
                {"mirror_prob", config.mirror_prob},
                {"region_scale", config.region_scale},
                {"feature_dim", config.feature_dim},
                {"seed", config.seed}};
}

struct TrainCliConfig {
    TrainConfig train;
    int d_vlm = 128;
    int grid_dim = 32;
    double grid_gain = 4.0;
};

TrainCliConfig train_config_from_json(const json& value) {
    TrainCliConfig config;
    if (value.value("schema_version", 1) != 1) {
        throw_validation("unsupported train config schema_version");
    }
    TrainConfig& t = config.train;
    t.w_bce = value.value("w_bce", t.w_bce);
    t.w_dice = value.value("w_dice", t.w_dice);
    t.learning_rate = value.value("learning_rate", t.learning_rate);
    t.warmup_fraction = value.value("warmup_fraction", t.warmup_fraction);
    t.epochs = value.value("epochs", t.epochs);
    t.batch_size = value.value("batch_size", t.batch_size);
    t.seed = value.value("seed", t.seed);
    t.weight_decay = value.value("weight_decay", t.weight_decay);
    if (value.contains("hidden_dims")) {
        t.hidden_dims = value.at("hidden_dims").get<std::vector<int>>();
    }
    t.init_scale = value.value("init_scale", t.init_scale);
    config.d_vlm = value.value("d_vlm", config.d_vlm);
    config.grid_dim = value.value("grid_dim", config.grid_dim);
    config.grid_gain = value.value("grid_gain", config.grid_gain);
    t.validate();
    return config;
}

std::vector<fs::path> list_scene_dirs(const fs::path& scenes_dir) {
    if (!fs::is_directory(scenes_dir)) {
        throw_validation("scenes directory not found: " + scenes_dir.string());
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(scenes_dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw_validation("no scene_* directories under " + scenes_dir.string());
    }
    return dirs;
}

json assignment_to_json(const Assignment& assignment) {
    json pairs = json::array();
    for (auto [i, j] : assignment.pairs) pairs.push_back(json::array({i, j}));
    json refined = json::array();
    for (const RefinedMatch& r : assignment.refined) {
        refined.push_back(json{{"label", r.label},
                               {"bbox", {r.box.x, r.box.y, r.box.w, r.box.h}},
                               {"cost", r.cost}});
    }
    return json{{"pairs", pairs},
                {"confidences", assignment.confidences},
                {"unassigned_labels", assignment.unassigned_labels},
                {"refined", refined}};
}

BBox bbox_from_json(const json& value) {
    if (!value.is_array() || value.size() != 4) {
        throw_validation("bbox must be a [x, y, w, h] array");
    }
    BBox box{value.at(0).get<double>(), value.at(1).get<double>(), value.at(2).get<double>(),
             value.at(3).get<double>()};
    box.validate();
    return box;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text_file(out_path, text);
    }
}

// ---- subcommand handlers ----

int cmd_gen(const std::string& config_path, int count, const std::string& out_dir,
            ManifestWriter& manifest) {
    if (count <= 0) {
        throw_validation("--count must be positive");
    }
    SceneConfig base = scene_config_from_json(load_json_file(config_path));
    manifest.config = scene_config_to_json(base);
    manifest.inputs["config"] = config_path;
    fs::create_directories(out_dir);

    Rng master(base.seed);
    std::vector<std::string> scene_names(static_cast<std::size_t>(count));
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
        SceneConfig config = base;
        config.seed = master.split(i).seed();
        ScenePair pair = generate_scene_pair(config);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%06zu", i);
        save_scene(pair, fs::path(out_dir) / name);
        scene_names[i] = name;
    });
    json scenes = json::array();
    for (const std::string& name : scene_names) scenes.push_back(name);
    manifest.outputs["scenes"] = scenes;
    manifest.write(fs::path(out_dir) / "manifest.json");
    return 0;
}

int cmd_bank(const std::string& scenes_dir, const std::string& out_path,
             ManifestWriter& manifest) {
    manifest.inputs["scenes"] = scenes_dir;
    ReferenceBank bank;
    for (const fs::path& dir : list_scene_dirs(scenes_dir)) {
        Template tmpl = template_from_json(load_json_file(dir / "template.json"));
        tmpl.image_ref = (dir.filename() / "reference.pgm").string();
        if (bank.templates.empty()) bank.dim = tmpl.feature.dim();
        bank.templates.push_back(std::move(tmpl));
    }
    save_bank(bank, out_path);
    manifest.outputs["bank"] = out_path;
    manifest.config = json{{"templates", bank.templates.size()}, {"dim", bank.dim}};
    manifest.write(out_path + ".manifest.json");
    return 0;
}

int cmd_retrieve(const std::string& bank_path, const std::string& image_path, int k,
                 const std::string& require_labels_csv, const std::string& out_path) {
    ReferenceBank bank = load_bank(bank_path);
    Image image = load_pgm(image_path);
    FeatureVector query = extract_features(image, bank.dim);
    std::vector<std::string> require_labels;
    if (!require_labels_csv.empty()) {
        std::size_t pos = 0;
        while (pos <= require_labels_csv.size()) {
            std::size_t comma = require_labels_csv.find(',', pos);
            if (comma == std::string::npos) comma = require_labels_csv.size();
            require_labels.push_back(require_labels_csv.substr(pos, comma - pos));
            pos = comma + 1;
        }
    }
    std::vector<RetrievalHit> hits = retrieve(bank, query, k, require_labels);
    json out_hits = json::array();
    for (const RetrievalHit& hit : hits) {
        out_hits.push_back(json{{"id", bank.templates[static_cast<std::size_t>(hit.index)].id},
                                {"index", hit.index},
                                {"similarity", hit.similarity}});
    }
    emit(dump_json(json{{"hits", out_hits}}), out_path);
    return 0;
}

int cmd_match(const std::string& input_path, const MatchConfig& config,
              const std::string& out_path, ManifestWriter& manifest) {
    json input = load_json_file(input_path);
    std::vector<PredBox> preds;
    for (const auto& p : input.at("preds")) {
        PredBox pred;
        pred.box = bbox_from_json(p.at("bbox"));
        if (p.contains("feature")) {
            pred.feature = FeatureVector{p.at("feature").get<std::vector<double>>()};
        }
        preds.push_back(std::move(pred));
    }
    std::vector<Prototype> prototypes;
    for (const auto& p : input.at("prototypes")) {
        Prototype proto;
        proto.label = p.value("label", "");
        if (p.contains("bbox")) proto.box = bbox_from_json(p.at("bbox"));
        if (p.contains("feature")) {
            proto.feature = FeatureVector{p.at("feature").get<std::vector<double>>()};
        }
        prototypes.push_back(std::move(proto));
    }
    Assignment assignment = match_with_refinement(preds, prototypes, config);
    manifest.inputs["input"] = input_path;
    manifest.config = json{{"reg", config.sinkhorn.reg},
                           {"tol", config.sinkhorn.tol},
                           {"max_iter", config.sinkhorn.max_iter},
                           {"tau_conf", config.tau_conf},
                           {"tau_cost_percentile", config.tau_cost_percentile},
                           {"w_spatial", config.weights.spatial},
                           {"w_semantic", config.weights.semantic}};
    std::string rendered = dump_json(assignment_to_json(assignment));
    emit(rendered, out_path);
    if (!out_path.empty()) {
        manifest.outputs["assignment"] = out_path;
        manifest.write(out_path + ".manifest.json");
    }
    return 0;
}

struct EvalArgs {
    std::string mode = "vqa";
    std::string scenes_dir;
    std::string bank_path;
    std::string out_path;
    std::string adapter_path;
    std::string rewards_path;
    std::string debug_path;
    std::string assignment = "ot";
    std::string region_source = "gt";
    std::string giou_mode = "per-sample";
    bool no_mirror = false;
    long curriculum_step = 0;
    int d_vlm = 128;
    int grid_dim = 32;
    double grid_gain = 4.0;
    double reg = 0.05;
    double tau_conf = 0.5;
};

int cmd_eval(const EvalArgs& args, ManifestWriter& manifest) {
    PipelineConfig config;
    if (args.mode == "vqa") {
        config.mode = EvalMode::Vqa;
    } else if (args.mode == "bbox") {
        config.mode = EvalMode::Bbox;
    } else if (args.mode == "seg") {
        config.mode = EvalMode::Seg;
    } else {
        throw_validation("unknown eval mode '" + args.mode + "'");
    }
    config.assignment = args.assignment == "independent" ? AssignStrategy::IndependentNearest
                                                         : AssignStrategy::OptimalTransport;
    config.region_source = args.region_source == "detector" ? RegionSource::Detector
                                                            : RegionSource::GroundTruthHidden;
    config.try_mirror = !args.no_mirror;
    config.curriculum_step = args.curriculum_step;
    config.d_vlm = args.d_vlm;
    config.grid_dim = args.grid_dim;
    config.grid_gain = args.grid_gain;
    config.match.sinkhorn.reg = args.reg;
    config.match.tau_conf = args.tau_conf;
    config.emit_rewards = !args.rewards_path.empty();
    config.debug = !args.debug_path.empty();
    if (!args.adapter_path.empty()) {
        config.adapter = load_adapter(args.adapter_path);
    }

    ReferenceBank bank = load_bank(args.bank_path);
    std::vector<fs::path> scene_dirs = list_scene_dirs(args.scenes_dir);
    fs::path scenes_root(args.scenes_dir);
    config.image_loader = [scenes_root](const Template& tmpl) {
        if (tmpl.image_ref.empty()) {
            throw_validation("template '" + tmpl.id + "' has no image_ref");
        }
        return load_pgm(scenes_root / tmpl.image_ref);
    };

    std::vector<SceneOutcome> outcomes(scene_dirs.size());
    parallel_for(scene_dirs.size(), [&](std::size_t i) {
        ScenePair pair = load_scene(scene_dirs[i]);
        outcomes[i] = run_pipeline(bank, pair, config);
    });

    GiouAggregation giou = args.giou_mode == "pooled" ? GiouAggregation::DatasetPooled
                                                      : GiouAggregation::PerSampleMean;
    MetricReport report = aggregate_outcomes(outcomes, giou);
    std::string rendered = write_report(report, ReportFormat::Json);
    emit(rendered, args.out_path);

    if (!args.rewards_path.empty()) {
        std::string lines;
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            for (const RewardResult& reward : outcomes[i].rewards) {
                json components = json::object();
                for (const auto& [term, value] : reward.components) components[term] = value;
                json line{{"scene", scene_dirs[i].filename().string()},
                          {"total", reward.total},
                          {"components", components},
                          {"valid_format", reward.valid_format}};
                lines += dump_json(line, 0);
            }
        }
        write_text_file(args.rewards_path, lines);
        manifest.outputs["rewards"] = args.rewards_path;
    }
    if (!args.debug_path.empty()) {
        std::string lines;
        for (const SceneOutcome& outcome : outcomes) {
            lines += dump_json(outcome.debug, 0);
        }
        write_text_file(args.debug_path, lines);
        manifest.outputs["debug"] = args.debug_path;
    }

    manifest.inputs["scenes"] = args.scenes_dir;
    manifest.inputs["bank"] = args.bank_path;
    manifest.config = json{{"mode", args.mode},
                           {"assignment", args.assignment},
                           {"region_source", args.region_source},
                           {"try_mirror", config.try_mirror},
                           {"giou", args.giou_mode},
                           {"curriculum_step", args.curriculum_step},
                           {"d_vlm", args.d_vlm},
                           {"grid_dim", args.grid_dim},
                           {"grid_gain", args.grid_gain},
                           {"reg", args.reg},
                           {"tau_conf", args.tau_conf}};
    if (!args.out_path.empty()) {
        manifest.outputs["report"] = args.out_path;
        manifest.write(args.out_path + ".manifest.json");
    }
    return 0;
}

int cmd_train_adapter(const std::string& config_path, const std::string& scenes_dir,
                      const std::string& out_path, const std::string& trace_path,
                      ManifestWriter& manifest) {
    TrainCliConfig config = train_config_from_json(load_json_file(config_path));
    std::vector<fs::path> scene_dirs = list_scene_dirs(scenes_dir);

    std::vector<std::vector<TrainInstance>> per_scene(scene_dirs.size());
    parallel_for(scene_dirs.size(), [&](std::size_t i) {
        ScenePair pair = load_scene(scene_dirs[i]);
        FeatureGrid ref_grid =
            make_feature_grid(pair.reference_image, config.grid_dim, config.grid_gain);
        MemoryBank memory = build_memory_slots(pair.reference, ref_grid);
        FeatureGrid tgt_grid =
            make_feature_grid(pair.target_image, config.grid_dim, config.grid_gain);
        for (const GtRegion& gt : pair.target_regions) {
            TrainInstance instance;
            instance.embedding = make_seg_embedding(pair, gt.label, config.d_vlm);
            instance.bank = memory;
            instance.grid = tgt_grid;
            instance.gt = gt.mask;
            per_scene[i].push_back(std::move(instance));
        }
    });
    std::vector<TrainInstance> dataset;
    for (auto& group : per_scene) {
        for (auto& instance : group) dataset.push_back(std::move(instance));
    }

    TrainResult result = train_adapter(dataset, config.train);
    save_adapter(result.params, out_path);

    std::string trace = "step,loss,dice,lr\n";
    for (std::size_t s = 0; s < result.trace.steps.size(); ++s) {
        const TrainStepStat& stat = result.trace.steps[s];
        trace += std::to_string(s) + "," + format_double(stat.loss) + "," +
                 format_double(stat.dice) + "," + format_double(stat.lr) + "\n";
    }
    write_text_file(trace_path, trace);

    manifest.inputs["config"] = config_path;
    manifest.inputs["scenes"] = scenes_dir;
    manifest.outputs["params"] = out_path;
    manifest.outputs["trace"] = trace_path;
    manifest.config = json{{"instances", dataset.size()},
                           {"steps", result.trace.steps.size()},
                           {"seed", config.train.seed}};
    manifest.write(out_path + ".manifest.json");
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& format,
               const std::string& out_path, const std::string& svg_path) {
    json input = load_json_file(in_path);
    if (input.is_array()) {
        if (svg_path.empty()) {
            throw_validation("sweep array input requires --svg");
        }
        std::vector<std::pair<double, double>> points;
        for (const auto& p : input) {
            points.emplace_back(p.at("sigma").get<double>(), p.at("accuracy").get<double>());
        }
        write_text_file(svg_path, svg_scatter(points, "noise sigma", "accuracy"));
        return 0;
    }
    MetricReport report = report_from_json(input);
    ReportFormat render_format;
    if (format == "json") {
        render_format = ReportFormat::Json;
    } else if (format == "csv") {
        render_format = ReportFormat::Csv;
    } else if (format == "table") {
        render_format = ReportFormat::Table;
    } else {
        throw_validation("unknown report format '" + format + "'");
    }
    emit(write_report(report, render_format), out_path);
    if (!svg_path.empty()) {
        std::vector<std::pair<double, double>> points{{0.0, report.accuracy}};
        write_text_file(svg_path, svg_scatter(points, "noise sigma", "accuracy"));
    }
    return 0;
}

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation:
            return "validation";
        case ErrorKind::Parse:
            return "parse";
        case ErrorKind::Internal:
            return "internal";
    }
    return "internal";
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"reference-matching toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate synthetic scene pairs");
    std::string gen_config, gen_out;
    int gen_count = 1;
    gen->add_option("--config", gen_config, "scene config JSON")->required();
    gen->add_option("--count", gen_count, "number of scenes")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    // bank
    auto* bank = app.add_subcommand("bank", "assemble a reference bank from scenes");
    std::string bank_scenes, bank_out;
    bank->add_option("--scenes", bank_scenes, "scenes directory")->required();
    bank->add_option("--out", bank_out, "bank JSON path")->required();

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "query the bank by image");
    std::string retr_bank, retr_image, retr_labels, retr_out;
    int retr_k = 1;
    retrieve_cmd->add_option("--bank", retr_bank, "bank JSON")->required();
    retrieve_cmd->add_option("--image", retr_image, "query image (PGM)")->required();
    retrieve_cmd->add_option("--k", retr_k, "number of hits");
    retrieve_cmd->add_option("--require-labels", retr_labels, "comma-separated label filter");
    retrieve_cmd->add_option("--out", retr_out, "output path (stdout if omitted)");

    // match
    auto* match_cmd = app.add_subcommand("match", "optimal-transport label matching");
    std::string match_input, match_out;
    MatchConfig match_config;
    match_cmd->add_option("--input", match_input, "JSON with preds and prototypes")->required();
    match_cmd->add_option("--reg", match_config.sinkhorn.reg, "entropic regularization");
    match_cmd->add_option("--tol", match_config.sinkhorn.tol, "marginal tolerance");
    match_cmd->add_option("--max-iter", match_config.sinkhorn.max_iter, "iteration cap");
    match_cmd->add_option("--tau-conf", match_config.tau_conf, "confidence gate");
    match_cmd->add_option("--tau-cost-pct", match_config.tau_cost_percentile,
                          "cost gate percentile");
    match_cmd->add_option("--w-spatial", match_config.weights.spatial, "spatial weight");
    match_cmd->add_option("--w-semantic", match_config.weights.semantic, "semantic weight");
    match_cmd->add_option("--out", match_out, "output path (stdout if omitted)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "run the pipeline over scenes");
    EvalArgs eval_args;
    eval_cmd->add_option("--mode", eval_args.mode, "vqa | bbox | seg")->required();
    eval_cmd->add_option("--scenes", eval_args.scenes_dir, "scenes directory")->required();
    eval_cmd->add_option("--bank", eval_args.bank_path, "bank JSON")->required();
    eval_cmd->add_option("--out", eval_args.out_path, "report JSON path");
    eval_cmd->add_option("--adapter", eval_args.adapter_path, "adapter params (seg mode)");
    eval_cmd->add_option("--rewards", eval_args.rewards_path, "per-sample reward JSONL path");
    eval_cmd->add_option("--debug", eval_args.debug_path, "per-scene debug JSONL path");
    eval_cmd->add_option("--assignment", eval_args.assignment, "ot | independent");
    eval_cmd->add_option("--region-source", eval_args.region_source, "gt | detector");
    eval_cmd->add_option("--giou", eval_args.giou_mode, "per-sample | pooled");
    eval_cmd->add_flag("--no-mirror", eval_args.no_mirror, "disable the mirror hypothesis");
    eval_cmd->add_option("--curriculum-step", eval_args.curriculum_step, "reward step");
    eval_cmd->add_option("--d-vlm", eval_args.d_vlm, "seg embedding dim");
    eval_cmd->add_option("--grid-dim", eval_args.grid_dim, "feature grid dim");
    eval_cmd->add_option("--grid-gain", eval_args.grid_gain, "feature grid gain");
    eval_cmd->add_option("--reg", eval_args.reg, "sinkhorn regularization");
    eval_cmd->add_option("--tau-conf", eval_args.tau_conf, "confidence gate");

    // train-adapter
    auto* train_cmd = app.add_subcommand("train-adapter", "train the fusion adapter");
    std::string train_config_path, train_scenes, train_out, train_trace;
    train_cmd->add_option("--config", train_config_path, "train config JSON")->required();
    train_cmd->add_option("--scenes", train_scenes, "scenes directory")->required();
    train_cmd->add_option("--out", train_out, "adapter params output")->required();
    train_cmd->add_option("--trace", train_trace, "trace CSV output")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "render a stored report");
    std::string report_in, report_format = "table", report_out, report_svg;
    report_cmd->add_option("--in", report_in, "report JSON (or sweep array)")->required();
    report_cmd->add_option("--format", report_format, "json | csv | table");
    report_cmd->add_option("--out", report_out, "output path (stdout if omitted)");
    report_cmd->add_option("--svg", report_svg, "accuracy-vs-noise scatter SVG path");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        app.exit(e);
        return 1;
    }

    ManifestWriter manifest;
    manifest.argv = args;
    try {
        if (gen->parsed()) {
            manifest.command = "gen";
            return cmd_gen(gen_config, gen_count, gen_out, manifest);
        }
        if (bank->parsed()) {
            manifest.command = "bank";
            return cmd_bank(bank_scenes, bank_out, manifest);
        }
        if (retrieve_cmd->parsed()) {
            return cmd_retrieve(retr_bank, retr_image, retr_k, retr_labels, retr_out);
        }
        if (match_cmd->parsed()) {
            manifest.command = "match";
            return cmd_match(match_input, match_config, match_out, manifest);
        }
        if (eval_cmd->parsed()) {
            manifest.command = "eval";
            return cmd_eval(eval_args, manifest);
        }
        if (train_cmd->parsed()) {
            manifest.command = "train-adapter";
            return cmd_train_adapter(train_config_path, train_scenes, train_out, train_trace,
                                     manifest);
        }
        if (report_cmd->parsed()) {
            return cmd_report(report_in, report_format, report_out, report_svg);
        }
        throw_internal("no subcommand dispatched");
    } catch (const Error& e) {
        json error{{"error", {{"kind", error_kind_name(e.kind())}, {"message", e.what()}}}};
        std::cerr << dump_json(error, 0);
        return e.kind() == ErrorKind::Internal ? 2 : 1;
    } catch (const std::exception& e) {
        json error{{"error", {{"kind", "internal"}, {"message", e.what()}}}};
        std::cerr << dump_json(error, 0);
        return 2;
    }
}

}  // namespace refmatch
