#include "molr/cli.hpp"

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molr/analysis.hpp"
#include "molr/checkpoint.hpp"
#include "molr/metrics.hpp"
#include "molr/microtasks.hpp"
#include "molr/smiles.hpp"
#include "molr/training.hpp"

namespace molr {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Ctx {
    std::string subcommand;
    ojson cfg;
    std::string out_dir;
    uint64_t seed = 0;
};

ojson load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    try {
        return ojson::parse(in);
    } catch (const ojson::exception& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
}

void validate_keys(const ojson& obj, const std::set<std::string>& allowed,
                   const std::string& context) {
    if (!obj.is_object()) throw UsageError("config section '" + context + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw UsageError("unknown config key '" + key + "' in " + context);
    }
}

void apply_override(ojson& cfg, const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw UsageError("override must be key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    std::string ptr = "/" + key;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    ojson value;
    try {
        value = ojson::parse(raw);
    } catch (const ojson::exception&) {
        value = raw;  // bare strings need no quoting
    }
    cfg[ojson::json_pointer(ptr)] = value;
}

std::string require_string(const Ctx& ctx, const std::string& key) {
    if (!ctx.cfg.contains(key) || !ctx.cfg.at(key).is_string())
        throw UsageError(ctx.subcommand + ": config key '" + key + "' (string) is required");
    return ctx.cfg.at(key).get<std::string>();
}

std::string require_file(const Ctx& ctx, const std::string& key) {
    std::string path = require_string(ctx, key);
    if (!fs::exists(path))
        throw DataError(ctx.subcommand + ": missing file for '" + key + "': " + path);
    return path;
}

std::string optional_file(const Ctx& ctx, const std::string& key) {
    if (!ctx.cfg.contains(key)) return "";
    std::string path = ctx.cfg.at(key).get<std::string>();
    if (!fs::exists(path))
        throw DataError(ctx.subcommand + ": missing file for '" + key + "': " + path);
    return path;
}

template <typename T>
T cfg_or(const Ctx& ctx, const std::string& key, T fallback) {
    if (!ctx.cfg.contains(key)) return fallback;
    try {
        return ctx.cfg.at(key).get<T>();
    } catch (const ojson::exception&) {
        throw UsageError(ctx.subcommand + ": bad value type for config key '" + key + "'");
    }
}

template <typename T>
T cfg_or(const ojson& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

void write_snapshot(const Ctx& ctx) {
    fs::create_directories(ctx.out_dir);
    ojson snap;
    snap["subcommand"] = ctx.subcommand;
    for (const auto& [k, v] : ctx.cfg.items())
        if (k != "subcommand") snap[k] = v;
    snap["seed"] = ctx.seed;
    snap["out"] = ctx.out_dir;
    open_out((fs::path(ctx.out_dir) / "resolved_config.json").string()) << snap.dump(2) << "\n";
}

void write_json(const std::string& path, const ojson& j) { open_out(path) << j.dump(2) << "\n"; }

Model load_model(const Ctx& ctx, const std::string& key = "checkpoint") {
    std::string path = require_file(ctx, key);
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw DataError(ctx.subcommand + ": cannot load checkpoint " + path + ": " + e.what());
    }
}

std::string out_path(const Ctx& ctx, const std::string& name) {
    return (fs::path(ctx.out_dir) / name).string();
}

std::vector<TaskRecord> load_tasks(const std::string& path) {
    try {
        return load_task_records(path);
    } catch (const std::exception& e) {
        throw DataError("bad records file " + path + ": " + e.what());
    }
}

std::vector<CoTRecord> load_cots(const std::string& path) {
    try {
        return load_cot_records(path);
    } catch (const std::exception& e) {
        throw DataError("bad records file " + path + ": " + e.what());
    }
}

std::string generate_text(const Model& model, const std::string& prompt,
                          const GenerateOptions& opt, const AdapterSet* adapters) {
    const Vocabulary& v = model.vocab();
    std::vector<int> p = {v.bos()};
    for (int id : v.encode(prompt)) p.push_back(id);
    std::vector<int> out = model.generate(p, opt, adapters);
    return v.decode(std::vector<int>(out.begin() + static_cast<long>(p.size()), out.end()));
}

// ---------------------------------------------------------------- prepare-data

int run_prepare_data(Ctx& ctx) {
    if (!ctx.cfg.contains("inputs") || !ctx.cfg.at("inputs").is_array() ||
        ctx.cfg.at("inputs").empty())
        throw UsageError("prepare-data: config key 'inputs' (non-empty array of paths) required");
    std::vector<std::vector<TaskRecord>> subsets;
    for (const auto& p : ctx.cfg.at("inputs")) {
        std::string path = p.get<std::string>();
        if (!fs::exists(path)) throw DataError("prepare-data: missing input file: " + path);
        subsets.push_back(load_tasks(path));
    }
    SplitResult split = aggregate_and_split(subsets, ctx.seed);
    write_snapshot(ctx);
    save_task_records(split.train, out_path(ctx, "train.jsonl"));
    save_task_records(split.valid, out_path(ctx, "valid.jsonl"));
    save_task_records(split.test, out_path(ctx, "test.jsonl"));
    std::cerr << "prepare-data: " << split.train.size() << "/" << split.valid.size() << "/"
              << split.test.size() << " train/valid/test records\n";
    return kExitOk;
}

// ---------------------------------------------------------------------- sample

int run_sample(Ctx& ctx) {
    auto records = load_tasks(require_file(ctx, "records"));
    Model model = load_model(ctx);
    size_t quota = cfg_or<size_t>(ctx, "quota", records.size() / 2);
    int grid = cfg_or<int>(ctx, "grid", 10);
    Mat coords = reduce_2d(embed_records(records, model));
    std::vector<size_t> picked = stratified_sample(coords, quota, grid, ctx.seed);
    std::vector<TaskRecord> sampled;
    for (size_t i : picked) sampled.push_back(records[i]);
    write_snapshot(ctx);
    save_task_records(sampled, out_path(ctx, "sampled.jsonl"));
    std::cerr << "sample: kept " << sampled.size() << " of " << records.size() << " records\n";
    return kExitOk;
}

// -------------------------------------------------------------------- annotate

int run_annotate(Ctx& ctx) {
    auto records = load_tasks(require_file(ctx, "records"));
    std::unique_ptr<ChatClient> client;
    if (ctx.cfg.contains("mock_responses")) {
        ojson replies = load_json_file(require_file(ctx, "mock_responses"));
        if (!replies.is_array()) throw DataError("annotate: mock_responses must be a JSON array");
        client = std::make_unique<MockChatClient>(replies.get<std::vector<std::string>>());
    } else if (ctx.cfg.contains("http")) {
        const ojson& h = ctx.cfg.at("http");
        validate_keys(h, {"host", "port", "path", "model", "api_key_env"}, "annotate.http");
        client = std::make_unique<HttpChatClient>(
            h.at("host").get<std::string>(), h.at("port").get<int>(),
            cfg_or<std::string>(h, "path", "/v1/chat/completions"),
            cfg_or<std::string>(h, "model", "default"),
            cfg_or<std::string>(h, "api_key_env", "MOLR_CHAT_API_KEY"));
    } else {
        throw UsageError("annotate: one of 'mock_responses' or 'http' is required");
    }
    AnnotateResult res = annotate_cot(records, *client);
    write_snapshot(ctx);
    save_cot_records(res.records, out_path(ctx, "cot.jsonl"));
    write_json(out_path(ctx, "skipped.json"), ojson(res.skipped_ids));
    std::cerr << "annotate: " << res.records.size() << " annotated, " << res.skipped_ids.size()
              << " skipped\n";
    return kExitOk;
}

// --------------------------------------------------------------------- denoise

int run_denoise(Ctx& ctx) {
    auto records = load_cots(require_file(ctx, "records"));
    std::vector<std::string> anchors = default_anchor_phrases();
    if (ctx.cfg.contains("anchors"))
        anchors = ctx.cfg.at("anchors").get<std::vector<std::string>>();
    DenoiseResult res = denoise(records, anchors);
    double fraction = cfg_or<double>(ctx, "validation_fraction", 0.05);
    auto ids = validation_sample(res.records, fraction, ctx.seed);
    write_snapshot(ctx);
    save_cot_records(res.records, out_path(ctx, "denoised.jsonl"));
    write_json(out_path(ctx, "dropped.json"), ojson(res.dropped_ids));
    write_validation_manifest(ids, out_path(ctx, "validation_manifest.csv"));
    std::cerr << "denoise: " << res.records.size() << " kept, " << res.dropped_ids.size()
              << " dropped, " << ids.size() << " queued for review\n";
    return kExitOk;
}

// ----------------------------------------------------------------------- train

StageConfig stage_from_json(Stage stage, const ojson& j, uint64_t fallback_seed) {
    validate_keys(j, {"lr", "batch_size", "steps", "seed", "clip_norm", "temperature", "max_new",
                      "paired", "train_prediction_in_rl"},
                  "train.stage" + std::to_string(static_cast<int>(stage)));
    StageConfig c;
    c.stage = stage;
    c.lr = cfg_or<double>(j, "lr", 1e-3);
    c.batch_size = cfg_or<int>(j, "batch_size", 8);
    c.steps = cfg_or<int>(j, "steps", 100);
    c.seed = cfg_or<uint64_t>(j, "seed", fallback_seed + static_cast<uint64_t>(stage));
    c.clip_norm = cfg_or<double>(j, "clip_norm", stage == Stage::Reinforce ? 1.0 : 0.0);
    c.temperature = cfg_or<double>(j, "temperature", 1.0);
    c.max_new = cfg_or<int>(j, "max_new", 48);
    c.paired = cfg_or<bool>(j, "paired", true);
    c.train_prediction_in_rl = cfg_or<bool>(j, "train_prediction_in_rl", false);
    return c;
}

ModelConfig model_from_json(const ojson& j) {
    validate_keys(j, {"d_model", "n_layers", "n_heads", "max_seq", "ffn_mult", "lora_rank",
                      "lora_scaling"},
                  "train.model");
    ModelConfig c = micro_config();
    c.d_model = cfg_or<int>(j, "d_model", c.d_model);
    c.n_layers = cfg_or<int>(j, "n_layers", c.n_layers);
    c.n_heads = cfg_or<int>(j, "n_heads", c.n_heads);
    c.max_seq = cfg_or<int>(j, "max_seq", c.max_seq);
    c.ffn_mult = cfg_or<int>(j, "ffn_mult", c.ffn_mult);
    c.lora_rank = cfg_or<int>(j, "lora_rank", c.lora_rank);
    c.lora_scaling = cfg_or<double>(j, "lora_scaling", c.lora_scaling);
    return c;
}

int run_train(Ctx& ctx) {
    PipelineConfig pcfg;
    pcfg.stage1 = stage_from_json(Stage::InstructionSFT, cfg_or<ojson>(ctx, "stage1", ojson::object()),
                                  ctx.seed);
    pcfg.stage2 = stage_from_json(Stage::CoTSFT, cfg_or<ojson>(ctx, "stage2", ojson::object()),
                                  ctx.seed);
    pcfg.stage3 = stage_from_json(Stage::Reinforce, cfg_or<ojson>(ctx, "stage3", ojson::object()),
                                  ctx.seed);
    pcfg.start_stage = cfg_or<int>(ctx, "start_stage", 1);
    pcfg.resume_checkpoint = optional_file(ctx, "resume_checkpoint");
    if (std::string p = optional_file(ctx, "stage1_data"); !p.empty())
        pcfg.stage1_data = load_tasks(p);
    else if (ctx.cfg.contains("stage1_data"))
        throw DataError("train: missing dataset: " + ctx.cfg.at("stage1_data").get<std::string>());
    if (std::string p = optional_file(ctx, "stage2_data"); !p.empty())
        pcfg.stage2_data = load_cots(p);
    if (std::string p = optional_file(ctx, "stage3_prompts"); !p.empty())
        pcfg.stage3_prompts = load_tasks(p);

    Model model;
    if (!pcfg.resume_checkpoint.empty()) {
        model = load_model(ctx, "resume_checkpoint");
    } else {
        Vocabulary v;
        for (const auto& r : pcfg.stage1_data) {
            v.extend_from_text(prediction_prompt(r.task, r.input));
            v.extend_from_text(inference_prompt(r.task, r.input, r.output));
            v.extend_from_text(r.output);
        }
        for (const auto& c : pcfg.stage2_data) {
            v.extend_from_text(inference_prompt(c.base.task, c.base.input, c.base.output));
            v.extend_from_text(c.think);
            v.extend_from_text(c.answer);
        }
        for (const auto& r : pcfg.stage3_prompts) {
            v.extend_from_text(prediction_prompt(r.task, r.input));
            v.extend_from_text(r.output);
        }
        Rng rng(ctx.seed);
        model = Model(model_from_json(cfg_or<ojson>(ctx, "model", ojson::object())), v, rng);
        Rng arng = rng.split("adapters");
        for (int g = 1; g <= kNumGroups; ++g) {
            model.create_lora_set(adapter_set_name(g, AdapterPhase::Prediction), arng);
            model.create_lora_set(adapter_set_name(g, AdapterPhase::Inference), arng);
        }
        ojson pj = cfg_or<ojson>(ctx, "pretrain", ojson::object());
        validate_keys(pj, {"lr", "batch_size", "steps"}, "train.pretrain");
        int psteps = cfg_or<int>(pj, "steps", 0);
        if (psteps > 0) {
            std::vector<std::string> corpus;
            for (const auto& r : pcfg.stage1_data)
                corpus.push_back(prediction_prompt(r.task, r.input) + r.output);
            for (const auto& c : pcfg.stage2_data)
                corpus.push_back(inference_prompt(c.base.task, c.base.input, c.base.output) +
                                 cot_target(c));
            if (corpus.empty()) throw DataError("train: pretraining requested without data");
            StageConfig pc;
            pc.lr = cfg_or<double>(pj, "lr", 3e-3);
            pc.batch_size = cfg_or<int>(pj, "batch_size", 8);
            pc.steps = psteps;
            pc.seed = ctx.seed;
            Optimizer popt;
            double ploss = lm_pretrain(model, corpus, popt, pc);
            std::cerr << "train: pretrain final loss " << ploss << "\n";
        }
    }

    write_snapshot(ctx);
    pcfg.out_dir = ctx.out_dir;
    PipelineReport report = run_pipeline(model, pcfg);
    ojson rep;
    rep["checkpoints"] = report.checkpoints;
    rep["stage_logs"] = report.stage_logs;
    for (const auto& [stage, loss] : report.final_loss)
        rep["final_loss"][std::to_string(stage)] = loss;
    write_json(out_path(ctx, "report.json"), rep);
    std::cerr << "train: wrote " << report.checkpoints.size() << " checkpoint(s)\n";
    return kExitOk;
}

// ------------------------------------------------------------------------ eval

int run_eval(Ctx& ctx) {
    auto records = load_tasks(require_file(ctx, "records"));
    Model model = load_model(ctx);
    if (ctx.cfg.contains("task")) {
        auto t = task_from_name(ctx.cfg.at("task").get<std::string>());
        if (!t) throw UsageError("eval: unknown task '" +
                                 ctx.cfg.at("task").get<std::string>() + "'");
        std::vector<TaskRecord> kept;
        for (const auto& r : records)
            if (r.task == *t) kept.push_back(r);
        records = kept;
    }
    if (records.empty()) throw DataError("eval: no records to evaluate");

    int max_new = cfg_or<int>(ctx, "max_new", 48);
    std::map<TaskKind, std::pair<std::vector<std::string>, std::vector<std::string>>> by_task;
    ojson predictions = ojson::array();
    for (const auto& r : records) {
        const AdapterSet* pred = model.find_adapter_set(
            adapter_set_name(assign_group(r.task), AdapterPhase::Prediction));
        GenerateOptions opt;
        opt.max_new = max_new;
        std::string out = generate_text(model, prediction_prompt(r.task, r.input), opt, pred);
        by_task[r.task].first.push_back(out);
        by_task[r.task].second.push_back(r.output);
        predictions.push_back({{"id", r.id}, {"prediction", out}, {"gold", r.output}});
    }

    write_snapshot(ctx);
    std::string text;
    ojson rep;
    for (const auto& [task, pg] : by_task) {
        MetricReport m = evaluate(task, pg.first, pg.second);
        text += m.to_text() + "\n";
        ojson e;
        e["metric"] = m.metric_name;
        e["value"] = m.value;
        e["n"] = m.n;
        e["exact_match_rate"] = m.exact_match_rate;
        rep[task_name(task)] = e;
    }
    open_out(out_path(ctx, "report.txt")) << text;
    write_json(out_path(ctx, "report.json"), rep);
    write_json(out_path(ctx, "predictions.json"), predictions);
    std::cout << text;
    return kExitOk;
}

// ----------------------------------------------------------------------- infer

int run_infer(Ctx& ctx) {
    Model model = load_model(ctx);
    auto t = task_from_name(require_string(ctx, "task"));
    if (!t) throw UsageError("infer: unknown task '" + require_string(ctx, "task") + "'");
    std::string query = require_string(ctx, "query");
    GenerateOptions opt;
    opt.max_new = cfg_or<int>(ctx, "max_new", 64);
    double temperature = cfg_or<double>(ctx, "temperature", 0.0);
    if (temperature > 0.0) {
        opt.mode = DecodeMode::Temperature;
        opt.temperature = temperature;
        opt.seed = ctx.seed;
    }
    PairedResult res = paired_inference(model, query, *t, opt);
    write_snapshot(ctx);
    ojson rep;
    rep["task"] = task_name(*t);
    rep["query"] = query;
    rep["draft"] = res.draft_answer;
    rep["think"] = res.think;
    rep["answer"] = res.final_answer;
    rep["well_formed"] = res.well_formed;
    write_json(out_path(ctx, "infer.json"), rep);
    std::cout << "draft: " << res.draft_answer << "\nthink: " << res.think
              << "\nanswer: " << res.final_answer << "\n";
    return kExitOk;
}

// ------------------------------------------------------------- analyze-weights

int run_analyze_weights(Ctx& ctx) {
    Model model = load_model(ctx);
    std::string phase_key = cfg_or<std::string>(ctx, "phase", "inference");
    if (phase_key != "inference" && phase_key != "prediction")
        throw UsageError("analyze-weights: phase must be 'inference' or 'prediction'");
    AdapterPhase phase =
        phase_key == "inference" ? AdapterPhase::Inference : AdapterPhase::Prediction;
    std::string merge_key = cfg_or<std::string>(ctx, "merge", "concat");
    if (merge_key != "concat" && merge_key != "product")
        throw UsageError("analyze-weights: merge must be 'concat' or 'product'");
    MergeMode mode = merge_key == "concat" ? MergeMode::Concat : MergeMode::Product;

    int ref_group = assign_group(TaskKind::MoleculeCaptioning);
    const AdapterSet* ref = model.find_adapter_set(adapter_set_name(ref_group, phase));
    if (!ref) throw DataError("analyze-weights: checkpoint lacks the captioning reference set");
    std::vector<LayerHistogram> ref_hists = adapter_histograms(*ref, mode);

    std::string init_path = optional_file(ctx, "init_checkpoint");
    std::optional<Model> init;
    if (!init_path.empty()) init = load_checkpoint(init_path);

    write_snapshot(ctx);
    std::map<std::string, std::string> manifest;
    std::ostringstream l2csv;
    l2csv << "set,layer,l2_delta\n" << std::setprecision(12);
    for (int g = 1; g <= kNumGroups; ++g) {
        std::string set_name = adapter_set_name(g, phase);
        const AdapterSet* set = model.find_adapter_set(set_name);
        if (!set) continue;
        std::vector<LayerHistogram> hists = adapter_histograms(*set, mode);
        std::string csv = out_path(ctx, set_name + ".csv");
        if (g == ref_group) {
            write_histogram_csv(csv, hists);
        } else {
            DensityDiff diff = density_diff(hists, ref_hists);
            write_histogram_csv(csv, hists, &diff);
        }
        manifest[set_name] = csv;
        if (init) {
            const AdapterSet* iset = init->find_adapter_set(set_name);
            if (!iset)
                throw DataError("analyze-weights: init checkpoint lacks set " + set_name);
            auto spec_w = merged_lora_weights(*set, mode);
            auto init_w = merged_lora_weights(*iset, mode);
            for (const auto& [layer, flat] : spec_w) {
                Mat ws = Eigen::Map<const Eigen::RowVectorXd>(flat.data(),
                                                              static_cast<long>(flat.size()));
                const auto& iflat = init_w.at(layer);
                Mat wi = Eigen::Map<const Eigen::RowVectorXd>(iflat.data(),
                                                              static_cast<long>(iflat.size()));
                l2csv << set_name << "," << layer << "," << l2_delta(ws, wi) << "\n";
            }
        }
    }
    if (init) {
        open_out(out_path(ctx, "l2_deltas.csv")) << l2csv.str();
        manifest["l2_deltas"] = out_path(ctx, "l2_deltas.csv");
    }
    write_analysis_manifest(out_path(ctx, "manifest.json"), manifest);
    std::cerr << "analyze-weights: wrote " << manifest.size() << " artifact(s)\n";
    return kExitOk;
}

// -------------------------------------------------------------- analyze-chains

int run_analyze_chains(Ctx& ctx) {
    auto records = load_cots(require_file(ctx, "records"));
    ChainTaxonomy taxonomy = ChainTaxonomy::defaults();
    if (std::string tp = optional_file(ctx, "taxonomy"); !tp.empty()) {
        ojson tj = load_json_file(tp);
        taxonomy.rules.clear();
        for (const auto& [label, kws] : tj.items())
            taxonomy.rules.emplace_back(label, kws.get<std::vector<std::string>>());
        if (taxonomy.rules.empty()) throw DataError("analyze-chains: empty taxonomy");
    }
    auto dist = chain_distribution(records, taxonomy);
    write_snapshot(ctx);
    write_chain_csv(out_path(ctx, "chains.csv"), dist);
    write_analysis_manifest(out_path(ctx, "manifest.json"),
                            {{"chains", out_path(ctx, "chains.csv")}});
    std::cerr << "analyze-chains: " << dist.size() << " distinct path(s)\n";
    return kExitOk;
}

// --------------------------------------------------------------- demo-pipeline

ojson demo_stage(const Model& model, TaskKind task, const std::string& query,
                 const GenerateOptions& opt) {
    ojson s;
    s["stage"] = task_name(task);
    s["input"] = query;
    try {
        PairedResult res = paired_inference(model, query, task, opt);
        s["think"] = res.think;
        s["answer"] = res.final_answer;
        s["ok"] = res.well_formed && !res.final_answer.empty();
        if (!res.well_formed) s["error"] = "malformed think/answer output";
    } catch (const std::exception& e) {
        s["ok"] = false;
        s["error"] = e.what();
    }
    return s;
}

int run_demo_pipeline(Ctx& ctx) {
    Model model = load_model(ctx);
    std::vector<std::string> candidates;
    if (ctx.cfg.contains("candidates"))
        candidates = ctx.cfg.at("candidates").get<std::vector<std::string>>();
    GenerateOptions opt;
    opt.max_new = cfg_or<int>(ctx, "max_new", 64);

    write_snapshot(ctx);
    ojson report = ojson::array();
    for (const auto& cand : candidates) {
        ojson entry;
        entry["candidate"] = cand;
        ojson stages = ojson::array();

        ojson gen = demo_stage(model, TaskKind::SmilesGeneration, cand, opt);
        std::string generated = gen.value("answer", "");
        auto mol = try_parse_smiles(generated);
        bool gen_valid = mol && validate(*mol);
        if (!gen_valid) {
            gen["ok"] = false;
            if (!gen.contains("error")) gen["error"] = "generated SMILES is invalid";
        }
        stages.push_back(gen);

        // screen the generated molecule when valid, else fall back to the
        // candidate itself so one bad stage does not sink the rest
        std::string molecule;
        if (gen_valid) {
            molecule = generated;
        } else if (auto cm = try_parse_smiles(cand); cm && validate(*cm)) {
            molecule = cand;
        }
        for (TaskKind t : {TaskKind::BBBP, TaskKind::ClinTox, TaskKind::ESOL,
                           TaskKind::Lipophilicity, TaskKind::MoleculeCaptioning,
                           TaskKind::Retrosynthesis}) {
            if (molecule.empty()) {
                ojson s;
                s["stage"] = task_name(t);
                s["ok"] = false;
                s["error"] = "no valid molecule to screen";
                stages.push_back(s);
                continue;
            }
            stages.push_back(demo_stage(model, t, molecule, opt));
        }
        entry["molecule"] = molecule;
        entry["stages"] = stages;
        report.push_back(entry);
    }
    write_json(out_path(ctx, "demo_report.json"), report);
    std::cerr << "demo-pipeline: " << report.size() << " candidate(s) processed\n";
    return kExitOk;
}

// -------------------------------------------------------------------- dispatch

const std::map<std::string, std::set<std::string>>& allowed_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"prepare-data", {"inputs"}},
        {"sample", {"records", "checkpoint", "quota", "grid"}},
        {"annotate", {"records", "mock_responses", "http"}},
        {"denoise", {"records", "anchors", "validation_fraction"}},
        {"train",
         {"stage1_data", "stage2_data", "stage3_prompts", "start_stage", "resume_checkpoint",
          "model", "pretrain", "stage1", "stage2", "stage3"}},
        {"eval", {"records", "checkpoint", "task", "max_new"}},
        {"infer", {"checkpoint", "task", "query", "max_new", "temperature"}},
        {"analyze-weights", {"checkpoint", "init_checkpoint", "merge", "phase"}},
        {"analyze-chains", {"records", "taxonomy"}},
        {"demo-pipeline", {"checkpoint", "candidates", "max_new"}},
    };
    return keys;
}

int run_subcommand(Ctx& ctx) {
    if (ctx.subcommand == "prepare-data") return run_prepare_data(ctx);
    if (ctx.subcommand == "sample") return run_sample(ctx);
    if (ctx.subcommand == "annotate") return run_annotate(ctx);
    if (ctx.subcommand == "denoise") return run_denoise(ctx);
    if (ctx.subcommand == "train") return run_train(ctx);
    if (ctx.subcommand == "eval") return run_eval(ctx);
    if (ctx.subcommand == "infer") return run_infer(ctx);
    if (ctx.subcommand == "analyze-weights") return run_analyze_weights(ctx);
    if (ctx.subcommand == "analyze-chains") return run_analyze_chains(ctx);
    if (ctx.subcommand == "demo-pipeline") return run_demo_pipeline(ctx);
    throw UsageError("unknown subcommand: " + ctx.subcommand);
}

} // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"molr: routed-LoRA molecular reasoning toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, task, query;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    int stage = 0;
    const char* names[] = {"prepare-data", "sample",  "annotate",        "denoise",
                           "train",        "eval",    "infer",           "analyze-weights",
                           "analyze-chains", "demo-pipeline"};
    for (const char* name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--out", out_dir, "output directory (default runs/<stamp>-seed<seed>)");
        sub->add_option("--seed", seed, "seed applied to every stochastic step");
        sub->add_option("--set", overrides, "key=value config override (repeatable)");
        if (std::string(name) == "train")
            sub->add_option("--stage", stage, "start stage (1-3)");
        if (std::string(name) == "eval")
            sub->add_option("--task", task, "restrict evaluation to one task");
        if (std::string(name) == "infer") {
            sub->add_option("--task", task, "task name");
            sub->add_option("--query", query, "query text");
        }
    }

    std::vector<const char*> argv = {"molr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    Ctx ctx;
    ctx.subcommand = app.get_subcommands().front()->get_name();
    try {
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw DataError("missing config file: " + config_path);
            ctx.cfg = load_json_file(config_path);
        } else {
            ctx.cfg = ojson::object();
        }
        for (const auto& kv : overrides) apply_override(ctx.cfg, kv);
        if (app.get_subcommands().front()->count("--seed")) ctx.cfg["seed"] = seed;
        if (!out_dir.empty()) ctx.cfg["out"] = out_dir;
        if (!task.empty()) ctx.cfg["task"] = task;
        if (!query.empty()) ctx.cfg["query"] = query;
        if (stage > 0) ctx.cfg["start_stage"] = stage;
        if (ctx.cfg.contains("subcommand")) {
            if (ctx.cfg.at("subcommand") != ctx.subcommand)
                throw UsageError("config snapshot is for subcommand '" +
                                 ctx.cfg.at("subcommand").get<std::string>() + "'");
            ctx.cfg.erase("subcommand");
        }

        std::set<std::string> allowed = allowed_keys().at(ctx.subcommand);
        allowed.insert("seed");
        allowed.insert("out");
        validate_keys(ctx.cfg, allowed, ctx.subcommand);

        ctx.seed = cfg_or<uint64_t>(ctx, "seed", 0);
        if (ctx.cfg.contains("out")) {
            ctx.out_dir = ctx.cfg.at("out").get<std::string>();
        } else {
            ctx.out_dir = "runs/" + ctx.subcommand + "-" + std::to_string(std::time(nullptr)) +
                          "-seed" + std::to_string(ctx.seed);
        }
        return run_subcommand(ctx);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

} // namespace molr
