#include "molr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "molr/checkpoint.hpp"
#include "molr/specialist.hpp"

namespace molr {

namespace {

using json = nlohmann::json;

std::vector<int> encode_with_bos(const Vocabulary& v, const std::string& text) {
    std::vector<int> ids = {v.bos()};
    for (int id : v.encode(text)) ids.push_back(id);
    return ids;
}

struct TouchedSets {
    std::map<std::string, std::vector<Tensor>> by_name;

    void touch(Model& m, const std::string& name) {
        if (by_name.count(name)) return;
        by_name[name] = m.adapter_set(name).params();
    }

    void apply(Model& m, Optimizer& opt, double lr, double clip_norm) {
        if (clip_norm > 0.0) {
            double sq = 0.0;
            for (auto& [name, ps] : by_name)
                for (auto& p : ps)
                    if (p.has_grad()) sq += p.grad().squaredNorm();
            double norm = std::sqrt(sq);
            if (norm > clip_norm) {
                double s = clip_norm / norm;
                for (auto& [name, ps] : by_name)
                    for (auto& p : ps)
                        if (p.has_grad()) p.node()->grad *= s;
            }
        }
        AdamConfig acfg;
        acfg.lr = lr;
        for (auto& [name, ps] : by_name) adam_step(ps, opt.states[name], acfg);
        for (auto& [name, ps] : by_name)
            for (auto& p : ps) p.zero_grad();
        for (auto& p : m.base_params()) p.zero_grad();
    }
};

const AdapterSet* require_set(const Model& m, const std::string& name) {
    const AdapterSet* s = m.find_adapter_set(name);
    if (!s) throw std::runtime_error("missing adapter set: " + name);
    return s;
}

// shared masked-CE core for both SFT stages
StepStats masked_sft(Model& model, const std::vector<std::vector<int>>& prompts,
                     const std::vector<std::vector<int>>& targets,
                     const std::vector<std::string>& set_names, Optimizer& opt,
                     const StageConfig& cfg) {
    StepStats stats;
    Tensor acc;
    int counted = 0;
    TouchedSets touched;
    for (size_t i = 0; i < prompts.size(); ++i) {
        std::vector<int> tokens = prompts[i];
        tokens.insert(tokens.end(), targets[i].begin(), targets[i].end());
        if (static_cast<int>(tokens.size()) > model.config().max_seq) {
            std::cerr << "sft: sequence overflow, record skipped\n";
            ++stats.skipped;
            continue;
        }
        require_set(model, set_names[i]);
        std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
        std::vector<int> labels(tokens.begin() + 1, tokens.end());
        std::vector<bool> mask(labels.size());
        for (size_t t = 0; t < labels.size(); ++t) mask[t] = t + 1 >= prompts[i].size();
        Tensor logits = model.forward(inputs, model.find_adapter_set(set_names[i]));
        Tensor loss = cross_entropy(logits, labels, mask);
        touched.touch(model, set_names[i]);
        acc = acc.valid() ? add(acc, loss) : loss;
        ++counted;
    }
    if (counted == 0) return stats;
    Tensor loss = scale(acc, 1.0 / counted);
    stats.loss = loss.item();
    backward(loss);
    touched.apply(model, opt, cfg.lr, cfg.clip_norm);
    return stats;
}

} // namespace

void StageConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("StageConfig: lr must be positive");
    if (batch_size <= 0) throw std::invalid_argument("StageConfig: batch_size must be positive");
    if (steps < 0) throw std::invalid_argument("StageConfig: steps must be non-negative");
    if (max_new <= 0) throw std::invalid_argument("StageConfig: max_new must be positive");
    if (temperature < 0.0) throw std::invalid_argument("StageConfig: temperature must be >= 0");
}

double lm_pretrain(Model& model, const std::vector<std::string>& corpus, Optimizer& opt,
                   const StageConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("lm_pretrain: empty corpus");
    const Vocabulary& v = model.vocab();
    Rng brng = Rng(cfg.seed).split("pretrain");
    std::vector<Tensor> base = model.base_params();
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    double last = 0.0;
    for (int s = 0; s < cfg.steps; ++s) {
        Tensor acc;
        int counted = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::string& text = corpus[brng.below(corpus.size())];
            std::vector<int> tokens = encode_with_bos(v, text);
            tokens.push_back(v.eos());
            if (static_cast<int>(tokens.size()) > model.config().max_seq) continue;
            std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
            std::vector<int> labels(tokens.begin() + 1, tokens.end());
            std::vector<bool> mask(labels.size(), true);
            Tensor l = cross_entropy(model.forward(inputs), labels, mask);
            acc = acc.valid() ? add(acc, l) : l;
            ++counted;
        }
        if (counted == 0) continue;
        Tensor loss = scale(acc, 1.0 / counted);
        last = loss.item();
        backward(loss);
        adam_step(base, opt.states["<base>"], acfg, cfg.clip_norm);
        for (auto& p : base) p.zero_grad();
    }
    return last;
}

std::string cot_target(const CoTRecord& r) {
    return std::string(Vocabulary::kThinkOpen) + r.think + Vocabulary::kThinkClose +
           Vocabulary::kAnswerOpen + r.answer + Vocabulary::kAnswerClose;
}

StepStats sft_step(Model& model, const std::vector<TaskRecord>& batch, Optimizer& opt,
                   const StageConfig& cfg) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("sft_step: empty batch");
    const Vocabulary& v = model.vocab();
    std::vector<std::vector<int>> prompts, targets;
    std::vector<std::string> sets;
    for (const auto& rec : batch) {
        if (rec.output.empty()) throw std::invalid_argument("sft_step: empty target");
        prompts.push_back(encode_with_bos(v, prediction_prompt(rec.task, rec.input)));
        std::vector<int> tgt = v.encode(rec.output);
        tgt.push_back(v.eos());
        targets.push_back(std::move(tgt));
        sets.push_back(adapter_set_name(assign_group(rec.task), AdapterPhase::Prediction));
    }
    return masked_sft(model, prompts, targets, sets, opt, cfg);
}

StepStats cot_sft_step(Model& model, const std::vector<CoTRecord>& batch, Optimizer& opt,
                       const StageConfig& cfg, std::vector<std::string>* rejected) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("cot_sft_step: empty batch");
    const Vocabulary& v = model.vocab();
    std::vector<std::vector<int>> prompts, targets;
    std::vector<std::string> sets;
    StepStats pre;
    for (const auto& rec : batch) {
        if (rec.think.empty() || rec.answer.empty()) {
            if (rejected) rejected->push_back(rec.base.id);
            std::cerr << "cot_sft: record rejected (missing span): " << rec.base.id << "\n";
            ++pre.skipped;
            continue;
        }
        // the gold answer stands in for the prediction draft during SFT
        prompts.push_back(encode_with_bos(
            v, inference_prompt(rec.base.task, rec.base.input, rec.base.output)));
        std::vector<int> tgt = v.encode(cot_target(rec));
        tgt.push_back(v.eos());
        targets.push_back(std::move(tgt));
        sets.push_back(adapter_set_name(assign_group(rec.base.task), AdapterPhase::Inference));
    }
    StepStats stats = masked_sft(model, prompts, targets, sets, opt, cfg);
    stats.skipped += pre.skipped;
    return stats;
}

StepStats reinforce_step(Model& model, const std::vector<TaskRecord>& prompts, Optimizer& opt,
                         const StageConfig& cfg, uint64_t step_index,
                         const RewardFn& reward_fn, std::vector<Trajectory>* out_trajectories) {
    cfg.validate();
    StepStats stats;
    if (prompts.empty()) throw std::invalid_argument("reinforce_step: empty batch");
    if (prompts.size() == 1) {
        std::cerr << "reinforce: batch of 1 degenerates to r_hat=0, zero-gradient step\n";
        return stats;
    }
    const Vocabulary& v = model.vocab();
    Rng srng = Rng(cfg.seed).split("rl-step-" + std::to_string(step_index));

    struct Work {
        std::vector<int> full;
        size_t prompt_len = 0;
        std::string set;
        std::string think, answer;
        RewardBreakdown reward;
    };
    std::vector<Work> works;
    for (size_t i = 0; i < prompts.size(); ++i) {
        const TaskRecord& rec = prompts[i];
        int g = assign_group(rec.task);
        Work w;
        w.set = adapter_set_name(g, AdapterPhase::Inference);
        const AdapterSet* inf = require_set(model, w.set);
        Rng trng = srng.split("traj-" + std::to_string(i));

        std::string prompt_text;
        if (cfg.paired) {
            const AdapterSet* pred =
                require_set(model, adapter_set_name(g, AdapterPhase::Prediction));
            GenerateOptions dopt;
            dopt.max_new = cfg.max_new;
            std::vector<int> p1 = encode_with_bos(v, prediction_prompt(rec.task, rec.input));
            std::vector<int> d = model.generate(p1, dopt, pred);
            std::string draft = v.decode(std::vector<int>(d.begin() + p1.size(), d.end()));
            prompt_text = inference_prompt(rec.task, rec.input, draft);
        } else {
            prompt_text = prediction_prompt(rec.task, rec.input);
        }
        std::vector<int> p = encode_with_bos(v, prompt_text);
        w.prompt_len = p.size();

        GenerateOptions gopt;
        gopt.mode = DecodeMode::Temperature;
        gopt.temperature = cfg.temperature;
        gopt.seed = trng.next_u64();
        gopt.max_new = cfg.max_new;
        w.full = model.generate(p, gopt, inf);

        std::string text =
            v.decode(std::vector<int>(w.full.begin() + w.prompt_len, w.full.end()));
        SpanExtract spans = extract_spans(text);
        w.think = spans.think.value_or("");
        w.answer = spans.answer.value_or("");
        if (reward_fn) {
            w.reward = reward_fn(rec, text);
        } else {
            w.reward = combined_reward(rec.task, w.answer, rec.output, w.think);
        }
        works.push_back(std::move(w));
    }

    auto emit_trajectories = [&](const std::vector<double>* r_hats) {
        if (!out_trajectories) return;
        NoGradScope ng;
        for (size_t i = 0; i < works.size(); ++i) {
            const Work& w = works[i];
            Trajectory t;
            t.prompt.assign(w.full.begin(), w.full.begin() + w.prompt_len);
            t.sampled.assign(w.full.begin() + w.prompt_len, w.full.end());
            t.think = w.think;
            t.answer = w.answer;
            t.reward = w.reward;
            if (r_hats) t.reward.r_hat = (*r_hats)[i];
            if (!t.sampled.empty()) {
                std::vector<int> inputs(w.full.begin(), w.full.end() - 1);
                std::vector<int> labels(w.full.begin() + 1, w.full.end());
                Tensor lp = picked_log_probs(model.forward(inputs, model.find_adapter_set(w.set)),
                                             labels);
                for (size_t j = w.prompt_len - 1; j < labels.size(); ++j)
                    t.log_probs.push_back(lp.value()(0, static_cast<Eigen::Index>(j)));
            }
            out_trajectories->push_back(std::move(t));
        }
    };

    std::vector<double> rs;
    for (auto& w : works) rs.push_back(w.reward.r);
    double mn = *std::min_element(rs.begin(), rs.end());
    double mx = *std::max_element(rs.begin(), rs.end());
    for (auto& w : works) {
        stats.mean_r_answer += w.reward.r_answer / works.size();
        stats.mean_r_think += w.reward.r_think / works.size();
    }
    if (mn == mx) {  // zero advantage everywhere: exactly-zero update
        emit_trajectories(nullptr);
        return stats;
    }

    std::vector<double> r_hat = standardize(rs);
    emit_trajectories(&r_hat);
    for (double rh : r_hat) stats.mean_r_hat += rh / r_hat.size();

    Tensor acc;
    int counted = 0;
    TouchedSets touched;
    for (size_t i = 0; i < works.size(); ++i) {
        Work& w = works[i];
        if (w.full.size() <= w.prompt_len) continue;  // nothing sampled
        std::vector<int> inputs(w.full.begin(), w.full.end() - 1);
        std::vector<int> labels(w.full.begin() + 1, w.full.end());
        Tensor logits = model.forward(inputs, model.find_adapter_set(w.set));
        Tensor lp = picked_log_probs(logits, labels);
        Tensor sl = slice_cols(lp, static_cast<Eigen::Index>(w.prompt_len) - 1,
                               static_cast<Eigen::Index>(w.full.size() - w.prompt_len));
        Tensor term = scale(sum(sl), -r_hat[i]);
        touched.touch(model, w.set);
        if (cfg.train_prediction_in_rl) {
            int g = assign_group(prompts[i].task);
            touched.touch(model, adapter_set_name(g, AdapterPhase::Prediction));
        }
        acc = acc.valid() ? add(acc, term) : term;
        ++counted;
    }
    if (counted == 0) return stats;
    Tensor loss = scale(acc, 1.0 / static_cast<double>(works.size()));
    stats.loss = loss.item();
    backward(loss);
    touched.apply(model, opt, cfg.lr, cfg.clip_norm);
    return stats;
}

namespace {

template <typename Record, typename StepFn>
double run_stage(Model& model, const std::vector<Record>& data, const StageConfig& cfg,
                 const std::string& log_path, StepFn step_fn) {
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot open stage log: " + log_path);
    Rng brng = Rng(cfg.seed).split("batches");
    Optimizer opt;
    double last_loss = 0.0;
    auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<Record> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(data[brng.below(data.size())]);
        StepStats st = step_fn(batch, opt, static_cast<uint64_t>(s));
        last_loss = st.loss;
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
        json line = {{"step", s},
                     {"loss", st.loss},
                     {"mean_r_answer", st.mean_r_answer},
                     {"mean_r_think", st.mean_r_think},
                     {"mean_r_hat", st.mean_r_hat},
                     {"skipped", st.skipped},
                     {"wall_ms", ms}};
        log << line.dump() << "\n";
    }
    return last_loss;
}

} // namespace

PipelineReport run_pipeline(Model& model, const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.start_stage < 1 || cfg.start_stage > 3)
        throw std::invalid_argument("run_pipeline: start_stage must be 1..3");
    if (cfg.start_stage > 1 && cfg.resume_checkpoint.empty())
        throw std::invalid_argument(
            "run_pipeline: resuming at stage " + std::to_string(cfg.start_stage) +
            " requires the previous stage's checkpoint");
    // validate datasets before any mutation
    for (int k = cfg.start_stage; k <= 3; ++k) {
        if (k == 1 && cfg.stage1_data.empty())
            throw std::invalid_argument("run_pipeline: stage 1 dataset missing");
        if (k == 2 && cfg.stage2_data.empty())
            throw std::invalid_argument("run_pipeline: stage 2 dataset missing");
        if (k == 3 && cfg.stage3_prompts.empty())
            throw std::invalid_argument("run_pipeline: stage 3 prompts missing");
    }
    fs::create_directories(cfg.out_dir);
    if (cfg.start_stage > 1) model = load_checkpoint(cfg.resume_checkpoint);

    PipelineReport rep;
    for (int k = cfg.start_stage; k <= 3; ++k) {
        std::string log_path = cfg.out_dir + "/stage" + std::to_string(k) + "_log.jsonl";
        double last = 0.0;
        if (k == 1) {
            last = run_stage(model, cfg.stage1_data, cfg.stage1, log_path,
                             [&](const std::vector<TaskRecord>& b, Optimizer& o, uint64_t) {
                                 return sft_step(model, b, o, cfg.stage1);
                             });
        } else if (k == 2) {
            last = run_stage(model, cfg.stage2_data, cfg.stage2, log_path,
                             [&](const std::vector<CoTRecord>& b, Optimizer& o, uint64_t) {
                                 return cot_sft_step(model, b, o, cfg.stage2);
                             });
        } else {
            last = run_stage(model, cfg.stage3_prompts, cfg.stage3, log_path,
                             [&](const std::vector<TaskRecord>& b, Optimizer& o, uint64_t s) {
                                 return reinforce_step(model, b, o, cfg.stage3, s,
                                                       cfg.stage3_reward);
                             });
        }
        std::string ckpt = cfg.out_dir + "/stage" + std::to_string(k) + ".ckpt";
        save_checkpoint(model, ckpt);
        rep.checkpoints.push_back(ckpt);
        rep.stage_logs.push_back(log_path);
        rep.final_loss[k] = last;
    }
    return rep;
}

} // namespace molr
