#include "molr/specialist.hpp"

#include <cmath>
#include <stdexcept>

namespace molr {

const std::array<TaskKind, kNumTasks>& all_tasks() {
    static const std::array<TaskKind, kNumTasks> t = {
        TaskKind::MoleculeCaptioning, TaskKind::SmilesGeneration, TaskKind::SmilesToIupac,
        TaskKind::IupacToSmiles,      TaskKind::ForwardReaction,  TaskKind::Retrosynthesis,
        TaskKind::BBBP,               TaskKind::ClinTox,          TaskKind::ESOL,
        TaskKind::Lipophilicity,
    };
    return t;
}

const std::string& task_name(TaskKind t) {
    static const std::array<std::string, kNumTasks> names = {
        "MoleculeCaptioning", "SmilesGeneration", "SmilesToIupac", "IupacToSmiles",
        "ForwardReaction",    "Retrosynthesis",   "BBBP",          "ClinTox",
        "ESOL",               "Lipophilicity",
    };
    return names[static_cast<size_t>(t)];
}

std::optional<TaskKind> task_from_name(const std::string& name) {
    for (TaskKind t : all_tasks())
        if (task_name(t) == name) return t;
    return std::nullopt;
}

const std::string& task_tag(TaskKind t) {
    return task_tag_tokens()[static_cast<size_t>(t)];
}

std::optional<TaskKind> task_from_tag(const std::string& tag) {
    const auto& tags = task_tag_tokens();
    for (size_t i = 0; i < tags.size(); ++i)
        if (tags[i] == tag) return all_tasks()[i];
    return std::nullopt;
}

OutputFormat output_format(TaskKind t) {
    switch (t) {
        case TaskKind::MoleculeCaptioning:
        case TaskKind::SmilesToIupac: return OutputFormat::Text;
        case TaskKind::SmilesGeneration:
        case TaskKind::IupacToSmiles: return OutputFormat::Smiles;
        case TaskKind::ForwardReaction:
        case TaskKind::Retrosynthesis: return OutputFormat::Reaction;
        case TaskKind::BBBP:
        case TaskKind::ClinTox: return OutputFormat::YesNo;
        case TaskKind::ESOL:
        case TaskKind::Lipophilicity: return OutputFormat::Float;
    }
    throw std::invalid_argument("output_format: unknown task");
}

int assign_group(TaskKind t) {
    switch (t) {
        case TaskKind::MoleculeCaptioning: return 1;
        case TaskKind::SmilesToIupac: return 2;
        case TaskKind::SmilesGeneration:
        case TaskKind::IupacToSmiles: return 3;
        case TaskKind::ForwardReaction:
        case TaskKind::Retrosynthesis: return 4;
        case TaskKind::BBBP: return 5;
        case TaskKind::ClinTox: return 6;
        case TaskKind::ESOL: return 7;
        case TaskKind::Lipophilicity: return 8;
    }
    throw std::invalid_argument("assign_group: unknown task");
}

std::vector<TaskKind> group_tasks(int group_id) {
    std::vector<TaskKind> out;
    for (TaskKind t : all_tasks())
        if (assign_group(t) == group_id) out.push_back(t);
    return out;
}

std::string adapter_set_name(int group_id, AdapterPhase phase) {
    return "group" + std::to_string(group_id) +
           (phase == AdapterPhase::Prediction ? ".prediction" : ".inference");
}

LearnedRouter::LearnedRouter(int d_model, Rng& rng) {
    gate = Tensor::random_gaussian(d_model, kNumGroups, 0.0, rng, true);
    bias = Tensor::zeros(1, kNumGroups, true);
    (void)rng;
}

RouterState LearnedRouter::route(const Mat& pooled) const {
    RouterState st;
    st.mode = RouterMode::Learned;
    Eigen::RowVectorXd scores = pooled * gate.value() + bias.value();
    scores.array() -= scores.maxCoeff();
    Eigen::RowVectorXd e = scores.array().exp();
    e /= e.sum();
    for (int i = 0; i < kNumGroups; ++i) st.weights[i] = e(i);
    return st;
}

double LearnedRouter::train_step(const std::vector<Mat>& embeddings,
                                 const std::vector<int>& group_ids, AdamState& state,
                                 double lr) {
    if (embeddings.size() != group_ids.size() || embeddings.empty())
        throw std::invalid_argument("LearnedRouter::train_step: bad batch");
    Mat x(static_cast<Eigen::Index>(embeddings.size()), gate.rows());
    std::vector<int> targets;
    std::vector<bool> mask(embeddings.size(), true);
    for (size_t i = 0; i < embeddings.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = embeddings[i];
        if (group_ids[i] < 1 || group_ids[i] > kNumGroups)
            throw std::invalid_argument("LearnedRouter::train_step: group id out of range");
        targets.push_back(group_ids[i] - 1);
    }
    gate.zero_grad();
    bias.zero_grad();
    Tensor logits = matmul(Tensor::constant(x), gate);
    // bias broadcast as a row gather so its gradient accumulates per sample
    Tensor biased = add(logits, embed_rows(bias, std::vector<int>(embeddings.size(), 0)));
    Tensor loss = cross_entropy(biased, targets, mask);
    backward(loss);
    std::vector<Tensor> ps = params();
    AdamConfig cfg;
    cfg.lr = lr;
    adam_step(ps, state, cfg);
    return loss.item();
}

std::vector<Tensor> LearnedRouter::params() { return {gate, bias}; }

RouterState Router::route(TaskKind task) const {
    if (mode_ != RouterMode::Oracle)
        throw std::logic_error("Router::route(task): router is in learned mode");
    RouterState st;
    st.mode = RouterMode::Oracle;
    st.weights[assign_group(task) - 1] = 1.0;
    return st;
}

RouterState Router::route(const Model& model, const std::vector<int>& query_tokens) const {
    if (query_tokens.empty()) throw std::invalid_argument("Router::route: empty query");
    if (mode_ == RouterMode::Oracle) {
        // oracle mode reads the task tag from the query tokens
        for (int id : query_tokens) {
            if (id < 0 || id >= model.vocab().size()) continue;
            auto task = task_from_tag(model.vocab().token(id));
            if (task) return route(*task);
        }
        throw std::runtime_error("Router::route: no task tag in query (oracle mode)");
    }
    if (!learned_.gate.valid())
        throw std::logic_error("Router::route: learned router not initialized");
    return learned_.route(model.embed(query_tokens));
}

Tensor specialist_forward(const Model& model, const std::vector<int>& tokens,
                          const RouterState& st, AdapterPhase phase) {
    double total = 0.0;
    for (double w : st.weights) {
        if (w < 0.0) throw std::invalid_argument("specialist_forward: negative routing weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("specialist_forward: routing weights must sum to 1");

    std::vector<int> active;
    for (int g = 1; g <= kNumGroups; ++g)
        if (st.weights[g - 1] != 0.0) active.push_back(g);

    auto group_logits = [&](int g) -> Tensor {
        const AdapterSet* set = model.find_adapter_set(adapter_set_name(g, phase));
        if (!set)
            throw std::runtime_error("specialist_forward: checkpoint has no adapters for " +
                                     adapter_set_name(g, phase));
        return model.forward(tokens, set);
    };

    if (active.size() == 1) return group_logits(active[0]);  // exact one-hot identity
    Tensor acc;
    for (int g : active) {
        Tensor term = scale(group_logits(g), st.weights[g - 1]);
        acc = acc.valid() ? add(acc, term) : term;
    }
    return acc;
}

SpanExtract extract_spans(const std::string& text) {
    SpanExtract out;
    auto between = [&](const std::string& open, const std::string& close)
        -> std::optional<std::string> {
        size_t a = text.find(open);
        if (a == std::string::npos) return std::nullopt;
        a += open.size();
        size_t b = text.find(close, a);
        if (b == std::string::npos) return std::nullopt;
        return text.substr(a, b - a);
    };
    out.think = between(Vocabulary::kThinkOpen, Vocabulary::kThinkClose);
    out.answer = between(Vocabulary::kAnswerOpen, Vocabulary::kAnswerClose);
    return out;
}

std::string prediction_prompt(TaskKind task, const std::string& query) {
    return task_tag(task) + query + "\n";
}

std::string inference_prompt(TaskKind task, const std::string& query,
                             const std::string& draft) {
    return task_tag(task) + query + "\nDraft: " + draft + "\n";
}

PairedResult paired_inference(const Model& model, const std::string& query, TaskKind task,
                              const GenerateOptions& opt) {
    int g = assign_group(task);
    const AdapterSet* pred = model.find_adapter_set(adapter_set_name(g, AdapterPhase::Prediction));
    const AdapterSet* inf = model.find_adapter_set(adapter_set_name(g, AdapterPhase::Inference));
    if (!pred || !inf)
        throw std::runtime_error("paired_inference: adapters missing for group " +
                                 std::to_string(g));

    const Vocabulary& v = model.vocab();
    PairedResult res;

    std::vector<int> p1 = {v.bos()};
    for (int id : v.encode(prediction_prompt(task, query))) p1.push_back(id);
    std::vector<int> draft_tokens = model.generate(p1, opt, pred);
    res.draft_answer = v.decode(std::vector<int>(draft_tokens.begin() + p1.size(),
                                                 draft_tokens.end()));

    std::vector<int> p2 = {v.bos()};
    for (int id : v.encode(inference_prompt(task, query, res.draft_answer))) p2.push_back(id);
    std::vector<int> gen = model.generate(p2, opt, inf);
    res.raw_inference_text = v.decode(std::vector<int>(gen.begin() + p2.size(), gen.end()));

    SpanExtract spans = extract_spans(res.raw_inference_text);
    res.think = spans.think.value_or("");
    if (spans.answer) {
        res.final_answer = *spans.answer;
        res.well_formed = spans.think.has_value();
    } else {
        res.well_formed = false;
        res.final_answer = "";
    }
    return res;
}

} // namespace molr
