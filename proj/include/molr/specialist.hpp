#pragma once
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "molr/model.hpp"

namespace molr {

enum class TaskKind {
    MoleculeCaptioning,
    SmilesGeneration,
    SmilesToIupac,
    IupacToSmiles,
    ForwardReaction,
    Retrosynthesis,
    BBBP,
    ClinTox,
    ESOL,
    Lipophilicity,
};

inline constexpr int kNumTasks = 10;
inline constexpr int kNumGroups = 8;

enum class OutputFormat { Text, Smiles, Reaction, YesNo, Float };

const std::array<TaskKind, kNumTasks>& all_tasks();
const std::string& task_name(TaskKind t);
std::optional<TaskKind> task_from_name(const std::string& name);
const std::string& task_tag(TaskKind t);            // "<task=...>" vocabulary token
std::optional<TaskKind> task_from_tag(const std::string& tag);
OutputFormat output_format(TaskKind t);

// fixed eight-group table; group ids are 1-based
int assign_group(TaskKind t);
std::vector<TaskKind> group_tasks(int group_id);

enum class AdapterPhase { Prediction, Inference };
std::string adapter_set_name(int group_id, AdapterPhase phase);

enum class RouterMode { Oracle, Learned };

struct RouterState {
    std::array<double, kNumGroups> weights{};  // r_1..r_8, index 0 = group 1
    RouterMode mode = RouterMode::Oracle;
};

// Linear gate over a pooled query embedding; trained with cross-entropy
// against the oracle group labels.
class LearnedRouter {
public:
    LearnedRouter() = default;
    LearnedRouter(int d_model, Rng& rng);

    RouterState route(const Mat& pooled_embedding) const;
    // one gradient step on a labelled batch; returns mean loss
    double train_step(const std::vector<Mat>& embeddings, const std::vector<int>& group_ids,
                      AdamState& state, double lr);
    std::vector<Tensor> params();

    Tensor gate;  // d_model x 8
    Tensor bias;  // 1 x 8
};

class Router {
public:
    explicit Router(RouterMode mode = RouterMode::Oracle) : mode_(mode) {}

    // oracle routing needs the task; learned routing needs the model to pool
    // the query embedding
    RouterState route(TaskKind task) const;
    RouterState route(const Model& model, const std::vector<int>& query_tokens) const;

    RouterMode mode() const { return mode_; }
    LearnedRouter& learned() { return learned_; }
    const LearnedRouter& learned() const { return learned_; }
    void init_learned(int d_model, Rng& rng) { learned_ = LearnedRouter(d_model, rng); }

private:
    RouterMode mode_;
    LearnedRouter learned_;
};

// O = sum_i r_i * group_i(q); with one-hot weights the result is bit-identical
// to the single group's forward
Tensor specialist_forward(const Model& model, const std::vector<int>& tokens,
                          const RouterState& weights, AdapterPhase phase);

struct PairedResult {
    std::string draft_answer;
    std::string think;
    std::string final_answer;
    bool well_formed = false;
    std::string raw_inference_text;
};

// prediction adapter drafts an answer; inference adapter reasons over
// query + draft and emits the think/answer spans
PairedResult paired_inference(const Model& model, const std::string& query, TaskKind task,
                              const GenerateOptions& opt);

// pulls the text between the answer markers; think likewise
struct SpanExtract {
    std::optional<std::string> think;
    std::optional<std::string> answer;
};
SpanExtract extract_spans(const std::string& text);

// prompt assembly shared by training and inference
std::string prediction_prompt(TaskKind task, const std::string& query);
std::string inference_prompt(TaskKind task, const std::string& query, const std::string& draft);

} // namespace molr
