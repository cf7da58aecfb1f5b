#pragma once
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "molr/data_pipeline.hpp"
#include "molr/model.hpp"
#include "molr/rewards.hpp"

namespace molr {

enum class Stage { InstructionSFT = 1, CoTSFT = 2, Reinforce = 3 };

struct StageConfig {
    Stage stage = Stage::InstructionSFT;
    double lr = 1e-4;
    int batch_size = 8;        // SFT 4-16; CoT/RL 1-2 by convention
    int steps = 100;
    uint64_t seed = 0;
    bool train_prediction_in_rl = false;  // stage 3 defaults to inference adapters only
    bool paired = true;        // stage 3 rewards on draft-conditioned generation
    double clip_norm = 0.0;    // 1.0 for RL
    double temperature = 1.0;  // RL sampling
    int max_new = 48;

    void validate() const;
};

struct Trajectory {
    std::vector<int> prompt;
    std::vector<int> sampled;
    std::vector<double> log_probs;   // one per sampled token, all <= 0
    std::string think, answer;
    RewardBreakdown reward;
};

struct StepStats {
    double loss = 0.0;
    double mean_r_answer = 0.0;
    double mean_r_think = 0.0;
    double mean_r_hat = 0.0;
    long skipped = 0;   // overflow / rejected records
};

// optimizer bundle: one AdamState per adapter set, allocated on first touch
struct Optimizer {
    std::map<std::string, AdamState> states;
};

// custom reward hook for toy tasks; default extracts spans and applies
// combined_reward against the record's gold output
using RewardFn = std::function<RewardBreakdown(const TaskRecord&, const std::string& sampled)>;

// Plain next-token LM over raw text lines, training the full base parameters.
// The adapter stages assume a pretrained base; at desk scale this op provides
// one. Returns the final step loss.
double lm_pretrain(Model& model, const std::vector<std::string>& corpus, Optimizer& opt,
                   const StageConfig& cfg);

// prompt-masked cross-entropy on the routed group's prediction adapter
StepStats sft_step(Model& model, const std::vector<TaskRecord>& batch, Optimizer& opt,
                   const StageConfig& cfg);

// same loss over "⟨think⟩{think}⟨/think⟩⟨answer⟩{answer}⟨/answer⟩" on the
// inference adapter; records missing a span are rejected (ids via out-param)
StepStats cot_sft_step(Model& model, const std::vector<CoTRecord>& batch, Optimizer& opt,
                       const StageConfig& cfg, std::vector<std::string>* rejected = nullptr);

// one seeded trajectory per prompt, rewards standardized across the batch,
// loss = -mean (sum_t log pi_t) * r_hat on the inference adapter
StepStats reinforce_step(Model& model, const std::vector<TaskRecord>& prompts, Optimizer& opt,
                         const StageConfig& cfg, uint64_t step_index,
                         const RewardFn& reward_fn = {},
                         std::vector<Trajectory>* out_trajectories = nullptr);

// serialized CoT target used by stage 2 and by well-formedness checks
std::string cot_target(const CoTRecord& record);

struct PipelineConfig {
    StageConfig stage1, stage2, stage3;
    std::string out_dir;
    std::vector<TaskRecord> stage1_data;
    std::vector<CoTRecord> stage2_data;
    std::vector<TaskRecord> stage3_prompts;
    int start_stage = 1;               // resuming needs resume_checkpoint
    std::string resume_checkpoint;
    RewardFn stage3_reward;            // default: span extraction + combined_reward
};

struct PipelineReport {
    std::vector<std::string> checkpoints;   // one per executed stage
    std::vector<std::string> stage_logs;    // JSONL paths
    std::map<int, double> final_loss;       // stage -> last step loss
};

// Stage 1 (instruction data, prediction adapters) -> Stage 2 (CoT data,
// inference adapters) -> Stage 3 (RL alignment); checkpoint + JSONL report
// per stage; resumable from any stage checkpoint
PipelineReport run_pipeline(Model& model, const PipelineConfig& cfg);

} // namespace molr
