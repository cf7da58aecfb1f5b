#pragma once
#include <vector>

#include "molr/data_pipeline.hpp"
#include "molr/training.hpp"

namespace molr {

// Toy mirror of the ten tasks so every head is exercisable without the real
// corpora: alkane naming/generation for the SMILES tasks, bit parity and
// digit sums for the property tasks.
struct MicroSuite {
    std::vector<TaskRecord> instruction;
    std::vector<CoTRecord> cot;
    std::vector<TaskRecord> rl_prompts;   // SMILES-generation prompts for stage 3
};

MicroSuite make_micro_suite(uint64_t seed, int per_task = 20);

// default vocabulary extended with every surface token of the suite
Vocabulary micro_vocab(const MicroSuite& suite);

// small config that trains in seconds on the suite
ModelConfig micro_config();

// model with the micro vocabulary and all sixteen group adapter sets
Model make_micro_model(const MicroSuite& suite, uint64_t seed);

// LM lines covering both instruction and CoT surface forms, for lm_pretrain
std::vector<std::string> micro_pretrain_corpus(const MicroSuite& suite);

// fraction of greedy generations containing both well-formed spans, using the
// same prompt format as cot_sft_step
double well_formed_fraction(const Model& model, const std::vector<CoTRecord>& records,
                            int max_new);

// fraction of temperature-sampled answers that parse and validate as SMILES
double valid_smiles_fraction(const Model& model, const std::vector<TaskRecord>& prompts,
                             int n_samples, uint64_t seed, double temperature, int max_new);

// 2-arm bandit: vocabulary {A, B}, reward 1 iff the single sampled token is A
struct BanditResult {
    double p_best = 0.0;      // model probability of the rewarded arm
    int steps_run = 0;
    bool converged = false;   // p_best > 0.95 within the budget
};
BanditResult run_bandit(uint64_t seed, int max_steps = 500, double threshold = 0.95);

} // namespace molr
