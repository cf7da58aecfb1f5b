#pragma once
#include <string>
#include <vector>

#include "molr/chat_client.hpp"
#include "molr/model.hpp"
#include "molr/specialist.hpp"

namespace molr {

struct TaskRecord {
    TaskKind task = TaskKind::MoleculeCaptioning;
    std::string input;
    std::string output;
    std::string id;
};

struct CoTFlags {
    bool annotated = false;
    bool denoised = false;
    bool manually_validated = false;
    bool needs_denoise = false;
};

struct CoTRecord {
    TaskRecord base;
    std::string think;
    std::string answer;
    CoTFlags flags;
};

// JSONL, one object per line, fixed field order {task, input, output, id}
// (+ {think, answer, flags} for CoT) for diff-stability
void save_task_records(const std::vector<TaskRecord>& records, const std::string& path);
std::vector<TaskRecord> load_task_records(const std::string& path);
void save_cot_records(const std::vector<CoTRecord>& records, const std::string& path);
std::vector<CoTRecord> load_cot_records(const std::string& path);

// one row per record: mean-pooled final-layer hidden state of the input tokens
Mat embed_records(const std::vector<TaskRecord>& records, const Model& model);

// top-2 principal components; sign convention: largest-magnitude loading of
// each component is positive
Mat reduce_2d(const Mat& rows);

// G x G grid over the bounding box, round-robin one seeded-uniform unseen
// point per non-empty cell until quota met
std::vector<size_t> stratified_sample(const Mat& coords, size_t quota, int grid, uint64_t seed);

struct SplitResult {
    std::vector<TaskRecord> train, valid, test;
};

// seeded shuffle stratified by task, 8:1:1 per task with largest-remainder
// rounding; duplicate source ids are an error
SplitResult aggregate_and_split(const std::vector<std::vector<TaskRecord>>& subsets,
                                uint64_t seed);

struct AnnotateResult {
    std::vector<CoTRecord> records;
    std::vector<std::string> skipped_ids;   // transport failures after retries
};

// asks the client for think/answer reasoning; task-aware gold comparison, one
// self-correct round on mismatch (result flagged needs_denoise)
AnnotateResult annotate_cot(const std::vector<TaskRecord>& records, ChatClient& client);

// answers match up to task semantics: canonical SMILES equality, Yes/No case
// folding, numeric tolerance 1e-3, exact otherwise
bool answers_match(TaskKind task, const std::string& got, const std::string& gold);

struct DenoiseResult {
    std::vector<CoTRecord> records;
    std::vector<std::string> dropped_ids;   // think emptied by cleaning
};

const std::vector<std::string>& default_anchor_phrases();
DenoiseResult denoise(const std::vector<CoTRecord>& records,
                      const std::vector<std::string>& anchors = default_anchor_phrases());

// ceil(fraction * n) seeded-uniform record ids, as a review manifest with
// accept/reject columns
std::vector<std::string> validation_sample(const std::vector<CoTRecord>& records,
                                           double fraction, uint64_t seed);
void write_validation_manifest(const std::vector<std::string>& ids, const std::string& path);

} // namespace molr
