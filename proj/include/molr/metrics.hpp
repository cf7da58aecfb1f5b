#pragma once
#include <string>
#include <vector>

#include "molr/specialist.hpp"

namespace molr {

struct MetricReport {
    TaskKind task;
    std::string metric_name;
    double value = 0.0;
    size_t n = 0;
    // secondary figures, meaning depends on the task
    double exact_match_rate = 0.0;   // SMILES tasks: canonical equality rate
    double raw_inverse_rmse = 0.0;   // regression: uncapped-form 1/RMSE, capped at 1e6
    std::vector<std::string> notes;

    std::string to_text() const;
};

inline constexpr double kInverseRmseCap = 1e6;

// per-task primary metric: text -> METEOR-style score, SMILES/reaction ->
// mean canonical tanimoto (+ exact match rate), classification -> accuracy,
// regression -> 1/RMSE capped
MetricReport evaluate(TaskKind task, const std::vector<std::string>& predictions,
                      const std::vector<std::string>& golds);

// unigram F-mean with fragmentation penalty; exact and stem matches only,
// no synonym tables (hence "METEOR-style")
double meteor_style_score(const std::string& candidate, const std::string& reference);

// light Porter-style suffix stripper used by the matcher
std::string stem(const std::string& word);

} // namespace molr
