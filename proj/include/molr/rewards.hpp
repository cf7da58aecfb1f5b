#pragma once
#include <string>
#include <vector>

#include "molr/specialist.hpp"

namespace molr {

struct RewardBreakdown {
    double r_answer = 0.0;
    double r_think = 0.0;
    double alpha = 0.8;
    double beta = 0.2;
    double r = 0.0;              // alpha*r_answer + beta*r_think
    double r_hat = 0.0;          // filled by standardize_batch
    bool diagnostics_flag = false;  // prediction was unparseable, reward forced to 0
};

struct ThinkStats {
    size_t length = 0;           // characters
    double unique_word_ratio = 0.0;
};

ThinkStats think_stats(const std::string& text);

// task-specific answer reward in [0,1]; unparseable predictions give 0 with
// the diagnostics flag set rather than throwing (RL needs a signal)
double answer_reward(TaskKind task, const std::string& prediction, const std::string& gold,
                     bool* diagnostics_flag = nullptr);

inline constexpr double kThinkLengthCenter = 1569.0;
inline constexpr double kThinkLengthSigma = 500.0;

// 0.5 * gaussian(length; 1569, 500) + 0.5 * unique-word ratio; empty -> 0
double think_reward(const std::string& text);

RewardBreakdown combined_reward(TaskKind task, const std::string& prediction,
                                const std::string& gold, const std::string& think,
                                double alpha = 0.8, double beta = 0.2);

inline constexpr double kStandardizeEps = 1e-6;

// r_hat = (r - mean) / (population std + eps)
std::vector<double> standardize(const std::vector<double>& rewards);
void standardize_batch(std::vector<RewardBreakdown>& batch);

} // namespace molr
