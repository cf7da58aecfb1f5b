#include "molr/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

#include "molr/fingerprint.hpp"
#include "molr/metrics.hpp"
#include "molr/smiles.hpp"

namespace molr {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\n\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\n\r");
    return s.substr(a, b - a + 1);
}

std::optional<bool> parse_yes_no(const std::string& s) {
    std::string t = trim(s);
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (t == "yes" || t == "y" || t == "true") return true;
    if (t == "no" || t == "n" || t == "false") return false;
    return std::nullopt;
}

std::optional<double> parse_number(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    try {
        size_t used = 0;
        double v = std::stod(t, &used);
        if (used != t.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

double smiles_reward(const std::string& prediction, const std::string& gold, bool* flag) {
    auto pred = try_parse_smiles(trim(prediction));
    if (!pred || !validate(*pred)) {
        if (flag) *flag = true;  // validity gate
        return 0.0;
    }
    auto ref = try_parse_smiles(trim(gold));
    if (!ref) {
        if (flag) *flag = true;
        return 0.0;
    }
    return tanimoto(fingerprint(*pred), fingerprint(*ref));
}

} // namespace

ThinkStats think_stats(const std::string& text) {
    ThinkStats st;
    st.length = text.size();
    std::istringstream iss(text);
    std::set<std::string> unique;
    size_t total = 0;
    std::string w;
    while (iss >> w) {
        unique.insert(w);
        ++total;
    }
    st.unique_word_ratio = total == 0 ? 0.0 : static_cast<double>(unique.size()) / total;
    return st;
}

double answer_reward(TaskKind task, const std::string& prediction, const std::string& gold,
                     bool* diagnostics_flag) {
    if (diagnostics_flag) *diagnostics_flag = false;
    switch (output_format(task)) {
        case OutputFormat::YesNo: {
            auto p = parse_yes_no(prediction);
            auto g = parse_yes_no(gold);
            if (!p || !g) {
                if (diagnostics_flag) *diagnostics_flag = true;
                return 0.0;
            }
            return *p == *g ? 1.0 : 0.0;
        }
        case OutputFormat::Float: {
            auto p = parse_number(prediction);
            auto g = parse_number(gold);
            if (!p || !g) {
                if (diagnostics_flag) *diagnostics_flag = true;
                return 0.0;
            }
            return 1.0 / (1.0 + std::abs(*p - *g));
        }
        case OutputFormat::Smiles:
        case OutputFormat::Reaction:
            return smiles_reward(prediction, gold, diagnostics_flag);
        case OutputFormat::Text:
            return meteor_style_score(prediction, gold);
    }
    return 0.0;
}

double think_reward(const std::string& text) {
    if (text.empty()) return 0.0;
    ThinkStats st = think_stats(text);
    double d = static_cast<double>(st.length) - kThinkLengthCenter;
    double length_component = std::exp(-d * d / (2.0 * kThinkLengthSigma * kThinkLengthSigma));
    return 0.5 * length_component + 0.5 * st.unique_word_ratio;
}

RewardBreakdown combined_reward(TaskKind task, const std::string& prediction,
                                const std::string& gold, const std::string& think,
                                double alpha, double beta) {
    if (std::abs(alpha + beta - 1.0) > 1e-12)
        throw std::invalid_argument("combined_reward: alpha + beta must equal 1");
    RewardBreakdown rb;
    rb.alpha = alpha;
    rb.beta = beta;
    rb.r_answer = answer_reward(task, prediction, gold, &rb.diagnostics_flag);
    rb.r_think = think_reward(think);
    rb.r = alpha * rb.r_answer + beta * rb.r_think;
    return rb;
}

std::vector<double> standardize(const std::vector<double>& rewards) {
    if (rewards.empty()) throw std::invalid_argument("standardize: empty batch");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rewards.size());  // population variance
    double denom = std::sqrt(var) + kStandardizeEps;
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back((r - mean) / denom);
    return out;
}

void standardize_batch(std::vector<RewardBreakdown>& batch) {
    std::vector<double> rs;
    rs.reserve(batch.size());
    for (const auto& rb : batch) rs.push_back(rb.r);
    std::vector<double> hat = standardize(rs);
    for (size_t i = 0; i < batch.size(); ++i) batch[i].r_hat = hat[i];
}

} // namespace molr
