#include "molr/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "molr/fingerprint.hpp"
#include "molr/rewards.hpp"
#include "molr/smiles.hpp"

namespace molr {

namespace {

std::vector<std::string> words_lower(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

} // namespace

std::string stem(const std::string& word) {
    std::string w = word;
    auto strip = [&](const std::string& suf, size_t min_stem) {
        if (ends_with(w, suf) && w.size() - suf.size() >= min_stem) {
            w.resize(w.size() - suf.size());
            return true;
        }
        return false;
    };
    // ordered longest-first; a light subset of the Porter rules
    if (strip("ational", 4)) { w += "ate"; return w; }
    if (strip("ization", 4)) { w += "ize"; return w; }
    if (strip("fulness", 4)) return w;
    if (strip("ousness", 4)) return w;
    if (strip("iveness", 4)) return w;
    if (strip("ation", 3)) { w += "ate"; return w; }
    if (strip("ness", 3)) return w;
    if (strip("ment", 3)) return w;
    if (strip("ies", 2)) { w += "y"; return w; }
    if (strip("sses", 3)) { w += "ss"; return w; }
    if (strip("ing", 3)) return w;
    if (strip("edly", 3)) return w;
    if (strip("ed", 3)) return w;
    if (strip("ly", 3)) return w;
    if (strip("es", 3)) return w;
    if (ends_with(w, "s") && !ends_with(w, "ss") && w.size() > 3) w.resize(w.size() - 1);
    return w;
}

double meteor_style_score(const std::string& candidate, const std::string& reference) {
    std::vector<std::string> cand = words_lower(candidate);
    std::vector<std::string> ref = words_lower(reference);
    if (cand.empty() || ref.empty()) return cand.empty() && ref.empty() ? 1.0 : 0.0;

    // two-pass greedy alignment: exact matches first, then stem matches
    std::vector<int> align(cand.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);
    for (int pass = 0; pass < 2; ++pass) {
        for (size_t i = 0; i < cand.size(); ++i) {
            if (align[i] >= 0) continue;
            for (size_t j = 0; j < ref.size(); ++j) {
                if (ref_used[j]) continue;
                bool hit = pass == 0 ? cand[i] == ref[j] : stem(cand[i]) == stem(ref[j]);
                if (hit) {
                    align[i] = static_cast<int>(j);
                    ref_used[j] = true;
                    break;
                }
            }
        }
    }
    int matches = 0;
    for (int a : align) matches += a >= 0 ? 1 : 0;
    if (matches == 0) return 0.0;

    double p = static_cast<double>(matches) / cand.size();
    double r = static_cast<double>(matches) / ref.size();
    double fmean = 10.0 * p * r / (r + 9.0 * p);

    // chunks: maximal runs of adjacent candidate matches mapping to adjacent
    // reference positions
    int chunks = 0;
    int prev_ref = -2;
    bool in_chunk = false;
    for (size_t i = 0; i < cand.size(); ++i) {
        if (align[i] < 0) {
            in_chunk = false;
            prev_ref = -2;
            continue;
        }
        if (!in_chunk || align[i] != prev_ref + 1) ++chunks;
        in_chunk = true;
        prev_ref = align[i];
    }
    // zero penalty for a single chunk, so identical strings score exactly 1
    double frag = static_cast<double>(chunks - 1) / matches;
    double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "task: " << task_name(task) << "\n";
    os << "metric: " << metric_name << "\n";
    os << "value: " << value << "\n";
    os << "n: " << n << "\n";
    if (metric_name == "tanimoto") os << "exact_canonical_match_rate: " << exact_match_rate << "\n";
    if (metric_name == "inverse_rmse") os << "raw_inverse_rmse: " << raw_inverse_rmse << "\n";
    for (const auto& note : notes) os << "note: " << note << "\n";
    return os.str();
}

MetricReport evaluate(TaskKind task, const std::vector<std::string>& predictions,
                      const std::vector<std::string>& golds) {
    if (predictions.size() != golds.size())
        throw std::invalid_argument("evaluate: predictions/golds length mismatch");
    if (predictions.empty()) throw std::invalid_argument("evaluate: empty inputs");
    MetricReport rep;
    rep.task = task;
    rep.n = predictions.size();
    switch (output_format(task)) {
        case OutputFormat::Text: {
            rep.metric_name = "meteor_style";
            rep.notes.push_back("exact+stem matching only, no synonym tables");
            double sum = 0.0;
            for (size_t i = 0; i < predictions.size(); ++i)
                sum += meteor_style_score(predictions[i], golds[i]);
            rep.value = sum / predictions.size();
            break;
        }
        case OutputFormat::Smiles:
        case OutputFormat::Reaction: {
            rep.metric_name = "tanimoto";
            rep.notes.push_back("hashed-path fingerprint surrogate, not MACCS-166");
            double sum = 0.0;
            size_t exact = 0;
            for (size_t i = 0; i < predictions.size(); ++i) {
                bool flag = false;
                sum += answer_reward(task, predictions[i], golds[i], &flag);
                auto p = try_parse_smiles(predictions[i]);
                auto g = try_parse_smiles(golds[i]);
                if (p && g && validate(*p) && canonicalize(*p) == canonicalize(*g)) ++exact;
            }
            rep.value = sum / predictions.size();
            rep.exact_match_rate = static_cast<double>(exact) / predictions.size();
            break;
        }
        case OutputFormat::YesNo: {
            rep.metric_name = "accuracy";
            double correct = 0.0;
            for (size_t i = 0; i < predictions.size(); ++i)
                correct += answer_reward(task, predictions[i], golds[i]);
            rep.value = correct / predictions.size();
            break;
        }
        case OutputFormat::Float: {
            rep.metric_name = "inverse_rmse";
            double se = 0.0;
            size_t parsed = 0;
            for (size_t i = 0; i < predictions.size(); ++i) {
                bool flag = false;
                double r = answer_reward(task, predictions[i], golds[i], &flag);
                if (flag) {
                    rep.notes.push_back("unparseable prediction at index " + std::to_string(i));
                    se += 1e6;  // unparseable counts as a large error
                } else {
                    // recover |pred-gold| from the bounded reward form
                    double abs_err = 1.0 / r - 1.0;
                    se += abs_err * abs_err;
                }
                ++parsed;
            }
            double rmse = std::sqrt(se / parsed);
            rep.raw_inverse_rmse = rmse == 0.0 ? kInverseRmseCap : std::min(1.0 / rmse, kInverseRmseCap);
            rep.value = rep.raw_inverse_rmse;
            break;
        }
    }
    return rep;
}

} // namespace molr
