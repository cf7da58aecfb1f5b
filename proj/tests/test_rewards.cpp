#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "molr/fingerprint.hpp"
#include "molr/metrics.hpp"
#include "molr/rewards.hpp"
#include "molr/rng.hpp"
#include "molr/smiles.hpp"

using namespace molr;

namespace {

// build a think string with an exact character count and word-uniqueness ratio
std::string make_think(size_t target_len, int unique_words, int total_words) {
    std::string s;
    for (int i = 0; i < total_words; ++i) {
        if (i) s += ' ';
        s += "w" + std::to_string(i % unique_words);
    }
    while (s.size() < target_len) s += ' ';
    REQUIRE(s.size() == target_len);
    return s;
}

} // namespace

TEST_CASE("yes/no reward is exact match, case- and whitespace-insensitive") {
    CHECK(answer_reward(TaskKind::BBBP, "Yes", "Yes") == 1.0);     // [DERIVED] exact match
    CHECK(answer_reward(TaskKind::BBBP, " yes\n", "Yes") == 1.0);
    CHECK(answer_reward(TaskKind::ClinTox, "No", "Yes") == 0.0);
    bool flag = false;
    CHECK(answer_reward(TaskKind::BBBP, "maybe", "Yes", &flag) == 0.0);
    CHECK(flag);
}

TEST_CASE("float reward is 1/(1+|delta|)") {
    // [DERIVED] |(-2.18) - (-3.18)| = 1 -> 1/(1+1) = 0.5
    CHECK(answer_reward(TaskKind::ESOL, "-2.18", "-3.18") == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(answer_reward(TaskKind::Lipophilicity, "1.5", "1.5") == 1.0);
    // [DERIVED] |2.0 - 1.0| = 1 -> 0.5; |3.0 - 1.0| = 2 -> 1/3
    CHECK(answer_reward(TaskKind::ESOL, "3.0", "1.0") == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    bool flag = false;
    CHECK(answer_reward(TaskKind::ESOL, "not a number", "1.0", &flag) == 0.0);
    CHECK(flag);
}

TEST_CASE("smiles reward: invalid prediction gives zero with diagnostics flag") {
    bool flag = false;
    CHECK(answer_reward(TaskKind::SmilesGeneration, "C(", "CCO", &flag) == 0.0);
    CHECK(flag);
    flag = false;
    // valence-invalid but parseable: pentavalent neutral carbon
    CHECK(answer_reward(TaskKind::SmilesGeneration, "C(C)(C)(C)(C)C", "CCO", &flag) == 0.0);
    CHECK(flag);
}

TEST_CASE("smiles reward equals fingerprint tanimoto for valid predictions") {
    bool flag = true;
    double r = answer_reward(TaskKind::SmilesGeneration, "CCO", "CCO", &flag);
    CHECK_FALSE(flag);
    CHECK(r == 1.0);  // identical molecule

    double r2 = answer_reward(TaskKind::Retrosynthesis, "CCN", "CCO");
    double oracle = tanimoto(fingerprint(parse_smiles("CCN")), fingerprint(parse_smiles("CCO")));
    CHECK(r2 == doctest::Approx(oracle).epsilon(1e-15));
    CHECK(r2 > 0.0);
    CHECK(r2 < 1.0);

    // reward is invariant to the surface form of either side
    double r3 = answer_reward(TaskKind::SmilesGeneration, "OCC", "C(O)C");
    CHECK(r3 == 1.0);
}

TEST_CASE("think reward: length 1569 with all-unique words scores 1") {
    std::string t = make_think(1569, 250, 250);
    CHECK(think_reward(t) == doctest::Approx(1.0).epsilon(1e-12));  // [DERIVED]
}

TEST_CASE("think reward: length 1569 with 25% unique words scores 0.625") {
    // [DERIVED] 0.5*exp(0) + 0.5*0.25 = 0.625
    std::string t = make_think(1569, 4, 16);
    CHECK(think_reward(t) == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("think reward: one sigma away halves the length component correctly") {
    // [DERIVED] length 1069 -> exp(-0.5) length term; all unique words
    std::string t = make_think(1069, 170, 170);
    double expect = 0.5 * std::exp(-0.5) + 0.5;
    CHECK(think_reward(t) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("empty think text scores exactly zero") {
    CHECK(think_reward("") == 0.0);
}

TEST_CASE("combined reward uses alpha=0.8 beta=0.2 and validates the split") {
    std::string think = make_think(1569, 4, 16);  // r_think = 0.625
    RewardBreakdown rb = combined_reward(TaskKind::BBBP, "Yes", "Yes", think);
    CHECK(rb.r_answer == 1.0);
    CHECK(rb.r_think == doctest::Approx(0.625));
    CHECK(rb.r == doctest::Approx(0.8 * 1.0 + 0.2 * 0.625).epsilon(1e-12));  // [DERIVED] 0.925

    RewardBreakdown pure = combined_reward(TaskKind::BBBP, "Yes", "Yes", think, 1.0, 0.0);
    CHECK(pure.r == pure.r_answer);

    CHECK_THROWS(combined_reward(TaskKind::BBBP, "Yes", "Yes", think, 0.8, 0.3));
}

TEST_CASE("standardize: constant batch maps to exact zeros") {
    auto out = standardize({0.7, 0.7, 0.7});
    // zero up to the fp residue of mean(0.7,0.7,0.7), divided by eps
    for (double v : out) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("standardize: two-point batch") {
    // [DERIVED] mean 0.5, pop std 0.5 -> +-0.5/(0.5+1e-6)
    auto out = standardize({0.0, 1.0});
    double expect = 0.5 / (0.5 + 1e-6);
    CHECK(out[0] == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("standardize: random batch has near-zero mean and near-unit std") {
    Rng rng(404);
    std::vector<double> rs;
    for (int i = 0; i < 64; ++i) rs.push_back(rng.uniform());
    auto out = standardize(rs);
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= out.size();
    double var = 0.0;
    for (double v : out) var += (v - mean) * (v - mean);
    var /= out.size();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
}

TEST_CASE("standardize is invariant to positive affine transforms of the batch") {
    Rng rng(405);
    std::vector<double> rs, shifted;
    for (int i = 0; i < 32; ++i) rs.push_back(rng.gaussian());
    for (double v : rs) shifted.push_back(3.0 * v + 7.0);
    auto a = standardize(rs);
    auto b = standardize(shifted);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("standardize rejects an empty batch") {
    CHECK_THROWS(standardize({}));
}

TEST_CASE("standardize_batch fills r_hat from combined rewards") {
    std::vector<RewardBreakdown> batch(3);
    batch[0].r = 0.0;
    batch[1].r = 0.5;
    batch[2].r = 1.0;
    standardize_batch(batch);
    CHECK(batch[1].r_hat == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(batch[0].r_hat < 0.0);
    CHECK(batch[2].r_hat > 0.0);
    CHECK(batch[0].r_hat == doctest::Approx(-batch[2].r_hat).epsilon(1e-12));
}

TEST_CASE("meteor-style score: identity and disjoint extremes") {
    CHECK(meteor_style_score("the cat sat", "the cat sat") == 1.0);  // [DERIVED]
    CHECK(meteor_style_score("alpha beta gamma", "delta epsilon zeta") == 0.0);
    CHECK(meteor_style_score("", "") == 1.0);
    CHECK(meteor_style_score("", "something") == 0.0);
}

TEST_CASE("meteor-style score: hand-computed partial match") {
    // candidate "the cat" vs reference "the cat sat": m=2, P=1, R=2/3
    // Fmean = 10*1*(2/3) / (2/3 + 9) = (20/3)/(29/3) = 20/29, one chunk -> no penalty
    double s = meteor_style_score("the cat", "the cat sat");
    CHECK(s == doctest::Approx(20.0 / 29.0).epsilon(1e-12));  // [DERIVED]
}

TEST_CASE("meteor-style score: fragmentation penalty reduces scrambled candidates") {
    double in_order = meteor_style_score("a b c d", "a b c d");
    double scrambled = meteor_style_score("d c b a", "a b c d");
    CHECK(in_order == 1.0);
    CHECK(scrambled < in_order);
    // [DERIVED] m=4, P=R=1, Fmean=1; 4 chunks -> penalty 0.5*(3/4)^3 = 27/128
    CHECK(scrambled == doctest::Approx(1.0 - 27.0 / 128.0).epsilon(1e-12));
}

TEST_CASE("meteor-style score: stem matching bridges inflected forms") {
    double stemmed = meteor_style_score("the cats sat", "the cat sat");
    CHECK(stemmed == 1.0);  // "cats" stems to "cat"
    CHECK(stem("running") == "runn");
    CHECK(stem("cats") == "cat");
    CHECK(stem("computation") == "computate");
    CHECK(stem("happiness") == "happi");
}

TEST_CASE("meteor-style score is case-insensitive and ignores punctuation") {
    CHECK(meteor_style_score("The cat, sat!", "the cat sat") == 1.0);
}

TEST_CASE("evaluate: classification accuracy") {
    MetricReport rep = evaluate(TaskKind::BBBP, {"Yes", "No", "Yes", "No"},
                                {"Yes", "No", "No", "No"});
    CHECK(rep.metric_name == "accuracy");
    CHECK(rep.value == doctest::Approx(0.75).epsilon(1e-12));  // [DERIVED] 3/4
    CHECK(rep.n == 4);
}

TEST_CASE("evaluate: regression inverse RMSE with cap") {
    // [DERIVED] errors {1, 1} -> RMSE 1 -> 1/RMSE = 1
    MetricReport rep = evaluate(TaskKind::ESOL, {"2.0", "0.0"}, {"1.0", "1.0"});
    CHECK(rep.metric_name == "inverse_rmse");
    CHECK(rep.value == doctest::Approx(1.0).epsilon(1e-12));

    // perfect predictions hit the cap rather than dividing by zero
    MetricReport perfect = evaluate(TaskKind::ESOL, {"1.0"}, {"1.0"});
    CHECK(perfect.value == kInverseRmseCap);
}

TEST_CASE("evaluate: smiles tanimoto plus exact canonical match rate") {
    MetricReport rep = evaluate(TaskKind::SmilesGeneration, {"OCC", "CCN", "C("},
                                {"CCO", "CCO", "CCO"});
    CHECK(rep.metric_name == "tanimoto");
    double t2 = tanimoto(fingerprint(parse_smiles("CCN")), fingerprint(parse_smiles("CCO")));
    CHECK(rep.value == doctest::Approx((1.0 + t2 + 0.0) / 3.0).epsilon(1e-12));
    CHECK(rep.exact_match_rate == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("evaluate: text meteor-style mean") {
    MetricReport rep = evaluate(TaskKind::MoleculeCaptioning,
                                {"the cat sat", "alpha"}, {"the cat sat", "beta"});
    CHECK(rep.metric_name == "meteor_style");
    CHECK(rep.value == doctest::Approx(0.5).epsilon(1e-12));  // [DERIVED] (1+0)/2
}

TEST_CASE("evaluate rejects mismatched or empty inputs") {
    CHECK_THROWS(evaluate(TaskKind::BBBP, {"Yes"}, {}));
    CHECK_THROWS(evaluate(TaskKind::BBBP, {}, {}));
}

TEST_CASE("report to_text names the task and metric") {
    MetricReport rep = evaluate(TaskKind::BBBP, {"Yes"}, {"Yes"});
    std::string txt = rep.to_text();
    CHECK(txt.find("BBBP") != std::string::npos);
    CHECK(txt.find("accuracy") != std::string::npos);
}
