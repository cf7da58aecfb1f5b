#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "molr/data_pipeline.hpp"
#include "molr/microtasks.hpp"

using namespace molr;

namespace {

TaskRecord rec(TaskKind t, const std::string& in, const std::string& out, const std::string& id) {
    TaskRecord r;
    r.task = t;
    r.input = in;
    r.output = out;
    r.id = id;
    return r;
}

std::vector<TaskRecord> uniform_records(TaskKind t, int n, const std::string& prefix) {
    std::vector<TaskRecord> rs;
    for (int i = 0; i < n; ++i)
        rs.push_back(rec(t, "in" + std::to_string(i), "out" + std::to_string(i),
                         prefix + std::to_string(i)));
    return rs;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("task and cot jsonl round-trip with fixed field order") {
    std::vector<TaskRecord> rs = {rec(TaskKind::BBBP, "CCO", "Yes", "a-1"),
                                  rec(TaskKind::ESOL, "CCN", "-1.5", "a-2")};
    std::string p = temp_path("molr_task.jsonl");
    save_task_records(rs, p);
    std::string raw = read_file(p);
    CHECK(raw.rfind("{\"task\":\"BBBP\",\"input\":\"CCO\",\"output\":\"Yes\",\"id\":\"a-1\"}", 0) ==
          0);
    auto back = load_task_records(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].task == TaskKind::BBBP);
    CHECK(back[1].input == "CCN");
    CHECK(back[1].id == "a-2");

    CoTRecord c;
    c.base = rs[0];
    c.think = "Because of the rings.";
    c.answer = "Yes";
    c.flags.annotated = true;
    c.flags.needs_denoise = true;
    std::string pc = temp_path("molr_cot.jsonl");
    save_cot_records({c}, pc);
    auto cback = load_cot_records(pc);
    REQUIRE(cback.size() == 1);
    CHECK(cback[0].base.id == "a-1");
    CHECK(cback[0].think == c.think);
    CHECK(cback[0].answer == "Yes");
    CHECK(cback[0].flags.annotated);
    CHECK(cback[0].flags.needs_denoise);
    CHECK_FALSE(cback[0].flags.denoised);
    std::remove(p.c_str());
    std::remove(pc.c_str());
}

TEST_CASE("split 100 records of one task is exactly 80/10/10") {
    SplitResult s = aggregate_and_split({uniform_records(TaskKind::BBBP, 100, "b-")}, 7);
    CHECK(s.train.size() == 80);
    CHECK(s.valid.size() == 10);
    CHECK(s.test.size() == 10);
}

TEST_CASE("split 10 records is exactly 8/1/1") {
    SplitResult s = aggregate_and_split({uniform_records(TaskKind::ESOL, 10, "e-")}, 7);
    CHECK(s.train.size() == 8);
    CHECK(s.valid.size() == 1);
    CHECK(s.test.size() == 1);
}

TEST_CASE("split is a per-task partition within one of the exact ratio") {
    std::vector<std::vector<TaskRecord>> subsets = {
        uniform_records(TaskKind::BBBP, 23, "b-"),
        uniform_records(TaskKind::ESOL, 41, "e-"),
        uniform_records(TaskKind::SmilesGeneration, 17, "g-"),
    };
    SplitResult s = aggregate_and_split(subsets, 3);
    std::set<std::string> ids;
    size_t total = 0;
    auto tally = [&](const std::vector<TaskRecord>& part) {
        for (const auto& r : part) {
            CHECK(ids.insert(r.id).second);  // disjoint
            ++total;
        }
    };
    tally(s.train);
    tally(s.valid);
    tally(s.test);
    CHECK(total == 81);

    for (TaskKind t : {TaskKind::BBBP, TaskKind::ESOL, TaskKind::SmilesGeneration}) {
        auto count = [&](const std::vector<TaskRecord>& part) {
            size_t c = 0;
            for (const auto& r : part)
                if (r.task == t) ++c;
            return c;
        };
        size_t n = count(s.train) + count(s.valid) + count(s.test);
        CHECK(std::abs(static_cast<double>(count(s.train)) - 0.8 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(count(s.valid)) - 0.1 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(count(s.test)) - 0.1 * n) <= 1.0);
    }
}

TEST_CASE("split is seed-deterministic and duplicate ids are rejected") {
    auto subsets = std::vector<std::vector<TaskRecord>>{uniform_records(TaskKind::BBBP, 30, "b-")};
    SplitResult a = aggregate_and_split(subsets, 11);
    SplitResult b = aggregate_and_split(subsets, 11);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);

    auto dup = subsets;
    dup.push_back({rec(TaskKind::BBBP, "x", "y", "b-5")});
    CHECK_THROWS_WITH_AS(aggregate_and_split(dup, 11),
                         doctest::Contains("duplicate ids: b-5"), std::invalid_argument);
    CHECK_THROWS_AS(aggregate_and_split({}, 11), std::invalid_argument);
}

TEST_CASE("reduce_2d on 2-D data is a distance-preserving rotation") {
    Rng rng(5);
    Mat x(20, 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x(i, 0) = rng.gaussian() * 3.0;
        x(i, 1) = rng.gaussian();
    }
    Mat y = reduce_2d(x);
    Mat xc = x.rowwise() - x.colwise().mean();
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
            double dx = (xc.row(i) - xc.row(j)).norm();
            double dy = (y.row(i) - y.row(j)).norm();
            CHECK(std::abs(dx - dy) < 1e-9);
        }
    // top component carries at least as much variance as the second
    double v0 = y.col(0).squaredNorm();
    double v1 = y.col(1).squaredNorm();
    CHECK(v0 >= v1);
}

TEST_CASE("reduce_2d collinear data lands on the first axis") {
    Mat x(5, 3);
    for (int i = 0; i < 5; ++i) {
        x(i, 0) = 2.0 * i;
        x(i, 1) = -1.0 * i;
        x(i, 2) = 0.5 * i;
    }
    Mat y = reduce_2d(x);
    for (Eigen::Index i = 0; i < y.rows(); ++i) CHECK(std::abs(y(i, 1)) < 1e-9);
    // sign convention: the largest-magnitude loading is positive, so the
    // dominant raw axis (col 0, increasing) maps to increasing coords
    CHECK(y(4, 0) > y(0, 0));
}

TEST_CASE("reduce_2d rejects degenerate input") {
    CHECK_THROWS_AS(reduce_2d(Mat::Random(2, 4)), std::invalid_argument);
    CHECK_THROWS_AS(reduce_2d(Mat::Zero(10, 4)), std::invalid_argument);  // zero variance
    CHECK_THROWS_AS(reduce_2d(Mat::Random(5, 1)), std::invalid_argument);
}

namespace {

Mat two_cluster_coords() {
    Rng rng(42);
    Mat coords(1000, 2);
    for (int i = 0; i < 900; ++i) {
        coords(i, 0) = rng.gaussian() * 0.3;
        coords(i, 1) = rng.gaussian() * 0.3;
    }
    for (int i = 900; i < 1000; ++i) {
        coords(i, 0) = 10.0 + rng.gaussian() * 0.3;
        coords(i, 1) = 10.0 + rng.gaussian() * 0.3;
    }
    return coords;
}

} // namespace

TEST_CASE("stratified sampling balances a 900/100 two-cluster population") {
    Mat coords = two_cluster_coords();
    std::vector<size_t> picked = stratified_sample(coords, 100, 2, 9);
    REQUIRE(picked.size() == 100);
    size_t small_cluster = 0;
    std::set<size_t> unique(picked.begin(), picked.end());
    CHECK(unique.size() == 100);
    for (size_t i : picked)
        if (i >= 900) ++small_cluster;
    CHECK(small_cluster == 50);
}

TEST_CASE("stratified sampling is seed-deterministic with seed-independent cell counts") {
    Mat coords = two_cluster_coords();
    auto a = stratified_sample(coords, 60, 2, 1);
    auto b = stratified_sample(coords, 60, 2, 1);
    CHECK(a == b);
    auto c = stratified_sample(coords, 60, 2, 2);
    CHECK(a != c);
    auto count_small = [](const std::vector<size_t>& v) {
        size_t n = 0;
        for (size_t i : v)
            if (i >= 900) ++n;
        return n;
    };
    CHECK(count_small(a) == count_small(c));
    CHECK_THROWS_AS(stratified_sample(coords, 1001, 2, 1), std::invalid_argument);
    CHECK(stratified_sample(coords, 0, 2, 1).empty());
}

TEST_CASE("answers_match applies task semantics") {
    CHECK(answers_match(TaskKind::BBBP, "yes", "Yes"));
    CHECK_FALSE(answers_match(TaskKind::BBBP, "No", "Yes"));
    CHECK(answers_match(TaskKind::ESOL, "1.2004", "1.2"));
    CHECK_FALSE(answers_match(TaskKind::ESOL, "1.21", "1.2"));
    CHECK(answers_match(TaskKind::SmilesGeneration, "OCC", "C(O)C"));
    CHECK_FALSE(answers_match(TaskKind::SmilesGeneration, "OCC", "CCC"));
    CHECK(answers_match(TaskKind::Retrosynthesis, "CC.OC", "CO.CC"));
    CHECK(answers_match(TaskKind::MoleculeCaptioning, "an alkane", "an alkane"));
    CHECK_FALSE(answers_match(TaskKind::MoleculeCaptioning, "an Alkane", "an alkane"));
}

TEST_CASE("annotate accepts a correct reply on the first round") {
    MockChatClient client({"It has two carbons and an oxygen.\nAnswer: CCO"});
    auto res = annotate_cot({rec(TaskKind::SmilesGeneration, "ethanol", "CCO", "r-1")}, client);
    REQUIRE(res.records.size() == 1);
    CHECK(res.skipped_ids.empty());
    CHECK(res.records[0].think == "It has two carbons and an oxygen.");
    CHECK(res.records[0].answer == "CCO");
    CHECK(res.records[0].flags.annotated);
    CHECK_FALSE(res.records[0].flags.needs_denoise);
    CHECK(client.calls().size() == 1);
}

TEST_CASE("annotate runs one self-correct round and flags the result") {
    MockChatClient client({"Probably propane.\nAnswer: CCC",
                           "I already know the correct answer. It must be the two-carbon "
                           "alcohol.\nAnswer: CCO"});
    auto res = annotate_cot({rec(TaskKind::SmilesGeneration, "ethanol", "CCO", "r-2")}, client);
    REQUIRE(res.records.size() == 1);
    CHECK(res.records[0].flags.annotated);
    CHECK(res.records[0].flags.needs_denoise);
    CHECK(res.records[0].answer == "CCO");
    CHECK(res.records[0].think.find("two-carbon") != std::string::npos);
    REQUIRE(client.calls().size() == 2);
    // gold is revealed only in the second round
    CHECK(client.calls()[1].back().content.find("CCO") != std::string::npos);
    CHECK(client.calls()[0].back().content.find("CCO") == std::string::npos);
}

TEST_CASE("annotate skips a record after three failed transport attempts") {
    MockChatClient client({"<timeout>", "<timeout>", "<timeout>", "ok reply\nAnswer: Yes"});
    auto res = annotate_cot({rec(TaskKind::BBBP, "CCO", "Yes", "r-3"),
                             rec(TaskKind::BBBP, "CCN", "Yes", "r-4")},
                            client);
    REQUIRE(res.skipped_ids.size() == 1);
    CHECK(res.skipped_ids[0] == "r-3");
    REQUIRE(res.records.size() == 1);
    CHECK(res.records[0].base.id == "r-4");
    CHECK(res.records[0].flags.annotated);
}

namespace {

CoTRecord cot(const std::string& id, const std::string& think) {
    CoTRecord c;
    c.base = rec(TaskKind::BBBP, "CCO", "Yes", id);
    c.think = think;
    c.answer = "Yes";
    c.flags.annotated = true;
    c.flags.needs_denoise = true;
    return c;
}

} // namespace

TEST_CASE("denoiser strips every injected anchor sentence across 50 cases") {
    const auto& anchors = default_anchor_phrases();
    std::vector<CoTRecord> records;
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        std::vector<std::string> sentences = {"The molecule is small.",
                                              "Polar groups are absent.",
                                              "So permeability is high."};
        const std::string& anchor = anchors[rng.below(anchors.size())];
        std::string injected = (i % 2 ? "Well, " + anchor + " here." : anchor + ", so I restate it.");
        sentences.insert(sentences.begin() + static_cast<long>(rng.below(4)), injected);
        std::string think;
        for (const auto& s : sentences) {
            if (!think.empty()) think += " ";
            think += s;
        }
        records.push_back(cot("d-" + std::to_string(i), think));
    }
    DenoiseResult res = denoise(records);
    CHECK(res.dropped_ids.empty());
    REQUIRE(res.records.size() == 50);
    for (const auto& r : res.records) {
        for (const auto& a : anchors) CHECK(r.think.find(a) == std::string::npos);
        CHECK(r.flags.denoised);
        CHECK_FALSE(r.flags.needs_denoise);
        CHECK(r.think.find("The molecule is small.") != std::string::npos);
    }
}

TEST_CASE("denoiser leaves clean records byte-identical and is idempotent") {
    CoTRecord clean = cot("c-1", "Two sentences here. Nothing to remove!");
    clean.flags.needs_denoise = false;
    CoTRecord dirty = cot("c-2", "Keep this. I already know the correct answer. And this.");
    CoTRecord doomed = cot("c-3", "Honestly, I already know the correct answer.");
    DenoiseResult res = denoise({clean, dirty, doomed});
    REQUIRE(res.records.size() == 2);
    CHECK(res.records[0].think == clean.think);
    CHECK_FALSE(res.records[0].flags.denoised);  // untouched record, untouched flags
    CHECK(res.records[1].think == "Keep this. And this.");
    REQUIRE(res.dropped_ids.size() == 1);
    CHECK(res.dropped_ids[0] == "c-3");

    DenoiseResult again = denoise(res.records);
    CHECK(again.dropped_ids.empty());
    REQUIRE(again.records.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(again.records[i].think == res.records[i].think);
        CHECK(again.records[i].flags.denoised == res.records[i].flags.denoised);
    }
}

TEST_CASE("validation sample takes ceil(fraction * n) seeded ids") {
    std::vector<CoTRecord> records;
    for (int i = 0; i < 10; ++i) records.push_back(cot("v-" + std::to_string(i), "Some text."));
    auto ids = validation_sample(records, 0.05, 4);
    CHECK(ids.size() == 1);  // ceil(0.5)
    CHECK(validation_sample(records, 0.25, 4).size() == 3);
    CHECK(validation_sample(records, 1.0, 4).size() == 10);
    CHECK(ids == validation_sample(records, 0.05, 4));
    CHECK_THROWS_AS(validation_sample(records, 1.5, 4), std::invalid_argument);

    std::string p = temp_path("molr_manifest.csv");
    write_validation_manifest(ids, p);
    std::string raw = read_file(p);
    CHECK(raw == "id,accept,reject\n" + ids[0] + ",,\n");
    std::remove(p.c_str());
}

TEST_CASE("embed_records yields one deterministic row per record") {
    MicroSuite suite = make_micro_suite(1, 1);
    Model m = make_micro_model(suite, 1);
    std::vector<TaskRecord> batch(suite.instruction.begin(), suite.instruction.begin() + 4);
    Mat rows = embed_records(batch, m);
    CHECK(rows.rows() == 4);
    CHECK(rows.cols() == m.config().d_model);
    Mat again = embed_records(batch, m);
    CHECK((rows - again).norm() == 0.0);
    CHECK_THROWS_AS(embed_records({}, m), std::invalid_argument);
    TaskRecord empty = batch[0];
    empty.input = "";
    CHECK_THROWS_AS(embed_records({empty}, m), std::invalid_argument);
}
