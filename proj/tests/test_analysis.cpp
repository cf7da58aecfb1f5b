#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "molr/analysis.hpp"
#include "molr/checkpoint.hpp"
#include "molr/microtasks.hpp"

using namespace molr;

namespace {

double hist_mass(const LayerHistogram& h) {
    double m = 0.0;
    for (double r : h.rho) m += r * kHistBinWidth;
    return m;
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

CoTRecord think_record(const std::string& id, const std::string& think) {
    CoTRecord c;
    c.base.task = TaskKind::BBBP;
    c.base.input = "x";
    c.base.output = "Yes";
    c.base.id = id;
    c.think = think;
    c.answer = "Yes";
    return c;
}

// unambiguous single-label sentences for the default taxonomy
const std::string kA = "The question asks about the compound.";
const std::string kC = "It is heavier than water.";
const std::string kE = "Such acids are typically corrosive.";
const std::string kI = "Therefore it dissolves.";

} // namespace

TEST_CASE("l2_delta clamps, zeroes on identity, and checks shapes") {
    Mat w = Mat::Random(3, 4);
    CHECK(l2_delta(w, w) == 0.0);
    CHECK(l2_delta(Mat::Ones(2, 2), Mat::Zero(2, 2)) == doctest::Approx(2.0));
    CHECK(l2_delta(Mat::Zero(2, 2), Mat::Ones(2, 2)) == 0.0);  // clamped
    CHECK_THROWS_AS(l2_delta(Mat::Zero(2, 2), Mat::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("layer_histogram puts a point mass at rho = 1/bin_width = 500") {
    std::vector<double> w(40, 0.0011);
    LayerHistogram h = layer_histogram("Layer_0_q", w);
    CHECK(h.in_range == 40);
    CHECK(h.out_of_range == 0);
    int hot = static_cast<int>((0.0011 - kHistLo) / kHistBinWidth);
    for (int b = 0; b < kHistBins; ++b)
        CHECK(h.rho[b] == (b == hot ? doctest::Approx(500.0) : doctest::Approx(0.0)));
    CHECK(hist_mass(h) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_histogram of uniform weights is flat at rho = 10") {
    std::vector<double> w;
    for (int i = 0; i < 1000; ++i) w.push_back(kHistLo + (i + 0.5) * 0.0001);
    LayerHistogram h = layer_histogram("Layer_1_v", w);
    CHECK(h.in_range == 1000);
    for (int b = 0; b < kHistBins; ++b) CHECK(h.rho[b] == doctest::Approx(10.0));
    CHECK(hist_mass(h) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_histogram reports out-of-range weights and rejects empty mass") {
    LayerHistogram h = layer_histogram("Layer_0_v", {0.2, 0.0, -0.3, 0.01});
    CHECK(h.in_range == 2);
    CHECK(h.out_of_range == 2);
    CHECK(h.out_of_range_fraction() == doctest::Approx(0.5));
    CHECK(hist_mass(h) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(layer_histogram("Layer_0_q", {}), std::invalid_argument);
    CHECK_THROWS_AS(layer_histogram("Layer_0_q", {0.3, -0.4}), std::invalid_argument);
}

TEST_CASE("adapter histograms conserve mass in both merge modes") {
    MicroSuite suite = make_micro_suite(3, 1);
    Model m = make_micro_model(suite, 3);
    const AdapterSet& set = *m.find_adapter_set("group1.prediction");
    for (MergeMode mode : {MergeMode::Concat, MergeMode::Product}) {
        auto hists = adapter_histograms(set, mode);
        CHECK(hists.size() == set.entries.size());
        for (const auto& h : hists) {
            CHECK(hist_mass(h) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(h.rho.size() == 50);
            CHECK(h.layer.rfind("Layer_", 0) == 0);
        }
    }
    // fresh adapters have zero B, so the product delta is exactly zero
    auto prod = merged_lora_weights(set, MergeMode::Product);
    for (const auto& [layer, flat] : prod)
        for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("density_diff is zero on identity, extreme-normalized, and antisymmetric") {
    std::vector<double> wa(100, 0.001), wb;
    for (int i = 0; i < 100; ++i) wb.push_back(-0.04 + i * 0.0008);
    std::vector<LayerHistogram> a = {layer_histogram("Layer_0_q", wa),
                                     layer_histogram("Layer_0_v", wb)};
    std::vector<LayerHistogram> b = {layer_histogram("Layer_0_q", wb),
                                     layer_histogram("Layer_0_v", wa)};

    DensityDiff same = density_diff(a, a);
    CHECK(same.scale == 0.0);
    CHECK(same.values.cwiseAbs().maxCoeff() == 0.0);

    DensityDiff ab = density_diff(a, b);
    DensityDiff ba = density_diff(b, a);
    CHECK(ab.values.cwiseAbs().maxCoeff() == doctest::Approx(1.0));  // extreme cell hits ±1
    CHECK(ab.scale == doctest::Approx(ba.scale));
    // antisymmetry before normalization: scale * values flips sign under swap
    CHECK((ab.values * ab.scale + ba.values * ba.scale).cwiseAbs().maxCoeff() < 1e-12);

    // brute-force sign oracle on the unnormalized differences
    for (int b2 = 0; b2 < kHistBins; ++b2) {
        double raw = a[0].rho[b2] - b[0].rho[b2];
        if (raw > 0) CHECK(ab.values(0, b2) > 0);
        if (raw < 0) CHECK(ab.values(0, b2) < 0);
    }

    std::vector<LayerHistogram> renamed = a;
    renamed[1].layer = "Layer_1_v";
    CHECK_THROWS_AS(density_diff(a, renamed), std::invalid_argument);
    CHECK_THROWS_AS(density_diff(a, {a[0]}), std::invalid_argument);
}

TEST_CASE("task_dispersion shrinks when clusters contract") {
    std::vector<TaskRecord> samples;
    Mat wide(4, 2), tight(4, 2);
    for (int i = 0; i < 4; ++i) {
        TaskRecord r;
        r.task = i < 2 ? TaskKind::BBBP : TaskKind::ESOL;
        r.id = "s" + std::to_string(i);
        samples.push_back(r);
        double off = (i % 2 == 0) ? -1.0 : 1.0;
        wide(i, 0) = off * 2.0;
        wide(i, 1) = i < 2 ? 0.0 : 5.0;
        tight(i, 0) = off * 0.1;
        tight(i, 1) = wide(i, 1);
    }
    auto before = task_dispersion(wide, samples);
    auto after = task_dispersion(tight, samples);
    CHECK(before.at("BBBP") == doctest::Approx(4.0));
    CHECK(after.at("BBBP") == doctest::Approx(0.2));
    CHECK(after.at("ESOL") < before.at("ESOL"));
    CHECK_THROWS_AS(task_dispersion(Mat::Zero(2, 2), samples), std::invalid_argument);
}

TEST_CASE("project_representations matches itself and round-trips checkpoints") {
    MicroSuite suite = make_micro_suite(5, 1);
    Model m = make_micro_model(suite, 5);
    std::vector<TaskRecord> samples(suite.instruction.begin(), suite.instruction.begin() + 6);
    ProjectionResult res = project_representations(samples, m, m);
    CHECK(res.before.rows() == 6);
    CHECK(res.before.cols() == 2);
    CHECK((res.before - res.after).norm() == 0.0);
    CHECK(res.dispersion_before == res.dispersion_after);

    std::string ckpt = temp_path("molr_proj.ckpt");
    save_checkpoint(m, ckpt);
    ProjectionResult from_disk = project_representations(samples, ckpt, ckpt);
    CHECK((from_disk.before - res.before).norm() < 1e-12);
    std::remove(ckpt.c_str());
    CHECK_THROWS(project_representations(samples, ckpt, ckpt));  // missing checkpoint
}

TEST_CASE("single labeled record yields a unit A->C->I path") {
    auto dist = chain_distribution({think_record("c1", kA + " " + kC + " " + kI)});
    REQUIRE(dist.size() == 1);
    CHECK(dist.at("A->C->I") == doctest::Approx(1.0));
}

TEST_CASE("step labeling covers all default labels and falls back to other") {
    ChainTaxonomy tax = ChainTaxonomy::defaults();
    CHECK(label_step(kA, tax) == "A");
    CHECK(label_step(kC, tax) == "C");
    CHECK(label_step(kE, tax) == "E");
    CHECK(label_step(kI, tax) == "I");
    CHECK(label_step("Purple monkeys dance.", tax) == "other");
}

TEST_CASE("segmentation prefers blank-line paragraphs, else sentences") {
    auto paras = segment_think("First paragraph.\nStill first.\n\nSecond paragraph.");
    REQUIRE(paras.size() == 2);
    CHECK(paras[1] == "Second paragraph.");
    auto sents = segment_think("One. Two! Three?");
    REQUIRE(sents.size() == 3);
    CHECK(sents[2] == "Three?");
    CHECK(segment_think("").empty());
}

TEST_CASE("chain distribution recovers the 26.0% / 19.7% fixture mix") {
    std::vector<CoTRecord> corpus;
    auto join = [](std::initializer_list<std::string> parts) {
        std::string out;
        for (const auto& p : parts) {
            if (!out.empty()) out += " ";
            out += p;
        }
        return out;
    };
    int n = 0;
    for (int i = 0; i < 260; ++i)
        corpus.push_back(think_record("x" + std::to_string(n++), join({kA, kC, kE, kI})));
    for (int i = 0; i < 197; ++i)
        corpus.push_back(think_record("x" + std::to_string(n++), join({kA, kC, kI})));
    for (int i = 0; i < 543; ++i)
        corpus.push_back(think_record("x" + std::to_string(n++), join({kA, kI})));

    auto dist = chain_distribution(corpus);
    CHECK(std::abs(dist.at("A->C->E->I") - 0.260) <= 0.005);
    CHECK(std::abs(dist.at("A->C->I") - 0.197) <= 0.005);
    double total = 0.0;
    for (const auto& [path, f] : dist) total += f;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(chain_distribution({}), std::invalid_argument);
}

TEST_CASE("consecutive duplicate labels collapse into one step") {
    auto dist = chain_distribution({think_record("c2", kA + " " + kC + " " + kC + " " + kI)});
    CHECK(dist.at("A->C->I") == doctest::Approx(1.0));
}

TEST_CASE("csv and manifest emitters write the documented columns") {
    std::vector<double> w;
    for (int i = 0; i < 100; ++i) w.push_back(-0.04 + i * 0.0008);
    std::vector<LayerHistogram> hists = {layer_histogram("Layer_0_q", w)};
    DensityDiff diff = density_diff(hists, {layer_histogram("Layer_0_q",
                                                            std::vector<double>(50, 0.001))});
    std::string hp = temp_path("molr_hist.csv");
    write_histogram_csv(hp, hists, &diff);
    std::string raw = read_file(hp);
    CHECK(raw.rfind("layer,bin_left,rho,delta_rho\n", 0) == 0);
    CHECK(std::count(raw.begin(), raw.end(), '\n') == 1 + kHistBins);
    CHECK(raw.find("Layer_0_q,-0.05,") != std::string::npos);

    std::string cp = temp_path("molr_chains.csv");
    write_chain_csv(cp, {{"A->C->I", 0.25}, {"A->I", 0.75}});
    CHECK(read_file(cp) == "path,frequency\nA->C->I,0.25\nA->I,0.75\n");

    std::string mp = temp_path("molr_manifest.json");
    write_analysis_manifest(mp, {{"histograms", hp}, {"chains", cp}});
    auto j = nlohmann::json::parse(read_file(mp));
    CHECK(j.at("chains") == cp);
    std::remove(hp.c_str());
    std::remove(cp.c_str());
    std::remove(mp.c_str());
}
