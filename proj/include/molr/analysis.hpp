#pragma once
#include <array>
#include <map>
#include <string>
#include <vector>

#include "molr/data_pipeline.hpp"
#include "molr/model.hpp"

namespace molr {

inline constexpr double kHistLo = -0.05;
inline constexpr double kHistHi = 0.05;
inline constexpr double kHistBinWidth = 0.002;
inline constexpr int kHistBins = 50;  // (0.05 - (-0.05)) / 0.002

// Δ‖W‖₂ = max(‖W_s‖₂ − ‖W_i‖₂, 0); shapes must match
double l2_delta(const Mat& specialist, const Mat& init);

// "merged LoRA weights" default to the flattened concatenation of the A and B
// entries per target; Product gives the scaled B*A delta entries instead
enum class MergeMode { Concat, Product };

struct LayerHistogram {
    std::string layer;                       // e.g. "Layer_3_q"
    std::array<double, kHistBins> rho{};     // ρ = n/(N·Δb) over in-range mass
    long in_range = 0;                       // N_l
    long out_of_range = 0;                   // excluded from N_l, reported

    double bin_left(int b) const { return kHistLo + b * kHistBinWidth; }
    double out_of_range_fraction() const;
};

LayerHistogram layer_histogram(const std::string& layer, const std::vector<double>& weights);

// flattened merged weights keyed by display layer name ("layer3.q" -> "Layer_3_q")
std::map<std::string, std::vector<double>> merged_lora_weights(const AdapterSet& set,
                                                               MergeMode mode = MergeMode::Concat);
std::vector<LayerHistogram> adapter_histograms(const AdapterSet& set,
                                               MergeMode mode = MergeMode::Concat);

struct DensityDiff {
    std::vector<std::string> layers;
    Mat values;     // layers x bins, rescaled to [-1, 1]
    double scale = 0.0;  // max(|min|, |max|) of the raw differences
};

// Δρ_l(b) = ρ_l(b) − ρ_ref,l(b), symmetrically normalized; grids must match
DensityDiff density_diff(const std::vector<LayerHistogram>& specialist,
                         const std::vector<LayerHistogram>& reference);

// mean intra-task pairwise distance per task over 2-D coordinates
std::map<std::string, double> task_dispersion(const Mat& coords,
                                              const std::vector<TaskRecord>& samples);

struct ProjectionResult {
    Mat before, after;   // n x 2 each
    std::map<std::string, double> dispersion_before, dispersion_after;
};

ProjectionResult project_representations(const std::vector<TaskRecord>& samples,
                                         const Model& before, const Model& after);
// checkpoint variant; missing/corrupt files raise via the loader
ProjectionResult project_representations(const std::vector<TaskRecord>& samples,
                                         const std::string& before_ckpt,
                                         const std::string& after_ckpt);

// Keyword-rule step taxonomy; first matching label wins, else "other". The
// paper leaves the letter semantics open, so the default is configuration,
// not ground truth: A = problem Analysis, C = Comparison, E = Evidence
// recall, I = Inference.
struct ChainTaxonomy {
    std::vector<std::pair<std::string, std::vector<std::string>>> rules;
    static ChainTaxonomy defaults();
};

std::vector<std::string> segment_think(const std::string& think);  // paragraphs, else sentences
std::string label_step(const std::string& step, const ChainTaxonomy& taxonomy);

// path strings like "A->C->I" (consecutive duplicate labels collapsed) with
// relative frequencies summing to 1
std::map<std::string, double> chain_distribution(const std::vector<CoTRecord>& corpus,
                                                 const ChainTaxonomy& taxonomy =
                                                     ChainTaxonomy::defaults());

// CSV emitters: histograms as (layer, bin_left, rho, delta_rho), chains as
// (path, frequency); a small manifest ties the artifacts together
void write_histogram_csv(const std::string& path, const std::vector<LayerHistogram>& hists,
                         const DensityDiff* diff = nullptr);
void write_chain_csv(const std::string& path, const std::map<std::string, double>& distribution);
void write_analysis_manifest(const std::string& path,
                             const std::map<std::string, std::string>& entries);

} // namespace molr
