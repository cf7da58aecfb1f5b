#include "molr/data_pipeline.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "molr/smiles.hpp"

namespace molr {

namespace {

using ojson = nlohmann::ordered_json;

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

ojson task_to_json(const TaskRecord& r) {
    ojson j;
    j["task"] = task_name(r.task);
    j["input"] = r.input;
    j["output"] = r.output;
    j["id"] = r.id;
    return j;
}

TaskRecord task_from_json(const ojson& j) {
    TaskRecord r;
    auto t = task_from_name(j.at("task").get<std::string>());
    if (!t) throw std::runtime_error("unknown task name: " + j.at("task").get<std::string>());
    r.task = *t;
    r.input = j.at("input").get<std::string>();
    r.output = j.at("output").get<std::string>();
    r.id = j.at("id").get<std::string>();
    return r;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

// "... Answer: X" -> {think, answer}; missing marker leaves answer empty
std::pair<std::string, std::string> split_answer_line(const std::string& text) {
    size_t pos = text.rfind("Answer:");
    if (pos == std::string::npos) return {trim(text), ""};
    return {trim(text.substr(0, pos)), trim(text.substr(pos + 7))};
}

void fisher_yates(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

} // namespace

void save_task_records(const std::vector<TaskRecord>& records, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const auto& r : records) out << task_to_json(r).dump() << "\n";
}

std::vector<TaskRecord> load_task_records(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<TaskRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        records.push_back(task_from_json(ojson::parse(line)));
    }
    return records;
}

void save_cot_records(const std::vector<CoTRecord>& records, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const auto& r : records) {
        ojson j = task_to_json(r.base);
        j["think"] = r.think;
        j["answer"] = r.answer;
        ojson f;
        f["annotated"] = r.flags.annotated;
        f["denoised"] = r.flags.denoised;
        f["manually_validated"] = r.flags.manually_validated;
        f["needs_denoise"] = r.flags.needs_denoise;
        j["flags"] = f;
        out << j.dump() << "\n";
    }
}

std::vector<CoTRecord> load_cot_records(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<CoTRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ojson j = ojson::parse(line);
        CoTRecord r;
        r.base = task_from_json(j);
        r.think = j.at("think").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        const ojson& f = j.at("flags");
        r.flags.annotated = f.at("annotated").get<bool>();
        r.flags.denoised = f.at("denoised").get<bool>();
        r.flags.manually_validated = f.at("manually_validated").get<bool>();
        r.flags.needs_denoise = f.at("needs_denoise").get<bool>();
        records.push_back(r);
    }
    return records;
}

Mat embed_records(const std::vector<TaskRecord>& records, const Model& model) {
    if (records.empty()) throw std::invalid_argument("embed_records: empty record list");
    Mat rows(static_cast<Eigen::Index>(records.size()), model.config().d_model);
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].input.empty())
            throw std::invalid_argument("embed_records: empty input in record " + records[i].id);
        std::vector<int> tokens = {model.vocab().bos()};
        for (int id : model.vocab().encode(records[i].input)) tokens.push_back(id);
        rows.row(static_cast<Eigen::Index>(i)) = model.embed(tokens);
    }
    return rows;
}

Mat reduce_2d(const Mat& rows) {
    if (rows.rows() < 3) throw std::invalid_argument("reduce_2d: need at least 3 rows");
    if (rows.cols() < 2) throw std::invalid_argument("reduce_2d: need at least 2 columns");
    Mat centered = rows.rowwise() - rows.colwise().mean();
    Mat cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("reduce_2d: eigensolve failed");
    Eigen::Index d = cov.cols();
    if (solver.eigenvalues()(d - 1) <= 1e-12)
        throw std::invalid_argument("reduce_2d: input has zero variance");
    Mat comps(d, 2);
    comps.col(0) = solver.eigenvectors().col(d - 1);  // eigenvalues ascend
    comps.col(1) = solver.eigenvectors().col(d - 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::Index arg;
        comps.col(c).cwiseAbs().maxCoeff(&arg);
        if (comps(arg, c) < 0.0) comps.col(c) = -comps.col(c);
    }
    return centered * comps;
}

std::vector<size_t> stratified_sample(const Mat& coords, size_t quota, int grid, uint64_t seed) {
    size_t n = static_cast<size_t>(coords.rows());
    if (quota > n)
        throw std::invalid_argument("stratified_sample: quota " + std::to_string(quota) +
                                    " exceeds population " + std::to_string(n));
    if (grid < 1) throw std::invalid_argument("stratified_sample: grid must be >= 1");
    if (coords.cols() != 2) throw std::invalid_argument("stratified_sample: coords must be n x 2");
    if (quota == 0) return {};

    double minx = coords.col(0).minCoeff(), maxx = coords.col(0).maxCoeff();
    double miny = coords.col(1).minCoeff(), maxy = coords.col(1).maxCoeff();
    double spanx = maxx - minx, spany = maxy - miny;
    auto bucket = [&](double v, double lo, double span) {
        if (span <= 0.0) return 0;
        int b = static_cast<int>((v - lo) / span * grid);
        return std::min(b, grid - 1);
    };
    std::map<int, std::vector<size_t>> cells;  // key ascending -> stable cell order
    for (size_t i = 0; i < n; ++i) {
        int cx = bucket(coords(static_cast<Eigen::Index>(i), 0), minx, spanx);
        int cy = bucket(coords(static_cast<Eigen::Index>(i), 1), miny, spany);
        cells[cy * grid + cx].push_back(i);
    }

    Rng rng(seed);
    std::vector<size_t> picked;
    picked.reserve(quota);
    while (picked.size() < quota) {
        for (auto& [key, pool] : cells) {
            if (pool.empty()) continue;
            size_t j = rng.below(pool.size());
            picked.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
            if (picked.size() == quota) break;
        }
    }
    return picked;
}

SplitResult aggregate_and_split(const std::vector<std::vector<TaskRecord>>& subsets,
                                uint64_t seed) {
    std::vector<TaskRecord> all;
    for (const auto& s : subsets) all.insert(all.end(), s.begin(), s.end());
    if (all.empty()) throw std::invalid_argument("aggregate_and_split: no records");

    std::set<std::string> seen;
    std::vector<std::string> dups;
    for (const auto& r : all)
        if (!seen.insert(r.id).second) dups.push_back(r.id);
    if (!dups.empty()) {
        std::string msg = "aggregate_and_split: duplicate ids:";
        for (const auto& d : dups) msg += " " + d;
        throw std::invalid_argument(msg);
    }

    SplitResult out;
    Rng rng(seed);
    for (TaskKind t : all_tasks()) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < all.size(); ++i)
            if (all[i].task == t) idx.push_back(i);
        if (idx.empty()) continue;
        Rng trng = rng.split("split-" + task_name(t));
        fisher_yates(idx, trng);

        // 8:1:1 by largest remainder, remainder ties resolved train > valid > test
        size_t n = idx.size();
        double exact[3] = {0.8 * n, 0.1 * n, 0.1 * n};
        size_t count[3];
        double frac[3];
        size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            count[k] = static_cast<size_t>(exact[k]);
            frac[k] = exact[k] - static_cast<double>(count[k]);
            assigned += count[k];
        }
        while (assigned < n) {
            int best = 0;
            for (int k = 1; k < 3; ++k)
                if (frac[k] > frac[best] + 1e-12) best = k;
            ++count[best];
            frac[best] = -1.0;
            ++assigned;
        }
        size_t p = 0;
        for (size_t i = 0; i < count[0]; ++i) out.train.push_back(all[idx[p++]]);
        for (size_t i = 0; i < count[1]; ++i) out.valid.push_back(all[idx[p++]]);
        for (size_t i = 0; i < count[2]; ++i) out.test.push_back(all[idx[p++]]);
    }
    return out;
}

bool answers_match(TaskKind task, const std::string& got, const std::string& gold) {
    std::string g = trim(got), ref = trim(gold);
    switch (output_format(task)) {
    case OutputFormat::YesNo:
        return lower(g) == lower(ref);
    case OutputFormat::Float: {
        try {
            size_t ag = 0, ar = 0;
            double a = std::stod(g, &ag);
            double b = std::stod(ref, &ar);
            if (ag == g.size() && ar == ref.size()) return std::abs(a - b) <= 1e-3;
        } catch (const std::exception&) {
        }
        return g == ref;
    }
    case OutputFormat::Smiles:
    case OutputFormat::Reaction: {
        try {
            return canonicalize(g) == canonicalize(ref);
        } catch (const std::exception&) {
        }
        return g == ref;
    }
    case OutputFormat::Text:
        return g == ref;
    }
    return g == ref;
}

AnnotateResult annotate_cot(const std::vector<TaskRecord>& records, ChatClient& client) {
    AnnotateResult res;
    for (const auto& rec : records) {
        std::vector<ChatMessage> messages = {
            {"system",
             "You are a careful chemistry assistant. Reason step by step, then finish "
             "with a final line of the form 'Answer: <answer>'."},
            {"user", "Task: " + task_name(rec.task) + "\nInput: " + rec.input},
        };
        try {
            std::string reply = client.complete_with_retries(messages);
            auto [think, answer] = split_answer_line(reply);
            CoTRecord out;
            out.base = rec;
            if (answers_match(rec.task, answer, rec.output)) {
                out.think = think;
                out.answer = answer;
                out.flags.annotated = true;
            } else {
                // one self-correct round with the gold answer revealed; the
                // reveal phrase tends to leak into the reasoning, so flag it
                messages.push_back({"assistant", reply});
                messages.push_back(
                    {"user", "That is not correct. I already know the correct answer: it is " +
                                 rec.output + ". Redo the reasoning so it arrives at this "
                                 "answer, again ending with 'Answer: <answer>'."});
                std::string retry = client.complete_with_retries(messages);
                auto [think2, answer2] = split_answer_line(retry);
                (void)answer2;
                out.think = think2;
                out.answer = rec.output;
                out.flags.annotated = true;
                out.flags.needs_denoise = true;
            }
            res.records.push_back(out);
        } catch (const ChatTransportError& e) {
            std::cerr << "annotate_cot: skipping " << rec.id << ": " << e.what() << "\n";
            res.skipped_ids.push_back(rec.id);
        }
    }
    return res;
}

const std::vector<std::string>& default_anchor_phrases() {
    static const std::vector<std::string> phrases = {
        "I already know the correct answer",
        "the answer is already given",
        "we are told that the answer is",
        "since the correct answer is provided",
        "as stated in the provided answer",
    };
    return phrases;
}

DenoiseResult denoise(const std::vector<CoTRecord>& records,
                      const std::vector<std::string>& anchors) {
    std::vector<std::string> needles;
    for (const auto& a : anchors) needles.push_back(lower(a));

    DenoiseResult res;
    for (const auto& rec : records) {
        // sentences end at ./!/? plus trailing whitespace; the split keeps the
        // raw text so untouched records round-trip byte-identically
        std::vector<std::string> sentences;
        size_t start = 0;
        const std::string& t = rec.think;
        for (size_t i = 0; i < t.size(); ++i) {
            if (t[i] == '.' || t[i] == '!' || t[i] == '?') {
                size_t end = i + 1;
                while (end < t.size() && std::isspace(static_cast<unsigned char>(t[end]))) ++end;
                sentences.push_back(t.substr(start, end - start));
                start = end;
                i = end - 1;
            }
        }
        if (start < t.size()) sentences.push_back(t.substr(start));

        std::string kept;
        bool removed = false;
        for (const auto& sent : sentences) {
            std::string low = lower(sent);
            bool hit = false;
            for (const auto& nd : needles)
                if (low.find(nd) != std::string::npos) {
                    hit = true;
                    break;
                }
            if (hit)
                removed = true;
            else
                kept += sent;
        }
        if (!removed) {
            res.records.push_back(rec);
            continue;
        }
        kept = trim(kept);
        if (kept.empty()) {
            res.dropped_ids.push_back(rec.base.id);
            continue;
        }
        CoTRecord out = rec;
        out.think = kept;
        out.flags.denoised = true;
        out.flags.needs_denoise = false;
        res.records.push_back(out);
    }
    return res;
}

std::vector<std::string> validation_sample(const std::vector<CoTRecord>& records,
                                           double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("validation_sample: fraction must be in [0, 1]");
    if (records.empty() || fraction == 0.0) return {};
    size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(records.size())));
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = Rng(seed).split("validate");
    fisher_yates(idx, rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> ids;
    for (size_t i : idx) ids.push_back(records[i].base.id);
    return ids;
}

void write_validation_manifest(const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "id,accept,reject\n";
    for (const auto& id : ids) out << id << ",,\n";
}

} // namespace molr
