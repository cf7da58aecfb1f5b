#include "molr/microtasks.hpp"

#include <cmath>

#include "molr/smiles.hpp"

namespace molr {

namespace {

std::string chain_smiles(int n) { return std::string(static_cast<size_t>(n), 'C'); }

const std::vector<std::string>& alkane_names() {
    static const std::vector<std::string> names = {"methane", "ethane",  "propane",
                                                   "butane",  "pentane", "hexane"};
    return names;
}

} // namespace

MicroSuite make_micro_suite(uint64_t seed, int per_task) {
    if (per_task <= 0) throw std::invalid_argument("make_micro_suite: per_task must be > 0");
    Rng rng(seed);
    MicroSuite s;
    long counter = 0;
    auto add = [&](TaskKind t, const std::string& in, const std::string& out,
                   const std::string& think) {
        TaskRecord r;
        r.task = t;
        r.input = in;
        r.output = out;
        r.id = task_name(t) + "-" + std::to_string(counter++);
        s.instruction.push_back(r);
        CoTRecord c;
        c.base = r;
        c.think = think;
        c.answer = out;
        c.flags.annotated = true;
        s.cot.push_back(c);
    };

    for (int i = 0; i < per_task; ++i) {
        int n = 1 + static_cast<int>(rng.below(6));
        std::string num = std::to_string(n);
        std::string chain = chain_smiles(n);
        std::string name = alkane_names()[n - 1];

        add(TaskKind::SmilesGeneration, "chain " + num, chain,
            "The request asks for a chain of " + num + " carbons. Each carbon is one C. So I write " +
                num + " C symbols in a row.");
        add(TaskKind::IupacToSmiles, name, chain,
            "The name " + name + " is the alkane with " + num + " carbons. Its SMILES is " + num +
                " C symbols.");
        add(TaskKind::SmilesToIupac, chain, name,
            "The string has " + num + " carbons in a row. The alkane with " + num + " carbons is " +
                name + ".");
        add(TaskKind::MoleculeCaptioning, chain, "linear alkane with " + num + " carbons",
            "Every atom in the string is carbon. They form one unbranched chain of length " + num +
                ".");
        add(TaskKind::ForwardReaction, chain + ".O", chain + "O",
            "The reactants are a chain of " + num + " carbons and an oxygen. Joining them appends O " +
                "to the chain.");
        add(TaskKind::Retrosynthesis, chain + "O", chain + ".O",
            "The product ends in O on a chain of " + num + " carbons. Splitting off the oxygen " +
                "gives the chain and O.");

        std::string bits;
        int ones = 0;
        for (int b = 0; b < 4; ++b) {
            int v = static_cast<int>(rng.below(2));
            ones += v;
            if (b) bits += ' ';
            bits += std::to_string(v);
        }
        add(TaskKind::BBBP, bits, ones % 2 == 0 ? "Yes" : "No",
            "The bits are " + bits + ". There are " + std::to_string(ones) +
                " ones. An even count means Yes, odd means No.");
        add(TaskKind::ClinTox, bits, bits[0] == '1' ? "Yes" : "No",
            "The first bit of " + bits + " is " + bits.substr(0, 1) +
                ". A leading 1 means Yes, a leading 0 means No.");

        int d1 = 1 + static_cast<int>(rng.below(9));
        int d2 = 1 + static_cast<int>(rng.below(9));
        std::string pair = std::to_string(d1) + " " + std::to_string(d2);
        add(TaskKind::ESOL, pair, std::to_string(d1 + d2),
            "The digits are " + pair + ". Their sum is " + std::to_string(d1 + d2) + ".");
        add(TaskKind::Lipophilicity, pair, std::to_string(std::max(d1, d2)),
            "The digits are " + pair + ". The larger one is " + std::to_string(std::max(d1, d2)) +
                ".");
    }

    for (const auto& r : s.instruction)
        if (r.task == TaskKind::SmilesGeneration) s.rl_prompts.push_back(r);
    return s;
}

Vocabulary micro_vocab(const MicroSuite& suite) {
    Vocabulary v;
    for (const auto& r : suite.instruction) {
        v.extend_from_text(prediction_prompt(r.task, r.input));
        v.extend_from_text(inference_prompt(r.task, r.input, r.output));
        v.extend_from_text(r.output);
    }
    for (const auto& c : suite.cot) {
        v.extend_from_text(c.think);
        v.extend_from_text(c.answer);
    }
    return v;
}

std::vector<std::string> micro_pretrain_corpus(const MicroSuite& suite) {
    std::vector<std::string> lines;
    for (const auto& r : suite.instruction)
        lines.push_back(prediction_prompt(r.task, r.input) + r.output);
    for (const auto& c : suite.cot)
        lines.push_back(inference_prompt(c.base.task, c.base.input, c.base.output) +
                        cot_target(c));
    return lines;
}

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq = 160;
    cfg.ffn_mult = 2;
    cfg.lora_rank = 4;
    cfg.lora_scaling = 2.0;
    return cfg;
}

Model make_micro_model(const MicroSuite& suite, uint64_t seed) {
    Rng rng(seed);
    Model m(micro_config(), micro_vocab(suite), rng);
    Rng arng = rng.split("adapters");
    for (int g = 1; g <= kNumGroups; ++g) {
        m.create_lora_set(adapter_set_name(g, AdapterPhase::Prediction), arng);
        m.create_lora_set(adapter_set_name(g, AdapterPhase::Inference), arng);
    }
    return m;
}

double well_formed_fraction(const Model& model, const std::vector<CoTRecord>& records,
                            int max_new) {
    if (records.empty()) throw std::invalid_argument("well_formed_fraction: empty corpus");
    const Vocabulary& v = model.vocab();
    int ok = 0;
    for (const auto& rec : records) {
        const AdapterSet* inf = model.find_adapter_set(
            adapter_set_name(assign_group(rec.base.task), AdapterPhase::Inference));
        std::vector<int> p = {v.bos()};
        for (int id : v.encode(inference_prompt(rec.base.task, rec.base.input, rec.base.output)))
            p.push_back(id);
        GenerateOptions opt;
        opt.max_new = max_new;
        std::vector<int> out = model.generate(p, opt, inf);
        std::string text = v.decode(std::vector<int>(out.begin() + p.size(), out.end()));
        SpanExtract spans = extract_spans(text);
        if (spans.think && spans.answer) ++ok;
    }
    return static_cast<double>(ok) / records.size();
}

double valid_smiles_fraction(const Model& model, const std::vector<TaskRecord>& prompts,
                             int n_samples, uint64_t seed, double temperature, int max_new) {
    if (prompts.empty()) throw std::invalid_argument("valid_smiles_fraction: empty prompts");
    if (n_samples <= 0) throw std::invalid_argument("valid_smiles_fraction: n_samples must be > 0");
    const Vocabulary& v = model.vocab();
    // greedy drafts are deterministic per distinct input; cache them
    std::map<std::string, std::string> draft_cache;
    Rng rng(seed);
    int valid = 0;
    for (int i = 0; i < n_samples; ++i) {
        const TaskRecord& rec = prompts[i % prompts.size()];
        int g = assign_group(rec.task);
        const AdapterSet* pred =
            model.find_adapter_set(adapter_set_name(g, AdapterPhase::Prediction));
        const AdapterSet* inf =
            model.find_adapter_set(adapter_set_name(g, AdapterPhase::Inference));
        auto it = draft_cache.find(rec.input);
        if (it == draft_cache.end()) {
            std::vector<int> p1 = {v.bos()};
            for (int id : v.encode(prediction_prompt(rec.task, rec.input))) p1.push_back(id);
            GenerateOptions dopt;
            dopt.max_new = max_new;
            std::vector<int> d = model.generate(p1, dopt, pred);
            it = draft_cache
                     .emplace(rec.input,
                              v.decode(std::vector<int>(d.begin() + p1.size(), d.end())))
                     .first;
        }
        std::vector<int> p = {v.bos()};
        for (int id : v.encode(inference_prompt(rec.task, rec.input, it->second))) p.push_back(id);
        GenerateOptions opt;
        opt.mode = DecodeMode::Temperature;
        opt.temperature = temperature;
        opt.seed = rng.split("sample-" + std::to_string(i)).next_u64();
        opt.max_new = max_new;
        std::vector<int> out = model.generate(p, opt, inf);
        std::string text = v.decode(std::vector<int>(out.begin() + p.size(), out.end()));
        SpanExtract spans = extract_spans(text);
        if (!spans.answer) continue;
        auto mol = try_parse_smiles(*spans.answer);
        if (mol && validate(*mol)) ++valid;
    }
    return static_cast<double>(valid) / n_samples;
}

BanditResult run_bandit(uint64_t seed, int max_steps, double threshold) {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq = 16;
    cfg.ffn_mult = 2;
    cfg.lora_rank = 8;
    cfg.lora_scaling = 8.0;
    TaskRecord rec;
    rec.task = TaskKind::BBBP;
    rec.input = "arm";
    rec.output = "A";

    Vocabulary v;
    int arm_a = v.extend("A");
    v.extend("Bm");  // second arm; "B" itself is a SMILES atom token already present
    v.extend("left");
    v.extend("right");
    v.extend_from_text(prediction_prompt(rec.task, rec.input));
    Rng rng(seed);
    Model m(cfg, v, rng);
    Rng arng = rng.split("adapters");
    const std::string set = adapter_set_name(assign_group(TaskKind::BBBP), AdapterPhase::Inference);
    m.create_lora_set(set, arng);

    // warm-up: base LM on both arms so the policy starts near uniform over
    // {A, Bm} with a calibrated unembed; RL then only has to pick the arm
    {
        Optimizer wopt;
        StageConfig wc;
        wc.lr = 1e-2;
        wc.batch_size = 2;
        wc.steps = 600;
        wc.seed = seed;
        // the two context lines keep the arm unembeddings linearly separable;
        // without them the adapter has no differential direction to exploit
        std::vector<std::string> corpus = {prediction_prompt(rec.task, rec.input) + "A",
                                           prediction_prompt(rec.task, rec.input) + "Bm",
                                           "left A", "right Bm"};
        lm_pretrain(m, corpus, wopt, wc);
    }

    StageConfig sc;
    sc.stage = Stage::Reinforce;
    sc.lr = 0.01;
    sc.batch_size = 8;
    sc.seed = seed;
    sc.clip_norm = 1.0;
    sc.temperature = 1.0;
    sc.max_new = 1;
    sc.paired = false;

    RewardFn reward = [](const TaskRecord&, const std::string& text) {
        RewardBreakdown rb;
        rb.r_answer = text == "A" ? 1.0 : 0.0;
        rb.r = rb.r_answer;
        return rb;
    };

    std::vector<int> prompt = {m.vocab().bos()};
    for (int id : m.vocab().encode(prediction_prompt(rec.task, rec.input))) prompt.push_back(id);
    auto p_best = [&]() {
        NoGradScope ng;
        Tensor logits = m.forward(prompt, m.find_adapter_set(set));
        Eigen::RowVectorXd row = logits.value().row(logits.rows() - 1);
        row.array() -= row.maxCoeff();
        Eigen::RowVectorXd p = row.array().exp();
        return p(arm_a) / p.sum();
    };

    BanditResult res;
    Optimizer opt;
    std::vector<TaskRecord> batch(static_cast<size_t>(sc.batch_size), rec);
    for (int s = 0; s < max_steps; ++s) {
        reinforce_step(m, batch, opt, sc, static_cast<uint64_t>(s), reward);
        res.steps_run = s + 1;
        res.p_best = p_best();
        if (res.p_best > threshold) {
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace molr
