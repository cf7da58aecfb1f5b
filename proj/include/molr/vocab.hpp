#pragma once
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace molr {

// Rule-based tokenizer: SMILES segments atom-wise (Cl/Br and [...] as single
// tokens), everything else whitespace/punctuation split. Special tokens are
// matched before any other rule and never merged.
class Vocabulary {
public:
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kUnk = "<unk>";
    static constexpr const char* kThinkOpen = "⟨think⟩";
    static constexpr const char* kThinkClose = "⟨/think⟩";
    static constexpr const char* kAnswerOpen = "⟨answer⟩";
    static constexpr const char* kAnswerClose = "⟨/answer⟩";

    // Default vocabulary: specials, ten task tags, SMILES atoms/bond/ring
    // symbols, printable ASCII fallback pieces, digits and common words are
    // added lazily via extend().
    Vocabulary();

    int id(std::string_view token) const;          // -1 when absent
    int id_or_unk(std::string_view token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int pad() const { return pad_; }
    int unk() const { return unk_; }
    int think_open() const { return think_open_; }
    int think_close() const { return think_close_; }
    int answer_open() const { return answer_open_; }
    int answer_close() const { return answer_close_; }
    bool is_special(int id) const;

    // Adds a token if absent; returns its id.
    int extend(const std::string& token);
    // Scans a corpus line and adds all produced surface tokens.
    void extend_from_text(const std::string& text);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    // Splits text into surface token strings (no ids); exposed for tests.
    static std::vector<std::string> split(const std::string& text);

    long unknown_count() const { return unknown_count_; }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int bos_, eos_, pad_, unk_;
    int think_open_, think_close_, answer_open_, answer_close_;
    int n_special_ = 0;
    mutable long unknown_count_ = 0;
};

// The ten task tags in canonical order; also used by TaskKind.
const std::vector<std::string>& task_tag_tokens();

} // namespace molr
