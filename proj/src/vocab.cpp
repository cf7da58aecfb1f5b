#include "molr/vocab.hpp"

#include <cctype>
#include <optional>
#include <stdexcept>

namespace molr {

namespace {

// markers are matched longest-first before any other tokenization rule
const std::vector<std::string>& marker_tokens() {
    static const std::vector<std::string> m = [] {
        std::vector<std::string> v = {
            Vocabulary::kThinkOpen, Vocabulary::kThinkClose,
            Vocabulary::kAnswerOpen, Vocabulary::kAnswerClose,
            Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kPad, Vocabulary::kUnk,
        };
        for (const auto& t : task_tag_tokens()) v.push_back(t);
        return v;
    }();
    return m;
}

bool is_organic_atom_at(const std::string& s, size_t i, size_t* len) {
    // two-char first
    if (i + 1 < s.size()) {
        std::string two = s.substr(i, 2);
        if (two == "Cl" || two == "Br") { *len = 2; return true; }
    }
    char c = s[i];
    static const std::string one = "BCNOPSFI";
    static const std::string arom = "bcnops";
    if (one.find(c) != std::string::npos || arom.find(c) != std::string::npos) {
        *len = 1;
        return true;
    }
    return false;
}

// Lexes a chunk under SMILES surface rules; nullopt when any character fails.
std::optional<std::vector<std::string>> smiles_lex(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        size_t alen = 0;
        if (c == '[') {
            size_t j = s.find(']', i);
            if (j == std::string::npos) return std::nullopt;
            out.push_back(s.substr(i, j - i + 1));
            i = j + 1;
        } else if (is_organic_atom_at(s, i, &alen)) {
            out.push_back(s.substr(i, alen));
            i += alen;
        } else if (c == '%') {
            if (i + 2 >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i + 1])) ||
                !std::isdigit(static_cast<unsigned char>(s[i + 2])))
                return std::nullopt;
            out.push_back(s.substr(i, 3));
            i += 3;
        } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '(' || c == ')' ||
                   c == '-' || c == '=' || c == '#' || c == ':' || c == '/' ||
                   c == '\\' || c == '.' || c == '*' || c == '~') {
            out.push_back(std::string(1, c));
            i += 1;
        } else {
            return std::nullopt;
        }
    }
    if (out.empty()) return std::nullopt;
    return out;
}

void word_split(const std::string& chunk, std::vector<std::string>& out) {
    size_t i = 0;
    while (i < chunk.size()) {
        unsigned char c = chunk[i];
        if (std::isalpha(c)) {
            size_t j = i;
            while (j < chunk.size() && std::isalpha(static_cast<unsigned char>(chunk[j]))) ++j;
            out.push_back(chunk.substr(i, j - i));
            i = j;
        } else if (std::isdigit(c)) {
            size_t j = i;
            while (j < chunk.size() &&
                   (std::isdigit(static_cast<unsigned char>(chunk[j])) || chunk[j] == '.'))
                ++j;
            out.push_back(chunk.substr(i, j - i));
            i = j;
        } else if ((c & 0x80) != 0) {
            // one UTF-8 sequence as a single token
            size_t j = i + 1;
            while (j < chunk.size() && (static_cast<unsigned char>(chunk[j]) & 0xC0) == 0x80) ++j;
            out.push_back(chunk.substr(i, j - i));
            i = j;
        } else {
            out.push_back(std::string(1, chunk[i]));
            i += 1;
        }
    }
}

} // namespace

const std::vector<std::string>& task_tag_tokens() {
    static const std::vector<std::string> tags = {
        "<task=MoleculeCaptioning>", "<task=SmilesGeneration>", "<task=SmilesToIupac>",
        "<task=IupacToSmiles>",      "<task=ForwardReaction>",  "<task=Retrosynthesis>",
        "<task=BBBP>",               "<task=ClinTox>",          "<task=ESOL>",
        "<task=Lipophilicity>",
    };
    return tags;
}

Vocabulary::Vocabulary() {
    bos_ = extend(kBos);
    eos_ = extend(kEos);
    pad_ = extend(kPad);
    unk_ = extend(kUnk);
    think_open_ = extend(kThinkOpen);
    think_close_ = extend(kThinkClose);
    answer_open_ = extend(kAnswerOpen);
    answer_close_ = extend(kAnswerClose);
    for (const auto& t : task_tag_tokens()) extend(t);
    n_special_ = size();
    // SMILES surface alphabet so chemistry round-trips without corpus scans
    for (const char* t : {"B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br",
                          "b", "c", "n", "o", "p", "s",
                          "(", ")", "-", "=", "#", ":", "/", "\\", ".", "*", "~",
                          "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
                          " ", "\n", "\t", ",", ";", "?", "!", "'", "\"",
                          "Yes", "No", "Draft"})
        extend(t);
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
}

int Vocabulary::id_or_unk(std::string_view token) const {
    int i = id(token);
    if (i < 0) {
        ++unknown_count_;
        return unk_;
    }
    return i;
}

const std::string& Vocabulary::token(int i) const {
    if (i < 0 || i >= size()) throw std::out_of_range("Vocabulary::token: bad id");
    return tokens_[i];
}

bool Vocabulary::is_special(int i) const { return i >= 0 && i < n_special_; }

int Vocabulary::extend(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int i = size();
    tokens_.push_back(token);
    index_.emplace(token, i);
    return i;
}

void Vocabulary::extend_from_text(const std::string& text) {
    for (auto& t : split(text)) extend(t);
}

std::vector<std::string> Vocabulary::split(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        bool matched = false;
        for (const auto& m : marker_tokens()) {
            if (text.compare(i, m.size(), m) == 0) {
                out.push_back(m);
                i += m.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        unsigned char c = text[i];
        if (std::isspace(c)) {
            out.push_back(std::string(1, text[i]));
            i += 1;
            continue;
        }
        // chunk up to next whitespace or marker
        size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
            bool at_marker = false;
            for (const auto& m : marker_tokens())
                if (text.compare(j, m.size(), m) == 0) { at_marker = true; break; }
            if (at_marker) break;
            ++j;
        }
        std::string chunk = text.substr(i, j - i);
        if (auto atoms = smiles_lex(chunk)) {
            for (auto& a : *atoms) out.push_back(std::move(a));
        } else {
            word_split(chunk, out);
        }
        i = j;
    }
    return out;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids;
    for (auto& t : split(text)) ids.push_back(id_or_unk(t));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
        if (i == bos_ || i == eos_ || i == pad_) continue;
        out += token(i);
    }
    return out;
}

} // namespace molr
