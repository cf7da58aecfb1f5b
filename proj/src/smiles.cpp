#include "molr/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace molr {

std::vector<std::vector<int>> MoleculeGraph::adjacency() const {
    std::vector<std::vector<int>> adj(atoms.size());
    for (const auto& b : bonds) {
        adj[b.a].push_back(b.b);
        adj[b.b].push_back(b.a);
    }
    return adj;
}

int MoleculeGraph::ring_count() const {
    // components via union-find
    std::vector<int> parent(atoms.size());
    for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& b : bonds) parent[find(b.a)] = find(b.b);
    std::set<int> roots;
    for (size_t i = 0; i < parent.size(); ++i) roots.insert(find(static_cast<int>(i)));
    return static_cast<int>(bonds.size()) - static_cast<int>(atoms.size()) +
           static_cast<int>(roots.size());
}

namespace {

const std::set<std::string>& organic_subset() {
    static const std::set<std::string> s = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"};
    return s;
}

const std::set<std::string>& known_elements() {
    static const std::set<std::string> s = {
        "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
        "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Ti", "Cr", "Mn", "Fe",
        "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Ag", "Cd",
        "Sn", "Sb", "Te", "I",  "Xe", "Pt", "Au", "Hg", "Pb", "Bi"};
    return s;
}

struct PendingBond {
    bool present = false;
    BondOrder order = BondOrder::Single;
};

struct RingOpen {
    int atom = -1;
    PendingBond bond;
    size_t offset = 0;
};

class Parser {
public:
    explicit Parser(const std::string& s) : s_(s) {}

    MoleculeGraph run() {
        if (s_.empty()) throw SmilesError("empty SMILES", 0);
        while (pos_ < s_.size()) step();
        if (!open_parens_.empty())
            throw SmilesError("unclosed branch", open_parens_.back());
        if (!ring_open_.empty())
            throw SmilesError("unclosed ring bond " + std::to_string(ring_open_.begin()->first),
                              ring_open_.begin()->second.offset);
        if (mol_.atoms.empty()) throw SmilesError("no atoms", 0);
        if (pending_.present) throw SmilesError("dangling bond symbol", s_.size() - 1);
        return std::move(mol_);
    }

private:
    void step() {
        char c = s_[pos_];
        if (c == '(') {
            if (prev_ < 0) throw SmilesError("branch before any atom", pos_);
            open_parens_.push_back(pos_);
            stack_.push_back(prev_);
            ++pos_;
        } else if (c == ')') {
            if (stack_.empty()) throw SmilesError("unmatched ')'", pos_);
            if (pending_.present) throw SmilesError("bond before ')'", pos_);
            prev_ = stack_.back();
            stack_.pop_back();
            open_parens_.pop_back();
            ++pos_;
        } else if (c == '-' || c == '=' || c == '#' || c == ':') {
            if (pending_.present) throw SmilesError("doubled bond symbol", pos_);
            pending_.present = true;
            pending_.order = c == '=' ? BondOrder::Double
                           : c == '#' ? BondOrder::Triple
                           : c == ':' ? BondOrder::Aromatic
                                      : BondOrder::Single;
            ++pos_;
        } else if (c == '/' || c == '\\') {
            pending_.present = true;
            pending_.order = BondOrder::Single;
            mol_.lossy = true;
            ++pos_;
        } else if (c == '.') {
            if (pending_.present) throw SmilesError("bond before '.'", pos_);
            prev_ = -1;
            ++pos_;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            ring_closure(c - '0', pos_);
            ++pos_;
        } else if (c == '%') {
            if (pos_ + 2 >= s_.size() ||
                !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
                !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2])))
                throw SmilesError("malformed %nn ring closure", pos_);
            ring_closure((s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0'), pos_);
            pos_ += 3;
        } else if (c == '[') {
            bracket_atom();
        } else {
            plain_atom();
        }
    }

    void plain_atom() {
        size_t at = pos_;
        char c = s_[pos_];
        std::string elem;
        bool aromatic = false;
        if (pos_ + 1 < s_.size()) {
            std::string two = s_.substr(pos_, 2);
            if (two == "Cl" || two == "Br") elem = two;
        }
        if (elem.empty()) {
            static const std::string upper = "BCNOPSFI";
            static const std::string lower = "bcnops";
            if (upper.find(c) != std::string::npos) {
                elem = std::string(1, c);
            } else if (lower.find(c) != std::string::npos) {
                elem = std::string(1, static_cast<char>(std::toupper(c)));
                aromatic = true;
            } else {
                throw SmilesError(std::string("unexpected character '") + c + "'", pos_);
            }
        }
        pos_ += elem.size();
        Atom a;
        a.element = elem;
        a.aromatic = aromatic;
        add_atom(std::move(a), at);
    }

    void bracket_atom() {
        size_t at = pos_;
        size_t close = s_.find(']', pos_);
        if (close == std::string::npos) throw SmilesError("unterminated bracket atom", pos_);
        std::string body = s_.substr(pos_ + 1, close - pos_ - 1);
        size_t i = 0;
        Atom a;
        a.bracket = true;
        a.explicit_h = 0;
        // isotope
        while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i])))
            a.isotope = a.isotope * 10 + (body[i++] - '0');
        // element symbol (allow aromatic lowercase)
        if (i >= body.size()) throw SmilesError("bracket atom missing element", at);
        if (std::islower(static_cast<unsigned char>(body[i]))) {
            static const std::string lower = "bcnops";
            char lc = body[i];
            // 'se' and 'as' are the two-letter aromatic forms
            if (i + 1 < body.size() && ((lc == 's' && body[i + 1] == 'e') ||
                                        (lc == 'a' && body[i + 1] == 's'))) {
                a.element = std::string(1, static_cast<char>(std::toupper(lc))) +
                            std::string(1, body[i + 1]);
                a.aromatic = true;
                i += 2;
            } else if (lower.find(lc) != std::string::npos) {
                a.element = std::string(1, static_cast<char>(std::toupper(lc)));
                a.aromatic = true;
                i += 1;
            } else {
                throw SmilesError("unknown aromatic element in bracket", at);
            }
        } else if (std::isupper(static_cast<unsigned char>(body[i]))) {
            a.element = std::string(1, body[i]);
            i += 1;
            if (i < body.size() && std::islower(static_cast<unsigned char>(body[i])) &&
                known_elements().count(a.element + body[i])) {
                a.element += body[i];
                i += 1;
            }
        } else if (body[i] == '*') {
            a.element = "*";
            i += 1;
        } else {
            throw SmilesError("malformed bracket atom", at);
        }
        if (a.element != "*" && !known_elements().count(a.element))
            throw SmilesError("unknown element '" + a.element + "'", at);
        // chirality, ignored but flagged
        while (i < body.size() && body[i] == '@') {
            mol_.lossy = true;
            ++i;
        }
        // hydrogen count
        if (i < body.size() && body[i] == 'H') {
            ++i;
            a.explicit_h = 1;
            if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
                a.explicit_h = 0;
                while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i])))
                    a.explicit_h = a.explicit_h * 10 + (body[i++] - '0');
            }
        }
        // charge
        if (i < body.size() && (body[i] == '+' || body[i] == '-')) {
            int sign = body[i] == '+' ? 1 : -1;
            char sym = body[i];
            int mag = 0;
            while (i < body.size() && body[i] == sym) {
                ++mag;
                ++i;
            }
            if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
                if (mag != 1) throw SmilesError("malformed charge", at);
                mag = 0;
                while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i])))
                    mag = mag * 10 + (body[i++] - '0');
            }
            a.charge = sign * mag;
        }
        // atom class, ignored
        if (i < body.size() && body[i] == ':') {
            ++i;
            if (i >= body.size() || !std::isdigit(static_cast<unsigned char>(body[i])))
                throw SmilesError("malformed atom class", at);
            while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
        }
        if (i != body.size()) throw SmilesError("trailing characters in bracket atom", at + 1 + i);
        pos_ = close + 1;
        add_atom(std::move(a), at);
    }

    void add_atom(Atom atom, size_t at) {
        int idx = static_cast<int>(mol_.atoms.size());
        mol_.atoms.push_back(std::move(atom));
        if (prev_ >= 0) {
            BondOrder order = pending_.present ? pending_.order : BondOrder::Single;
            if (!pending_.present && mol_.atoms[prev_].aromatic && mol_.atoms[idx].aromatic)
                order = BondOrder::Aromatic;
            if (order == BondOrder::Aromatic &&
                !(mol_.atoms[prev_].aromatic && mol_.atoms[idx].aromatic))
                throw SmilesError("aromatic bond between non-aromatic atoms", at);
            mol_.bonds.push_back({prev_, idx, order});
        }
        pending_ = {};
        prev_ = idx;
    }

    void ring_closure(int num, size_t at) {
        if (prev_ < 0) throw SmilesError("ring closure before any atom", at);
        auto it = ring_open_.find(num);
        if (it == ring_open_.end()) {
            ring_open_[num] = {prev_, pending_, at};
            pending_ = {};
            return;
        }
        RingOpen open = it->second;
        ring_open_.erase(it);
        if (open.atom == prev_) throw SmilesError("ring bond to self", at);
        BondOrder order;
        if (open.bond.present && pending_.present) {
            if (open.bond.order != pending_.order)
                throw SmilesError("conflicting ring bond orders", at);
            order = pending_.order;
        } else if (open.bond.present) {
            order = open.bond.order;
        } else if (pending_.present) {
            order = pending_.order;
        } else if (mol_.atoms[open.atom].aromatic && mol_.atoms[prev_].aromatic) {
            order = BondOrder::Aromatic;
        } else {
            order = BondOrder::Single;
        }
        for (const auto& b : mol_.bonds)
            if ((b.a == open.atom && b.b == prev_) || (b.a == prev_ && b.b == open.atom))
                throw SmilesError("duplicate bond via ring closure", at);
        mol_.bonds.push_back({open.atom, prev_, order});
        pending_ = {};
    }

    const std::string& s_;
    size_t pos_ = 0;
    MoleculeGraph mol_;
    int prev_ = -1;
    PendingBond pending_;
    std::vector<int> stack_;
    std::vector<size_t> open_parens_;
    std::map<int, RingOpen> ring_open_;
};

} // namespace

MoleculeGraph parse_smiles(const std::string& s) { return Parser(s).run(); }

std::optional<MoleculeGraph> try_parse_smiles(const std::string& s, std::string* error) {
    try {
        return parse_smiles(s);
    } catch (const SmilesError& e) {
        if (error) *error = e.what();
        return std::nullopt;
    }
}

bool validate(const MoleculeGraph& mol) {
    for (const auto& b : mol.bonds) {
        if (b.a < 0 || b.b < 0 || b.a >= static_cast<int>(mol.atoms.size()) ||
            b.b >= static_cast<int>(mol.atoms.size()))
            return false;
        if (b.order == BondOrder::Aromatic &&
            !(mol.atoms[b.a].aromatic && mol.atoms[b.b].aromatic))
            return false;
    }
    std::vector<double> order_sum(mol.atoms.size(), 0.0);
    for (const auto& b : mol.bonds) {
        double w = b.order == BondOrder::Aromatic ? 1.5 : static_cast<double>(b.order);
        order_sum[b.a] += w;
        order_sum[b.b] += w;
    }
    for (size_t i = 0; i < mol.atoms.size(); ++i) {
        const Atom& a = mol.atoms[i];
        int total = static_cast<int>(std::ceil(order_sum[i])) + std::max(a.explicit_h, 0);
        int cap;
        if (a.element == "B") cap = 3;
        else if (a.element == "C") cap = 4;
        else if (a.element == "N") cap = 5;
        else if (a.element == "O") cap = 2;
        else if (a.element == "P") cap = 5;
        else if (a.element == "S") cap = 6;
        else if (a.element == "F" || a.element == "Cl" || a.element == "Br" || a.element == "I")
            cap = 1;
        else
            continue;  // outside the valence table: not checked
        if (a.charge > 0) cap += a.charge;
        if (a.charge < 0) cap -= 0;  // anions simply form fewer bonds
        // neutral N valence is 3 or 5; 4 is only reachable as a cation
        if (a.element == "N" && a.charge == 0 && total == 4) return false;
        if (total > cap) return false;
    }
    return true;
}

// ---- canonicalization ----

namespace {

struct RankState {
    std::vector<long> ranks;
};

std::vector<long> initial_invariants(const MoleculeGraph& mol) {
    std::vector<std::tuple<std::string, int, int, int, int, int>> keys;
    std::vector<std::vector<int>> adj = mol.adjacency();
    for (size_t i = 0; i < mol.atoms.size(); ++i) {
        const Atom& a = mol.atoms[i];
        keys.emplace_back(a.element, a.aromatic ? 1 : 0, a.charge, a.isotope,
                          a.explicit_h, static_cast<int>(adj[i].size()));
    }
    auto sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<long> ranks(keys.size());
    for (size_t i = 0; i < keys.size(); ++i)
        ranks[i] = static_cast<long>(
            std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
    return ranks;
}

// one refinement sweep: rank extended by the sorted multiset of
// (bond order, neighbor rank); repeated until the partition is stable
void refine(const MoleculeGraph& mol, std::vector<long>& ranks) {
    size_t n = mol.atoms.size();
    std::vector<std::vector<std::pair<int, int>>> nbrs(n);  // (order, atom)
    for (const auto& b : mol.bonds) {
        nbrs[b.a].push_back({static_cast<int>(b.order), b.b});
        nbrs[b.b].push_back({static_cast<int>(b.order), b.a});
    }
    for (;;) {
        std::vector<std::pair<long, std::vector<std::pair<int, long>>>> keys(n);
        for (size_t i = 0; i < n; ++i) {
            std::vector<std::pair<int, long>> ext;
            for (auto [order, j] : nbrs[i]) ext.emplace_back(order, ranks[j]);
            std::sort(ext.begin(), ext.end());
            keys[i] = {ranks[i], std::move(ext)};
        }
        auto sorted = keys;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        std::vector<long> next(n);
        for (size_t i = 0; i < n; ++i)
            next[i] = static_cast<long>(
                std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
        if (next == ranks) return;
        ranks = std::move(next);
    }
}

bool has_ties(const std::vector<long>& ranks, long* tied_rank) {
    std::map<long, int> counts;
    for (long r : ranks) counts[r] += 1;
    for (auto& [r, c] : counts)
        if (c > 1) {
            *tied_rank = r;
            return true;
        }
    return false;
}

std::string atom_token(const Atom& a) {
    bool organic = organic_subset().count(a.element) != 0;
    bool plain = organic && a.charge == 0 && a.isotope == 0 && !a.bracket;
    std::string sym = a.element;
    if (a.aromatic) {
        for (auto& c : sym) c = static_cast<char>(std::tolower(c));
    }
    if (plain) return sym;
    std::string out = "[";
    if (a.isotope > 0) out += std::to_string(a.isotope);
    out += sym;
    int h = std::max(a.explicit_h, 0);
    if (h == 1) out += "H";
    else if (h > 1) out += "H" + std::to_string(h);
    if (a.charge != 0) {
        out += a.charge > 0 ? "+" : "-";
        int mag = std::abs(a.charge);
        if (mag > 1) out += std::to_string(mag);
    }
    out += "]";
    return out;
}

std::string bond_token(BondOrder order, const Atom& a, const Atom& b) {
    switch (order) {
        case BondOrder::Single: return "";
        case BondOrder::Double: return "=";
        case BondOrder::Triple: return "#";
        case BondOrder::Aromatic:
            return (a.aromatic && b.aromatic) ? "" : ":";
    }
    return "";
}

std::string ring_digit(int num) {
    if (num < 10) return std::to_string(num);
    if (num < 100) return "%" + std::string(num < 10 ? "0" : "") + std::to_string(num);
    throw std::runtime_error("ring closure numbers exhausted");
}

// DFS emission with neighbors ordered by rank; ring closures numbered in
// discovery order
class Emitter {
public:
    Emitter(const MoleculeGraph& mol, const std::vector<long>& ranks)
        : mol_(mol), ranks_(ranks) {
        size_t n = mol.atoms.size();
        nbrs_.resize(n);
        for (size_t bi = 0; bi < mol.bonds.size(); ++bi) {
            const Bond& b = mol.bonds[bi];
            nbrs_[b.a].push_back({b.b, static_cast<int>(bi)});
            nbrs_[b.b].push_back({b.a, static_cast<int>(bi)});
        }
        for (auto& v : nbrs_)
            std::sort(v.begin(), v.end(), [&](auto x, auto y) {
                return ranks_[x.first] < ranks_[y.first];
            });
        visited_.assign(n, false);
        bond_used_.assign(mol.bonds.size(), false);
        ring_num_of_bond_.assign(mol.bonds.size(), 0);
    }

    std::string run() {
        // components in order of their minimum-rank atom
        std::vector<int> starts;
        std::vector<int> order(mol_.atoms.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(),
                  [&](int x, int y) { return ranks_[x] < ranks_[y]; });
        std::string out;
        for (int a : order) {
            if (visited_[a]) continue;
            mark_ring_bonds(a);
            if (!out.empty()) out += ".";
            out += emit(a, -1);
        }
        return out;
    }

private:
    // spanning DFS marking back edges so emission knows ring closures up front
    void mark_ring_bonds(int start) {
        std::vector<bool> seen(mol_.atoms.size(), false);
        std::function<void(int)> dfs = [&](int a) {
            seen[a] = true;
            for (auto [b, bi] : nbrs_[a]) {
                if (bond_used_[bi]) continue;
                bond_used_[bi] = true;
                if (seen[b]) {
                    ring_num_of_bond_[bi] = next_ring_++;
                } else {
                    dfs(b);
                }
            }
        };
        dfs(start);
    }

    std::string emit(int a, int from_bond) {
        visited_[a] = true;
        std::string out;
        if (from_bond >= 0) {
            const Bond& b = mol_.bonds[from_bond];
            out += bond_token(b.order, mol_.atoms[b.a], mol_.atoms[b.b]);
        }
        out += atom_token(mol_.atoms[a]);
        // ring closures at this atom, in ring-number order
        std::vector<std::pair<int, int>> closures;  // (ring num, bond idx)
        std::vector<std::pair<int, int>> children;  // (neighbor, bond idx)
        for (auto [b, bi] : nbrs_[a]) {
            if (bi == from_bond) continue;
            if (ring_num_of_bond_[bi] > 0) {
                closures.push_back({ring_num_of_bond_[bi], bi});
            } else if (!visited_[b]) {
                children.push_back({b, bi});
            }
        }
        std::sort(closures.begin(), closures.end());
        for (auto [num, bi] : closures) {
            const Bond& b = mol_.bonds[bi];
            // bond symbol on the opening side only
            if (!ring_emitted_.count(num))
                out += bond_token(b.order, mol_.atoms[b.a], mol_.atoms[b.b]);
            out += ring_digit(num);
            ring_emitted_.insert(num);
        }
        for (size_t c = 0; c < children.size(); ++c) {
            auto [b, bi] = children[c];
            if (visited_[b]) continue;  // reached through a ring meanwhile
            std::string sub = emit(b, bi);
            if (c + 1 < children.size()) out += "(" + sub + ")";
            else out += sub;
        }
        return out;
    }

    const MoleculeGraph& mol_;
    const std::vector<long>& ranks_;
    std::vector<std::vector<std::pair<int, int>>> nbrs_;
    std::vector<bool> visited_;
    std::vector<bool> bond_used_;
    std::vector<int> ring_num_of_bond_;
    std::set<int> ring_emitted_;
    int next_ring_ = 1;
};

std::string canonical_from_ranks(const MoleculeGraph& mol, std::vector<long> ranks,
                                 int depth) {
    refine(mol, ranks);
    long tied = 0;
    if (!has_ties(ranks, &tied) || depth > 12) {
        return Emitter(mol, ranks).run();
    }
    // branch over every member of the smallest tied class, keep the
    // lexicographically smallest emission
    std::string best;
    for (size_t i = 0; i < ranks.size(); ++i) {
        if (ranks[i] != tied) continue;
        std::vector<long> forked = ranks;
        for (auto& r : forked) r *= 2;
        forked[i] -= 1;
        std::string cand = canonical_from_ranks(mol, std::move(forked), depth + 1);
        if (best.empty() || cand < best) best = cand;
    }
    return best;
}

} // namespace

std::string canonicalize(const MoleculeGraph& mol) {
    if (mol.atoms.empty()) throw std::invalid_argument("canonicalize: empty molecule");
    return canonical_from_ranks(mol, initial_invariants(mol), 0);
}

std::string canonicalize(const std::string& smiles) {
    return canonicalize(parse_smiles(smiles));
}

} // namespace molr
