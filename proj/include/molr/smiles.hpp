#pragma once
#include <bitset>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace molr {

struct Atom {
    std::string element;   // as written, e.g. "C", "Cl", "N"
    int charge = 0;
    int isotope = 0;       // 0 = unspecified
    bool aromatic = false;
    int explicit_h = -1;   // -1 = implicit (non-bracket atom)
    bool bracket = false;
};

enum class BondOrder { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Bond {
    int a = 0, b = 0;
    BondOrder order = BondOrder::Single;
};

struct MoleculeGraph {
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    bool lossy = false;    // stereochemistry was present and dropped

    std::vector<std::vector<int>> adjacency() const;  // neighbor atom indices
    int ring_count() const;                           // cyclomatic number
};

class SmilesError : public std::runtime_error {
public:
    SmilesError(const std::string& msg, size_t offset)
        : std::runtime_error(msg + " (offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    size_t offset() const { return offset_; }
private:
    size_t offset_;
};

MoleculeGraph parse_smiles(const std::string& s);
// non-throwing variant used by fuzzing and reward paths
std::optional<MoleculeGraph> try_parse_smiles(const std::string& s,
                                              std::string* error = nullptr);

// valence check per the fixed table; aromatic bonds count 1.5, total rounded up
bool validate(const MoleculeGraph& mol);

// order-invariant canonical SMILES (iterative invariant refinement with
// exhaustive tie branching, then deterministic DFS emission)
std::string canonicalize(const MoleculeGraph& mol);
std::string canonicalize(const std::string& smiles);

} // namespace molr
