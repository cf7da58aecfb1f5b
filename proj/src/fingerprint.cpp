#include "molr/fingerprint.hpp"

#include <algorithm>
#include <functional>

#include "molr/rng.hpp"

namespace molr {

namespace {

std::string atom_code(const Atom& a) {
    std::string s = a.element;
    if (a.aromatic) s += "~";
    if (a.charge != 0) s += (a.charge > 0 ? "+" : "-") + std::to_string(std::abs(a.charge));
    return s;
}

char bond_code(BondOrder o) {
    switch (o) {
        case BondOrder::Single: return '1';
        case BondOrder::Double: return '2';
        case BondOrder::Triple: return '3';
        case BondOrder::Aromatic: return 'a';
    }
    return '?';
}

} // namespace

Fingerprint fingerprint(const MoleculeGraph& mol) {
    Fingerprint fp;
    size_t n = mol.atoms.size();
    std::vector<std::vector<std::pair<int, BondOrder>>> nbrs(n);
    for (const auto& b : mol.bonds) {
        nbrs[b.a].push_back({b.b, b.order});
        nbrs[b.b].push_back({b.a, b.order});
    }
    std::vector<bool> on_path(n, false);
    std::vector<int> path;
    std::vector<char> bonds;  // bonds[i] joins path[i] and path[i+1]

    auto hash_path = [&]() {
        std::string fwd, rev;
        for (size_t i = 0; i < path.size(); ++i) {
            fwd += atom_code(mol.atoms[path[i]]);
            if (i < bonds.size()) fwd += bonds[i];
        }
        for (size_t i = path.size(); i-- > 0;) {
            rev += atom_code(mol.atoms[path[i]]);
            if (i > 0) rev += bonds[i - 1];
        }
        const std::string& key = fwd <= rev ? fwd : rev;
        fp.bits.set(fnv1a(key) % kFingerprintBits);
    };

    // every simple path of 1..kMaxPathAtoms atoms, direction-normalized
    std::function<void(int)> walk = [&](int a) {
        path.push_back(a);
        on_path[a] = true;
        hash_path();
        if (path.size() < kMaxPathAtoms) {
            for (auto [b, order] : nbrs[a]) {
                if (on_path[b]) continue;
                bonds.push_back(bond_code(order));
                walk(b);
                bonds.pop_back();
            }
        }
        on_path[a] = false;
        path.pop_back();
    };
    for (size_t start = 0; start < n; ++start) walk(static_cast<int>(start));
    return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
    size_t inter = (a.bits & b.bits).count();
    size_t uni = (a.bits | b.bits).count();
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace molr
