#pragma once
#include <bitset>

#include "molr/smiles.hpp"

namespace molr {

// Hashed linear-path fingerprint: all simple paths of 1..7 atoms, encoded by
// element/aromaticity and bond orders, direction-normalized, FNV-hashed into
// 2048 bits. Stands in for a substructure-key fingerprint; relative Tanimoto
// ordering is what the metrics consume.
inline constexpr int kFingerprintBits = 2048;
inline constexpr int kMaxPathAtoms = 7;

struct Fingerprint {
    std::bitset<kFingerprintBits> bits;

    size_t count() const { return bits.count(); }
};

Fingerprint fingerprint(const MoleculeGraph& mol);

// |a AND b| / |a OR b|; 1.0 when both are empty
double tanimoto(const Fingerprint& a, const Fingerprint& b);

} // namespace molr
