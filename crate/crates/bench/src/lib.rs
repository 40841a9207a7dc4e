//! Shared inputs for the benchmarks.

use qsor_core::synth::{generate, SynthConfig};
use qsor_core::MolecularGraph;

/// Canonical SMILES and parsed graphs of a fixed synthetic corpus.
pub fn corpus(n: usize) -> (Vec<String>, Vec<MolecularGraph>) {
    let c = generate(&SynthConfig { n_molecules: n, n_labels: 7, seed: 17 });
    let graphs = c.graphs();
    (c.smiles, graphs)
}

/// Deterministic scores and labels with ties, for ranking metrics.
pub fn scored_labels(n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..n)
        .map(|_| {
            let s = (next() % 1000) as f64 / 1000.0;
            (s, next() % 1000 < (s * 800.0) as u64 + 100)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_have_requested_sizes() {
        let (smiles, graphs) = super::corpus(40);
        assert_eq!(smiles.len(), 40);
        assert_eq!(graphs.len(), 40);
        let (s, l) = super::scored_labels(500);
        assert_eq!(s.len(), 500);
        assert!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
    }
}
