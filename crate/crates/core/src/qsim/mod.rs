//! Small statevector simulator for X / H / CNOT circuits with terminal
//! measurement of every qubit.
//!
//! Bit ordering: qubit `i` is character `i` of a measured bitstring, so
//! qubit 0 is the leftmost character. Internally qubit `i` of an `n`-qubit
//! register is bit `n - 1 - i` of the basis-state index, which makes the
//! bitstring of basis state `k` simply `k` written in binary with `n` digits.

mod circuit;
mod emoticon;
mod statevector;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use circuit::{build_superposition_circuit, CircuitSpec, Gate};
pub use emoticon::{decode_counts, decode_emoticon, encode_emoticon, EmoticonError};
pub use statevector::Statevector;

pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("circuit uses {0} qubits, the simulator supports at most {MAX_QUBITS}")]
    CircuitTooLarge(usize),
    #[error("qubit index {index} out of range for a {num_qubits}-qubit register")]
    IndexOutOfRange { index: usize, num_qubits: usize },
    #[error("CNOT control and target are both qubit {0}")]
    ControlIsTarget(usize),
    #[error("circuit must act on at least one qubit")]
    NoQubits,
    #[error("shots must be at least 1")]
    NoShots,
    #[error("bitstrings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("`{0}` is not a bitstring")]
    InvalidBitstring(String),
    #[error("readout flip probability {0} outside [0, 0.5]")]
    InvalidNoise(f64),
}

/// Independent per-bit readout flips applied to every sampled outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "RawNoise")]
pub struct NoiseModel {
    pub readout_flip_prob: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawNoise {
    readout_flip_prob: f64,
}

impl TryFrom<RawNoise> for NoiseModel {
    type Error = QsimError;

    fn try_from(raw: RawNoise) -> Result<Self, Self::Error> {
        NoiseModel::new(raw.readout_flip_prob)
    }
}

impl NoiseModel {
    pub fn new(readout_flip_prob: f64) -> Result<Self, QsimError> {
        if (0.0..=0.5).contains(&readout_flip_prob) {
            Ok(Self { readout_flip_prob })
        } else {
            Err(QsimError::InvalidNoise(readout_flip_prob))
        }
    }
}

/// Histogram of measured bitstrings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Counts(BTreeMap<String, u64>);

impl Counts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shots(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn get(&self, bits: &str) -> u64 {
        self.0.get(bits).copied().unwrap_or(0)
    }

    pub fn add(&mut self, bits: impl Into<String>, n: u64) {
        *self.0.entry(bits.into()).or_default() += n;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Relative frequency of each bitstring.
    pub fn frequencies(&self) -> BTreeMap<String, f64> {
        let shots = self.shots() as f64;
        self.0
            .iter()
            .map(|(k, &v)| (k.clone(), v as f64 / shots))
            .collect()
    }
}

impl FromIterator<(String, u64)> for Counts {
    fn from_iter<T: IntoIterator<Item = (String, u64)>>(iter: T) -> Self {
        let mut counts = Counts::new();
        for (k, v) in iter {
            counts.add(k, v);
        }
        counts
    }
}

pub(crate) fn bitstring(index: usize, width: usize) -> String {
    format!("{index:0width$b}")
}

/// Runs `circuit` from |0…0⟩ and samples `shots` outcomes.
///
/// Deterministic for fixed arguments: sampling uses a ChaCha8 stream seeded
/// with `seed`, and noise flips are drawn from the same stream.
pub fn simulate(
    circuit: &CircuitSpec,
    shots: u64,
    seed: u64,
    noise: Option<NoiseModel>,
) -> Result<Counts, QsimError> {
    if shots == 0 {
        return Err(QsimError::NoShots);
    }
    let state = Statevector::run(circuit)?;
    let n = circuit.num_qubits;

    let mut cumulative = Vec::with_capacity(state.len());
    let mut acc = 0.0;
    for p in state.probabilities() {
        acc += p;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = noise.map(|m| m.readout_flip_prob).unwrap_or(0.0);
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * acc;
        let mut outcome = cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1);
        if flip > 0.0 {
            for bit in 0..n {
                if rng.random::<f64>() < flip {
                    outcome ^= 1 << bit;
                }
            }
        }
        *hist.entry(outcome).or_default() += 1;
    }
    Ok(hist
        .into_iter()
        .map(|(idx, c)| (bitstring(idx, n), c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circuit(n: usize, gates: Vec<Gate>) -> CircuitSpec {
        CircuitSpec::new(n, gates).unwrap()
    }

    #[test]
    fn x_gives_deterministic_one() {
        let c = circuit(1, vec![Gate::X(0)]);
        let counts = simulate(&c, 100, 7, None).unwrap();
        assert_eq!(counts.get("1"), 100);
        assert_eq!(counts.len(), 1);
    }

    #[test]
    fn seeded_runs_repeat() {
        let c = circuit(3, vec![Gate::H(0), Gate::H(2), Gate::Cnot(0, 1)]);
        let a = simulate(&c, 500, 42, None).unwrap();
        let b = simulate(&c, 500, 42, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shots(), 500);
        assert!(a.keys().all(|k| k.len() == 3));
    }

    #[test]
    fn zero_noise_matches_noiseless() {
        let c = circuit(4, vec![Gate::H(0), Gate::Cnot(0, 3), Gate::X(1)]);
        let noise = NoiseModel::new(0.0).unwrap();
        assert_eq!(
            simulate(&c, 1000, 3, Some(noise)).unwrap(),
            simulate(&c, 1000, 3, None).unwrap()
        );
    }

    #[test]
    fn readout_noise_spreads_support() {
        let c = circuit(2, vec![]);
        let noise = NoiseModel::new(0.2).unwrap();
        let counts = simulate(&c, 4000, 11, Some(noise)).unwrap();
        // P(00) = 0.8^2 = 0.64; 3 sigma of binomial(4000, 0.64) is about 91.
        assert!((counts.get("00") as i64 - 2560).abs() < 91, "{counts:?}");
        assert_eq!(counts.len(), 4);
    }

    #[test]
    fn too_many_qubits_rejected() {
        let c = CircuitSpec::new_unchecked(21, vec![]);
        assert_eq!(
            simulate(&c, 1, 0, None),
            Err(QsimError::CircuitTooLarge(21))
        );
        assert_eq!(
            simulate(&circuit(1, vec![]), 0, 0, None),
            Err(QsimError::NoShots)
        );
    }

    #[test]
    fn noise_bounds() {
        assert!(NoiseModel::new(0.5).is_ok());
        assert!(NoiseModel::new(0.51).is_err());
        assert!(NoiseModel::new(-0.1).is_err());
        assert!(serde_json::from_str::<NoiseModel>(r#"{"readoutFlipProb":0.9}"#).is_err());
        let m: NoiseModel = serde_json::from_str(r#"{"readoutFlipProb":0.02}"#).unwrap();
        assert_eq!(m.readout_flip_prob, 0.02);
    }

    #[test]
    fn frequencies_normalise() {
        let counts: Counts = [("0".to_string(), 3), ("1".to_string(), 1)]
            .into_iter()
            .collect();
        let f = counts.frequencies();
        assert_eq!(f["0"], 0.75);
        assert_eq!(f["1"], 0.25);
    }
}
