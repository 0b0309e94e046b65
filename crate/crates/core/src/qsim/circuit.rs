use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};

use super::{QsimError, MAX_QUBITS};

/// Gate set of the simulator. On the wire a gate is a JSON array:
/// `["X", q]`, `["H", q]` or `["CNOT", control, target]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "RawGate")]
pub enum Gate {
    X(usize),
    H(usize),
    Cnot(usize, usize),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGate {
    Single(String, usize),
    Pair(String, usize, usize),
}

impl TryFrom<RawGate> for Gate {
    type Error = String;

    fn try_from(raw: RawGate) -> Result<Self, Self::Error> {
        match raw {
            RawGate::Single(name, q) if name == "X" => Ok(Gate::X(q)),
            RawGate::Single(name, q) if name == "H" => Ok(Gate::H(q)),
            RawGate::Pair(name, c, t) if name == "CNOT" => Ok(Gate::Cnot(c, t)),
            RawGate::Single(name, _) | RawGate::Pair(name, _, _) => {
                Err(format!("unsupported gate `{name}` or wrong arity"))
            }
        }
    }
}

impl Serialize for Gate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Gate::X(q) | Gate::H(q) => {
                let name = if matches!(self, Gate::X(_)) { "X" } else { "H" };
                let mut t = serializer.serialize_tuple(2)?;
                t.serialize_element(name)?;
                t.serialize_element(&q)?;
                t.end()
            }
            Gate::Cnot(c, tgt) => {
                let mut t = serializer.serialize_tuple(3)?;
                t.serialize_element("CNOT")?;
                t.serialize_element(&c)?;
                t.serialize_element(&tgt)?;
                t.end()
            }
        }
    }
}

/// Ordered gate list on `num_qubits` qubits; every qubit is measured at the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CircuitSpec {
    pub num_qubits: usize,
    pub gates: Vec<Gate>,
}

impl CircuitSpec {
    pub fn new(num_qubits: usize, gates: Vec<Gate>) -> Result<Self, QsimError> {
        let spec = Self { num_qubits, gates };
        spec.validate()?;
        Ok(spec)
    }

    /// Skips validation. Used where a bad circuit must travel to the point
    /// where it is executed.
    pub fn new_unchecked(num_qubits: usize, gates: Vec<Gate>) -> Self {
        Self { num_qubits, gates }
    }

    pub fn validate(&self) -> Result<(), QsimError> {
        let n = self.num_qubits;
        if n == 0 {
            return Err(QsimError::NoQubits);
        }
        if n > MAX_QUBITS {
            return Err(QsimError::CircuitTooLarge(n));
        }
        let check = |q: usize| {
            if q < n {
                Ok(())
            } else {
                Err(QsimError::IndexOutOfRange {
                    index: q,
                    num_qubits: n,
                })
            }
        };
        for gate in &self.gates {
            match *gate {
                Gate::X(q) | Gate::H(q) => check(q)?,
                Gate::Cnot(c, t) => {
                    check(c)?;
                    check(t)?;
                    if c == t {
                        return Err(QsimError::ControlIsTarget(c));
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_bits(s: &str) -> Result<Vec<bool>, QsimError> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(QsimError::InvalidBitstring(s.to_string())),
        })
        .collect()
}

/// Circuit whose ideal measurement distribution is an equal mix of `bits_a`
/// and `bits_b` (or `bits_a` with certainty when they are equal).
///
/// The first differing position is the pivot: it is put in superposition
/// with H and every other differing position copies it through a CNOT. The
/// operands are swapped when needed so that the pivot starts in |0⟩, which
/// keeps both amplitudes at +1/√2.
pub fn build_superposition_circuit(bits_a: &str, bits_b: &str) -> Result<CircuitSpec, QsimError> {
    let mut a = parse_bits(bits_a)?;
    let mut b = parse_bits(bits_b)?;
    if a.len() != b.len() {
        return Err(QsimError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n == 0 {
        return Err(QsimError::NoQubits);
    }
    if n > MAX_QUBITS {
        return Err(QsimError::CircuitTooLarge(n));
    }

    let differing: Vec<usize> = (0..n).filter(|&i| a[i] != b[i]).collect();
    let mut gates = Vec::new();
    match differing.split_first() {
        None => gates.extend((0..n).filter(|&i| a[i]).map(Gate::X)),
        Some((&pivot, rest)) => {
            if a[pivot] {
                std::mem::swap(&mut a, &mut b);
            }
            gates.extend((0..n).filter(|&i| a[i]).map(Gate::X));
            gates.push(Gate::H(pivot));
            gates.extend(rest.iter().map(|&i| Gate::Cnot(pivot, i)));
        }
    }
    CircuitSpec::new(n, gates)
}
