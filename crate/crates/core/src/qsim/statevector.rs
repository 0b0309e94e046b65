use num_complex::Complex64;

use super::{CircuitSpec, Gate, QsimError, MAX_QUBITS};

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// |0…0⟩ on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self, QsimError> {
        if num_qubits == 0 {
            return Err(QsimError::NoQubits);
        }
        if num_qubits > MAX_QUBITS {
            return Err(QsimError::CircuitTooLarge(num_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Builds a state from raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Option<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() || len > 1 << MAX_QUBITS {
            return None;
        }
        Some(Self {
            num_qubits: len.trailing_zeros() as usize,
            amplitudes,
        })
    }

    /// Applies every gate of `circuit` to |0…0⟩.
    pub fn run(circuit: &CircuitSpec) -> Result<Self, QsimError> {
        circuit.validate()?;
        let mut state = Self::zero(circuit.num_qubits)?;
        for gate in &circuit.gates {
            state.apply(*gate)?;
        }
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.amplitudes.iter().map(|a| a.norm_sqr())
    }

    fn mask(&self, qubit: usize) -> Result<usize, QsimError> {
        if qubit >= self.num_qubits {
            return Err(QsimError::IndexOutOfRange {
                index: qubit,
                num_qubits: self.num_qubits,
            });
        }
        Ok(1 << (self.num_qubits - 1 - qubit))
    }

    pub fn apply(&mut self, gate: Gate) -> Result<(), QsimError> {
        match gate {
            Gate::X(q) => {
                let m = self.mask(q)?;
                for i in (0..self.amplitudes.len()).filter(|i| i & m == 0) {
                    self.amplitudes.swap(i, i | m);
                }
            }
            Gate::H(q) => {
                let m = self.mask(q)?;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                for i in (0..self.amplitudes.len()).filter(|i| i & m == 0) {
                    let a = self.amplitudes[i];
                    let b = self.amplitudes[i | m];
                    self.amplitudes[i] = (a + b) * s;
                    self.amplitudes[i | m] = (a - b) * s;
                }
            }
            Gate::Cnot(c, t) => {
                if c == t {
                    return Err(QsimError::ControlIsTarget(c));
                }
                let cm = self.mask(c)?;
                let tm = self.mask(t)?;
                for i in (0..self.amplitudes.len()).filter(|i| i & cm != 0 && i & tm == 0) {
                    self.amplitudes.swap(i, i | tm);
                }
            }
        }
        Ok(())
    }
}
