//! Shared fixtures for the benchmarks.

use qbridge_core::qsim::{CircuitSpec, Gate};

/// `n`-qubit GHZ preparation: H on qubit 0 and a CNOT ladder.
pub fn ghz(n: usize) -> CircuitSpec {
    let mut gates = vec![Gate::H(0)];
    gates.extend((1..n).map(|q| Gate::Cnot(q - 1, q)));
    CircuitSpec::new(n, gates).expect("valid GHZ circuit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use qbridge_core::qsim::simulate;

    #[test]
    fn ghz_support_is_two_strings() {
        let counts = simulate(&ghz(5), 200, 1, None).unwrap();
        let keys: Vec<&str> = counts.keys().collect();
        assert_eq!(keys, ["00000", "11111"]);
    }
}
