//! Built-in demo algorithm: two emoticons shown in superposition.
//!
//! The circuit builder plugs into the function runtime and the result
//! decoder into the gateway's post-processing registry. Neither the gateway
//! nor the collector knows about this module.

use serde_json::{Map, Value};

use crate::functions::{FunctionError, FunctionRuntime};
use crate::qsim::{build_superposition_circuit, decode_counts, encode_emoticon, CircuitSpec, Counts};

pub const SMILE_SUPER_POSITION: &str = "smile_super_position";

fn string_param<'a>(params: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    params
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string parameter `{key}`"))
}

/// Params: `{"emoticonA": "..", "emoticonB": ".."}`.
pub fn smile_super_position(params: &Map<String, Value>) -> Result<CircuitSpec, String> {
    let a = encode_emoticon(string_param(params, "emoticonA")?)
        .map_err(|e| format!("emoticonA: {e}"))?;
    let b = encode_emoticon(string_param(params, "emoticonB")?)
        .map_err(|e| format!("emoticonB: {e}"))?;
    build_superposition_circuit(&a, &b).map_err(|e| e.to_string())
}

/// Counts keyed by 16-bit strings → `{emoticon: frequency}`.
pub fn emoticon_frequencies(counts: &Counts) -> Result<Value, String> {
    let freqs = decode_counts(counts).map_err(|e| e.to_string())?;
    Ok(serde_json::to_value(freqs).expect("frequency map serializes"))
}

pub fn register_builtin(runtime: &FunctionRuntime) -> Result<(), FunctionError> {
    runtime.register_algorithm(SMILE_SUPER_POSITION, smile_super_position)
}
