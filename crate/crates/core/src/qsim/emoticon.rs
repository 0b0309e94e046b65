//! Two-character emoticons as 16-bit registers: each character is its
//! Latin-1 code point written as 8 big-endian bits.

use std::collections::BTreeMap;

use thiserror::Error;

use super::Counts;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmoticonError {
    #[error("emoticon must have exactly 2 characters, got {0}")]
    WrongLength(usize),
    #[error("character {0:?} is outside Latin-1 and cannot be encoded in 8 bits")]
    NonEncodableCharacter(char),
    #[error("`{0}` is not a 16-bit emoticon key")]
    UndecodableKey(String),
}

pub fn encode_emoticon(text: &str) -> Result<String, EmoticonError> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != 2 {
        return Err(EmoticonError::WrongLength(chars.len()));
    }
    chars
        .iter()
        .map(|&c| {
            u8::try_from(u32::from(c))
                .map(|byte| format!("{byte:08b}"))
                .map_err(|_| EmoticonError::NonEncodableCharacter(c))
        })
        .collect()
}

pub fn decode_emoticon(bits: &str) -> Result<String, EmoticonError> {
    let undecodable = || EmoticonError::UndecodableKey(bits.to_string());
    if bits.len() != 16 || !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(undecodable());
    }
    let hi = u8::from_str_radix(&bits[..8], 2).map_err(|_| undecodable())?;
    let lo = u8::from_str_radix(&bits[8..], 2).map_err(|_| undecodable())?;
    Ok([char::from(hi), char::from(lo)].iter().collect())
}

/// Emoticon → relative frequency over all shots in `counts`.
pub fn decode_counts(counts: &Counts) -> Result<BTreeMap<String, f64>, EmoticonError> {
    let shots = counts.shots() as f64;
    let mut out = BTreeMap::new();
    for (bits, n) in counts.iter() {
        *out.entry(decode_emoticon(bits)?).or_insert(0.0) += n as f64 / shots;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wink() {
        assert_eq!(encode_emoticon(";)").unwrap(), "0011101100101001");
        assert_eq!(encode_emoticon("A").unwrap_err(), EmoticonError::WrongLength(1));
        assert_eq!(
            encode_emoticon("😀)").unwrap_err(),
            EmoticonError::NonEncodableCharacter('😀')
        );
        assert_eq!(encode_emoticon("é!").unwrap(), "1110100100100001");
    }

    #[test]
    fn decode_half_half() {
        let counts: Counts = [
            ("0011101100101001".to_string(), 512),
            ("0011101100101000".to_string(), 512),
        ]
        .into_iter()
        .collect();
        let f = decode_counts(&counts).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[";)"], 0.5);
        assert_eq!(f[";("], 0.5);
    }

    #[test]
    fn decode_single_and_bad_keys() {
        let counts: Counts = [("0011101100101001".to_string(), 7)].into_iter().collect();
        assert_eq!(decode_counts(&counts).unwrap()[";)"], 1.0);
        let bad: Counts = [("0101".to_string(), 1)].into_iter().collect();
        assert_eq!(
            decode_counts(&bad),
            Err(EmoticonError::UndecodableKey("0101".into()))
        );
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(a in 0u8..=255, b in 0u8..=255) {
            let s: String = [char::from(a), char::from(b)].iter().collect();
            let bits = encode_emoticon(&s).unwrap();
            prop_assert_eq!(bits.len(), 16);
            prop_assert_eq!(decode_emoticon(&bits).unwrap(), s);
        }

        #[test]
        fn frequencies_sum_to_one(raw in prop::collection::btree_map(0u16..=u16::MAX, 1u64..1000, 1..20)) {
            let counts: Counts = raw.into_iter().map(|(k, v)| (format!("{k:016b}"), v)).collect();
            let total: f64 = decode_counts(&counts).unwrap().values().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
