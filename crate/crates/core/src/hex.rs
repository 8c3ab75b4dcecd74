//! Serde helpers for addresses written as `0x`-prefixed hex strings.

use serde::{de, Deserialize, Deserializer, Serializer};

pub fn format(v: u64) -> String {
    format!("{v:#x}")
}

/// Parses a `0x`-prefixed hex or a plain decimal number.
pub fn parse(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(&h.replace('_', ""), 16),
        None => s.replace('_', "").parse::<u64>(),
    };
    parsed.map_err(|e| format!("bad address `{s}`: {e}"))
}

/// Parses a byte count: a number as for [`parse`], optionally followed by
/// `K`/`KiB`, `M`/`MiB` or `G`/`GiB` (binary multiples).
pub fn parse_size(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let split = t
        .find(|c: char| c.is_ascii_alphabetic() && !t.starts_with("0x") && !t.starts_with("0X"))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let shift = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 0,
        "k" | "kib" | "kb" => 10,
        "m" | "mib" | "mb" => 20,
        "g" | "gib" | "gb" => 30,
        other => return Err(format!("unknown size unit `{other}` in `{s}`")),
    };
    let n = parse(num)?;
    n.checked_mul(1u64 << shift)
        .ok_or_else(|| format!("size `{s}` overflows"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HexOrInt {
    Int(u64),
    Str(String),
}

pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format(*v))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    match HexOrInt::deserialize(d)? {
        HexOrInt::Int(v) => Ok(v),
        HexOrInt::Str(s) => parse(&s).map_err(de::Error::custom),
    }
}

pub mod vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| super::format(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let raw = Vec::<super::HexOrInt>::deserialize(d)?;
        raw.into_iter()
            .map(|h| match h {
                super::HexOrInt::Int(v) => Ok(v),
                super::HexOrInt::Str(s) => super::parse(&s).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

/// Sizes: integers, hex strings, or strings with a binary unit suffix.
pub mod size_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let raw = Vec::<super::HexOrInt>::deserialize(d)?;
        raw.into_iter()
            .map(|h| match h {
                super::HexOrInt::Int(v) => Ok(v),
                super::HexOrInt::Str(s) => super::parse_size(&s).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

pub mod option_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u64>>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::vec")] Vec<u64>);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
