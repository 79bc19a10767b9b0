use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-label ground truth or prediction, serialized as a `"0110"` string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelBits(pub Vec<bool>);

impl LabelBits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn positives(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl std::str::FromStr for LabelBits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Dataset(format!("invalid label character '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelBits)
    }
}

impl std::fmt::Display for LabelBits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl From<Vec<bool>> for LabelBits {
    fn from(v: Vec<bool>) -> Self {
        LabelBits(v)
    }
}

impl Serialize for LabelBits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelBits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// TP/FP/FN of a prediction against ground truth.
pub fn confusion(truth: &LabelBits, pred: &[bool]) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (i, &p) in pred.iter().enumerate() {
        match (truth.get(i), p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// `Vec<bool>` as a JSON array of `0`/`1`.
pub mod bits01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&b| u8::from(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Ok(Vec::<u8>::deserialize(d)?.into_iter().map(|b| b != 0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let l: LabelBits = "0110".parse().unwrap();
        assert_eq!(l.0, vec![false, true, true, false]);
        assert_eq!(l.to_string(), "0110");
        assert_eq!(l.positives(), 2);
        assert!("01x".parse::<LabelBits>().is_err());
        assert_eq!(serde_json::to_string(&l).unwrap(), "\"0110\"");
    }

    #[test]
    fn confusion_counts() {
        let l: LabelBits = "1100".parse().unwrap();
        assert_eq!(confusion(&l, &[true, false, true, false]), (1, 1, 1));
    }
}
