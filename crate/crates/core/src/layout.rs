//! Keyboard layouts and typing-context domains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct KeyboardLayout {
    pub name: String,
    pub keys: Vec<char>,
    /// Key centers in key-pitch units, parallel to `keys`.
    pub positions: Vec<(f64, f64)>,
}

impl KeyboardLayout {
    /// Phone-style PIN pad: 1-9 in a 3x3 grid, 0 centered below.
    pub fn numeric() -> Self {
        let keys: Vec<char> = "0123456789".chars().collect();
        let positions = keys
            .iter()
            .map(|&k| match k {
                '0' => (1.0, 3.0),
                d => {
                    let v = d as usize - '1' as usize;
                    ((v % 3) as f64, (v / 3) as f64)
                }
            })
            .collect();
        Self {
            name: "numeric".into(),
            keys,
            positions,
        }
    }

    /// Lowercase letters then digits, placed on a staggered QWERTY grid.
    pub fn qwerty36() -> Self {
        let rows: [(&str, f64); 4] = [("1234567890", 0.0), ("qwertyuiop", 0.5), ("asdfghjkl", 0.75), ("zxcvbnm", 1.25)];
        let keys: Vec<char> = ('a'..='z').chain('0'..='9').collect();
        let positions = keys
            .iter()
            .map(|&k| {
                rows.iter()
                    .enumerate()
                    .find_map(|(y, (row, off))| row.find(k).map(|x| (x as f64 + off, y as f64)))
                    .expect("every key is on a row")
            })
            .collect();
        Self {
            name: "qwerty36".into(),
            keys,
            positions,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "numeric" => Some(Self::numeric()),
            "qwerty36" => Some(Self::qwerty36()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: char) -> Option<usize> {
        self.keys.iter().position(|&k| k == key)
    }

    pub fn distance(&self, a: char, b: char) -> Option<f64> {
        let (pa, pb) = (self.positions[self.index_of(a)?], self.positions[self.index_of(b)?]);
        Some(((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt())
    }
}

/// Typing context of one keystroke: the keys pressed before and after it.
/// `None` marks the start or end of the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId {
    pub prev: Option<char>,
    pub key: char,
    pub next: Option<char>,
}

const BOUNDARY: char = '^';

impl DomainId {
    /// Domains of every position of `keys`.
    pub fn for_sequence(keys: &[char]) -> Vec<DomainId> {
        (0..keys.len())
            .map(|i| DomainId {
                prev: i.checked_sub(1).map(|j| keys[j]),
                key: keys[i],
                next: keys.get(i + 1).copied(),
            })
            .collect()
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            self.prev.unwrap_or(BOUNDARY),
            self.key,
            self.next.unwrap_or(BOUNDARY)
        )
    }
}

impl FromStr for DomainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('-').collect();
        let one = |p: &str| -> Result<char, String> {
            let mut it = p.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(format!("bad domain `{s}`")),
            }
        };
        if parts.len() != 3 {
            return Err(format!("bad domain `{s}`"));
        }
        let side = |p: &str| one(p).map(|c| (c != BOUNDARY).then_some(c));
        Ok(DomainId {
            prev: side(parts[0])?,
            key: one(parts[1])?,
            next: side(parts[2])?,
        })
    }
}

impl Serialize for DomainId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_have_unique_keys_and_positions() {
        for layout in [KeyboardLayout::numeric(), KeyboardLayout::qwerty36()] {
            let mut k = layout.keys.clone();
            k.sort();
            k.dedup();
            assert_eq!(k.len(), layout.len());
            for (i, a) in layout.positions.iter().enumerate() {
                assert!(a.0.is_finite() && a.1.is_finite());
                for b in &layout.positions[i + 1..] {
                    assert!(a != b);
                }
            }
        }
        assert_eq!(KeyboardLayout::numeric().len(), 10);
        assert_eq!(KeyboardLayout::qwerty36().len(), 36);
    }

    #[test]
    fn keypad_distances() {
        let l = KeyboardLayout::numeric();
        assert_eq!(l.distance('1', '3'), Some(2.0));
        assert_eq!(l.distance('2', '0'), Some(3.0));
        assert_eq!(l.distance('5', '5'), Some(0.0));
        assert_eq!(l.distance('5', 'x'), None);
    }

    #[test]
    fn domain_round_trip() {
        let d = DomainId::for_sequence(&['5', '1', '3']);
        assert_eq!(d[1].to_string(), "5-1-3");
        assert_eq!(d[0].to_string(), "^-5-1");
        for x in d {
            assert_eq!(x.to_string().parse::<DomainId>().unwrap(), x);
            let json = serde_json::to_string(&x).unwrap();
            assert_eq!(serde_json::from_str::<DomainId>(&json).unwrap(), x);
        }
    }
}
