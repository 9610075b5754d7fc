use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Required prompt fields in canonical order.
pub const PROMPT_FIELDS: [&str; 5] = ["goal", "constraints", "objects", "failure_cases", "environment"];

/// A structured instruction with an explicit field order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDoc {
    pub fields: Vec<(String, String)>,
}

impl PromptDoc {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(extra) = map.keys().find(|k| !PROMPT_FIELDS.contains(&k.as_str())) {
            return Err(Error::InvalidPrompt(format!("unknown field `{extra}`")));
        }
        let fields = PROMPT_FIELDS
            .iter()
            .map(|&k| {
                map.get(k)
                    .map(|v| (k.to_string(), v.clone()))
                    .ok_or_else(|| Error::InvalidPrompt(format!("missing field `{k}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { fields })
    }

    /// One `key: value` line per field, in the document's order.
    pub fn render(&self) -> String {
        self.fields.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn canonical(&self) -> Self {
        let map: BTreeMap<String, String> = self.fields.iter().cloned().collect();
        Self::from_map(&map).expect("fields were validated on construction")
    }

    /// CRC-32 of the canonical rendering, independent of field order.
    pub fn hash(&self) -> u32 {
        crc32fast::hash(self.canonical().render().as_bytes())
    }
}

/// With probability `p` returns the fields in a uniformly random order,
/// otherwise in canonical order, together with the order-free hash.
pub fn shuffle_prompt_fields(prompt: &BTreeMap<String, String>, p: f64, seed: u64) -> Result<(PromptDoc, u32)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("shuffle probability {p} outside [0, 1]")));
    }
    let mut doc = PromptDoc::from_map(prompt)?;
    let hash = doc.hash();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen_bool(p) {
        doc.fields.shuffle(&mut rng);
    }
    Ok((doc, hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt() -> BTreeMap<String, String> {
        PROMPT_FIELDS.iter().map(|k| (k.to_string(), format!("{k} text"))).collect()
    }

    fn permutations(items: Vec<(String, String)>) -> Vec<Vec<(String, String)>> {
        if items.len() <= 1 {
            return vec![items];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.clone();
            let head = rest.remove(i);
            for mut tail in permutations(rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn never_shuffles_at_zero() {
        for seed in 0..50 {
            let (doc, _) = shuffle_prompt_fields(&prompt(), 0.0, seed).unwrap();
            assert_eq!(doc, doc.canonical());
        }
    }

    #[test]
    fn seeded_shuffle_is_deterministic() {
        let a = shuffle_prompt_fields(&prompt(), 1.0, 3).unwrap();
        assert_eq!(a, shuffle_prompt_fields(&prompt(), 1.0, 3).unwrap());
    }

    #[test]
    fn hash_is_order_free_and_content_sensitive() {
        let base = PromptDoc::from_map(&prompt()).unwrap();
        let perms = permutations(base.fields.clone());
        assert_eq!(perms.len(), 120);
        let hashes: std::collections::HashSet<u32> = perms.into_iter().map(|f| PromptDoc { fields: f }.hash()).collect();
        assert_eq!(hashes.len(), 1);
        let mut changed = prompt();
        changed.insert("goal".into(), "goal text!".into());
        assert_ne!(PromptDoc::from_map(&changed).unwrap().hash(), base.hash());
    }

    #[test]
    fn missing_field_rejected() {
        let mut p = prompt();
        p.remove("objects");
        assert!(matches!(shuffle_prompt_fields(&p, 0.5, 0), Err(Error::InvalidPrompt(_))));
    }

    #[test]
    fn shuffle_rate_near_half() {
        let shuffled = (0..2000)
            .filter(|&s| {
                let (d, _) = shuffle_prompt_fields(&prompt(), 0.5, s).unwrap();
                d != d.canonical()
            })
            .count();
        // a shuffle lands on the identity 1/120 of the time
        let expect = 2000.0 * 0.5 * (119.0 / 120.0);
        assert!((shuffled as f64 - expect).abs() < 100.0, "{shuffled}");
    }
}
