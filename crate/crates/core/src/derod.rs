//! Data-efficiency benchmarking splits: nested low-data percentage subsets
//! and few-shot support/novel splits, reproducible from a seed.
//!
//! Nesting comes from a single seeded permutation per pool: the split for a
//! larger size is always a prefix-extension of the smaller one, which is the
//! only construction giving the superset chain with uniform inclusion
//! probability. The permutation uses the splitmix64 stream documented in
//! [`crate::rng`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::{fnv1a64, SplitMix64};

/// Split request: percentage subsets of the whole dataset, or category-based
/// support/novel pools with fixed sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum SplitSpec {
    #[serde(rename = "lowdata")]
    LowData { percentages: Vec<f64> },
    #[serde(rename = "fewshot")]
    FewShot {
        support_categories: BTreeSet<String>,
        support_size: usize,
        novel_sizes: Vec<usize>,
    },
}

impl SplitSpec {
    /// The six percentage levels used by default for low-data evaluation.
    pub fn default_percentages() -> Vec<f64> {
        vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05]
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            SplitSpec::LowData { .. } => "lowdata",
            SplitSpec::FewShot { .. } => "fewshot",
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        match self {
            SplitSpec::LowData { percentages } => {
                if percentages.is_empty() {
                    return Err(SplitError::InvalidSpec("no percentages given".into()));
                }
                let mut last = 0.0;
                for &p in percentages {
                    if !p.is_finite() || p <= last || p > 1.0 {
                        return Err(SplitError::InvalidSpec(format!(
                            "percentages must be strictly increasing in (0, 1]; got {p} after {last}"
                        )));
                    }
                    last = p;
                }
                Ok(())
            }
            SplitSpec::FewShot { support_categories, support_size, novel_sizes } => {
                if support_categories.is_empty() {
                    return Err(SplitError::InvalidSpec("no support categories".into()));
                }
                if *support_size == 0 {
                    return Err(SplitError::InvalidSpec("support size is zero".into()));
                }
                if novel_sizes.is_empty() {
                    return Err(SplitError::InvalidSpec("no novel sizes".into()));
                }
                let mut last = 0;
                for &k in novel_sizes {
                    if k <= last {
                        return Err(SplitError::InvalidSpec(format!(
                            "novel sizes must be strictly increasing; got {k} after {last}"
                        )));
                    }
                    last = k;
                }
                Ok(())
            }
        }
    }

    /// Provenance fingerprint of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitError {
    EmptyDataset,
    /// A requested size exceeds the available pool.
    InsufficientPool { pool: String, available: usize, requested: usize },
    InvalidSpec(String),
}

impl fmt::Display for SplitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDataset => f.write_str("dataset has no samples"),
            Self::InsufficientPool { pool, available, requested } => {
                write!(f, "{pool} pool has {available} samples, {requested} requested")
            }
            Self::InvalidSpec(msg) => write!(f, "invalid split spec: {msg}"),
        }
    }
}

impl std::error::Error for SplitError {}

/// Named splits plus the provenance needed to regenerate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub mode: String,
    pub seed: u64,
    pub spec: SplitSpec,
    pub spec_hash: String,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl SplitManifest {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Subset size for fraction `p` of `n` ids: `round(p * n)`, at least 1 and
/// at most `n`.
pub fn low_data_count(p: f64, n: usize) -> usize {
    ((p * n as f64).round() as usize).clamp(1, n)
}

fn permuted(ids: &[String], seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<String> = ids.to_vec();
    rng.shuffle(&mut order);
    order
}

/// Draw nested percentage subsets from one seeded permutation: the split for
/// fraction `p` is the first `low_data_count(p, n)` ids.
pub fn sample_low_data(
    ids: &[String],
    percentages: &[f64],
    seed: u64,
) -> Result<SplitManifest, SplitError> {
    let spec = SplitSpec::LowData { percentages: percentages.to_vec() };
    spec.validate()?;
    if ids.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    debug_assert_eq!(
        ids.iter().collect::<HashSet<_>>().len(),
        ids.len(),
        "ids must be unique"
    );
    let order = permuted(ids, seed);
    let mut splits = BTreeMap::new();
    for &p in percentages {
        let count = low_data_count(p, ids.len());
        splits.insert(format!("p{p}"), order[..count].to_vec());
    }
    Ok(SplitManifest { mode: "lowdata".into(), seed, spec_hash: spec.hash(), spec, splits })
}

/// Draw the support set from the support-category pool and nested novel
/// fine-tuning sets from the complement, each from its own derived stream.
pub fn sample_few_shot(
    samples: &[(String, String)],
    spec: &SplitSpec,
    seed: u64,
) -> Result<SplitManifest, SplitError> {
    spec.validate()?;
    let (support_categories, support_size, novel_sizes) = match spec {
        SplitSpec::FewShot { support_categories, support_size, novel_sizes } => {
            (support_categories, *support_size, novel_sizes)
        }
        SplitSpec::LowData { .. } => {
            return Err(SplitError::InvalidSpec("expected a fewshot spec".into()))
        }
    };
    if samples.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let support_pool: Vec<String> = samples
        .iter()
        .filter(|(_, cat)| support_categories.contains(cat))
        .map(|(id, _)| id.clone())
        .collect();
    let novel_pool: Vec<String> = samples
        .iter()
        .filter(|(_, cat)| !support_categories.contains(cat))
        .map(|(id, _)| id.clone())
        .collect();
    if support_pool.is_empty() || novel_pool.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    if support_size > support_pool.len() {
        return Err(SplitError::InsufficientPool {
            pool: "support".into(),
            available: support_pool.len(),
            requested: support_size,
        });
    }
    let max_novel = *novel_sizes.last().expect("validated non-empty");
    if max_novel > novel_pool.len() {
        return Err(SplitError::InsufficientPool {
            pool: "novel".into(),
            available: novel_pool.len(),
            requested: max_novel,
        });
    }

    let mut root = SplitMix64::new(seed);
    let support_seed = root.next_u64();
    let novel_seed = root.next_u64();
    let support_order = permuted(&support_pool, support_seed);
    let novel_order = permuted(&novel_pool, novel_seed);

    let mut splits = BTreeMap::new();
    splits.insert("support".to_string(), support_order[..support_size].to_vec());
    for &k in novel_sizes {
        splits.insert(format!("novel_{k}"), novel_order[..k].to_vec());
    }
    Ok(SplitManifest {
        mode: "fewshot".into(),
        seed,
        spec_hash: spec.hash(),
        spec: spec.clone(),
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:05}")).collect()
    }

    fn labeled(n: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| {
                let cat = if i % 3 == 0 { "person" } else { "mug" };
                (format!("id{i:05}"), cat.to_string())
            })
            .collect()
    }

    #[test]
    fn count_rounds_and_clamps() {
        assert_eq!(low_data_count(0.005, 10_000), 50);
        assert_eq!(low_data_count(0.001, 100), 1);
        assert_eq!(low_data_count(1.0, 7), 7);
        assert_eq!(low_data_count(0.0049, 1000), 5);
    }

    #[test]
    fn low_data_splits_form_a_prefix_chain() {
        let pool = ids(10_000);
        let pct = SplitSpec::default_percentages();
        let manifest = sample_low_data(&pool, &pct, 9).unwrap();
        let names: Vec<String> = pct.iter().map(|p| format!("p{p}")).collect();
        for pair in names.windows(2) {
            let small = &manifest.splits[&pair[0]];
            let large = &manifest.splits[&pair[1]];
            assert!(small.len() < large.len());
            assert_eq!(&large[..small.len()], small.as_slice(), "prefix chain broken");
        }
        assert_eq!(manifest.splits["p0.001"].len(), 10);
        assert_eq!(manifest.splits["p0.05"].len(), 500);
    }

    #[test]
    fn low_data_is_deterministic() {
        let pool = ids(500);
        let pct = [0.01, 0.1];
        let a = sample_low_data(&pool, &pct, 33).unwrap();
        let b = sample_low_data(&pool, &pct, 33).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
        let c = sample_low_data(&pool, &pct, 34).unwrap();
        assert_ne!(a.splits, c.splits);
    }

    #[test]
    fn low_data_rejects_bad_input() {
        assert_eq!(sample_low_data(&[], &[0.1], 1), Err(SplitError::EmptyDataset));
        assert!(matches!(
            sample_low_data(&ids(10), &[0.2, 0.1], 1),
            Err(SplitError::InvalidSpec(_))
        ));
        assert!(matches!(
            sample_low_data(&ids(10), &[0.5, 1.5], 1),
            Err(SplitError::InvalidSpec(_))
        ));
    }

    #[test]
    fn few_shot_nesting_and_sizes() {
        let spec = SplitSpec::FewShot {
            support_categories: ["person".to_string()].into(),
            support_size: 2,
            novel_sizes: vec![1, 2],
        };
        let manifest = sample_few_shot(&labeled(10), &spec, 4).unwrap();
        assert_eq!(manifest.splits["support"].len(), 2);
        let n1 = &manifest.splits["novel_1"];
        let n2 = &manifest.splits["novel_2"];
        assert_eq!(n1.len(), 1);
        assert_eq!(n2.len(), 2);
        assert_eq!(&n2[..1], n1.as_slice());
    }

    #[test]
    fn few_shot_pools_are_disjoint() {
        let spec = SplitSpec::FewShot {
            support_categories: ["person".to_string()].into(),
            support_size: 3,
            novel_sizes: vec![2, 5],
        };
        let manifest = sample_few_shot(&labeled(30), &spec, 77).unwrap();
        let support: HashSet<_> = manifest.splits["support"].iter().collect();
        for name in ["novel_2", "novel_5"] {
            assert!(manifest.splits[name].iter().all(|id| !support.contains(id)));
        }
    }

    #[test]
    fn few_shot_insufficient_pool() {
        let spec = SplitSpec::FewShot {
            support_categories: ["person".to_string()].into(),
            support_size: 2,
            novel_sizes: vec![1],
        };
        // Only one person in a 3-sample set.
        let data = vec![
            ("a".to_string(), "person".to_string()),
            ("b".to_string(), "mug".to_string()),
            ("c".to_string(), "mug".to_string()),
        ];
        let err = sample_few_shot(&data, &spec, 1).unwrap_err();
        assert!(matches!(err, SplitError::InsufficientPool { available: 1, requested: 2, .. }));
    }

    #[test]
    fn few_shot_is_deterministic() {
        let spec = SplitSpec::FewShot {
            support_categories: ["person".to_string()].into(),
            support_size: 4,
            novel_sizes: vec![3, 6],
        };
        let a = sample_few_shot(&labeled(40), &spec, 5).unwrap();
        let b = sample_few_shot(&labeled(40), &spec, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inclusion_frequency_is_binomial() {
        // Prefix sampling of a uniform permutation includes each id with
        // probability count / n; check 3 sigma bounds over many seeds.
        let pool = ids(50);
        let pct = [0.2];
        let trials = 400u64;
        let mut freq = BTreeMap::new();
        for seed in 1000..1000 + trials {
            let manifest = sample_low_data(&pool, &pct, seed).unwrap();
            for id in &manifest.splits["p0.2"] {
                *freq.entry(id.clone()).or_insert(0u64) += 1;
            }
        }
        let p = 0.2;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for id in &pool {
            let f = *freq.get(id).unwrap_or(&0) as f64;
            assert!(
                (f - mean).abs() <= 3.0 * sigma,
                "{id}: frequency {f} outside {mean} +- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn manifest_roundtrips_through_json() {
        let manifest = sample_low_data(&ids(20), &[0.1, 0.5], 2).unwrap();
        let json = manifest.to_json_pretty();
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.spec_hash, back.spec.hash());
    }

    #[test]
    fn spec_hash_is_stable_and_discriminating() {
        let a = SplitSpec::LowData { percentages: vec![0.1] };
        let b = SplitSpec::LowData { percentages: vec![0.2] };
        assert_eq!(a.hash(), a.hash());
        assert_ne!(a.hash(), b.hash());
    }
}
