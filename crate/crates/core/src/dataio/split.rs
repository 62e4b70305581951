use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Shuffle recordings independently.
    #[default]
    Record,
    /// Keep every recording of a patient on the same side.
    Patient,
}

/// Train/validation ids from one corpus, test ids from another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub split_seed: u64,
    pub policy: SplitPolicy,
}

fn train_count(n: usize) -> usize {
    // floor(0.9 n) in integer arithmetic
    n * 9 / 10
}

fn sorted_unique(ids: impl IntoIterator<Item = String>) -> Result<Vec<String>> {
    let mut v: Vec<String> = ids.into_iter().collect();
    if v.is_empty() {
        return Err(Error::EmptySplit);
    }
    v.sort();
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("duplicate record id {}", w[0])));
    }
    Ok(v)
}

/// Record-level 90/10 split: ids are sorted, shuffled with a ChaCha8 stream
/// seeded by `seed`, and the first `floor(0.9 N)` go to training. The result
/// depends only on the id set and the seed, not on input order.
pub fn split_train_val(record_ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let mut ids = sorted_unique(record_ids.iter().cloned())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let val_ids = ids.split_off(train_count(ids.len()));
    Ok(DatasetSplit {
        train_ids: ids,
        val_ids,
        test_ids: Vec::new(),
        split_seed: seed,
        policy: SplitPolicy::Record,
    })
}

/// Patient-level split over `(record_id, patient_id)` pairs. Patients are
/// shuffled and assigned to training until it holds at least `floor(0.9 N)`
/// recordings, so the training side can overshoot by less than one
/// patient's worth of recordings.
pub fn split_by_patient(entries: &[(String, String)], seed: u64) -> Result<DatasetSplit> {
    sorted_unique(entries.iter().map(|(r, _)| r.clone()))?;
    let mut by_patient: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (record, patient) in entries {
        by_patient.entry(patient).or_default().push(record);
    }
    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let target = train_count(entries.len());
    let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
    for p in patients {
        let mut records: Vec<String> = by_patient[p].iter().map(|s| s.to_string()).collect();
        records.sort();
        if train_ids.len() < target {
            train_ids.extend(records);
        } else {
            val_ids.extend(records);
        }
    }
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids: Vec::new(),
        split_seed: seed,
        policy: SplitPolicy::Patient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:05}")).collect()
    }

    #[test]
    fn ptbxl_sizes() {
        // floor(0.9 * 21799) = floor(19619.1) = 19619
        let s = split_train_val(&ids(21799), 7).unwrap();
        assert_eq!(s.train_ids.len(), 19619);
        assert_eq!(s.val_ids.len(), 2180);
    }

    #[test]
    fn small_and_empty() {
        let s = split_train_val(&ids(10), 3).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (9, 1));
        assert!(matches!(split_train_val(&[], 3), Err(Error::EmptySplit)));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(split_train_val(&dup, 3).is_err());
    }

    #[test]
    fn seed_changes_assignment_but_not_sizes() {
        let a = split_train_val(&ids(100), 1).unwrap();
        let b = split_train_val(&ids(100), 2).unwrap();
        assert_ne!(a.val_ids, b.val_ids);
        assert_eq!(a.val_ids.len(), b.val_ids.len());
        let mut rev = ids(100);
        rev.reverse();
        assert_eq!(split_train_val(&rev, 1).unwrap(), a);
    }

    #[test]
    fn patient_split_keeps_patients_together() {
        let entries: Vec<(String, String)> = (0..200)
            .map(|i| (format!("r{i:03}"), format!("p{:02}", i % 37)))
            .collect();
        let s = split_by_patient(&entries, 11).unwrap();
        assert_eq!(s.train_ids.len() + s.val_ids.len(), 200);
        assert!(s.train_ids.len() >= 180);
        let patient_of = |r: &String| entries.iter().find(|(x, _)| x == r).unwrap().1.clone();
        let tp: BTreeSet<_> = s.train_ids.iter().map(patient_of).collect();
        let vp: BTreeSet<_> = s.val_ids.iter().map(patient_of).collect();
        assert!(tp.is_disjoint(&vp));
        assert_eq!(split_by_patient(&entries, 11).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partition_law(n in 1usize..400, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_train_val(&all, seed).unwrap();
            prop_assert_eq!(s.train_ids.len(), n * 9 / 10);
            let t: BTreeSet<_> = s.train_ids.iter().cloned().collect();
            let v: BTreeSet<_> = s.val_ids.iter().cloned().collect();
            prop_assert!(t.is_disjoint(&v));
            let u: BTreeSet<_> = t.union(&v).cloned().collect();
            prop_assert_eq!(u, all.iter().cloned().collect::<BTreeSet<_>>());
            prop_assert_eq!(split_train_val(&all, seed).unwrap(), s);
        }
    }
}
