//! Plate-preserving random calibration/validation splits.
//!
//! Splits are made at sample level (all replicates of a sample go to the
//! same set). Within each plate the cases are shuffled and dealt to the two
//! sets alternately, starting from a randomly chosen set; every case pulls
//! two randomly chosen unassigned controls of the same plate into its set.
//! Controls left over after that are assigned by a fair coin.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum_io::{ClassLabel, SampleTable};

pub const CONTROLS_PER_CASE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitSet {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    /// One-based.
    pub repetition: usize,
    /// Per distinct sample id, in first-appearance order of the table.
    pub sets: Vec<(String, SplitSet)>,
}

impl SplitAssignment {
    pub fn set_of(&self, sample_id: &str) -> Option<SplitSet> {
        self.sets.iter().find(|(s, _)| s == sample_id).map(|(_, set)| *set)
    }

    pub fn members(&self, set: SplitSet) -> Vec<&str> {
        self.sets.iter().filter(|(_, s)| *s == set).map(|(id, _)| id.as_str()).collect()
    }
}

struct Sample {
    id: String,
    class: ClassLabel,
    plate: u16,
}

fn distinct_samples(table: &SampleTable) -> Result<Vec<Sample>> {
    let mut out: Vec<Sample> = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for row in &table.rows {
        match seen.get(row.sample_id.as_str()) {
            Some(&k) => {
                if out[k].class != row.class || out[k].plate != row.plate {
                    return Err(Error::Validation(format!(
                        "replicates of sample {} disagree on class or plate",
                        row.sample_id
                    )));
                }
            }
            None => {
                seen.insert(&row.sample_id, out.len());
                out.push(Sample {
                    id: row.sample_id.clone(),
                    class: row.class,
                    plate: row.plate,
                });
            }
        }
    }
    Ok(out)
}

fn split_once(samples: &[Sample], rng: &mut ChaCha8Rng) -> Vec<SplitSet> {
    let mut sets: Vec<Option<SplitSet>> = vec![None; samples.len()];
    let mut plates: BTreeMap<u16, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (k, s) in samples.iter().enumerate() {
        let entry = plates.entry(s.plate).or_default();
        match s.class {
            ClassLabel::Case => entry.0.push(k),
            ClassLabel::Control => entry.1.push(k),
        }
    }
    for (plate, (mut cases, mut controls)) in plates {
        cases.shuffle(rng);
        controls.shuffle(rng);
        if controls.len() < CONTROLS_PER_CASE * cases.len() {
            warn!(
                "plate {plate}: {} controls for {} cases; the 1:{CONTROLS_PER_CASE} ratio is kept only approximately",
                controls.len(),
                cases.len()
            );
        }
        let first = if rng.random_bool(0.5) { SplitSet::A } else { SplitSet::B };
        let mut pool = controls.into_iter();
        for (c, &case) in cases.iter().enumerate() {
            let set = if c % 2 == 0 { first } else { other(first) };
            sets[case] = Some(set);
            for control in pool.by_ref().take(CONTROLS_PER_CASE) {
                sets[control] = Some(set);
            }
        }
        for control in pool {
            sets[control] = Some(if rng.random_bool(0.5) { SplitSet::A } else { SplitSet::B });
        }
    }
    sets.into_iter().map(|s| s.expect("every sample belongs to a plate")).collect()
}

fn other(set: SplitSet) -> SplitSet {
    match set {
        SplitSet::A => SplitSet::B,
        SplitSet::B => SplitSet::A,
    }
}

/// `repetitions` independent splits; repetition `r` draws from stream `r`
/// of a generator seeded with `seed`.
pub fn random_split(table: &SampleTable, seed: u64, repetitions: usize) -> Result<Vec<SplitAssignment>> {
    let samples = distinct_samples(table)?;
    Ok((1..=repetitions)
        .map(|repetition| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(repetition as u64);
            let sets = split_once(&samples, &mut rng);
            SplitAssignment {
                seed,
                repetition,
                sets: samples.iter().map(|s| s.id.clone()).zip(sets).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum_io::{SampleRecord, SampleSet};

    fn table(plates: &[(u16, usize, usize)]) -> SampleTable {
        let mut rows = Vec::new();
        for &(plate, cases, controls) in plates {
            for k in 0..cases + controls {
                rows.push(SampleRecord {
                    sample_id: format!("p{plate}_{k}"),
                    class: if k < cases { ClassLabel::Case } else { ClassLabel::Control },
                    plate,
                    set: SampleSet::Calibration,
                    replicate: 1,
                    file: None,
                });
            }
        }
        SampleTable::new(rows).unwrap()
    }

    #[test]
    fn ratio_preserved_per_plate() {
        let t = table(&[(1, 2, 4), (2, 3, 6)]);
        for split in random_split(&t, 7, 10).unwrap() {
            for plate in [1u16, 2] {
                for set in [SplitSet::A, SplitSet::B] {
                    let members: Vec<&SampleRecord> = t
                        .rows
                        .iter()
                        .filter(|r| r.plate == plate && split.set_of(&r.sample_id) == Some(set))
                        .collect();
                    let cases = members.iter().filter(|r| r.class == ClassLabel::Case).count();
                    assert_eq!(members.len() - cases, 2 * cases);
                }
            }
        }
    }

    #[test]
    fn seeded_and_distinct() {
        let t = table(&[(1, 4, 8), (2, 3, 6), (3, 4, 8)]);
        let a = random_split(&t, 42, 10).unwrap();
        assert_eq!(a, random_split(&t, 42, 10).unwrap());
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i].sets, a[j].sets);
            }
        }
    }

    #[test]
    fn leftover_controls_assigned() {
        let t = table(&[(1, 1, 5)]);
        let split = &random_split(&t, 1, 1).unwrap()[0];
        assert_eq!(split.sets.len(), 6);
    }
}
