//! Stratified train/validation/test splitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

use super::{Gender, IndexRow};

/// Disjoint row-index sets covering the whole corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffle each gender with the seeded split stream, then partition it by
/// `fractions` under largest-remainder rounding. Remainder ties go to the
/// split furthest below its overall share so far, then to the earlier split,
/// which keeps the whole-corpus totals on target as well.
pub fn stratified_split(
    rows: &[IndexRow],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::Parameter(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must sum to 1, got {fractions:?} (sum {sum})"
        )));
    }

    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, row) in rows.iter().enumerate() {
        groups[row.gender.index()].push(i);
    }

    let mut rng = Rng::new(seed, streams::SPLIT);
    let mut splits: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut allocated = [0usize; 3];
    let mut processed = 0usize;

    for gender in [Gender::Female, Gender::Male] {
        let group = &mut groups[gender.index()];
        rng.shuffle(group);
        let n = group.len();
        if n == 0 {
            continue;
        }
        processed += n;

        let mut counts = [0usize; 3];
        let mut remainders = [0f64; 3];
        for i in 0..3 {
            let exact = fractions[i] * n as f64;
            counts[i] = exact.floor() as usize;
            remainders[i] = exact - exact.floor();
        }
        let mut extras = n - counts.iter().sum::<usize>();
        while extras > 0 {
            let deficit = |i: usize| fractions[i] * processed as f64 - (allocated[i] + counts[i]) as f64;
            let best = (0..3)
                .max_by(|&a, &b| {
                    remainders[a]
                        .partial_cmp(&remainders[b])
                        .unwrap()
                        .then(deficit(a).partial_cmp(&deficit(b)).unwrap())
                        .then(b.cmp(&a)) // earlier split wins remaining ties
                })
                .unwrap();
            counts[best] += 1;
            remainders[best] = -1.0;
            extras -= 1;
        }

        let mut offset = 0;
        for i in 0..3 {
            splits[i].extend_from_slice(&group[offset..offset + counts[i]]);
            allocated[i] += counts[i];
            offset += counts[i];
        }
    }

    for split in &mut splits {
        split.sort_unstable();
    }
    let [train, val, test] = splits;
    Ok(SplitAssignment {
        seed,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn rows(females: usize, males: usize) -> Vec<IndexRow> {
        // interleave genders so split indices exercise both
        let mut rows = Vec::new();
        let (mut f, mut m) = (0, 0);
        while f < females || m < males {
            if f < females {
                rows.push(IndexRow {
                    image_id: format!("f{f}.png"),
                    clothing: "African Blouse".into(),
                    gender: Gender::Female,
                });
                f += 1;
            }
            if m < males {
                rows.push(IndexRow {
                    image_id: format!("m{m}.png"),
                    clothing: "Agbada".into(),
                    gender: Gender::Male,
                });
                m += 1;
            }
        }
        rows
    }

    fn gender_count(rows: &[IndexRow], indices: &[usize], gender: Gender) -> usize {
        indices.iter().filter(|&&i| rows[i].gender == gender).count()
    }

    #[test]
    fn corpus_sized_split_hits_paper_counts() {
        let rows = rows(1000, 600);
        let split = stratified_split(&rows, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(split.train.len(), 1280);
        assert_eq!(split.val.len(), 160);
        assert_eq!(split.test.len(), 160);
        assert_eq!(gender_count(&rows, &split.train, Gender::Female), 800);
        assert_eq!(gender_count(&rows, &split.train, Gender::Male), 480);
        assert_eq!(gender_count(&rows, &split.test, Gender::Female), 100);
        assert_eq!(gender_count(&rows, &split.test, Gender::Male), 60);
    }

    #[test]
    fn same_seed_reproduces_the_assignment() {
        let rows = rows(37, 21);
        let a = stratified_split(&rows, [0.8, 0.1, 0.1], 7).unwrap();
        let b = stratified_split(&rows, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&rows, [0.8, 0.1, 0.1], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ten_rows_become_eight_one_one() {
        let rows = rows(5, 5);
        let split = stratified_split(&rows, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);
        for indices in [&split.train, &split.val, &split.test] {
            let f = gender_count(&rows, indices, Gender::Female) as f64;
            let m = gender_count(&rows, indices, Gender::Male) as f64;
            let exact = indices.len() as f64 / 2.0;
            assert!((f - exact).abs() <= 1.0);
            assert!((m - exact).abs() <= 1.0);
        }
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        for (f, m, seed) in [(13, 7, 1), (99, 1, 2), (2, 3, 9), (0, 10, 4)] {
            let rows = rows(f, m);
            let split = stratified_split(&rows, [0.8, 0.1, 0.1], seed).unwrap();
            let mut seen = BTreeSet::new();
            for idx in split
                .train
                .iter()
                .chain(&split.val)
                .chain(&split.test)
            {
                assert!(seen.insert(*idx), "index {idx} assigned twice");
            }
            assert_eq!(seen.len(), rows.len());
        }
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let rows = rows(4, 4);
        assert!(stratified_split(&rows, [0.8, 0.1, 0.2], 1).is_err());
        assert!(stratified_split(&rows, [1.2, -0.1, -0.1], 1).is_err());
    }
}
