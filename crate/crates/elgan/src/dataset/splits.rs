//! Deterministic train/val/test assignment.
//!
//! The unsupervised scheme routes defect-free samples into train/val/test
//! at 750:373:375 and every defective sample into test. The supervised
//! scheme splits only defectives at 232:68:75, stratified by class, and
//! routes all defect-free samples into test.

use rand::seq::SliceRandom;

use super::{DatasetManifest, SampleMeta, Split};
use crate::error::{Error, Result};
use crate::tensor::nn::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    Unsupervised,
    Supervised,
}

/// Reference split ratios (train, val, test).
fn ratios(scheme: SplitScheme) -> [f64; 3] {
    match scheme {
        SplitScheme::Unsupervised => [750.0 / 1498.0, 373.0 / 1498.0, 375.0 / 1498.0],
        SplitScheme::Supervised => [232.0 / 375.0, 68.0 / 375.0, 75.0 / 375.0],
    }
}

/// Largest-remainder split of `n` into three parts at the given ratios.
fn allocate_totals(n: usize, r: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = r.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Round a fractional rows-by-splits allocation so that each row sums to
/// its group size and each column to `col_totals`. Floors first, then
/// hands out the leftovers by descending remainder, repairing greedily if
/// the remainder order alone cannot satisfy both margins.
fn allocate_table(group_sizes: &[usize], col_totals: [usize; 3], r: [f64; 3]) -> Vec<[usize; 3]> {
    let rows = group_sizes.len();
    let mut alloc = vec![[0usize; 3]; rows];
    let mut rem = vec![[0f64; 3]; rows];
    for (i, &n) in group_sizes.iter().enumerate() {
        for j in 0..3 {
            let exact = r[j] * n as f64;
            alloc[i][j] = exact.floor() as usize;
            rem[i][j] = exact - exact.floor();
        }
    }
    let mut row_deficit: Vec<usize> = (0..rows)
        .map(|i| group_sizes[i] - alloc[i].iter().sum::<usize>())
        .collect();
    let mut col_deficit = [0usize; 3];
    for j in 0..3 {
        let have: usize = alloc.iter().map(|a| a[j]).sum();
        assert!(col_totals[j] >= have, "column floor exceeds target");
        col_deficit[j] = col_totals[j] - have;
    }

    let mut cells: Vec<(usize, usize)> =
        (0..rows).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
    cells.sort_by(|&(ia, ja), &(ib, jb)| {
        rem[ib][jb]
            .partial_cmp(&rem[ia][ja])
            .unwrap()
            .then(ia.cmp(&ib))
            .then(ja.cmp(&jb))
    });
    for &(i, j) in &cells {
        if row_deficit[i] > 0 && col_deficit[j] > 0 {
            alloc[i][j] += 1;
            row_deficit[i] -= 1;
            col_deficit[j] -= 1;
        }
    }
    // repair pass: any deficit left over is matched first-come
    for i in 0..rows {
        while row_deficit[i] > 0 {
            let j = (0..3).find(|&j| col_deficit[j] > 0).expect("margins must balance");
            alloc[i][j] += 1;
            row_deficit[i] -= 1;
            col_deficit[j] -= 1;
        }
    }
    alloc
}

fn shuffled_ids(samples: &[&SampleMeta], seed: u64, tag: &str) -> Vec<String> {
    let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut rng_for(seed, tag));
    ids
}

/// Assign splits, returning a new manifest with the same samples.
pub fn split_dataset(
    manifest: &DatasetManifest,
    scheme: SplitScheme,
    seed: u64,
) -> Result<DatasetManifest> {
    manifest.validate()?;
    let defect_free: Vec<&SampleMeta> =
        manifest.samples.iter().filter(|s| !s.is_defective()).collect();
    let defective: Vec<&SampleMeta> =
        manifest.samples.iter().filter(|s| s.is_defective()).collect();

    let mut out = manifest.clone();
    out.seed = seed;
    out.splits.clear();

    match scheme {
        SplitScheme::Unsupervised => {
            if defect_free.len() < 3 {
                return Err(Error::Capacity(format!(
                    "unsupervised split needs at least 3 defect-free samples, got {}",
                    defect_free.len()
                )));
            }
            let counts = allocate_totals(defect_free.len(), ratios(scheme));
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::Capacity(
                    "unsupervised split would leave an empty defect-free split".into(),
                ));
            }
            let ids = shuffled_ids(&defect_free, seed, "split/unsupervised");
            let mut it = ids.into_iter();
            for (split, count) in Split::ALL.into_iter().zip(counts) {
                for id in it.by_ref().take(count) {
                    out.splits.insert(id, split);
                }
            }
            for s in &defective {
                out.splits.insert(s.id.clone(), Split::Test);
            }
        }
        SplitScheme::Supervised => {
            if defective.len() < 3 {
                return Err(Error::Capacity(format!(
                    "supervised split needs at least 3 defective samples, got {}",
                    defective.len()
                )));
            }
            let totals = allocate_totals(defective.len(), ratios(scheme));
            if totals.iter().any(|&c| c == 0) {
                return Err(Error::Capacity(
                    "supervised split would leave an empty defective split".into(),
                ));
            }
            // stratify by exact class set so mixed-class samples stay grouped
            let mut groups: Vec<(Vec<&SampleMeta>, String)> = Vec::new();
            for s in &defective {
                let key: Vec<&str> = s.classes.iter().map(|c| c.name()).collect();
                let key = key.join("+");
                match groups.iter_mut().find(|(_, k)| *k == key) {
                    Some((members, _)) => members.push(s),
                    None => groups.push((vec![s], key)),
                }
            }
            groups.sort_by(|a, b| a.1.cmp(&b.1));
            let sizes: Vec<usize> = groups.iter().map(|(m, _)| m.len()).collect();
            let table = allocate_table(&sizes, totals, ratios(scheme));
            for ((members, key), counts) in groups.iter().zip(table) {
                let ids = shuffled_ids(members, seed, &format!("split/supervised/{key}"));
                let mut it = ids.into_iter();
                for (split, count) in Split::ALL.into_iter().zip(counts) {
                    for id in it.by_ref().take(count) {
                        out.splits.insert(id, split);
                    }
                }
            }
            for s in &defect_free {
                out.splits.insert(s.id.clone(), Split::Test);
            }
        }
    }
    out.validate()?;
    Ok(out)
}
