//! Stratified train/test partitions of a [`PatchSet`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::patch::PatchSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Same training count for every class.
    PerClass(usize),
    /// Training count per class id `1..=n`, in order.
    Counts(Vec<usize>),
    /// Fraction of each class used for training, rounded to nearest.
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub rule: SplitRule,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            rule: SplitRule::PerClass(50),
            seed: 0,
        }
    }
}

/// Positions into the split [`PatchSet`], each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_rng(seed: u64, class: u16) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64);
    rng
}

/// Sample positions grouped by class id, classes `1..=max`.
fn by_class(set: &PatchSet) -> BTreeMap<u16, Vec<usize>> {
    let max = set.samples().iter().map(|s| s.label).max().unwrap_or(0);
    let mut groups: BTreeMap<u16, Vec<usize>> = (1..=max).map(|c| (c, Vec::new())).collect();
    for (i, s) in set.samples().iter().enumerate() {
        if s.label != 0 {
            groups.get_mut(&s.label).expect("class in range").push(i);
        }
    }
    groups
}

pub fn split(set: &PatchSet, spec: &SplitSpec) -> Result<Split> {
    let groups = by_class(set);
    if let SplitRule::Counts(c) = &spec.rule {
        if c.len() != groups.len() {
            return Err(Error::Config(format!(
                "{} per-class training counts given for {} classes",
                c.len(),
                groups.len()
            )));
        }
    }
    if let SplitRule::Ratio(r) = spec.rule {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Config(format!("training ratio must lie in [0, 1], got {r}")));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&class, members) in &groups {
        let available = members.len();
        let requested = match &spec.rule {
            SplitRule::PerClass(n) => *n,
            SplitRule::Counts(c) => c[class as usize - 1],
            SplitRule::Ratio(r) => (r * available as f64).round() as usize,
        };
        if requested > available {
            return Err(Error::Unsatisfiable {
                class,
                requested,
                available,
            });
        }
        let mut order = members.clone();
        order.shuffle(&mut class_rng(spec.seed, class));
        train.extend_from_slice(&order[..requested]);
        test.extend_from_slice(&order[requested..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

impl Split {
    /// `train,<class>,<pixel> <pixel> ...` and `test,...` lines, pixels as
    /// row-major indices into the scene.
    pub fn to_manifest(&self, set: &PatchSet) -> String {
        let mut out = String::from("# subset,class,pixel indices\n");
        for (name, part) in [("train", &self.train), ("test", &self.test)] {
            let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
            for &i in part {
                groups.entry(set.sample(i).label).or_default().push(set.pixel_index(i));
            }
            for (class, pixels) in groups {
                let list: Vec<String> = pixels.iter().map(usize::to_string).collect();
                let _ = writeln!(out, "{name},{class},{}", list.join(" "));
            }
        }
        out
    }

    /// Resolves a manifest against `set`; every listed pixel must be a
    /// sample of `set` carrying the listed class.
    pub fn from_manifest(text: &str, set: &PatchSet) -> Result<Self> {
        let lookup: BTreeMap<usize, usize> = (0..set.len()).map(|i| (set.pixel_index(i), i)).collect();
        let mut split = Split {
            train: Vec::new(),
            test: Vec::new(),
        };
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |m: String| Error::Config(format!("split manifest line {}: {m}", no + 1));
            let mut fields = line.splitn(3, ',');
            let (name, class, pixels) = match (fields.next(), fields.next(), fields.next()) {
                (Some(n), Some(c), Some(p)) => (n, c, p),
                _ => return Err(fail(format!("expected `subset,class,pixels`, got `{line}`"))),
            };
            let class: u16 = class.trim().parse().map_err(|_| fail(format!("bad class `{class}`")))?;
            let target = match name.trim() {
                "train" => &mut split.train,
                "test" => &mut split.test,
                other => return Err(fail(format!("unknown subset `{other}`"))),
            };
            for p in pixels.split_whitespace() {
                let pixel: usize = p.parse().map_err(|_| fail(format!("bad pixel index `{p}`")))?;
                let &i = lookup
                    .get(&pixel)
                    .ok_or_else(|| fail(format!("pixel {pixel} is not a labeled sample")))?;
                if set.sample(i).label != class {
                    return Err(fail(format!("pixel {pixel} has class {}, manifest says {class}", set.sample(i).label)));
                }
                target.push(i);
            }
        }
        split.train.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cube::{LabelRaster, SpectralCube};
    use proptest::prelude::*;

    fn set_with_counts(counts: &[usize]) -> PatchSet {
        let total: usize = counts.iter().sum::<usize>() + 3;
        let cols = 40;
        let rows = total.div_ceil(cols).max(3);
        let mut labels = vec![0u16; rows * cols];
        let mut i = 3;
        for (k, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                labels[i] = k as u16 + 1;
                i += 1;
            }
        }
        let cube = SpectralCube::new(2, rows, cols, vec![0.5; 2 * rows * cols]).unwrap();
        PatchSet::labeled(&cube, &LabelRaster::new(rows, cols, labels).unwrap(), 3).unwrap()
    }

    fn class_count(set: &PatchSet, idx: &[usize], class: u16) -> usize {
        idx.iter().filter(|&&i| set.sample(i).label == class).count()
    }

    #[test]
    fn fifty_per_class() {
        let set = set_with_counts(&[60, 1434]);
        let s = split(&set, &SplitSpec { rule: SplitRule::PerClass(50), seed: 1 }).unwrap();
        assert_eq!(class_count(&set, &s.train, 2), 50);
        assert_eq!(class_count(&set, &s.test, 2), 1384);
    }

    #[test]
    fn full_ratio_leaves_no_test() {
        let set = set_with_counts(&[7, 9]);
        let s = split(&set, &SplitSpec { rule: SplitRule::Ratio(1.0), seed: 0 }).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len(), 16);
    }

    #[test]
    fn unsatisfiable_count() {
        let set = set_with_counts(&[7, 3]);
        let err = split(&set, &SplitSpec { rule: SplitRule::PerClass(5), seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable { class: 2, requested: 5, available: 3 }));
        let err = split(&set, &SplitSpec { rule: SplitRule::Counts(vec![1]), seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn manifest_round_trip() {
        let set = set_with_counts(&[10, 12, 5]);
        let s = split(&set, &SplitSpec { rule: SplitRule::Counts(vec![3, 4, 5]), seed: 8 }).unwrap();
        let text = s.to_manifest(&set);
        assert!(text.lines().any(|l| l.starts_with("train,3,")));
        assert_eq!(Split::from_manifest(&text, &set).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partition_is_exact_and_deterministic(counts in prop::collection::vec(1usize..30, 2..5), seed in any::<u64>(), n in 0usize..2) {
            let set = set_with_counts(&counts);
            let spec = SplitSpec { rule: SplitRule::PerClass(n), seed };
            let s = split(&set, &spec).unwrap();
            prop_assert_eq!(&s, &split(&set, &spec).unwrap());
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..set.len()).collect::<Vec<_>>());
            for k in 0..counts.len() {
                prop_assert_eq!(class_count(&set, &s.train, k as u16 + 1), n);
            }
        }
    }
}
