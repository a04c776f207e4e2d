//! Deterministic stratified train/validation/test partitioning.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slack applied before flooring `n * fraction`, so that e.g. `0.29 * 100`
/// (which is `28.999999999999996` in binary) floors to 29.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitRatios {
    train: f64,
    val: f64,
    test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let ok = [train, val, test].iter().all(|f| f.is_finite() && (0.0..=1.0).contains(f))
            && ((train + val + test) - 1.0).abs() <= 1e-9;
        if ok {
            Ok(Self { train, val, test })
        } else {
            Err(Error::InvalidRatios { train, val, test })
        }
    }

    pub fn train(&self) -> f64 {
        self.train
    }

    pub fn val(&self) -> f64 {
        self.val
    }

    pub fn test(&self) -> f64 {
        self.test
    }

    /// Per-class `(train, val, test)` sizes for a class of `n` images:
    /// floor for train and validation, the remainder to test.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        // non-negative, so truncation is floor
        let take = |frac: f64| ((n as f64) * frac + FLOOR_SLACK) as usize;
        let train = take(self.train).min(n);
        let val = take(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl TryFrom<[f64; 3]> for SplitRatios {
    type Error = Error;

    fn try_from(r: [f64; 3]) -> Result<Self> {
        Self::new(r[0], r[1], r[2])
    }
}

impl From<SplitRatios> for [f64; 3] {
    fn from(r: SplitRatios) -> Self {
        [r.train, r.val, r.test]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// The class received no test images although `test_frac > 0`.
    NoTestImages { class: usize },
}

/// Result of [`stratified_split`]. Each list is sorted by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// `(train, val, test)` sizes per class index.
    pub class_counts: Vec<(usize, usize, usize)>,
    pub warnings: Vec<SplitWarning>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `(image_id, class_index)` pairs class by class.
///
/// Within a class the ids are sorted, shuffled with a ChaCha8 stream keyed by
/// `(seed, class)` and cut into train/val/test by [`SplitRatios::allocate`].
/// The result depends only on the set of pairs, the ratios and the seed.
pub fn stratified_split<'a, I>(items: I, num_classes: usize, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let mut per_class: Vec<Vec<&'a str>> = (0..num_classes).map(|_| Vec::new()).collect();
    for (id, label) in items {
        per_class.get_mut(label).ok_or(Error::LabelOutOfRange { label, classes: num_classes })?.push(id);
    }

    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        ratios,
        seed,
        class_counts: Vec::with_capacity(num_classes),
        warnings: Vec::new(),
    };
    for (class, ids) in per_class.iter_mut().enumerate() {
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        ids.shuffle(&mut rng);

        let (n_train, n_val, n_test) = ratios.allocate(ids.len());
        let (train, rest) = ids.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        out.train.extend(train.iter().map(|s| String::from(*s)));
        out.val.extend(val.iter().map(|s| String::from(*s)));
        out.test.extend(test.iter().map(|s| String::from(*s)));
        out.class_counts.push((n_train, n_val, n_test));
        if n_test == 0 && ratios.test > 0.0 {
            out.warnings.push(SplitWarning::NoTestImages { class });
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn ids(classes: &[usize]) -> Vec<(String, usize)> {
        classes.iter().enumerate().flat_map(|(c, &n)| (0..n).map(move |i| (format!("c{c}/img{i:04}"), c))).collect()
    }

    fn split(items: &[(String, usize)], k: usize, r: SplitRatios, seed: u64) -> SplitAssignment {
        stratified_split(items.iter().map(|(s, l)| (s.as_str(), *l)), k, r, seed).unwrap()
    }

    #[test]
    fn balanced_150_per_class_gets_105_22_23() {
        let items = ids(&[150; 11]);
        let s = split(&items, 11, SplitRatios::default(), 7);
        assert!(s.class_counts.iter().all(|&c| c == (105, 22, 23)));
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1155, 242, 253));
    }

    #[test]
    fn all_train_ratio() {
        let items = ids(&[4, 6]);
        let s = split(&items, 2, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1);
        assert_eq!(s.train.len(), 10);
        assert!(s.val.is_empty() && s.test.is_empty());
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn deterministic_for_same_seed() {
        let items = ids(&[20, 30, 25]);
        let r = SplitRatios::default();
        assert_eq!(split(&items, 3, r, 42), split(&items, 3, r, 42));
        assert_ne!(split(&items, 3, r, 42).train, split(&items, 3, r, 43).train);
    }

    #[test]
    fn input_order_does_not_matter() {
        let items = ids(&[20, 30]);
        let mut rev = items.clone();
        rev.reverse();
        let r = SplitRatios::default();
        assert_eq!(split(&items, 2, r, 3), split(&rev, 2, r, 3));
    }

    #[test]
    fn warns_when_a_class_gets_no_test_images() {
        let items = ids(&[2, 40]);
        let r = SplitRatios::new(0.5, 0.3, 0.2).unwrap();
        assert_eq!(split(&items, 2, r, 0).class_counts[0], (1, 0, 1));
        assert!(split(&items, 2, r, 0).warnings.is_empty());
        // a vanishing test fraction floors everything into train/val
        let r = SplitRatios::new(0.5, 0.5 - 1e-12, 1e-12).unwrap();
        let s = split(&items, 2, r, 0);
        assert_eq!(s.class_counts[0], (1, 1, 0));
        assert_eq!(s.warnings, [SplitWarning::NoTestImages { class: 0 }, SplitWarning::NoTestImages { class: 1 }]);
    }

    #[test]
    fn floor_is_robust_to_binary_fractions() {
        let r = SplitRatios::new(0.29, 0.71, 0.0).unwrap();
        assert_eq!(r.allocate(100), (29, 71, 0));
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(SplitRatios::new(0.7, 0.2, 0.2).is_err());
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
        assert!(SplitRatios::new(f64::NAN, 0.5, 0.5).is_err());
    }

    #[test]
    fn out_of_range_label() {
        let items = [("a", 0usize), ("b", 2)];
        assert!(stratified_split(items, 2, SplitRatios::default(), 0).is_err());
    }
}
