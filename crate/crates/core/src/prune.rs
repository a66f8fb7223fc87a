//! Masks under unstructured and N:M constraints.
//!
//! Scores are compared within each row of the stored `output × input`
//! weight matrix, i.e. among the incoming weights of one output neuron.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{score, MetricKind};
use crate::model::{ModelWeights, SubModuleId};
use crate::objective::ActivationStats;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SparsitySpec {
    Unstructured { ratio: f64 },
    SemiStructured { n: usize, m: usize },
}

impl SparsitySpec {
    pub fn unstructured(ratio: f64) -> Result<Self> {
        let spec = SparsitySpec::Unstructured { ratio };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_m(n: usize, m: usize) -> Result<Self> {
        let spec = SparsitySpec::SemiStructured { n, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsitySpec::Unstructured { ratio } if !(0.0..=1.0).contains(&ratio) => {
                Err(Error::Sparsity(format!("ratio {ratio} outside [0, 1]")))
            }
            SparsitySpec::SemiStructured { n, m } if n == 0 || n > m => {
                Err(Error::Sparsity(format!("{n}:{m} needs 0 < n <= m")))
            }
            _ => Ok(()),
        }
    }

    /// Fraction of weights removed.
    pub fn ratio(&self) -> f64 {
        match *self {
            SparsitySpec::Unstructured { ratio } => ratio,
            SparsitySpec::SemiStructured { n, m } => 1.0 - n as f64 / m as f64,
        }
    }
}

impl FromStr for SparsitySpec {
    type Err = Error;

    /// `"0.5"` is unstructured, `"2:4"` is N:M.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, m)) = s.split_once(':') {
            let parse = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Sparsity(format!("bad N:M pattern {s:?}")))
            };
            return SparsitySpec::n_m(parse(n)?, parse(m)?);
        }
        let ratio = s
            .parse::<f64>()
            .map_err(|_| Error::Sparsity(format!("expected a ratio in [0,1] or N:M, got {s:?}")))?;
        SparsitySpec::unstructured(ratio)
    }
}

impl fmt::Display for SparsitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsitySpec::Unstructured { ratio } => write!(f, "{ratio}"),
            SparsitySpec::SemiStructured { n, m } => write!(f, "{n}:{m}"),
        }
    }
}

/// Binary keep (`true`) / drop (`false`) pattern, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} mask needs {} flags, got {}",
                rows * cols,
                bits.len()
            )));
        }
        Ok(Mask { rows, cols, bits })
    }

    pub fn filled(rows: usize, cols: usize, keep: bool) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![keep; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub type MaskSet = BTreeMap<SubModuleId, Mask>;

/// Number of weights kept per row: rounding favours keeping.
pub fn keep_count(ratio: f64, cols: usize) -> usize {
    cols - (ratio * cols as f64).floor() as usize
}

/// Marks the `keep` largest scores of `group`; equal scores go to the lower index.
fn keep_top(group: &[f64], keep: usize, out: &mut [bool]) {
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| {
        group[b]
            .partial_cmp(&group[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    for &i in &order[..keep] {
        out[i] = true;
    }
}

pub fn build_mask(scores: &Matrix, spec: &SparsitySpec) -> Result<Mask> {
    spec.validate()?;
    let (rows, cols) = scores.shape();
    let mut bits = vec![false; rows * cols];
    match *spec {
        SparsitySpec::Unstructured { ratio } => {
            let keep = keep_count(ratio, cols);
            for (row, out) in scores.row_iter().zip(bits.chunks_exact_mut(cols)) {
                keep_top(row, keep, out);
            }
        }
        SparsitySpec::SemiStructured { n, m } => {
            if cols % m != 0 {
                return Err(Error::Sparsity(format!(
                    "{cols} columns not divisible by group size {m}"
                )));
            }
            for (group, out) in scores.data().chunks_exact(m).zip(bits.chunks_exact_mut(m)) {
                keep_top(group, n, out);
            }
        }
    }
    Ok(Mask { rows, cols, bits })
}

pub fn apply_mask(w: &Matrix, mask: &Mask) -> Result<Matrix> {
    if w.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "weight {:?} vs mask {:?}",
            w.shape(),
            mask.shape()
        )));
    }
    let data = w
        .data()
        .iter()
        .zip(&mask.bits)
        .map(|(&x, &keep)| if keep { x } else { 0.0 })
        .collect();
    Matrix::new(w.rows(), w.cols(), data)
}

/// Fraction of dropped entries.
pub fn sparsity_of(mask: &Mask) -> f64 {
    let dropped = mask.bits.len() - mask.kept();
    dropped as f64 / mask.bits.len() as f64
}

/// Scores and masks every prunable sub-module independently and returns a
/// pruned copy; embeddings and norms are untouched.
pub fn prune_model(
    weights: &ModelWeights,
    stats: &ActivationStats,
    kind: &MetricKind,
    spec: &SparsitySpec,
) -> Result<(ModelWeights, MaskSet)> {
    let mut pruned = weights.clone();
    let mut masks = MaskSet::new();
    for (id, w) in weights.submodules() {
        let scores = match (kind, stats.get(id)) {
            (MetricKind::Magnitude, _) => w.abs(),
            (_, Some(sub_stats)) => score(w, sub_stats, kind)?,
            (_, None) => return Err(Error::MissingStats(id.to_string())),
        };
        let mask = build_mask(&scores, spec)?;
        *pruned.submodule_mut(id) = apply_mask(w, &mask)?;
        masks.insert(id, mask);
    }
    Ok((pruned, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn mask_rows(mask: &Mask) -> Vec<Vec<u8>> {
        (0..mask.rows())
            .map(|i| mask.row(i).iter().map(|&b| b as u8).collect())
            .collect()
    }

    #[test]
    fn unstructured_half_with_tie() {
        let mask = build_mask(&m(&[&[2.0, 2.0], &[0.0, 3.0]]), &SparsitySpec::unstructured(0.5).unwrap())
            .unwrap();
        assert_eq!(mask_rows(&mask), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn two_four_picks_largest_pair() {
        let mask = build_mask(&m(&[&[5.0, 1.0, 4.0, 2.0]]), &SparsitySpec::n_m(2, 4).unwrap()).unwrap();
        assert_eq!(mask_rows(&mask), vec![vec![1, 0, 1, 0]]);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let mask = build_mask(&m(&[&[1.0, 0.0, 3.0]]), &SparsitySpec::unstructured(0.0).unwrap()).unwrap();
        assert_eq!(mask.kept(), 3);
        let full = build_mask(&m(&[&[1.0, 0.0, 3.0]]), &SparsitySpec::unstructured(1.0).unwrap()).unwrap();
        assert_eq!(full.kept(), 0);
    }

    #[test]
    fn rounding_favours_keeping() {
        assert_eq!(keep_count(0.5, 5), 3);
        assert_eq!(keep_count(0.3, 10), 7);
        assert_eq!(keep_count(0.99, 3), 1);
    }

    #[test]
    fn build_mask_errors() {
        let s = m(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(build_mask(&s, &SparsitySpec::SemiStructured { n: 2, m: 4 }), Err(Error::Sparsity(_))));
        assert!(build_mask(&s, &SparsitySpec::Unstructured { ratio: 1.5 }).is_err());
        assert!(build_mask(&s, &SparsitySpec::Unstructured { ratio: -0.1 }).is_err());
        assert!(SparsitySpec::n_m(5, 4).is_err());
        assert!(SparsitySpec::n_m(0, 4).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let w = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let keep_all = Mask::filled(2, 2, true);
        assert_eq!(apply_mask(&w, &keep_all).unwrap(), w);
        assert_eq!(apply_mask(&w, &Mask::filled(2, 2, false)).unwrap(), Matrix::zeros(2, 2));
        let diag = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(apply_mask(&w, &diag).unwrap(), m(&[&[1.0, 0.0], &[0.0, 4.0]]));
        assert!(apply_mask(&w, &Mask::filled(1, 2, true)).is_err());
    }

    #[test]
    fn sparsity_fractions() {
        assert_eq!(sparsity_of(&Mask::filled(2, 2, true)), 0.0);
        assert_eq!(sparsity_of(&Mask::filled(2, 2, false)), 1.0);
        assert_eq!(sparsity_of(&Mask::new(2, 2, vec![true, false, false, true]).unwrap()), 0.5);
    }

    #[test]
    fn spec_grammar() {
        assert_eq!("0.5".parse::<SparsitySpec>().unwrap(), SparsitySpec::Unstructured { ratio: 0.5 });
        assert_eq!("4:8".parse::<SparsitySpec>().unwrap(), SparsitySpec::SemiStructured { n: 4, m: 8 });
        assert_eq!("2:4".parse::<SparsitySpec>().unwrap().ratio(), 0.5);
        assert!("1.2".parse::<SparsitySpec>().is_err());
        assert!("2:x".parse::<SparsitySpec>().is_err());
        assert!("half".parse::<SparsitySpec>().is_err());
        assert_eq!("2:4".parse::<SparsitySpec>().unwrap().to_string(), "2:4");
    }

    fn scores(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(0.0f64..10.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn unstructured_rows_hit_exact_sparsity(s in scores(5, 12), ratio in 0.0f64..=1.0) {
            let mask = build_mask(&s, &SparsitySpec::Unstructured { ratio }).unwrap();
            let keep = keep_count(ratio, 12);
            for i in 0..5 {
                prop_assert_eq!(mask.row(i).iter().filter(|&&b| b).count(), keep);
            }
            let expect = (ratio * 12.0).floor() / 12.0;
            prop_assert!((sparsity_of(&mask) - expect).abs() < 1e-15);
        }

        #[test]
        fn kept_entries_dominate_dropped(s in scores(3, 8)) {
            let mask = build_mask(&s, &SparsitySpec::Unstructured { ratio: 0.5 }).unwrap();
            for i in 0..3 {
                let kept_min = (0..8).filter(|&j| mask.row(i)[j]).map(|j| s.get(i, j)).fold(f64::INFINITY, f64::min);
                let dropped_max = (0..8).filter(|&j| !mask.row(i)[j]).map(|j| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(kept_min >= dropped_max);
            }
        }

        #[test]
        fn magnitude_remask_is_stable(w in prop::collection::vec(0.01f64..5.0, 32), ratio in 0.0f64..0.9) {
            let w = Matrix::new(4, 8, w).unwrap();
            let spec = SparsitySpec::Unstructured { ratio };
            let mask = build_mask(&w.abs(), &spec).unwrap();
            let pruned = apply_mask(&w, &mask).unwrap();
            let again = build_mask(&pruned.abs(), &spec).unwrap();
            prop_assert_eq!(mask, again);
        }
    }
}
