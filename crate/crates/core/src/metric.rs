//! The discrete space of pruning metrics
//!
//! ```text
//! S_ij = α(|W|)_ij · F1(|W|)_ij  ×  β(v)_j · F2(v)_j
//! ```
//!
//! where `v_j = ‖X_j‖₂` is the calibration-set L2 norm of input feature `j`.
//! Seven coefficient functions and seven transforms on each side give
//! 7⁴ = 2401 configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::SubModuleStats;
use crate::tensor::{abs_col_sums, abs_row_sums, frobenius_norm, Matrix, Vector};

/// Lower bound applied to every coefficient denominator.
pub const EPS: f64 = 1e-12;

fn inv(d: f64) -> f64 {
    1.0 / d.max(EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffId {
    Uniform,
    GlobalSum,
    Frobenius,
    GlobalMean,
    RowWise,
    ColWise,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformId {
    Identity,
    Square,
    Sqrt,
    Log1p,
    ExpNeg,
    Sigmoid,
    Softmax,
}

macro_rules! coded_enum {
    ($ty:ident, [$($variant:ident => $name:literal),* $(,)?]) => {
        impl $ty {
            pub const ALL: [$ty; 7] = [$($ty::$variant),*];

            /// Stable integer code in `0..7`.
            pub fn code(self) -> u8 {
                self as u8
            }

            pub fn from_code(code: u8) -> Option<Self> {
                Self::ALL.get(code as usize).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),*
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            /// Accepts the canonical name or the integer code.
            fn from_str(s: &str) -> Result<Self> {
                let s = s.trim();
                if let Ok(code) = s.parse::<u8>() {
                    return Self::from_code(code)
                        .ok_or_else(|| Error::UnknownMetric(format!("code {code} out of range 0..7")));
                }
                Self::ALL
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::UnknownMetric(format!("unknown {} {s:?}", stringify!($ty))))
            }
        }
    };
}

coded_enum!(CoeffId, [
    Uniform => "uniform",
    GlobalSum => "global_sum",
    Frobenius => "frobenius",
    GlobalMean => "global_mean",
    RowWise => "row_wise",
    ColWise => "col_wise",
    Relative => "relative",
]);

coded_enum!(TransformId, [
    Identity => "identity",
    Square => "square",
    Sqrt => "sqrt",
    Log1p => "log1p",
    ExpNeg => "exp_neg",
    Sigmoid => "sigmoid",
    Softmax => "softmax",
]);

impl TransformId {
    /// Elementwise part; `Softmax` is handled by the callers.
    fn apply(self, x: f64) -> f64 {
        match self {
            TransformId::Identity => x,
            TransformId::Square => x * x,
            TransformId::Sqrt => x.sqrt(),
            TransformId::Log1p => x.ln_1p(),
            TransformId::ExpNeg => (-x).exp(),
            TransformId::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            TransformId::Softmax => unreachable!("softmax is not elementwise"),
        }
    }
}

/// One point `(α, β, F1, F2)` of the metric space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetricConfig {
    pub alpha: CoeffId,
    pub beta: CoeffId,
    pub f1: TransformId,
    pub f2: TransformId,
}

pub const SPACE_SIZE: usize = 7 * 7 * 7 * 7;

impl MetricConfig {
    pub fn new(alpha: CoeffId, beta: CoeffId, f1: TransformId, f2: TransformId) -> Self {
        MetricConfig { alpha, beta, f1, f2 }
    }

    /// Mixed-radix index `α·343 + β·49 + F1·7 + F2`.
    pub fn index(self) -> usize {
        self.alpha.code() as usize * 343
            + self.beta.code() as usize * 49
            + self.f1.code() as usize * 7
            + self.f2.code() as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= SPACE_SIZE {
            return None;
        }
        let digit = |div: usize| (index / div % 7) as u8;
        Some(MetricConfig {
            alpha: CoeffId::from_code(digit(343))?,
            beta: CoeffId::from_code(digit(49))?,
            f1: TransformId::from_code(digit(7))?,
            f2: TransformId::from_code(digit(1))?,
        })
    }

    /// All 2401 configurations in index order.
    pub fn all() -> impl Iterator<Item = MetricConfig> {
        (0..SPACE_SIZE).map(|i| MetricConfig::from_index(i).expect("index in range"))
    }
}

impl fmt::Display for MetricConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.alpha, self.beta, self.f1, self.f2)
    }
}

impl FromStr for MetricConfig {
    type Err = Error;

    /// Parses `"a,b,f1,f2"` with names or integer codes.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::UnknownMetric(format!(
                "expected 4 comma-separated fields, got {s:?}"
            )));
        }
        Ok(MetricConfig {
            alpha: parts[0].parse()?,
            beta: parts[1].parse()?,
            f1: parts[2].parse()?,
            f2: parts[3].parse()?,
        })
    }
}

/// A scoring rule: a point of the meta space, or plain magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Meta(MetricConfig),
    Magnitude,
}

pub const PRESET_NAMES: [&str; 5] = [
    "magnitude",
    "wanda",
    "ria",
    "optishear-l2-gsm8k",
    "optishear-l3-gsm8k",
];

/// Named metric presets.
pub fn preset(name: &str) -> Result<MetricKind> {
    use CoeffId::*;
    use TransformId::*;
    let meta = |a, b, f1, f2| Ok(MetricKind::Meta(MetricConfig::new(a, b, f1, f2)));
    match name {
        "magnitude" => Ok(MetricKind::Magnitude),
        "wanda" => meta(Uniform, Uniform, Identity, Identity),
        "ria" => meta(Relative, Uniform, Identity, Sqrt),
        "optishear-l2-gsm8k" => meta(Frobenius, GlobalSum, Identity, Sqrt),
        "optishear-l3-gsm8k" => meta(GlobalMean, GlobalSum, Identity, Sqrt),
        _ => Err(Error::UnknownMetric(name.to_string())),
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    /// A preset name or `custom:a,b,f1,f2`.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("custom:") {
            Some(rest) => Ok(MetricKind::Meta(rest.parse()?)),
            None => preset(s),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Magnitude => f.write_str("magnitude"),
            MetricKind::Meta(c) => write!(f, "custom:{c}"),
        }
    }
}

/// Per-element coefficient `α(|W|)_ij`.
pub fn weight_coefficient(w: &Matrix, id: CoeffId) -> Matrix {
    let (m, n) = w.shape();
    let constant = |c: f64| Matrix::filled(m, n, c);
    match id {
        CoeffId::Uniform => constant(1.0),
        CoeffId::GlobalSum => constant(inv(w.abs_sum())),
        CoeffId::Frobenius => constant(inv(frobenius_norm(w))),
        CoeffId::GlobalMean => constant((m * n) as f64 * inv(w.abs_sum())),
        CoeffId::RowWise => {
            let rows = abs_row_sums(w);
            let data = (0..m).flat_map(|i| std::iter::repeat_n(inv(rows[i]), n)).collect();
            Matrix::from_raw(m, n, data)
        }
        CoeffId::ColWise => {
            let cols: Vec<f64> = abs_col_sums(w).data().iter().map(|&c| inv(c)).collect();
            Matrix::from_raw(m, n, cols.repeat(m))
        }
        CoeffId::Relative => {
            let rows = abs_row_sums(w);
            let cols = abs_col_sums(w);
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let ri = inv(rows[i]);
                data.extend(cols.data().iter().map(|&c| ri + inv(c)));
            }
            Matrix::from_raw(m, n, data)
        }
    }
}

/// Per-feature coefficient `β(v)_j`.
pub fn activation_coefficient(stats: &SubModuleStats, id: CoeffId) -> Vector {
    let v = &stats.v;
    let n = v.len();
    let constant = |c: f64| Vector::filled(n, c);
    match id {
        CoeffId::Uniform => constant(1.0),
        CoeffId::GlobalSum => constant(inv(v.sum())),
        CoeffId::Frobenius => constant(inv(v.l2_norm())),
        CoeffId::GlobalMean => constant(n as f64 * inv(v.sum())),
        CoeffId::RowWise => Vector::from_raw(stats.l1.data().iter().map(|&x| inv(x)).collect()),
        CoeffId::ColWise => constant(inv(stats.l1.sum())),
        CoeffId::Relative => {
            let global = inv(v.sum());
            Vector::from_raw(v.data().iter().map(|&x| global + inv(x)).collect())
        }
    }
}

/// `F1(|W|)`. Softmax runs over the row index within each column.
pub fn transform_weights(w: &Matrix, id: TransformId) -> Matrix {
    let a = w.abs();
    let (m, n) = a.shape();
    if id != TransformId::Softmax {
        return Matrix::from_raw(m, n, a.data().iter().map(|&x| id.apply(x)).collect());
    }
    let t = a.transpose();
    let mut data = t.into_data();
    for col in data.chunks_exact_mut(m) {
        crate::model::softmax_in_place(col);
    }
    Matrix::from_raw(n, m, data).transpose()
}

/// `F2(v)` for non-negative `v`. Softmax runs over features.
pub fn transform_activations(v: &Vector, id: TransformId) -> Vector {
    let mut data: Vec<f64> = v.data().iter().map(|x| x.abs()).collect();
    if id == TransformId::Softmax {
        crate::model::softmax_in_place(&mut data);
    } else {
        for x in data.iter_mut() {
            *x = id.apply(*x);
        }
    }
    Vector::from_raw(data)
}

/// `α(|W|) ⊙ F1(|W|)`.
pub fn weight_part(w: &Matrix, config: &MetricConfig) -> Matrix {
    weight_coefficient(w, config.alpha)
        .hadamard(&transform_weights(w, config.f1))
        .expect("same shape")
}

/// `β(v) ⊙ F2(v)`.
pub fn activation_part(stats: &SubModuleStats, config: &MetricConfig) -> Vector {
    let coeff = activation_coefficient(stats, config.beta);
    let trans = transform_activations(&stats.v, config.f2);
    Vector::from_raw(coeff.data().iter().zip(trans.data()).map(|(a, b)| a * b).collect())
}

/// Importance score of every weight in `w` (stored output × input).
pub fn score(w: &Matrix, stats: &SubModuleStats, kind: &MetricKind) -> Result<Matrix> {
    let config = match kind {
        MetricKind::Magnitude => return Ok(w.abs()),
        MetricKind::Meta(c) => c,
    };
    if stats.v.len() != w.cols() || stats.l1.len() != w.cols() {
        return Err(Error::Shape(format!(
            "stats cover {} features, weight has {} inputs",
            stats.v.len(),
            w.cols()
        )));
    }
    let wp = weight_part(w, config);
    let ap = activation_part(stats, config);
    let n = w.cols();
    let data = wp
        .data()
        .iter()
        .enumerate()
        .map(|(idx, x)| x * ap[idx % n])
        .collect();
    Matrix::new(w.rows(), n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn stats(v: &[f64]) -> SubModuleStats {
        SubModuleStats {
            v: Vector::new(v.to_vec()).unwrap(),
            l1: Vector::new(v.to_vec()).unwrap(),
            token_count: 1,
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn codes_and_names_are_stable() {
        let coeff: Vec<_> = CoeffId::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(coeff, [0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(CoeffId::from_code(2), Some(CoeffId::Frobenius));
        assert_eq!(TransformId::from_code(6), Some(TransformId::Softmax));
        assert_eq!(TransformId::from_code(7), None);
        assert_eq!(MetricConfig::all().count(), 2401);
        for (i, c) in MetricConfig::all().enumerate() {
            assert_eq!(c.index(), i);
        }
    }

    #[test]
    fn parse_configs() {
        let by_name: MetricConfig = "frobenius,global_sum,identity,sqrt".parse().unwrap();
        let by_code: MetricConfig = "2,1,0,2".parse().unwrap();
        assert_eq!(by_name, by_code);
        assert_eq!(by_name.to_string().parse::<MetricConfig>().unwrap(), by_name);
        assert!("2,1,0".parse::<MetricConfig>().is_err());
        assert!("2,1,0,9".parse::<MetricConfig>().is_err());
        assert!("bogus".parse::<MetricKind>().is_err());
        assert_eq!(
            "custom:2,1,0,2".parse::<MetricKind>().unwrap(),
            preset("optishear-l2-gsm8k").unwrap()
        );
    }

    #[test]
    fn presets() {
        use CoeffId::*;
        use TransformId::*;
        let meta = |a, b, f1, f2| MetricKind::Meta(MetricConfig::new(a, b, f1, f2));
        assert_eq!(preset("magnitude").unwrap(), MetricKind::Magnitude);
        assert_eq!(preset("wanda").unwrap(), meta(Uniform, Uniform, Identity, Identity));
        assert_eq!(preset("ria").unwrap(), meta(Relative, Uniform, Identity, Sqrt));
        assert_eq!(
            preset("optishear-l2-gsm8k").unwrap(),
            meta(Frobenius, GlobalSum, Identity, Sqrt)
        );
        assert_eq!(
            preset("optishear-l3-gsm8k").unwrap(),
            meta(GlobalMean, GlobalSum, Identity, Sqrt)
        );
        assert!(matches!(preset("sparsegpt"), Err(Error::UnknownMetric(_))));
    }

    #[test]
    fn weight_coefficients() {
        let w = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let gs = weight_coefficient(&w, CoeffId::GlobalSum);
        assert!(gs.data().iter().all(|&x| close(x, 0.1, 1e-15)));
        assert_eq!(weight_coefficient(&w, CoeffId::Uniform), Matrix::filled(2, 2, 1.0));
        let rel = weight_coefficient(&w, CoeffId::Relative);
        assert!(close(rel.get(0, 0), 1.0 / 3.0 + 1.0 / 4.0, 1e-15));
        assert!((rel.get(0, 0) - 0.583333).abs() < 1e-6);
        assert!(close(rel.get(1, 1), 1.0 / 7.0 + 1.0 / 6.0, 1e-15));
        let gm = weight_coefficient(&w, CoeffId::GlobalMean);
        assert!(close(gm.get(1, 0), 0.4, 1e-15));
        let rw = weight_coefficient(&w, CoeffId::RowWise);
        assert_eq!(rw.row(1), &[1.0 / 7.0, 1.0 / 7.0]);
        let cw = weight_coefficient(&w, CoeffId::ColWise);
        assert_eq!(cw.row(0), &[1.0 / 4.0, 1.0 / 6.0]);
    }

    #[test]
    fn activation_coefficients() {
        let s = stats(&[3.0, 4.0]);
        let fro = activation_coefficient(&s, CoeffId::Frobenius);
        assert!(fro.data().iter().all(|&x| close(x, 0.2, 1e-15)));
        let gs = activation_coefficient(&s, CoeffId::GlobalSum);
        assert!(gs.data().iter().all(|&x| close(x, 1.0 / 7.0, 1e-15)));
        assert_eq!(activation_coefficient(&s, CoeffId::Uniform).data(), &[1.0, 1.0]);
        let rel = activation_coefficient(&s, CoeffId::Relative);
        assert!(close(rel[0], 1.0 / 7.0 + 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn zero_denominators_are_guarded() {
        let w = Matrix::zeros(2, 3);
        let s = stats(&[0.0, 0.0, 0.0]);
        for c in CoeffId::ALL {
            assert!(weight_coefficient(&w, c).data().iter().all(|x| x.is_finite()));
            assert!(activation_coefficient(&s, c).data().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn transforms() {
        let v = Vector::new(vec![4.0, 9.0]).unwrap();
        assert_eq!(transform_activations(&v, TransformId::Sqrt).data(), &[2.0, 3.0]);
        let zero = Vector::new(vec![0.0]).unwrap();
        assert_eq!(transform_activations(&zero, TransformId::ExpNeg).data(), &[1.0]);
        let col = m(&[&[0.0], &[0.0]]);
        assert_eq!(transform_weights(&col, TransformId::Softmax).data(), &[0.5, 0.5]);
        let w = m(&[&[-1.0, 2.0, 0.5], &[3.0, -4.0, 0.0]]);
        let sm = transform_weights(&w, TransformId::Softmax);
        for j in 0..3 {
            assert!((sm.get(0, j) + sm.get(1, j) - 1.0).abs() < 1e-12);
        }
        let sq = transform_weights(&w, TransformId::Square);
        assert_eq!(sq.row(1), &[9.0, 16.0, 0.0]);
        let sig = transform_weights(&w, TransformId::Sigmoid);
        assert!(close(sig.get(1, 2), 0.5, 1e-15));
        let lg = transform_weights(&w, TransformId::Log1p);
        assert!(close(lg.get(0, 0), 2f64.ln(), 1e-15));
        let av = Vector::new(vec![1.0, 2.0, 3.0, 700.0]).unwrap();
        let s = transform_activations(&av, TransformId::Softmax);
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wanda_and_magnitude_scores() {
        let w = m(&[&[1.0, -2.0], &[0.0, 3.0]]);
        let s = stats(&[2.0, 1.0]);
        let wanda = score(&w, &s, &preset("wanda").unwrap()).unwrap();
        assert_eq!(wanda, m(&[&[2.0, 2.0], &[0.0, 3.0]]));
        let mag = score(&w, &s, &MetricKind::Magnitude).unwrap();
        assert_eq!(mag, m(&[&[1.0, 2.0], &[0.0, 3.0]]));
    }

    #[test]
    fn discovered_metric_on_worked_example() {
        let w = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let s = stats(&[4.0, 9.0]);
        let l2 = score(&w, &s, &preset("optishear-l2-gsm8k").unwrap()).unwrap();
        let f = 30f64.sqrt();
        let expect = [
            1.0 / f * 2.0 / 13.0,
            2.0 / f * 3.0 / 13.0,
            3.0 / f * 2.0 / 13.0,
            4.0 / f * 3.0 / 13.0,
        ];
        for (a, b) in l2.data().iter().zip(expect) {
            assert!(close(*a, b, 1e-9));
        }
        assert!((l2.get(0, 0) - 0.0280883).abs() < 1e-6);
        let l3 = score(&w, &s, &preset("optishear-l3-gsm8k").unwrap()).unwrap();
        // mn/Σ|W| = 4/10
        assert!(close(l3.get(1, 1), 0.4 * 4.0 * 3.0 / 13.0, 1e-9));
    }

    #[test]
    fn score_rejects_mismatched_stats() {
        let w = Matrix::zeros(2, 3);
        let err = score(&w, &stats(&[1.0, 2.0]), &preset("wanda").unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        // magnitude never looks at the stats
        assert!(score(&w, &stats(&[1.0]), &MetricKind::Magnitude).is_ok());
    }
}
