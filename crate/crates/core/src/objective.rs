//! Calibration data, per-feature activation statistics and the global
//! divergence fitness between a dense and a pruned model.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::MetricKind;
use crate::model::{check_tokens, final_hidden_batch, forward, ModelWeights, SubModuleId};
use crate::prune::{prune_model, SparsitySpec};
use crate::tensor::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationSet {
    pub sequences: Vec<Vec<u32>>,
}

impl CalibrationSet {
    pub fn new(sequences: Vec<Vec<u32>>) -> Self {
        CalibrationSet { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Non-empty, and every sequence fits the model.
    pub fn validate_for(&self, weights: &ModelWeights) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::EmptySequence(i));
            }
            check_tokens(&weights.config, seq)?;
        }
        Ok(())
    }
}

/// Uniformly random token ids from a seeded generator.
pub fn synthetic_calibration(vocab_size: usize, n_seqs: usize, len: usize, seed: u64) -> CalibrationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..n_seqs)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab_size as u32)).collect())
        .collect();
    CalibrationSet { sequences }
}

/// Statistics of one sub-module's input features over the calibration tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubModuleStats {
    /// `‖X_j‖₂`
    pub v: Vector,
    /// `Σ_t |X_tj|`
    pub l1: Vector,
    pub token_count: usize,
}

impl SubModuleStats {
    pub fn features(&self) -> usize {
        self.v.len()
    }
}

/// Running per-feature sums for one sub-module.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    sum_sq: Vec<f64>,
    abs_sum: Vec<f64>,
    tokens: usize,
}

impl StatsAccumulator {
    pub fn new(features: usize) -> Self {
        StatsAccumulator {
            sum_sq: vec![0.0; features],
            abs_sum: vec![0.0; features],
            tokens: 0,
        }
    }

    /// Adds a `tokens × features` input block.
    pub fn add_block(&mut self, block: &Matrix) -> Result<()> {
        if block.cols() != self.sum_sq.len() {
            return Err(Error::Shape(format!(
                "block has {} features, accumulator {}",
                block.cols(),
                self.sum_sq.len()
            )));
        }
        for row in block.row_iter() {
            for ((sq, ab), &x) in self.sum_sq.iter_mut().zip(self.abs_sum.iter_mut()).zip(row) {
                *sq += x * x;
                *ab += x.abs();
            }
        }
        self.tokens += block.rows();
        Ok(())
    }

    pub fn finish(self) -> Result<SubModuleStats> {
        Ok(SubModuleStats {
            v: Vector::new(self.sum_sq.iter().map(|s| s.sqrt()).collect())?,
            l1: Vector::new(self.abs_sum)?,
            token_count: self.tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationStats {
    pub modules: BTreeMap<SubModuleId, SubModuleStats>,
}

impl ActivationStats {
    pub fn get(&self, id: SubModuleId) -> Option<&SubModuleStats> {
        self.modules.get(&id)
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Checks that stats cover exactly the model's sub-modules with matching widths.
    pub fn validate_for(&self, weights: &ModelWeights) -> Result<()> {
        for (id, w) in weights.submodules() {
            let s = self.get(id).ok_or_else(|| Error::MissingStats(id.to_string()))?;
            if s.v.len() != w.cols() || s.l1.len() != w.cols() {
                return Err(Error::Shape(format!(
                    "{id}: stats width {} vs {} inputs",
                    s.v.len(),
                    w.cols()
                )));
            }
        }
        if self.len() != 7 * weights.config.n_layers {
            return Err(Error::Format(format!(
                "stats cover {} sub-modules, model has {}",
                self.len(),
                7 * weights.config.n_layers
            )));
        }
        Ok(())
    }
}

/// Runs every calibration sequence with capture and accumulates input
/// statistics over all tokens of all sequences.
pub fn collect_activation_stats(weights: &ModelWeights, calib: &CalibrationSet) -> Result<ActivationStats> {
    calib.validate_for(weights)?;
    let mut acc: BTreeMap<SubModuleId, StatsAccumulator> = weights
        .submodules()
        .map(|(id, w)| (id, StatsAccumulator::new(w.cols())))
        .collect();
    for seq in &calib.sequences {
        let trace = forward(weights, seq, true)?;
        for (id, block) in trace.captured_inputs.expect("capture requested") {
            acc.get_mut(&id).expect("known sub-module").add_block(&block)?;
        }
    }
    let modules = acc
        .into_iter()
        .map(|(id, a)| Ok((id, a.finish()?)))
        .collect::<Result<_>>()?;
    Ok(ActivationStats { modules })
}

/// Mean over sequences of the per-token mean squared L2 distance.
///
/// Per-sequence terms are summed in ascending order, which makes the result
/// independent of sequence order bit for bit.
pub fn divergence_between(dense: &[Matrix], pruned: &[Matrix]) -> Result<f64> {
    if dense.len() != pruned.len() {
        return Err(Error::CacheMismatch(format!(
            "{} cached sequences vs {} evaluated",
            dense.len(),
            pruned.len()
        )));
    }
    if dense.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut per_seq = Vec::with_capacity(dense.len());
    for (i, (d, p)) in dense.iter().zip(pruned).enumerate() {
        if d.shape() != p.shape() {
            return Err(Error::CacheMismatch(format!(
                "sequence {i}: cached {:?} vs {:?}",
                d.shape(),
                p.shape()
            )));
        }
        let sq = d
            .data()
            .iter()
            .zip(p.data())
            .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
        per_seq.push(sq / d.rows() as f64);
    }
    per_seq.sort_by(f64::total_cmp);
    Ok(per_seq.iter().sum::<f64>() / per_seq.len() as f64)
}

pub fn divergence(dense_hidden: &[Matrix], pruned: &ModelWeights, calib: &CalibrationSet) -> Result<f64> {
    if dense_hidden.len() != calib.len() {
        return Err(Error::CacheMismatch(format!(
            "{} cached sequences for a calibration set of {}",
            dense_hidden.len(),
            calib.len()
        )));
    }
    let pruned_hidden = final_hidden_batch(pruned, calib)?;
    divergence_between(dense_hidden, &pruned_hidden)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub kind: MetricKind,
    pub l_div: f64,
    pub wall_time: Duration,
}

/// Everything a metric evaluation needs, built once per run.
#[derive(Debug)]
pub struct EvalContext {
    weights: ModelWeights,
    stats: ActivationStats,
    dense_hidden: Vec<Matrix>,
    calib: CalibrationSet,
    spec: SparsitySpec,
    evaluations: AtomicUsize,
}

impl EvalContext {
    /// Collects stats and caches dense hidden states.
    pub fn new(weights: ModelWeights, calib: CalibrationSet, spec: SparsitySpec) -> Result<Self> {
        let stats = collect_activation_stats(&weights, &calib)?;
        Self::with_stats(weights, stats, calib, spec)
    }

    pub fn with_stats(
        weights: ModelWeights,
        stats: ActivationStats,
        calib: CalibrationSet,
        spec: SparsitySpec,
    ) -> Result<Self> {
        spec.validate()?;
        calib.validate_for(&weights)?;
        stats.validate_for(&weights)?;
        if let SparsitySpec::SemiStructured { m, .. } = spec {
            if let Some((id, w)) = weights.submodules().find(|(_, w)| w.cols() % m != 0) {
                return Err(Error::Sparsity(format!(
                    "{id} has {} columns, not divisible by {m}",
                    w.cols()
                )));
            }
        }
        let dense_hidden = final_hidden_batch(&weights, &calib)?;
        Ok(EvalContext {
            weights,
            stats,
            dense_hidden,
            calib,
            spec,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn stats(&self) -> &ActivationStats {
        &self.stats
    }

    pub fn dense_hidden(&self) -> &[Matrix] {
        &self.dense_hidden
    }

    pub fn calib(&self) -> &CalibrationSet {
        &self.calib
    }

    pub fn spec(&self) -> &SparsitySpec {
        &self.spec
    }

    /// Number of `evaluate_config` calls made against this context.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

/// Wall clock that reads zero where `std::time` has no source (wasm32).
struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        Clock(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

/// Score, mask, prune a copy, and measure divergence against the dense cache.
pub fn evaluate_config(ctx: &EvalContext, kind: &MetricKind) -> Result<Fitness> {
    let start = Clock::start();
    ctx.evaluations.fetch_add(1, Ordering::Relaxed);
    let (pruned, _) = prune_model(&ctx.weights, &ctx.stats, kind, &ctx.spec)?;
    let l_div = divergence(&ctx.dense_hidden, &pruned, &ctx.calib)?;
    Ok(Fitness {
        kind: *kind,
        l_div,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::preset;
    use crate::model::{init_model, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 40,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 24,
            max_seq_len: 12,
        }
    }

    #[test]
    fn accumulator_hand_example() {
        let mut acc = StatsAccumulator::new(2);
        acc.add_block(&Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 0.0]]).unwrap())
            .unwrap();
        let s = acc.finish().unwrap();
        assert_eq!(s.v.data(), &[5.0, 0.0]);
        assert_eq!(s.l1.data(), &[7.0, 0.0]);
        assert_eq!(s.token_count, 2);
    }

    #[test]
    fn doubled_calibration_scales_norms_by_sqrt2() {
        let w = init_model(cfg(), 1).unwrap();
        let calib = synthetic_calibration(40, 3, 8, 9);
        let mut doubled = calib.clone();
        doubled.sequences.extend(calib.sequences.clone());
        let a = collect_activation_stats(&w, &calib).unwrap();
        let b = collect_activation_stats(&w, &doubled).unwrap();
        for (id, sa) in &a.modules {
            let sb = b.get(*id).unwrap();
            assert_eq!(sb.token_count, 2 * sa.token_count);
            for (x, y) in sa.v.data().iter().zip(sb.v.data()) {
                assert!((y - x * 2f64.sqrt()).abs() <= 1e-12 * y.max(1e-300));
            }
        }
    }

    #[test]
    fn zero_model_stats_are_finite() {
        let mut w = init_model(cfg(), 1).unwrap();
        for id in crate::model::SubModuleId::all(2) {
            *w.submodule_mut(id) = Matrix::zeros(w.submodule(id).rows(), w.submodule(id).cols());
        }
        let stats = collect_activation_stats(&w, &synthetic_calibration(40, 2, 5, 0)).unwrap();
        assert_eq!(stats.len(), 14);
        let down = stats.get(SubModuleId::new(0, crate::model::SubModule::Down)).unwrap();
        assert!(down.v.data().iter().all(|&x| x == 0.0));
        let q = stats.get(SubModuleId::new(1, crate::model::SubModule::Q)).unwrap();
        assert!(q.v.data().iter().all(|x| x.is_finite() && *x > 0.0));
    }

    #[test]
    fn divergence_hand_example() {
        let d = vec![Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()];
        let p = vec![Matrix::zeros(1, 2)];
        assert_eq!(divergence_between(&d, &p).unwrap(), 1.0);
        assert!(matches!(divergence_between(&d, &[]), Err(Error::CacheMismatch(_))));
        let wrong = vec![Matrix::zeros(2, 2)];
        assert!(divergence_between(&d, &wrong).is_err());
    }

    #[test]
    fn divergence_is_permutation_invariant() {
        let hs: Vec<Matrix> = (0..5)
            .map(|i| Matrix::new(2, 3, (0..6).map(|k| (i * 6 + k) as f64 * 0.37).collect()).unwrap())
            .collect();
        let zeros: Vec<Matrix> = (0..5).map(|_| Matrix::zeros(2, 3)).collect();
        let mut rev = hs.clone();
        rev.reverse();
        assert_eq!(
            divergence_between(&hs, &zeros).unwrap().to_bits(),
            divergence_between(&rev, &zeros).unwrap().to_bits()
        );
    }

    #[test]
    fn evaluation_basics() {
        let w = init_model(cfg(), 2).unwrap();
        let calib = synthetic_calibration(40, 3, 10, 4);
        let ctx = EvalContext::new(w.clone(), calib.clone(), SparsitySpec::unstructured(0.5).unwrap()).unwrap();
        let wanda = preset("wanda").unwrap();
        let a = evaluate_config(&ctx, &wanda).unwrap();
        let b = evaluate_config(&ctx, &wanda).unwrap();
        assert_eq!(a.l_div.to_bits(), b.l_div.to_bits());
        assert!(a.l_div > 0.0);
        assert_eq!(ctx.evaluations(), 2);
        assert_eq!(ctx.dense_hidden(), final_hidden_batch(&w, &calib).unwrap().as_slice());

        let dense = EvalContext::new(w, calib, SparsitySpec::unstructured(0.0).unwrap()).unwrap();
        for kind in [wanda, MetricKind::Magnitude, preset("ria").unwrap()] {
            assert_eq!(evaluate_config(&dense, &kind).unwrap().l_div, 0.0);
        }
    }

    #[test]
    fn context_rejects_incompatible_n_m() {
        let mut c = cfg();
        c.d_model = 18;
        c.n_heads = 3;
        let w = init_model(c, 0).unwrap();
        let err = EvalContext::new(w, synthetic_calibration(40, 1, 4, 0), SparsitySpec::n_m(2, 4).unwrap());
        assert!(matches!(err, Err(Error::Sparsity(_))));
    }
}
