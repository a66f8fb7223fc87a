//! Browser bindings: a toy model held in memory, with mask exploration,
//! a small metric search against the exhaustive oracle, and alignment.

use prunemeta::analysis::alignment_discrepancy;
use prunemeta::metric::{score, MetricKind};
use prunemeta::model::ModelConfig;
use prunemeta::objective::{divergence, synthetic_calibration};
use prunemeta::prune::apply_mask;
use prunemeta::search::{exhaustive_search, random_search, RandomSearchParams, TableRow};
use prunemeta::{build_mask, init_model, nsga2_search, prune_model, EvalContext, SearchParams, SparsitySpec, SubModuleId};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const VOCAB: usize = 32;
const CALIB_SEQS: usize = 4;
const CALIB_LEN: usize = 16;

#[wasm_bindgen]
pub struct Demo {
    ctx: EvalContext,
    oracle: Option<Vec<TableRow>>,
}

impl Demo {
    pub fn build(d_model: usize, layers: usize, seed: u64, sparsity: &str) -> prunemeta::Result<Demo> {
        let config = ModelConfig {
            vocab_size: VOCAB,
            d_model,
            n_layers: layers,
            n_heads: 2,
            d_ff: 2 * d_model,
            max_seq_len: CALIB_LEN,
        };
        let weights = init_model(config, seed)?;
        let calib = synthetic_calibration(VOCAB, CALIB_SEQS, CALIB_LEN, seed.wrapping_add(1));
        let ctx = EvalContext::new(weights, calib, sparsity.parse()?)?;
        Ok(Demo { ctx, oracle: None })
    }

    /// Scores and mask of one sub-module, plus the model-level divergence
    /// of pruning everything with the same metric.
    pub fn mask_value(&self, submodule: &str, metric: &str, sparsity: &str) -> prunemeta::Result<Value> {
        let id: SubModuleId = submodule.parse()?;
        let kind: MetricKind = metric.parse()?;
        let spec: SparsitySpec = sparsity.parse()?;
        let weights = self.ctx.weights();
        if id.layer >= weights.config.n_layers {
            return Err(prunemeta::Error::Config(format!("no layer {}", id.layer)));
        }
        let w = weights.submodule(id);
        let scores = match kind {
            MetricKind::Magnitude => w.abs(),
            _ => score(w, self.ctx.stats().get(id).expect("stats cover every sub-module"), &kind)?,
        };
        let mask = build_mask(&scores, &spec)?;
        let pruned_w = apply_mask(w, &mask)?;
        let (pruned, _) = prune_model(weights, self.ctx.stats(), &kind, &spec)?;
        let l_div = divergence(self.ctx.dense_hidden(), &pruned, self.ctx.calib())?;
        Ok(json!({
            "rows": w.rows(),
            "cols": w.cols(),
            "weights": w.data(),
            "scores": scores.data(),
            "mask": mask.bits(),
            "kept_weight_l1": pruned_w.abs_sum(),
            "l_div": l_div,
        }))
    }

    fn oracle(&mut self) -> prunemeta::Result<&[TableRow]> {
        if self.oracle.is_none() {
            self.oracle = Some(exhaustive_search(&self.ctx, 1)?);
        }
        Ok(self.oracle.as_deref().expect("just filled"))
    }

    /// Runs NSGA-II or random search and returns its best-so-far curve next
    /// to the exhaustive minimum.
    pub fn search_value(&mut self, algo: &str, seed: u64, budget: usize, population: usize) -> prunemeta::Result<Value> {
        let result = match algo {
            "nsga2" => nsga2_search(
                &self.ctx,
                &SearchParams { population, budget, seed, ..Default::default() },
            )?,
            "random" => random_search(
                &self.ctx,
                &RandomSearchParams { budget, seed, without_replacement: false, jobs: 1 },
            )?,
            other => return Err(prunemeta::Error::Search(format!("unknown algorithm {other:?}"))),
        };
        let oracle = self.oracle()?[0];
        Ok(json!({
            "best_so_far": result.best_so_far(),
            "best_config": result.best_config.to_string(),
            "best_l_div": result.best_l_div,
            "evaluations_used": result.evaluations_used,
            "oracle_config": oracle.config.to_string(),
            "oracle_l_div": oracle.l_div,
        }))
    }

    pub fn alignment_value(&self, metric: &str) -> prunemeta::Result<Value> {
        let kind: MetricKind = metric.parse()?;
        let report = alignment_discrepancy(self.ctx.weights(), self.ctx.stats(), &kind)?;
        Ok(serde_json::to_value(report).expect("report serializes"))
    }
}

fn js(r: prunemeta::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(d_model: usize, layers: usize, seed: u32, sparsity: &str) -> Result<Demo, JsError> {
        Demo::build(d_model, layers, u64::from(seed), sparsity).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn mask(&self, submodule: &str, metric: &str, sparsity: &str) -> Result<String, JsError> {
        js(self.mask_value(submodule, metric, sparsity))
    }

    pub fn search(&mut self, algo: &str, seed: u32, budget: usize, population: usize) -> Result<String, JsError> {
        js(self.search_value(algo, u64::from(seed), budget, population))
    }

    pub fn alignment(&self, metric: &str) -> Result<String, JsError> {
        js(self.alignment_value(metric))
    }
}
