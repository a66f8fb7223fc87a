//! Search over the 2401-point metric space.
//!
//! NSGA-II works on a real-relaxed genome: four genes in `[0, 1)` that decode
//! by `floor(gene · 7)` to the categorical `(α, β, F1, F2)`. Fitness is the
//! divergence alone, so non-dominated sorting reduces to ranking by `l_div`.
//! Fitness is memoized per decoded config and repeats never consume budget;
//! offspring that repeat an already evaluated config are redrawn.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{CoeffId, MetricConfig, MetricKind, TransformId, SPACE_SIZE};
use crate::objective::{evaluate_config, EvalContext};

/// Upper clip for genes so that decoding never reaches index 7.
pub const GENE_MAX: f64 = 1.0 - 1e-9;

const CHOICES: f64 = 7.0;

/// Offspring draws per population slot before repeats are let through.
const MAX_OFFSPRING_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Genome(pub [f64; 4]);

impl Genome {
    pub fn random(rng: &mut impl Rng) -> Self {
        Genome(std::array::from_fn(|_| rng.random::<f64>()))
    }
}

fn gene_index(gene: f64) -> Result<u8> {
    if !(0.0..1.0).contains(&gene) {
        return Err(Error::GeneOutOfRange(gene));
    }
    Ok(((gene * CHOICES).floor() as u8).min(6))
}

pub fn decode(g: &Genome) -> Result<MetricConfig> {
    let [a, b, f1, f2] = g.0;
    Ok(MetricConfig {
        alpha: CoeffId::from_code(gene_index(a)?).expect("index < 7"),
        beta: CoeffId::from_code(gene_index(b)?).expect("index < 7"),
        f1: TransformId::from_code(gene_index(f1)?).expect("index < 7"),
        f2: TransformId::from_code(gene_index(f2)?).expect("index < 7"),
    })
}

fn clip(x: f64) -> f64 {
    x.clamp(0.0, GENE_MAX)
}

/// SBX spread factor for a uniform draw `u`.
pub fn sbx_beta(u: f64, eta_c: f64) -> f64 {
    let exp = 1.0 / (eta_c + 1.0);
    if u <= 0.5 {
        (2.0 * u).powf(exp)
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(exp)
    }
}

/// Unclipped SBX children of one gene pair.
pub fn sbx_children(p1: f64, p2: f64, beta: f64) -> (f64, f64) {
    (
        0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2),
        0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2),
    )
}

pub fn sbx_crossover(p1: &Genome, p2: &Genome, eta_c: f64, rng: &mut impl Rng) -> (Genome, Genome) {
    let mut c1 = [0.0; 4];
    let mut c2 = [0.0; 4];
    for k in 0..4 {
        let beta = sbx_beta(rng.random::<f64>(), eta_c);
        let (a, b) = sbx_children(p1.0[k], p2.0[k], beta);
        c1[k] = clip(a);
        c2[k] = clip(b);
    }
    (Genome(c1), Genome(c2))
}

/// Polynomial-mutation perturbation for a uniform draw `u`.
pub fn mutation_delta(u: f64, eta_m: f64) -> f64 {
    let exp = 1.0 / (eta_m + 1.0);
    if u < 0.5 {
        (2.0 * u).powf(exp) - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).powf(exp)
    }
}

pub fn polynomial_mutation(g: &Genome, eta_m: f64, p_mutation: f64, rng: &mut impl Rng) -> Genome {
    let mut out = g.0;
    for gene in out.iter_mut() {
        if rng.random::<f64>() < p_mutation {
            *gene = clip(*gene + mutation_delta(rng.random::<f64>(), eta_m));
        }
    }
    Genome(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub population: usize,
    pub budget: usize,
    pub eta_c: f64,
    pub eta_m: f64,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub seed: u64,
    /// Generations without improvement before stopping.
    pub patience: usize,
    /// Worker threads for fitness evaluation; results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            population: 24,
            budget: 350,
            eta_c: 15.0,
            eta_m: 20.0,
            p_crossover: 0.9,
            p_mutation: 0.25,
            seed: 0,
            patience: 5,
            jobs: 1,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Search(m));
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return fail(format!("population {} must be even and at least 2", self.population));
        }
        if self.population > SPACE_SIZE {
            return fail(format!("population {} exceeds the {SPACE_SIZE}-config space", self.population));
        }
        if self.budget < self.population {
            return fail(format!("budget {} below population {}", self.budget, self.population));
        }
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return fail("distribution indices must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.p_crossover) || !(0.0..=1.0).contains(&self.p_mutation) {
            return fail("probabilities must lie in [0, 1]".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub generation: usize,
    pub config: MetricConfig,
    pub l_div: f64,
    /// Served from the memo; did not consume budget.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub algorithm: String,
    pub seed: u64,
    pub budget: usize,
    pub trials: Vec<Trial>,
    pub best_config: MetricConfig,
    pub best_l_div: f64,
    pub evaluations_used: usize,
    pub distinct_configs_evaluated: usize,
    /// Best `l_div` in the population after each generation (NSGA-II only).
    pub generation_best: Vec<f64>,
}

impl SearchResult {
    /// Running minimum of `l_div` over the trial log.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trials
            .iter()
            .scan(f64::INFINITY, |best, t| {
                *best = best.min(t.l_div);
                Some(*best)
            })
            .collect()
    }
}

/// Evaluates `configs` on up to `jobs` threads; output is in input order.
pub fn evaluate_many(ctx: &EvalContext, configs: &[MetricConfig], jobs: usize) -> Result<Vec<f64>> {
    let jobs = jobs.max(1).min(configs.len().max(1));
    let eval = |c: &MetricConfig| evaluate_config(ctx, &MetricKind::Meta(*c)).map(|f| f.l_div);
    if jobs == 1 {
        return configs.iter().map(eval).collect();
    }
    let chunk = configs.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(eval).collect::<Result<Vec<f64>>>()))
            .collect();
        let mut out = Vec::with_capacity(configs.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Memoizing, budget-accounting front end to the evaluation context.
struct Ledger<'a> {
    ctx: &'a EvalContext,
    jobs: usize,
    budget: usize,
    memo: HashMap<MetricConfig, f64>,
    trials: Vec<Trial>,
    used: usize,
}

impl<'a> Ledger<'a> {
    fn new(ctx: &'a EvalContext, budget: usize, jobs: usize) -> Self {
        Ledger {
            ctx,
            jobs,
            budget,
            memo: HashMap::new(),
            trials: Vec::new(),
            used: 0,
        }
    }

    fn remaining(&self) -> usize {
        self.budget - self.used
    }

    /// Fitness for each config, or `None` where a fresh evaluation would
    /// exceed the budget. Trials are logged in input order.
    fn evaluate(&mut self, configs: &[MetricConfig], generation: usize) -> Result<Vec<Option<f64>>> {
        let mut fresh = Vec::new();
        let mut fresh_set = HashSet::new();
        let mut admitted = Vec::with_capacity(configs.len());
        for c in configs {
            let ok = if self.memo.contains_key(c) || fresh_set.contains(c) {
                true
            } else if fresh.len() < self.remaining() {
                fresh_set.insert(*c);
                fresh.push(*c);
                true
            } else {
                false
            };
            admitted.push(ok);
        }
        let values = evaluate_many(self.ctx, &fresh, self.jobs)?;
        self.used += fresh.len();
        for (c, v) in fresh.iter().zip(values) {
            self.memo.insert(*c, v);
        }
        let mut first_seen = fresh_set;
        let mut out = Vec::with_capacity(configs.len());
        for (c, ok) in configs.iter().zip(admitted) {
            if !ok {
                out.push(None);
                continue;
            }
            let l_div = self.memo[c];
            let cached = !first_seen.remove(c);
            self.trials.push(Trial {
                index: self.trials.len(),
                generation,
                config: *c,
                l_div,
                cached,
            });
            out.push(Some(l_div));
        }
        Ok(out)
    }

    fn finish(self, algorithm: &str, seed: u64, generation_best: Vec<f64>) -> Result<SearchResult> {
        let best = self
            .trials
            .iter()
            .min_by(|a, b| a.l_div.total_cmp(&b.l_div).then(a.index.cmp(&b.index)))
            .ok_or_else(|| Error::Search("no trials evaluated".into()))?;
        Ok(SearchResult {
            algorithm: algorithm.to_string(),
            seed,
            budget: self.budget,
            best_config: best.config,
            best_l_div: best.l_div,
            evaluations_used: self.used,
            distinct_configs_evaluated: self.memo.len(),
            trials: self.trials,
            generation_best,
        })
    }
}

/// Pareto fronts of minimization objectives, best front first.
pub fn non_dominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let dominates = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
    };
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in 0..n {
            if dominates(&objectives[p], &objectives[q]) {
                dominated_by[p].push(q);
            } else if dominates(&objectives[q], &objectives[p]) {
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&p| domination_count[p] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
pub fn crowding_distance(objectives: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let mut dist = vec![0.0; front.len()];
    if front.len() <= 2 {
        dist.fill(f64::INFINITY);
        return dist;
    }
    let n_obj = objectives[front[0]].len();
    for k in 0..n_obj {
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| objectives[front[a]][k].total_cmp(&objectives[front[b]][k]));
        let lo = objectives[front[order[0]]][k];
        let hi = objectives[front[*order.last().expect("non-empty")]][k];
        dist[order[0]] = f64::INFINITY;
        dist[*order.last().expect("non-empty")] = f64::INFINITY;
        if hi > lo {
            for w in 1..order.len() - 1 {
                let gap = objectives[front[order[w + 1]]][k] - objectives[front[order[w - 1]]][k];
                dist[order[w]] += gap / (hi - lo);
            }
        }
    }
    dist
}

/// Rank (front number) and crowding distance for every individual.
pub fn rank_and_crowding(objectives: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0; objectives.len()];
    let mut crowd = vec![0.0; objectives.len()];
    for (r, front) in non_dominated_sort(objectives).iter().enumerate() {
        for (&i, d) in front.iter().zip(crowding_distance(objectives, front)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (rank, crowd)
}

/// Elitist environmental selection: whole fronts first, then the last front
/// by descending crowding distance.
pub fn select_survivors(objectives: &[Vec<f64>], n: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    for front in non_dominated_sort(objectives) {
        if chosen.len() + front.len() <= n {
            chosen.extend(&front);
            continue;
        }
        let dist = crowding_distance(objectives, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(front[a].cmp(&front[b])));
        chosen.extend(order.iter().take(n - chosen.len()).map(|&k| front[k]));
        break;
    }
    chosen
}

fn tournament(rank: &[usize], crowd: &[f64], rng: &mut impl Rng) -> usize {
    let a = rng.random_range(0..rank.len());
    let b = rng.random_range(0..rank.len());
    if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
        b
    } else {
        a
    }
}

struct Individual {
    genome: Genome,
    config: MetricConfig,
    l_div: f64,
}

fn objectives(pop: &[Individual]) -> Vec<Vec<f64>> {
    pop.iter().map(|ind| vec![ind.l_div]).collect()
}

pub fn nsga2_search(ctx: &EvalContext, params: &SearchParams) -> Result<SearchResult> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ledger = Ledger::new(ctx, params.budget, params.jobs);

    // distinct initial configs, so generation 0 costs exactly `population`
    let mut seen = HashSet::new();
    let mut genomes = Vec::with_capacity(params.population);
    while genomes.len() < params.population {
        let g = Genome::random(&mut rng);
        if seen.insert(decode(&g)?) {
            genomes.push(g);
        }
    }
    let configs: Vec<MetricConfig> = genomes.iter().map(decode).collect::<Result<_>>()?;
    let fitness = ledger.evaluate(&configs, 0)?;
    let mut pop: Vec<Individual> = genomes
        .into_iter()
        .zip(configs)
        .zip(fitness)
        .map(|((genome, config), l_div)| Individual {
            genome,
            config,
            l_div: l_div.expect("budget covers the initial population"),
        })
        .collect();

    let pop_best = |pop: &[Individual]| pop.iter().map(|i| i.l_div).fold(f64::INFINITY, f64::min);
    let mut best = pop_best(&pop);
    let mut generation_best = vec![best];
    let mut stale = 0;
    let mut generation = 0;

    while ledger.remaining() > 0 && stale < params.patience {
        generation += 1;
        let (rank, crowd) = rank_and_crowding(&objectives(&pop));
        let mut taken: HashSet<MetricConfig> = ledger.memo.keys().copied().collect();
        let mut children = Vec::with_capacity(params.population);
        let mut child_configs = Vec::with_capacity(params.population);
        let mut attempts = 0;
        while children.len() < params.population {
            let p1 = &pop[tournament(&rank, &crowd, &mut rng)].genome;
            let p2 = &pop[tournament(&rank, &crowd, &mut rng)].genome;
            let (c1, c2) = if rng.random::<f64>() < params.p_crossover {
                sbx_crossover(p1, p2, params.eta_c, &mut rng)
            } else {
                (*p1, *p2)
            };
            for c in [c1, c2] {
                let child = polynomial_mutation(&c, params.eta_m, params.p_mutation, &mut rng);
                let config = decode(&child)?;
                // children repeating any evaluated config or a sibling are
                // redrawn, up to a bounded number of attempts
                attempts += 1;
                let fresh = taken.insert(config);
                if (fresh || attempts > MAX_OFFSPRING_ATTEMPTS * params.population)
                    && children.len() < params.population
                {
                    children.push(child);
                    child_configs.push(config);
                }
            }
        }
        let child_fitness = ledger.evaluate(&child_configs, generation)?;

        // (μ+λ) pool without repeated configs
        let mut in_pool: HashSet<MetricConfig> = pop.iter().map(|i| i.config).collect();
        let mut pool = pop;
        for ((genome, config), l_div) in children.into_iter().zip(child_configs).zip(child_fitness) {
            if let Some(l_div) = l_div {
                if in_pool.insert(config) {
                    pool.push(Individual { genome, config, l_div });
                }
            }
        }
        let survivors = select_survivors(&objectives(&pool), params.population);
        let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
        pop = survivors
            .into_iter()
            .map(|i| slots[i].take().expect("survivor chosen once"))
            .collect();

        let gen_best = pop_best(&pop);
        generation_best.push(gen_best);
        if gen_best < best {
            best = gen_best;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    ledger.finish("nsga2", params.seed, generation_best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSearchParams {
    pub budget: usize,
    pub seed: u64,
    /// Visit each config at most once.
    pub without_replacement: bool,
    pub jobs: usize,
}

/// Uniform sampling of configs with the same memo and budget rules as NSGA-II.
pub fn random_search(ctx: &EvalContext, params: &RandomSearchParams) -> Result<SearchResult> {
    if params.budget == 0 {
        return Err(Error::Search("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ledger = Ledger::new(ctx, params.budget, params.jobs);
    let target = params.budget.min(SPACE_SIZE);
    if params.without_replacement {
        let mut order: Vec<usize> = (0..SPACE_SIZE).collect();
        order.shuffle(&mut rng);
        let configs: Vec<MetricConfig> = order[..target]
            .iter()
            .map(|&i| MetricConfig::from_index(i).expect("in range"))
            .collect();
        ledger.evaluate(&configs, 0)?;
    } else {
        while ledger.used < target {
            let draws: Vec<MetricConfig> = (0..target - ledger.used)
                .map(|_| MetricConfig::from_index(rng.random_range(0..SPACE_SIZE)).expect("in range"))
                .collect();
            ledger.evaluate(&draws, 0)?;
        }
    }
    ledger.finish("random", params.seed, Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub config: MetricConfig,
    pub l_div: f64,
}

/// Every config evaluated once, sorted ascending by `l_div` (ties by index).
pub fn exhaustive_search(ctx: &EvalContext, jobs: usize) -> Result<Vec<TableRow>> {
    let configs: Vec<MetricConfig> = MetricConfig::all().collect();
    let values = evaluate_many(ctx, &configs, jobs)?;
    let mut table: Vec<TableRow> = configs
        .into_iter()
        .zip(values)
        .map(|(config, l_div)| TableRow { config, l_div })
        .collect();
    table.sort_by(|a, b| a.l_div.total_cmp(&b.l_div).then(a.config.index().cmp(&b.config.index())));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::objective::synthetic_calibration;
    use crate::prune::SparsitySpec;
    use proptest::prelude::*;

    fn small_ctx() -> EvalContext {
        let cfg = ModelConfig {
            vocab_size: 32,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 8,
        };
        EvalContext::new(
            init_model(cfg, 3).unwrap(),
            synthetic_calibration(32, 2, 8, 1),
            SparsitySpec::unstructured(0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn decode_examples() {
        let zero = decode(&Genome([0.0; 4])).unwrap();
        assert_eq!(zero.index(), 0);
        let top = decode(&Genome([0.999, 0.999, 0.999, GENE_MAX])).unwrap();
        assert_eq!(top.index(), SPACE_SIZE - 1);
        let mid = decode(&Genome([0.5; 4])).unwrap();
        assert_eq!(mid.alpha.code(), 3);
        assert_eq!(mid.f2.code(), 3);
        assert!(matches!(decode(&Genome([1.0, 0.0, 0.0, 0.0])), Err(Error::GeneOutOfRange(_))));
        assert!(decode(&Genome([0.0, -0.1, 0.0, 0.0])).is_err());
    }

    #[test]
    fn sbx_closed_forms() {
        assert_eq!(sbx_beta(0.5, 15.0), 1.0);
        let (a, b) = sbx_children(0.2, 0.7, 1.0);
        assert_eq!((a, b), (0.2, 0.7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Genome([0.3, 0.1, 0.9, 0.5]);
        let (c1, c2) = sbx_crossover(&p, &p, 15.0, &mut rng);
        assert_eq!(c1, p);
        assert_eq!(c2, p);
    }

    #[test]
    fn mutation_closed_forms() {
        assert_eq!(mutation_delta(0.5, 20.0), 0.0);
        assert!(mutation_delta(0.0, 20.0) == -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Genome([0.3, 0.1, 0.9, 0.5]);
        assert_eq!(polynomial_mutation(&g, 20.0, 0.0, &mut rng), g);
    }

    proptest! {
        #[test]
        fn sbx_preserves_gene_sums(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, u in 0.0f64..1.0, eta in 0.0f64..30.0) {
            let (a, b) = sbx_children(p1, p2, sbx_beta(u, eta));
            prop_assert!((a + b - (p1 + p2)).abs() < 1e-12);
        }

        #[test]
        fn variation_keeps_genes_in_range(seed in any::<u64>(), eta in 0.0f64..30.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = Genome::random(&mut rng);
            let p2 = Genome::random(&mut rng);
            let (c1, c2) = sbx_crossover(&p1, &p2, eta, &mut rng);
            let m = polynomial_mutation(&c1, eta, 1.0, &mut rng);
            for g in c1.0.iter().chain(&c2.0).chain(&m.0) {
                prop_assert!((0.0..1.0).contains(g));
            }
            prop_assert!(decode(&m).is_ok());
        }

        #[test]
        fn survivor_selection_is_a_sort(values in prop::collection::vec(0.0f64..100.0, 4..40), frac in 0.1f64..1.0) {
            let objs: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
            let n = ((values.len() as f64 * frac) as usize).max(1);
            let mut chosen = select_survivors(&objs, n);
            let mut sorted: Vec<usize> = (0..values.len()).collect();
            sorted.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            // the n-th and (n+1)-th values differ almost surely for continuous draws
            if n < values.len() && values[sorted[n - 1]] == values[sorted[n]] {
                return Ok(());
            }
            let mut expect = sorted[..n].to_vec();
            chosen.sort_unstable();
            expect.sort_unstable();
            prop_assert_eq!(chosen, expect);
        }
    }

    #[test]
    fn fronts_of_two_objectives() {
        let objs = vec![vec![1.0, 4.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![4.0, 1.0], vec![5.0, 5.0]];
        let fronts = non_dominated_sort(&objs);
        assert_eq!(fronts, vec![vec![0, 1, 3], vec![2], vec![4]]);
        let d = crowding_distance(&objs, &fronts[0]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        let ok = SearchParams::default();
        assert!(ok.validate().is_ok());
        assert!(SearchParams { population: 23, ..ok.clone() }.validate().is_err());
        assert!(SearchParams { budget: 10, ..ok.clone() }.validate().is_err());
        assert!(SearchParams { p_mutation: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn one_generation_when_budget_equals_population() {
        let ctx = small_ctx();
        let params = SearchParams {
            budget: 24,
            seed: 9,
            ..SearchParams::default()
        };
        let r = nsga2_search(&ctx, &params).unwrap();
        assert_eq!(r.trials.len(), 24);
        assert_eq!(r.evaluations_used, 24);
        assert_eq!(r.generation_best.len(), 1);
        assert_eq!(ctx.evaluations(), 24);
    }

    #[test]
    fn nsga2_is_deterministic_and_sound() {
        let ctx = small_ctx();
        let params = SearchParams {
            budget: 120,
            seed: 4,
            ..SearchParams::default()
        };
        let a = nsga2_search(&ctx, &params).unwrap();
        let b = nsga2_search(&ctx, &SearchParams { jobs: 3, ..params }).unwrap();
        assert_eq!(a, b);
        assert!(a.evaluations_used <= 120);
        assert_eq!(a.evaluations_used, a.distinct_configs_evaluated);
        assert_eq!(a.trials.iter().filter(|t| !t.cached).count(), a.evaluations_used);
        let mut seen: HashMap<MetricConfig, u64> = HashMap::new();
        for t in &a.trials {
            let bits = *seen.entry(t.config).or_insert(t.l_div.to_bits());
            assert_eq!(bits, t.l_div.to_bits());
        }
        assert!(a.generation_best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.best_l_div, a.trials.iter().map(|t| t.l_div).fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn random_search_accounting() {
        let ctx = small_ctx();
        let params = RandomSearchParams {
            budget: 60,
            seed: 2,
            without_replacement: false,
            jobs: 1,
        };
        let a = random_search(&ctx, &params).unwrap();
        assert_eq!(a, random_search(&ctx, &params).unwrap());
        assert_eq!(a.evaluations_used, 60);
        assert_eq!(a.distinct_configs_evaluated, 60);
        assert!(a.best_so_far().windows(2).all(|w| w[1] <= w[0]));
        let wo = random_search(&ctx, &RandomSearchParams { without_replacement: true, ..params }).unwrap();
        assert_eq!(wo.trials.len(), 60);
        assert!(wo.trials.iter().all(|t| !t.cached));
        assert!(random_search(&ctx, &RandomSearchParams { budget: 0, ..params }).is_err());
    }
}
