//! Real-coded genetic algorithm over band combinations.
//!
//! A chromosome carries `k` real genes in `[0, n_bands - 1]`. Genes decode
//! to distinct integer band indices by round-half-up; an index colliding
//! with an earlier gene or an excluded (fixed RGB) band is replaced by the
//! nearest unused index, scanning outward and preferring the lower
//! neighbor at equal distance. Selection is binary tournament, crossover
//! is the Laplace operator, mutation the power operator, and the best
//! `elite_count` members survive unchanged.
//!
//! Fitness is any pure function of the decoded band set; values must be
//! finite so populations stay totally ordered. Evaluations are cached per
//! decoded set (sorted, since downstream RBF models are insensitive to
//! band order) and may run concurrently; all random draws happen in the
//! sequential breeding phase, so results are reproducible bit for bit.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;

/// Seed namespace for per-run seeds inside [`multi_run`].
const NS_RUN: u64 = 0x6A;

/// Error type fitness functions may raise.
pub type FitnessError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("excluded band {index} out of range for {n_bands} bands")]
    ExcludedOutOfRange { index: usize, n_bands: usize },
    #[error("cannot pick {k} distinct bands from {n_bands} with {excluded} excluded")]
    Infeasible { n_bands: usize, excluded: usize, k: usize },
    #[error("tournament selection over unevaluated fitness")]
    UnevaluatedFitness,
    #[error("fitness of bands {bands:?} is not finite")]
    NonFiniteFitness { bands: Vec<usize> },
    #[error("fitness evaluation failed in run {run}, generation {generation}: {source}")]
    Fitness { run: usize, generation: usize, source: FitnessError },
}

/// Search space: the band count and indices the GA must avoid (the fixed
/// RGB bands when those are prepended outside the search).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandDomain {
    n_bands: usize,
    excluded: Vec<usize>,
}

impl BandDomain {
    pub fn new(n_bands: usize, mut excluded: Vec<usize>) -> Result<Self, GaError> {
        if n_bands == 0 {
            return Err(GaError::BadConfig("n_bands must be at least 1"));
        }
        for &e in &excluded {
            if e >= n_bands {
                return Err(GaError::ExcludedOutOfRange { index: e, n_bands });
            }
        }
        excluded.sort_unstable();
        excluded.dedup();
        Ok(Self { n_bands, excluded })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    /// Bands actually available to the search.
    pub fn available(&self) -> usize {
        self.n_bands - self.excluded.len()
    }

    fn lo(&self) -> f64 {
        0.0
    }

    fn hi(&self) -> f64 {
        (self.n_bands - 1) as f64
    }
}

/// GA hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub max_generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub elite_count: usize,
    /// Independent restarts inside [`multi_run`].
    pub runs: usize,
    /// Stop when the mean absolute change of the best fitness over this
    /// many trailing generations falls below `stall_tol`.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Laplace crossover location and scale.
    pub laplace_a: f64,
    pub laplace_b: f64,
    /// Power mutation exponent.
    pub power_p: f64,
    /// Genes per chromosome (bands to select).
    pub k: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            max_generations: 100,
            crossover_prob: 0.8,
            mutation_prob: 0.2,
            elite_count: 2,
            runs: 5,
            stall_window: 50,
            stall_tol: 1e-6,
            laplace_a: 0.0,
            laplace_b: 0.5,
            power_p: 4.0,
            k: 3,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<(), GaError> {
        if self.population == 0 {
            return Err(GaError::BadConfig("population must be at least 1"));
        }
        if self.elite_count > self.population {
            return Err(GaError::BadConfig("elite_count exceeds population"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(GaError::BadConfig("crossover_prob must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(GaError::BadConfig("mutation_prob must lie in [0, 1]"));
        }
        if self.k == 0 {
            return Err(GaError::BadConfig("k must be at least 1"));
        }
        if self.runs == 0 {
            return Err(GaError::BadConfig("runs must be at least 1"));
        }
        if self.stall_window == 0 {
            return Err(GaError::BadConfig("stall_window must be at least 1"));
        }
        if !(self.stall_tol.is_finite() && self.stall_tol >= 0.0) {
            return Err(GaError::BadConfig("stall_tol must be non-negative"));
        }
        if !(self.laplace_a.is_finite() && self.laplace_b.is_finite() && self.laplace_b >= 0.0) {
            return Err(GaError::BadConfig("laplace parameters must be finite, b non-negative"));
        }
        if !(self.power_p.is_finite() && self.power_p > 0.0) {
            return Err(GaError::BadConfig("power_p must be positive"));
        }
        Ok(())
    }
}

/// One candidate band combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    /// Real genes, clamped to `[0, n_bands - 1]`.
    pub genes: Vec<f64>,
    /// Distinct decoded indices, in gene order, never excluded.
    pub decoded: Vec<usize>,
    pub fitness: Option<f64>,
}

impl Chromosome {
    /// Clamps genes into the domain and decodes them.
    ///
    /// Panics if the domain cannot host `genes.len()` distinct indices;
    /// the evolution entry points reject such inputs up front.
    pub fn new(mut genes: Vec<f64>, domain: &BandDomain) -> Self {
        for g in &mut genes {
            *g = g.clamp(domain.lo(), domain.hi());
        }
        let decoded = decode(&genes, domain);
        Self { genes, decoded, fitness: None }
    }

    /// Decoded indices in ascending order (the canonical fitness key).
    pub fn sorted_bands(&self) -> Vec<usize> {
        let mut b = self.decoded.clone();
        b.sort_unstable();
        b
    }
}

/// Round-half-up decoding with collision repair.
fn decode(genes: &[f64], domain: &BandDomain) -> Vec<usize> {
    let n = domain.n_bands;
    let mut used = vec![false; n];
    for &e in &domain.excluded {
        used[e] = true;
    }
    let mut out = Vec::with_capacity(genes.len());
    for &g in genes {
        let idx = ((g + 0.5).floor() as usize).min(n - 1);
        let idx = if used[idx] {
            nearest_unused(idx, &used).expect("domain feasibility checked before decoding")
        } else {
            idx
        };
        used[idx] = true;
        out.push(idx);
    }
    out
}

/// Nearest free index scanning outward from `start`, lower side first.
fn nearest_unused(start: usize, used: &[bool]) -> Option<usize> {
    let n = used.len();
    for d in 1..n {
        if start >= d && !used[start - d] {
            return Some(start - d);
        }
        if start + d < n && !used[start + d] {
            return Some(start + d);
        }
    }
    None
}

/// Uniform random population over the gene box.
pub fn init_population(
    domain: &BandDomain,
    config: &GaConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Chromosome>, GaError> {
    config.validate()?;
    ensure_feasible(domain, config.k)?;
    let mut pop = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let genes: Vec<f64> =
            (0..config.k).map(|_| rng.random_range(domain.lo()..=domain.hi())).collect();
        pop.push(Chromosome::new(genes, domain));
    }
    Ok(pop)
}

fn ensure_feasible(domain: &BandDomain, k: usize) -> Result<(), GaError> {
    if domain.available() < k {
        return Err(GaError::Infeasible {
            n_bands: domain.n_bands,
            excluded: domain.excluded.len(),
            k,
        });
    }
    Ok(())
}

/// Binary tournament: two uniform draws with replacement, the higher
/// fitness wins, ties go to the first drawn.
pub fn tournament_select<'a>(
    population: &'a [Chromosome],
    rng: &mut impl Rng,
) -> Result<&'a Chromosome, GaError> {
    let a = &population[rng.random_range(0..population.len())];
    let b = &population[rng.random_range(0..population.len())];
    let (fa, fb) = match (a.fitness, b.fitness) {
        (Some(fa), Some(fb)) => (fa, fb),
        _ => return Err(GaError::UnevaluatedFitness),
    };
    Ok(if fb > fa { b } else { a })
}

/// Laplace crossover. With probability `crossover_prob` each gene pair
/// produces offspring at `parent + beta * |gap|` with
/// `beta = a -/+ b*ln(u)` (sign by a fair draw); otherwise the children
/// are copies of the parents. Children are clamped and re-decoded.
pub fn laplace_crossover(
    p1: &Chromosome,
    p2: &Chromosome,
    config: &GaConfig,
    domain: &BandDomain,
    rng: &mut impl Rng,
) -> (Chromosome, Chromosome) {
    let cross = rng.random::<f64>() < config.crossover_prob;
    if !cross {
        return (
            Chromosome::new(p1.genes.clone(), domain),
            Chromosome::new(p2.genes.clone(), domain),
        );
    }
    let mut g1 = Vec::with_capacity(p1.genes.len());
    let mut g2 = Vec::with_capacity(p2.genes.len());
    for (&x1, &x2) in p1.genes.iter().zip(&p2.genes) {
        // u in (0, 1] keeps ln finite
        let u = 1.0 - rng.random::<f64>();
        let r = rng.random::<f64>();
        let beta = if r <= 0.5 {
            config.laplace_a - config.laplace_b * u.ln()
        } else {
            config.laplace_a + config.laplace_b * u.ln()
        };
        let gap = (x1 - x2).abs();
        g1.push(x1 + beta * gap);
        g2.push(x2 + beta * gap);
    }
    (Chromosome::new(g1, domain), Chromosome::new(g2, domain))
}

/// Power mutation. Each gene mutates with probability `mutation_prob`,
/// moving by a `u^p` fraction toward one bound: toward the lower bound
/// when `r < t` with `t` the gene's relative position, else upward. A gene
/// at a bound can only move inward.
pub fn power_mutation(
    c: &Chromosome,
    config: &GaConfig,
    domain: &BandDomain,
    rng: &mut impl Rng,
) -> Chromosome {
    let (lo, hi) = (domain.lo(), domain.hi());
    let width = hi - lo;
    let mut genes = c.genes.clone();
    for g in &mut genes {
        if rng.random::<f64>() >= config.mutation_prob {
            continue;
        }
        let s = rng.random::<f64>().powf(config.power_p);
        let t = if width > 0.0 { (*g - lo) / width } else { 0.0 };
        let r = rng.random::<f64>();
        *g = if r < t { *g - s * (*g - lo) } else { *g + s * (hi - *g) };
    }
    Chromosome::new(genes, domain)
}

/// One generation/run record of the search history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStat {
    pub run: usize,
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    /// Best member's decoded bands, ascending.
    pub best_bands: Vec<usize>,
}

/// Outcome of one evolution run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: Chromosome,
    pub history: Vec<GenStat>,
    /// Generations actually evolved (excluding the initial population).
    pub generations: usize,
}

/// Outcome of [`multi_run`]: the overall winner and every run's history.
#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Chromosome,
    pub best_run: usize,
    pub history: Vec<GenStat>,
}

/// Evolves one population until `max_generations` or the stall criterion.
pub fn evolve<F>(domain: &BandDomain, config: &GaConfig, fitness: F) -> Result<RunOutcome, GaError>
where
    F: Fn(&[usize]) -> Result<f64, FitnessError> + Sync,
{
    evolve_run(domain, config, &fitness, 0)
}

fn evolve_run<F>(
    domain: &BandDomain,
    config: &GaConfig,
    fitness: &F,
    run: usize,
) -> Result<RunOutcome, GaError>
where
    F: Fn(&[usize]) -> Result<f64, FitnessError> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop = init_population(domain, config, &mut rng)?;
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();

    let mut history = Vec::new();
    let mut gen = 0usize;
    evaluate(&mut pop, &mut cache, fitness, run, gen)?;
    let mut best = best_member(&pop).clone();
    history.push(stat(&pop, run, gen));

    loop {
        if gen >= config.max_generations || stalled(&history, config) {
            break;
        }
        let mut next: Vec<Chromosome> = elites(&pop, config.elite_count);
        while next.len() < config.population {
            let p1 = tournament_select(&pop, &mut rng)?;
            let p2 = tournament_select(&pop, &mut rng)?;
            let (c1, c2) = laplace_crossover(p1, p2, config, domain, &mut rng);
            let c1 = power_mutation(&c1, config, domain, &mut rng);
            let c2 = power_mutation(&c2, config, domain, &mut rng);
            next.push(c1);
            if next.len() < config.population {
                next.push(c2);
            }
        }
        pop = next;
        gen += 1;
        evaluate(&mut pop, &mut cache, fitness, run, gen)?;
        let gen_best = best_member(&pop);
        if gen_best.fitness > best.fitness {
            best = gen_best.clone();
        }
        history.push(stat(&pop, run, gen));
    }
    Ok(RunOutcome { best, history, generations: gen })
}

/// Best-of-`runs` evolution with per-run seeds derived from the master
/// seed. Equal best fitness keeps the lowest run index.
pub fn multi_run<F>(domain: &BandDomain, config: &GaConfig, fitness: F) -> Result<GaOutcome, GaError>
where
    F: Fn(&[usize]) -> Result<f64, FitnessError> + Sync,
{
    config.validate()?;
    ensure_feasible(domain, config.k)?;
    let mut best: Option<(usize, Chromosome)> = None;
    let mut history = Vec::new();
    for run in 0..config.runs {
        let run_config = GaConfig { seed: derive_seed(config.seed, NS_RUN + run as u64), ..*config };
        let outcome = evolve_run(domain, &run_config, &fitness, run)?;
        history.extend(outcome.history);
        let replace = match &best {
            None => true,
            Some((_, incumbent)) => outcome.best.fitness > incumbent.fitness,
        };
        if replace {
            best = Some((run, outcome.best));
        }
    }
    let (best_run, best) = best.expect("runs >= 1 validated");
    Ok(GaOutcome { best, best_run, history })
}

fn evaluate<F>(
    pop: &mut [Chromosome],
    cache: &mut HashMap<Vec<usize>, f64>,
    fitness: &F,
    run: usize,
    generation: usize,
) -> Result<(), GaError>
where
    F: Fn(&[usize]) -> Result<f64, FitnessError> + Sync,
{
    let mut pending: Vec<Vec<usize>> = Vec::new();
    let mut queued: HashSet<Vec<usize>> = HashSet::new();
    for c in pop.iter() {
        let key = c.sorted_bands();
        if !cache.contains_key(&key) && queued.insert(key.clone()) {
            pending.push(key);
        }
    }
    let results: Result<Vec<(Vec<usize>, f64)>, FitnessError> = pending
        .into_par_iter()
        .map(|key| fitness(&key).map(|f| (key, f)))
        .collect();
    let results = results.map_err(|source| GaError::Fitness { run, generation, source })?;
    for (key, f) in results {
        if !f.is_finite() {
            return Err(GaError::NonFiniteFitness { bands: key });
        }
        cache.insert(key, f);
    }
    for c in pop.iter_mut() {
        c.fitness = Some(cache[&c.sorted_bands()]);
    }
    Ok(())
}

/// Highest fitness; ties keep the earliest member.
fn best_member(pop: &[Chromosome]) -> &Chromosome {
    pop.iter()
        .reduce(|best, c| if c.fitness > best.fitness { c } else { best })
        .expect("population is non-empty")
}

/// The `elite_count` best members, cloned unchanged (fitness kept).
/// Ties resolve by position for determinism.
fn elites(pop: &[Chromosome], elite_count: usize) -> Vec<Chromosome> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| {
        pop[b].fitness.partial_cmp(&pop[a].fitness).expect("finite fitness").then(a.cmp(&b))
    });
    idx.into_iter().take(elite_count).map(|i| pop[i].clone()).collect()
}

fn stat(pop: &[Chromosome], run: usize, generation: usize) -> GenStat {
    let best = best_member(pop);
    let mean = pop.iter().map(|c| c.fitness.expect("evaluated")).sum::<f64>() / pop.len() as f64;
    GenStat {
        run,
        generation,
        best_fitness: best.fitness.expect("evaluated"),
        mean_fitness: mean,
        best_bands: best.sorted_bands(),
    }
}

/// Mean |change| of the per-generation best over the trailing window.
fn stalled(history: &[GenStat], config: &GaConfig) -> bool {
    let w = config.stall_window;
    if history.len() < w + 1 {
        return false;
    }
    let tail = &history[history.len() - (w + 1)..];
    let mean_delta = tail
        .windows(2)
        .map(|pair| (pair[1].best_fitness - pair[0].best_fitness).abs())
        .sum::<f64>()
        / w as f64;
    mean_delta < config.stall_tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain(n: usize, excluded: &[usize]) -> BandDomain {
        BandDomain::new(n, excluded.to_vec()).unwrap()
    }

    fn cfg(k: usize, seed: u64) -> GaConfig {
        GaConfig { k, seed, ..GaConfig::default() }
    }

    #[test]
    fn default_config_is_frozen() {
        let c = GaConfig::default();
        assert_eq!(
            (c.population, c.max_generations, c.elite_count, c.runs, c.stall_window, c.k),
            (100, 100, 2, 5, 50, 3)
        );
        assert_eq!((c.crossover_prob, c.mutation_prob), (0.8, 0.2));
        assert_eq!((c.laplace_a, c.laplace_b, c.power_p), (0.0, 0.5, 4.0));
        assert_eq!(c.stall_tol, 1e-6);
    }

    #[test]
    fn decoding_rounds_half_up_and_repairs_collisions() {
        let d = domain(10, &[]);
        assert_eq!(Chromosome::new(vec![1.5], &d).decoded, vec![2]);
        assert_eq!(Chromosome::new(vec![2.49], &d).decoded, vec![2]);
        // duplicate: second 5 repairs to the lower neighbor
        assert_eq!(Chromosome::new(vec![5.0, 5.2], &d).decoded, vec![5, 4]);
        // excluded index: nearest free, lower preferred
        let d_ex = domain(10, &[3]);
        assert_eq!(Chromosome::new(vec![3.1], &d_ex).decoded, vec![2]);
    }

    #[test]
    fn decoding_handles_bound_pileups() {
        let d = domain(8, &[]);
        assert_eq!(Chromosome::new(vec![7.0, 7.0, 7.0], &d).decoded, vec![7, 6, 5]);
        assert_eq!(Chromosome::new(vec![0.0, 0.0, 0.0], &d).decoded, vec![0, 1, 2]);
    }

    #[test]
    fn genes_clamp_into_the_domain() {
        let d = domain(10, &[]);
        let c = Chromosome::new(vec![-5.0, 99.0], &d);
        assert_eq!(c.genes, vec![0.0, 9.0]);
        assert_eq!(c.decoded, vec![0, 9]);
    }

    #[test]
    fn init_population_is_valid_and_in_bounds() {
        let d = domain(20, &[4, 9, 14]);
        let config = cfg(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = init_population(&d, &config, &mut rng).unwrap();
        assert_eq!(pop.len(), config.population);
        for c in &pop {
            assert!(c.genes.iter().all(|&g| (0.0..=19.0).contains(&g)));
            let mut dec = c.decoded.clone();
            dec.sort_unstable();
            dec.dedup();
            assert_eq!(dec.len(), 3, "decoded indices must be distinct");
            assert!(c.decoded.iter().all(|b| !d.excluded().contains(b)));
        }
    }

    #[test]
    fn four_bands_three_genes_no_exclusions_is_feasible() {
        let d = domain(4, &[]);
        let config = GaConfig { population: 10, ..cfg(3, 2) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pop = init_population(&d, &config, &mut rng).unwrap();
        for c in &pop {
            let mut dec = c.decoded.clone();
            dec.sort_unstable();
            dec.dedup();
            assert_eq!(dec.len(), 3);
        }
    }

    #[test]
    fn infeasible_domain_is_rejected() {
        let d = domain(4, &[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            init_population(&d, &cfg(3, 0), &mut rng),
            Err(GaError::Infeasible { n_bands: 4, excluded: 2, k: 3 })
        ));
        assert!(matches!(
            BandDomain::new(4, vec![7]),
            Err(GaError::ExcludedOutOfRange { index: 7, n_bands: 4 })
        ));
    }

    fn evaluated(genes: Vec<f64>, d: &BandDomain, fitness: f64) -> Chromosome {
        let mut c = Chromosome::new(genes, d);
        c.fitness = Some(fitness);
        c
    }

    #[test]
    fn tournament_prefers_fitter_and_breaks_ties_to_first_drawn() {
        let d = domain(10, &[]);
        let pop = vec![
            evaluated(vec![1.0], &d, 0.9),
            evaluated(vec![2.0], &d, 0.1),
            evaluated(vec![3.0], &d, 0.9),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            // replicate the two draws to know who was drawn first
            let mut probe = rng.clone();
            let first = probe.random_range(0..pop.len());
            let second = probe.random_range(0..pop.len());
            let picked = tournament_select(&pop, &mut rng).unwrap();
            let expect = {
                let (fa, fb) = (pop[first].fitness.unwrap(), pop[second].fitness.unwrap());
                if fb > fa {
                    &pop[second]
                } else {
                    &pop[first]
                }
            };
            assert!(std::ptr::eq(picked, expect));
        }
    }

    #[test]
    fn tournament_requires_fitness_and_handles_singleton() {
        let d = domain(10, &[]);
        let pop = vec![Chromosome::new(vec![1.0], &d)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(tournament_select(&pop, &mut rng), Err(GaError::UnevaluatedFitness)));
        let pop = vec![evaluated(vec![1.0], &d, 0.5)];
        let picked = tournament_select(&pop, &mut rng).unwrap();
        assert!(std::ptr::eq(picked, &pop[0]));
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let d = domain(50, &[]);
        let config = GaConfig { crossover_prob: 1.0, ..cfg(3, 0) };
        let p = evaluated(vec![10.2, 20.7, 30.1], &d, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (c1, c2) = laplace_crossover(&p, &p, &config, &d, &mut rng);
            assert_eq!(c1.genes, p.genes);
            assert_eq!(c2.genes, p.genes);
        }
    }

    #[test]
    fn crossover_probability_zero_copies_parents() {
        let d = domain(50, &[]);
        let config = GaConfig { crossover_prob: 0.0, ..cfg(3, 0) };
        let p1 = evaluated(vec![1.0, 2.0, 3.0], &d, 0.1);
        let p2 = evaluated(vec![40.0, 40.5, 44.0], &d, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c1, c2) = laplace_crossover(&p1, &p2, &config, &d, &mut rng);
        assert_eq!(c1.genes, p1.genes);
        assert_eq!(c2.genes, p2.genes);
    }

    #[test]
    fn crossover_children_stay_in_bounds_even_from_the_edges() {
        let d = domain(16, &[]);
        let config = GaConfig { crossover_prob: 1.0, ..cfg(2, 0) };
        let p1 = evaluated(vec![15.0, 0.0], &d, 0.1);
        let p2 = evaluated(vec![0.0, 15.0], &d, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let (c1, c2) = laplace_crossover(&p1, &p2, &config, &d, &mut rng);
            for c in [&c1, &c2] {
                assert!(c.genes.iter().all(|&g| (0.0..=15.0).contains(&g)));
                let mut dec = c.decoded.clone();
                dec.sort_unstable();
                dec.dedup();
                assert_eq!(dec.len(), 2);
            }
        }
    }

    #[test]
    fn mutation_at_bounds_moves_inward_only() {
        let d = domain(100, &[]);
        let config = GaConfig { mutation_prob: 1.0, ..cfg(2, 0) };
        let at_bounds = evaluated(vec![0.0, 99.0], &d, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut moved_up = false;
        let mut moved_down = false;
        for _ in 0..500 {
            let m = power_mutation(&at_bounds, &config, &d, &mut rng);
            assert!(m.genes[0] >= 0.0, "lower-bound gene went below the bound");
            assert!(m.genes[1] <= 99.0, "upper-bound gene went above the bound");
            moved_up |= m.genes[0] > 0.0;
            moved_down |= m.genes[1] < 99.0;
        }
        assert!(moved_up && moved_down);
    }

    #[test]
    fn mutation_probability_zero_is_identity() {
        let d = domain(100, &[]);
        let config = GaConfig { mutation_prob: 0.0, ..cfg(3, 0) };
        let c = evaluated(vec![10.0, 50.0, 90.0], &d, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = power_mutation(&c, &config, &d, &mut rng);
        assert_eq!(m.genes, c.genes);
    }

    #[test]
    fn mutation_mean_displacement_tracks_the_power_law() {
        // for a mid-range gene both directions travel range/2, so the mean
        // |move| is E[u^p] * range/2 = range / (2 (p + 1))
        let d = domain(101, &[]);
        let config = GaConfig { mutation_prob: 1.0, ..cfg(1, 0) };
        let mid = evaluated(vec![50.0], &d, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let m = power_mutation(&mid, &config, &d, &mut rng);
            total += (m.genes[0] - 50.0).abs();
        }
        let mean = total / trials as f64;
        let expect = 50.0 / (config.power_p + 1.0);
        assert!(
            (mean - expect).abs() < 0.05 * expect,
            "mean displacement {mean} vs expected {expect}"
        );
    }

    fn sum_fitness(bands: &[usize]) -> Result<f64, FitnessError> {
        Ok(bands.iter().sum::<usize>() as f64)
    }

    #[test]
    fn constant_fitness_stalls_exactly_at_the_window() {
        let d = domain(30, &[]);
        let config = GaConfig { population: 10, ..cfg(3, 7) };
        let out = evolve(&d, &config, |_| Ok(0.5)).unwrap();
        assert_eq!(out.generations, config.stall_window);
        assert_eq!(out.history.len(), config.stall_window + 1);
        assert_eq!(out.best.fitness, Some(0.5));
    }

    #[test]
    fn evolution_is_deterministic_and_monotone_with_elites() {
        let d = domain(40, &[0, 1]);
        let config = GaConfig { population: 20, max_generations: 25, ..cfg(3, 13) };
        let a = evolve(&d, &config, sum_fitness).unwrap();
        let b = evolve(&d, &config, sum_fitness).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.decoded, b.best.decoded);
        for pair in a.history.windows(2) {
            assert!(
                pair[1].best_fitness >= pair[0].best_fitness,
                "elitist trace decreased: {pair:?}"
            );
        }
        // the optimum of sum-of-bands is the top three indices
        assert!(a.best.fitness.unwrap() >= (37 + 38 + 39) as f64 - 6.0);
    }

    #[test]
    fn multi_run_keeps_lowest_run_on_ties_and_tags_history() {
        let d = domain(12, &[]);
        let config = GaConfig { population: 8, runs: 3, max_generations: 3, ..cfg(2, 99) };
        let out = multi_run(&d, &config, |_| Ok(1.0)).unwrap();
        assert_eq!(out.best_run, 0);
        let runs: HashSet<usize> = out.history.iter().map(|s| s.run).collect();
        assert_eq!(runs, HashSet::from([0, 1, 2]));
        for run in 0..3 {
            assert!(out
                .history
                .iter()
                .any(|s| s.run == run && s.generation == 0));
        }
    }

    #[test]
    fn fitness_failures_carry_run_and_generation() {
        let d = domain(12, &[]);
        let config = GaConfig { population: 4, ..cfg(2, 1) };
        let err = evolve(&d, &config, |_| Err("backend exploded".into())).unwrap_err();
        match err {
            GaError::Fitness { run: 0, generation: 0, source } => {
                assert!(source.to_string().contains("backend exploded"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        let err = evolve(&d, &config, |_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, GaError::NonFiniteFitness { .. }));
    }

    #[test]
    fn fitness_is_evaluated_once_per_band_set() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Mutex;
        let d = domain(6, &[]);
        let config = GaConfig { population: 30, max_generations: 5, ..cfg(2, 21) };
        let calls = AtomicUsize::new(0);
        let seen = Mutex::new(HashSet::new());
        evolve(&d, &config, |bands: &[usize]| {
            calls.fetch_add(1, Ordering::SeqCst);
            assert!(
                seen.lock().unwrap().insert(bands.to_vec()),
                "band set {bands:?} evaluated twice"
            );
            Ok(bands[0] as f64)
        })
        .unwrap();
        // 6 choose 2 = 15 distinct sets bound the evaluation count
        assert!(calls.load(Ordering::SeqCst) <= 15);
    }
}
