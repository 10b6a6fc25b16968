//! Multi-population evolutionary search over expressions, scored by the
//! pinball loss with an adaptive parsimony penalty.
//!
//! Each iteration evolves every population independently for
//! `ncycles_per_iteration` cycles, then simplifies and constant-optimizes
//! members, merges per-population bests into a global hall of fame in
//! population-index order, rebuilds the Pareto front and migrates members
//! along a ring. All cross-population exchange happens at that barrier, so
//! results depend only on the seed, never on thread scheduling.

pub mod config;
pub mod mutate;
pub mod select;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{MutationWeights, SearchConfig};
pub use mutate::{crossover, crossover_at, mutate, KindSampler, Mutation, MutationKind, VariationContext};
pub use select::{adaptive_parsimony_penalty, anneal_accept, penalized_fitness, Frecency, Tournament};

use crate::constopt::optimize_constants;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::expr::{parsimony, random_expr_with, simplify, ComplexityTable, EvalScratch, Expr, OperatorSet};
use crate::loss::{mean_pinball_unchecked, QuantileLevel};
use crate::matrix::Matrix;
use crate::pareto::ParetoFront;

/// Largest node count drawn for initial members.
const INITIAL_MAX_NODES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub expr: Expr,
    /// Cached `parsimony(expr)`.
    pub complexity: u32,
    /// Mean pinball loss on the training data; `+inf` if any prediction is
    /// not finite.
    pub raw_loss: f64,
    /// Cycles survived since creation.
    pub age: u64,
    /// Creation sequence number within its population; smaller is older.
    pub birth: u64,
    /// Population generation at creation; `age` always equals the current
    /// generation minus this value.
    pub born_at: u64,
}

/// Best expression seen at each complexity level.
#[derive(Debug, Clone, PartialEq)]
pub struct HallOfFame {
    slots: Vec<Option<(Expr, f64)>>,
}

impl HallOfFame {
    pub fn new(maxsize: u32) -> Self {
        Self {
            slots: vec![None; maxsize as usize + 1],
        }
    }

    /// Keeps the candidate only when strictly better than the incumbent.
    pub fn update(&mut self, expr: &Expr, complexity: u32, loss: f64) -> bool {
        if !loss.is_finite() {
            return false;
        }
        let Some(slot) = self.slots.get_mut(complexity as usize) else {
            return false;
        };
        if slot.as_ref().is_none_or(|(_, l)| loss < *l) {
            *slot = Some((expr.clone(), loss));
            return true;
        }
        false
    }

    pub fn merge(&mut self, other: &HallOfFame) {
        for (c, slot) in other.slots.iter().enumerate() {
            if let Some((e, l)) = slot {
                self.update(e, c as u32, *l);
            }
        }
    }

    pub fn loss(&self, complexity: u32) -> Option<f64> {
        self.slots.get(complexity as usize)?.as_ref().map(|(_, l)| *l)
    }

    pub fn losses(&self) -> Vec<Option<f64>> {
        self.slots.iter().map(|s| s.as_ref().map(|(_, l)| *l)).collect()
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.slots.iter().flatten().map(|(_, l)| *l).reduce(f64::min)
    }

    pub fn to_front(&self, tau: QuantileLevel) -> ParetoFront {
        let mut front = ParetoFront::new(tau);
        for (c, slot) in self.slots.iter().enumerate() {
            if let Some((e, l)) = slot {
                front.update(e, c as u32, *l);
            }
        }
        front
    }
}

/// Immutable state shared by all populations.
pub struct Engine<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub tau: QuantileLevel,
    pub cfg: &'a SearchConfig,
    pub ops: OperatorSet,
    pub table: ComplexityTable,
    pub sampler: KindSampler,
    pub tournament: Tournament,
}

impl<'a> Engine<'a> {
    pub fn new(x: &'a Matrix, y: &'a [f64], tau: QuantileLevel, cfg: &'a SearchConfig) -> Result<Self> {
        cfg.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("no training rows".into()));
        }
        Ok(Self {
            x,
            y,
            tau,
            cfg,
            ops: cfg.operators()?,
            table: cfg.complexity_table(),
            sampler: KindSampler::new(&cfg.mutation_weights()),
            tournament: Tournament::new(cfg.tournament_selection_n, cfg.tournament_selection_p),
        })
    }

    fn context(&self, temperature: f64) -> VariationContext<'_> {
        VariationContext {
            ops: &self.ops,
            table: &self.table,
            nfeatures: self.x.ncols(),
            maxsize: self.cfg.maxsize,
            temperature,
            perturbation_factor: self.cfg.perturbation_factor,
        }
    }

    pub fn raw_loss(&self, expr: &Expr, scratch: &mut EvalScratch) -> f64 {
        match scratch.eval_finite(expr, self.x) {
            Some(yhat) => {
                let loss = mean_pinball_unchecked(self.tau, self.y, &yhat);
                scratch.give(yhat);
                loss
            }
            None => f64::INFINITY,
        }
    }
}

pub struct Population {
    pub members: Vec<Individual>,
    pub frecency: Frecency,
    /// Best expression this population has evaluated at each complexity.
    pub best_seen: HallOfFame,
    penalized: Vec<f64>,
    rng: ChaCha8Rng,
    next_birth: u64,
    generation: u64,
    scratch: EvalScratch,
}

impl Population {
    /// Random members of at most [`INITIAL_MAX_NODES`] nodes within maxsize.
    pub fn new(engine: &Engine<'_>, rng: ChaCha8Rng) -> Self {
        let mut pop = Self {
            members: Vec::with_capacity(engine.cfg.population_size),
            frecency: Frecency::new(engine.cfg.maxsize),
            best_seen: HallOfFame::new(engine.cfg.maxsize),
            penalized: Vec::new(),
            rng,
            next_birth: 0,
            generation: 0,
            scratch: EvalScratch::new(),
        };
        let max_nodes = INITIAL_MAX_NODES.min(engine.cfg.maxsize as usize).max(1);
        while pop.members.len() < engine.cfg.population_size {
            let e = random_expr_with(&engine.ops, engine.x.ncols(), max_nodes, &mut pop.rng);
            if parsimony(&e, &engine.table) <= engine.cfg.maxsize {
                let ind = pop.individual(engine, e);
                pop.members.push(ind);
            }
        }
        pop.refresh(engine);
        pop
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Evaluates a new member (age 0) and records it in `best_seen`.
    fn individual(&mut self, engine: &Engine<'_>, expr: Expr) -> Individual {
        let raw_loss = engine.raw_loss(&expr, &mut self.scratch);
        self.known_individual(engine, expr, raw_loss)
    }

    fn known_individual(&mut self, engine: &Engine<'_>, expr: Expr, raw_loss: f64) -> Individual {
        let complexity = parsimony(&expr, &engine.table);
        self.best_seen.update(&expr, complexity, raw_loss);
        let birth = self.next_birth;
        self.next_birth += 1;
        Individual {
            expr,
            complexity,
            raw_loss,
            age: 0,
            birth,
            born_at: self.generation,
        }
    }

    fn multiplier(&self, engine: &Engine<'_>, complexity: u32) -> f64 {
        if engine.cfg.use_frequency {
            adaptive_parsimony_penalty(complexity, &self.frecency, engine.cfg.adaptive_parsimony_scaling)
        } else {
            1.0
        }
    }

    pub fn fitness(&self, engine: &Engine<'_>, ind: &Individual) -> f64 {
        penalized_fitness(
            ind.raw_loss,
            ind.complexity,
            self.multiplier(engine, ind.complexity),
            engine.cfg.parsimony_coefficient,
        )
    }

    fn refresh(&mut self, engine: &Engine<'_>) {
        self.penalized = self.members.iter().map(|m| self.fitness(engine, m)).collect();
    }

    fn tournament(&mut self, engine: &Engine<'_>) -> usize {
        let (members, penalized) = (&self.members, &self.penalized);
        let key = |i: usize| {
            let m = &members[i];
            let fit = if engine.cfg.use_frequency_in_tournament {
                penalized[i]
            } else {
                penalized_fitness(m.raw_loss, m.complexity, 1.0, engine.cfg.parsimony_coefficient)
            };
            (fit, m.complexity, m.birth)
        };
        engine.tournament.select(members.len(), key, &mut self.rng)
    }

    /// The oldest member outside the elite; ties go to worse fitness, then
    /// higher complexity, then lower index.
    fn victim(&self, engine: &Engine<'_>) -> usize {
        let n = self.members.len();
        let elite = engine.cfg.topn.min(n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (self.penalized[a], self.penalized[b]);
            fa.total_cmp(&fb)
                .then(self.members[a].complexity.cmp(&self.members[b].complexity))
                .then(self.members[a].birth.cmp(&self.members[b].birth))
        });
        order[elite..]
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let (ma, mb) = (&self.members[a], &self.members[b]);
                ma.age
                    .cmp(&mb.age)
                    .then(self.penalized[a].total_cmp(&self.penalized[b]))
                    .then(ma.complexity.cmp(&mb.complexity))
                    .then(b.cmp(&a))
            })
            .expect("at least one non-elite member")
    }

    fn insert(&mut self, engine: &Engine<'_>, child: Individual) {
        let v = self.victim(engine);
        self.penalized[v] = self.fitness(engine, &child);
        self.members[v] = child;
    }

    fn step(&mut self, engine: &Engine<'_>, temperature: f64) {
        let ctx = engine.context(temperature);
        if self.rng.random_bool(engine.cfg.crossover_probability) {
            let a = self.tournament(engine);
            let b = self.tournament(engine);
            let (c1, c2) = crossover(&self.members[a].expr, &self.members[b].expr, &ctx, &mut self.rng);
            let c1 = self.individual(engine, c1);
            self.insert(engine, c1);
            let c2 = self.individual(engine, c2);
            self.insert(engine, c2);
            return;
        }
        let parent = self.tournament(engine);
        let Mutation { expr, .. } = mutate(&self.members[parent].expr, &engine.sampler, &ctx, &mut self.rng);
        let Some(expr) = expr else {
            return;
        };
        let child = self.individual(engine, expr);
        let old = self.penalized[parent];
        let new = self.fitness(engine, &child);
        if anneal_accept(old, new, temperature, engine.cfg.alpha, engine.cfg.annealing, &mut self.rng) {
            self.insert(engine, child);
        }
    }

    /// One cycle: `ceil(population_size / tournament_selection_n)` variation
    /// steps, then every member ages by one and frecency absorbs the
    /// population's complexity histogram.
    pub fn cycle(&mut self, engine: &Engine<'_>, temperature: f64) {
        let steps = self.members.len().div_ceil(engine.cfg.tournament_selection_n);
        for _ in 0..steps {
            self.step(engine, temperature);
        }
        self.generation += 1;
        self.frecency.decay();
        for m in &mut self.members {
            m.age += 1;
            self.frecency.add(m.complexity);
        }
        self.refresh(engine);
    }

    /// Cycles with temperature falling linearly from 1 towards 0, followed
    /// by simplification and constant optimization.
    pub fn run_iteration(&mut self, engine: &Engine<'_>) {
        let ncycles = engine.cfg.ncycles_per_iteration;
        for c in 0..ncycles {
            let temperature = 1.0 - c as f64 / ncycles as f64;
            self.cycle(engine, temperature);
        }
        if engine.cfg.should_simplify {
            self.simplify_members(engine);
        }
        if engine.cfg.should_optimize_constants {
            self.optimize_members(engine);
        }
        self.refresh(engine);
    }

    fn replace_expr(&mut self, engine: &Engine<'_>, i: usize, expr: Expr, raw_loss: f64) {
        let complexity = parsimony(&expr, &engine.table);
        self.best_seen.update(&expr, complexity, raw_loss);
        let m = &mut self.members[i];
        m.expr = expr;
        m.complexity = complexity;
        m.raw_loss = raw_loss;
    }

    fn simplify_members(&mut self, engine: &Engine<'_>) {
        for i in 0..self.members.len() {
            let s = simplify(&self.members[i].expr);
            if s != self.members[i].expr {
                let loss = engine.raw_loss(&s, &mut self.scratch);
                self.replace_expr(engine, i, s, loss);
            }
        }
    }

    fn optimize_members(&mut self, engine: &Engine<'_>) {
        let opts = engine.cfg.constopt_options();
        for i in 0..self.members.len() {
            if !self.rng.random_bool(engine.cfg.optimize_probability) {
                continue;
            }
            let m = &self.members[i];
            if m.expr.constant_count() == 0 {
                continue;
            }
            let (e, loss) = optimize_constants(&m.expr, engine.x, engine.y, engine.tau, &opts, &mut self.rng);
            if loss < self.members[i].raw_loss {
                self.replace_expr(engine, i, e, loss);
            }
        }
    }

    /// Replaces member `i` with an immigrant whose loss is already known.
    fn immigrate(&mut self, engine: &Engine<'_>, i: usize, expr: Expr, raw_loss: f64) {
        let ind = self.known_individual(engine, expr, raw_loss);
        self.penalized[i] = self.fitness(engine, &ind);
        self.members[i] = ind;
    }
}

/// Snapshot after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub best_loss: f64,
    pub front_size: usize,
    /// Hall-of-fame loss per complexity level.
    pub hall_of_fame: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub front: ParetoFront,
    pub hall_of_fame: HallOfFame,
    pub history: Vec<IterationStats>,
}

fn population_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Runs the full search on a dataset and returns the final Pareto front.
pub fn evolve(data: &Dataset, tau: QuantileLevel, cfg: &SearchConfig) -> Result<SearchOutcome> {
    evolve_xy(&data.x, &data.y, tau, cfg)
}

pub fn evolve_xy(x: &Matrix, y: &[f64], tau: QuantileLevel, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let engine = Engine::new(x, y, tau, cfg)?;
    if y.iter().all(|v| *v == y[0]) {
        return Err(Error::DegenerateRange);
    }
    let mut pops: Vec<Population> = (0..cfg.populations)
        .map(|i| Population::new(&engine, population_rng(cfg.seed, i)))
        .collect();
    let mut global_rng = population_rng(cfg.seed, usize::MAX - 1);
    let mut hof = HallOfFame::new(cfg.maxsize);
    let mut history = Vec::with_capacity(cfg.niterations);
    let mut front = ParetoFront::new(tau);
    for iteration in 0..cfg.niterations {
        if cfg.deterministic {
            pops.iter_mut().for_each(|p| p.run_iteration(&engine));
        } else {
            pops.par_iter_mut().for_each(|p| p.run_iteration(&engine));
        }
        for p in &pops {
            hof.merge(&p.best_seen);
        }
        front = hof.to_front(tau);
        history.push(IterationStats {
            iteration,
            best_loss: hof.best_loss().unwrap_or(f64::INFINITY),
            front_size: front.len(),
            hall_of_fame: hof.losses(),
        });
        if iteration + 1 < cfg.niterations {
            migrate(&engine, &mut pops, &front, &mut global_rng);
        }
    }
    Ok(SearchOutcome {
        front,
        hall_of_fame: hof,
        history,
    })
}

/// Ring migration from population `i - 1` into `i`, then hall-of-fame
/// migration; each member is replaced independently with the configured
/// probabilities.
fn migrate(engine: &Engine<'_>, pops: &mut [Population], front: &ParetoFront, rng: &mut ChaCha8Rng) {
    let cfg = engine.cfg;
    let npops = pops.len();
    if cfg.migration && npops > 1 {
        let snapshot: Vec<Vec<(Expr, f64)>> = pops
            .iter()
            .map(|p| p.members.iter().map(|m| (m.expr.clone(), m.raw_loss)).collect())
            .collect();
        for (i, pop) in pops.iter_mut().enumerate() {
            let source = &snapshot[(i + npops - 1) % npops];
            for j in 0..pop.members.len() {
                if rng.random_bool(cfg.fraction_replaced) {
                    let (e, l) = source.choose(rng).expect("populations are non-empty").clone();
                    pop.immigrate(engine, j, e, l);
                }
            }
        }
    }
    if cfg.hof_migration && !front.is_empty() {
        let entries = front.entries();
        for pop in pops.iter_mut() {
            for j in 0..pop.members.len() {
                if rng.random_bool(cfg.fraction_replaced_hof) {
                    let e = entries.choose(rng).expect("front is non-empty");
                    pop.immigrate(engine, j, e.expr.clone(), e.loss);
                }
            }
        }
    }
}
