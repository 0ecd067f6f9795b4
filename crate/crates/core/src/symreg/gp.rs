use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::expr::{BinOp, Expression, Node, UnOp};
use super::{complexity_filter, GpConfig};
use crate::error::{Error, Result};
use crate::formula::{
    evaluate_design, target_transform, FitResult, ObservationRecord, TargetKind, Var,
};
use crate::rng::{self, StreamRng};

const MIN_RECORDS: usize = 10;
const CONST_RANGE: (f64, f64) = (1e-3, 1e3);
const POINT_RATE: f64 = 0.1;
const MUTATION_DEPTH: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct Discovery {
    pub expression: Expression,
    pub canonical: String,
    /// Penalized fitness of the winner.
    pub fitness: f64,
    /// Best penalized fitness after initialization and after each generation.
    pub trace: Vec<f64>,
    /// Variables the search was allowed to use.
    pub pool: Vec<Var>,
    /// LOO evaluation of the winner as a one-feature formula.
    pub fit: FitResult,
}

struct Data {
    pool: Vec<Var>,
    /// columns[k][i]: value of pool[k] in row i.
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    syy: f64,
}

impl Data {
    fn build(records: &[ObservationRecord], target: TargetKind, config: &GpConfig) -> Result<Data> {
        let rows: Vec<(&ObservationRecord, f64)> = records
            .iter()
            .filter_map(|r| {
                target_transform(r, target)
                    .ok()
                    .filter(|t| t.is_finite())
                    .map(|t| (r, t))
            })
            .collect();
        if rows.len() < MIN_RECORDS {
            return Err(Error::TooFewSamples {
                needed: MIN_RECORDS,
                have: rows.len(),
            });
        }
        let pool: Vec<Var> = config
            .variables
            .iter()
            .copied()
            // Entropy formulas only apply to perplexity targets.
            .filter(|v| !(*v == Var::Entropy && target.is_accuracy()))
            .filter(|v| {
                rows.iter()
                    .all(|(r, _)| r.get(*v).is_some_and(f64::is_finite))
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::InvalidInput(
                "no search variable is present in every record".into(),
            ));
        }
        let columns = pool
            .iter()
            .map(|v| {
                rows.iter()
                    .map(|(r, _)| r.get(*v).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|(_, t)| *t).collect();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let syy = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>();
        if !(syy > 1e-28 * (y_mean * y_mean).max(f64::MIN_POSITIVE) * y.len() as f64) {
            return Err(Error::DegenerateTarget);
        }
        Ok(Data {
            pool,
            columns,
            y,
            y_mean,
            syy,
        })
    }

    fn outputs(&self, e: &Expression) -> Vec<f64> {
        (0..self.y.len())
            .map(|i| {
                e.eval_with(&|v| {
                    let k = self
                        .pool
                        .iter()
                        .position(|p| *p == v)
                        .expect("pool variable");
                    self.columns[k][i]
                })
            })
            .collect()
    }

    /// 1 − r² between outputs and target: the residual of the best affine
    /// rescaling relative to the target's own spread.
    fn scaled_error(&self, f: &[f64]) -> f64 {
        if f.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let n = f.len() as f64;
        let fm = f.iter().sum::<f64>() / n;
        let (mut sff, mut sfy) = (0.0, 0.0);
        for (a, b) in f.iter().zip(&self.y) {
            sff += (a - fm) * (a - fm);
            sfy += (a - fm) * (b - self.y_mean);
        }
        if !(sff > 1e-24 * (fm * fm).max(1e-300) * n) || !sff.is_finite() {
            return 1.0;
        }
        let r = sfy / (sff.sqrt() * self.syy.sqrt());
        (1.0 - r * r).clamp(0.0, 1.0)
    }
}

struct Search<'a> {
    data: &'a Data,
    config: &'a GpConfig,
    rng: StreamRng,
}

impl Search<'_> {
    fn fitness(&self, e: &Expression) -> f64 {
        if !complexity_filter(e, self.config) {
            return f64::INFINITY;
        }
        self.data.scaled_error(&self.data.outputs(e)) + self.config.parsimony * e.size() as f64
    }

    fn evaluate(&self, pop: &[Expression]) -> Vec<f64> {
        pop.par_iter().map(|e| self.fitness(e)).collect()
    }

    fn terminal(&mut self) -> Node {
        if self.rng.random_bool(0.75) {
            Node::Var(self.data.pool[self.rng.random_range(0..self.data.pool.len())])
        } else {
            let (lo, hi) = (CONST_RANGE.0.ln(), CONST_RANGE.1.ln());
            let mag = self.rng.random_range(lo..hi).exp();
            Node::Const(if self.rng.random_bool(0.5) { mag } else { -mag })
        }
    }

    fn function(&mut self) -> Node {
        let i = self.rng.random_range(0..BinOp::ALL.len() + UnOp::ALL.len());
        match BinOp::ALL.get(i) {
            Some(op) => Node::Binary(*op),
            None => Node::Unary(UnOp::ALL[i - BinOp::ALL.len()]),
        }
    }

    fn random_tree(&mut self, depth: usize, full: bool, out: &mut Vec<Node>) {
        let leaf = depth <= 1 || (!full && self.rng.random_bool(0.3));
        let node = if leaf {
            self.terminal()
        } else {
            self.function()
        };
        out.push(node);
        for _ in 0..node.arity() {
            self.random_tree(depth - 1, full, out);
        }
    }

    fn initial_population(&mut self) -> Vec<Expression> {
        let (lo, hi) = self.config.init_depth;
        let span = hi - lo + 1;
        (0..self.config.population)
            .map(|i| {
                let depth = lo + i % span;
                let full = (i / span) % 2 == 0;
                let mut nodes = Vec::new();
                self.random_tree(depth, full, &mut nodes);
                Expression::from_nodes_unchecked(nodes)
            })
            .collect()
    }

    fn tournament(&mut self, fitness: &[f64]) -> usize {
        let mut best = self.rng.random_range(0..fitness.len());
        for _ in 1..self.config.tournament {
            let c = self.rng.random_range(0..fitness.len());
            if fitness[c] < fitness[best] || (fitness[c] == fitness[best] && c < best) {
                best = c;
            }
        }
        best
    }

    fn splice(parent: &Expression, at: usize, insert: &[Node]) -> Expression {
        let end = parent.subtree_end(at);
        let nodes = parent.nodes();
        let mut out = Vec::with_capacity(nodes.len() - (end - at) + insert.len());
        out.extend_from_slice(&nodes[..at]);
        out.extend_from_slice(insert);
        out.extend_from_slice(&nodes[end..]);
        Expression::from_nodes_unchecked(out)
    }

    fn crossover(&mut self, a: &Expression, b: &Expression) -> Expression {
        let i = self.rng.random_range(0..a.size());
        let j = self.rng.random_range(0..b.size());
        Self::splice(a, i, &b.nodes()[j..b.subtree_end(j)])
    }

    fn subtree_mutation(&mut self, a: &Expression) -> Expression {
        let i = self.rng.random_range(0..a.size());
        let depth = self.rng.random_range(1..=MUTATION_DEPTH);
        let mut donor = Vec::new();
        self.random_tree(depth, false, &mut donor);
        Self::splice(a, i, &donor)
    }

    fn hoist(&mut self, a: &Expression) -> Expression {
        let i = self.rng.random_range(0..a.size());
        let end = a.subtree_end(i);
        let j = self.rng.random_range(i..end);
        let sub = a.nodes()[j..a.subtree_end(j)].to_vec();
        Self::splice(a, i, &sub)
    }

    fn point_mutation(&mut self, a: &Expression) -> Expression {
        let forced = self.rng.random_range(0..a.size());
        let mut nodes = a.nodes().to_vec();
        for (k, node) in nodes.iter_mut().enumerate() {
            if k != forced && !self.rng.random_bool(POINT_RATE) {
                continue;
            }
            *node = match *node {
                Node::Var(_) | Node::Const(_) => self.terminal(),
                Node::Unary(_) => Node::Unary(UnOp::ALL[self.rng.random_range(0..UnOp::ALL.len())]),
                Node::Binary(_) => {
                    Node::Binary(BinOp::ALL[self.rng.random_range(0..BinOp::ALL.len())])
                }
            };
        }
        Expression::from_nodes_unchecked(nodes)
    }

    /// Operator probabilities, rescaled to sum to one when they exceed it; the
    /// remainder is plain reproduction.
    fn thresholds(&self) -> [f64; 4] {
        let c = self.config;
        let p = [c.p_crossover, c.p_subtree, c.p_hoist, c.p_point];
        let total: f64 = p.iter().sum();
        let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
        let mut acc = 0.0;
        p.map(|v| {
            acc += v * scale;
            acc
        })
    }

    fn offspring(&mut self, pop: &[Expression], fitness: &[f64], cuts: &[f64; 4]) -> Expression {
        let parent = &pop[self.tournament(fitness)];
        let r: f64 = self.rng.random();
        let child = if r < cuts[0] {
            let donor = pop[self.tournament(fitness)].clone();
            self.crossover(parent, &donor)
        } else if r < cuts[1] {
            self.subtree_mutation(parent)
        } else if r < cuts[2] {
            self.hoist(parent)
        } else if r < cuts[3] {
            self.point_mutation(parent)
        } else {
            parent.clone()
        };
        if child.size() > self.config.max_size {
            parent.clone()
        } else {
            child
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Evolves an expression for `target` and scores the winner by LOO.
pub fn gp_discover(
    records: &[ObservationRecord],
    target: TargetKind,
    config: &GpConfig,
) -> Result<Discovery> {
    config.validate()?;
    let data = Data::build(records, target, config)?;
    let mut search = Search {
        data: &data,
        config,
        rng: rng::stream(config.seed),
    };
    let cuts = search.thresholds();

    let mut pop = search.initial_population();
    let mut fitness = search.evaluate(&pop);
    let mut trace = vec![fitness[argmin(&fitness)]];
    for _ in 0..config.generations {
        let elite = argmin(&fitness);
        let mut next = Vec::with_capacity(config.population);
        next.push(pop[elite].clone());
        while next.len() < config.population {
            let child = search.offspring(&pop, &fitness, &cuts);
            next.push(child);
        }
        pop = next;
        fitness = search.evaluate(&pop);
        trace.push(fitness[argmin(&fitness)]);
    }

    let best = argmin(&fitness);
    if !fitness[best].is_finite() {
        return Err(Error::NoAdmissibleFormulas(
            "no individual satisfies the complexity limits".into(),
        ));
    }
    let expression = pop[best].clone();
    let canonical = expression.to_string();
    let feature = data.outputs(&expression);
    let x = DMatrix::from_column_slice(feature.len(), 1, &feature);
    let y = DVector::from_column_slice(&data.y);
    let mut fit = evaluate_design(&canonical, expression.variables().len(), &x, &y, target)?;
    fit.skipped = records.len() - data.y.len();
    Ok(Discovery {
        fitness: fitness[best],
        expression,
        canonical,
        trace,
        pool: data.pool.clone(),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::Scope;
    use crate::formula::ObservationRecord;

    pub(crate) fn planted(
        seed: u64,
        n: usize,
        f: impl Fn(&ObservationRecord) -> f64,
    ) -> Vec<ObservationRecord> {
        let mut r = rng::stream(seed);
        (0..n)
            .map(|_| {
                let gamma = r.random_range(0.1..1.0);
                let log_n = r.random_range(18.0..24.0);
                let mut rec = ObservationRecord {
                    method: "svdllm".into(),
                    task: "wikitext".into(),
                    layer: Scope::Both,
                    gamma,
                    log_n,
                    log_n_comp: log_n + f64::ln(gamma),
                    bits: r.random_range(2.0..16.0),
                    rho_s_bar: r.random_range(2.0..40.0),
                    rho_eff_bar: r.random_range(50.0..400.0),
                    svd_rank: r.random_range(8.0..512.0),
                    entropy: Some(r.random_range(1.0..8.0)),
                    k95_bar: None,
                    k99_bar: None,
                    gamma_attn: None,
                    gamma_mlp: None,
                    ppl: None,
                    ppl0: None,
                    acc: None,
                    acc0: None,
                };
                rec.ppl = Some(f(&rec).exp());
                rec
            })
            .collect()
    }

    fn small() -> GpConfig {
        GpConfig {
            population: 200,
            generations: 8,
            ..GpConfig::default()
        }
    }

    #[test]
    fn same_seed_same_result() {
        let recs = planted(1, 30, |r| r.bits / r.gamma);
        let a = gp_discover(&recs, TargetKind::LogPerplexity, &small()).unwrap();
        let b = gp_discover(&recs, TargetKind::LogPerplexity, &small()).unwrap();
        assert_eq!(a.canonical, b.canonical);
        assert_eq!(
            a.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn trace_never_increases() {
        let recs = planted(2, 30, |r| r.rho_s_bar.ln() / r.log_n_comp);
        let d = gp_discover(&recs, TargetKind::LogPerplexity, &small()).unwrap();
        assert_eq!(d.trace.len(), 9);
        assert!(d.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(complexity_filter(&d.expression, &small()));
    }

    #[test]
    fn heavy_parsimony_gives_single_node() {
        let recs = planted(3, 20, |r| r.bits / r.gamma);
        let cfg = GpConfig {
            parsimony: 1e3,
            ..small()
        };
        let d = gp_discover(&recs, TargetKind::LogPerplexity, &cfg).unwrap();
        assert_eq!(d.expression.size(), 1);
    }

    #[test]
    fn entropy_is_not_searched_for_accuracy() {
        let mut recs = planted(4, 20, |r| r.gamma);
        for r in &mut recs {
            r.acc0 = Some(0.8);
            r.acc = Some(0.8 - 0.5 * r.entropy.unwrap() / 10.0);
        }
        let d = gp_discover(&recs, TargetKind::AccuracyDrop, &small()).unwrap();
        assert!(!d.pool.contains(&Var::Entropy));
    }

    #[test]
    fn too_few_records() {
        let recs = planted(5, 5, |r| r.gamma);
        assert!(matches!(
            gp_discover(&recs, TargetKind::LogPerplexity, &small()),
            Err(Error::TooFewSamples { .. })
        ));
    }
}
