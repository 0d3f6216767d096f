//! Finite discrete causal models.
//!
//! A [`CausalModel`] is a DAG of categorical nodes, each with an explicit
//! conditional probability table. On top of it this module provides the
//! operations the collider scenarios are built from:
//!
//! - forward sampling and exact joint enumeration (the universal oracle),
//! - conditioning on a collider event (post-selection, renormalized),
//! - rejection sampling, which realizes post-selection by discarding rounds,
//! - constrained sampling, which draws straight from the conditional and
//!   never discards anything,
//! - the do-operator and a counterfactual comparison built from it.
//!
//! Rejection sampling and constrained sampling produce the same distribution.
//! They differ only in their keep rate, which both report.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{collect_until_kept, pick_index, RandomStream, StreamFactory};

/// Largest state space [`exact_joint`] will enumerate.
pub const EXACT_JOINT_LIMIT: u128 = 10_000_000;

/// Default trial cap for [`rejection_sample`].
pub const DEFAULT_MAX_TRIALS: u64 = 1_000_000_000;

/// Tolerance on a cpt row sum.
pub const CPT_TOLERANCE: f64 = 1e-12;

/// Absolute tolerance for comparing exactly computed probabilities.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CausalError {
    #[error("CycleError: the graph has a cycle involving node `{0}`")]
    Cycle(String),
    #[error("TooLargeError: state space of {size} assignments exceeds the limit of {limit}")]
    TooLarge { size: u128, limit: u128 },
    #[error("ZeroSupportError: {0}")]
    ZeroSupport(String),
    #[error("BudgetExceededError: only {kept} of {wanted} rounds kept after {trials} trials")]
    BudgetExceeded { kept: usize, wanted: usize, trials: u64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

pub type Result<T, E = CausalError> = std::result::Result<T, E>;

/// Dense index of a node within its model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A categorical node. `cpt[r]` is the distribution of this node given the
/// `r`-th joint parent assignment, parents enumerated in mixed radix with the
/// first parent most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub parents: Vec<NodeId>,
    pub cardinality: usize,
    pub cpt: Vec<Vec<f64>>,
}

impl Node {
    pub fn new(
        name: impl Into<String>,
        parents: Vec<NodeId>,
        cardinality: usize,
        cpt: Vec<Vec<f64>>,
    ) -> Self {
        Node { name: name.into(), parents, cardinality, cpt }
    }

    pub fn root(name: impl Into<String>, probs: Vec<f64>) -> Self {
        let k = probs.len();
        Node::new(name, Vec::new(), k, vec![probs])
    }
}

/// One category index per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn get(&self, node: NodeId) -> usize {
        self.0[node.0]
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

/// Topological order of `nodes`, smallest ready index first.
pub fn topo_order(nodes: &[Node]) -> Result<Vec<NodeId>> {
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        for p in &node.parents {
            if p.0 >= n {
                return Err(CausalError::InvalidModel(format!(
                    "node `{}` has unknown parent {}",
                    node.name, p
                )));
            }
            indegree[i] += 1;
            children[p.0].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(NodeId(i));
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(CausalError::Cycle(nodes[stuck].name.clone()));
    }
    Ok(order)
}

/// A validated, immutable causal model.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    nodes: Vec<Node>,
    order: Vec<NodeId>,
}

impl CausalModel {
    /// Validates acyclicity, cardinalities, cpt shape and normalization.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let order = topo_order(&nodes)?;
        let mut names = BTreeSet::new();
        for node in &nodes {
            if !names.insert(node.name.as_str()) {
                return Err(CausalError::InvalidModel(format!("duplicate node name `{}`", node.name)));
            }
            validate_node(node, &nodes)?;
        }
        Ok(CausalModel { nodes, order })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn cardinality(&self, id: NodeId) -> usize {
        self.nodes[id.0].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.cardinality).collect()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.order
    }

    /// Product of cardinalities, saturating.
    pub fn state_space(&self) -> u128 {
        self.nodes
            .iter()
            .fold(1u128, |acc, n| acc.saturating_mul(n.cardinality as u128))
    }

    /// Row of `node`'s cpt selected by the parent values in `values`.
    fn cpt_row<'a>(&self, node: &'a Node, values: &[usize]) -> &'a [f64] {
        let mut row = 0;
        for p in &node.parents {
            row = row * self.nodes[p.0].cardinality + values[p.0];
        }
        &node.cpt[row]
    }

    /// Probability of a full assignment: the product of its cpt entries.
    pub fn prob(&self, a: &Assignment) -> f64 {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, node)| self.cpt_row(node, &a.0)[a.0[i]])
            .product()
    }

    /// Forward sample: each node drawn by inverse CDF from its cpt row, in
    /// topological order.
    pub fn sample(&self, stream: &mut RandomStream) -> Assignment {
        let mut values = vec![0usize; self.nodes.len()];
        for id in &self.order {
            let node = &self.nodes[id.0];
            let row = self.cpt_row(node, &values);
            values[id.0] = pick_index(row, stream.uniform());
        }
        Assignment(values)
    }

    /// Checks that an assignment has one in-range value per node.
    pub fn check_assignment(&self, a: &Assignment) -> Result<()> {
        if a.0.len() != self.nodes.len() {
            return Err(CausalError::InvalidModel(format!(
                "assignment has {} values for {} nodes",
                a.0.len(),
                self.nodes.len()
            )));
        }
        for (v, node) in a.0.iter().zip(&self.nodes) {
            if *v >= node.cardinality {
                return Err(CausalError::InvalidModel(format!(
                    "value {v} out of range for node `{}`",
                    node.name
                )));
            }
        }
        Ok(())
    }
}

fn validate_node(node: &Node, nodes: &[Node]) -> Result<()> {
    if node.cardinality < 2 {
        return Err(CausalError::InvalidModel(format!(
            "node `{}` has cardinality {} (need at least 2)",
            node.name, node.cardinality
        )));
    }
    let rows: usize = node.parents.iter().map(|p| nodes[p.0].cardinality).product();
    if node.cpt.len() != rows {
        return Err(CausalError::InvalidModel(format!(
            "node `{}` has {} cpt rows, expected {rows}",
            node.name,
            node.cpt.len()
        )));
    }
    let distinct: BTreeSet<_> = node.parents.iter().collect();
    if distinct.len() != node.parents.len() {
        return Err(CausalError::InvalidModel(format!("node `{}` repeats a parent", node.name)));
    }
    for (r, row) in node.cpt.iter().enumerate() {
        if row.len() != node.cardinality {
            return Err(CausalError::InvalidModel(format!(
                "node `{}` cpt row {r} has length {}, expected {}",
                node.name,
                row.len(),
                node.cardinality
            )));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CausalError::InvalidModel(format!(
                "node `{}` cpt row {r} has a negative or non-finite entry",
                node.name
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > CPT_TOLERANCE {
            return Err(CausalError::InvalidModel(format!(
                "node `{}` cpt row {r} sums to {sum}",
                node.name
            )));
        }
    }
    Ok(())
}

/// Incremental construction where every parent must already exist, so the
/// cpt can be filled from a closure over parent values.
#[derive(Debug, Default, Clone)]
pub struct ModelBuilder {
    nodes: Vec<Node>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&mut self, name: impl Into<String>, probs: Vec<f64>) -> NodeId {
        self.nodes.push(Node::root(name, probs));
        NodeId(self.nodes.len() - 1)
    }

    /// Node whose cpt row for parent values `pv` is `f(pv)`.
    pub fn conditional<F>(
        &mut self,
        name: impl Into<String>,
        parents: &[NodeId],
        cardinality: usize,
        f: F,
    ) -> NodeId
    where
        F: Fn(&[usize]) -> Vec<f64>,
    {
        let cards: Vec<usize> = parents.iter().map(|p| self.nodes[p.0].cardinality).collect();
        let cpt = mixed_radix(&cards).map(|pv| f(&pv)).collect();
        self.nodes.push(Node::new(name, parents.to_vec(), cardinality, cpt));
        NodeId(self.nodes.len() - 1)
    }

    /// Node that is a deterministic function of its parents.
    pub fn deterministic<F>(
        &mut self,
        name: impl Into<String>,
        parents: &[NodeId],
        cardinality: usize,
        f: F,
    ) -> NodeId
    where
        F: Fn(&[usize]) -> usize,
    {
        self.conditional(name, parents, cardinality, |pv| {
            let mut row = vec![0.0; cardinality];
            row[f(pv)] = 1.0;
            row
        })
    }

    pub fn build(self) -> Result<CausalModel> {
        CausalModel::new(self.nodes)
    }
}

/// All tuples over `cards` in mixed-radix order, first position most
/// significant.
pub fn mixed_radix(cards: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = cards.iter().product();
    (0..total).map(move |mut idx| {
        let mut v = vec![0; cards.len()];
        for (slot, &c) in v.iter_mut().zip(cards).rev() {
            *slot = idx % c;
            idx /= c;
        }
        v
    })
}

/// Restriction of one node to a set of allowed categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColliderConstraint {
    pub node: NodeId,
    pub allowed: BTreeSet<usize>,
}

impl ColliderConstraint {
    pub fn new(node: NodeId, allowed: impl IntoIterator<Item = usize>) -> Result<Self> {
        let allowed: BTreeSet<usize> = allowed.into_iter().collect();
        if allowed.is_empty() {
            return Err(CausalError::InvalidConstraint("allowed set is empty".into()));
        }
        Ok(ColliderConstraint { node, allowed })
    }

    pub fn single(node: NodeId, value: usize) -> Self {
        ColliderConstraint { node, allowed: BTreeSet::from([value]) }
    }

    pub fn admits(&self, a: &Assignment) -> bool {
        self.allowed.contains(&a.get(self.node))
    }

    /// Checks the constraint against a model's shape. Satisfiability is
    /// checked where a probability is available.
    pub fn check(&self, model: &CausalModel) -> Result<()> {
        if self.node.0 >= model.node_count() {
            return Err(CausalError::InvalidConstraint(format!("unknown node {}", self.node)));
        }
        let k = model.cardinality(self.node);
        if let Some(bad) = self.allowed.iter().find(|&&v| v >= k) {
            return Err(CausalError::InvalidConstraint(format!(
                "category {bad} out of range for node `{}` (cardinality {k})",
                model.node(self.node).name
            )));
        }
        Ok(())
    }
}

/// Dense probability table over every full assignment of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactJoint {
    cards: Vec<usize>,
    probs: Vec<f64>,
    keep_rate: f64,
}

/// Enumerates the full joint of `model`.
pub fn exact_joint(model: &CausalModel) -> Result<ExactJoint> {
    let size = model.state_space();
    if size > EXACT_JOINT_LIMIT {
        return Err(CausalError::TooLarge { size, limit: EXACT_JOINT_LIMIT });
    }
    let cards = model.cardinalities();
    let probs = mixed_radix(&cards).map(|v| model.prob(&Assignment(v))).collect();
    Ok(ExactJoint { cards, probs, keep_rate: 1.0 })
}

/// Post-selection: restrict to assignments admitted by `constraint` and
/// renormalize. The result's keep rate is the probability of the event.
pub fn condition(joint: &ExactJoint, constraint: &ColliderConstraint) -> Result<ExactJoint> {
    joint.restrict(|a| constraint.admits(a), || format!("constraint on node {}", constraint.node))
}

impl ExactJoint {
    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability mass the last conditioning step retained (1 for an
    /// unconditioned joint).
    pub fn keep_rate(&self) -> f64 {
        self.keep_rate
    }

    pub fn index_of(&self, a: &Assignment) -> usize {
        a.0.iter().zip(&self.cards).fold(0, |acc, (&v, &c)| acc * c + v)
    }

    pub fn assignment_of(&self, mut index: usize) -> Assignment {
        let mut v = vec![0; self.cards.len()];
        for (slot, &c) in v.iter_mut().zip(&self.cards).rev() {
            *slot = index % c;
            index /= c;
        }
        Assignment(v)
    }

    pub fn prob(&self, a: &Assignment) -> f64 {
        self.probs[self.index_of(a)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Assignment, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.assignment_of(i), p))
    }

    /// Probability of the event `pred`.
    pub fn event_prob<F: Fn(&Assignment) -> bool>(&self, pred: F) -> f64 {
        self.iter().filter(|(a, _)| pred(a)).map(|(_, p)| p).sum()
    }

    pub fn marginal(&self, node: NodeId) -> Vec<f64> {
        let mut m = vec![0.0; self.cards[node.0]];
        for (a, p) in self.iter() {
            m[a.get(node)] += p;
        }
        m
    }

    /// Renormalized restriction to `pred`.
    pub fn restrict<F, D>(&self, pred: F, describe: D) -> Result<ExactJoint>
    where
        F: Fn(&Assignment) -> bool,
        D: FnOnce() -> String,
    {
        let mut probs = vec![0.0; self.probs.len()];
        let mut mass = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 && pred(&self.assignment_of(i)) {
                probs[i] = p;
                mass += p;
            }
        }
        if mass <= 0.0 {
            return Err(CausalError::ZeroSupport(format!("{} has probability 0", describe())));
        }
        probs.iter_mut().for_each(|p| *p /= mass);
        Ok(ExactJoint { cards: self.cards.clone(), probs, keep_rate: mass })
    }

    /// Conditional on `node = value`.
    pub fn given(&self, node: NodeId, value: usize) -> Result<ExactJoint> {
        self.restrict(|a| a.get(node) == value, || format!("node {node} = {value}"))
    }

    /// Distribution of `target` given the listed node values.
    pub fn conditional(&self, target: NodeId, evidence: &[(NodeId, usize)]) -> Result<Vec<f64>> {
        let restricted = self.restrict(
            |a| evidence.iter().all(|&(n, v)| a.get(n) == v),
            || format!("evidence {evidence:?}"),
        )?;
        Ok(restricted.marginal(target))
    }

    /// Total-variation distance to another table of the same shape.
    pub fn tv_distance(&self, other: &[f64]) -> f64 {
        tv_distance(&self.probs, other)
    }
}

/// Half the L1 distance between two equal-length probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "tv_distance over tables of different size");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A set of sampled assignments together with the number of trials it took.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentEnsemble {
    pub samples: Vec<Assignment>,
    pub trials: u64,
}

impl AssignmentEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn keep_rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.trials as f64
    }

    /// Dense counts in the index order of an [`ExactJoint`] of the same model.
    pub fn counts(&self, cards: &[usize]) -> Vec<u64> {
        let total: usize = cards.iter().product();
        let mut counts = vec![0u64; total];
        for a in &self.samples {
            let i = a.0.iter().zip(cards).fold(0, |acc, (&v, &c)| acc * c + v);
            counts[i] += 1;
        }
        counts
    }

    /// Normalized empirical joint.
    pub fn frequencies(&self, cards: &[usize]) -> Vec<f64> {
        let n = self.samples.len().max(1) as f64;
        self.counts(cards).into_iter().map(|c| c as f64 / n).collect()
    }

    /// Empirical TV distance to an exact table.
    pub fn tv_to(&self, joint: &ExactJoint) -> f64 {
        joint.tv_distance(&self.frequencies(joint.cardinalities()))
    }

    /// Empirical `P(target = value | evidence)`, or `None` if no sample
    /// matches the evidence.
    pub fn conditional_freq(
        &self,
        target: NodeId,
        value: usize,
        evidence: &[(NodeId, usize)],
    ) -> Option<f64> {
        let matching: Vec<&Assignment> = self
            .samples
            .iter()
            .filter(|a| evidence.iter().all(|&(n, v)| a.get(n) == v))
            .collect();
        if matching.is_empty() {
            return None;
        }
        let hits = matching.iter().filter(|a| a.get(target) == value).count();
        Some(hits as f64 / matching.len() as f64)
    }
}

/// `n` forward samples, trial `i` drawn from stream `i`.
pub fn forward_sample(model: &CausalModel, n: usize, streams: &StreamFactory) -> AssignmentEnsemble {
    use rayon::prelude::*;
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| model.sample(&mut streams.stream(i)))
        .collect();
    AssignmentEnsemble { samples, trials: n as u64 }
}

/// Runs exactly `n_trials` forward samples and keeps those admitted by the
/// constraint.
pub fn filter_sample(
    model: &CausalModel,
    constraint: &ColliderConstraint,
    n_trials: usize,
    streams: &StreamFactory,
) -> Result<AssignmentEnsemble> {
    constraint.check(model)?;
    let mut all = forward_sample(model, n_trials, streams);
    all.samples.retain(|a| constraint.admits(a));
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RejectionOptions {
    pub max_trials: u64,
}

impl Default for RejectionOptions {
    fn default() -> Self {
        RejectionOptions { max_trials: DEFAULT_MAX_TRIALS }
    }
}

/// Discard mechanism: forward-sample until `n_kept` rounds satisfy the
/// constraint. Trial `i` uses stream `i`.
pub fn rejection_sample(
    model: &CausalModel,
    constraint: &ColliderConstraint,
    n_kept: usize,
    streams: &StreamFactory,
    options: RejectionOptions,
) -> Result<AssignmentEnsemble> {
    constraint.check(model)?;
    let collected = collect_until_kept(n_kept, options.max_trials, false, |i| {
        let a = model.sample(&mut streams.stream(i));
        let keep = constraint.admits(&a);
        (a, keep)
    });
    match collected {
        Ok(c) => Ok(AssignmentEnsemble { samples: c.items, trials: c.trials }),
        Err(c) => Err(CausalError::BudgetExceeded { kept: c.kept, wanted: n_kept, trials: c.trials }),
    }
}

/// Same trials as [`rejection_sample`], discarded ones included, each tagged
/// with whether it was kept.
pub fn rejection_trace(
    model: &CausalModel,
    constraint: &ColliderConstraint,
    n_kept: usize,
    streams: &StreamFactory,
    options: RejectionOptions,
) -> Result<Vec<(Assignment, bool)>> {
    constraint.check(model)?;
    let collected = collect_until_kept(n_kept, options.max_trials, true, |i| {
        let a = model.sample(&mut streams.stream(i));
        let keep = constraint.admits(&a);
        ((a, keep), keep)
    });
    collected
        .map(|c| c.items)
        .map_err(|c| CausalError::BudgetExceeded { kept: c.kept, wanted: n_kept, trials: c.trials })
}

/// Exact conditional sampler for a constrained collider. Its draws follow
/// `condition(exact_joint(model), constraint)` and it never rejects.
#[derive(Debug, Clone)]
pub struct ConstrainedSampler {
    joint: ExactJoint,
    support: Vec<usize>,
    cumulative: Vec<f64>,
}

/// Builds a [`ConstrainedSampler`] by enumerating the joint and tabulating
/// the conditional CDF over its support.
pub fn constrain(model: &CausalModel, constraint: &ColliderConstraint) -> Result<ConstrainedSampler> {
    constraint.check(model)?;
    let joint = condition(&exact_joint(model)?, constraint)?;
    let mut support = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for (i, &p) in joint.probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            support.push(i);
            cumulative.push(acc);
        }
    }
    Ok(ConstrainedSampler { joint, support, cumulative })
}

impl ConstrainedSampler {
    /// The conditional table the sampler draws from.
    pub fn joint(&self) -> &ExactJoint {
        &self.joint
    }

    /// Always 1: nothing is ever discarded.
    pub fn keep_rate(&self) -> f64 {
        1.0
    }

    /// Probability of the constraint event under the unconstrained model.
    pub fn event_probability(&self) -> f64 {
        self.joint.keep_rate
    }

    pub fn draw(&self, stream: &mut RandomStream) -> Assignment {
        let u = stream.uniform() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.support.len() - 1);
        self.joint.assignment_of(self.support[k])
    }

    pub fn draw_n(&self, n: usize, streams: &StreamFactory) -> AssignmentEnsemble {
        use rayon::prelude::*;
        let samples = (0..n as u64)
            .into_par_iter()
            .map(|i| self.draw(&mut streams.stream(i)))
            .collect();
        AssignmentEnsemble { samples, trials: n as u64 }
    }
}

/// do(node = value): cut the node's incoming edges and fix it.
pub fn intervene(model: &CausalModel, node: NodeId, value: usize) -> Result<CausalModel> {
    if node.0 >= model.node_count() {
        return Err(CausalError::InvalidModel(format!("unknown node {node}")));
    }
    let k = model.cardinality(node);
    if value >= k {
        return Err(CausalError::InvalidModel(format!(
            "value {value} out of range for node `{}` (cardinality {k})",
            model.node(node).name
        )));
    }
    let mut nodes = model.nodes.clone();
    let mut row = vec![0.0; k];
    row[value] = 1.0;
    nodes[node.0].parents.clear();
    nodes[node.0].cpt = vec![row];
    CausalModel::new(nodes)
}

/// Three views of how forcing `cause` bears on `target`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualReport {
    /// P(target | do(cause = v)) in the unconstrained model.
    pub interventional: Vec<f64>,
    /// P(target | cause = v, constraint): what a post-selected record shows.
    pub post_selected: Vec<f64>,
    /// P(target | do(cause = v), constraint): intervention in the constrained
    /// model.
    pub constrained_interventional: Vec<f64>,
    /// Whether `interventional` and `constrained_interventional` agree within
    /// [`EXACT_TOLERANCE`].
    pub intervention_unaffected_by_constraint: bool,
}

pub fn counterfactual_compare(
    model: &CausalModel,
    cause: NodeId,
    cause_value: usize,
    target: NodeId,
    constraint: Option<&ColliderConstraint>,
) -> Result<CounterfactualReport> {
    if target.0 >= model.node_count() {
        return Err(CausalError::InvalidModel(format!("unknown node {target}")));
    }
    if let Some(c) = constraint {
        c.check(model)?;
    }
    let forced = exact_joint(&intervene(model, cause, cause_value)?)?;
    let plain = exact_joint(model)?;
    let interventional = forced.marginal(target);
    let (post_selected, constrained_interventional) = match constraint {
        Some(c) => (
            condition(&plain.given(cause, cause_value)?, c)?.marginal(target),
            condition(&forced, c)?.marginal(target),
        ),
        None => (plain.given(cause, cause_value)?.marginal(target), interventional.clone()),
    };
    let agree = interventional
        .iter()
        .zip(&constrained_interventional)
        .all(|(a, b)| (a - b).abs() <= EXACT_TOLERANCE);
    Ok(CounterfactualReport {
        interventional,
        post_selected,
        constrained_interventional,
        intervention_unaffected_by_constraint: agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collider(p_a: f64, p_b: f64) -> (CausalModel, NodeId, NodeId, NodeId) {
        let mut b = ModelBuilder::new();
        let a = b.root("A", vec![1.0 - p_a, p_a]);
        let bb = b.root("B", vec![1.0 - p_b, p_b]);
        let c = b.deterministic("C", &[a, bb], 2, |pv| pv[0] | pv[1]);
        (b.build().unwrap(), a, bb, c)
    }

    fn coins() -> CausalModel {
        let mut b = ModelBuilder::new();
        b.root("x", vec![0.5, 0.5]);
        b.root("y", vec![0.5, 0.5]);
        b.build().unwrap()
    }

    #[test]
    fn topo_order_collider_puts_child_last() {
        let (m, a, b, c) = collider(0.1, 0.1);
        assert_eq!(m.topo_order(), &[a, b, c]);
        // Child listed first still comes out last.
        let nodes = vec![
            Node::new("C", vec![NodeId(1), NodeId(2)], 2, vec![vec![1.0, 0.0]; 4]),
            Node::root("A", vec![0.5, 0.5]),
            Node::root("B", vec![0.5, 0.5]),
        ];
        assert_eq!(topo_order(&nodes).unwrap(), vec![NodeId(1), NodeId(2), NodeId(0)]);
    }

    #[test]
    fn topo_order_single_node() {
        let nodes = vec![Node::root("solo", vec![0.2, 0.8])];
        assert_eq!(topo_order(&nodes).unwrap(), vec![NodeId(0)]);
    }

    #[test]
    fn topo_order_detects_cycle() {
        let nodes = vec![
            Node::new("A", vec![NodeId(1)], 2, vec![vec![1.0, 0.0]; 2]),
            Node::new("B", vec![NodeId(0)], 2, vec![vec![1.0, 0.0]; 2]),
        ];
        assert!(matches!(topo_order(&nodes), Err(CausalError::Cycle(_))));
        assert!(matches!(CausalModel::new(nodes), Err(CausalError::Cycle(_))));
    }

    #[test]
    fn rejects_malformed_cpts() {
        let bad_sum = vec![Node::root("A", vec![0.5, 0.6])];
        assert!(matches!(CausalModel::new(bad_sum), Err(CausalError::InvalidModel(_))));
        let negative = vec![Node::root("A", vec![1.5, -0.5])];
        assert!(matches!(CausalModel::new(negative), Err(CausalError::InvalidModel(_))));
        let rows = vec![
            Node::root("A", vec![0.5, 0.5]),
            Node::new("B", vec![NodeId(0)], 2, vec![vec![0.5, 0.5]]),
        ];
        assert!(matches!(CausalModel::new(rows), Err(CausalError::InvalidModel(_))));
        let unary = vec![Node::root("A", vec![1.0])];
        assert!(matches!(CausalModel::new(unary), Err(CausalError::InvalidModel(_))));
    }

    #[test]
    fn deterministic_model_samples_unique_assignment() {
        let mut b = ModelBuilder::new();
        let r = b.root("r", vec![0.0, 0.0, 1.0]);
        let s = b.deterministic("s", &[r], 3, |pv| (pv[0] + 1) % 3);
        b.deterministic("t", &[r, s], 2, |pv| usize::from(pv[0] > pv[1]));
        let m = b.build().unwrap();
        let f = StreamFactory::new(3);
        for i in 0..50 {
            assert_eq!(m.sample(&mut f.stream(i)), Assignment(vec![2, 0, 1]));
        }
    }

    #[test]
    fn exact_joint_independent_coins() {
        let j = exact_joint(&coins()).unwrap();
        assert_eq!(j.probs(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn exact_joint_collider_values() {
        let (m, a, b, _) = collider(0.01, 0.01);
        let j = exact_joint(&m).unwrap();
        assert!((j.total() - 1.0).abs() < 1e-12);
        let both = j.event_prob(|x| x.get(a) == 1 && x.get(b) == 1);
        assert!((both - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn exact_joint_guard() {
        let nodes: Vec<Node> = (0..24).map(|i| Node::root(format!("n{i}"), vec![0.5, 0.5])).collect();
        let m = CausalModel::new(nodes).unwrap();
        assert!(matches!(exact_joint(&m), Err(CausalError::TooLarge { .. })));
    }

    #[test]
    fn condition_on_admission() {
        let (m, a, b, c) = collider(0.01, 0.01);
        let j = exact_joint(&m).unwrap();
        let admitted = condition(&j, &ColliderConstraint::single(c, 1)).unwrap();
        // P(A or B) = pA + pB - pA pB
        assert!((admitted.keep_rate() - 0.0199).abs() < 1e-12);
        let p = admitted.conditional(b, &[(a, 0)]).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuous_condition_is_identity() {
        let (m, _, _, c) = collider(0.3, 0.2);
        let j = exact_joint(&m).unwrap();
        let same = condition(&j, &ColliderConstraint::new(c, [0, 1]).unwrap()).unwrap();
        assert_eq!(same.keep_rate(), 1.0);
        assert!(j.tv_distance(same.probs()) < 1e-15);
    }

    #[test]
    fn condition_zero_support() {
        let mut b = ModelBuilder::new();
        let x = b.root("x", vec![1.0, 0.0]);
        let m = b.build().unwrap();
        let j = exact_joint(&m).unwrap();
        let r = condition(&j, &ColliderConstraint::single(x, 1));
        assert!(matches!(r, Err(CausalError::ZeroSupport(_))));
        assert!(matches!(constrain(&m, &ColliderConstraint::single(x, 1)), Err(CausalError::ZeroSupport(_))));
    }

    #[test]
    fn constraint_validation() {
        let (m, _, _, c) = collider(0.3, 0.2);
        assert!(ColliderConstraint::new(c, []).is_err());
        let out_of_range = ColliderConstraint::single(c, 5);
        assert!(matches!(out_of_range.check(&m), Err(CausalError::InvalidConstraint(_))));
        let bogus = ColliderConstraint::single(NodeId(9), 0);
        assert!(bogus.check(&m).is_err());
    }

    #[test]
    fn fair_coin_frequency() {
        let mut b = ModelBuilder::new();
        let x = b.root("x", vec![0.5, 0.5]);
        let m = b.build().unwrap();
        let e = forward_sample(&m, 2_000_000, &StreamFactory::new(2024));
        let zeros = e.samples.iter().filter(|a| a.get(x) == 0).count() as f64 / 2e6;
        assert!((zeros - 0.5).abs() < 0.002, "{zeros}");
    }

    #[test]
    fn rejection_budget_exceeded() {
        let mut b = ModelBuilder::new();
        let x = b.root("x", vec![1.0 - 1e-9, 1e-9]);
        let m = b.build().unwrap();
        let r = rejection_sample(
            &m,
            &ColliderConstraint::single(x, 1),
            10,
            &StreamFactory::new(1),
            RejectionOptions { max_trials: 10_000 },
        );
        assert!(matches!(r, Err(CausalError::BudgetExceeded { trials: 10_000, .. })));
    }

    #[test]
    fn vacuous_rejection_keeps_everything() {
        let (m, _, _, c) = collider(0.3, 0.2);
        let f = StreamFactory::new(5);
        let vac = ColliderConstraint::new(c, [0, 1]).unwrap();
        let r = rejection_sample(&m, &vac, 1000, &f, RejectionOptions::default()).unwrap();
        assert_eq!(r.trials, 1000);
        assert_eq!(r.keep_rate(), 1.0);
        assert_eq!(r.samples, forward_sample(&m, 1000, &f).samples);
    }

    #[test]
    fn trace_matches_rejection_sample() {
        let (m, _, _, c) = collider(0.2, 0.1);
        let cons = ColliderConstraint::single(c, 1);
        let f = StreamFactory::new(12);
        let kept = rejection_sample(&m, &cons, 500, &f, RejectionOptions::default()).unwrap();
        let trace = rejection_trace(&m, &cons, 500, &f, RejectionOptions::default()).unwrap();
        assert_eq!(trace.len() as u64, kept.trials);
        let from_trace: Vec<Assignment> = trace.into_iter().filter(|(_, k)| *k).map(|(a, _)| a).collect();
        assert_eq!(from_trace, kept.samples);
    }

    #[test]
    fn constrained_sampler_never_leaves_support() {
        let (m, _, _, c) = collider(0.05, 0.05);
        let s = constrain(&m, &ColliderConstraint::single(c, 1)).unwrap();
        assert_eq!(s.keep_rate(), 1.0);
        let e = s.draw_n(20_000, &StreamFactory::new(8));
        assert_eq!(e.keep_rate(), 1.0);
        assert!(e.samples.iter().all(|a| a.get(c) == 1 && s.joint().prob(a) > 0.0));
    }

    #[test]
    fn intervene_on_root_equals_conditioning() {
        let (m, a, b, c) = collider(0.3, 0.2);
        let forced = exact_joint(&intervene(&m, a, 1).unwrap()).unwrap();
        let given = exact_joint(&m).unwrap().given(a, 1).unwrap();
        assert!(forced.tv_distance(given.probs()) < 1e-15);
        assert_eq!(forced.marginal(b), given.marginal(b));
        assert_eq!(forced.marginal(c), given.marginal(c));
    }

    #[test]
    fn intervene_cuts_parents() {
        let (m, _, _, c) = collider(0.3, 0.2);
        let forced = intervene(&m, c, 0).unwrap();
        assert!(forced.node(c).parents.is_empty());
        assert_eq!(forced.node(c).cpt, vec![vec![1.0, 0.0]]);
        assert!(intervene(&m, c, 2).is_err());
    }

    #[test]
    fn collider_do_versus_selection() {
        let (m, a, b, c) = collider(0.01, 0.01);
        for v in 0..2 {
            let forced = exact_joint(&intervene(&m, a, v).unwrap()).unwrap();
            let prior = forced.marginal(b);
            assert!((prior[1] - 0.01).abs() < 1e-12);
            let selected = exact_joint(&m)
                .unwrap()
                .conditional(b, &[(a, v), (c, 1)])
                .unwrap();
            let expected = if v == 0 { 1.0 } else { 0.01 };
            assert!((selected[1] - expected).abs() < 1e-12);
        }
        // Among the admitted the gap is 0.01 - 1.
        let j = exact_joint(&m).unwrap();
        let p1 = j.conditional(b, &[(a, 1), (c, 1)]).unwrap()[1];
        let p0 = j.conditional(b, &[(a, 0), (c, 1)]).unwrap()[1];
        assert!((p1 - p0 + 0.99).abs() < 1e-12);
    }

    #[test]
    fn counterfactual_without_constraint() {
        let (m, a, b, _) = collider(0.3, 0.2);
        let r = counterfactual_compare(&m, a, 1, b, None).unwrap();
        assert_eq!(r.post_selected, r.interventional);
        assert_eq!(r.constrained_interventional, r.interventional);
        assert!(r.intervention_unaffected_by_constraint);
    }

    #[test]
    fn counterfactual_with_collider_constraint() {
        let (m, a, b, c) = collider(0.01, 0.01);
        let cons = ColliderConstraint::single(c, 1);
        let r = counterfactual_compare(&m, a, 0, b, Some(&cons)).unwrap();
        assert!((r.interventional[1] - 0.01).abs() < 1e-12);
        assert!((r.post_selected[1] - 1.0).abs() < 1e-12);
        assert!((r.constrained_interventional[1] - 1.0).abs() < 1e-12);
        assert!(!r.intervention_unaffected_by_constraint);
    }

    #[test]
    fn mixed_radix_order() {
        let all: Vec<Vec<usize>> = mixed_radix(&[2, 3]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[3], vec![1, 0]);
        let j = exact_joint(&coins()).unwrap();
        for i in 0..j.len() {
            assert_eq!(j.index_of(&j.assignment_of(i)), i);
        }
    }
}
