//! Estimators over simulated rounds.
//!
//! Every statistic here is a function of an integer [`CountsTable`], so a
//! report recomputed from a serialized ensemble is bit-identical to the
//! original.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{chsh_combination, pair_index, pair_product, ConditionalTable, Outcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("EmptyEnsembleError: no kept rounds")]
    EmptyEnsemble,
    #[error("EmptyCellError: no kept rounds for setting pair ({0}, {1})")]
    EmptyCell(usize, usize),
    #[error("mismatched setting alphabets: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("setting index out of range: {0}")]
    SettingOutOfRange(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// One play: two settings, two outcomes, and whether the round was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoundRecord {
    pub setting_a: usize,
    pub setting_b: usize,
    pub outcome_a: Outcome,
    pub outcome_b: Outcome,
    pub kept: bool,
}

/// Rounds of one run. `records` holds every trial when discarded rounds were
/// retained, otherwise only the kept ones; `trials` always counts all of
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub records: Vec<RoundRecord>,
    pub trials: u64,
    pub seed: u64,
    pub scenario_id: String,
    pub n_settings_a: usize,
    pub n_settings_b: usize,
}

impl Ensemble {
    pub fn kept(&self) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter(|r| r.kept)
    }

    pub fn n_kept(&self) -> u64 {
        self.kept().count() as u64
    }

    pub fn keep_rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.n_kept() as f64 / self.trials as f64
    }

    /// Counts over kept rounds.
    pub fn counts(&self) -> CountsTable {
        CountsTable::from_records(self.n_settings_a, self.n_settings_b, self.kept())
    }

    /// Counts over every retained record, kept or not: the pre-filter view.
    pub fn all_counts(&self) -> CountsTable {
        CountsTable::from_records(self.n_settings_a, self.n_settings_b, self.records.iter())
    }
}

/// Integer counts over `(setting_a, setting_b, outcome pair)`, outcome pairs
/// in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    n_a: usize,
    n_b: usize,
    cells: Vec<[u64; 4]>,
}

impl CountsTable {
    pub fn zeros(n_a: usize, n_b: usize) -> Self {
        CountsTable { n_a, n_b, cells: vec![[0; 4]; n_a * n_b] }
    }

    pub fn from_records<'a>(n_a: usize, n_b: usize, records: impl Iterator<Item = &'a RoundRecord>) -> Self {
        let mut t = Self::zeros(n_a, n_b);
        for r in records {
            t.cells[r.setting_a * n_b + r.setting_b][pair_index(r.outcome_a, r.outcome_b)] += 1;
        }
        t
    }

    /// From a dense nested array `[a][b][pair]`.
    pub fn from_nested(nested: &[Vec<[u64; 4]>]) -> Result<Self> {
        let n_a = nested.len();
        let n_b = nested.first().map_or(0, |r| r.len());
        if nested.iter().any(|r| r.len() != n_b) {
            return Err(StatsError::ShapeMismatch((n_a, n_b), (n_a, 0)));
        }
        Ok(CountsTable { n_a, n_b, cells: nested.iter().flatten().copied().collect() })
    }

    pub fn to_nested(&self) -> Vec<Vec<[u64; 4]>> {
        (0..self.n_a).map(|a| (0..self.n_b).map(|b| *self.cell(a, b)).collect()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn cell(&self, a: usize, b: usize) -> &[u64; 4] {
        &self.cells[a * self.n_b + b]
    }

    pub fn cell_total(&self, a: usize, b: usize) -> u64 {
        self.cell(a, b).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    fn check(&self, a: usize, b: usize) -> Result<()> {
        if a >= self.n_a || b >= self.n_b {
            return Err(StatsError::SettingOutOfRange(format!(
                "({a}, {b}) in a {}x{} alphabet",
                self.n_a, self.n_b
            )));
        }
        Ok(())
    }

    /// Normalized row for one pair, or `None` when the cell is empty.
    pub fn frequencies(&self, a: usize, b: usize) -> Option<[f64; 4]> {
        let n = self.cell_total(a, b);
        if n == 0 {
            return None;
        }
        let c = self.cell(a, b);
        Some(std::array::from_fn(|i| c[i] as f64 / n as f64))
    }
}

/// Per-pair empirical outcome tables; empty cells stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalJoint {
    pub n_a: usize,
    pub n_b: usize,
    pub rows: Vec<Option<[f64; 4]>>,
}

impl EmpiricalJoint {
    pub fn row(&self, a: usize, b: usize) -> Option<&[f64; 4]> {
        self.rows[a * self.n_b + b].as_ref()
    }

    /// Largest per-pair TV distance to an exact target, over populated cells.
    pub fn max_tv_to(&self, target: &ConditionalTable) -> Result<f64> {
        if target.shape() != (self.n_a, self.n_b) {
            return Err(StatsError::ShapeMismatch(target.shape(), (self.n_a, self.n_b)));
        }
        let mut worst = 0.0f64;
        for a in 0..self.n_a {
            for b in 0..self.n_b {
                if let Some(row) = self.row(a, b) {
                    worst = worst.max(tv4(row, target.row(a, b).probs()));
                }
            }
        }
        Ok(worst)
    }
}

pub fn tv4(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn empirical_joint(counts: &CountsTable) -> Result<EmpiricalJoint> {
    if counts.total() == 0 {
        return Err(StatsError::EmptyEnsemble);
    }
    let (n_a, n_b) = counts.shape();
    let rows = (0..n_a)
        .flat_map(|a| (0..n_b).map(move |b| (a, b)))
        .map(|(a, b)| counts.frequencies(a, b))
        .collect();
    Ok(EmpiricalJoint { n_a, n_b, rows })
}

/// Mean of `outcome_a · outcome_b` over kept rounds with this setting pair.
pub fn correlation_e(counts: &CountsTable, a: usize, b: usize) -> Result<f64> {
    counts.check(a, b)?;
    let n = counts.cell_total(a, b);
    if n == 0 {
        return Err(StatsError::EmptyCell(a, b));
    }
    let c = counts.cell(a, b);
    // Integer numerator keeps this exact up to the final division.
    let signed: i64 = (0..4).map(|i| pair_product(i) as i64 * c[i] as i64).sum();
    Ok(signed as f64 / n as f64)
}

/// All populated E values, `None` for empty cells.
pub fn e_values(counts: &CountsTable) -> Vec<Vec<Option<f64>>> {
    let (n_a, n_b) = counts.shape();
    (0..n_a)
        .map(|a| (0..n_b).map(|b| correlation_e(counts, a, b).ok()).collect())
        .collect()
}

/// Setting-alphabet indices that play the CHSH roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChshIndices {
    pub a0: usize,
    pub a1: usize,
    pub b0: usize,
    pub b1: usize,
}

impl Default for ChshIndices {
    fn default() -> Self {
        ChshIndices { a0: 0, a1: 1, b0: 0, b1: 1 }
    }
}

pub fn chsh_s(counts: &CountsTable, s: ChshIndices) -> Result<f64> {
    Ok(chsh_combination(
        correlation_e(counts, s.a0, s.b0)?,
        correlation_e(counts, s.a0, s.b1)?,
        correlation_e(counts, s.a1, s.b0)?,
        correlation_e(counts, s.a1, s.b1)?,
    ))
}

/// Worst spread, across the other party's settings, of one party's outcome
/// probability given its own setting. Both parties are checked.
fn spread_over<F>(n_a: usize, n_b: usize, row: F) -> f64
where
    F: Fn(usize, usize) -> [f64; 4],
{
    let spread = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    let mut worst = 0.0f64;
    for b in 0..n_b {
        // P(outcome_b = +1 | a, b); the -1 spread is identical.
        let s = spread(&mut (0..n_a).map(|a| {
            let r = row(a, b);
            r[0] + r[2]
        }));
        worst = worst.max(s);
    }
    for a in 0..n_a {
        let s = spread(&mut (0..n_b).map(|b| {
            let r = row(a, b);
            r[0] + r[1]
        }));
        worst = worst.max(s);
    }
    worst
}

/// Empirical no-signalling violation.
pub fn nosignal_delta(counts: &CountsTable) -> Result<f64> {
    let (n_a, n_b) = counts.shape();
    for a in 0..n_a {
        for b in 0..n_b {
            if counts.cell_total(a, b) == 0 {
                return Err(StatsError::EmptyCell(a, b));
            }
        }
    }
    Ok(spread_over(n_a, n_b, |a, b| counts.frequencies(a, b).expect("checked non-empty")))
}

/// The same quantity for an exact target table.
pub fn nosignal_delta_exact(table: &ConditionalTable) -> f64 {
    spread_over(table.n_a(), table.n_b(), |a, b| *table.row(a, b).probs())
}

/// `sigmas`-standard-error allowance for [`nosignal_delta`] under the
/// no-signalling hypothesis, from the two smallest cells sharing a setting.
pub fn nosignal_tolerance(counts: &CountsTable, sigmas: f64) -> f64 {
    let (n_a, n_b) = counts.shape();
    let mut worst = 0.0f64;
    let mut consider = |mut ns: Vec<u64>| {
        if ns.len() < 2 {
            return;
        }
        ns.sort_unstable();
        let (n1, n2) = (ns[0].max(1) as f64, ns[1].max(1) as f64);
        // Binary outcome, variance at most 1/4.
        worst = worst.max(sigmas * 0.5 * (1.0 / n1 + 1.0 / n2).sqrt());
    };
    for b in 0..n_b {
        consider((0..n_a).map(|a| counts.cell_total(a, b)).collect());
    }
    for a in 0..n_a {
        consider((0..n_b).map(|b| counts.cell_total(a, b)).collect());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Association {
    pub phi: f64,
    /// A row or column marginal was zero; `phi` is reported as 0.
    pub degenerate: bool,
}

/// Phi coefficient of a 2x2 table `t[x][y]`.
pub fn association_2x2(t: [[f64; 2]; 2]) -> Association {
    let r0 = t[0][0] + t[0][1];
    let r1 = t[1][0] + t[1][1];
    let c0 = t[0][0] + t[1][0];
    let c1 = t[0][1] + t[1][1];
    let denom = r0 * r1 * c0 * c1;
    if denom <= 0.0 {
        return Association { phi: 0.0, degenerate: true };
    }
    Association { phi: (t[1][1] * t[0][0] - t[1][0] * t[0][1]) / denom.sqrt(), degenerate: false }
}

/// Cramér's V of an `r x c` contingency table. Zero if any margin vanishes.
pub fn cramers_v(t: &[Vec<f64>]) -> f64 {
    let rows = t.len();
    let cols = t.first().map_or(0, |r| r.len());
    if rows < 2 || cols < 2 {
        return 0.0;
    }
    let n: f64 = t.iter().flatten().sum();
    let row_sum: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let col_sum: Vec<f64> = (0..cols).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    if n <= 0.0 || row_sum.iter().chain(&col_sum).any(|&m| m <= 0.0) {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let e = row_sum[i] * col_sum[j] / n;
            chi2 += (t[i][j] - e).powi(2) / e;
        }
    }
    let k = (rows.min(cols) - 1) as f64;
    (chi2 / (n * k)).sqrt()
}

/// Phi between the two outcomes, pooled over all kept rounds.
pub fn outcome_association(counts: &CountsTable) -> f64 {
    let mut t = [[0.0; 2]; 2];
    let (n_a, n_b) = counts.shape();
    for a in 0..n_a {
        for b in 0..n_b {
            let c = counts.cell(a, b);
            // Index 1 stands for +1.
            t[1][1] += c[0] as f64;
            t[1][0] += c[1] as f64;
            t[0][1] += c[2] as f64;
            t[0][0] += c[3] as f64;
        }
    }
    association_2x2(t).phi
}

/// Cramér's V between the setting pair and the outcome pair.
pub fn setting_outcome_association(counts: &CountsTable) -> f64 {
    let (n_a, n_b) = counts.shape();
    let t: Vec<Vec<f64>> = (0..n_a)
        .flat_map(|a| (0..n_b).map(move |b| (a, b)))
        .map(|(a, b)| counts.cell(a, b).iter().map(|&c| c as f64).collect())
        .collect();
    cramers_v(&t)
}

/// Plug-in mutual information, in bits, of paired discrete samples.
pub fn mutual_information(samples: &[(usize, usize)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut xs: HashMap<usize, u64> = HashMap::new();
    let mut ys: HashMap<usize, u64> = HashMap::new();
    for &(x, y) in samples {
        *joint.entry((x, y)).or_default() += 1;
        *xs.entry(x).or_default() += 1;
        *ys.entry(y).or_default() += 1;
    }
    if xs.len() < 2 || ys.len() < 2 {
        return 0.0;
    }
    let n = samples.len() as f64;
    // Sorted so the floating-point sum is order-independent.
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .into_iter()
        .map(|((x, y), c)| {
            let pxy = c as f64 / n;
            let px = xs[&x] as f64 / n;
            let py = ys[&y] as f64 / n;
            pxy * (pxy / (px * py)).log2()
        })
        .sum();
    mi.max(0.0)
}

/// Everything the acceptance checks read off one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub counts: CountsTable,
    pub e_values: Vec<Vec<Option<f64>>>,
    pub chsh_s: Option<f64>,
    pub keep_rate: f64,
    pub nosignal_delta: Option<f64>,
    pub association: f64,
    pub n_kept: u64,
    pub n_trials: u64,
}

impl StatsReport {
    /// CHSH is computed only when `chsh` roles are given; the no-signalling
    /// delta only when every cell is populated.
    pub fn from_ensemble(e: &Ensemble, chsh: Option<ChshIndices>) -> Result<Self> {
        let counts = e.counts();
        if counts.total() == 0 {
            return Err(StatsError::EmptyEnsemble);
        }
        let chsh_s = chsh.map(|s| chsh_s(&counts, s)).transpose()?;
        Ok(StatsReport {
            e_values: e_values(&counts),
            chsh_s,
            keep_rate: e.keep_rate(),
            nosignal_delta: nosignal_delta(&counts).ok(),
            association: outcome_association(&counts),
            n_kept: counts.total(),
            n_trials: e.trials,
            counts,
        })
    }
}
