//! Spin-singlet target statistics.
//!
//! Outcomes are `+1`/`-1`. Outcome pairs are always laid out in the canonical
//! order `(+,+), (+,-), (-,+), (-,-)`.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on row sums and marginals of an outcome-pair table.
pub const TABLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("invalid target distribution: {0}")]
    InvalidDistribution(String),
    #[error("target table needs at least one setting on each side")]
    Empty,
    #[error("non-finite measurement angle")]
    NonFiniteAngle,
}

/// A measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            1 => Some(Outcome::Plus),
            -1 => Some(Outcome::Minus),
            _ => None,
        }
    }

    /// Heads maps to `+1`.
    pub fn from_coin(heads: bool) -> Self {
        if heads {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    fn bit(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Plus => "+1",
            Outcome::Minus => "-1",
        })
    }
}

/// Index of `(a, b)` in the canonical outcome-pair order.
pub fn pair_index(a: Outcome, b: Outcome) -> usize {
    2 * a.bit() + b.bit()
}

/// Inverse of [`pair_index`].
pub fn pair_at(index: usize) -> (Outcome, Outcome) {
    const PAIRS: [(Outcome, Outcome); 4] = [
        (Outcome::Plus, Outcome::Plus),
        (Outcome::Plus, Outcome::Minus),
        (Outcome::Minus, Outcome::Plus),
        (Outcome::Minus, Outcome::Minus),
    ];
    PAIRS[index]
}

/// Product `a·b` for the pair at a canonical index.
pub fn pair_product(index: usize) -> f64 {
    let (a, b) = pair_at(index);
    f64::from(a.value() * b.value())
}

/// Analyzer angle in radians, normalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MeasurementAngle(f64);

impl MeasurementAngle {
    pub fn new(theta: f64) -> Result<Self, TargetError> {
        if !theta.is_finite() {
            return Err(TargetError::NonFiniteAngle);
        }
        let mut t = theta.rem_euclid(TAU);
        if t >= TAU {
            t = 0.0;
        }
        Ok(MeasurementAngle(t))
    }

    pub fn from_degrees(deg: f64) -> Result<Self, TargetError> {
        Self::new(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

/// Joint law of one outcome pair, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomePairDistribution {
    p: [f64; 4],
}

impl OutcomePairDistribution {
    /// Accepts any non-negative row summing to 1. Marginals are not checked
    /// here: signalling devices are representable on purpose.
    pub fn new(p: [f64; 4]) -> Result<Self, TargetError> {
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(TargetError::InvalidDistribution(format!(
                "row {p:?} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > TABLE_TOLERANCE {
            return Err(TargetError::InvalidDistribution(format!("row {p:?} sums to {sum}")));
        }
        Ok(OutcomePairDistribution { p })
    }

    /// Two independent fair outcomes.
    pub fn uniform() -> Self {
        OutcomePairDistribution { p: [0.25; 4] }
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.p
    }

    pub fn get(&self, a: Outcome, b: Outcome) -> f64 {
        self.p[pair_index(a, b)]
    }

    /// P(a = +1).
    pub fn alice_plus(&self) -> f64 {
        self.p[0] + self.p[1]
    }

    /// P(b = +1).
    pub fn bob_plus(&self) -> f64 {
        self.p[0] + self.p[2]
    }

    pub fn correlation(&self) -> f64 {
        (0..4).map(|i| pair_product(i) * self.p[i]).sum()
    }

    pub fn p_different(&self) -> f64 {
        self.p[1] + self.p[2]
    }

    pub fn max_entry(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }

    pub fn has_uniform_marginals(&self) -> bool {
        (self.alice_plus() - 0.5).abs() <= TABLE_TOLERANCE
            && (self.bob_plus() - 0.5).abs() <= TABLE_TOLERANCE
    }

    pub fn tv_distance(&self, other: &Self) -> f64 {
        0.5 * self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Singlet law: `p(a, b) = (1 - a·b·cos(θa - θb)) / 4`.
pub fn singlet_joint(theta_a: MeasurementAngle, theta_b: MeasurementAngle) -> OutcomePairDistribution {
    let c = (theta_a.0 - theta_b.0).cos();
    let mut p = [0.0; 4];
    for (i, slot) in p.iter_mut().enumerate() {
        *slot = ((1.0 - pair_product(i) * c) / 4.0).max(0.0);
    }
    OutcomePairDistribution { p }
}

/// Singlet correlation `E = -cos(θa - θb)`.
pub fn correlation(theta_a: MeasurementAngle, theta_b: MeasurementAngle) -> f64 {
    -(theta_a.0 - theta_b.0).cos()
}

/// Angles for a CHSH combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a0: MeasurementAngle,
    pub a1: MeasurementAngle,
    pub b0: MeasurementAngle,
    pub b1: MeasurementAngle,
}

impl ChshSettings {
    /// `a ∈ {0, π/2}`, `b ∈ {π/4, 3π/4}`: the maximal-violation quadruple.
    pub fn standard() -> Self {
        ChshSettings {
            a0: MeasurementAngle(0.0),
            a1: MeasurementAngle(PI / 2.0),
            b0: MeasurementAngle(PI / 4.0),
            b1: MeasurementAngle(3.0 * PI / 4.0),
        }
    }
}

/// `S = E(a0,b0) - E(a0,b1) + E(a1,b0) + E(a1,b1)`.
pub fn chsh_combination(e00: f64, e01: f64, e10: f64, e11: f64) -> f64 {
    e00 - e01 + e10 + e11
}

pub fn chsh_value(s: &ChshSettings) -> f64 {
    chsh_combination(
        correlation(s.a0, s.b0),
        correlation(s.a0, s.b1),
        correlation(s.a1, s.b0),
        correlation(s.a1, s.b1),
    )
}

/// Target outcome law for every `(setting_a, setting_b)` pair of two
/// finite setting alphabets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    n_a: usize,
    n_b: usize,
    rows: Vec<OutcomePairDistribution>,
}

impl ConditionalTable {
    /// `rows` is row-major: index `a * n_b + b`.
    pub fn new(n_a: usize, n_b: usize, rows: Vec<OutcomePairDistribution>) -> Result<Self, TargetError> {
        if n_a == 0 || n_b == 0 {
            return Err(TargetError::Empty);
        }
        if rows.len() != n_a * n_b {
            return Err(TargetError::InvalidDistribution(format!(
                "{} rows for a {n_a}x{n_b} setting alphabet",
                rows.len()
            )));
        }
        Ok(ConditionalTable { n_a, n_b, rows })
    }

    /// Builds from raw canonical-order rows, validating each.
    pub fn from_raw(n_a: usize, n_b: usize, raw: &[[f64; 4]]) -> Result<Self, TargetError> {
        let rows = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                OutcomePairDistribution::new(*r).map_err(|e| match e {
                    TargetError::InvalidDistribution(m) => {
                        TargetError::InvalidDistribution(format!("setting pair {i}: {m}"))
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(n_a, n_b, rows)
    }

    /// Independent fair outcomes for every pair.
    pub fn product(n_a: usize, n_b: usize) -> Result<Self, TargetError> {
        Self::new(n_a, n_b, vec![OutcomePairDistribution::uniform(); n_a * n_b])
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn row(&self, a: usize, b: usize) -> &OutcomePairDistribution {
        &self.rows[a * self.n_b + b]
    }

    pub fn rows(&self) -> &[OutcomePairDistribution] {
        &self.rows
    }

    /// Largest single entry across all rows.
    pub fn max_entry(&self) -> f64 {
        self.rows.iter().map(|r| r.max_entry()).fold(0.0, f64::max)
    }

    pub fn correlations(&self) -> Vec<Vec<f64>> {
        (0..self.n_a)
            .map(|a| (0..self.n_b).map(|b| self.row(a, b).correlation()).collect())
            .collect()
    }
}

/// Singlet rows for every pair in `alice × bob`.
pub fn target_conditional(
    alice: &[MeasurementAngle],
    bob: &[MeasurementAngle],
) -> Result<ConditionalTable, TargetError> {
    let rows = alice
        .iter()
        .flat_map(|&ta| bob.iter().map(move |&tb| singlet_joint(ta, tb)))
        .collect();
    ConditionalTable::new(alice.len(), bob.len(), rows)
}

/// `{0°, 120°, 240°}`.
pub fn mermin_triple() -> Vec<MeasurementAngle> {
    [0.0, 120.0, 240.0]
        .into_iter()
        .map(|d| MeasurementAngle::from_degrees(d).expect("finite"))
        .collect()
}

/// Alice `{0°, 90°}`, Bob `{45°, 135°}`.
pub fn chsh_alphabets() -> (Vec<MeasurementAngle>, Vec<MeasurementAngle>) {
    let s = ChshSettings::standard();
    (vec![s.a0, s.a1], vec![s.b0, s.b1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn angle(t: f64) -> MeasurementAngle {
        MeasurementAngle::new(t).unwrap()
    }

    /// Direct 2x2 enumeration of Σ a·b·p(a,b), independent of pair indexing.
    fn enumerate_correlation(d: &OutcomePairDistribution) -> f64 {
        let mut e = 0.0;
        for a in [Outcome::Plus, Outcome::Minus] {
            for b in [Outcome::Plus, Outcome::Minus] {
                e += f64::from(a.value()) * f64::from(b.value()) * d.get(a, b);
            }
        }
        e
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(angle(TAU).radians(), 0.0);
        assert!((angle(-PI / 2.0).radians() - 1.5 * PI).abs() < 1e-15);
        assert!((MeasurementAngle::from_degrees(480.0).unwrap().degrees() - 120.0).abs() < 1e-9);
        assert!(MeasurementAngle::new(f64::NAN).is_err());
        assert!(MeasurementAngle::new(f64::INFINITY).is_err());
    }

    #[test]
    fn equal_settings_anticorrelated() {
        let d = singlet_joint(angle(0.7), angle(0.7));
        assert_eq!(d.get(Outcome::Plus, Outcome::Plus), 0.0);
        assert_eq!(d.get(Outcome::Minus, Outcome::Minus), 0.0);
        assert_eq!(d.get(Outcome::Plus, Outcome::Minus), 0.5);
        assert_eq!(d.get(Outcome::Minus, Outcome::Plus), 0.5);
    }

    #[test]
    fn opposite_settings_correlated() {
        let d = singlet_joint(angle(0.0), angle(PI));
        assert!(d.get(Outcome::Plus, Outcome::Minus).abs() < 1e-16);
        assert!(d.get(Outcome::Minus, Outcome::Plus).abs() < 1e-16);
    }

    #[test]
    fn third_turn_disagreement() {
        let d = singlet_joint(angle(0.0), angle(2.0 * PI / 3.0));
        assert!((d.p_different() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn correlation_values() {
        assert!((correlation(angle(1.0), angle(1.0)) + 1.0).abs() < 1e-15);
        assert!(correlation(angle(0.0), angle(PI / 2.0)).abs() < 1e-15);
        let e = correlation(angle(0.0), angle(PI / 4.0));
        assert!((e + SQRT2 / 2.0).abs() < 1e-15);
        assert!((e - enumerate_correlation(&singlet_joint(angle(0.0), angle(PI / 4.0)))).abs() < 1e-12);
    }

    #[test]
    fn chsh_standard_and_degenerate() {
        assert!((chsh_value(&ChshSettings::standard()).abs() - 2.0 * SQRT2).abs() < 1e-12);
        let z = angle(0.4);
        let s = ChshSettings { a0: z, a1: z, b0: z, b1: z };
        assert!((chsh_value(&s).abs() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tsirelson_grid_scan() {
        // E(θ + π) = -E(θ), so half a turn covers every |S|; 9° steps hit
        // the 45° offsets of the optimum.
        let n = 20;
        let grid: Vec<MeasurementAngle> = (0..n).map(|i| angle(PI * i as f64 / n as f64)).collect();
        let mut best = 0.0f64;
        for &a0 in &grid {
            for &a1 in &grid {
                for &b0 in &grid {
                    for &b1 in &grid {
                        let s = chsh_value(&ChshSettings { a0, a1, b0, b1 }).abs();
                        assert!(s <= 2.0 * SQRT2 + 1e-9);
                        best = best.max(s);
                    }
                }
            }
        }
        assert!((best - 2.0 * SQRT2).abs() < 1e-3, "{best}");
    }

    #[test]
    fn mermin_table() {
        let m = mermin_triple();
        let t = target_conditional(&m, &m).unwrap();
        assert_eq!(t.shape(), (3, 3));
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 1.0 } else { 0.25 };
                assert!((t.row(a, b).p_different() - expected).abs() < 1e-12);
            }
        }
        assert!((t.max_entry() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chsh_table_correlations() {
        let (a, b) = chsh_alphabets();
        let t = target_conditional(&a, &b).unwrap();
        let e = t.correlations();
        let h = SQRT2 / 2.0;
        let expected = [[-h, h], [-h, -h]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[i][j] - expected[i][j]).abs() < 1e-12);
                assert!((e[i][j] - enumerate_correlation(t.row(i, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_pair_table() {
        let t = target_conditional(&[angle(0.3)], &[angle(0.3)]).unwrap();
        assert_eq!(t.rows().len(), 1);
        assert_eq!(t.row(0, 0).p_different(), 1.0);
        assert!(matches!(target_conditional(&[], &[angle(0.0)]), Err(TargetError::Empty)));
    }

    #[test]
    fn row_validation() {
        assert!(OutcomePairDistribution::new([0.0; 4]).is_err());
        assert!(OutcomePairDistribution::new([0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(OutcomePairDistribution::new([0.1, 0.2, 0.3, 0.4]).is_ok());
        let err = ConditionalTable::from_raw(1, 1, &[[0.0; 4]]).unwrap_err();
        assert!(err.to_string().contains("invalid target distribution"));
    }

    #[test]
    fn pair_index_roundtrip() {
        for i in 0..4 {
            let (a, b) = pair_at(i);
            assert_eq!(pair_index(a, b), i);
        }
        assert_eq!(pair_product(0), 1.0);
        assert_eq!(pair_product(1), -1.0);
    }

    proptest! {
        #[test]
        fn singlet_marginals_uniform(ta in -10.0f64..10.0, tb in -10.0f64..10.0) {
            let d = singlet_joint(angle(ta), angle(tb));
            prop_assert!((d.alice_plus() - 0.5).abs() <= 1e-12);
            prop_assert!((d.bob_plus() - 0.5).abs() <= 1e-12);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn correlation_matches_table(ta in 0.0f64..TAU, tb in 0.0f64..TAU) {
            let d = singlet_joint(angle(ta), angle(tb));
            prop_assert!((correlation(angle(ta), angle(tb)) - enumerate_correlation(&d)).abs() <= 1e-12);
        }

        #[test]
        fn rotation_invariance(ta in 0.0f64..TAU, tb in 0.0f64..TAU, r in -TAU..TAU) {
            let d = singlet_joint(angle(ta), angle(tb));
            let rotated = singlet_joint(angle(ta + r), angle(tb + r));
            prop_assert!(d.tv_distance(&rotated) <= 1e-12);
        }

        #[test]
        fn tsirelson_bound(a0 in 0.0f64..TAU, a1 in 0.0f64..TAU, b0 in 0.0f64..TAU, b1 in 0.0f64..TAU) {
            let s = ChshSettings { a0: angle(a0), a1: angle(a1), b0: angle(b0), b1: angle(b1) };
            prop_assert!(chsh_value(&s).abs() <= 2.0 * SQRT2 + 1e-9);
        }
    }
}
