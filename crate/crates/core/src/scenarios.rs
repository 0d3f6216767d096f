//! The toy games.
//!
//! - Ward C: two rare infections, admission if either is present. Selecting
//!   on admission makes the infections look strongly anti-associated.
//! - Rock-paper-scissors with a referee who discards most Bob wins.
//! - Sunday rock-paper-scissors, where Alice never loses because the collider
//!   is constrained rather than filtered.
//! - The ∧-shaped game: independent settings and fair coins, with a referee
//!   filter that leaves Bell statistics in the kept rounds.
//! - The ∨-shaped game: the referee knows the settings in advance and picks
//!   outcomes with a settings-dependent rule. Nothing is discarded.
//! - The black box, which hides the ∨ mechanism behind a preparation knob,
//!   and the contrasting unrestricted referee who can be signalled through.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{
    CausalError, CausalModel, ColliderConstraint, ModelBuilder, NodeId, DEFAULT_MAX_TRIALS,
};
use crate::quantum::{
    chsh_alphabets, pair_at, target_conditional, ConditionalTable, Outcome, TargetError,
};
use crate::rng::{collect_until_kept, pick_index, StreamFactory};
use crate::stats::{mutual_information, Ensemble, RoundRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("DegenerateTargetError: target has no positive entry")]
    DegenerateTarget,
    #[error("invalid parameter `{key}`: {message}")]
    InvalidParams { key: &'static str, message: String },
    #[error("setting alphabet mismatch: target is {target:?}, settings are {settings:?}")]
    ShapeMismatch { target: (usize, usize), settings: (usize, usize) },
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

fn check_probability(key: &'static str, p: f64, open: bool) -> Result<()> {
    let ok = if open { p > 0.0 && p < 1.0 } else { (0.0..=1.0).contains(&p) };
    if !ok || !p.is_finite() {
        let range = if open { "(0, 1)" } else { "[0, 1]" };
        return Err(ScenarioError::InvalidParams { key, message: format!("{p} is not in {range}") });
    }
    Ok(())
}

// ---------------------------------------------------------------- Ward C

pub const VIRUS_A: &str = "virus_a";
pub const VIRUS_B: &str = "virus_b";
pub const ADMITTED: &str = "admitted";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WardCParams {
    pub p_a: f64,
    pub p_b: f64,
}

impl Default for WardCParams {
    fn default() -> Self {
        WardCParams { p_a: 0.01, p_b: 0.01 }
    }
}

impl WardCParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("p_a", self.p_a, true)?;
        check_probability("p_b", self.p_b, true)
    }
}

/// Two independent Bernoulli causes and their deterministic OR; the
/// constraint is admission.
pub fn ward_c_model(params: WardCParams) -> Result<(CausalModel, ColliderConstraint)> {
    params.validate()?;
    let mut b = ModelBuilder::new();
    let a = b.root(VIRUS_A, vec![1.0 - params.p_a, params.p_a]);
    let v = b.root(VIRUS_B, vec![1.0 - params.p_b, params.p_b]);
    let c = b.deterministic(ADMITTED, &[a, v], 2, |pv| pv[0] | pv[1]);
    Ok((b.build()?, ColliderConstraint::single(c, 1)))
}

// ------------------------------------------------------ rock-paper-scissors

pub const ALICE_CHOICE: &str = "alice_choice";
pub const BOB_CHOICE: &str = "bob_choice";
pub const WINNER: &str = "winner";
pub const KEEP: &str = "keep";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Rock = 0,
    Paper = 1,
    Scissors = 2,
}

/// Category order of the winner node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    Alice = 0,
    Draw = 1,
    Bob = 2,
}

/// Category index of the round's winner given two choice indices.
pub fn winner_index(alice: usize, bob: usize) -> usize {
    match (alice + 3 - bob) % 3 {
        0 => Winner::Draw as usize,
        1 => Winner::Alice as usize,
        _ => Winner::Bob as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpsFilterParams {
    pub keep_bob_win: f64,
    pub keep_other: f64,
}

impl Default for RpsFilterParams {
    fn default() -> Self {
        RpsFilterParams { keep_bob_win: 0.1, keep_other: 1.0 }
    }
}

impl RpsFilterParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("keep_bob_win", self.keep_bob_win, false)?;
        check_probability("keep_other", self.keep_other, false)?;
        if self.keep_bob_win == 0.0 && self.keep_other == 0.0 {
            return Err(ScenarioError::InvalidParams {
                key: "keep_other",
                message: "filter discards every round".into(),
            });
        }
        Ok(())
    }
}

fn rps_game(b: &mut ModelBuilder) -> (NodeId, NodeId, NodeId) {
    let alice = b.root(ALICE_CHOICE, vec![1.0 / 3.0; 3]);
    let bob = b.root(BOB_CHOICE, vec![1.0 / 3.0; 3]);
    let win = b.deterministic(WINNER, &[alice, bob], 3, |pv| winner_index(pv[0], pv[1]));
    (alice, bob, win)
}

/// Uniform choices, the winner, and a keep flag that is far less likely
/// when Bob wins. The constraint is `keep = 1`.
pub fn rps_filter_model(params: RpsFilterParams) -> Result<(CausalModel, ColliderConstraint)> {
    params.validate()?;
    let mut b = ModelBuilder::new();
    let (_, _, win) = rps_game(&mut b);
    let keep = b.conditional(KEEP, &[win], 2, |pv| {
        let p = if pv[0] == Winner::Bob as usize { params.keep_bob_win } else { params.keep_other };
        vec![1.0 - p, p]
    });
    Ok((b.build()?, ColliderConstraint::single(keep, 1)))
}

/// The same game with the winner constrained to {Alice, draw}. Meant for
/// [`crate::causal::constrain`].
pub fn sunday_model() -> Result<(CausalModel, ColliderConstraint)> {
    let mut b = ModelBuilder::new();
    let (_, _, win) = rps_game(&mut b);
    let model = b.build()?;
    let constraint = ColliderConstraint::new(win, [Winner::Alice as usize, Winner::Draw as usize])?;
    Ok((model, constraint))
}

// -------------------------------------------------------------- settings

/// Independent per-side distributions over setting indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsDistribution {
    alice: Vec<f64>,
    bob: Vec<f64>,
}

impl SettingsDistribution {
    /// Weights are normalized; they must be non-negative with positive sum.
    pub fn new(alice: Vec<f64>, bob: Vec<f64>) -> Result<Self> {
        Ok(SettingsDistribution {
            alice: normalize("alice_weights", alice)?,
            bob: normalize("bob_weights", bob)?,
        })
    }

    pub fn uniform(n_a: usize, n_b: usize) -> Result<Self> {
        Self::new(vec![1.0; n_a], vec![1.0; n_b])
    }

    /// Alice always uses `a`; Bob stays uniform.
    pub fn alice_fixed(n_a: usize, a: usize, n_b: usize) -> Result<Self> {
        let mut w = vec![0.0; n_a];
        w[a] = 1.0;
        Self::new(w, vec![1.0; n_b])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.alice.len(), self.bob.len())
    }

    pub fn alice(&self) -> &[f64] {
        &self.alice
    }

    pub fn bob(&self) -> &[f64] {
        &self.bob
    }

    pub fn pair_prob(&self, a: usize, b: usize) -> f64 {
        self.alice[a] * self.bob[b]
    }
}

fn normalize(key: &'static str, w: Vec<f64>) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(ScenarioError::InvalidParams { key, message: "empty alphabet".into() });
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ScenarioError::InvalidParams { key, message: "weights must be finite and non-negative".into() });
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(ScenarioError::InvalidParams { key, message: "weights sum to zero".into() });
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

fn check_shape(target: &ConditionalTable, settings: &SettingsDistribution) -> Result<()> {
    if target.shape() != settings.shape() {
        return Err(ScenarioError::ShapeMismatch { target: target.shape(), settings: settings.shape() });
    }
    Ok(())
}

// ------------------------------------------------------------ ∧ filter

/// Keep probability per `(setting_a, setting_b, outcome pair)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterRule {
    n_a: usize,
    n_b: usize,
    keep_prob: Vec<[f64; 4]>,
    max_entry: f64,
}

/// Acceptance-rejection against the fair-coin proposal `q = 1/4`: keep
/// `(x, y)` at settings `(a, b)` with probability `target(x, y | a, b) / m`,
/// `m` the largest target entry. Kept rounds then follow `target` exactly,
/// and every setting pair is kept at rate `1 / (4m)`.
pub fn derive_wedge_filter(target: &ConditionalTable) -> Result<FilterRule> {
    let m = target.max_entry();
    if m <= 0.0 {
        return Err(ScenarioError::DegenerateTarget);
    }
    let keep_prob = target
        .rows()
        .iter()
        .map(|row| std::array::from_fn(|i| (row.probs()[i] / m).min(1.0)))
        .collect();
    Ok(FilterRule { n_a: target.n_a(), n_b: target.n_b(), keep_prob, max_entry: m })
}

impl FilterRule {
    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn keep_prob(&self, a: usize, b: usize) -> &[f64; 4] {
        &self.keep_prob[a * self.n_b + b]
    }

    pub fn max_entry(&self) -> f64 {
        self.max_entry
    }

    /// Probability a fair-coin round at `(a, b)` is kept.
    pub fn expected_keep_rate(&self, a: usize, b: usize) -> f64 {
        self.keep_prob(a, b).iter().sum::<f64>() / 4.0
    }

    /// Keep rate averaged over a settings distribution.
    pub fn overall_keep_rate(&self, settings: &SettingsDistribution) -> f64 {
        let mut rate = 0.0;
        for a in 0..self.n_a {
            for b in 0..self.n_b {
                rate += settings.pair_prob(a, b) * self.expected_keep_rate(a, b);
            }
        }
        rate
    }
}

// ------------------------------------------------------------ ∨ selector

/// Cumulative distribution over canonical outcome pairs, per setting pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectorRule {
    n_a: usize,
    n_b: usize,
    cdf: Vec<[f64; 4]>,
}

/// Running sums of each target row, the last entry pinned to 1.
pub fn derive_vee_selector(target: &ConditionalTable) -> SelectorRule {
    let cdf = target
        .rows()
        .iter()
        .map(|row| {
            let p = row.probs();
            let mut c = [0.0; 4];
            let mut acc = 0.0;
            for i in 0..4 {
                acc += p[i];
                c[i] = acc;
            }
            c[3] = 1.0;
            c
        })
        .collect();
    SelectorRule { n_a: target.n_a(), n_b: target.n_b(), cdf }
}

impl SelectorRule {
    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn cdf(&self, a: usize, b: usize) -> &[f64; 4] {
        &self.cdf[a * self.n_b + b]
    }

    /// Outcome pair for settings `(a, b)` and one uniform `u ∈ [0, 1)`: the
    /// first pair whose cumulative probability exceeds `u`.
    pub fn select(&self, a: usize, b: usize, u: f64) -> (Outcome, Outcome) {
        let c = self.cdf(a, b);
        let k = c.iter().position(|&x| x > u).unwrap_or(3);
        pair_at(k)
    }

    /// Outcome law the selector induces at `(a, b)`.
    pub fn implied_distribution(&self, a: usize, b: usize) -> [f64; 4] {
        let c = self.cdf(a, b);
        [c[0], c[1] - c[0], c[2] - c[1], c[3] - c[2]]
    }
}

// ------------------------------------------------------------ runs

fn draw_settings(settings: &SettingsDistribution, stream: &mut crate::rng::RandomStream) -> (usize, usize) {
    let a = pick_index(settings.alice(), stream.uniform());
    let b = pick_index(settings.bob(), stream.uniform());
    (a, b)
}

/// ∧-shaped game. Each trial draws settings, two fair coins, and a keep
/// decision from the derived filter, until `n_kept` rounds are kept.
/// Discarded trials are retained in the ensemble when `keep_discarded` is
/// set.
pub fn run_wedge_qrps(
    settings: &SettingsDistribution,
    target: &ConditionalTable,
    n_kept: usize,
    streams: &StreamFactory,
    max_trials: u64,
    keep_discarded: bool,
) -> Result<Ensemble> {
    check_shape(target, settings)?;
    let filter = derive_wedge_filter(target)?;
    let collected = collect_until_kept(n_kept, max_trials, keep_discarded, |i| {
        let mut s = streams.stream(i);
        let (a, b) = draw_settings(settings, &mut s);
        let x = Outcome::from_coin(s.coin());
        let y = Outcome::from_coin(s.coin());
        let keep = s.uniform() < filter.keep_prob(a, b)[crate::quantum::pair_index(x, y)];
        (RoundRecord { setting_a: a, setting_b: b, outcome_a: x, outcome_b: y, kept: keep }, keep)
    });
    let c = collected.map_err(|c| CausalError::BudgetExceeded { kept: c.kept, wanted: n_kept, trials: c.trials })?;
    let (n_a, n_b) = settings.shape();
    Ok(Ensemble {
        records: c.items,
        trials: c.trials,
        seed: streams.seed(),
        scenario_id: "wedge_qrps".into(),
        n_settings_a: n_a,
        n_settings_b: n_b,
    })
}

/// Trial budget [`run_wedge_qrps`] callers use when nothing else is
/// configured.
pub const DEFAULT_WEDGE_MAX_TRIALS: u64 = DEFAULT_MAX_TRIALS;

fn run_selector(
    scenario_id: &str,
    settings: &SettingsDistribution,
    selector: &SelectorRule,
    n_rounds: usize,
    streams: &StreamFactory,
) -> Ensemble {
    use rayon::prelude::*;
    let records = (0..n_rounds as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = streams.stream(i);
            // Settings first: the selector sees them before choosing outcomes.
            let (a, b) = draw_settings(settings, &mut s);
            let (x, y) = selector.select(a, b, s.uniform());
            RoundRecord { setting_a: a, setting_b: b, outcome_a: x, outcome_b: y, kept: true }
        })
        .collect();
    let (n_a, n_b) = settings.shape();
    Ensemble {
        records,
        trials: n_rounds as u64,
        seed: streams.seed(),
        scenario_id: scenario_id.into(),
        n_settings_a: n_a,
        n_settings_b: n_b,
    }
}

/// ∨-shaped game: every round kept.
pub fn run_vee_qrps(
    settings: &SettingsDistribution,
    target: &ConditionalTable,
    n_rounds: usize,
    streams: &StreamFactory,
) -> Result<Ensemble> {
    check_shape(target, settings)?;
    Ok(run_selector("vee_qrps", settings, &derive_vee_selector(target), n_rounds, streams))
}

// ------------------------------------------------------------ black box

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnobOption {
    pub name: String,
    pub target: ConditionalTable,
}

/// A sealed ∨-mechanism. The operator sees and sets only the knob.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlackBoxDevice {
    knob_options: Vec<KnobOption>,
    current_knob: usize,
}

impl BlackBoxDevice {
    /// Every option must share one setting alphabet and have uniform
    /// single-party marginals in every row.
    pub fn new(knob_options: Vec<KnobOption>, current_knob: usize) -> Result<Self> {
        let Some(first) = knob_options.first() else {
            return Err(ScenarioError::InvalidParams { key: "knob", message: "device has no knob options".into() });
        };
        let shape = first.target.shape();
        for opt in &knob_options {
            if opt.target.shape() != shape {
                return Err(ScenarioError::ShapeMismatch { target: opt.target.shape(), settings: shape });
            }
            if let Some(i) = opt.target.rows().iter().position(|r| !r.has_uniform_marginals()) {
                return Err(ScenarioError::Target(TargetError::InvalidDistribution(format!(
                    "knob option `{}` row {i} has non-uniform marginals",
                    opt.name
                ))));
            }
        }
        let mut device = BlackBoxDevice { knob_options, current_knob: 0 };
        device.set_knob(current_knob)?;
        Ok(device)
    }

    /// Singlet target on the given alphabets, and independent fair outcomes.
    pub fn standard(singlet: ConditionalTable, current_knob: usize) -> Result<Self> {
        let (n_a, n_b) = singlet.shape();
        Self::new(
            vec![
                KnobOption { name: "singlet".into(), target: singlet },
                KnobOption { name: "product".into(), target: ConditionalTable::product(n_a, n_b)? },
            ],
            current_knob,
        )
    }

    pub fn set_knob(&mut self, knob: usize) -> Result<()> {
        if knob >= self.knob_options.len() {
            return Err(ScenarioError::InvalidParams {
                key: "knob",
                message: format!("knob {knob} out of range (device has {} options)", self.knob_options.len()),
            });
        }
        self.current_knob = knob;
        Ok(())
    }

    pub fn knob_options(&self) -> &[KnobOption] {
        &self.knob_options
    }

    pub fn current(&self) -> &KnobOption {
        &self.knob_options[self.current_knob]
    }

    /// All the operator can observe.
    pub fn charlie_view(&self) -> usize {
        self.current_knob
    }
}

pub fn run_black_box(
    device: &BlackBoxDevice,
    settings: &SettingsDistribution,
    n_rounds: usize,
    streams: &StreamFactory,
) -> Result<Ensemble> {
    let target = &device.current().target;
    check_shape(target, settings)?;
    Ok(run_selector("black_box", settings, &derive_vee_selector(target), n_rounds, streams))
}

// ------------------------------------------------------------ signalling

/// Information the operator's log carries about Alice's setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignallingReport {
    pub n_rounds: usize,
    /// Unrestricted referee logging the settings he foresees.
    pub crystal_ball_bits: f64,
    /// Operator of the sealed device, whose log is the knob index.
    pub black_box_bits: f64,
    /// Control: a log filled by an independent fair coin.
    pub independent_log_bits: f64,
    #[serde(skip)]
    pub ensemble: Ensemble,
}

/// Binary CHSH settings, uniform on both sides, singlet outcomes.
pub fn crystal_ball_signalling(n_rounds: usize, streams: &StreamFactory) -> Result<SignallingReport> {
    let (alice, bob) = chsh_alphabets();
    let target = target_conditional(&alice, &bob)?;
    let settings = SettingsDistribution::uniform(alice.len(), bob.len())?;
    let ensemble = run_vee_qrps(&settings, &target, n_rounds, streams)?;
    let device = BlackBoxDevice::standard(target, 0)?;

    let crystal: Vec<(usize, usize)> = ensemble.records.iter().map(|r| (r.setting_a, r.setting_a)).collect();
    let sealed: Vec<(usize, usize)> =
        ensemble.records.iter().map(|r| (r.setting_a, device.charlie_view())).collect();
    let coins = streams.fork(1);
    let independent: Vec<(usize, usize)> = ensemble
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.setting_a, usize::from(coins.stream(i as u64).coin())))
        .collect();

    Ok(SignallingReport {
        n_rounds,
        crystal_ball_bits: mutual_information(&crystal),
        black_box_bits: mutual_information(&sealed),
        independent_log_bits: mutual_information(&independent),
        ensemble,
    })
}

// ------------------------------------------------------------ exact forms

pub const SETTING_A: &str = "setting_a";
pub const SETTING_B: &str = "setting_b";
pub const COIN_A: &str = "coin_a";
pub const COIN_B: &str = "coin_b";
pub const OUTCOMES: &str = "outcomes";

/// ∧ game as a causal model: settings and coins are roots, `keep` is their
/// common child. Coin category 0 is `+1`. Alphabets need at least 2
/// settings per side.
pub fn wedge_causal_model(settings: &SettingsDistribution, filter: &FilterRule) -> Result<(CausalModel, ColliderConstraint)> {
    if filter.shape() != settings.shape() {
        return Err(ScenarioError::ShapeMismatch { target: filter.shape(), settings: settings.shape() });
    }
    let mut b = ModelBuilder::new();
    let sa = b.root(SETTING_A, settings.alice().to_vec());
    let sb = b.root(SETTING_B, settings.bob().to_vec());
    let ca = b.root(COIN_A, vec![0.5, 0.5]);
    let cb = b.root(COIN_B, vec![0.5, 0.5]);
    let keep = b.conditional(KEEP, &[sa, sb, ca, cb], 2, |pv| {
        let k = filter.keep_prob(pv[0], pv[1])[2 * pv[2] + pv[3]];
        vec![1.0 - k, k]
    });
    Ok((b.build()?, ColliderConstraint::single(keep, 1)))
}

/// ∨ game as a causal model: the outcome-pair node (canonical order) is a
/// child of both settings with the selector's induced law as its cpt.
pub fn vee_causal_model(settings: &SettingsDistribution, selector: &SelectorRule) -> Result<CausalModel> {
    if selector.shape() != settings.shape() {
        return Err(ScenarioError::ShapeMismatch { target: selector.shape(), settings: settings.shape() });
    }
    let mut b = ModelBuilder::new();
    let sa = b.root(SETTING_A, settings.alice().to_vec());
    let sb = b.root(SETTING_B, settings.bob().to_vec());
    b.conditional(OUTCOMES, &[sa, sb], 4, |pv| selector.implied_distribution(pv[0], pv[1]).to_vec());
    Ok(b.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{condition, constrain, counterfactual_compare, exact_joint};
    use crate::quantum::{mermin_triple, OutcomePairDistribution};

    fn mermin_target() -> ConditionalTable {
        let m = mermin_triple();
        target_conditional(&m, &m).unwrap()
    }

    #[test]
    fn winner_rule() {
        use Choice::*;
        assert_eq!(winner_index(Paper as usize, Rock as usize), Winner::Alice as usize);
        assert_eq!(winner_index(Scissors as usize, Paper as usize), Winner::Alice as usize);
        assert_eq!(winner_index(Rock as usize, Scissors as usize), Winner::Alice as usize);
        assert_eq!(winner_index(Scissors as usize, Rock as usize), Winner::Bob as usize);
        assert_eq!(winner_index(Rock as usize, Rock as usize), Winner::Draw as usize);
    }

    #[test]
    fn ward_c_exact_conditionals() {
        let (m, adm) = ward_c_model(WardCParams::default()).unwrap();
        let (a, b) = (m.find(VIRUS_A).unwrap(), m.find(VIRUS_B).unwrap());
        let j = exact_joint(&m).unwrap();
        let admitted = condition(&j, &adm).unwrap();
        assert!((admitted.conditional(b, &[(a, 0)]).unwrap()[1] - 1.0).abs() < 1e-12);
        assert!((admitted.conditional(b, &[(a, 1)]).unwrap()[1] - 0.01).abs() < 1e-12);
        assert!((j.conditional(b, &[(a, 0)]).unwrap()[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn ward_c_param_validation() {
        assert!(ward_c_model(WardCParams { p_a: 0.0, p_b: 0.5 }).is_err());
        assert!(ward_c_model(WardCParams { p_a: 0.5, p_b: 1.0 }).is_err());
        let err = WardCParams { p_a: f64::NAN, p_b: 0.5 }.validate().unwrap_err();
        assert!(err.to_string().contains("p_a"));
    }

    fn win_rates(params: RpsFilterParams) -> [f64; 3] {
        let (m, keep) = rps_filter_model(params).unwrap();
        let w = m.find(WINNER).unwrap();
        let kept = condition(&exact_joint(&m).unwrap(), &keep).unwrap();
        let marg = kept.marginal(w);
        [marg[0], marg[1], marg[2]]
    }

    #[test]
    fn rps_filter_rates() {
        let vac = win_rates(RpsFilterParams { keep_bob_win: 1.0, keep_other: 1.0 });
        for r in vac {
            assert!((r - 1.0 / 3.0).abs() < 1e-12);
        }
        let most = win_rates(RpsFilterParams::default());
        assert!((most[Winner::Alice as usize] - 10.0 / 21.0).abs() < 1e-12);
        assert!((most[Winner::Bob as usize] - 1.0 / 21.0).abs() < 1e-12);
        let all = win_rates(RpsFilterParams { keep_bob_win: 0.0, keep_other: 1.0 });
        assert_eq!(all[Winner::Bob as usize], 0.0);
        assert!(rps_filter_model(RpsFilterParams { keep_bob_win: 0.0, keep_other: 0.0 }).is_err());
        assert!(rps_filter_model(RpsFilterParams { keep_bob_win: 1.5, keep_other: 1.0 }).is_err());
    }

    #[test]
    fn sunday_constraint() {
        let (m, sunday) = sunday_model().unwrap();
        let (alice, bob, win) = (m.find(ALICE_CHOICE).unwrap(), m.find(BOB_CHOICE).unwrap(), m.find(WINNER).unwrap());
        let s = constrain(&m, &sunday).unwrap();
        let p = s.joint().conditional(bob, &[(alice, Choice::Scissors as usize)]).unwrap();
        assert_eq!(p[Choice::Rock as usize], 0.0);
        assert!((s.joint().marginal(win)[Winner::Draw as usize] - 0.5).abs() < 1e-12);

        let weekday = counterfactual_compare(&m, alice, Choice::Scissors as usize, bob, None).unwrap();
        assert!(weekday.interventional.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        let r = counterfactual_compare(&m, alice, Choice::Scissors as usize, bob, Some(&sunday)).unwrap();
        assert_eq!(r.constrained_interventional[Choice::Rock as usize], 0.0);
        assert!((r.interventional[Choice::Rock as usize] - 1.0 / 3.0).abs() < 1e-12);
        assert!(!r.intervention_unaffected_by_constraint);
    }

    #[test]
    fn wedge_filter_uniform_target() {
        let t = ConditionalTable::product(2, 2).unwrap();
        let f = derive_wedge_filter(&t).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(f.keep_prob(a, b), &[1.0; 4]);
                assert_eq!(f.expected_keep_rate(a, b), 1.0);
            }
        }
    }

    #[test]
    fn wedge_filter_equal_setting_row() {
        let t = target_conditional(&mermin_triple()[..1], &mermin_triple()[..1]).unwrap();
        let f = derive_wedge_filter(&t).unwrap();
        assert_eq!(f.keep_prob(0, 0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(f.expected_keep_rate(0, 0), 0.5);
    }

    #[test]
    fn wedge_filter_mermin_keep_rate() {
        let f = derive_wedge_filter(&mermin_target()).unwrap();
        assert_eq!(f.max_entry(), 0.5);
        for a in 0..3 {
            for b in 0..3 {
                assert!((f.expected_keep_rate(a, b) - 0.5).abs() < 1e-12);
            }
        }
        let s = SettingsDistribution::uniform(3, 3).unwrap();
        assert!((f.overall_keep_rate(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_target_is_impossible_to_construct() {
        // The only way to reach DegenerateTarget is an all-zero row, which
        // table validation already rejects.
        let err = ConditionalTable::from_raw(1, 1, &[[0.0; 4]]).unwrap_err();
        assert!(err.to_string().contains("invalid target distribution"));
    }

    #[test]
    fn selector_equal_settings_row() {
        let t = target_conditional(&mermin_triple()[..1], &mermin_triple()[..1]).unwrap();
        let s = derive_vee_selector(&t);
        assert_eq!(s.cdf(0, 0), &[0.0, 0.5, 1.0, 1.0]);
        assert_eq!(s.select(0, 0, 0.0), (Outcome::Plus, Outcome::Minus));
        assert_eq!(s.select(0, 0, 0.4999), (Outcome::Plus, Outcome::Minus));
        assert_eq!(s.select(0, 0, 0.5), (Outcome::Minus, Outcome::Plus));
        assert_eq!(s.select(0, 0, 0.999_999), (Outcome::Minus, Outcome::Plus));
    }

    #[test]
    fn selector_one_hot_ignores_u() {
        let row = OutcomePairDistribution::new([0.0, 0.0, 1.0, 0.0]).unwrap();
        let t = ConditionalTable::new(1, 1, vec![row]).unwrap();
        let s = derive_vee_selector(&t);
        for u in [0.0, 0.25, 0.5, 0.75, 0.999_999] {
            assert_eq!(s.select(0, 0, u), (Outcome::Minus, Outcome::Plus));
        }
    }

    #[test]
    fn filter_identity_by_enumeration() {
        let target = mermin_target();
        let settings = SettingsDistribution::new(vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 1.0]).unwrap();
        let filter = derive_wedge_filter(&target).unwrap();
        let (model, keep) = wedge_causal_model(&settings, &filter).unwrap();
        let kept = condition(&exact_joint(&model).unwrap(), &keep).unwrap();
        assert!((kept.keep_rate() - filter.overall_keep_rate(&settings)).abs() < 1e-12);
        let joint = exact_joint(&model).unwrap();
        let (sa, sb, ca, cb) = (NodeId(0), NodeId(1), NodeId(2), NodeId(3));
        for a in 0..3 {
            for b in 0..3 {
                let cell = kept.given(sa, a).unwrap().given(sb, b).unwrap();
                for x in 0..2 {
                    for y in 0..2 {
                        let p = cell.event_prob(|s| s.get(ca) == x && s.get(cb) == y);
                        assert!((p - target.row(a, b).probs()[2 * x + y]).abs() < 1e-12);
                    }
                }
                // Settings stay independent of the filter's keep rate.
                let pa = joint.given(sa, a).unwrap().given(sb, b).unwrap();
                assert!((pa.marginal(keep.node)[1] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selector_identity_by_enumeration() {
        let (alice, bob) = chsh_alphabets();
        let target = target_conditional(&alice, &bob).unwrap();
        let selector = derive_vee_selector(&target);
        let settings = SettingsDistribution::uniform(2, 2).unwrap();
        let model = vee_causal_model(&settings, &selector).unwrap();
        let j = exact_joint(&model).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let out = j.conditional(NodeId(2), &[(NodeId(0), a), (NodeId(1), b)]).unwrap();
                for (got, want) in out.iter().zip(target.row(a, b).probs()) {
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wedge_run_basic_properties() {
        let target = mermin_target();
        let settings = SettingsDistribution::uniform(3, 3).unwrap();
        let e = run_wedge_qrps(&settings, &target, 20_000, &StreamFactory::new(3), 1_000_000, true).unwrap();
        assert_eq!(e.n_kept(), 20_000);
        assert_eq!(e.records.len() as u64, e.trials);
        assert!(e.records.last().unwrap().kept);
        assert!(e.kept().filter(|r| r.setting_a == r.setting_b).all(|r| r.outcome_a != r.outcome_b));
        let err = run_wedge_qrps(&settings, &target, 1000, &StreamFactory::new(3), 100, false).unwrap_err();
        assert!(err.to_string().contains("BudgetExceededError"));
    }

    #[test]
    fn wedge_prefix_independent_of_discard_retention() {
        let target = mermin_target();
        let settings = SettingsDistribution::uniform(3, 3).unwrap();
        let f = StreamFactory::new(9);
        let full = run_wedge_qrps(&settings, &target, 5000, &f, u64::MAX, true).unwrap();
        let kept = run_wedge_qrps(&settings, &target, 5000, &f, u64::MAX, false).unwrap();
        assert_eq!(full.trials, kept.trials);
        assert_eq!(full.kept().copied().collect::<Vec<_>>(), kept.records);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let target = mermin_target();
        let settings = SettingsDistribution::uniform(2, 2).unwrap();
        assert!(matches!(
            run_vee_qrps(&settings, &target, 10, &StreamFactory::new(1)),
            Err(ScenarioError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn vee_keeps_everything() {
        let target = mermin_target();
        let settings = SettingsDistribution::uniform(3, 3).unwrap();
        let e = run_vee_qrps(&settings, &target, 10_000, &StreamFactory::new(4)).unwrap();
        assert_eq!(e.keep_rate(), 1.0);
        assert!(e.records.iter().filter(|r| r.setting_a == r.setting_b).all(|r| r.outcome_a != r.outcome_b));
    }

    #[test]
    fn black_box_validation() {
        let (alice, bob) = chsh_alphabets();
        let singlet = target_conditional(&alice, &bob).unwrap();
        let mut d = BlackBoxDevice::standard(singlet.clone(), 0).unwrap();
        assert_eq!(d.charlie_view(), 0);
        d.set_knob(1).unwrap();
        assert_eq!(d.current().name, "product");
        assert!(d.set_knob(2).is_err());
        assert!(BlackBoxDevice::new(vec![], 0).is_err());
        let skewed = ConditionalTable::from_raw(1, 1, &[[0.4, 0.1, 0.4, 0.1]]).unwrap();
        assert!(BlackBoxDevice::new(vec![KnobOption { name: "skew".into(), target: skewed }], 0).is_err());
    }

    #[test]
    fn signalling_small_run() {
        let r = crystal_ball_signalling(20_000, &StreamFactory::new(5)).unwrap();
        assert!((r.crystal_ball_bits - 1.0).abs() < 0.01);
        assert_eq!(r.black_box_bits, 0.0);
        assert!(r.independent_log_bits < 0.01);
    }
}
