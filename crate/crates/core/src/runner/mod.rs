//! Batch runner behind the `collider-bell` binary.
//!
//! [`run`] executes one configured scenario and returns a [`RunArtifacts`]:
//! the JSON-shaped report and, on request, the raw per-trial records.
//! Reports depend only on the config (the output location excluded), so
//! rerunning a report's `manifest.config` reproduces it byte for byte.

mod compare;
mod config;
mod output;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::causal::{
    self, condition, constrain, counterfactual_compare, exact_joint, forward_sample, rejection_trace,
    AssignmentEnsemble, CausalError, CausalModel, ExactJoint, RejectionOptions, DEFAULT_MAX_TRIALS,
};
use crate::quantum::{target_conditional, ChshSettings, ConditionalTable, MeasurementAngle, TargetError};
use crate::rng::StreamFactory;
use crate::scenarios::{
    self, crystal_ball_signalling, derive_wedge_filter, rps_filter_model, run_black_box, run_vee_qrps,
    run_wedge_qrps, sunday_model, ward_c_model, BlackBoxDevice, Choice, RpsFilterParams, ScenarioError,
    SettingsDistribution, WardCParams, Winner,
};
use crate::stats::{
    association_2x2, empirical_joint, mutual_information, nosignal_tolerance, setting_outcome_association,
    ChshIndices, CountsTable, Ensemble, RoundRecord, StatsError, StatsReport,
};

pub use compare::{compare, CompareError, CompareSummary, PairDiff};
pub use config::{apply_override, parse_tree, OutputFormat, Params, RunConfig, ScenarioKind, TargetKind};
pub use output::{raw_csv, report_csv, write_outputs, WrittenFiles};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A configuration problem, reported with the key at fault.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TargetError> for RunError {
    fn from(e: TargetError) -> Self {
        RunError::Scenario(ScenarioError::Target(e))
    }
}

impl From<CausalError> for RunError {
    fn from(e: CausalError) -> Self {
        RunError::Scenario(ScenarioError::Causal(e))
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub version: String,
    /// Set only when explicitly requested, so that reports stay comparable
    /// byte for byte.
    pub timestamp: Option<String>,
}

/// The machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub manifest: Manifest,
    /// `[setting_a][setting_b][pair]` for two-party scenarios; nested by node
    /// cardinality for the causal-model scenarios.
    pub counts: Value,
    pub e_values: Option<Vec<Vec<Option<f64>>>>,
    pub chsh_s: Option<f64>,
    pub keep_rate: f64,
    pub nosignal_delta: Option<f64>,
    pub extras: Value,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The two-party counts table, if this report has one.
    pub fn counts_table(&self) -> Option<CountsTable> {
        let nested: Vec<Vec<[u64; 4]>> = serde_json::from_value(self.counts.clone()).ok()?;
        CountsTable::from_nested(&nested).ok()
    }
}

/// Per-trial output for `emit_raw`.
#[derive(Debug, Clone, PartialEq)]
pub enum RawRecords {
    Rounds(Vec<RoundRecord>),
    Assignments { names: Vec<String>, rows: Vec<(causal::Assignment, bool)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: ReportDocument,
    pub raw: Option<RawRecords>,
    /// Where [`write_outputs`] puts the report; not part of the manifest.
    pub output_path: Option<String>,
}

/// Knobs that are not part of the science config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub timestamp: bool,
}

/// Validates and executes `config`. Nothing is written to disk; see
/// [`write_outputs`].
pub fn run(config: &RunConfig) -> Result<RunArtifacts, RunError> {
    run_with(config, RunOptions::default())
}

pub fn run_with(config: &RunConfig, options: RunOptions) -> Result<RunArtifacts, RunError> {
    let n = config.size()?;
    if config.emit_raw && config.output_path.is_none() {
        return Err(ConfigError::new("emit_raw", "requires output_path (or --out)").into());
    }
    check_params(config)?;
    let streams = StreamFactory::new(config.seed);
    let mut echo = config.clone();
    echo.output_path = None;
    let manifest = Manifest {
        config: echo,
        version: VERSION.to_string(),
        timestamp: options.timestamp.then(unix_timestamp),
    };
    let body = match config.scenario {
        ScenarioKind::WardC => ward_c(config, n, &streams)?,
        ScenarioKind::RpsFilter => rps_filter(config, n, &streams)?,
        ScenarioKind::SundayRps => sunday(config, n, &streams)?,
        ScenarioKind::WedgeQrps => wedge(config, n, &streams)?,
        ScenarioKind::VeeQrps => vee(config, n, &streams)?,
        ScenarioKind::BlackBox => black_box(config, n, &streams)?,
        ScenarioKind::CrystalBallSignalling => signalling(config, n, &streams)?,
    };
    Ok(RunArtifacts {
        report: ReportDocument {
            manifest,
            counts: body.counts,
            e_values: body.e_values,
            chsh_s: body.chsh_s,
            keep_rate: body.keep_rate,
            nosignal_delta: body.nosignal_delta,
            extras: body.extras,
        },
        raw: config.emit_raw.then_some(body.raw).flatten(),
        output_path: config.output_path.clone(),
    })
}

fn unix_timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}

struct Body {
    counts: Value,
    e_values: Option<Vec<Vec<Option<f64>>>>,
    chsh_s: Option<f64>,
    keep_rate: f64,
    nosignal_delta: Option<f64>,
    extras: Value,
    raw: Option<RawRecords>,
}

// ------------------------------------------------------------ validation

fn allowed_params(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::WardC => &["p_a", "p_b"],
        ScenarioKind::RpsFilter => &["keep_bob_win", "keep_other", "max_trials"],
        ScenarioKind::SundayRps => &[],
        ScenarioKind::WedgeQrps => &[
            "alice_angles_deg",
            "bob_angles_deg",
            "alice_weights",
            "bob_weights",
            "target",
            "target_rows",
            "chsh",
            "max_trials",
        ],
        ScenarioKind::VeeQrps => {
            &["alice_angles_deg", "bob_angles_deg", "alice_weights", "bob_weights", "target", "target_rows", "chsh"]
        }
        ScenarioKind::BlackBox => &["alice_angles_deg", "bob_angles_deg", "alice_weights", "bob_weights", "chsh", "knob"],
        ScenarioKind::CrystalBallSignalling => &[],
    }
}

fn check_params(config: &RunConfig) -> Result<(), ConfigError> {
    let present = serde_json::to_value(&config.params).expect("params serialize");
    let allowed = allowed_params(config.scenario);
    if let Some(map) = present.as_object() {
        if let Some(stray) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::new(
                format!("params.{stray}"),
                format!("not used by scenario `{}`", config.scenario.id()),
            ));
        }
    }
    Ok(())
}

fn scenario_config_error(e: ScenarioError) -> RunError {
    match e {
        ScenarioError::InvalidParams { key, message } => ConfigError::new(format!("params.{key}"), message).into(),
        other => other.into(),
    }
}

fn angles(key: &str, degrees: &[f64]) -> Result<Vec<MeasurementAngle>, ConfigError> {
    if degrees.is_empty() {
        return Err(ConfigError::new(key, "needs at least one angle"));
    }
    degrees
        .iter()
        .map(|&d| MeasurementAngle::from_degrees(d).map_err(|e| ConfigError::new(key, e.to_string())))
        .collect()
}

/// Degrees as configured, and the parsed angles.
type Alphabets = (Vec<f64>, Vec<f64>, Vec<MeasurementAngle>, Vec<MeasurementAngle>);

/// Alphabets for a two-party scenario; `default` supplies both sides when
/// unset.
fn alphabets(
    params: &Params,
    default: (Vec<f64>, Vec<f64>),
) -> Result<Alphabets, ConfigError> {
    let a_deg = params.alice_angles_deg.clone().unwrap_or(default.0);
    let b_deg = params.bob_angles_deg.clone().unwrap_or(default.1);
    let a = angles("params.alice_angles_deg", &a_deg)?;
    let b = angles("params.bob_angles_deg", &b_deg)?;
    Ok((a_deg, b_deg, a, b))
}

fn settings_dist(params: &Params, n_a: usize, n_b: usize) -> Result<SettingsDistribution, RunError> {
    let alice = params.alice_weights.clone().unwrap_or_else(|| vec![1.0; n_a]);
    let bob = params.bob_weights.clone().unwrap_or_else(|| vec![1.0; n_b]);
    if alice.len() != n_a {
        return Err(ConfigError::new("params.alice_weights", format!("needs {n_a} weights")).into());
    }
    if bob.len() != n_b {
        return Err(ConfigError::new("params.bob_weights", format!("needs {n_b} weights")).into());
    }
    SettingsDistribution::new(alice, bob).map_err(scenario_config_error)
}

fn target_table(params: &Params, a: &[MeasurementAngle], b: &[MeasurementAngle]) -> Result<ConditionalTable, RunError> {
    let kind = params.target.unwrap_or(if params.target_rows.is_some() { TargetKind::Custom } else { TargetKind::Singlet });
    let invalid = |e: TargetError| -> RunError { ConfigError::new("params.target_rows", e.to_string()).into() };
    match kind {
        TargetKind::Singlet | TargetKind::Product if params.target_rows.is_some() => Err(ConfigError::new(
            "params.target_rows",
            "only used with target = \"custom\"",
        )
        .into()),
        TargetKind::Singlet => Ok(target_conditional(a, b)?),
        TargetKind::Product => Ok(ConditionalTable::product(a.len(), b.len())?),
        TargetKind::Custom => {
            let rows = params
                .target_rows
                .as_ref()
                .ok_or_else(|| ConfigError::new("params.target_rows", "required with target = \"custom\""))?;
            if rows.len() != a.len() * b.len() {
                return Err(invalid(TargetError::InvalidDistribution(format!(
                    "{} rows for {} setting pairs",
                    rows.len(),
                    a.len() * b.len()
                ))));
            }
            ConditionalTable::from_raw(a.len(), b.len(), rows).map_err(invalid)
        }
    }
}

fn chsh_roles(params: &Params, n_a: usize, n_b: usize) -> Result<Option<ChshIndices>, ConfigError> {
    match params.chsh {
        Some([a0, a1, b0, b1]) => {
            if a0 >= n_a || a1 >= n_a || b0 >= n_b || b1 >= n_b {
                return Err(ConfigError::new("params.chsh", "setting index out of range"));
            }
            Ok(Some(ChshIndices { a0, a1, b0, b1 }))
        }
        None if n_a == 2 && n_b == 2 => Ok(Some(ChshIndices::default())),
        None => Ok(None),
    }
}

const MERMIN_DEG: [f64; 3] = [0.0, 120.0, 240.0];

fn mermin_default() -> (Vec<f64>, Vec<f64>) {
    (MERMIN_DEG.to_vec(), MERMIN_DEG.to_vec())
}

fn chsh_default() -> (Vec<f64>, Vec<f64>) {
    let s = ChshSettings::standard();
    (vec![s.a0.degrees(), s.a1.degrees()], vec![s.b0.degrees(), s.b1.degrees()])
}

// ------------------------------------------------------------ causal scenarios

/// Counts over a model's state space as nested arrays, one level per node.
fn nested_counts(counts: &[u64], cards: &[usize]) -> Value {
    match cards.split_first() {
        None => json!(counts[0]),
        Some((&k, rest)) => {
            let stride = counts.len() / k;
            Value::Array((0..k).map(|i| nested_counts(&counts[i * stride..(i + 1) * stride], rest)).collect())
        }
    }
}

fn assignment_raw(model: &CausalModel, rows: Vec<(causal::Assignment, bool)>) -> RawRecords {
    RawRecords::Assignments { names: model.nodes().iter().map(|n| n.name.clone()).collect(), rows }
}

fn exact_vs_sampled(exact: f64, sampled: Option<f64>) -> Value {
    json!({ "exact": exact, "sampled": sampled })
}

fn ward_c(config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let defaults = WardCParams::default();
    let params = WardCParams {
        p_a: config.params.p_a.unwrap_or(defaults.p_a),
        p_b: config.params.p_b.unwrap_or(defaults.p_b),
    };
    let (model, admission) = ward_c_model(params).map_err(scenario_config_error)?;
    let (a, b) = (model.find(scenarios::VIRUS_A).unwrap(), model.find(scenarios::VIRUS_B).unwrap());
    let joint = exact_joint(&model)?;
    let admitted = condition(&joint, &admission)?;

    let all = forward_sample(&model, n, streams);
    let tags: Vec<bool> = all.samples.iter().map(|s| admission.admits(s)).collect();
    let kept = AssignmentEnsemble {
        samples: all.samples.iter().zip(&tags).filter(|(_, k)| **k).map(|(s, _)| s.clone()).collect(),
        trials: all.trials,
    };
    if kept.is_empty() {
        return Err(StatsError::EmptyEnsemble.into());
    }

    let phi_exact = association_2x2(two_by_two(&admitted, a, b)).phi;
    let counts = kept.counts(joint.cardinalities());
    let phi_sampled = association_2x2(two_by_two_counts(&kept, a, b)).phi;
    let extras = json!({
        "nodes": [scenarios::VIRUS_A, scenarios::VIRUS_B, scenarios::ADMITTED],
        "n_kept": kept.len(),
        "n_trials": kept.trials,
        "keep_rate_exact": admitted.keep_rate(),
        "p_b_given_not_a_admitted": exact_vs_sampled(
            admitted.conditional(b, &[(a, 0)])?[1],
            kept.conditional_freq(b, 1, &[(a, 0)]),
        ),
        "p_b_given_a_admitted": exact_vs_sampled(
            admitted.conditional(b, &[(a, 1)])?[1],
            kept.conditional_freq(b, 1, &[(a, 1)]),
        ),
        "p_b_given_not_a": exact_vs_sampled(
            joint.conditional(b, &[(a, 0)])?[1],
            all.conditional_freq(b, 1, &[(a, 0)]),
        ),
        "phi_admitted": exact_vs_sampled(phi_exact, Some(phi_sampled)),
        "phi_population": association_2x2(two_by_two(&joint, a, b)).phi,
        "tv_kept_to_exact": kept.tv_to(&admitted),
    });
    Ok(Body {
        counts: nested_counts(&counts, joint.cardinalities()),
        e_values: None,
        chsh_s: None,
        keep_rate: kept.keep_rate(),
        nosignal_delta: None,
        extras,
        raw: Some(assignment_raw(&model, all.samples.into_iter().zip(tags).collect())),
    })
}

fn two_by_two(j: &ExactJoint, x: causal::NodeId, y: causal::NodeId) -> [[f64; 2]; 2] {
    let mut t = [[0.0; 2]; 2];
    for (a, p) in j.iter() {
        t[a.get(x)][a.get(y)] += p;
    }
    t
}

fn two_by_two_counts(e: &AssignmentEnsemble, x: causal::NodeId, y: causal::NodeId) -> [[f64; 2]; 2] {
    let mut t = [[0.0; 2]; 2];
    for a in &e.samples {
        t[a.get(x)][a.get(y)] += 1.0;
    }
    t
}

fn winner_rates(marginal: &[f64]) -> Value {
    json!({
        "alice": marginal[Winner::Alice as usize],
        "draw": marginal[Winner::Draw as usize],
        "bob": marginal[Winner::Bob as usize],
    })
}

fn rps_filter(config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let defaults = RpsFilterParams::default();
    let params = RpsFilterParams {
        keep_bob_win: config.params.keep_bob_win.unwrap_or(defaults.keep_bob_win),
        keep_other: config.params.keep_other.unwrap_or(defaults.keep_other),
    };
    let (model, keep) = rps_filter_model(params).map_err(scenario_config_error)?;
    let win = model.find(scenarios::WINNER).unwrap();
    let joint = exact_joint(&model)?;
    let kept_exact = condition(&joint, &keep)?;
    let options = RejectionOptions { max_trials: config.params.max_trials.unwrap_or(DEFAULT_MAX_TRIALS) };
    let trace = rejection_trace(&model, &keep, n, streams, options)?;
    let kept = AssignmentEnsemble {
        samples: trace.iter().filter(|(_, k)| *k).map(|(a, _)| a.clone()).collect(),
        trials: trace.len() as u64,
    };
    let counts = kept.counts(joint.cardinalities());
    let sampled: Vec<f64> = kept.frequencies(joint.cardinalities());
    let sampled_joint_marginal = {
        let mut m = vec![0.0; 3];
        for (i, p) in sampled.iter().enumerate() {
            m[kept_exact.assignment_of(i).get(win)] += p;
        }
        m
    };
    let extras = json!({
        "nodes": model.nodes().iter().map(|n| n.name.clone()).collect::<Vec<_>>(),
        "n_kept": kept.len(),
        "n_trials": kept.trials,
        "keep_rate_exact": kept_exact.keep_rate(),
        "winner_exact": winner_rates(&kept_exact.marginal(win)),
        "winner_sampled": winner_rates(&sampled_joint_marginal),
        "winner_unfiltered": winner_rates(&joint.marginal(win)),
        "tv_kept_to_exact": kept.tv_to(&kept_exact),
    });
    Ok(Body {
        counts: nested_counts(&counts, joint.cardinalities()),
        e_values: None,
        chsh_s: None,
        keep_rate: kept.keep_rate(),
        nosignal_delta: None,
        extras,
        raw: Some(assignment_raw(&model, trace)),
    })
}

fn sunday(_config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let (model, constraint) = sunday_model()?;
    let (alice, bob, win) = (
        model.find(scenarios::ALICE_CHOICE).unwrap(),
        model.find(scenarios::BOB_CHOICE).unwrap(),
        model.find(scenarios::WINNER).unwrap(),
    );
    let sampler = constrain(&model, &constraint)?;
    let draws = sampler.draw_n(n, streams);
    let scissors = Choice::Scissors as usize;
    let rock = Choice::Rock as usize;
    let violations = draws.samples.iter().filter(|a| a.get(alice) == scissors && a.get(bob) == rock).count();
    let weekday = counterfactual_compare(&model, alice, scissors, bob, None)?;
    let sunday = counterfactual_compare(&model, alice, scissors, bob, Some(&constraint))?;
    let cards = model.cardinalities();
    let counts = draws.counts(&cards);
    let extras = json!({
        "nodes": model.nodes().iter().map(|n| n.name.clone()).collect::<Vec<_>>(),
        "n_kept": draws.len(),
        "n_trials": draws.trials,
        "sampler_keep_rate": sampler.keep_rate(),
        "constraint_event_probability": sampler.event_probability(),
        "alice_scissors_bob_rock_rounds": violations,
        "winner_exact": winner_rates(&sampler.joint().marginal(win)),
        "tv_draws_to_exact": draws.tv_to(sampler.joint()),
        "counterfactual_do_alice_scissors": {
            "target": scenarios::BOB_CHOICE,
            "weekday": weekday,
            "sunday": sunday,
        },
    });
    Ok(Body {
        counts: nested_counts(&counts, &cards),
        e_values: None,
        chsh_s: None,
        keep_rate: draws.keep_rate(),
        nosignal_delta: None,
        extras,
        raw: Some(assignment_raw(&model, draws.samples.into_iter().map(|a| (a, true)).collect())),
    })
}

// ------------------------------------------------------------ two-party scenarios

struct TwoParty {
    a_deg: Vec<f64>,
    b_deg: Vec<f64>,
    settings: SettingsDistribution,
    chsh: Option<ChshIndices>,
}

fn two_party(params: &Params, default: (Vec<f64>, Vec<f64>)) -> Result<(TwoParty, Vec<MeasurementAngle>, Vec<MeasurementAngle>), RunError> {
    let (a_deg, b_deg, a, b) = alphabets(params, default)?;
    let settings = settings_dist(params, a.len(), b.len())?;
    let chsh = chsh_roles(params, a.len(), b.len())?;
    Ok((TwoParty { a_deg, b_deg, settings, chsh }, a, b))
}

/// Fraction of kept equal-angle rounds with opposite outcomes, and
/// `P(a ≠ b)` over kept rounds with different angles.
fn equal_setting_stats(e: &Ensemble, a_deg: &[f64], b_deg: &[f64]) -> Value {
    let same = |r: &RoundRecord| {
        let da = MeasurementAngle::from_degrees(a_deg[r.setting_a]).map(|x| x.radians()).unwrap_or(f64::NAN);
        let db = MeasurementAngle::from_degrees(b_deg[r.setting_b]).map(|x| x.radians()).unwrap_or(f64::NAN);
        (da - db).abs() < 1e-12
    };
    let (mut eq, mut eq_opp, mut diff, mut diff_opp) = (0u64, 0u64, 0u64, 0u64);
    for r in e.kept() {
        let opposite = r.outcome_a != r.outcome_b;
        if same(r) {
            eq += 1;
            eq_opp += u64::from(opposite);
        } else {
            diff += 1;
            diff_opp += u64::from(opposite);
        }
    }
    json!({
        "equal_setting_rounds": eq,
        "equal_setting_violations": eq - eq_opp,
        "equal_setting_anticorrelation_rate": (eq > 0).then(|| eq_opp as f64 / eq as f64),
        "different_setting_rounds": diff,
        "p_outcomes_differ_given_different_settings": (diff > 0).then(|| diff_opp as f64 / diff as f64),
    })
}

fn two_party_body(
    e: &Ensemble,
    setup: &TwoParty,
    target: &ConditionalTable,
    mut extras: serde_json::Map<String, Value>,
) -> Result<Body, RunError> {
    let report = StatsReport::from_ensemble(e, setup.chsh)?;
    let joint = empirical_joint(&report.counts)?;
    extras.insert("n_kept".into(), json!(report.n_kept));
    extras.insert("n_trials".into(), json!(report.n_trials));
    extras.insert("association".into(), json!(report.association));
    extras.insert("alice_angles_deg".into(), json!(setup.a_deg));
    extras.insert("bob_angles_deg".into(), json!(setup.b_deg));
    extras.insert("chsh_indices".into(), json!(setup.chsh));
    extras.insert("max_tv_to_target".into(), json!(joint.max_tv_to(target)?));
    extras.insert("target_e_values".into(), json!(target.correlations()));
    extras.insert("target_nosignal_delta".into(), json!(crate::stats::nosignal_delta_exact(target)));
    extras.insert("nosignal_tolerance_3sigma".into(), json!(nosignal_tolerance(&report.counts, 3.0)));
    if let Value::Object(eq) = equal_setting_stats(e, &setup.a_deg, &setup.b_deg) {
        extras.extend(eq);
    }
    Ok(Body {
        counts: json!(report.counts.to_nested()),
        e_values: Some(report.e_values),
        chsh_s: report.chsh_s,
        keep_rate: report.keep_rate,
        nosignal_delta: report.nosignal_delta,
        extras: Value::Object(extras),
        raw: Some(RawRecords::Rounds(e.records.clone())),
    })
}

fn wedge(config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let (setup, a, b) = two_party(&config.params, mermin_default())?;
    let target = target_table(&config.params, &a, &b)?;
    let filter = derive_wedge_filter(&target)?;
    let max_trials = config.params.max_trials.unwrap_or(scenarios::DEFAULT_WEDGE_MAX_TRIALS);
    let e = run_wedge_qrps(&setup.settings, &target, n, streams, max_trials, true)?;
    let mut extras = serde_json::Map::new();
    extras.insert("filter_max_entry".into(), json!(filter.max_entry()));
    extras.insert("expected_keep_rate".into(), json!(filter.overall_keep_rate(&setup.settings)));
    extras.insert(
        "pre_filter_setting_outcome_association".into(),
        json!(setting_outcome_association(&e.all_counts())),
    );
    extras.insert("post_filter_setting_outcome_association".into(), json!(setting_outcome_association(&e.counts())));
    two_party_body(&e, &setup, &target, extras)
}

fn vee(config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let (setup, a, b) = two_party(&config.params, mermin_default())?;
    let target = target_table(&config.params, &a, &b)?;
    let e = run_vee_qrps(&setup.settings, &target, n, streams)?;
    two_party_body(&e, &setup, &target, serde_json::Map::new())
}

fn black_box(config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let (setup, a, b) = two_party(&config.params, chsh_default())?;
    let device = BlackBoxDevice::standard(target_conditional(&a, &b)?, config.params.knob.unwrap_or(0))
        .map_err(scenario_config_error)?;
    let e = run_black_box(&device, &setup.settings, n, streams)?;
    let log: Vec<(usize, usize)> = e.records.iter().map(|r| (r.setting_a, device.charlie_view())).collect();
    let mut extras = serde_json::Map::new();
    extras.insert("knob".into(), json!(device.charlie_view()));
    extras.insert(
        "knob_options".into(),
        json!(device.knob_options().iter().map(|o| o.name.clone()).collect::<Vec<_>>()),
    );
    extras.insert("operator_log_mutual_information_bits".into(), json!(mutual_information(&log)));
    let target = device.current().target.clone();
    two_party_body(&e, &setup, &target, extras)
}

fn signalling(_config: &RunConfig, n: usize, streams: &StreamFactory) -> Result<Body, RunError> {
    let report = crystal_ball_signalling(n, streams)?;
    let (setup, a, b) = two_party(&Params::default(), chsh_default())?;
    let target = target_conditional(&a, &b)?;
    let mut extras = serde_json::Map::new();
    extras.insert("crystal_ball_bits".into(), json!(report.crystal_ball_bits));
    extras.insert("black_box_bits".into(), json!(report.black_box_bits));
    extras.insert("independent_log_bits".into(), json!(report.independent_log_bits));
    two_party_body(&report.ensemble, &setup, &target, extras)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> RunConfig {
        RunConfig::from_value(parse_tree(text, false).unwrap()).unwrap()
    }

    #[test]
    fn nested_counts_shape() {
        let v = nested_counts(&[1, 2, 3, 4, 5, 6], &[2, 3]);
        assert_eq!(v, json!([[1, 2, 3], [4, 5, 6]]));
    }

    #[test]
    fn vee_small_run() {
        let c = config("scenario = \"vee_qrps\"\nn_rounds = 9000\nseed = 42");
        let out = run(&c).unwrap();
        assert_eq!(out.report.keep_rate, 1.0);
        assert_eq!(out.report.extras["equal_setting_anticorrelation_rate"], json!(1.0));
        assert!(out.raw.is_none());
        assert!(out.report.chsh_s.is_none());
    }

    #[test]
    fn stray_param_rejected() {
        let c = config("scenario = \"sunday_rps\"\nn_rounds = 10\n[params]\np_a = 0.1");
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("params.p_a"));
    }

    #[test]
    fn zero_target_row_is_config_error() {
        let c = config(
            "scenario = \"wedge_qrps\"\nn_kept = 10\n[params]\nalice_angles_deg = [0]\nbob_angles_deg = [0]\ntarget = \"custom\"\ntarget_rows = [[0, 0, 0, 0]]",
        );
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("invalid target distribution"), "{err}");
    }

    #[test]
    fn invalid_probability_names_key() {
        let c = config("scenario = \"ward_c\"\nn_rounds = 10\n[params]\np_a = 1.5");
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("params.p_a"), "{err}");
    }

    #[test]
    fn budget_is_runtime_error() {
        let c = config("scenario = \"rps_filter\"\nn_kept = 1000\n[params]\nmax_trials = 10");
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("BudgetExceededError"));
    }

    #[test]
    fn emit_raw_needs_path() {
        let c = config("scenario = \"vee_qrps\"\nn_rounds = 10\nemit_raw = true");
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn knob_out_of_range() {
        let c = config("scenario = \"black_box\"\nn_rounds = 10\n[params]\nknob = 5");
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("params.knob"));
    }

    #[test]
    fn timestamp_only_when_asked() {
        let c = config("scenario = \"sunday_rps\"\nn_rounds = 100");
        assert!(run(&c).unwrap().report.manifest.timestamp.is_none());
        assert!(run_with(&c, RunOptions { timestamp: true }).unwrap().report.manifest.timestamp.is_some());
    }

    #[test]
    fn every_scenario_runs() {
        for s in ["ward_c", "sunday_rps", "vee_qrps", "black_box", "crystal_ball_signalling"] {
            run(&config(&format!("scenario = \"{s}\"\nn_rounds = 2000"))).unwrap();
        }
        for s in ["rps_filter", "wedge_qrps"] {
            run(&config(&format!("scenario = \"{s}\"\nn_kept = 2000"))).unwrap();
        }
    }
}
