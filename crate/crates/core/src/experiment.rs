//! Parameter sweeps over random channel realizations.
//!
//! Every cell (sweep value x channel index) builds its forms, solves the
//! requested relaxations and rounds them. Channel `i` uses the same seed at
//! every sweep value, so points are compared on common channels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::build_forms;
use crate::network::{db_to_linear, linear_to_db, sample_channels, NetworkConfig, ScenarioFile, ValidatedConfig};
use crate::par::{derive_seed, Exec};
use crate::randomization::randomize;
use crate::sdr::{bisect_sdr, Variant, DEFAULT_TOL_ABS, DEFAULT_TOL_REL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TotalPowerDb,
    NumUsers,
    NumPerRelayConstraints,
    NumPrimalUsers,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TotalPowerDb => "total_power_db",
            SweepParam::NumUsers => "num_users",
            SweepParam::NumPerRelayConstraints => "num_per_relay_constraints",
            SweepParam::NumPrimalUsers => "num_primal_users",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bf,
    Bfa,
}

impl Scheme {
    pub fn variant(self) -> Variant {
        match self {
            Scheme::Bf => Variant::R1,
            Scheme::Bfa => Variant::R2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bf => "bf",
            Scheme::Bfa => "bfa",
        }
    }
}

fn default_channels() -> usize {
    20
}
fn default_trials() -> usize {
    200
}
fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Bf, Scheme::Bfa]
}
fn default_tol() -> f64 {
    DEFAULT_TOL_REL
}
fn default_per_relay_db() -> f64 {
    -5.0
}
fn default_cap_db() -> f64 {
    3.0
}
fn default_pu_noise() -> f64 {
    0.25
}

/// Sweep description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: ScenarioFile,
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Randomizations per solve.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol_rel: f64,
    /// Budget of each relay switched on by a per-relay sweep.
    #[serde(default = "default_per_relay_db")]
    pub per_relay_budget_db: f64,
    /// Cap of each primal user added by a primal-user sweep.
    #[serde(default = "default_cap_db")]
    pub interference_cap_db: f64,
    #[serde(default = "default_pu_noise")]
    pub pu_noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(|e| Error::Parse(format!("sweep: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.values.is_empty() {
            problems.push("sweep values are empty".to_string());
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            problems.push("sweep values must be strictly increasing".to_string());
        }
        if self.channels == 0 {
            problems.push("channels per point must be at least 1".to_string());
        }
        if self.trials == 0 {
            problems.push("randomizations must be at least 1".to_string());
        }
        if self.schemes.is_empty() {
            problems.push("no schemes selected".to_string());
        }
        if !(self.tol_rel > 0.0) {
            problems.push("tol_rel must be positive".to_string());
        }
        if self.param != SweepParam::TotalPowerDb && self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            problems.push(format!("{} values must be nonnegative integers", self.param.name()));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        for &v in &self.values {
            self.config_for(v)?;
        }
        Ok(())
    }

    /// The scenario at sweep value `value`.
    pub fn config_for(&self, value: f64) -> Result<ValidatedConfig> {
        let mut cfg: NetworkConfig = self.scenario.to_config()?.into_inner();
        let count = value as usize;
        match self.param {
            SweepParam::TotalPowerDb => cfg.total_budget = Some(db_to_linear(value)),
            SweepParam::NumUsers => {
                let g = cfg.groups();
                if count < g {
                    return Err(Error::InvalidConfig(vec![format!("{count} users cannot fill {g} groups")]));
                }
                let noise = cfg.user_noise[0];
                cfg.group_sizes = (0..g).map(|k| count / g + usize::from(k < count % g)).collect();
                cfg.user_noise = vec![noise; count];
            }
            SweepParam::NumPerRelayConstraints => {
                if count > cfg.relays {
                    return Err(Error::InvalidConfig(vec![format!("{count} per-relay constraints but only {} relays", cfg.relays)]));
                }
                cfg = cfg.with_per_relay_budgets(count, db_to_linear(self.per_relay_budget_db));
            }
            SweepParam::NumPrimalUsers => cfg = cfg.with_primal_users(count, db_to_linear(self.interference_cap_db), self.pu_noise),
        }
        cfg.validate()
    }
}

/// One CSV row: one scheme on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_param: String,
    pub value: f64,
    pub channel_idx: usize,
    pub scheme: Scheme,
    pub sdr_value_db: Option<f64>,
    pub rounded_value_db: Option<f64>,
    pub rank_w1: Option<usize>,
    pub rank_w2: Option<usize>,
    pub status: String,
    pub seed: u64,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Aggregate of one scheme at one sweep value. dB means average the
/// per-channel dB values; linear means average the linear values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub value: f64,
    pub scheme: Scheme,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_sdr_db: f64,
    pub mean_rounded_db: f64,
    pub se_rounded_db: f64,
    pub mean_sdr_linear: f64,
    pub mean_rounded_linear: f64,
    pub se_rounded_linear: f64,
    /// Share of solves whose relaxation had every nonzero block of rank one.
    pub rank_one_fraction: f64,
}

/// Per-channel paired difference BFA minus BF at one sweep value, in dB.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedGap {
    pub value: f64,
    pub n: usize,
    pub mean_db: f64,
    pub se_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<PointSummary>,
    pub gaps: Vec<PairedGap>,
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn run_cell(spec: &SweepSpec, cfg: &ValidatedConfig, vi: usize, ci: usize) -> Vec<SweepRow> {
    let value = spec.values[vi];
    let channel_seed = derive_seed(spec.seed, &[1, ci as u64]);
    let ch = sample_channels(cfg, channel_seed);
    let forms = build_forms(cfg, &ch);
    spec.schemes
        .iter()
        .map(|&scheme| {
            let seed = derive_seed(spec.seed, &[2, vi as u64, ci as u64, scheme as u64]);
            let mut row = SweepRow {
                sweep_param: spec.param.name().to_string(),
                value,
                channel_idx: ci,
                scheme,
                sdr_value_db: None,
                rounded_value_db: None,
                rank_w1: None,
                rank_w2: None,
                status: "ok".to_string(),
                seed,
            };
            let outcome = forms.as_ref().map_err(|e| e.to_string()).and_then(|forms| {
                let sol = bisect_sdr(forms, scheme.variant(), spec.tol_rel, DEFAULT_TOL_ABS).map_err(|e| e.to_string())?;
                let rep = randomize(forms, &sol, spec.trials, seed, Exec::Sequential).map_err(|e| e.to_string())?;
                Ok((sol, rep))
            });
            match outcome {
                Ok((sol, rep)) => {
                    row.sdr_value_db = Some(linear_to_db(sol.value));
                    row.rounded_value_db = Some(linear_to_db(rep.best.theta));
                    row.rank_w1 = Some(sol.ranks.0);
                    row.rank_w2 = sol.ranks.1;
                }
                Err(msg) => row.status = format!("failed: {msg}"),
            }
            row
        })
        .collect()
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep_with(spec, Exec::default())
}

pub fn run_sweep_with(spec: &SweepSpec, exec: Exec) -> Result<SweepResult> {
    spec.validate()?;
    let configs = spec.values.iter().map(|&v| spec.config_for(v)).collect::<Result<Vec<_>>>()?;
    let cells = spec.values.len() * spec.channels;
    let mut rows: Vec<SweepRow> = exec
        .map(cells, |n| {
            let (vi, ci) = (n / spec.channels, n % spec.channels);
            run_cell(spec, &configs[vi], vi, ci)
        })
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.channel_idx.cmp(&b.channel_idx)).then(a.scheme.cmp(&b.scheme)));
    let (summary, gaps) = summarize(&rows);
    Ok(SweepResult { rows, summary, gaps })
}

/// Aggregates rows per (value, scheme) and pairs BFA with BF per channel.
pub fn summarize(rows: &[SweepRow]) -> (Vec<PointSummary>, Vec<PairedGap>) {
    let mut groups: BTreeMap<(u64, Scheme), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.value.to_bits(), r.scheme)).or_default().push(r);
    }
    let mut summary: Vec<PointSummary> = groups
        .into_iter()
        .map(|((bits, scheme), rs)| {
            let ok: Vec<&SweepRow> = rs.iter().copied().filter(|r| r.ok()).collect();
            let sdr_db: Vec<f64> = ok.iter().filter_map(|r| r.sdr_value_db).collect();
            let rnd_db: Vec<f64> = ok.iter().filter_map(|r| r.rounded_value_db).collect();
            let lin = |xs: &[f64]| xs.iter().map(|x| 10f64.powf(x / 10.0)).collect::<Vec<_>>();
            let (mean_rounded_db, se_rounded_db) = mean_se(&rnd_db);
            let (mean_rounded_linear, se_rounded_linear) = mean_se(&lin(&rnd_db));
            let rank_one = ok.iter().filter(|r| r.rank_w1.unwrap_or(0) <= 1 && r.rank_w2.unwrap_or(0) <= 1).count();
            PointSummary {
                value: f64::from_bits(bits),
                scheme,
                n_ok: ok.len(),
                n_failed: rs.len() - ok.len(),
                mean_sdr_db: mean_se(&sdr_db).0,
                mean_rounded_db,
                se_rounded_db,
                mean_sdr_linear: mean_se(&lin(&sdr_db)).0,
                mean_rounded_linear,
                se_rounded_linear,
                rank_one_fraction: if ok.is_empty() { f64::NAN } else { rank_one as f64 / ok.len() as f64 },
            }
        })
        .collect();
    summary.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.scheme.cmp(&b.scheme)));

    let mut paired: BTreeMap<(u64, usize), [Option<f64>; 2]> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        let slot = paired.entry((r.value.to_bits(), r.channel_idx)).or_default();
        slot[r.scheme as usize] = r.rounded_value_db;
    }
    let mut by_value: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for ((bits, _), [bf, bfa]) in paired {
        if let (Some(bf), Some(bfa)) = (bf, bfa) {
            by_value.entry(bits).or_default().push(bfa - bf);
        }
    }
    let mut gaps: Vec<PairedGap> = by_value
        .into_iter()
        .map(|(bits, d)| {
            let (mean_db, se_db) = mean_se(&d);
            PairedGap { value: f64::from_bits(bits), n: d.len(), mean_db, se_db }
        })
        .collect();
    gaps.sort_by(|a, b| a.value.total_cmp(&b.value));
    (summary, gaps)
}

pub fn write_rows<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkKind, OneOrMany};

    fn spec(param: SweepParam, values: Vec<f64>, schemes: Vec<Scheme>) -> SweepSpec {
        SweepSpec {
            scenario: ScenarioFile {
                kind: NetworkKind::Distributed,
                relays: 3,
                groups: 2,
                group_sizes: vec![1, 1],
                tx_power_db: OneOrMany::One(0.0),
                relay_noise: OneOrMany::One(0.25),
                user_noise: OneOrMany::One(0.25),
                total_budget_db: Some(10.0),
                per_relay_budgets_db: None,
                interference_caps_db: None,
                pu_noise: None,
            },
            param,
            values,
            channels: 2,
            trials: 10,
            schemes,
            seed: 3,
            tol_rel: 1e-3,
            per_relay_budget_db: -5.0,
            interference_cap_db: 3.0,
            pu_noise: 0.25,
            output: None,
        }
    }

    fn csv_text(rows: &[SweepRow]) -> String {
        let mut buf = Vec::new();
        write_rows(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_matches_schema() {
        let res = run_sweep(&spec(SweepParam::TotalPowerDb, vec![5.0], vec![Scheme::Bf])).unwrap();
        let text = csv_text(&res.rows);
        assert_eq!(
            text.lines().next().unwrap(),
            "sweep_param,value,channel_idx,scheme,sdr_value_db,rounded_value_db,rank_w1,rank_w2,status,seed"
        );
        assert!(res.rows.iter().all(|r| r.scheme == Scheme::Bf && r.rank_w2.is_none()));
        assert!(res.gaps.is_empty());
    }

    #[test]
    fn runs_are_reproducible() {
        let s = spec(SweepParam::NumUsers, vec![2.0, 3.0], vec![Scheme::Bf, Scheme::Bfa]);
        let a = csv_text(&run_sweep(&s).unwrap().rows);
        let b = csv_text(&run_sweep_with(&s, Exec::Sequential).unwrap().rows);
        assert_eq!(a, b);
    }

    #[test]
    fn summary_is_recomputable_from_csv() {
        let s = spec(SweepParam::NumPrimalUsers, vec![0.0, 1.0], vec![Scheme::Bf, Scheme::Bfa]);
        let res = run_sweep(&s).unwrap();
        let back = read_rows(csv_text(&res.rows).as_bytes()).unwrap();
        assert_eq!(back, res.rows);
        for p in &res.summary {
            let xs: Vec<f64> = back
                .iter()
                .filter(|r| r.value == p.value && r.scheme == p.scheme && r.ok())
                .map(|r| r.rounded_value_db.unwrap())
                .collect();
            assert_eq!(p.mean_rounded_db, xs.iter().sum::<f64>() / xs.len() as f64);
        }
        // relaxation ordering per channel
        for pair in res.rows.chunks(2) {
            let (bf, bfa) = (&pair[0], &pair[1]);
            assert_eq!((bf.scheme, bfa.scheme), (Scheme::Bf, Scheme::Bfa));
            let (x, y) = (10f64.powf(bf.sdr_value_db.unwrap() / 10.0), 10f64.powf(bfa.sdr_value_db.unwrap() / 10.0));
            assert!(y >= x * (1.0 - 2e-3));
        }
    }

    #[test]
    fn configs_follow_the_swept_parameter() {
        let s = spec(SweepParam::NumUsers, vec![5.0], vec![Scheme::Bf]);
        assert_eq!(s.config_for(5.0).unwrap().group_sizes, vec![3, 2]);
        let p = spec(SweepParam::NumPerRelayConstraints, vec![2.0], vec![Scheme::Bf]);
        assert_eq!(p.config_for(2.0).unwrap().constraint_count(), 3);
        assert!(p.config_for(4.0).is_err());
        let t = spec(SweepParam::TotalPowerDb, vec![20.0], vec![Scheme::Bf]);
        assert_eq!(t.config_for(20.0).unwrap().total_budget, Some(100.0));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(spec(SweepParam::TotalPowerDb, vec![], vec![Scheme::Bf]).validate().is_err());
        assert!(spec(SweepParam::TotalPowerDb, vec![2.0, 1.0], vec![Scheme::Bf]).validate().is_err());
        assert!(spec(SweepParam::NumUsers, vec![1.5], vec![Scheme::Bf]).validate().is_err());
        assert!(spec(SweepParam::NumUsers, vec![1.0], vec![Scheme::Bf]).validate().is_err());
        let mut s = spec(SweepParam::TotalPowerDb, vec![1.0], vec![]);
        assert!(s.validate().is_err());
        s.schemes = vec![Scheme::Bf];
        s.channels = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn statistics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn spec_json_defaults() {
        let text = r#"{"scenario": {"kind": "distributed", "L": 4, "G": 2, "group_sizes": [2, 2],
            "tx_power_db": 0, "relay_noise": 0.25, "user_noise": 0.25, "total_budget_db": 10},
            "param": "num_users", "values": [4, 8]}"#;
        let s = SweepSpec::from_json(text).unwrap();
        assert_eq!((s.channels, s.trials, s.schemes.len()), (20, 200, 2));
        assert!(SweepSpec::from_json(&text.replace("[4, 8]", "[8, 4]")).is_err());
        assert!(SweepSpec::from_json(&text.replace("\"values\"", "\"bogus\": 1, \"values\"")).is_err());
    }
}
