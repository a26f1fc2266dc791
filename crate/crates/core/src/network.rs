//! Scenario description and i.i.d. Rayleigh channel generation.
//!
//! Everything is stored in linear units; decibel values are only accepted by
//! the JSON scenario schema ([`ScenarioFile`]).

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_normal_vec, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    /// Relays do not exchange received signals; the AF matrix is diagonal.
    Distributed,
    /// Relays share received signals; the AF matrix is unstructured.
    Mimo,
}

impl NetworkKind {
    /// Length of the stacked beamformer for `relays` relays.
    pub fn dim(self, relays: usize) -> usize {
        match self {
            NetworkKind::Distributed => relays,
            NetworkKind::Mimo => relays * relays,
        }
    }
}

/// A relay network scenario in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: NetworkKind,
    pub relays: usize,
    /// Users per multicast group; the group count is its length.
    pub group_sizes: Vec<usize>,
    /// Transmit power of each group's source.
    pub tx_power: Vec<f64>,
    /// Noise variance at each relay.
    pub relay_noise: Vec<f64>,
    /// Noise variance at each user, group-major order.
    pub user_noise: Vec<f64>,
    pub total_budget: Option<f64>,
    /// Either empty or one entry per relay; `None` leaves that relay unconstrained.
    pub per_relay_budgets: Vec<Option<f64>>,
    /// Interference cap at each primal user.
    pub interference_caps: Vec<f64>,
    /// Noise variance at each primal user.
    pub pu_noise: Vec<f64>,
}

impl NetworkConfig {
    /// Equal source powers, one shared relay noise and one shared user noise,
    /// no constraints yet.
    pub fn uniform(kind: NetworkKind, relays: usize, group_sizes: Vec<usize>, tx_power: f64, relay_noise: f64, user_noise: f64) -> Self {
        let users: usize = group_sizes.iter().sum();
        NetworkConfig {
            kind,
            relays,
            tx_power: vec![tx_power; group_sizes.len()],
            group_sizes,
            relay_noise: vec![relay_noise; relays],
            user_noise: vec![user_noise; users],
            total_budget: None,
            per_relay_budgets: Vec::new(),
            interference_caps: Vec::new(),
            pu_noise: Vec::new(),
        }
    }

    pub fn with_total_budget(mut self, budget: f64) -> Self {
        self.total_budget = Some(budget);
        self
    }

    /// Constrains the first `count` relays to `budget` each.
    pub fn with_per_relay_budgets(mut self, count: usize, budget: f64) -> Self {
        self.per_relay_budgets = (0..self.relays).map(|l| (l < count).then_some(budget)).collect();
        self
    }

    pub fn with_primal_users(mut self, count: usize, cap: f64, noise: f64) -> Self {
        self.interference_caps = vec![cap; count];
        self.pu_noise = vec![noise; count];
        self
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn users(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn primal_users(&self) -> usize {
        self.interference_caps.len()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim(self.relays)
    }

    /// Number of power and interference constraints (J).
    pub fn constraint_count(&self) -> usize {
        usize::from(self.total_budget.is_some())
            + self.per_relay_budgets.iter().flatten().count()
            + self.interference_caps.len()
    }

    /// `(group, index within group)` of every user, in storage order.
    pub fn user_labels(&self) -> Vec<(usize, usize)> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &m)| (0..m).map(move |i| (k, i)))
            .collect()
    }

    pub fn validate(self) -> Result<ValidatedConfig> {
        let mut problems = Vec::new();
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);

        if self.relays == 0 {
            problems.push("relay count must be at least 1".to_string());
        }
        if self.group_sizes.is_empty() {
            problems.push("group count must be at least 1".to_string());
        }
        if self.group_sizes.contains(&0) {
            problems.push("every group needs at least one user".to_string());
        }
        if self.tx_power.len() != self.groups() {
            problems.push(format!("expected {} source powers, got {}", self.groups(), self.tx_power.len()));
        }
        if !positive(&self.tx_power) {
            problems.push("source powers must be positive".to_string());
        }
        if self.relay_noise.len() != self.relays {
            problems.push(format!("expected {} relay noise values, got {}", self.relays, self.relay_noise.len()));
        }
        if !positive(&self.relay_noise) {
            problems.push("relay noise must be positive".to_string());
        }
        if self.user_noise.len() != self.users() {
            problems.push(format!("inconsistent M: {} users but {} user noise values", self.users(), self.user_noise.len()));
        }
        if !positive(&self.user_noise) {
            problems.push("user noise must be positive".to_string());
        }
        if let Some(p) = self.total_budget {
            if !(p.is_finite() && p > 0.0) {
                problems.push("total power budget must be positive".to_string());
            }
        }
        if !self.per_relay_budgets.is_empty() && self.per_relay_budgets.len() != self.relays {
            problems.push(format!(
                "expected {} per-relay budget entries, got {}",
                self.relays,
                self.per_relay_budgets.len()
            ));
        }
        if self.per_relay_budgets.iter().flatten().any(|p| !(p.is_finite() && *p > 0.0)) {
            problems.push("per-relay budgets must be positive".to_string());
        }
        if self.pu_noise.len() != self.interference_caps.len() {
            problems.push(format!(
                "expected {} primal-user noise values, got {}",
                self.interference_caps.len(),
                self.pu_noise.len()
            ));
        }
        if !positive(&self.interference_caps) {
            problems.push("interference caps must be positive".to_string());
        }
        if !positive(&self.pu_noise) {
            problems.push("primal-user noise must be positive".to_string());
        }
        if self.constraint_count() == 0 {
            problems.push("no constraints: need a total, per-relay or interference budget".to_string());
        }

        if problems.is_empty() {
            Ok(ValidatedConfig(self))
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// A [`NetworkConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedConfig(NetworkConfig);

impl ValidatedConfig {
    pub fn into_inner(self) -> NetworkConfig {
        self.0
    }
}

impl Deref for ValidatedConfig {
    type Target = NetworkConfig;
    fn deref(&self) -> &NetworkConfig {
        &self.0
    }
}

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// One realization of all channels of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Source of group j to relays.
    pub f: Vec<CVec>,
    /// Relays to user (k, i), group-major.
    pub g: Vec<CVec>,
    /// Relays to primal user u.
    pub h: Vec<CVec>,
}

impl ChannelSet {
    pub fn relays(&self) -> usize {
        self.f.first().map_or(0, |v| v.len())
    }

    /// Checks that the channel counts and lengths match `cfg`.
    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        let l = cfg.relays;
        let all_len = self.f.iter().chain(&self.g).chain(&self.h).all(|v| v.len() == l);
        if self.f.len() != cfg.groups() || self.g.len() != cfg.users() || self.h.len() != cfg.primal_users() || !all_len {
            return Err(Error::DimensionMismatch(format!(
                "channels ({} sources, {} users, {} primal users) do not match scenario (G={}, M={}, U={}, L={})",
                self.f.len(),
                self.g.len(),
                self.h.len(),
                cfg.groups(),
                cfg.users(),
                cfg.primal_users(),
                l
            )));
        }
        let finite = self.f.iter().chain(&self.g).chain(&self.h).flat_map(|v| v.iter()).all(|x| x.re.is_finite() && x.im.is_finite());
        if !finite {
            return Err(Error::Parse("non-finite channel entry".into()));
        }
        Ok(())
    }
}

/// Draws every channel entry i.i.d. CN(0, 1). Sources first, then users,
/// then primal users, each vector relay by relay.
pub fn sample_channels(cfg: &ValidatedConfig, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = cfg.relays;
    let f = (0..cfg.groups()).map(|_| complex_normal_vec(&mut rng, l)).collect();
    let g = (0..cfg.users()).map(|_| complex_normal_vec(&mut rng, l)).collect();
    let h = (0..cfg.primal_users()).map(|_| complex_normal_vec(&mut rng, l)).collect();
    ChannelSet { f, g, h }
}

/// A scalar applied to every element, or one value per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn expand(&self, n: usize) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone(); n],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// The scenario JSON schema. Powers and budgets in dB, noises linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: NetworkKind,
    #[serde(rename = "L")]
    pub relays: usize,
    #[serde(rename = "G")]
    pub groups: usize,
    pub group_sizes: Vec<usize>,
    pub tx_power_db: OneOrMany<f64>,
    pub relay_noise: OneOrMany<f64>,
    pub user_noise: OneOrMany<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_budget_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_relay_budgets_db: Option<OneOrMany<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference_caps_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pu_noise: Option<OneOrMany<f64>>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    /// Converts to linear units and validates.
    pub fn to_config(&self) -> Result<ValidatedConfig> {
        if self.groups != self.group_sizes.len() {
            return Err(Error::InvalidConfig(vec![format!(
                "G = {} but {} group sizes given",
                self.groups,
                self.group_sizes.len()
            )]));
        }
        let users: usize = self.group_sizes.iter().sum();
        let caps: Vec<f64> = self.interference_caps_db.clone().unwrap_or_default().into_iter().map(db_to_linear).collect();
        let cfg = NetworkConfig {
            kind: self.kind,
            relays: self.relays,
            group_sizes: self.group_sizes.clone(),
            tx_power: self.tx_power_db.expand(self.groups).into_iter().map(db_to_linear).collect(),
            relay_noise: self.relay_noise.expand(self.relays),
            user_noise: self.user_noise.expand(users),
            total_budget: self.total_budget_db.map(db_to_linear),
            per_relay_budgets: self
                .per_relay_budgets_db
                .as_ref()
                .map(|b| b.expand(self.relays).into_iter().map(|p| p.map(db_to_linear)).collect())
                .unwrap_or_default(),
            pu_noise: self.pu_noise.as_ref().map(|n| n.expand(caps.len())).unwrap_or_default(),
            interference_caps: caps,
        };
        cfg.validate()
    }

    /// Scenario file describing `cfg` (inverse of [`ScenarioFile::to_config`]).
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        let db = |x: f64| linear_to_db(x);
        ScenarioFile {
            kind: cfg.kind,
            relays: cfg.relays,
            groups: cfg.groups(),
            group_sizes: cfg.group_sizes.clone(),
            tx_power_db: OneOrMany::Many(cfg.tx_power.iter().copied().map(db).collect()),
            relay_noise: OneOrMany::Many(cfg.relay_noise.clone()),
            user_noise: OneOrMany::Many(cfg.user_noise.clone()),
            total_budget_db: cfg.total_budget.map(db),
            per_relay_budgets_db: (!cfg.per_relay_budgets.is_empty())
                .then(|| OneOrMany::Many(cfg.per_relay_budgets.iter().map(|p| p.map(db)).collect())),
            interference_caps_db: (!cfg.interference_caps.is_empty())
                .then(|| cfg.interference_caps.iter().copied().map(db).collect()),
            pu_noise: (!cfg.pu_noise.is_empty()).then(|| OneOrMany::Many(cfg.pu_noise.clone())),
        }
    }
}

/// JSON form of a [`ChannelSet`]: each vector a list of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(rename = "L")]
    pub relays: usize,
    pub seed: Option<u64>,
    pub f: Vec<Vec<[f64; 2]>>,
    pub g: Vec<Vec<[f64; 2]>>,
    pub h: Vec<Vec<[f64; 2]>>,
}

fn vec_to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|x| [x.re, x.im]).collect()
}

fn pairs_to_vec(p: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(p.len(), p.iter().map(|&[re, im]| C64::new(re, im)))
}

impl ChannelFile {
    pub fn from_channels(ch: &ChannelSet, seed: Option<u64>) -> Self {
        ChannelFile {
            relays: ch.relays(),
            seed,
            f: ch.f.iter().map(vec_to_pairs).collect(),
            g: ch.g.iter().map(vec_to_pairs).collect(),
            h: ch.h.iter().map(vec_to_pairs).collect(),
        }
    }

    pub fn to_channels(&self) -> ChannelSet {
        ChannelSet {
            f: self.f.iter().map(|v| pairs_to_vec(v)).collect(),
            g: self.g.iter().map(|v| pairs_to_vec(v)).collect(),
            h: self.h.iter().map(|v| pairs_to_vec(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig4_like() -> NetworkConfig {
        NetworkConfig::uniform(NetworkKind::Distributed, 8, vec![8, 8], 1.0, 0.25, 0.25).with_total_budget(10.0)
    }

    #[test]
    fn fig4_scenario_is_valid() {
        let cfg = fig4_like().validate().unwrap();
        assert_eq!(cfg.users(), 16);
        assert_eq!(cfg.constraint_count(), 1);
    }

    #[test]
    fn zero_relay_noise_rejected() {
        let mut cfg = fig4_like();
        cfg.relay_noise[0] = 0.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("relay noise must be positive"), "{err}");
    }

    #[test]
    fn empty_constraint_set_rejected() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![2], 1.0, 0.25, 0.25);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("no constraints"), "{err}");
    }

    #[test]
    fn inconsistent_user_count_rejected() {
        let mut cfg = fig4_like();
        cfg.user_noise.pop();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("inconsistent M"), "{err}");
    }

    #[test]
    fn every_violation_is_reported() {
        let mut cfg = NetworkConfig::uniform(NetworkKind::Mimo, 2, vec![1], 1.0, 0.25, 0.25);
        cfg.relay_noise[1] = -1.0;
        cfg.user_noise[0] = 0.0;
        match cfg.validate() {
            Err(Error::InvalidConfig(list)) => assert_eq!(list.len(), 3, "{list:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn db_conversion() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((db_to_linear(-5.0) - 0.316_227_766).abs() < 1e-8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = fig4_like().with_primal_users(2, 2.0, 0.25).validate().unwrap();
        let a = sample_channels(&cfg, 42);
        let b = sample_channels(&cfg, 42);
        assert_eq!(a, b);
        assert_ne!(a, sample_channels(&cfg, 43));
        assert_eq!(a.h.len(), 2);
        a.check(&cfg).unwrap();
    }

    #[test]
    fn channel_statistics() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 1, vec![1], 1.0, 1.0, 1.0)
            .with_total_budget(1.0)
            .validate()
            .unwrap();
        let trials = 100_000;
        // f and g are independent entries; both are checked
        let mut sum = [C64::new(0.0, 0.0); 2];
        let mut sq = [0.0f64; 2];
        for s in 0..trials {
            let ch = sample_channels(&cfg, s as u64);
            for (k, x) in [ch.f[0][0], ch.g[0][0]].into_iter().enumerate() {
                sum[k] += x;
                sq[k] += x.norm_sqr();
            }
        }
        for k in 0..2 {
            let mean = sum[k] / trials as f64;
            let var = sq[k] / trials as f64 - mean.norm_sqr();
            assert!(mean.norm() <= 0.02, "mean {mean}");
            assert!((0.98..=1.02).contains(&var), "var {var}");
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let text = r#"{
            "kind": "distributed", "L": 4, "G": 2, "group_sizes": [2, 2],
            "tx_power_db": 0, "relay_noise": 0.25, "user_noise": 0.25,
            "total_budget_db": 10, "per_relay_budgets_db": [-5, null, null, -5],
            "interference_caps_db": [3], "pu_noise": 0.25
        }"#;
        let file = ScenarioFile::from_json(text).unwrap();
        let cfg = file.to_config().unwrap();
        assert_eq!(cfg.constraint_count(), 4);
        assert!((cfg.total_budget.unwrap() - 10.0).abs() < 1e-12);
        let again = ScenarioFile::from_config(&cfg).to_config().unwrap();
        assert_eq!(again.per_relay_budgets.iter().flatten().count(), 2);
        assert!((again.interference_caps[0] - cfg.interference_caps[0]).abs() < 1e-12);
    }

    #[test]
    fn missing_budgets_mean_absent_constraints() {
        let text = r#"{"kind":"mimo","L":2,"G":1,"group_sizes":[2],"tx_power_db":0,"relay_noise":1,"user_noise":1}"#;
        assert!(matches!(ScenarioFile::from_json(text).unwrap().to_config(), Err(Error::InvalidConfig(_))));
    }
}
