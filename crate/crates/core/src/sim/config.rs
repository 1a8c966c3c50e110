//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated. Unknown keys are rejected. [`SimConfig::to_text`] writes every
//! key, so a resolved config can be read back to reproduce a run.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::attacks::{AttackKind, AttackSpec};
use crate::clustering::SizeRule;
use crate::data::TriggerPattern;
use crate::ddig::BetaMode;
use crate::error::{Error, Result};
use crate::model::TrainSpec;
use crate::trust::UpdateSign;

/// Server-side aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    FedAvg,
    Krum,
    Median,
    Trim,
    FlTrust,
    /// Class-inference clustering, in-cluster voting and trust-weighted
    /// aggregation.
    ClusteredVote,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::FedAvg,
        AggregatorKind::Krum,
        AggregatorKind::Median,
        AggregatorKind::Trim,
        AggregatorKind::FlTrust,
        AggregatorKind::ClusteredVote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::Krum => "krum",
            AggregatorKind::Median => "median",
            AggregatorKind::Trim => "trim",
            AggregatorKind::FlTrust => "fltrust",
            AggregatorKind::ClusteredVote => "clustered_vote",
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fedavg" => AggregatorKind::FedAvg,
            "krum" => AggregatorKind::Krum,
            "median" => AggregatorKind::Median,
            "trim" => AggregatorKind::Trim,
            "fltrust" => AggregatorKind::FlTrust,
            "clustered_vote" => AggregatorKind::ClusteredVote,
            other => return Err(Error::config(format!("unknown aggregator `{other}`"))),
        })
    }
}

/// Which similarity drives the votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VotingMetric {
    Gradient,
    Representation,
    /// Vote counts of both metrics are summed.
    Both,
    /// `both` when an auxiliary set is configured, otherwise `gradient`.
    Auto,
}

impl VotingMetric {
    pub fn name(self) -> &'static str {
        match self {
            VotingMetric::Gradient => "gradient",
            VotingMetric::Representation => "representation",
            VotingMetric::Both => "both",
            VotingMetric::Auto => "auto",
        }
    }

    /// `(gradient, representation)` flags for a given auxiliary set size.
    pub fn resolve(self, aux_size: usize) -> (bool, bool) {
        match self {
            VotingMetric::Gradient => (true, false),
            VotingMetric::Representation => (false, true),
            VotingMetric::Both => (true, true),
            VotingMetric::Auto => (true, aux_size > 0),
        }
    }
}

impl FromStr for VotingMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradient" => VotingMetric::Gradient,
            "representation" => VotingMetric::Representation,
            "both" => VotingMetric::Both,
            "auto" => VotingMetric::Auto,
            other => return Err(Error::config(format!("unknown voting metric `{other}`"))),
        })
    }
}

/// Votes per member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KVoteRule {
    /// Half the cluster size budget, capped by the participating members.
    Half,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub clients: usize,
    pub malicious: Vec<usize>,
    pub selection_ratio: f64,
    pub rounds: usize,
    pub classes: usize,
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub noniid_p: f64,
    pub shards: usize,
    pub tau: usize,
    pub lr_client: f64,
    pub lr_server: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub aggregator: AggregatorKind,
    pub byzantine_f: usize,
    pub attack: Option<AttackKind>,
    pub trigger_indices: Vec<usize>,
    pub trigger_values: Vec<f64>,
    pub target_label: usize,
    pub poison_pool: usize,
    pub poison_count: usize,
    pub boost: f64,
    pub stealth_rho: f64,
    pub lambda_clean: f64,
    pub dba_parts: usize,
    pub beta: BetaMode,
    pub size_rule: SizeRule,
    pub voting: VotingMetric,
    pub k_vote: KVoteRule,
    pub gamma: f64,
    pub update_sign: UpdateSign,
    pub aux_size: usize,
    pub aux_classes: usize,
    pub asr_base: usize,
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clients: 50,
            malicious: (0..5).collect(),
            selection_ratio: 0.2,
            rounds: 60,
            classes: 10,
            input_width: 32,
            hidden: vec![64],
            samples_per_class: 1000,
            test_per_class: 100,
            noniid_p: 0.4,
            shards: 250,
            tau: 20,
            lr_client: 0.05,
            lr_server: 0.2,
            epochs: 5,
            batch_size: 20,
            aggregator: AggregatorKind::ClusteredVote,
            byzantine_f: 2,
            attack: None,
            trigger_indices: (0..8).collect(),
            trigger_values: [3.0, -3.0].repeat(4),
            target_label: 0,
            poison_pool: 500,
            poison_count: 125,
            boost: 2.0,
            stealth_rho: 0.0,
            lambda_clean: 1.0,
            dba_parts: 2,
            beta: BetaMode::Mean,
            size_rule: SizeRule::Balanced,
            voting: VotingMetric::Auto,
            k_vote: KVoteRule::Half,
            gamma: 0.1,
            update_sign: UpdateSign::TowardClients,
            aux_size: 60,
            aux_classes: 3,
            asr_base: 200,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl SimConfig {
    /// Parse config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "clients" => self.clients = parse_num(key, v)?,
            "malicious" => self.malicious = parse_list(key, v)?,
            "malicious_count" => self.malicious = (0..parse_num::<usize>(key, v)?).collect(),
            "selection_ratio" => self.selection_ratio = parse_num(key, v)?,
            "rounds" => self.rounds = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "input_width" => self.input_width = parse_num(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "samples_per_class" => self.samples_per_class = parse_num(key, v)?,
            "test_per_class" => self.test_per_class = parse_num(key, v)?,
            "noniid_p" => self.noniid_p = parse_num(key, v)?,
            "shards" => self.shards = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "lr_client" => self.lr_client = parse_num(key, v)?,
            "lr_server" => self.lr_server = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "aggregator" => self.aggregator = v.parse()?,
            "byzantine_f" => self.byzantine_f = parse_num(key, v)?,
            "attack" => {
                self.attack = match v {
                    "none" => None,
                    other => Some(AttackKind::parse(other)?),
                }
            }
            "trigger_indices" => self.trigger_indices = parse_list(key, v)?,
            "trigger_values" => self.trigger_values = parse_list(key, v)?,
            "target_label" => self.target_label = parse_num(key, v)?,
            "poison_pool" => self.poison_pool = parse_num(key, v)?,
            "poison_count" => self.poison_count = parse_num(key, v)?,
            "boost" => self.boost = parse_num(key, v)?,
            "stealth_rho" => self.stealth_rho = parse_num(key, v)?,
            "lambda_clean" => self.lambda_clean = parse_num(key, v)?,
            "dba_parts" => self.dba_parts = parse_num(key, v)?,
            "beta" => {
                self.beta = match v {
                    "mean" => BetaMode::Mean,
                    "mean_plus_std" => BetaMode::MeanPlusStd,
                    other => BetaMode::Absolute(parse_num(key, other)?),
                }
            }
            "size_rule" => {
                self.size_rule = match v {
                    "balanced" => SizeRule::Balanced,
                    "smallest" => SizeRule::SmallestCluster,
                    other => return Err(Error::config(format!("unknown size rule `{other}`"))),
                }
            }
            "voting" => self.voting = v.parse()?,
            "k_vote" => {
                self.k_vote = match v {
                    "half" => KVoteRule::Half,
                    other => KVoteRule::Fixed(parse_num(key, other)?),
                }
            }
            "gamma" => self.gamma = parse_num(key, v)?,
            "update_sign" => {
                self.update_sign = match v {
                    "toward_clients" => UpdateSign::TowardClients,
                    "subtract" => UpdateSign::Subtract,
                    other => return Err(Error::config(format!("unknown update sign `{other}`"))),
                }
            }
            "aux_size" => self.aux_size = parse_num(key, v)?,
            "aux_classes" => self.aux_classes = parse_num(key, v)?,
            "asr_base" => self.asr_base = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a stable order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("clients", self.clients.to_string());
        put("malicious", join(&self.malicious));
        put("selection_ratio", self.selection_ratio.to_string());
        put("rounds", self.rounds.to_string());
        put("classes", self.classes.to_string());
        put("input_width", self.input_width.to_string());
        put("hidden", join(&self.hidden));
        put("samples_per_class", self.samples_per_class.to_string());
        put("test_per_class", self.test_per_class.to_string());
        put("noniid_p", self.noniid_p.to_string());
        put("shards", self.shards.to_string());
        put("tau", self.tau.to_string());
        put("lr_client", self.lr_client.to_string());
        put("lr_server", self.lr_server.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("aggregator", self.aggregator.name().into());
        put("byzantine_f", self.byzantine_f.to_string());
        put("attack", self.attack.map_or("none", AttackKind::name).into());
        put("trigger_indices", join(&self.trigger_indices));
        put("trigger_values", join(&self.trigger_values));
        put("target_label", self.target_label.to_string());
        put("poison_pool", self.poison_pool.to_string());
        put("poison_count", self.poison_count.to_string());
        put("boost", self.boost.to_string());
        put("stealth_rho", self.stealth_rho.to_string());
        put("lambda_clean", self.lambda_clean.to_string());
        put("dba_parts", self.dba_parts.to_string());
        put(
            "beta",
            match self.beta {
                BetaMode::Mean => "mean".into(),
                BetaMode::MeanPlusStd => "mean_plus_std".into(),
                BetaMode::Absolute(b) => b.to_string(),
            },
        );
        put(
            "size_rule",
            match self.size_rule {
                SizeRule::Balanced => "balanced",
                SizeRule::SmallestCluster => "smallest",
            }
            .into(),
        );
        put("voting", self.voting.name().into());
        put(
            "k_vote",
            match self.k_vote {
                KVoteRule::Half => "half".into(),
                KVoteRule::Fixed(k) => k.to_string(),
            },
        );
        put("gamma", self.gamma.to_string());
        put(
            "update_sign",
            match self.update_sign {
                UpdateSign::TowardClients => "toward_clients",
                UpdateSign::Subtract => "subtract",
            }
            .into(),
        );
        put("aux_size", self.aux_size.to_string());
        put("aux_classes", self.aux_classes.to_string());
        put("asr_base", self.asr_base.to_string());
        put("output_dir", self.output_dir.display().to_string());
        s
    }

    /// Layer widths from input to logits.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_width];
        d.extend(&self.hidden);
        d.push(self.classes);
        d
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            lr: self.lr_client,
            batch_size: self.batch_size,
        }
    }

    pub fn trigger(&self) -> TriggerPattern {
        TriggerPattern {
            indices: self.trigger_indices.clone(),
            values: self.trigger_values.clone(),
            target_label: self.target_label,
        }
    }

    pub fn attack_spec(&self) -> Option<AttackSpec> {
        self.attack.map(|kind| AttackSpec {
            kind,
            trigger: self.trigger(),
            poison_count: self.poison_count,
            boost: self.boost,
            stealth_rho: self.stealth_rho,
            lambda_clean: self.lambda_clean,
            dba_parts: self.dba_parts,
        })
    }

    /// Clients selected per round, `round(ratio * n)`.
    pub fn per_round(&self) -> usize {
        (self.selection_ratio * self.clients as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return bad(format!("selection_ratio {} outside (0, 1]", self.selection_ratio));
        }
        if self.per_round() < 2 {
            return bad("selection_ratio * clients must select at least 2 clients".into());
        }
        if let Some(&j) = self.malicious.iter().find(|&&j| j >= self.clients) {
            return bad(format!("malicious client {j} is not a client"));
        }
        let mut m = self.malicious.clone();
        m.sort_unstable();
        m.dedup();
        if m.len() != self.malicious.len() {
            return bad("malicious clients must be distinct".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.classes < 2 || self.input_width == 0 || self.hidden.contains(&0) {
            return bad("model dimensions must be positive with at least two classes".into());
        }
        if self.samples_per_class == 0 || self.test_per_class == 0 {
            return bad("sample counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noniid_p) {
            return bad(format!("noniid_p {} outside [0, 1]", self.noniid_p));
        }
        if self.shards == 0 || !self.shards.is_multiple_of(self.clients) {
            return bad(format!("shards {} must be a positive multiple of clients", self.shards));
        }
        if !(self.lr_client > 0.0 && self.lr_client.is_finite()) {
            return bad("lr_client must be positive".into());
        }
        if !(self.lr_server > 0.0 && self.lr_server.is_finite()) {
            return bad("lr_server must be positive".into());
        }
        self.train_spec().validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if let KVoteRule::Fixed(0) = self.k_vote {
            return bad("k_vote must be at least 1".into());
        }
        let k = self.per_round();
        match self.aggregator {
            AggregatorKind::Krum if k < 2 * self.byzantine_f + 3 => {
                return bad(format!("krum needs at least {} clients per round", 2 * self.byzantine_f + 3));
            }
            AggregatorKind::Trim if k <= 2 * self.byzantine_f => {
                return bad(format!("trim needs more than {} clients per round", 2 * self.byzantine_f));
            }
            AggregatorKind::FlTrust if self.aux_size == 0 => {
                return bad("fltrust needs an auxiliary set (aux_size > 0)".into());
            }
            _ => {}
        }
        if self.aux_size > 0 && (self.aux_classes == 0 || self.aux_classes > self.classes) {
            return bad(format!("aux_classes {} outside [1, classes]", self.aux_classes));
        }
        let (_, rep) = self.voting.resolve(self.aux_size);
        if rep && self.aux_size == 0 {
            return bad("representation voting needs an auxiliary set".into());
        }
        self.trigger().validate(self.input_width, self.classes)?;
        if let Some(spec) = self.attack_spec() {
            spec.validate(self.input_width, self.classes)?;
            if self.poison_count > self.poison_pool {
                return bad("poison_count exceeds poison_pool".into());
            }
        }
        if self.asr_base > self.test_per_class * (self.classes - 1) {
            return bad("asr_base exceeds the non-target test records".into());
        }
        if let BetaMode::Absolute(b) = self.beta {
            if !b.is_finite() {
                return bad("beta must be finite".into());
            }
        }
        Ok(())
    }
}
