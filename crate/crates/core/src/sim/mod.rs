//! Seeded experiment loop: select clients, train (honestly or not), run the
//! configured server-side defence, aggregate, evaluate and record.

mod config;
mod output;

pub use config::{AggregatorKind, KVoteRule, SimConfig, VotingMetric};
pub use output::{ddig_csv, rounds_csv, trust_csv, write_outputs, OutputPaths, ROUNDS_HEADER, TRUST_HEADER};

use serde::Serialize;

use crate::attacks::{self, AttackInput, AttackKind};
use crate::baselines;
use crate::clustering::{self, ClusterThresholds};
use crate::data::{ground_truth_abstract, partition_noniid, AbstractDistribution, GaussianTask, LabeledDataset, TriggerPattern};
use crate::ddig::{self, DdigConfig};
use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::model::{argmax, local_train, ModelParams, ModelUpdate};
use crate::rng::{derive_seed, rng_from, stream};
use crate::trust::{self, TrustLedger, VoteBudget};
use rand::seq::SliceRandom;

/// Rounds before trust is compared between honest and malicious clients.
pub const TRUST_WARMUP_ROUNDS: usize = 10;

/// `round(ratio * n)` clients drawn uniformly without replacement, sorted.
pub fn select_clients(n: usize, ratio: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    let k = (ratio * n as f64).round() as usize;
    if !(ratio > 0.0 && ratio <= 1.0) || k < 2 {
        return Err(Error::config(format!("cannot select round({ratio} * {n}) >= 2 clients")));
    }
    let mut rng = rng_from(seed, &[stream::SELECT, round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub asr: f64,
    /// False when no base record is classified correctly without the
    /// trigger; `asr` is then reported as 0.
    pub asr_defined: bool,
}

/// Accuracy on `test`, and the attack success rate over `base` records:
/// among base records classified correctly when clean, the fraction
/// classified as the target once triggered.
pub fn evaluate(model: &ModelParams, test: &LabeledDataset, trigger: &TriggerPattern, base: &[usize]) -> Result<Evaluation> {
    let out = model.forward(test.samples(), test.width())?;
    let preds = out.predictions();
    let correct = preds.iter().zip(test.labels()).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / test.len().max(1) as f64;

    let clean_ok: Vec<usize> = base.iter().copied().filter(|&i| preds[i] == test.labels()[i]).collect();
    if clean_ok.is_empty() {
        return Ok(Evaluation {
            accuracy,
            asr: 0.0,
            asr_defined: false,
        });
    }
    let mut triggered = Vec::with_capacity(clean_ok.len() * test.width());
    for &i in &clean_ok {
        let mut x = test.sample(i).to_vec();
        trigger.apply(&mut x);
        triggered.extend_from_slice(&x);
    }
    let t_out = model.forward(&triggered, test.width())?;
    let hits = (0..clean_ok.len())
        .filter(|&r| argmax(t_out.logits_row(r)) == trigger.target_label)
        .count();
    Ok(Evaluation {
        accuracy,
        asr: hits as f64 / clean_ok.len() as f64,
        asr_defined: true,
    })
}

/// `count` test records outside the target class, chosen once per seed.
pub fn asr_base_indices(test: &LabeledDataset, target: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != target).collect();
    pool.shuffle(&mut rng_from(seed, &[stream::EVAL]));
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Everything fixed before the first round.
#[derive(Debug, Clone)]
pub struct Environment {
    pub clients: Vec<LabeledDataset>,
    pub test: LabeledDataset,
    /// Server-held clean samples; empty when `aux_size = 0`.
    pub aux: LabeledDataset,
    /// Shared clean samples the attackers poison, none from the target class.
    pub pool: LabeledDataset,
    pub asr_base: Vec<usize>,
    pub truth: AbstractDistribution,
    pub initial: ModelParams,
}

/// `count` fresh samples drawn only from `classes`, in a seeded random order.
fn held_out(task: &GaussianTask, count: usize, classes: &[usize], seed: u64, tag: u64) -> LabeledDataset {
    let per_class = count.div_ceil(classes.len().max(1));
    let mut rng = rng_from(seed, &[tag, 1]);
    let all = task.sample(per_class, &mut rng);
    let mut idx: Vec<usize> = (0..all.len()).filter(|&i| classes.contains(&all.labels()[i])).collect();
    idx.shuffle(&mut rng);
    idx.truncate(count);
    all.subset(&idx)
}

pub fn build_environment(cfg: &SimConfig) -> Result<Environment> {
    cfg.validate()?;
    let seed = cfg.seed;
    let task = GaussianTask::new(cfg.classes, cfg.input_width, seed)?;
    let train = task.sample(cfg.samples_per_class, &mut rng_from(seed, &[stream::DATA, 1]));
    let clients = partition_noniid(&train, cfg.clients, cfg.noniid_p, cfg.shards, seed)?;
    let test = task.sample(cfg.test_per_class, &mut rng_from(seed, &[stream::TEST, 1]));

    let aux = if cfg.aux_size > 0 {
        let mut classes: Vec<usize> = (0..cfg.classes).collect();
        classes.shuffle(&mut rng_from(seed, &[stream::AUX]));
        classes.truncate(cfg.aux_classes);
        held_out(&task, cfg.aux_size, &classes, seed, stream::AUX)
    } else {
        LabeledDataset::empty(cfg.input_width, cfg.classes)
    };
    let non_target: Vec<usize> = (0..cfg.classes).filter(|&c| c != cfg.target_label).collect();
    let pool = held_out(&task, cfg.poison_pool, &non_target, seed, stream::POISON);
    let asr_base = asr_base_indices(&test, cfg.target_label, cfg.asr_base, seed);
    let truth = ground_truth_abstract(&clients, cfg.tau)?;
    let initial = ModelParams::init(&cfg.dims(), derive_seed(seed, &[stream::INIT]))?;
    Ok(Environment {
        clients,
        test,
        aux,
        pool,
        asr_base,
        truth,
        initial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustEntry {
    pub client: usize,
    pub malicious: bool,
    pub votes: usize,
    pub immediate: f64,
    pub accumulated: f64,
    pub discarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdigEntry {
    pub client: usize,
    pub u: Vec<f64>,
    pub inferred: Vec<bool>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub malicious_selected: Vec<usize>,
    pub discarded: Vec<usize>,
    pub accuracy: f64,
    pub asr: f64,
    pub asr_defined: bool,
    /// ASR with only the first trigger part (DBA runs).
    pub asr_part: Option<f64>,
    /// Agreement of the selected clients' inferred columns with the truth.
    pub ddig_accuracy: Option<f64>,
    pub thresholds: Option<(usize, usize)>,
    pub cluster_sizes: Vec<usize>,
    /// Largest cluster-membership count among selected malicious clients.
    pub max_malicious_memberships: Option<usize>,
    /// Votes cast between selected malicious clients, and the cap on them.
    pub collusion_votes: usize,
    pub collusion_cap: usize,
    pub empty_aggregate: bool,
    pub trust: Vec<TrustEntry>,
    pub ddig: Vec<DdigEntry>,
    /// Inferred distribution and the clustering computed from it.
    #[serde(skip)]
    pub clustering: Option<(BinaryMatrix, BinaryMatrix)>,
}

impl RoundRecord {
    fn mean_trust(&self, malicious: bool) -> Option<f64> {
        let v: Vec<f64> = self
            .trust
            .iter()
            .filter(|t| t.malicious == malicious)
            .map(|t| t.accumulated)
            .collect();
        (!v.is_empty()).then(|| crate::vector::mean(&v))
    }

    pub fn mean_malicious_trust(&self) -> Option<f64> {
        self.mean_trust(true)
    }

    pub fn mean_honest_trust(&self) -> Option<f64> {
        self.mean_trust(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub aggregator: String,
    pub attack: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_asr: f64,
    pub final_asr_defined: bool,
    /// Mean accumulated trust over every (round, selected malicious client).
    pub mean_malicious_trust: Option<f64>,
    pub mean_honest_trust: Option<f64>,
    /// The same means restricted to rounds from [`TRUST_WARMUP_ROUNDS`] on.
    pub late_malicious_trust: Option<f64>,
    pub late_honest_trust: Option<f64>,
    pub mean_ddig_accuracy: Option<f64>,
    pub empty_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: SimConfig,
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

fn entry_mean(records: &[RoundRecord], from: usize, malicious: bool) -> Option<f64> {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.round >= from)
        .flat_map(|r| r.trust.iter().filter(|t| t.malicious == malicious).map(|t| t.accumulated))
        .collect();
    (!v.is_empty()).then(|| crate::vector::mean(&v))
}

pub fn summarize(cfg: &SimConfig, records: &[RoundRecord]) -> Summary {
    let last = records.last();
    let ddig: Vec<f64> = records.iter().filter_map(|r| r.ddig_accuracy).collect();
    Summary {
        seed: cfg.seed,
        aggregator: cfg.aggregator.name().into(),
        attack: cfg.attack.map_or("none", AttackKind::name).into(),
        rounds: records.len(),
        final_accuracy: last.map_or(0.0, |r| r.accuracy),
        final_asr: last.map_or(0.0, |r| r.asr),
        final_asr_defined: last.is_some_and(|r| r.asr_defined),
        mean_malicious_trust: entry_mean(records, 0, true),
        mean_honest_trust: entry_mean(records, 0, false),
        late_malicious_trust: entry_mean(records, TRUST_WARMUP_ROUNDS, true),
        late_honest_trust: entry_mean(records, TRUST_WARMUP_ROUNDS, false),
        mean_ddig_accuracy: (!ddig.is_empty()).then(|| crate::vector::mean(&ddig)),
        empty_rounds: records.iter().filter(|r| r.empty_aggregate).count(),
    }
}

/// Element-wise agreement between the ground truth and the matrix inferred
/// from one round of training every client from the initial model.
pub fn ddig_fidelity(cfg: &SimConfig, env: &Environment) -> Result<(f64, BinaryMatrix)> {
    let ddig_cfg = DdigConfig {
        beta: cfg.beta,
        lr: cfg.lr_client,
    };
    let spec = cfg.train_spec();
    let mut cols = Vec::with_capacity(env.clients.len());
    for (j, data) in env.clients.iter().enumerate() {
        let delta = local_train(&env.initial, data, &spec, derive_seed(cfg.seed, &[stream::TRAIN, u64::MAX, j as u64]))
            .map_err(|e| e.at(0, j))?;
        let u = ModelUpdate::new(j, 0, delta, env.initial.dim())?;
        cols.push(ddig::infer_update(&u, env.initial.shapes(), &ddig_cfg)?.1);
    }
    let inferred = BinaryMatrix::from_columns(cfg.classes, &cols)?;
    Ok((ddig::inference_accuracy(&env.truth.matrix, &inferred)?, inferred))
}

/// Server state for the clustered-vote defence.
struct VoteState {
    /// Latest inferred column per client; `None` until it first reports.
    columns: Vec<Option<Vec<bool>>>,
    ledger: TrustLedger,
}

fn budget(rule: KVoteRule, th: ClusterThresholds) -> VoteBudget {
    match rule {
        KVoteRule::Half => VoteBudget::HalfClusterSize { n_th: th.n_th },
        KVoteRule::Fixed(k) => VoteBudget::Fixed(k),
    }
}

struct Round<'a> {
    cfg: &'a SimConfig,
    env: &'a Environment,
    round: usize,
    selected: Vec<usize>,
    updates: Vec<ModelUpdate>,
}

/// Updates submitted by the selected clients.
fn client_updates(cfg: &SimConfig, env: &Environment, global: &ModelParams, round: usize, selected: &[usize]) -> Result<Vec<ModelUpdate>> {
    let spec = cfg.train_spec();
    let attack = cfg.attack_spec();
    let dim = global.dim();
    let mut sybil_leader: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(selected.len());
    for &j in selected {
        let seed = derive_seed(cfg.seed, &[stream::TRAIN, round as u64, j as u64]);
        let rank = cfg.malicious.iter().position(|&m| m == j);
        let delta = match (&attack, rank) {
            (Some(a), Some(rank)) => {
                if a.kind == AttackKind::Sybil {
                    if let Some(d) = &sybil_leader {
                        d.clone()
                    } else {
                        let input = attack_input(env, global, j, spec, seed);
                        let d = attacks::attack_delta(&input, a, rank, cfg.beta).map_err(|e| e.at(round, j))?;
                        sybil_leader = Some(d.clone());
                        d
                    }
                } else {
                    let input = attack_input(env, global, j, spec, seed);
                    attacks::attack_delta(&input, a, rank, cfg.beta).map_err(|e| e.at(round, j))?
                }
            }
            _ => local_train(global, &env.clients[j], &spec, seed).map_err(|e| e.at(round, j))?,
        };
        out.push(ModelUpdate::new(j, round, delta, dim).map_err(|e| e.at(round, j))?);
    }
    Ok(out)
}

fn attack_input<'a>(env: &'a Environment, global: &'a ModelParams, j: usize, train: crate::model::TrainSpec, seed: u64) -> AttackInput<'a> {
    AttackInput {
        global,
        clean: &env.clients[j],
        pool: &env.pool,
        train,
        seed,
    }
}

impl Round<'_> {
    fn is_malicious(&self, j: usize) -> bool {
        self.cfg.malicious.contains(&j)
    }

    fn deltas(&self) -> Vec<&[f64]> {
        self.updates.iter().map(|u| &u.delta[..]).collect()
    }

    /// Baseline aggregators: `global + step`.
    fn baseline(&self, global: &mut ModelParams) -> Result<()> {
        let ds = self.deltas();
        let f = self.cfg.byzantine_f;
        let step = match self.cfg.aggregator {
            AggregatorKind::FedAvg => baselines::fedavg(&ds)?,
            AggregatorKind::Krum => baselines::krum(&ds, f)?,
            AggregatorKind::Median => baselines::coordinate_median(&ds)?,
            AggregatorKind::Trim => baselines::trimmed_mean(&ds, f)?,
            AggregatorKind::FlTrust => {
                let seed = derive_seed(self.cfg.seed, &[stream::AUX, self.round as u64]);
                let server = local_train(global, &self.env.aux, &self.cfg.train_spec(), seed)?;
                baselines::fltrust(&ds, &server)?
            }
            AggregatorKind::ClusteredVote => unreachable!("handled by the vote stage"),
        };
        global.add_scaled(1.0, &step);
        Ok(())
    }

    fn vote(&self, global: &mut ModelParams, state: &mut VoteState, rec: &mut RoundRecord) -> Result<()> {
        let cfg = self.cfg;
        let n = cfg.clients;
        let ddig_cfg = DdigConfig {
            beta: cfg.beta,
            lr: cfg.lr_client,
        };
        let mut agree = 0usize;
        for u in &self.updates {
            let (ind, col) = ddig::infer_update(u, global.shapes(), &ddig_cfg).map_err(|e| e.at(self.round, u.client_id))?;
            let truth = self.env.truth.matrix.column(u.client_id);
            agree += col.iter().zip(&truth).filter(|(a, b)| a == b).count();
            rec.ddig.push(DdigEntry {
                client: u.client_id,
                u: ind.u,
                inferred: col.clone(),
                truth,
            });
            state.columns[u.client_id] = Some(col);
        }
        rec.ddig_accuracy = Some(agree as f64 / (self.updates.len() * cfg.classes) as f64);

        let cols: Vec<Vec<bool>> = state
            .columns
            .iter()
            .map(|c| c.clone().unwrap_or_else(|| vec![false; cfg.classes]))
            .collect();
        let a = BinaryMatrix::from_columns(cfg.classes, &cols)?;
        let th = clustering::compute_thresholds(&a, cfg.size_rule)?.thresholds;
        let x = clustering::greedy_cluster(&a, th);
        if !(x.x.is_subset_of(&a)
            && x.cluster_sizes().iter().all(|&s| s <= th.n_th)
            && x.memberships().iter().all(|&c| c <= th.m_th))
        {
            return Err(Error::Invariant(format!("round {}: clustering exceeds its budgets", self.round)));
        }
        rec.thresholds = Some((th.m_th, th.n_th));
        rec.cluster_sizes = x.cluster_sizes();
        let memberships = x.memberships();
        rec.clustering = Some((a, x.x.clone()));
        rec.max_malicious_memberships = self
            .selected
            .iter()
            .filter(|&&j| self.is_malicious(j))
            .map(|&j| memberships[j])
            .max();

        // per-client similarity vectors for the selected clients
        let (use_grad, use_rep) = cfg.voting.resolve(cfg.aux_size);
        let mut grad: Vec<Option<&[f64]>> = vec![None; n];
        for u in &self.updates {
            grad[u.client_id] = Some(&u.delta);
        }
        let reps: Vec<(usize, Vec<f64>)> = if use_rep {
            let aux = self.env.aux.to_batch()?;
            self.updates
                .iter()
                .map(|u| Ok((u.client_id, global.with_delta(&u.delta).representation(&aux)?)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut rep: Vec<Option<&[f64]>> = vec![None; n];
        for (j, r) in &reps {
            rep[*j] = Some(r);
        }

        let b = budget(cfg.k_vote, th);
        let mut ballots = Vec::new();
        if use_grad {
            ballots.extend(trust::cluster_ballots(&x.x, &grad, b)?);
        }
        if use_rep {
            ballots.extend(trust::cluster_ballots(&x.x, &rep, b)?);
        }
        self.check_collusion(&x.x, &grad, b, &ballots, use_grad as usize + use_rep as usize, rec)?;
        let all_votes = trust::tally(&ballots, n);

        let votes: Vec<usize> = self.selected.iter().map(|&j| all_votes[j]).collect();
        let now = trust::immediate_trust(&votes);
        let total: f64 = now.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("round {}: immediate trust sums to {total}", self.round)));
        }
        let discards = state.ledger.discards(&self.selected);
        let acc = state.ledger.update(self.round, &self.selected, &votes, &now);
        let acc_total: f64 = acc.iter().sum();
        if (acc_total - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("round {}: accumulated trust sums to {acc_total}", self.round)));
        }

        let mut kept = Vec::new();
        let mut weights = Vec::new();
        for (k, &j) in self.selected.iter().enumerate() {
            let dropped = discards.contains(&j);
            rec.trust.push(TrustEntry {
                client: j,
                malicious: self.is_malicious(j),
                votes: votes[k],
                immediate: now[k],
                accumulated: acc[k],
                discarded: dropped,
            });
            if !dropped {
                kept.push(&self.updates[k]);
                weights.push(acc[k]);
            }
        }
        rec.discarded = discards;
        let out = trust::aggregate(global, &kept, &weights, cfg.lr_server, cfg.update_sign)?;
        if out.applied.iter().any(|c| !self.selected.contains(c) || rec.discarded.contains(c)) {
            return Err(Error::Invariant(format!("round {}: aggregated an unselected or discarded client", self.round)));
        }
        rec.empty_aggregate = out.empty;
        *global = out.model;
        Ok(())
    }

    /// Votes exchanged between selected malicious clients in each cluster
    /// must not exceed `s * min(k, s - 1)` per metric.
    fn check_collusion(
        &self,
        x: &BinaryMatrix,
        vectors: &[Option<&[f64]>],
        b: VoteBudget,
        ballots: &[trust::Ballot],
        metrics: usize,
        rec: &mut RoundRecord,
    ) -> Result<()> {
        let mut used = 0;
        let mut cap = 0;
        for i in 0..x.rows() {
            let members: Vec<usize> = x.row_members(i).into_iter().filter(|&j| vectors[j].is_some()).collect();
            let s = members.iter().filter(|&&j| self.is_malicious(j)).count();
            let c = metrics * trust::collusion_cap(s, b.votes_for(members.len()));
            let u = ballots
                .iter()
                .filter(|bl| bl.cluster == i && self.is_malicious(bl.voter) && self.is_malicious(bl.votee))
                .count();
            if u > c {
                return Err(Error::Invariant(format!(
                    "round {}: cluster {i} has {u} colluding votes, cap {c}",
                    self.round
                )));
            }
            used += u;
            cap += c;
        }
        rec.collusion_votes = used;
        rec.collusion_cap = cap;
        Ok(())
    }
}

/// Run every round of `cfg` and return the per-round records.
pub fn run_experiment(cfg: &SimConfig) -> Result<RunResult> {
    let env = build_environment(cfg)?;
    run_in(cfg, &env)
}

/// [`run_experiment`] on a prepared environment.
pub fn run_in(cfg: &SimConfig, env: &Environment) -> Result<RunResult> {
    cfg.validate()?;
    let mut global = env.initial.clone();
    let trigger = cfg.trigger();
    let part_trigger = match cfg.attack {
        Some(AttackKind::Dba) => Some(trigger.split(cfg.dba_parts)?.remove(0)),
        _ => None,
    };
    let mut state = VoteState {
        columns: vec![None; cfg.clients],
        ledger: TrustLedger::new(cfg.clients, cfg.gamma)?,
    };
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let selected = select_clients(cfg.clients, cfg.selection_ratio, t, cfg.seed)?;
        let updates = client_updates(cfg, env, &global, t, &selected)?;
        let round = Round {
            cfg,
            env,
            round: t,
            selected,
            updates,
        };
        let mut rec = RoundRecord {
            round: t,
            malicious_selected: round.selected.iter().copied().filter(|&j| round.is_malicious(j)).collect(),
            selected: round.selected.clone(),
            discarded: Vec::new(),
            accuracy: 0.0,
            asr: 0.0,
            asr_defined: false,
            asr_part: None,
            ddig_accuracy: None,
            thresholds: None,
            cluster_sizes: Vec::new(),
            max_malicious_memberships: None,
            collusion_votes: 0,
            collusion_cap: 0,
            empty_aggregate: false,
            trust: Vec::new(),
            ddig: Vec::new(),
            clustering: None,
        };
        if cfg.aggregator == AggregatorKind::ClusteredVote {
            round.vote(&mut global, &mut state, &mut rec)?;
        } else {
            round.baseline(&mut global)?;
        }
        if !crate::vector::is_finite(global.flat()) {
            return Err(Error::Training(format!("round {t}: global model diverged")));
        }
        let ev = evaluate(&global, &env.test, &trigger, &env.asr_base)?;
        rec.accuracy = ev.accuracy;
        rec.asr = ev.asr;
        rec.asr_defined = ev.asr_defined;
        if let Some(p) = &part_trigger {
            rec.asr_part = Some(evaluate(&global, &env.test, p, &env.asr_base)?.asr);
        }
        records.push(rec);
    }
    let summary = summarize(cfg, &records);
    Ok(RunResult {
        config: cfg.clone(),
        records,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig::from_text(
            "clients=10\nshards=50\nsamples_per_class=100\ntest_per_class=30\nrounds=3\nselection_ratio=0.5\npoison_pool=60\npoison_count=30\nasr_base=50\n",
        )
        .unwrap()
    }

    #[test]
    fn selection_basics() {
        assert_eq!(select_clients(10, 1.0, 0, 1).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(select_clients(50, 0.2, 3, 9).unwrap(), select_clients(50, 0.2, 3, 9).unwrap());
        assert_ne!(select_clients(50, 0.2, 3, 9).unwrap(), select_clients(50, 0.2, 4, 9).unwrap());
        assert!(select_clients(5, 0.2, 0, 1).is_err());
    }

    #[test]
    fn selection_frequency_is_binomial() {
        let mut hits = [0usize; 50];
        for t in 0..1000 {
            for j in select_clients(50, 0.2, t, 5).unwrap() {
                hits[j] += 1;
            }
        }
        assert!(hits.iter().all(|&h| (160..=240).contains(&h)), "{hits:?}");
    }

    #[test]
    fn uniform_model_is_at_chance() {
        let cfg = small();
        let env = build_environment(&cfg).unwrap();
        let zero = ModelParams::from_flat(env.initial.shapes().to_vec(), vec![0.0; env.initial.dim()]).unwrap();
        let ev = evaluate(&zero, &env.test, &cfg.trigger(), &env.asr_base).unwrap();
        // argmax of a constant vector picks class 0, one class in ten
        assert!((ev.accuracy - 0.1).abs() < 1e-12);
        assert!(!ev.asr_defined);
        assert_eq!(ev.asr, 0.0);
    }

    #[test]
    fn target_only_model_flags_undefined_asr() {
        let cfg = small();
        let env = build_environment(&cfg).unwrap();
        let mut flat = vec![0.0; env.initial.dim()];
        let last_bias = flat.len() - cfg.classes + cfg.target_label;
        flat[last_bias] = 10.0;
        let m = ModelParams::from_flat(env.initial.shapes().to_vec(), flat).unwrap();
        let ev = evaluate(&m, &env.test, &cfg.trigger(), &env.asr_base).unwrap();
        assert!(!ev.asr_defined);
        assert!(env.asr_base.iter().all(|&i| env.test.labels()[i] != cfg.target_label));
        assert_eq!(env.asr_base.len(), 50);
    }

    #[test]
    fn environment_is_consistent() {
        let cfg = small();
        let env = build_environment(&cfg).unwrap();
        assert_eq!(env.clients.len(), 10);
        assert_eq!(env.pool.len(), 60);
        assert!(env.pool.labels().iter().all(|&l| l != cfg.target_label));
        assert_eq!(env.aux.len(), 60);
        let mut classes: Vec<usize> = env.aux.labels().to_vec();
        classes.sort_unstable();
        classes.dedup();
        assert_eq!(classes.len(), 3);
    }

    #[test]
    fn runs_are_deterministic_and_bounded() {
        for agg in ["clustered_vote", "fedavg", "krum", "median", "trim", "fltrust"] {
            let mut cfg = small();
            cfg.apply_override(&format!("aggregator={agg}")).unwrap();
            cfg.apply_override("attack=basic").unwrap();
            cfg.apply_override("byzantine_f=1").unwrap();
            let a = run_experiment(&cfg).unwrap();
            let b = run_experiment(&cfg).unwrap();
            assert_eq!(a.records, b.records, "{agg}");
            for r in &a.records {
                assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.asr));
            }
        }
    }

    #[test]
    fn vote_rounds_only_aggregate_selected_survivors() {
        let mut cfg = small();
        cfg.apply_override("attack=sybil").unwrap();
        cfg.apply_override("malicious=0,1,2").unwrap();
        let res = run_experiment(&cfg).unwrap();
        for r in &res.records {
            let selected: Vec<usize> = r.trust.iter().map(|t| t.client).collect();
            assert_eq!(selected, r.selected);
            assert!(r.discarded.iter().all(|d| r.selected.contains(d)));
            assert!(r.collusion_votes <= r.collusion_cap);
            let s: f64 = r.trust.iter().map(|t| t.immediate).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sybil_followers_copy_the_leader() {
        let mut cfg = small();
        cfg.apply_override("attack=sybil").unwrap();
        cfg.apply_override("malicious=0,1,2,3,4").unwrap();
        let env = build_environment(&cfg).unwrap();
        let sel: Vec<usize> = vec![1, 3, 4, 7];
        let ups = client_updates(&cfg, &env, &env.initial, 0, &sel).unwrap();
        assert_eq!(ups[0].delta, ups[1].delta);
        assert_eq!(ups[0].delta, ups[2].delta);
        assert_ne!(ups[0].delta, ups[3].delta);
        // a lone Sybil behaves like the alternate attacker
        let solo = client_updates(&cfg, &env, &env.initial, 0, &[1]).unwrap();
        cfg.apply_override("attack=alternate").unwrap();
        let alt = client_updates(&cfg, &env, &env.initial, 0, &[1]).unwrap();
        assert_eq!(solo[0].delta, alt[0].delta);
    }

    #[test]
    fn errors_name_round_and_client() {
        let mut cfg = small();
        cfg.apply_override("attack=basic").unwrap();
        let env = build_environment(&cfg).unwrap();
        let mut broken = env.clone();
        broken.pool = LabeledDataset::empty(cfg.input_width, cfg.classes);
        let err = run_in(&cfg, &broken).unwrap_err();
        assert!(matches!(err, Error::Round { round: 0, .. }), "{err}");
    }
}
