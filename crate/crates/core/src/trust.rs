//! Per-cluster voting, softmax trust, discounted trust accumulation,
//! previous-round median discard and trust-weighted aggregation.
//!
//! Votes are counted rather than similarity values summed: a client can
//! gain at most one vote from each cluster-mate, however close their
//! updates are, which caps what colluding clients get from copying each
//! other.

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::model::{ModelParams, ModelUpdate};
use crate::vector;

/// Vectors with norm below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Cosine of the angle between `a` and `b`; 0 when either is (near) zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = vector::norm(a);
    let nb = vector::norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((vector::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities.
pub fn similarity_matrix(vectors: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let k = vectors.len();
    let mut s = vec![vec![0.0; k]; k];
    for i in 0..k {
        s[i][i] = if vector::norm(vectors[i]) < ZERO_NORM { 0.0 } else { 1.0 };
        for j in 0..i {
            let c = cosine_similarity(vectors[i], vectors[j])?;
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

/// How many neighbours each member of a cluster votes for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteBudget {
    Fixed(usize),
    /// `max(1, floor(min(n_th, s) / 2))` for a cluster with `s` participating
    /// members.
    HalfClusterSize { n_th: usize },
}

impl VoteBudget {
    /// Votes cast per member in a cluster of `members` participants.
    pub fn votes_for(&self, members: usize) -> usize {
        if members < 2 {
            return 0;
        }
        let k = match *self {
            VoteBudget::Fixed(k) => k,
            VoteBudget::HalfClusterSize { n_th } => (n_th.min(members) / 2).max(1),
        };
        k.min(members - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ballot {
    pub cluster: usize,
    pub voter: usize,
    pub votee: usize,
}

/// Every vote cast in every cluster.
///
/// `vectors[j]` is `Some` for clients that participate this round. Within
/// cluster `i`, each participating member votes for its most similar other
/// participating members (ties by lowest client index).
pub fn cluster_ballots(
    x: &BinaryMatrix,
    vectors: &[Option<&[f64]>],
    budget: VoteBudget,
) -> Result<Vec<Ballot>> {
    if vectors.len() != x.cols() {
        return Err(Error::shape(format!(
            "{} vectors for {} clients",
            vectors.len(),
            x.cols()
        )));
    }
    let mut ballots = Vec::new();
    for cluster in 0..x.rows() {
        let members: Vec<usize> = x
            .row_members(cluster)
            .into_iter()
            .filter(|&j| vectors[j].is_some())
            .collect();
        let k = budget.votes_for(members.len());
        if k == 0 {
            continue;
        }
        let vs: Vec<&[f64]> = members.iter().map(|&j| vectors[j].unwrap()).collect();
        let sim = similarity_matrix(&vs)?;
        for (a, &voter) in members.iter().enumerate() {
            let mut others: Vec<usize> = (0..members.len()).filter(|&b| b != a).collect();
            // members are in ascending client order, so a stable sort keeps
            // the lowest index first among equal similarities
            others.sort_by(|&p, &q| sim[a][q].total_cmp(&sim[a][p]));
            for &b in &others[..k] {
                ballots.push(Ballot {
                    cluster,
                    voter,
                    votee: members[b],
                });
            }
        }
    }
    Ok(ballots)
}

/// Total votes received per client, summed over clusters.
pub fn cluster_votes(
    x: &BinaryMatrix,
    vectors: &[Option<&[f64]>],
    budget: VoteBudget,
) -> Result<Vec<usize>> {
    Ok(tally(&cluster_ballots(x, vectors, budget)?, x.cols()))
}

pub fn tally(ballots: &[Ballot], clients: usize) -> Vec<usize> {
    let mut k = vec![0; clients];
    for b in ballots {
        k[b.votee] += 1;
    }
    k
}

/// Largest number of intra-coalition votes a coalition of `size` can
/// collect in one cluster where each member casts `k` votes.
pub fn collusion_cap(size: usize, k: usize) -> usize {
    size * k.min(size.saturating_sub(1))
}

/// Softmax of vote counts, max-subtracted.
pub fn immediate_trust(votes: &[usize]) -> Vec<f64> {
    let mut z: Vec<f64> = votes.iter().map(|&k| k as f64).collect();
    if z.is_empty() {
        return z;
    }
    crate::model::softmax_in_place(&mut z);
    z
}

/// Trust state carried across rounds, indexed by client id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustLedger {
    pub gamma: f64,
    pub votes: Vec<usize>,
    pub immediate: Vec<f64>,
    pub accumulated: Vec<f64>,
    /// Clients selected in the most recent completed round.
    pub last_selected: Vec<usize>,
    /// `(round, client, immediate trust)` for every selected client.
    pub history: Vec<(usize, usize, f64)>,
}

impl TrustLedger {
    pub fn new(clients: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma {gamma} must lie in (0, 1)")));
        }
        Ok(Self {
            gamma,
            votes: vec![0; clients],
            immediate: vec![0.0; clients],
            accumulated: vec![0.0; clients],
            last_selected: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Record this round's immediate trust for `selected` (same order as
    /// `now`) and return their normalised accumulated trust.
    pub fn update(&mut self, round: usize, selected: &[usize], votes: &[usize], now: &[f64]) -> Vec<f64> {
        for ((&c, &k), &t) in selected.iter().zip(votes).zip(now) {
            self.votes[c] = k;
            self.immediate[c] = t;
            self.history.push((round, c, t));
        }
        let acc = accumulate_trust(&mut self.accumulated, now, selected, self.gamma);
        self.last_selected = selected.to_vec();
        acc
    }

    /// Selected clients to drop because their previous-round trust fell
    /// below that round's median.
    pub fn discards(&self, selected: &[usize]) -> Vec<usize> {
        median_discard(&self.immediate, &self.last_selected, selected)
    }
}

/// `acc_i <- gamma * acc_i + now_i` for each selected client, then
/// normalise the selected entries to sum to one. Unselected entries keep
/// their stored value.
pub fn accumulate_trust(accumulated: &mut [f64], now: &[f64], selected: &[usize], gamma: f64) -> Vec<f64> {
    for (&c, &t) in selected.iter().zip(now) {
        accumulated[c] = gamma * accumulated[c] + t;
    }
    let total: f64 = selected.iter().map(|&c| accumulated[c]).sum();
    if total > 0.0 {
        for &c in selected {
            accumulated[c] /= total;
        }
    }
    selected.iter().map(|&c| accumulated[c]).collect()
}

/// Clients in `selected` that were also selected last round with an
/// immediate trust strictly below last round's median.
pub fn median_discard(prev_immediate: &[f64], prev_selected: &[usize], selected: &[usize]) -> Vec<usize> {
    if prev_selected.is_empty() {
        return Vec::new();
    }
    let prev: Vec<f64> = prev_selected.iter().map(|&c| prev_immediate[c]).collect();
    let med = vector::median(&prev);
    selected
        .iter()
        .copied()
        .filter(|c| prev_selected.contains(c) && prev_immediate[*c] < med)
        .collect()
}

/// Direction in which normalised updates are applied to the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateSign {
    /// `Theta + lambda * sum w_i delta_i / |delta_i|`, moving toward the
    /// client models.
    #[default]
    TowardClients,
    /// `Theta - lambda * sum w_i delta_i / |delta_i|`.
    Subtract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    pub model: ModelParams,
    /// Clients whose update contributed.
    pub applied: Vec<usize>,
    /// No update survived; the model is unchanged.
    pub empty: bool,
}

/// Trust-weighted sum of normalised updates. `weights[i]` belongs to
/// `updates[i]`; zero-norm updates are skipped.
pub fn aggregate(
    theta: &ModelParams,
    updates: &[&ModelUpdate],
    weights: &[f64],
    lr_server: f64,
    sign: UpdateSign,
) -> Result<AggregateOutcome> {
    if updates.len() != weights.len() {
        return Err(Error::shape("one weight per update is required"));
    }
    if let Some(w) = weights.iter().find(|w| w.is_nan() || **w < 0.0) {
        return Err(Error::Data(format!("trust weight {w} is negative")));
    }
    let mut step = vec![0.0; theta.dim()];
    let mut applied = Vec::new();
    for (u, &w) in updates.iter().zip(weights) {
        if u.delta.len() != theta.dim() {
            return Err(Error::shape(format!(
                "update from client {} does not match the model",
                u.client_id
            )));
        }
        let n = vector::norm(&u.delta);
        if n < ZERO_NORM {
            continue;
        }
        vector::axpy(&mut step, w / n, &u.delta);
        applied.push(u.client_id);
    }
    let mut model = theta.clone();
    let empty = applied.is_empty();
    if !empty {
        let s = match sign {
            UpdateSign::TowardClients => lr_server,
            UpdateSign::Subtract => -lr_server,
        };
        model.add_scaled(s, &step);
    }
    Ok(AggregateOutcome {
        model,
        applied,
        empty,
    })
}
