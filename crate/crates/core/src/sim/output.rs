//! Run artefacts.
//!
//! `rounds.csv` has one row per round with the columns in [`ROUNDS_HEADER`].
//! List-valued cells are `;`-joined; cells that do not apply to the run are
//! empty. Rates are written with six decimals.
//!
//! `trust.csv` has one row per selected client per round
//! ([`TRUST_HEADER`]); it is empty of rows for runs without voting.
//!
//! `ddig.csv` has one row per selected client per round: the indicator
//! vector entries `u0..u{m-1}`, then the inferred and true columns as
//! strings of 0/1 digits.
//!
//! `summary.json` holds the [`Summary`](super::Summary) and `config.txt` the
//! resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{RoundRecord, RunResult};
use crate::error::Result;

pub const ROUNDS_HEADER: &str = "round,selected,malicious_selected,discarded,accuracy,asr,asr_defined,asr_part,ddig_accuracy,m_th,n_th,cluster_sizes,max_malicious_memberships,collusion_votes,collusion_cap,mean_malicious_trust,mean_honest_trust,empty_aggregate";

pub const TRUST_HEADER: &str = "round,client,malicious,votes,immediate,accumulated,discarded";

fn list(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn opt<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn rate(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6}"))
}

fn bits(b: &[bool]) -> String {
    b.iter().map(|&x| if x { '1' } else { '0' }).collect()
}

pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut s = String::from(ROUNDS_HEADER);
    s.push('\n');
    for r in records {
        let (m_th, n_th) = r.thresholds.unzip();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            list(&r.selected),
            list(&r.malicious_selected),
            list(&r.discarded),
            r.accuracy,
            r.asr,
            r.asr_defined,
            rate(r.asr_part),
            rate(r.ddig_accuracy),
            opt(m_th),
            opt(n_th),
            list(&r.cluster_sizes),
            opt(r.max_malicious_memberships),
            r.collusion_votes,
            r.collusion_cap,
            rate(r.mean_malicious_trust()),
            rate(r.mean_honest_trust()),
            r.empty_aggregate,
        );
    }
    s
}

pub fn trust_csv(records: &[RoundRecord]) -> String {
    let mut s = String::from(TRUST_HEADER);
    s.push('\n');
    for r in records {
        for t in &r.trust {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.9},{:.9},{}",
                r.round, t.client, t.malicious, t.votes, t.immediate, t.accumulated, t.discarded
            );
        }
    }
    s
}

pub fn ddig_csv(records: &[RoundRecord], classes: usize) -> String {
    let mut s = String::from("round,client");
    for k in 0..classes {
        let _ = write!(s, ",u{k}");
    }
    s.push_str(",inferred,truth\n");
    for r in records {
        for d in &r.ddig {
            let _ = write!(s, "{},{}", r.round, d.client);
            for u in &d.u {
                let _ = write!(s, ",{u:.6e}");
            }
            let _ = writeln!(s, ",{},{}", bits(&d.inferred), bits(&d.truth));
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub rounds: PathBuf,
    pub trust: PathBuf,
    pub ddig: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            rounds: dir.join("rounds.csv"),
            trust: dir.join("trust.csv"),
            ddig: dir.join("ddig.csv"),
            summary: dir.join("summary.json"),
            config: dir.join("config.txt"),
        }
    }
}

/// Write every artefact of `run` into `dir`, creating it if needed.
pub fn write_outputs(run: &RunResult, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = OutputPaths::in_dir(dir);
    fs::write(&paths.rounds, rounds_csv(&run.records))?;
    fs::write(&paths.trust, trust_csv(&run.records))?;
    fs::write(&paths.ddig, ddig_csv(&run.records, run.config.classes))?;
    fs::write(&paths.summary, serde_json::to_string_pretty(&run.summary)? + "\n")?;
    fs::write(&paths.config, run.config.to_text())?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_experiment, SimConfig};

    #[test]
    fn artefacts_are_written_with_headers() {
        let cfg = SimConfig::from_text(
            "clients=10\nshards=50\nsamples_per_class=100\ntest_per_class=30\nrounds=2\nselection_ratio=0.5\npoison_pool=60\npoison_count=30\nasr_base=50\nattack=dba\n",
        )
        .unwrap();
        let run = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_outputs(&run, dir.path()).unwrap();
        let rounds = fs::read_to_string(&p.rounds).unwrap();
        let lines: Vec<&str> = rounds.lines().collect();
        assert_eq!(lines[0], ROUNDS_HEADER);
        assert_eq!(lines.len(), 3);
        let cols = ROUNDS_HEADER.split(',').count();
        assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
        let trust = fs::read_to_string(&p.trust).unwrap();
        assert_eq!(trust.lines().count(), 1 + 2 * 5);
        let ddig = fs::read_to_string(&p.ddig).unwrap();
        assert!(ddig.starts_with("round,client,u0,"));
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p.summary).unwrap()).unwrap();
        assert!(summary["final_accuracy"].is_f64());
        let back = SimConfig::from_text(&fs::read_to_string(&p.config).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
