//! Summary table over `rounds.csv` files.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FileSummary {
    pub name: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_asr: f64,
    pub tail_accuracy: f64,
    pub tail_asr: f64,
    pub peak_asr: f64,
    pub mean_ddig_accuracy: Option<f64>,
}

fn column(header: &HashMap<&str, usize>, name: &str) -> Result<usize> {
    header
        .get(name)
        .copied()
        .ok_or_else(|| anyhow!("missing column `{name}`"))
}

pub fn summarize_text(name: &str, text: &str, tail: usize) -> Result<FileSummary> {
    let mut lines = text.lines();
    let header: HashMap<&str, usize> = lines
        .next()
        .ok_or_else(|| anyhow!("{name}: empty file"))?
        .split(',')
        .enumerate()
        .map(|(i, h)| (h, i))
        .collect();
    let (acc, asr, ddig) = (
        column(&header, "accuracy")?,
        column(&header, "asr")?,
        column(&header, "ddig_accuracy")?,
    );
    let mut accs = Vec::new();
    let mut asrs = Vec::new();
    let mut ddigs = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            bail!("{name}: row {} has {} cells, expected {}", n + 1, cells.len(), header.len());
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .with_context(|| format!("{name}: row {}: bad number `{}`", n + 1, cells[i]))
        };
        accs.push(num(acc)?);
        asrs.push(num(asr)?);
        if !cells[ddig].is_empty() {
            ddigs.push(num(ddig)?);
        }
    }
    if accs.is_empty() {
        bail!("{name}: no rounds");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let k = tail.clamp(1, accs.len());
    Ok(FileSummary {
        name: name.to_string(),
        rounds: accs.len(),
        final_accuracy: *accs.last().unwrap(),
        final_asr: *asrs.last().unwrap(),
        tail_accuracy: mean(&accs[accs.len() - k..]),
        tail_asr: mean(&asrs[asrs.len() - k..]),
        peak_asr: asrs.iter().cloned().fold(0.0, f64::max),
        mean_ddig_accuracy: (!ddigs.is_empty()).then(|| mean(&ddigs)),
    })
}

pub fn summarize_file(path: &Path, tail: usize) -> Result<FileSummary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    summarize_text(&path.display().to_string(), &text, tail)
}

pub fn render(rows: &[FileSummary]) -> String {
    let mut s = String::from("file,rounds,final_accuracy,final_asr,tail_accuracy,tail_asr,peak_asr,mean_ddig_accuracy\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
            r.name,
            r.rounds,
            r.final_accuracy,
            r.final_asr,
            r.tail_accuracy,
            r.tail_asr,
            r.peak_asr,
            r.mean_ddig_accuracy.map_or(String::new(), |x| format!("{x:.4}")),
        ));
    }
    s
}
