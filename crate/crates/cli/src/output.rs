//! CSV persistence of iterate traces, ELBO traces and comparison tables.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use robustvi::IterateChains;
use serde::Serialize;

/// Writes `chain,iteration,component,value` rows in chain, iteration, component order.
pub fn write_trace(path: &Path, chains: &IterateChains) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["chain", "iteration", "component", "value"])?;
    for j in 0..chains.num_chains() {
        for t in 0..chains.len() {
            let iteration = chains.iteration_of(t).to_string();
            for (k, v) in chains.iterate(j, t).iter().enumerate() {
                w.write_record([j.to_string(), iteration.clone(), k.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]. Rows may come in any order, but every
/// chain must cover the same iterations with every component present.
pub fn read_trace(path: &Path) -> Result<IterateChains> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open trace {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["chain", "iteration", "component", "value"] {
        bail!("{}:1: expected header chain,iteration,component,value", path.display());
    }
    let mut cells: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.with_context(|| format!("{}:{line}: malformed row", path.display()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
        let parse_usize = |idx: usize, name: &str| {
            field(idx).parse::<usize>().with_context(|| format!("{}:{line}: invalid {name} '{}'", path.display(), field(idx)))
        };
        let chain = parse_usize(0, "chain")?;
        let iteration = parse_usize(1, "iteration")?;
        let component = parse_usize(2, "component")?;
        let value: f64 = field(3).parse().with_context(|| format!("{}:{line}: invalid value '{}'", path.display(), field(3)))?;
        if cells.entry((chain, iteration)).or_default().insert(component, value).is_some() {
            bail!("{}:{line}: duplicate entry for chain {chain}, iteration {iteration}, component {component}", path.display());
        }
    }
    if cells.is_empty() {
        bail!("{}: trace is empty", path.display());
    }
    let mut per_chain: BTreeMap<usize, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    let num_params = cells.values().next().map_or(0, BTreeMap::len);
    for ((chain, iteration), comps) in cells {
        if comps.len() != num_params || comps.keys().enumerate().any(|(i, k)| i != *k) {
            bail!("{}: chain {chain} iteration {iteration} does not have components 0..{num_params}", path.display());
        }
        per_chain.entry(chain).or_default().push((iteration, comps.into_values().collect()));
    }
    if per_chain.keys().enumerate().any(|(i, c)| i != *c) {
        bail!("{}: chain indices must be 0, 1, 2, ...", path.display());
    }
    let first: Vec<usize> = per_chain[&0].iter().map(|(it, _)| *it).collect();
    for (chain, rows) in &per_chain {
        if rows.iter().map(|(it, _)| *it).ne(first.iter().copied()) {
            bail!("{}: chain {chain} covers different iterations than chain 0", path.display());
        }
    }
    let stride = if first.len() > 1 { first[1] - first[0] } else { 1 };
    if stride == 0 || first.windows(2).any(|w| w[1] - w[0] != stride) {
        bail!("{}: iterations must be equally spaced", path.display());
    }
    let iterates: Vec<Vec<Vec<f64>>> =
        per_chain.into_values().map(|rows| rows.into_iter().map(|(_, v)| v).collect()).collect();
    let chains = IterateChains::from_iterates(&iterates, first[0])?.with_stride(stride)?;
    Ok(chains)
}

pub fn write_elbo(path: &Path, elbo: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["iteration", "estimate"])?;
    for (i, v) in elbo.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the stopping-rule comparison table. Distances are `None` without
/// reference moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub rule: String,
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub d_mu: Option<f64>,
    pub d_mu_ia: Option<f64>,
    pub d_sigma: Option<f64>,
    pub d_sigma_ia: Option<f64>,
    pub khat: f64,
    pub khat_ia: f64,
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["seed", "K", "rule", "epsilon", "T", "d_mu", "d_mu_ia", "d_sigma", "d_sigma_ia", "khat", "khat_ia"])?;
    }
    w.flush()?;
    Ok(())
}
