//! Result files. Every writer is a pure function of its inputs so identical
//! runs produce byte-identical files.
//!
//! Layout under the output directory:
//! - `summary.csv`: one row per instance, preceded by a schema line;
//! - `traces/<instance>.json`: every run with its candidate array;
//! - `shifts/<instance>.csv`: the shift of every tested candidate;
//! - `steps/<instance>_run<r>_{theta0,cfe}.csv`: step traces of one run.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use igv_ace::ace::{CandidateKind, CandidateRecord};
use igv_ace::control::{simulate_closed_loop, DiscretePlant, SimConfig, StepResponseTrace};

use crate::pipeline::{theta_of, InstanceResult, RunRecord, RunSummary};

pub const SUMMARY_FILE: &str = "summary.csv";
/// First line of every summary file; readers reject any other value.
pub const SUMMARY_SCHEMA: &str = "#schema=igv-ace-summary/1";
pub const STEP_HEADER: [&str; 6] = ["t", "r1", "u1", "u2", "y1", "y2"];

const SUFFIX: [&str; 4] = ["kp", "ki", "kd", "tf"];

/// `d_kp,d_ki,d_kd,d_tf` then `d_kp2,...` for the inner loop.
pub fn delta_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("d_{}{}", SUFFIX[j % 4], if j < 4 { "" } else { "2" })).collect()
}

pub fn summary_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["instance", "validity", "lof", "iters"].iter().map(|s| s.to_string()).collect();
    h.extend(delta_columns(dim));
    h
}

pub fn write_summary<W: Write>(mut w: W, rows: &[RunSummary]) -> Result<()> {
    let dim = rows.first().map_or(4, |r| r.delta.len());
    writeln!(w, "{SUMMARY_SCHEMA}")?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(summary_header(dim))?;
    for r in rows {
        let mut rec = vec![r.instance.clone(), r.validity.to_string(), r.lof.to_string(), r.iters.to_string()];
        rec.extend(r.delta.iter().map(f64::to_string));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_summary<R: io::Read>(r: R) -> Result<Vec<RunSummary>> {
    let mut br = io::BufReader::new(r);
    let mut first = String::new();
    br.read_line(&mut first)?;
    if first.trim_end() != SUMMARY_SCHEMA {
        bail!("unsupported summary schema line `{}` (expected `{SUMMARY_SCHEMA}`)", first.trim_end());
    }
    let mut rd = csv::Reader::from_reader(br);
    let header: Vec<String> = rd.headers().context("summary has no header")?.iter().map(str::to_string).collect();
    let dim = header.len().saturating_sub(4);
    if (dim != 4 && dim != 8) || header != summary_header(dim) {
        bail!("unexpected summary header `{}`", header.join(","));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.with_context(|| format!("summary row {}", i + 1))?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().with_context(|| format!("summary row {}: column `{}` is not a number", i + 1, header[j]))
        };
        rows.push(RunSummary {
            instance: rec[0].to_string(),
            validity: num(1)?,
            lof: num(2)?,
            iters: num(3)?,
            delta: (4..4 + dim).map(num).collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        bail!("summary has no data rows");
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CandidateJson<'a> {
    kind: CandidateKind,
    theta: &'a [f64],
    label: u8,
    cost: Option<f64>,
    lof: Option<f64>,
    ei: f64,
    p: f64,
    lambda: f64,
    distance: f64,
}

#[derive(Serialize)]
struct RunJson<'a> {
    run: usize,
    seed: u64,
    archive_attempts: usize,
    archive_passers: usize,
    valid: bool,
    tests: usize,
    outer_iterations: usize,
    budget_exhausted: bool,
    lof: Option<f64>,
    cfe: &'a [f64],
    delta: &'a [f64],
    candidates: Vec<CandidateJson<'a>>,
}

/// JSON has no infinity; rejected candidates carry `null`.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn candidate_json(c: &CandidateRecord) -> CandidateJson<'_> {
    CandidateJson {
        kind: c.kind,
        theta: &c.theta,
        label: c.label,
        cost: finite(c.cost),
        lof: finite(c.lof),
        ei: c.ei,
        p: c.p,
        lambda: c.lambda,
        distance: c.distance,
    }
}

pub fn traces_json(runs: &[RunRecord]) -> Result<String> {
    let v: Vec<RunJson> = runs
        .iter()
        .map(|r| RunJson {
            run: r.run,
            seed: r.seed,
            archive_attempts: r.archive_attempts,
            archive_passers: r.archive_passers,
            valid: r.result.valid,
            tests: r.result.tests,
            outer_iterations: r.result.outer_iterations,
            budget_exhausted: r.result.budget_exhausted,
            lof: finite(r.result.lof),
            cfe: &r.result.cfe,
            delta: &r.result.delta,
            candidates: r.result.trace.iter().map(candidate_json).collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn kind_name(k: CandidateKind) -> &'static str {
    match k {
        CandidateKind::Baseline => "baseline",
        CandidateKind::Proposal => "proposal",
        CandidateKind::Boundary => "boundary",
    }
}

/// One row per tested candidate: `run,candidate,kind,label,d_...`.
pub fn write_shifts<W: Write>(w: W, theta0: &[f64], runs: &[RunRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["run", "candidate", "kind", "label"].iter().map(|s| s.to_string()).collect();
    header.extend(delta_columns(theta0.len()));
    wr.write_record(&header)?;
    for r in runs {
        for (i, c) in r.result.trace.iter().enumerate() {
            let mut rec = vec![r.run.to_string(), i.to_string(), kind_name(c.kind).to_string(), c.label.to_string()];
            rec.extend(c.theta.iter().zip(theta0).map(|(t, t0)| (t - t0).to_string()));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_step_trace<W: Write>(w: W, tr: &StepResponseTrace) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(STEP_HEADER)?;
    for k in 0..tr.len() {
        wr.write_record([tr.t[k], tr.r1[k], tr.u1[k], tr.u2[k], tr.y1[k], tr.y2[k]].map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    Ok(io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes every artifact of an experiment into `dir`.
pub fn write_all(
    dir: &Path,
    results: &[InstanceResult],
    plant: &DiscretePlant,
    sim: &SimConfig,
    designated_run: usize,
) -> Result<()> {
    for sub in ["traces", "shifts", "steps"] {
        fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.join(sub).display()))?;
    }
    let summaries: Vec<RunSummary> = results.iter().map(|r| RunSummary::from_runs(&r.instance.name, &r.runs)).collect();
    let mut w = create(&dir.join(SUMMARY_FILE))?;
    write_summary(&mut w, &summaries)?;
    w.flush()?;
    for res in results {
        let name = &res.instance.name;
        fs::write(dir.join("traces").join(format!("{name}.json")), traces_json(&res.runs)?)?;
        let mut w = create(&dir.join("shifts").join(format!("{name}.csv")))?;
        write_shifts(&mut w, &res.instance.theta0, &res.runs)?;
        w.flush()?;
        if let Some(rec) = res.runs.iter().find(|r| r.run == designated_run) {
            let cfg = sim.with_seed(rec.seed);
            for (tag, theta) in [("theta0", &res.instance.theta0), ("cfe", &rec.result.cfe)] {
                let tr = simulate_closed_loop(plant, &theta_of(theta)?, &cfg)?.into_trace();
                let mut w = create(&dir.join("steps").join(format!("{name}_run{designated_run}_{tag}.csv")))?;
                write_step_trace(&mut w, &tr)?;
                w.flush()?;
            }
        }
    }
    Ok(())
}
