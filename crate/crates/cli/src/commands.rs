//! Subcommand bodies; `main` only parses arguments.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use igv_ace::control::{simulate_closed_loop, spectral_radius, SimConfig};
use igv_ace::ident::io::write_archive;
use igv_ace::metrics::{outcome_metrics, pass_fail, StepMetrics};

use crate::config::ExperimentConfig;
use crate::output::{self, SUMMARY_FILE};
use crate::pipeline::{self, theta_of};
use crate::report;

/// Runs the experiment and writes every artifact under `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<pipeline::InstanceResult>> {
    let results = pipeline::run_experiment(cfg)?;
    output::write_all(&cfg.output, &results, &cfg.plant()?, &cfg.sim, cfg.designated_run)?;
    Ok(results)
}

pub fn report(dir: &Path) -> Result<String> {
    let path = dir.join(SUMMARY_FILE);
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let rows = output::read_summary(file).with_context(|| format!("reading {}", path.display()))?;
    Ok(report::render(&rows))
}

/// Writes run 0's archive of every instance to `<output>/historian/<instance>/`
/// together with `labels.csv` (identified controller and label per batch).
pub fn historian(cfg: &ExperimentConfig) -> Result<()> {
    let plant = cfg.plant()?;
    for inst in &cfg.instances {
        let archive = pipeline::archive_for_run(cfg, &plant, inst, 0)?;
        let dir = cfg.output.join("historian").join(&inst.name);
        write_archive(&dir, &archive.batches).with_context(|| format!("writing {}", dir.display()))?;
        let mut wr = csv::Writer::from_path(dir.join("labels.csv"))?;
        let mut header = vec!["batch".to_string(), "label".to_string()];
        let dim = inst.theta0.len();
        header.extend(output::delta_columns(dim).iter().map(|c| c.trim_start_matches("d_").to_string()));
        wr.write_record(&header)?;
        for (b, p) in archive.batches.iter().zip(archive.dataset.points()) {
            let mut rec = vec![b.id.clone(), p.label.to_string()];
            rec.extend(p.theta.iter().map(f64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        println!(
            "{}: {} batches, {} passing, written to {}",
            inst.name,
            archive.batches.len(),
            archive.dataset.count(1),
            dir.display()
        );
    }
    Ok(())
}

pub fn parse_theta(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("`{}` is not a number", s.trim())))
        .collect()
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

/// Step test of one controller: returns the metrics and the label.
pub fn step_test(cfg: &ExperimentConfig, theta: &[f64], sim: &SimConfig) -> Result<(StepMetrics, u8, f64)> {
    if theta.len() != cfg.case.dim() {
        bail!("--theta has {} entries, case needs {}", theta.len(), cfg.case.dim());
    }
    let plant = cfg.plant()?;
    let th = theta_of(theta)?;
    th.validate()?;
    let rho = spectral_radius(&plant, &th)?;
    let out = simulate_closed_loop(&plant, &th, sim)?;
    let m = outcome_metrics(&out, sim, &cfg.thresholds);
    Ok((m, pass_fail(&m, &cfg.thresholds), rho))
}

pub fn print_step_test<W: Write>(mut w: W, m: &StepMetrics, label: u8, rho: f64) -> io::Result<()> {
    writeln!(w, "spectral_radius {rho:.6}")?;
    writeln!(w, "e_ss {}", metric(m.e_ss))?;
    writeln!(w, "t_rise {}", metric(m.t_rise))?;
    writeln!(w, "t_settle {}", metric(m.t_settle))?;
    writeln!(w, "overshoot {}", metric(m.overshoot))?;
    writeln!(w, "label {label}")
}
