use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use bzb_core::extremal::integrate_reference_extremal;
use bzb_core::hamflow::clarke_scan;
use bzb_core::report::{verify, write_sweep_csv, SweepRow, VerificationReport};
use bzb_core::vehicle_bench::{
    end_to_end_verify, oracle, perturbation_probe, ProbeConfig, ProbeTable, VehicleInstance, VehicleOracle,
};
use bzb_core::problems::vehicle_problem;
use bzb_core::Settings;

use crate::config::{output_path, RunConfig};

/// Exit status of a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Certified,
    NotCertified,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Full pipeline for one configuration.
pub fn run_verification(cfg: &RunConfig) -> Result<VerificationReport> {
    let problem = cfg.problem().context("stage problem")?;
    let schedule = cfg.resolve_schedule(&problem).context("stage schedule")?;
    let mut report = verify(&problem, &schedule, &cfg.tolerances).context("stage verification")?;
    report.config.parameters = cfg.parameters.clone();
    Ok(report)
}

pub fn verify_cmd(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Status> {
    let report = run_verification(cfg)?;
    let path = output_path(&cfg.output_dir(out_dir), cfg.outputs.report.as_ref(), "report.json");
    write_json(&path, &report).context("stage output")?;
    for a in &report.assumptions {
        println!("{:<13} {:<8} margin {:.6e}", a.id.label(), format!("{:?}", a.verdict).to_lowercase(), a.margin);
    }
    for d in &report.diagnostics {
        println!("diagnostic: {d}");
    }
    println!("verdict: {}", report.verdict.summary);
    println!("report: {}", path.display());
    Ok(if report.certified() { Status::Certified } else { Status::NotCertified })
}

/// `count` evenly spaced values from `from` to `to`.
pub fn linspace(from: f64, to: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..count).map(|k| from + (to - from) * k as f64 / (count - 1) as f64).collect(),
    }
}

pub fn sweep_rows(cfg: &RunConfig, param: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    // reject unknown names before any work
    cfg.with_parameter(param, values.first().copied().unwrap_or(0.0))?;
    Ok(values
        .par_iter()
        .map(|&v| {
            let row_cfg = cfg.with_parameter(param, v).expect("name checked");
            let result = row_cfg
                .problem()
                .and_then(|p| Ok((row_cfg.resolve_schedule(&p)?, p)))
                .and_then(|(s, p)| Ok(verify(&p, &s, &row_cfg.tolerances)?));
            match result {
                Ok(report) => SweepRow::from_report(v, &report),
                Err(e) => match e.downcast_ref::<bzb_core::Error>() {
                    Some(core) => SweepRow::from_error(v, core),
                    None => SweepRow::from_error(v, &bzb_core::Error::Evaluation(format!("{e:#}"))),
                },
            }
        })
        .collect())
}

pub fn sweep_cmd(cfg: &RunConfig, param: &str, from: f64, to: f64, count: usize, out_dir: Option<&Path>) -> Result<Status> {
    let rows = sweep_rows(cfg, param, &linspace(from, to, count))?;
    let path = output_path(&cfg.output_dir(out_dir), cfg.outputs.sweep.as_ref(), &format!("sweep_{param}.csv"));
    write_sweep_csv(create(&path)?, param, &rows).context("stage output")?;
    let certified = rows.iter().filter(|r| r.verdict == "certified").count();
    println!("{} rows, {certified} certified", rows.len());
    println!("table: {}", path.display());
    Ok(Status::Certified)
}

const TRACE_SAMPLES: usize = 200;
const CLARKE_SAMPLES: usize = 201;

pub fn trace_cmd(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<()> {
    let problem = cfg.problem().context("stage problem")?;
    let schedule = cfg.resolve_schedule(&problem).context("stage schedule")?;
    let settings = &cfg.tolerances;
    let path = integrate_reference_extremal(&problem, &schedule, settings).context("stage integration")?;
    let dir = cfg.output_dir(out_dir);

    let extremal = output_path(&dir, cfg.outputs.extremal.as_ref(), "extremal.csv");
    path.write_csv(create(&extremal)?, TRACE_SAMPLES).context("stage output")?;

    let switching = output_path(&dir, cfg.outputs.switching.as_ref(), "switching.csv");
    let mut w = csv::Writer::from_writer(create(&switching)?);
    w.write_record(["t", "arc", "u1F1-|psi|", "|psi|-|F1|", "u3F1-|psi|"])?;
    let n = problem.n;
    for (t, y, tag) in path.sample(TRACE_SAMPLES) {
        let x = y.rows(0, n).into_owned();
        let f1 = y.rows(n, n).dot(&problem.f1.value(&x));
        let psi = problem.psi.value(&x).abs();
        let cols = [schedule.u1 * f1 - psi, psi - f1.abs(), schedule.u3 * f1 - psi];
        let mut rec = vec![format!("{t:.15e}"), tag.arc().to_string()];
        rec.extend(cols.iter().map(|v| format!("{v:.15e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let report = verify(&problem, &schedule, settings).context("stage verification")?;
    let clarke = match &report.clarke {
        Some(c) => {
            let scan = clarke_scan(&c.parts, c.c, CLARKE_SAMPLES)?;
            let p = output_path(&dir, cfg.outputs.clarke.as_ref(), "clarke.csv");
            let mut w = csv::Writer::from_writer(create(&p)?);
            w.write_record(["switch", "a", "sigma_min"])?;
            for pt in &scan.grid {
                w.write_record([pt.switch.to_string(), format!("{:.15e}", pt.a), format!("{:.15e}", pt.sigma_min)])?;
            }
            w.flush()?;
            Some(p)
        }
        None => {
            eprintln!("warning: Clarke test unavailable, no singular-value curves written");
            None
        }
    };
    println!("extremal: {}", extremal.display());
    println!("switching: {}", switching.display());
    if let Some(p) = &clarke {
        println!("clarke: {}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput<'a> {
    instance: VehicleInstance,
    oracle: VehicleOracle,
    report: &'a VerificationReport,
    probe: &'a ProbeTable,
}

pub struct BenchArgs {
    pub alpha: f64,
    pub x: f64,
    pub t: f64,
    pub probe: ProbeConfig,
}

pub fn bench_cmd(args: &BenchArgs, settings: &Settings, out_dir: &Path) -> Result<Status> {
    let inst = VehicleInstance::new(args.alpha, args.x, args.t);
    let o = oracle(&inst).context("stage oracle")?;
    let mut report = end_to_end_verify(&inst, settings).context("stage verification")?;
    report.config.parameters = [("alpha".to_string(), args.alpha), ("X".to_string(), args.x)].into();
    let probe = perturbation_probe(&vehicle_problem(args.alpha), &o.schedule(&inst), &args.probe, settings)
        .context("stage probe")?;

    let json = out_dir.join("bench_report.json");
    write_json(&json, &BenchOutput { instance: inst, oracle: o, report: &report, probe: &probe })?;
    let csv_path = out_dir.join("probe.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    w.write_record(["delta1", "delta2", "feasible", "cost", "delta_cost", "terminal_gap"])?;
    let num = |v: Option<f64>| v.map(|v| format!("{v:.15e}")).unwrap_or_default();
    for p in &probe.points {
        w.write_record([
            format!("{:.6e}", p.delta1),
            format!("{:.6e}", p.delta2),
            p.feasible.to_string(),
            num(p.cost),
            num(p.delta_cost),
            num(p.terminal_gap),
        ])?;
    }
    w.flush()?;

    println!("T_min {:.12} T_lim {:.12}", o.t_min, o.t_lim);
    println!("tau1 {:.12} tau2 {:.12} p1 {:.12} p2(0) {:.12}", o.tau1, o.tau2, o.p1, o.p2_0);
    println!("verdict: {}", report.verdict.summary);
    println!(
        "probe: {}/{} feasible, min cost increase {:.3e}, quadratic coefficient {:.4}",
        probe.feasible,
        probe.points.len(),
        probe.min_delta_cost,
        probe.quadratic_coefficient
    );
    println!("report: {}", json.display());
    println!("cost table: {}", csv_path.display());
    let ok = report.certified() && probe.reference_is_minimal() && probe.quadratic_coefficient > 0.0;
    Ok(if ok { Status::Certified } else { Status::NotCertified })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_edges() {
        assert!(linspace(0.0, 1.0, 0).is_empty());
        assert_eq!(linspace(2.0, 3.0, 1), vec![2.0]);
        let v = linspace(2.2, 2.4, 21);
        assert_eq!(v.len(), 21);
        assert_eq!(v[20], 2.4);
    }
}
