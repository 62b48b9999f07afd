use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::plot::{read_columns, render, Series};
use crate::analysis::{
    energy_drift_study, global_error_study, modified_matching_study, moment_estimate, ms_local_error_study,
    tail_probe, taylor_remainder_study, Component, StudyReport,
};
use crate::error::{Error, Result};
use crate::gp_field::{sample_realization, Potential};
use crate::integrators::{integrate, Scheme};

/// Exit status for a study whose reliability flags fired.
pub const EXIT_UNRELIABLE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Sample,
    Integrate,
    LocalOrder,
    ModifiedMatch,
    TaylorOrder,
    GlobalOrder,
    Moments,
    Tails,
    EnergyDrift,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::Sample,
        Subcommand::Integrate,
        Subcommand::LocalOrder,
        Subcommand::ModifiedMatch,
        Subcommand::TaylorOrder,
        Subcommand::GlobalOrder,
        Subcommand::Moments,
        Subcommand::Tails,
        Subcommand::EnergyDrift,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Sample => "sample",
            Subcommand::Integrate => "integrate",
            Subcommand::LocalOrder => "local-order",
            Subcommand::ModifiedMatch => "modified-match",
            Subcommand::TaylorOrder => "taylor-order",
            Subcommand::GlobalOrder => "global-order",
            Subcommand::Moments => "moments",
            Subcommand::Tails => "tails",
            Subcommand::EnergyDrift => "energy-drift",
        }
    }

    fn plots(&self) -> bool {
        matches!(
            self,
            Subcommand::LocalOrder
                | Subcommand::ModifiedMatch
                | Subcommand::TaylorOrder
                | Subcommand::GlobalOrder
                | Subcommand::Tails
        )
    }
}

impl std::str::FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub exit_code: i32,
    pub summary: Value,
}

/// Run directory name: subcommand plus a digest of the result-affecting
/// configuration.
pub fn run_dir(sub: Subcommand, cfg: &RunConfig) -> PathBuf {
    let digest = Sha256::digest(cfg.identity().to_string().as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    cfg.output_dir.join(format!("{}-{hex}", sub.name()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn warnings_for(sub: Subcommand, cfg: &RunConfig) -> Vec<String> {
    let mut w = Vec::new();
    let inconsistent = !cfg.params.is_consistent();
    match sub {
        Subcommand::GlobalOrder if inconsistent => w.push(
            "mean-square order-1 convergence requires α₁=β₁=0; running as a negative control".to_string(),
        ),
        Subcommand::LocalOrder if inconsistent => w.push(
            "local error of order δt² requires α₁=β₁=0; running as a negative control".to_string(),
        ),
        _ => {}
    }
    if cfg.plot && !sub.plots() {
        w.push(format!("no plot is defined for `{}`; run.plot ignored", sub.name()));
    }
    w
}

struct Emitted {
    result: Value,
    reliability: Value,
    acceptance: Value,
    reliable: bool,
}

fn plain(result: Value) -> Emitted {
    Emitted {
        result,
        reliability: Value::Null,
        acceptance: json!([]),
        reliable: true,
    }
}

/// Runs one subcommand and writes its artifacts to the run directory.
pub fn run(sub: Subcommand, cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = run_dir(sub, cfg);
    fs::create_dir_all(&dir)?;
    let warnings = warnings_for(sub, cfg);
    let emitted = match sub {
        Subcommand::Sample => run_sample(cfg, &dir)?,
        Subcommand::Integrate => run_integrate(cfg, &dir)?,
        Subcommand::LocalOrder => emit_study(&ms_local_error_study(&cfg.study_config())?, cfg, &dir)?,
        Subcommand::ModifiedMatch => emit_study(&modified_matching_study(&cfg.study_config())?, cfg, &dir)?,
        Subcommand::TaylorOrder => emit_study(&taylor_remainder_study(&cfg.study_config())?, cfg, &dir)?,
        Subcommand::GlobalOrder => emit_study(&global_error_study(&cfg.study_config())?, cfg, &dir)?,
        Subcommand::Moments => run_moments(cfg, &dir)?,
        Subcommand::Tails => run_tails(cfg, &dir)?,
        Subcommand::EnergyDrift => run_drift(cfg, &dir)?,
    };
    let summary = json!({
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "subcommand": sub.name(),
        "config": cfg.effective(),
        "defaulted": cfg.defaulted,
        "warnings": warnings,
        "result": emitted.result,
        "reliability": emitted.reliability,
        "acceptance": emitted.acceptance,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        dir,
        exit_code: if emitted.reliable { 0 } else { EXIT_UNRELIABLE },
        summary,
    })
}

fn run_sample(cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    let r = sample_realization(&cfg.field)?;
    let grid = cfg.probe.grid(cfg.resolution);
    let d = cfg.field.dim;
    let mut out = csv::Writer::from_writer(create(&dir.join("samples.csv"))?);
    let mut header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
    header.push("V".into());
    header.extend((1..=d).map(|i| format!("dV{i}")));
    out.write_record(&header)?;
    for y in &grid {
        let mut row: Vec<String> = y.iter().map(f64::to_string).collect();
        row.push(r.value(y)?.to_string());
        row.extend(r.grad(y)?.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    if let Some(f) = r.as_fourier() {
        write_json(&dir.join("realization.json"), &serde_json::to_value(f.export())?)?;
    }
    Ok(plain(json!({
        "sampler": cfg.field.sampler.name(),
        "seed": cfg.field.seed,
        "grid_points": grid.len(),
        "realization_exported": r.as_fourier().is_some(),
    })))
}

fn run_integrate(cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    let r = sample_realization(&cfg.field)?;
    let sys = &cfg.system;
    let traj = integrate(
        Scheme::Parameterized(cfg.params),
        &r,
        &sys.mass,
        cfg.dt,
        &sys.initial,
        sys.horizon,
        sys.escape_radius,
    )?;
    traj.write_csv(create(&dir.join("trajectory.csv"))?)?;
    let last = traj.last();
    Ok(plain(json!({
        "dt": cfg.dt,
        "steps": traj.states.len() - 1,
        "termination": traj.termination,
        "final": { "y": last.y.as_slice(), "x": last.x.as_slice() },
        "energy_initial": traj.energies[0],
        "energy_final": traj.energies.last(),
    })))
}

fn emit_study(report: &StudyReport, cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    report.write_samples_csv(create(&dir.join("samples.csv"))?)?;
    report.write_rms_csv(create(&dir.join("rms.csv"))?)?;
    if let Some(c) = &report.companion {
        c.write_samples_csv(create(&dir.join("samples_standard.csv"))?)?;
        c.write_rms_csv(create(&dir.join("rms_standard.csv"))?)?;
    }
    if cfg.plot {
        plot_study(report, &dir.join("rms.csv"), &dir.join("plot.svg"))?;
    }
    let reliability = report.reliability();
    Ok(Emitted {
        result: serde_json::to_value(report)?,
        reliable: reliability.reliable,
        reliability: serde_json::to_value(reliability)?,
        acceptance: serde_json::to_value(report.verdicts())?,
    })
}

fn plot_study(report: &StudyReport, csv_path: &Path, svg_path: &Path) -> Result<()> {
    let data = read_columns(csv_path, &["dt", "rms_y", "rms_x", "rms_joint"])?;
    let ln10 = std::f64::consts::LN_10;
    let series: Vec<Series> = [(Component::Y, 1, "y"), (Component::X, 2, "x"), (Component::Joint, 3, "joint")]
        .into_iter()
        .map(|(c, col, name)| {
            let fit = report.fit(c).fit();
            Series {
                label: match fit {
                    Some(f) => format!("{name}: slope {:.3}", f.slope),
                    None => format!("{name}: no fit"),
                },
                points: data
                    .iter()
                    .filter(|r| r[col] > 0.0)
                    .map(|r| (r[0].log10(), r[col].log10()))
                    .collect(),
                line: fit.map(|f| (f.intercept / ln10, f.slope)),
            }
        })
        .collect();
    let svg = render(report.kind.name(), "log10 dt", "log10 RMS error", &series);
    fs::write(svg_path, svg)?;
    Ok(())
}

fn run_moments(cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    cfg.check_moment_resolution()?;
    let rep = moment_estimate(&cfg.field, &cfg.probe, cfg.resolution, cfg.seeds, cfg.master_seed)?;
    let mut out = csv::Writer::from_writer(create(&dir.join("moments.csv"))?);
    out.write_record(["quantity", "estimate", "stderr"])?;
    for (name, v, e) in [("C1", rep.c1, rep.stderr[0]), ("C2", rep.c2, rep.stderr[1]), ("C3", rep.c3, rep.stderr[2])] {
        out.write_record([name.to_string(), v.to_string(), e.to_string()])?;
    }
    out.flush()?;
    Ok(plain(serde_json::to_value(rep)?))
}

fn run_tails(cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    let rep = tail_probe(&cfg.field, &cfg.probe, cfg.resolution, &cfg.levels, cfg.seeds, cfg.master_seed)?;
    let csv_path = dir.join("tails.csv");
    let mut out = csv::Writer::from_writer(create(&csv_path)?);
    out.write_record(["level", "exceedances", "survival", "log_survival", "in_fit"])?;
    for (i, &u) in rep.levels.iter().enumerate() {
        let ls = rep.log_survival[i];
        out.write_record([
            u.to_string(),
            rep.exceedances[i].to_string(),
            rep.survival[i].to_string(),
            if ls.is_finite() { ls.to_string() } else { String::new() },
            u8::from(rep.fit_levels.contains(&u)).to_string(),
        ])?;
    }
    out.flush()?;
    if cfg.plot {
        let data = read_columns(&csv_path, &["level", "log_survival", "in_fit"])?;
        let e = rep.empirical_mean;
        let series = [Series {
            label: match rep.coefficient {
                Some(c) => format!("coefficient {c:.3}"),
                None => "no fit".into(),
            },
            points: data
                .iter()
                .filter(|r| r[2] == 1.0)
                .map(|r| ((r[0] - e).powi(2), r[1]))
                .collect(),
            line: rep.intercept.zip(rep.coefficient),
        }];
        fs::write(dir.join("plot.svg"), render("tails", "(u - mean)^2", "ln P(sup > u)", &series))?;
    }
    let acceptance = json!([{
        "check": "sub-Gaussian tail",
        "coefficient": rep.coefficient,
        "r_squared": rep.r_squared,
        "min_r_squared": 0.9,
        "pass": rep.coefficient.is_some_and(|c| c < 0.0) && rep.r_squared.is_some_and(|r| r >= 0.9),
    }]);
    let reasons: Vec<String> = if rep.degenerate {
        vec!["degenerate tail fit".into()]
    } else {
        Vec::new()
    };
    Ok(Emitted {
        result: serde_json::to_value(&rep)?,
        reliability: json!({ "reliable": reasons.is_empty(), "reasons": reasons }),
        reliable: !rep.degenerate,
        acceptance,
    })
}

fn run_drift(cfg: &RunConfig, dir: &Path) -> Result<Emitted> {
    let rep = energy_drift_study(&cfg.system, cfg.dt)?;
    let mut out = csv::Writer::from_writer(create(&dir.join("energy.csv"))?);
    out.write_record(["n", "t", "H", "deviation"])?;
    let h0 = rep.initial_energy;
    let scale = if rep.relative { h0.abs() } else { 1.0 };
    for (n, h) in rep.energies.iter().enumerate() {
        out.write_record([
            n.to_string(),
            (n as f64 * cfg.dt).to_string(),
            h.to_string(),
            ((h - h0).abs() / scale).to_string(),
        ])?;
    }
    out.flush()?;
    let escaped = !matches!(rep.termination, crate::integrators::Termination::Completed);
    let reasons: Vec<&str> = if escaped { vec!["trajectory escaped"] } else { Vec::new() };
    Ok(Emitted {
        result: serde_json::to_value(&rep)?,
        reliability: json!({ "reliable": !escaped, "reasons": reasons }),
        reliable: !escaped,
        acceptance: json!([{ "check": "no monotone drift", "pass": rep.no_monotone_drift }]),
    })
}
