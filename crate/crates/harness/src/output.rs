//! CSV, summary, manifest and SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use metromd_core::observe::{AcceptanceStats, CorrelationCurve};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::runners::{AutocorrReport, BlowupReport, DumbbellReport, ScalingReport, StationarityReport};

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

/// Hash of `bytes` as git would name the blob in a SHA-256 repository.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn h_tag(h: f64) -> String {
    format!("{h}").replace('.', "p")
}

pub fn autocorr_artifacts(report: &AutocorrReport) -> Vec<Artifact> {
    let mut out: Vec<Artifact> = report
        .legs
        .iter()
        .map(|leg| Artifact::new(format!("autocorr_{}_h{}.csv", leg.partition, h_tag(leg.h)), leg.curve.to_csv()))
        .collect();
    let mut rich = String::from("partition,h,epsilon,standard_error\n");
    for s in &report.series {
        for ((h, e), noise) in s.points.iter().zip(&s.noise) {
            let n = noise.map_or_else(String::new, |n| format!("{n:e}"));
            let _ = writeln!(rich, "{},{h},{e:e},{n}", s.partition);
        }
    }
    out.push(Artifact::new("richardson.csv", rich));
    let mut acc = String::from(AcceptanceStats::CSV_HEADER);
    acc.push_str(",h\n");
    for leg in &report.legs {
        let _ = writeln!(
            acc,
            "{},{},{},{}",
            leg.n_particles, leg.partition, leg.mean_accept_per_particle, leg.h
        );
    }
    out.push(Artifact::new("acceptance.csv", acc));
    out
}

pub fn autocorr_summary(report: &AutocorrReport) -> String {
    let mut s = String::new();
    for leg in &report.legs {
        let _ = writeln!(
            s,
            "leg partition={} h={} samples={} A(0)={:.6} mean_accept={:.6}",
            leg.partition, leg.h, leg.samples, leg.curve.values[0], leg.mean_accept_per_particle
        );
    }
    for series in &report.series {
        for ((h, e), noise) in series.points.iter().zip(&series.noise) {
            let _ = write!(s, "richardson partition={} h={h} epsilon={e:.4e}", series.partition);
            if let Some(n) = noise {
                let _ = write!(s, " standard_error={n:.2e}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "slope partition={} value={:.4}", series.partition, series.slope);
    }
    s
}

pub fn dumbbell_summary(report: &DumbbellReport) -> String {
    let mut s = autocorr_summary(&report.autocorr);
    let _ = writeln!(s, "max_constraint_violation {:e}", report.max_violation);
    let _ = writeln!(s, "max_tangency_residual {:e}", report.max_tangency);
    let _ = writeln!(s, "solver_failures {}", report.solver_failures);
    s
}

pub fn scaling_artifacts(report: &ScalingReport) -> Vec<Artifact> {
    let mut csv = String::from(AcceptanceStats::CSV_HEADER);
    csv.push('\n');
    for row in &report.rows {
        csv.push_str(&row.csv_row);
        csv.push('\n');
    }
    vec![Artifact::new("scaling.csv", csv)]
}

pub fn scaling_summary(report: &ScalingReport) -> String {
    let mut s = String::new();
    for row in &report.rows {
        let _ = writeln!(
            s,
            "n={} partition={} mean_accept_per_particle={:.6} acceptance_rate={:.6}",
            row.n, row.partition, row.mean_accept_per_particle, row.acceptance_rate
        );
    }
    for (kind, slope) in &report.slopes {
        let _ = writeln!(s, "slope partition={kind} value={slope:.4}");
    }
    s
}

pub fn stationarity_artifacts(report: &StationarityReport) -> Vec<Artifact> {
    let bins = report.histogram.len();
    let total: u64 = report.histogram.iter().sum();
    let mut csv = String::from("bin,lower,upper,count,expected\n");
    for (b, (&c, &p)) in report.histogram.iter().zip(&report.expected).enumerate() {
        let _ = writeln!(
            csv,
            "{b},{},{},{c},{}",
            b as f64 / bins as f64,
            (b + 1) as f64 / bins as f64,
            p * total as f64
        );
    }
    vec![Artifact::new("histogram.csv", csv)]
}

pub fn stationarity_summary(r: &StationarityReport) -> String {
    format!(
        "steps {}\nchi_square {:.3} dof {} p_value {:.4}\nmomentum_variance {:.6} expected {:.6}\n\
         cos_mean {:.6} standard_error {:.2e} expected {:.6}\nacceptance_rate {:.6}\n",
        r.steps,
        r.chi_square.statistic,
        r.chi_square.dof,
        r.chi_square.p_value,
        r.momentum_variance,
        r.expected_momentum_variance,
        r.cos_mean,
        r.cos_standard_error,
        r.cos_expected,
        r.acceptance_rate
    )
}

pub fn blowup_summary(r: &BlowupReport) -> String {
    let explicit = match r.explicit_blowup_step {
        Some(step) => format!("explicit blow-up at step {step}"),
        None => format!("explicit survived {} steps", r.explicit_steps_run),
    };
    format!(
        "{explicit}\npatched steps {} max_energy {:.4} mean_accept_per_particle {:.6}\n",
        r.patched_steps, r.patched_max_energy, r.patched_mean_accept
    )
}

/// Minimal log-log line plot.
pub fn loglog_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 70.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| *x > 0.0 && *y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (xs, ys) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let px = |x: f64| M + (x.log10() - x0) / xs * (W - 2.0 * M);
    let py = |y: f64| H - M - (y.log10() - y0) / ys * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<polyline points="{M},{M} {M},{} {},{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (text, v, anchor_x, anchor_y) in [
        (format!("{:.3e}", 10f64.powf(x0)), 0, M, H - M + 18.0),
        (format!("{:.3e}", 10f64.powf(x1)), 0, W - M, H - M + 18.0),
        (format!("{:.3e}", 10f64.powf(y0)), 1, M - 5.0, H - M),
        (format!("{:.3e}", 10f64.powf(y1)), 1, M - 5.0, M),
    ] {
        let anchor = if v == 0 { "middle" } else { "end" };
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{anchor_y}" text-anchor="{anchor}">{text}</text>"#);
    }
    for (k, (name, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let line: Vec<String> = points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for p in &line {
            let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - M - 120.0,
            M + 18.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn curve_plot(curves: &[(String, &CorrelationCurve)]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|(n, c)| (n.clone(), c.lags().zip(c.values.iter().copied()).skip(1).collect()))
        .collect();
    loglog_svg("Momentum autocorrelation", "tau", "A_h(tau)", &series)
}

/// Writes the artifacts plus `summary.txt` and `manifest.json` into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    artifacts: &[Artifact],
    summary: &str,
    wall_seconds: f64,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut all: Vec<Artifact> = artifacts.to_vec();
    all.push(Artifact::new("summary.txt", summary));
    let mut entries = Vec::new();
    let mut tree = String::new();
    for a in &all {
        fs::write(dir.join(&a.name), &a.contents)?;
        let hash = git_blob_hash(a.contents.as_bytes());
        let _ = writeln!(tree, "{hash} {}", a.name);
        entries.push(json!({ "file": a.name, "hash": hash }));
    }
    let manifest = json!({
        "experiment": cfg.experiment.as_str(),
        "seed": cfg.seed,
        "config": cfg.to_text(),
        "outputs": entries,
        "content_hash": git_blob_hash(tree.as_bytes()),
        "wall_clock_seconds": wall_seconds,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?)?;
    Ok(path)
}
