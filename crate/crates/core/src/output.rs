//! Result files for a batch of missions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Config;
use crate::pipeline::{CandidateStatus, PlanError, PlanResult};
use crate::sim::{MissionMetrics, Outcome};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{0} already holds results; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub const METRICS_HEADER: &str = "seed,preset,t_90,d_90,t_100,d_100,replans,mean_plan_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ms(d: std::time::Duration) -> String {
    (d.as_secs_f64() * 1e3).to_string()
}

pub fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Complete => "complete",
        Outcome::Stalled => "stalled",
        Outcome::ReplanCap => "replan_cap",
    }
}

fn failure_name(e: &PlanError) -> &'static str {
    match e {
        PlanError::ExplorationExhausted => "exploration_exhausted",
        PlanError::NoCandidates => "no_candidates",
        PlanError::StartBlocked => "start_blocked",
    }
}

/// Rows sorted by preset name, then seed. Planning time is wall clock, so it is left
/// empty unless `timings` is set.
pub fn metrics_csv(missions: &[MissionMetrics], timings: bool) -> String {
    let mut rows: Vec<&MissionMetrics> = missions.iter().collect();
    rows.sort_by(|a, b| a.preset.name().cmp(b.preset.name()).then(a.seed.cmp(&b.seed)));
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        let plan_ms = if timings { m.mean_plan_time().map(ms).unwrap_or_default() } else { String::new() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.seed,
            m.preset.name(),
            opt(m.t_90),
            opt(m.d_90),
            opt(m.t_100),
            opt(m.d_100),
            m.replans.len(),
            plan_ms
        );
    }
    out
}

pub fn coverage_csv(m: &MissionMetrics) -> String {
    let mut out = String::from("t,coverage,distance\n");
    for c in &m.coverage {
        let _ = writeln!(out, "{},{},{}", c.t, c.coverage, c.distance);
    }
    out
}

pub const PLAN_LOG_HEADER: &str = "replan,t,distance,coverage,status,goals,priced,tree_size,iterations,traj_points,traj_length,chosen,j_d,j_a,j_e,nu,total,goals_ms,tree_ms,improve_ms,actuation_ms,cost_ms,select_ms";

pub fn plan_log_csv(m: &MissionMetrics, timings: bool) -> String {
    let mut out = format!("{PLAN_LOG_HEADER}\n");
    for r in &m.replans {
        let status = r.failure.as_ref().map_or("planned", failure_name);
        let cost = match &r.cost {
            Some(c) => format!("{},{},{},{},{}", c.j_d, c.j_a, c.j_e, c.nu, c.total),
            None => ",,,,".into(),
        };
        let t = &r.timings;
        let stages = if timings {
            [t.goals, t.tree, t.improve, t.actuation, t.cost, t.select].map(ms).join(",")
        } else {
            ",,,,,".into()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.t,
            r.distance,
            r.coverage,
            status,
            r.goals,
            r.priced,
            r.tree_size,
            r.iterations,
            r.traj_points,
            r.traj_length,
            r.chosen.map(|c| c.to_string()).unwrap_or_default(),
            cost,
            stages
        );
    }
    out
}

/// Coverage against time as a standalone SVG line plot.
pub fn coverage_svg(m: &MissionMetrics) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let t_max = m.coverage.last().map_or(1.0, |c| c.t).max(1e-9);
    let x = |t: f64| pad + t / t_max * (w - 2.0 * pad);
    let y = |c: f64| h - pad - c * (h - 2.0 * pad);
    let points: Vec<String> = m.coverage.iter().map(|c| format!("{:.2},{:.2}", x(c.t), y(c.coverage))).collect();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="gray" stroke-dasharray="4"/>"#, y(0.9), w - pad);
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, points.join(" "));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">seed {} {} : {:.0} s</text>"#,
        pad,
        pad - 10.0,
        m.seed,
        m.preset.name(),
        t_max
    );
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, OutputError> {
    std::fs::write(&path, text).map_err(|e| OutputError::Io { path: path.clone(), source: e })?;
    Ok(path)
}

/// Per-mission file name; the preset is part of the name only when a batch mixes
/// presets.
fn per_mission(kind: &str, ext: &str, m: &MissionMetrics, mixed: bool) -> String {
    if mixed {
        format!("{kind}_{}_{}.{ext}", m.seed, m.preset.name())
    } else {
        format!("{kind}_{}.{ext}", m.seed)
    }
}

/// Write every result file into `dir`, creating it if needed. `configs` holds one
/// resolved config per preset in the batch. A directory that already holds
/// `metrics.csv` is refused unless `force` is set.
pub fn write_results(dir: &Path, configs: &[Config], missions: &[MissionMetrics], force: bool) -> Result<Vec<PathBuf>, OutputError> {
    let metrics = dir.join("metrics.csv");
    if metrics.exists() && !force {
        return Err(OutputError::Exists(dir.to_path_buf()));
    }
    std::fs::create_dir_all(dir).map_err(|e| OutputError::Io { path: dir.to_path_buf(), source: e })?;
    let base = configs.first().cloned().unwrap_or_default();
    let mixed = missions.iter().any(|m| m.preset != missions[0].preset);
    let mut written = Vec::new();
    if configs.len() <= 1 {
        written.push(write(dir.join("config.resolved.txt"), &base.to_text())?);
    } else {
        for c in configs {
            written.push(write(dir.join(format!("config.resolved_{}.txt", c.preset.name())), &c.to_text())?);
        }
    }
    written.push(write(metrics, &metrics_csv(missions, base.timings))?);
    for m in missions {
        written.push(write(dir.join(per_mission("coverage", "csv", m, mixed)), &coverage_csv(m))?);
        written.push(write(dir.join(per_mission("plan_log", "csv", m, mixed)), &plan_log_csv(m, base.timings))?);
        if base.svg {
            written.push(write(dir.join(per_mission("coverage", "svg", m, mixed)), &coverage_svg(m))?);
        }
    }
    Ok(written)
}

/// Text form of a single planning call: the chosen candidate, every candidate's status
/// and cost, then the chosen trajectory one point per line.
pub fn plan_result_text(plan: &PlanResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "chosen {}", plan.chosen);
    let _ = writeln!(s, "goal_attempts {}", plan.goal_attempts);
    let _ = writeln!(s, "tree_size {}", plan.tree_size);
    let _ = writeln!(s, "iterations {}", plan.iterations);
    let c = plan.chosen_cost();
    let _ = writeln!(s, "cost j_d {} j_a {} j_e {} nu {} total {}", c.j_d, c.j_a, c.j_e, c.nu, c.total);
    for (i, cand) in plan.candidates.iter().enumerate() {
        let g = cand.goal.position;
        let status = match &cand.status {
            CandidateStatus::Unreached => "unreached".to_string(),
            CandidateStatus::SolverFault(e) => format!("solver_fault ({e})"),
            CandidateStatus::Priced => "priced".to_string(),
        };
        let _ = write!(s, "candidate {i} goal {} {} {} status {status}", g.x, g.y, g.z);
        if let Some(c) = &cand.cost {
            let _ = write!(s, " nu {} total {}", c.nu, c.total);
        }
        s.push('\n');
    }
    for p in &plan.x_min.points {
        let _ = writeln!(s, "point {} {} {}", p.x, p.y, p.z);
    }
    s
}
