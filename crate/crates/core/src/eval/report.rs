//! Intervals, the paired sign test, and the SVG / markdown outputs.

use std::fmt::Write as _;

use super::bench::{Benchmark, Method};
use crate::env::Scene;
use crate::error::Result;
use crate::geom::KinematicChain;
use crate::planner::Path;

pub const REPORT_HEADER: &str = "problem,method,success,goal_reached,risk,ci_low,ci_high,risk_bound,initial_risk,path_length_rad,ee_displacement_m,waypoints,failure";

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// One-sided paired sign test of `a < b`. Returns `(wins, losses, p)`; ties
/// are dropped and `p = Pr[Bin(wins + losses, ½) ≥ wins]`.
pub fn sign_test(pairs: &[(f64, f64)]) -> (usize, usize, f64) {
    let wins = pairs.iter().filter(|(a, b)| a < b).count();
    let losses = pairs.iter().filter(|(a, b)| a > b).count();
    let n = wins + losses;
    if n == 0 {
        return (0, 0, 1.0);
    }
    // log C(n, k) by running sums of logs
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let p: f64 = (wins..=n).map(|k| (ln_fact[n] - ln_fact[k] - ln_fact[n - k] + ln_half_n).exp()).sum();
    (wins, losses, p.min(1.0))
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Empirical CDF of MC risk per method over the successful plans.
pub fn risk_cdf_svg(bench: &Benchmark) -> String {
    let (w, h, m) = (520.0, 360.0, 50.0);
    let sx = |r: f64| m + r * (w - 2.0 * m);
    let sy = |f: f64| h - m - f * (h - 2.0 * m);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r##"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="#333"/>"##,
        sx(0.0),
        sy(1.0),
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(0.0)
    )
    .unwrap();
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{v:.1}</text>"#, sx(v), sy(0.0) + 16.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.1}</text>"#, sx(0.0) - 6.0, sy(v) + 4.0)
            .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">risk of collision</text>"#, w / 2.0, h - 12.0)
        .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">fraction of problems</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    for (i, method) in bench.methods.iter().enumerate() {
        let mut risks: Vec<f64> = bench.rows_of(*method).filter(|r| r.success).filter_map(|r| r.risk.map(|x| x.risk)).collect();
        risks.sort_by(f64::total_cmp);
        let total = bench.rows_of(*method).count().max(1) as f64;
        let color = PALETTE[i % PALETTE.len()];
        let mut d = format!("M{} {}", sx(0.0), sy(0.0));
        for (j, r) in risks.iter().enumerate() {
            write!(d, " L{:.2} {:.2} L{:.2} {:.2}", sx(*r), sy(j as f64 / total), sx(*r), sy((j + 1) as f64 / total)).unwrap();
        }
        write!(d, " L{} {:.2}", sx(1.0), sy(risks.len() as f64 / total)).unwrap();
        writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.6"/>"#).unwrap();
        let ly = m + 16.0 * i as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - 150.0, w - 130.0)
            .unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, w - 125.0, ly + 4.0, method.label()).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Top view (x–y) of the scene with the arm drawn at every waypoint of each
/// path.
pub fn scene_svg(chain: &KinematicChain, scene: &Scene, paths: &[(&str, &Path)]) -> Result<String> {
    let b = scene.bounds();
    let (w, h) = (480.0, 480.0 * (b.max.y - b.min.y) / (b.max.x - b.min.x).max(1e-9));
    let scale = w / (b.max.x - b.min.x).max(1e-9);
    let px = |x: f64| (x - b.min.x) * scale;
    let py = |y: f64| h - (y - b.min.y) * scale;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for p in scene.points() {
        let fill = if p.is_noisy() { "#e3a33b" } else { "#999" };
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}" fill-opacity="0.7"/>"#,
            px(p.center.x),
            py(p.center.y),
            p.radius * scale
        )
        .unwrap();
    }
    for (i, (_, path)) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for q in &path.waypoints {
            let state = chain.forward_kinematics(q)?;
            for ((a, c), link) in state.segments(chain).iter().zip(chain.links()) {
                writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.25" stroke-width="{:.2}" stroke-linecap="round"/>"#,
                    px(a.x),
                    py(a.y),
                    px(c.x),
                    py(c.y),
                    2.0 * link.radius * scale
                )
                .unwrap();
            }
        }
    }
    for (i, (name, _)) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        writeln!(s, r#"<text x="8" y="{}" font-size="12" fill="{color}">{name}</text>"#, 16.0 + 14.0 * i as f64).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "–".into()
    }
}

/// Mean ± std table per method plus the dominance test, in markdown.
pub fn summary_markdown(bench: &Benchmark) -> String {
    let mut s = String::from("| method | success | risk | risk bound | initial risk | path length (rad) | EE disp. (m) |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for m in &bench.methods {
        let x = bench.summary(*m);
        writeln!(
            s,
            "| {} | {}/{} | {} ± {} | {} | {} | {} ± {} | {} ± {} |",
            m.label(),
            x.succeeded,
            x.attempted,
            cell(x.risk_mean),
            cell(x.risk_std),
            x.bound_mean.map_or("–".into(), cell),
            x.initial_risk_mean.map_or("–".into(), cell),
            cell(x.length_mean),
            cell(x.length_std),
            cell(x.ee_mean),
            cell(x.ee_std),
        )
        .unwrap();
    }
    let pairs = bench.paired_risks(Method::Proposed, Method::Inflation(0.0));
    if !pairs.is_empty() {
        let (wins, losses, p) = sign_test(&pairs);
        writeln!(s, "\nSign test, proposed below inflate-0.0: {wins} lower, {losses} higher, one-sided p = {p:.3e}.").unwrap();
    }
    let held: Vec<bool> = bench.rows_of(Method::Proposed).filter_map(|r| r.bound_holds()).collect();
    if !held.is_empty() {
        let ok = held.iter().filter(|b| **b).count();
        writeln!(s, "MC risk within its bound (+3 SE) on {ok} of {} proposed plans.", held.len()).unwrap();
    }
    s
}
