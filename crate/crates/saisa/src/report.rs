//! CSV tables and a small SVG line chart.

use std::fmt::Write as _;
use std::io::{self, Write};

use saisa_core::cost::SweepRow;
use saisa_core::train::StepLog;

pub const SWEEP_HEADER: &str = "v,t,llava_flops,saisa_flops,ratio";
pub const TRAIN_HEADER: &str = "step,stage,loss,lr";
pub const BENCH_HEADER: &str = "t,v,baseline_ms,saisa_ms,ratio";

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6}",
            r.v, r.t, r.llava_flops, r.saisa_flops, r.ratio
        )?;
    }
    Ok(())
}

/// Losses use the shortest representation that parses back to the same bits.
pub fn write_train_csv(log: &[StepLog], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TRAIN_HEADER}")?;
    for s in log {
        writeln!(out, "{},{},{:?},{:?}", s.step, s.stage.as_str(), s.loss, s.lr)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub t: usize,
    pub v: usize,
    pub baseline_ms: f64,
    pub saisa_ms: f64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.saisa_ms / self.baseline_ms
    }
}

pub fn write_bench_csv(rows: &[BenchRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4}",
            r.t,
            r.v,
            r.baseline_ms,
            r.saisa_ms,
            r.ratio()
        )?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Ratio against `v`, one polyline per text length.
pub fn sweep_svg(rows: &[SweepRow], title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let mut ts: Vec<usize> = rows.iter().map(|r| r.t).collect();
    ts.sort_unstable();
    ts.dedup();
    let vmin = rows.iter().map(|r| r.v).min().unwrap_or(0) as f64;
    let vmax = rows.iter().map(|r| r.v).max().unwrap_or(1) as f64;
    let vspan = if vmax > vmin { vmax - vmin } else { 1.0 };
    let x = |v: f64| left + (v - vmin) / vspan * (w - left - right);
    let y = |r: f64| top + (1.0 - r) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=5 {
        let r = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{:.1}" x2="{left}" y2="{:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{r:.1}</text>"#,
            left - 4.0,
            y(r),
            y(r),
            left - 8.0,
            y(r) + 4.0
        );
    }
    for i in 0..=4 {
        let v = vmin + vspan * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.0}</text>"#,
            x(v),
            h - bottom + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">visual tokens v</text>"#,
        (left + w - right) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">saisa / llava FLOPs</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, t) in ts.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.t == *t)
            .map(|r| format!("{:.1},{:.1}", x(r.v as f64), y(r.ratio)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">t={t}</text>"#,
            w - right - 80.0,
            w - right - 60.0,
            w - right - 55.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
