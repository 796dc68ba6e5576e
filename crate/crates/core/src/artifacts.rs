//! Deterministic artifact rendering: CSV serializations of episode traces
//! and aggregated metrics, plus self-contained SVG charts. Everything is
//! built as a string from the in-memory values only, so identical inputs
//! produce byte-identical files on any platform.

use std::fmt::Write as _;

use crate::bo::RunRecord;
use crate::metrics::MetricsReport;

/// Shortest round-trip decimal form, with negative zero normalized: the
/// number format used in every CSV cell.
pub fn fmt_f64(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v}")
}

/// Fixed two-decimal form for SVG coordinates.
fn coord(v: f64) -> String {
    format!("{v:.2}")
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// One episode trace as CSV (`t,node_id,acq_value,y,incumbent,regret,theta`);
/// initialization rows leave the acquisition column empty.
pub fn run_csv(record: &RunRecord) -> String {
    let mut out = String::from("t,node_id,acq_value,y,incumbent,regret,theta\n");
    for s in &record.steps {
        let acq = s.acq_value.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t,
            s.node,
            acq,
            fmt_f64(s.y),
            fmt_f64(s.incumbent),
            fmt_f64(s.regret),
            fmt_f64(s.theta)
        );
    }
    out
}

/// Per-round regret quantiles, one block of rows per kernel family.
pub fn regret_csv(report: &MetricsReport) -> String {
    let mut out = String::from("family,t,median,q25,q75\n");
    for fam in &report.families {
        for (i, &t) in fam.t_axis.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fam.family,
                t,
                fmt_f64(fam.median_regret[i]),
                fmt_f64(fam.q25_regret[i]),
                fmt_f64(fam.q75_regret[i])
            );
        }
    }
    out
}

/// Reach rates, one row per family.
pub fn reach_rate_csv(report: &MetricsReport) -> String {
    let mut out = String::from("family,n_rep,n_success,reach_rate,tol\n");
    for fam in &report.families {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fam.family,
            fam.n_rep,
            fam.iters_to_tol.len(),
            fmt_f64(fam.reach_rate),
            fmt_f64(fam.tol)
        );
    }
    out
}

/// Rounds-to-tolerance, one row per successful repetition (and none at all
/// when no repetition succeeded).
pub fn iters_to_tol_csv(report: &MetricsReport) -> String {
    let mut out = String::from("family,rep,iters_to_tol\n");
    for fam in &report.families {
        for &(rep, iters) in &fam.iters_to_tol {
            let _ = writeln!(out, "{},{},{}", fam.family, rep, iters);
        }
    }
    out
}

struct Frame {
    width: f64,
    height: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

const FRAME: Frame = Frame {
    width: 840.0,
    height: 520.0,
    left: 80.0,
    right: 810.0,
    top: 40.0,
    bottom: 460.0,
};

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         font-family=\"sans-serif\" font-size=\"14\">\n\
         <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"18\">{}</text>\n",
        FRAME.width, FRAME.height, FRAME.width, FRAME.height, FRAME.left, title
    )
}

fn axes() -> String {
    format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = coord(FRAME.left),
        r = coord(FRAME.right),
        t = coord(FRAME.top),
        b = coord(FRAME.bottom)
    )
}

/// Median regret per family on a log10 axis, with the central-50% band as a
/// shaded polygon, one band+line pair per family.
pub fn regret_svg(report: &MetricsReport) -> String {
    let mut out = svg_open("simple regret (median and central 50%)");
    out.push_str(&axes());

    let t_min = report
        .families
        .iter()
        .filter_map(|f| f.t_axis.first().copied())
        .min()
        .unwrap_or(0);
    let t_max = report
        .families
        .iter()
        .filter_map(|f| f.t_axis.last().copied())
        .max()
        .unwrap_or(1);
    let span = ((t_max - t_min) as f64).max(1.0);
    let x_of = |t: i64| FRAME.left + (t - t_min) as f64 / span * (FRAME.right - FRAME.left);

    // Log-scale floor: the smallest tolerance in play; ceiling: data maximum.
    let tol_floor = report
        .families
        .iter()
        .map(|f| f.tol)
        .fold(f64::INFINITY, f64::min);
    let e_lo = tol_floor.log10().floor() as i32;
    let data_max = report
        .families
        .iter()
        .flat_map(|f| f.q75_regret.iter().chain(&f.median_regret))
        .fold(0.0_f64, |m, &v| m.max(v));
    let e_hi = if data_max > 0.0 {
        (data_max.log10().ceil() as i32).max(e_lo + 1)
    } else {
        e_lo + 1
    };
    let floor = 10f64.powi(e_lo);
    let y_of = |v: f64| {
        let z = (v.max(floor).log10() - e_lo as f64) / (e_hi - e_lo) as f64;
        FRAME.bottom - z * (FRAME.bottom - FRAME.top)
    };

    let tick_step = (((e_hi - e_lo) as f64) / 7.0).ceil().max(1.0) as i32;
    let mut e = e_lo;
    while e <= e_hi {
        let y = y_of(10f64.powi(e));
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{}</text>",
            coord(FRAME.left),
            coord(y),
            coord(FRAME.right),
            coord(y),
            coord(FRAME.left - 8.0),
            coord(y + 5.0),
            e
        );
        e += tick_step;
    }
    let x_ticks = 8usize;
    for i in 0..=x_ticks {
        let t = t_min + ((t_max - t_min) as f64 * i as f64 / x_ticks as f64).round() as i64;
        let x = x_of(t);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            coord(x),
            coord(FRAME.bottom + 20.0),
            t
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">round t</text>",
        coord((FRAME.left + FRAME.right) / 2.0),
        coord(FRAME.bottom + 44.0)
    );

    for (i, fam) in report.families.iter().enumerate() {
        let mut band = String::new();
        for (k, &t) in fam.t_axis.iter().enumerate() {
            let _ = write!(band, "{},{} ", coord(x_of(t)), coord(y_of(fam.q25_regret[k])));
        }
        for (k, &t) in fam.t_axis.iter().enumerate().rev() {
            let _ = write!(band, "{},{} ", coord(x_of(t)), coord(y_of(fam.q75_regret[k])));
        }
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>",
            band.trim_end(),
            color(i)
        );
        let mut line = String::new();
        for (k, &t) in fam.t_axis.iter().enumerate() {
            let _ = write!(
                line,
                "{},{} ",
                coord(x_of(t)),
                coord(y_of(fam.median_regret[k]))
            );
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            line.trim_end(),
            color(i)
        );
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"14\" fill=\"{}\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            coord(FRAME.right - 170.0),
            coord(FRAME.top + 22.0 * i as f64),
            color(i),
            coord(FRAME.right - 150.0),
            coord(FRAME.top + 22.0 * i as f64 + 12.0),
            fam.family
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Draws one labeled bar per family; `value` of None renders the
/// "no successful runs" annotation instead of a bar.
fn bar_chart(title: &str, y_label: &str, entries: &[(String, Option<f64>)], y_max: f64) -> String {
    let mut out = svg_open(title);
    out.push_str(&axes());
    let n = entries.len().max(1);
    let slot = (FRAME.right - FRAME.left) / n as f64;
    let y_of = |v: f64| FRAME.bottom - (v / y_max) * (FRAME.bottom - FRAME.top);

    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            coord(FRAME.left),
            coord(y),
            coord(FRAME.right),
            coord(y),
            coord(FRAME.left - 8.0),
            coord(y + 5.0),
            fmt_f64((v * 100.0).round() / 100.0)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" transform=\"rotate(-90 24 {})\" text-anchor=\"middle\">{}</text>",
        coord(24.0),
        coord((FRAME.top + FRAME.bottom) / 2.0),
        coord((FRAME.top + FRAME.bottom) / 2.0),
        y_label
    );

    for (i, (name, value)) in entries.iter().enumerate() {
        let x0 = FRAME.left + slot * (i as f64 + 0.25);
        let width = slot * 0.5;
        match value {
            Some(v) => {
                let y = y_of(*v);
                let _ = writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\
                     <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                    coord(x0),
                    coord(y),
                    coord(width),
                    coord(FRAME.bottom - y),
                    color(i),
                    coord(x0 + width / 2.0),
                    coord(y - 8.0),
                    fmt_f64((v * 1000.0).round() / 1000.0)
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888888\">no successful runs</text>",
                    coord(x0 + width / 2.0),
                    coord((FRAME.top + FRAME.bottom) / 2.0)
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            coord(x0 + width / 2.0),
            coord(FRAME.bottom + 20.0),
            name
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Reach rate per family as a bar chart on a fixed [0, 1] axis.
pub fn reach_rate_svg(report: &MetricsReport) -> String {
    let entries: Vec<(String, Option<f64>)> = report
        .families
        .iter()
        .map(|f| (f.family.clone(), Some(f.reach_rate)))
        .collect();
    bar_chart("reach rate within horizon", "fraction of runs", &entries, 1.0)
}

/// Mean rounds-to-tolerance per family; families with no successful run get
/// an annotation instead of a bar.
pub fn iters_to_tol_svg(report: &MetricsReport) -> String {
    let entries: Vec<(String, Option<f64>)> = report
        .families
        .iter()
        .map(|f| (f.family.clone(), f.mean_iters_to_tol()))
        .collect();
    let y_max = entries
        .iter()
        .filter_map(|(_, v)| *v)
        .fold(1.0_f64, f64::max)
        * 1.2;
    bar_chart(
        "rounds to tolerance (mean over successful runs)",
        "rounds",
        &entries,
        y_max,
    )
}
