//! Output formatting: study summary tables, curve CSVs, and small SVG
//! plots for the diagnostic reports.

use std::fmt::Write as _;

use crate::simgen::StudySummary;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "NA".into(),
    }
}

/// Machine-readable study summary, one row per parameter.
pub fn summary_csv(s: &StudySummary) -> String {
    let mut out = String::from("parameter,true,mean,sd,se,smse\n");
    for row in &s.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.name,
            row.truth,
            row.mean,
            row.sd.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
            row.se.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
            row.smse.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
        );
    }
    out
}

/// Aligned text table in the classical simulation-report layout: one
/// column per parameter, rows True / Mean / SD / SE / SMSE.
pub fn summary_table(s: &StudySummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}  (q_C, q_O, q_D, q_T) = ({:.1}%, {:.1}%, {:.1}%, {:.1}%)  reps used {}/{}",
        s.design,
        100.0 * s.mix.q_c,
        100.0 * s.mix.q_o,
        100.0 * s.mix.q_d,
        100.0 * s.mix.q_t,
        s.reps_used,
        s.reps_requested
    );
    let width = 11usize;
    let _ = write!(out, "{:<10}", "Parameter");
    for row in &s.rows {
        let _ = write!(out, "{:>width$}", row.name);
    }
    out.push('\n');
    let line = |label: &str, values: Vec<String>| {
        let mut l = format!("{label:<10}");
        for v in values {
            let _ = write!(l, "{v:>width$}");
        }
        l.push('\n');
        l
    };
    out.push_str(&line(
        "True",
        s.rows.iter().map(|r| format!("{:.3}", r.truth)).collect(),
    ));
    out.push_str(&line(
        "Mean",
        s.rows.iter().map(|r| format!("{:.3}", r.mean)).collect(),
    ));
    out.push_str(&line("SD", s.rows.iter().map(|r| fmt_opt(r.sd)).collect()));
    out.push_str(&line("SE", s.rows.iter().map(|r| fmt_opt(r.se)).collect()));
    out.push_str(&line(
        "SMSE",
        s.rows.iter().map(|r| fmt_opt(r.smse)).collect(),
    ));
    out
}

/// Curve CSV: `t,value,se` rows.
pub fn curve_csv(points: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("t,value,se\n");
    for (t, v, se) in points {
        let _ = writeln!(out, "{t},{v},{se}");
    }
    out
}

/// One labelled series for [`curves_svg`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    pub dashed: bool,
}

/// Minimal standalone SVG line plot (survival-style axes: y in [0, 1.05]).
pub fn curves_svg(title: &str, series: &[Series<'_>]) -> String {
    let w = 640.0;
    let h = 420.0;
    let ml = 50.0;
    let mr = 16.0;
    let mt = 34.0;
    let mb = 40.0;
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1e-9f64, f64::max);
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(1.0f64, f64::max)
        .max(1.0)
        * 1.05;
    let sx = |x: f64| ml + (x / x_max) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y / y_max) * (h - mt - mb);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        title
    );
    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - mb,
        w - mr,
        h - mb
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#,
        h - mb
    );
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = sy(frac * y_max / 1.05);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{:.2}</text>"#,
            ml - 4.0,
            y + 3.0,
            frac * y_max / 1.05
        );
        let x = sx(frac * x_max);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.1}</text>"#,
            x,
            h - mb + 14.0,
            frac * x_max
        );
    }
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (j, (x, y)) in s.points.iter().enumerate() {
            let _ = write!(
                path,
                "{}{:.2},{:.2} ",
                if j == 0 { "M" } else { "L" },
                sx(*x),
                sy(*y)
            );
        }
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<path d="{path}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            s.color
        );
        let ly = mt + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.5"{dash}/>"#,
            w - mr - 150.0,
            w - mr - 120.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - mr - 114.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StatusMix;
    use crate::simgen::ParamSummary;

    fn toy_summary() -> StudySummary {
        StudySummary {
            design: "s1-1".into(),
            reps_requested: 2,
            reps_used: 2,
            failed: 0,
            mix: StatusMix {
                q_c: 0.01,
                q_o: 0.41,
                q_d: 0.58,
                q_t: 0.0,
            },
            rows: vec![ParamSummary {
                name: "beta_0".into(),
                truth: 1.792,
                mean: 1.755,
                sd: Some(0.024),
                se: None,
                smse: Some(0.04),
            }],
        }
    }

    #[test]
    fn csv_layout() {
        let csv = summary_csv(&toy_summary());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "parameter,true,mean,sd,se,smse");
        let row = lines.next().unwrap();
        assert!(row.starts_with("beta_0,1.792,1.755,0.024,NA,"));
    }

    #[test]
    fn table_has_all_stat_rows() {
        let table = summary_table(&toy_summary());
        for label in ["True", "Mean", "SD", "SE", "SMSE"] {
            assert!(table.contains(label), "missing {label}");
        }
    }

    #[test]
    fn svg_is_well_formed() {
        let points = [(0.0, 1.0), (1.0, 0.8), (2.0, 0.6)];
        let svg = curves_svg(
            "conditional survival",
            &[Series {
                label: "observed",
                points: &points,
                color: "steelblue",
                dashed: false,
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<path"));
    }
}
