//! Learning-curve data and a static SVG chart from a training trace.

use std::fmt::Write as _;

use adrl_core::stats::Z95;

use crate::CliError;

/// One evaluation row of a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    pub dual: f64,
    pub dual_se: f64,
    pub primal: f64,
    pub primal_se: f64,
}

impl CurvePoint {
    /// Band covering both 95% intervals; collapses to the dual interval
    /// when there is no primal estimate.
    pub fn band(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (self.dual - Z95 * self.dual_se, self.dual + Z95 * self.dual_se);
        if self.primal.is_finite() {
            lo = lo.min(self.primal - Z95 * self.primal_se);
            hi = hi.max(self.primal + Z95 * self.primal_se);
        }
        (lo, hi)
    }
}

fn num(field: &str) -> f64 {
    if field.is_empty() {
        f64::NAN
    } else {
        field.parse().unwrap_or(f64::NAN)
    }
}

/// Evaluation rows of a `train-adrl` trace CSV.
pub fn parse_trace(csv: &str) -> Result<Vec<CurvePoint>, CliError> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| CliError::Usage(format!("trace has no `{name}` column")))
    };
    let (ci, cd, cds, cp, cps) = (col("iter")?, col("dual_mean")?, col("dual_se")?, col("primal_mean")?, col("primal_se")?);
    let mut points = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(CliError::Usage(format!("ragged trace row: {line}")));
        }
        let dual = num(f[cd]);
        if !dual.is_finite() {
            continue;
        }
        let iter = f[ci].parse().map_err(|_| CliError::Usage(format!("bad iteration in trace row: {line}")))?;
        points.push(CurvePoint { iter, dual, dual_se: num(f[cds]), primal: num(f[cp]), primal_se: num(f[cps]) });
    }
    Ok(points)
}

/// Tidy `iter,series,value` CSV and an SVG line chart of the evaluations in
/// `trace_csv`. The `oracle` series appears only when `oracle` is given.
pub fn emit_learning_curve(trace_csv: &str, oracle: Option<f64>) -> Result<(String, String), CliError> {
    let points = parse_trace(trace_csv)?;
    if points.is_empty() {
        return Err(CliError::Usage("trace has no evaluation records".into()));
    }
    let mut csv = String::from("iter,series,value\n");
    for p in &points {
        let (lo, hi) = p.band();
        let _ = writeln!(csv, "{},dual,{:?}", p.iter, p.dual);
        if p.primal.is_finite() {
            let _ = writeln!(csv, "{},primal,{:?}", p.iter, p.primal);
        }
        let _ = writeln!(csv, "{},ci_lo,{lo:?}", p.iter);
        let _ = writeln!(csv, "{},ci_hi,{hi:?}", p.iter);
        if let Some(o) = oracle {
            let _ = writeln!(csv, "{},oracle,{o:?}", p.iter);
        }
    }
    Ok((csv, svg(&points, oracle)))
}

fn svg(points: &[CurvePoint], oracle: Option<f64>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 56.0;
    let x_max = points.iter().map(|p| p.iter).max().unwrap_or(0).max(1) as f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for p in points {
        let (lo, hi) = p.band();
        y_lo = y_lo.min(lo);
        y_hi = y_hi.max(hi);
    }
    if let Some(o) = oracle {
        y_lo = y_lo.min(o);
        y_hi = y_hi.max(o);
    }
    if !(y_hi > y_lo) {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let sx = |x: f64| M + (W - 2.0 * M) * x / x_max;
    let sy = |y: f64| H - M - (H - 2.0 * M) * (y - y_lo) / (y_hi - y_lo);
    let line = |vals: &mut dyn Iterator<Item = (f64, f64)>| {
        vals.map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect::<Vec<_>>().join(" ")
    };

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let band: Vec<(f64, f64)> = points.iter().map(|p| (p.iter as f64, p.band().1)).chain(
        points.iter().rev().map(|p| (p.iter as f64, p.band().0)),
    ).collect();
    let _ = writeln!(out, r##"<polygon points="{}" fill="#cccccc" fill-opacity="0.5"/>"##, line(&mut band.into_iter()));
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f4fd1" stroke-width="2"/>"##,
        line(&mut points.iter().map(|p| (p.iter as f64, p.dual)))
    );
    if points.iter().any(|p| p.primal.is_finite()) {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#d12f1f" stroke-width="2"/>"##,
            line(&mut points.iter().filter(|p| p.primal.is_finite()).map(|p| (p.iter as f64, p.primal)))
        );
    }
    if let Some(o) = oracle {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444444" stroke-dasharray="4 4"/>"##,
            sx(0.0),
            sy(o),
            sx(x_max),
            sy(o)
        );
    }
    // axes and extreme tick labels
    let _ = writeln!(
        out,
        r##"<path d="M{M},{M} V{:.2} H{:.2}" fill="none" stroke="black"/>"##,
        H - M,
        W - M
    );
    let _ = writeln!(out, r#"<text x="{M}" y="{:.2}" text-anchor="middle">0</text>"#, H - M + 16.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_max}</text>"#, W - M, H - M + 16.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y_lo:.4}</text>"#, M - 4.0, H - M);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y_hi:.4}</text>"#, M - 4.0, M + 4.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#, W / 2.0, H - 12.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE: &str = "iter,batch_obj,grad_norm,dual_mean,dual_se,primal_mean,primal_se,gap,excluded,aborted,checkpoint\n\
        0,,,10.0,0.5,12.0,0.25,0.2,0,false,aa\n\
        1,10.5,0.1,,,,,,0,false,bb\n\
        2,10.6,0.1,10.8,0.5,11.5,0.25,0.06,0,false,cc\n\
        3,10.7,0.1,11.0,0.4,11.2,0.2,0.02,0,false,dd\n";

    fn rows<'a>(csv: &'a str, series: &str) -> Vec<(&'a str, f64)> {
        csv.lines()
            .skip(1)
            .filter_map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1] == series).then(|| (f[0], f[2].parse().unwrap()))
            })
            .collect()
    }

    #[test]
    fn three_points_three_rows_per_series() {
        let (csv, svg) = emit_learning_curve(TRACE, None).unwrap();
        for s in ["dual", "primal", "ci_lo", "ci_hi"] {
            assert_eq!(rows(&csv, s).len(), 3, "{s}");
        }
        assert!(rows(&csv, "oracle").is_empty());
        assert!(svg.starts_with("<svg") && !svg.contains("stroke-dasharray"));
    }

    #[test]
    fn oracle_series_only_when_supplied() {
        let (csv, svg) = emit_learning_curve(TRACE, Some(11.1)).unwrap();
        assert_eq!(rows(&csv, "oracle"), vec![("0", 11.1), ("2", 11.1), ("3", 11.1)]);
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn band_contains_values() {
        let (csv, _) = emit_learning_curve(TRACE, None).unwrap();
        let lo = rows(&csv, "ci_lo");
        let hi = rows(&csv, "ci_hi");
        for s in ["dual", "primal"] {
            for (i, (_, v)) in rows(&csv, s).iter().enumerate() {
                assert!(lo[i].1 <= *v && *v <= hi[i].1);
            }
        }
    }

    #[test]
    fn empty_trace_is_a_usage_error() {
        let header = TRACE.lines().next().unwrap();
        assert!(matches!(emit_learning_curve(header, None), Err(CliError::Usage(_))));
        assert!(matches!(emit_learning_curve("", None), Err(CliError::Usage(_))));
    }
}
