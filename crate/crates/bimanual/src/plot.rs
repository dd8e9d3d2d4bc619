//! Learning-curve rendering: metrics CSVs in, one standalone SVG out.
//!
//! Runs are grouped by label; each group draws a solid mean line of success
//! rate against env steps with a shaded band of one population standard
//! deviation across the group's runs. Output depends only on the input
//! files, so replotting the same data yields the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::trainer::MetricsRow;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no metrics files given")]
    Empty,
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: csv::Error },
    #[error("{path}: expected columns {expected}, found {found}")]
    Columns {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: no data rows")]
    NoRows { path: PathBuf },
    #[error("{path}: env_steps disagree with {other} at row {row}")]
    Misaligned {
        path: PathBuf,
        other: PathBuf,
        row: usize,
    },
}

const EXPECTED_COLUMNS: [&str; 5] = ["env_steps", "success_rate", "mean_return", "approx_kl", "lr"];

/// One run's success curve.
#[derive(Debug, Clone)]
pub struct Curve {
    pub label: String,
    pub path: PathBuf,
    pub steps: Vec<u64>,
    pub success: Vec<f64>,
}

pub fn load_curve(label: &str, path: &Path) -> Result<Curve, PlotError> {
    let read_err = |source| PlotError::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(read_err)?;
    let found = rdr.headers().map_err(read_err)?.clone();
    if found.iter().ne(EXPECTED_COLUMNS) {
        return Err(PlotError::Columns {
            path: path.to_path_buf(),
            expected: EXPECTED_COLUMNS.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut steps = Vec::new();
    let mut success = Vec::new();
    for row in rdr.deserialize::<MetricsRow>() {
        let row = row.map_err(read_err)?;
        steps.push(row.env_steps);
        success.push(row.success_rate);
    }
    if steps.is_empty() {
        return Err(PlotError::NoRows {
            path: path.to_path_buf(),
        });
    }
    Ok(Curve {
        label: label.to_string(),
        path: path.to_path_buf(),
        steps,
        success,
    })
}

/// Mean and per-point spread of one label's runs, cut to the shortest run.
#[derive(Debug, Clone)]
struct Band {
    label: String,
    steps: Vec<u64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn band(curves: &[Curve]) -> Result<Band, PlotError> {
    let first = &curves[0];
    let len = curves.iter().map(|c| c.steps.len()).min().unwrap_or(0);
    for c in &curves[1..] {
        for t in 0..len {
            if c.steps[t] != first.steps[t] {
                return Err(PlotError::Misaligned {
                    path: c.path.clone(),
                    other: first.path.clone(),
                    row: t,
                });
            }
        }
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = curves.iter().map(|c| c.success[t]).sum::<f64>() / n;
        let v = curves
            .iter()
            .map(|c| (c.success[t] - m).powi(2))
            .sum::<f64>()
            / n;
        mean[t] = m;
        std[t] = v.sqrt();
    }
    Ok(Band {
        label: first.label.clone(),
        steps: first.steps[..len].to_vec(),
        mean,
        std,
    })
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn fmt_steps(v: u64) -> String {
    if v >= 1_000_000 && v % 100_000 == 0 {
        format!("{}M", v as f64 / 1e6)
    } else if v >= 1_000 && v % 1_000 == 0 {
        format!("{}k", v / 1_000)
    } else {
        v.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(bands: &[Band]) -> String {
    let x_max = bands
        .iter()
        .flat_map(|b| b.steps.last().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |step: f64| LEFT + step / x_max * (WIDTH - LEFT - RIGHT);
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );

    // gridlines and tick labels
    for i in 0..=4u32 {
        let v = f64::from(i) / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{yy:.2}\" x2=\"{:.2}\" y2=\"{yy:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            LEFT,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>",
            LEFT - 8.0,
            yy + 4.0
        );
        let step = x_max * f64::from(i) / 4.0;
        let xx = x(step);
        let _ = writeln!(
            s,
            "<line x1=\"{xx:.2}\" y1=\"{:.2}\" x2=\"{xx:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            TOP,
            HEIGHT - BOTTOM
        );
        let _ = writeln!(
            s,
            "<text x=\"{xx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            HEIGHT - BOTTOM + 18.0,
            fmt_steps(step.round() as u64)
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>",
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );

    for (k, b) in bands.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (t, &step) in b.steps.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x(step as f64), y(b.mean[t] + b.std[t]));
        }
        for (t, &step) in b.steps.iter().enumerate().rev() {
            let _ = write!(pts, "{:.2},{:.2} ", x(step as f64), y(b.mean[t] - b.std[t]));
        }
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.18\" stroke=\"none\"/>",
            pts.trim_end()
        );
        let mut pts = String::new();
        for (t, &step) in b.steps.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x(step as f64), y(b.mean[t]));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            pts.trim_end()
        );
    }

    for (k, b) in bands.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let yy = TOP + 14.0 + 20.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            LEFT + 10.0,
            yy - 10.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{yy:.2}\">{}</text>",
            LEFT + 28.0,
            xml_escape(&b.label)
        );
    }

    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">environment steps</text>",
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.2})\">success rate</text>",
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Loads every (label, csv path) input, groups curves by label, and renders
/// the mean line with a one-standard-deviation band per group. A single run
/// under a label gets a zero-width band: the shaded region collapses onto
/// the line.
pub fn plot_success_curves(inputs: &[(String, PathBuf)]) -> Result<String, PlotError> {
    if inputs.is_empty() {
        return Err(PlotError::Empty);
    }
    let mut groups: BTreeMap<String, Vec<Curve>> = BTreeMap::new();
    for (label, path) in inputs {
        let curve = load_curve(label, path)?;
        groups.entry(label.clone()).or_default().push(curve);
    }
    let mut bands = Vec::with_capacity(groups.len());
    for curves in groups.values() {
        bands.push(band(curves)?);
    }
    Ok(render(&bands))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("bimanual_plot_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn write_metrics(path: &Path, rows: &[(u64, f64)]) {
        let mut w = csv::Writer::from_path(path).unwrap();
        for &(env_steps, success_rate) in rows {
            w.serialize(MetricsRow {
                env_steps,
                success_rate,
                mean_return: 1.5,
                approx_kl: 0.01,
                lr: 3e-4,
            })
            .unwrap();
        }
        w.flush().unwrap();
    }

    #[test]
    fn identical_runs_collapse_the_band_onto_the_line() {
        let dir = tmp("collapse");
        let p = dir.join("metrics.csv");
        write_metrics(&p, &[(16, 0.0), (32, 0.25), (48, 0.5)]);
        let one = plot_success_curves(&[("run".into(), p.clone())]).unwrap();
        let five: Vec<(String, PathBuf)> =
            (0..5).map(|_| ("run".to_string(), p.clone())).collect();
        let five = plot_success_curves(&five).unwrap();
        assert_eq!(one, five);
        assert!(one.contains("<polyline"));
        assert!(one.contains("<polygon"));
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn two_labels_get_legend_entries_and_distinct_colors() {
        let dir = tmp("legend");
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        write_metrics(&a, &[(16, 0.1), (32, 0.6)]);
        write_metrics(&b, &[(16, 0.0), (32, 0.2)]);
        let inputs = [("alpha".to_string(), a), ("beta".to_string(), b)];
        let svg = plot_success_curves(&inputs).unwrap();
        assert!(svg.contains(">alpha</text>"));
        assert!(svg.contains(">beta</text>"));
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
        assert_eq!(svg, plot_success_curves(&inputs).unwrap());
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn wrong_columns_name_the_offending_file() {
        let dir = tmp("columns");
        let p = dir.join("odd.csv");
        fs::write(&p, "env_steps,success\n16,0.5\n").unwrap();
        let err = plot_success_curves(&[("x".into(), p)]).unwrap_err();
        assert!(err.to_string().contains("odd.csv"), "{err}");

        let empty = dir.join("empty.csv");
        fs::write(&empty, "env_steps,success_rate,mean_return,approx_kl,lr\n").unwrap();
        let err = plot_success_curves(&[("x".into(), empty)]).unwrap_err();
        assert!(matches!(err, PlotError::NoRows { .. }), "{err}");
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn runs_under_one_label_must_share_their_step_axis() {
        let dir = tmp("align");
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        write_metrics(&a, &[(16, 0.1), (32, 0.6)]);
        write_metrics(&b, &[(20, 0.0), (40, 0.2)]);
        let inputs = [("same".to_string(), a), ("same".to_string(), b)];
        let err = plot_success_curves(&inputs).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.csv") && msg.contains("b.csv"), "{msg}");
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn shorter_runs_truncate_the_shared_band() {
        let dir = tmp("truncate");
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        write_metrics(&a, &[(16, 0.1), (32, 0.6), (48, 0.9)]);
        write_metrics(&b, &[(16, 0.3)]);
        let inputs = [("same".to_string(), a), ("same".to_string(), b)];
        let svg = plot_success_curves(&inputs).unwrap();
        // the band stops at the shorter run's last step: one mean point
        assert!(svg.contains("<polyline"));
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn step_labels_use_compact_units() {
        assert_eq!(fmt_steps(0), "0");
        assert_eq!(fmt_steps(500), "500");
        assert_eq!(fmt_steps(16_000), "16k");
        assert_eq!(fmt_steps(2_000_000), "2M");
        assert_eq!(fmt_steps(1_500_000), "1.5M");
    }
}
