//! Deterministic static SVG rendering for the run and sweep CSVs: line
//! plots with mean +/- std bands, bar charts, and scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pessim_drive_core::{CoreError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One named series of (x, y) points with an optional symmetric band.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

fn nice_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[Series]) -> Result<Self> {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in series {
            for (i, &(x, y)) in s.points.iter().enumerate() {
                let b = s.band.as_ref().map(|b| b[i]).unwrap_or(0.0);
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y - b);
                y_max = y_max.max(y + b);
            }
        }
        if !x_min.is_finite() {
            return Err(CoreError::Argument("no data points to plot".into()));
        }
        if (x_max - x_min).abs() < 1e-300 {
            x_max = x_min + 1.0;
        }
        if (y_max - y_min).abs() < 1e-300 {
            y_max = y_min + 1.0;
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn svg_open(x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );
    // axes
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B
    );
    // min/max tick labels
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN_L}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        HEIGHT - MARGIN_B + 18.0,
        nice_num(frame.x_min)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B + 18.0,
        nice_num(frame.x_max)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        HEIGHT - MARGIN_B,
        nice_num(frame.y_min)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        MARGIN_L - 6.0,
        MARGIN_T + 10.0,
        nice_num(frame.y_max)
    );
    // axis labels
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 10.0,
        x_label
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        y_label
    );
    s
}

/// Polyline plot with optional shaded mean +/- std bands, one color per
/// series, with a legend.
pub fn line_plot(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(CoreError::Argument("no data points to plot".into()));
    }
    let frame = Frame::from_series(series)?;
    let mut s = svg_open(x_label, y_label, &frame);
    for (si, ser) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some(band) = &ser.band {
            let mut pts = String::new();
            for (i, &(x, y)) in ser.points.iter().enumerate() {
                let _ = write!(pts, "{:.2},{:.2} ", frame.sx(x), frame.sy(y + band[i]));
            }
            for (i, &(x, y)) in ser.points.iter().enumerate().rev() {
                let _ = write!(pts, "{:.2},{:.2} ", frame.sx(x), frame.sy(y - band[i]));
            }
            let _ = writeln!(
                s,
                "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.18\"/>",
                pts.trim_end()
            );
        }
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        let ly = MARGIN_T + 14.0 * si as f64 + 4.0;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            WIDTH - MARGIN_R - 150.0,
            ly,
            WIDTH - MARGIN_R - 136.0,
            ly + 9.0,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Vertical bar chart over labeled categories.
pub fn bar_plot(bars: &[(String, f64)], x_label: &str, y_label: &str) -> Result<String> {
    if bars.is_empty() {
        return Err(CoreError::Argument("no data points to plot".into()));
    }
    let series = vec![Series {
        label: String::new(),
        points: bars
            .iter()
            .enumerate()
            .map(|(i, &(_, v))| (i as f64, v.max(0.0)))
            .collect(),
        band: None,
    }];
    let mut frame = Frame::from_series(&series)?;
    frame.y_min = frame.y_min.min(0.0);
    frame.x_min = -0.5;
    frame.x_max = bars.len() as f64 - 0.5;
    let mut s = svg_open(x_label, y_label, &frame);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = frame.sx(i as f64) - slot * 0.3;
        let y = frame.sy(*v);
        let base = frame.sy(frame.y_min.max(0.0));
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            y.min(base),
            slot * 0.6,
            (base - y).abs(),
            PALETTE[0]
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            frame.sx(i as f64),
            HEIGHT - MARGIN_B + 32.0,
            label
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter plot of one series.
pub fn scatter_plot(points: &[(f64, f64)], x_label: &str, y_label: &str) -> Result<String> {
    if points.is_empty() {
        return Err(CoreError::Argument("no data points to plot".into()));
    }
    let series = vec![Series {
        label: String::new(),
        points: points.to_vec(),
        band: None,
    }];
    let frame = Frame::from_series(&series)?;
    let mut s = svg_open(x_label, y_label, &frame);
    for &(x, y) in points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\"/>",
            frame.sx(x),
            frame.sy(y),
            PALETTE[1]
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn parse_cell(text: &str, line: usize) -> Result<f64> {
    text.trim().parse().map_err(|_| CoreError::Parse {
        line,
        msg: format!("bad numeric cell '{}'", text.trim()),
    })
}

/// Renders an SVG from a CSV file, dispatching on its header:
/// - sweep CSVs (`param,value,episode,mean_utility,std_utility,...`) become
///   banded lines, one per value;
/// - utility CSVs (`config,seed,episode,utility`) become a banded mean line
///   over seeds;
/// - overhead CSVs (`config,seed,d,episode,transitions_tx,chi_bar`) become a
///   chi-bar vs d scatter;
/// - any two-column numeric CSV becomes a single line plot.
pub fn plot_csv(input: &Path, output: &Path) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CoreError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    let rows: Vec<(usize, Vec<&str>)> = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').collect()))
        .collect();
    if rows.is_empty() {
        return Err(CoreError::Argument("no data rows to plot".into()));
    }

    let svg = if cols.len() >= 5 && cols[0] == "param" {
        // one banded series per swept value
        let mut series: Vec<Series> = Vec::new();
        for (ln, row) in &rows {
            if row.len() < 5 {
                return Err(CoreError::Parse {
                    line: *ln,
                    msg: "sweep row needs at least 5 columns".into(),
                });
            }
            let label = format!("{}={}", row[0].trim(), row[1].trim());
            let x = parse_cell(row[2], *ln)?;
            let y = parse_cell(row[3], *ln)?;
            let b = parse_cell(row[4], *ln)?;
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => {
                    s.points.push((x, y));
                    s.band.as_mut().unwrap().push(b);
                }
                None => series.push(Series {
                    label,
                    points: vec![(x, y)],
                    band: Some(vec![b]),
                }),
            }
        }
        line_plot(&series, "episode", "utility")?
    } else if cols == ["config", "seed", "episode", "utility"] {
        // aggregate seeds into mean +/- std per episode
        let mut per_episode: Vec<(f64, Vec<f64>)> = Vec::new();
        for (ln, row) in &rows {
            let ep = parse_cell(row[2], *ln)?;
            let u = parse_cell(row[3], *ln)?;
            match per_episode.iter_mut().find(|(e, _)| *e == ep) {
                Some((_, v)) => v.push(u),
                None => per_episode.push((ep, vec![u])),
            }
        }
        per_episode.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points = Vec::new();
        let mut band = Vec::new();
        for (ep, xs) in &per_episode {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let std = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            points.push((*ep, mean));
            band.push(std);
        }
        line_plot(
            &[Series {
                label: "utility".into(),
                points,
                band: Some(band),
            }],
            "episode",
            "utility",
        )?
    } else if cols.len() == 6 && cols[2] == "d" && cols[5] == "chi_bar" {
        let mut pts = Vec::new();
        for (ln, row) in &rows {
            pts.push((parse_cell(row[2], *ln)?, parse_cell(row[5], *ln)?));
        }
        scatter_plot(&pts, "communication range d", "clique cover number")?
    } else if cols.len() == 2 {
        let mut pts = Vec::new();
        for (ln, row) in &rows {
            pts.push((parse_cell(row[0], *ln)?, parse_cell(row[1], *ln)?));
        }
        line_plot(
            &[Series {
                label: cols[1].to_string(),
                points: pts,
                band: None,
            }],
            cols[0],
            cols[1],
        )?
    } else {
        return Err(CoreError::Parse {
            line: 1,
            msg: format!("unrecognized CSV layout: {}", header),
        });
    };
    fs::write(output, svg)?;
    Ok(())
}
