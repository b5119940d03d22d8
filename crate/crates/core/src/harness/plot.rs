//! SVG curves and a CSV export of a metrics stream.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::agent::MetricsRecord;
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

type Series<'a> = (&'a str, fn(&MetricsRecord) -> f64);

struct Chart<'a> {
    file: &'a str,
    title: &'a str,
    series: &'a [Series<'a>],
}

const CHARTS: [Chart<'static>; 4] = [
    Chart {
        file: "intrinsic.svg",
        title: "intrinsic reward",
        series: &[("mean", |r| r.mean_intrinsic), ("max", |r| r.max_intrinsic)],
    },
    Chart {
        file: "extrinsic.svg",
        title: "extrinsic evaluation",
        series: &[
            ("return", |r| r.extrinsic_return),
            ("goal reach rate", |r| r.goal_reach_rate),
        ],
    },
    Chart {
        file: "losses.svg",
        title: "loss components",
        series: &[
            ("i_pred", |r| r.i_pred),
            ("i_nce", |r| r.i_nce),
            ("i_upper", |r| r.i_upper),
            ("total", |r| r.total_loss),
        ],
    },
    Chart {
        file: "collapse.svg",
        title: "encoder std (collapse diagnostic)",
        series: &[("encoder std", |r| r.encoder_std)],
    },
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn render(chart: &Chart, records: &[MetricsRecord], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_max = records.last().map_or(1.0, |r| r.episode.max(1) as f64);
    let values = records
        .iter()
        .flat_map(|r| chart.series.iter().map(move |(_, f)| f(r)))
        .filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (lo, hi) = if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    };
    let mut ctx = ChartBuilder::on(&root)
        .caption(chart.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0.0..x_max, lo..hi)
        .map_err(plot_err)?;
    ctx.configure_mesh()
        .x_desc("episode")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, f)) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.episode as f64, f(r)))
            .filter(|(_, y)| y.is_finite())
            .collect();
        ctx.draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
    }
    if !chart.series.is_empty() {
        ctx.configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Plot(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Plot(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the four SVG charts and `metrics.csv` into `out`; returns their paths.
pub fn plot_metrics(records: &[MetricsRecord], out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::with_capacity(CHARTS.len() + 1);
    for chart in &CHARTS {
        let path = out.join(chart.file);
        render(chart, records, &path)?;
        written.push(path);
    }
    let csv_path = out.join("metrics.csv");
    write_csv(records, &csv_path)?;
    written.push(csv_path);
    Ok(written)
}
