//! Static SVG renderings of training curves, the gender distribution and the
//! confusion matrix. Purely presentational: every number comes from the
//! caller.

use std::fmt::Write;

use crate::data::ClassDistribution;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::train::EpochRecord;

const CURVE_COLORS: [&str; 2] = ["#1f77b4", "#d62728"]; // train, val
const PIE_COLORS: [&str; 2] = ["#e377c2", "#17becf"];

struct Panel {
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
}

impl Panel {
    /// Map a data point into panel pixels (y axis grows downward).
    fn map(&self, x: f64, x_max: f64, y: f64, y_max: f64) -> (f64, f64) {
        let px = self.x0 + if x_max == 0.0 { 0.0 } else { x / x_max * self.width };
        let py = self.y0 + self.height - if y_max == 0.0 { 0.0 } else { y / y_max * self.height };
        (px, py)
    }
}

fn series(
    svg: &mut String,
    panel: &Panel,
    name: &str,
    color: &str,
    points: &[(f64, f64)],
    x_max: f64,
    y_max: f64,
) {
    let mapped: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| panel.map(x, x_max, y, y_max))
        .collect();
    let _ = write!(svg, "<g class=\"series\" data-name=\"{name}\">");
    if mapped.len() > 1 {
        let path: String = mapped
            .iter()
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{path}\"/>"
        );
    }
    for (x, y) in &mapped {
        let _ = write!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{color}\"/>");
    }
    svg.push_str("</g>");
}

/// Loss and accuracy curves for the train and validation series, two panels
/// in one document.
pub fn render_curves_svg(records: &[EpochRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Validation("cannot plot an empty history".into()));
    }
    let x_max = records.last().unwrap().epoch as f64;
    let loss_max = records
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .fold(f64::MIN, f64::max)
        .max(1e-9);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"320\" \
         viewBox=\"0 0 760 320\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let loss_panel = Panel {
        x0: 45.0,
        y0: 30.0,
        width: 300.0,
        height: 250.0,
    };
    let acc_panel = Panel {
        x0: 430.0,
        y0: 30.0,
        width: 300.0,
        height: 250.0,
    };
    svg.push_str("<text x=\"195\" y=\"18\" text-anchor=\"middle\">loss</text>");
    svg.push_str("<text x=\"580\" y=\"18\" text-anchor=\"middle\">accuracy</text>");
    for panel in [&loss_panel, &acc_panel] {
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
            panel.x0, panel.y0, panel.width, panel.height
        );
    }

    let losses = |f: fn(&EpochRecord) -> f64| -> Vec<(f64, f64)> {
        records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    series(&mut svg, &loss_panel, "train_loss", CURVE_COLORS[0], &losses(|r| r.train_loss), x_max, loss_max);
    series(&mut svg, &loss_panel, "val_loss", CURVE_COLORS[1], &losses(|r| r.val_loss), x_max, loss_max);
    series(&mut svg, &acc_panel, "train_acc", CURVE_COLORS[0], &losses(|r| r.train_acc), x_max, 1.0);
    series(&mut svg, &acc_panel, "val_acc", CURVE_COLORS[1], &losses(|r| r.val_acc), x_max, 1.0);

    svg.push_str("</svg>");
    Ok(svg)
}

/// Pie chart of the gender distribution; each sector records its angle.
pub fn render_distribution_svg(dist: &ClassDistribution) -> Result<String> {
    if dist.total() == 0 {
        return Err(Error::Validation("cannot plot an empty distribution".into()));
    }
    let (cx, cy, r) = (160.0f64, 160.0f64, 120.0f64);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"320\" \
         viewBox=\"0 0 420 320\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let labels = ["Female", "Male"];
    let mut start_deg = 0.0f64;
    for (i, &count) in dist.counts.iter().enumerate() {
        let fraction = count as f64 / dist.total() as f64;
        let sweep = fraction * 360.0;
        let end_deg = start_deg + sweep;
        let to_xy = |deg: f64| {
            let rad = (deg - 90.0).to_radians();
            (cx + r * rad.cos(), cy + r * rad.sin())
        };
        let (x0, y0) = to_xy(start_deg);
        let (x1, y1) = to_xy(end_deg);
        let large = i32::from(sweep > 180.0);
        if sweep >= 360.0 - 1e-9 {
            let _ = write!(
                svg,
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r}\" fill=\"{}\" data-label=\"{}\" data-angle=\"{sweep}\"/>",
                PIE_COLORS[i], labels[i]
            );
        } else if sweep > 0.0 {
            let _ = write!(
                svg,
                "<path d=\"M{cx:.2},{cy:.2} L{x0:.2},{y0:.2} A{r},{r} 0 {large} 1 {x1:.2},{y1:.2} Z\" \
                 fill=\"{}\" data-label=\"{}\" data-angle=\"{sweep}\"/>",
                PIE_COLORS[i], labels[i]
            );
        }
        let _ = write!(
            svg,
            "<text x=\"300\" y=\"{}\">{}: {} ({:.1}%)</text>",
            140.0 + 20.0 * i as f64,
            labels[i],
            count,
            fraction * 100.0
        );
        start_deg = end_deg;
    }
    svg.push_str("</svg>");
    Ok(svg)
}

/// 2x2 heat grid of the confusion matrix with labelled cells.
pub fn render_confusion_svg(cm: &ConfusionMatrix) -> String {
    let total = cm.total().max(1);
    let cell = 120.0f64;
    let (x0, y0) = (120.0f64, 60.0f64);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"360\" \
         viewBox=\"0 0 420 360\" font-family=\"sans-serif\" font-size=\"13\">"
    );
    for (p, name) in cm.class_names().iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">pred {name}</text>",
            x0 + cell * (p as f64 + 0.5),
            y0 - 12.0
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">true {name}</text>",
            x0 - 10.0,
            y0 + cell * (p as f64 + 0.55)
        );
    }
    for (t, row) in cm.counts().iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            let x = x0 + cell * p as f64;
            let y = y0 + cell * t as f64;
            let intensity = count as f64 / total as f64;
            let shade = (255.0 - intensity * 175.0) as u8;
            let _ = write!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{shade},255)\" stroke=\"#333\"/>"
            );
            let _ = write!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" data-cell=\"{t}{p}\">{count}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 5.0
            );
        }
    }
    svg.push_str("</svg>");
    svg
}
