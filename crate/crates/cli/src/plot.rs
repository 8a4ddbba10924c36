//! Self-contained SVG line plots with the plotted numbers alongside as CSV.

use std::fmt::Write as _;

use bfiki::inference::PasswordCandidate;
use bfiki::segment::KeystrokeSegment;
use bfiki::series::BfiSeries;

const W: f64 = 800.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

struct Canvas {
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
}

impl Canvas {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let fix = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self {
            x_range: fix(x_range),
            y_range: fix(y_range),
            body: String::new(),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        (
            PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD),
            H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD),
        )
    }

    /// One polyline per run of `Some` points.
    fn line(&mut self, points: &[Option<(f64, f64)>], class: &str) {
        for run in points.split(|p| p.is_none()) {
            if run.is_empty() {
                continue;
            }
            let coords: Vec<String> = run
                .iter()
                .flatten()
                .map(|&(x, y)| {
                    let (a, b) = self.px(x, y);
                    format!("{a:.2},{b:.2}")
                })
                .collect();
            let _ = writeln!(
                self.body,
                r#"<polyline class="{class}" fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
    }

    fn vline(&mut self, x: f64, class: &str) {
        let (a, top) = self.px(x, self.y_range.1);
        let (_, bottom) = self.px(x, self.y_range.0);
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{a:.2}" y1="{top:.2}" x2="{a:.2}" y2="{bottom:.2}" stroke="crimson" stroke-dasharray="4 3"/>"#
        );
    }

    fn finish(self, title: &str, x_label: &str, y_label: &str) -> String {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        format!(
            concat!(
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
                "\n",
                r#"<rect width="100%" height="100%" fill="white"/>"#,
                "\n",
                r#"<text x="{cx}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
                "\n",
                r#"<rect x="{p}" y="{p}" width="{iw}" height="{ih}" fill="none" stroke="black"/>"#,
                "\n",
                r#"<text x="{cx}" y="{xl}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label} [{x0:.3}, {x1:.3}]</text>"#,
                "\n",
                r#"<text x="12" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 12 {cy})">{y_label} [{y0:.3}, {y1:.3}]</text>"#,
                "\n{body}</svg>\n"
            ),
            w = W,
            h = H,
            p = PAD,
            iw = W - 2.0 * PAD,
            ih = H - 2.0 * PAD,
            cx = W / 2.0,
            cy = H / 2.0,
            xl = H - 10.0,
            title = title,
            x_label = x_label,
            y_label = y_label,
            x0 = x0,
            x1 = x1,
            y0 = y0,
            y1 = y1,
            body = self.body,
        )
    }
}

fn series_points(series: &BfiSeries) -> Vec<Option<(f64, f64)>> {
    (0..series.len())
        .map(|i| (!series.gap_mask[i]).then(|| (series.time_s(i), series.values[i])))
        .collect()
}

fn series_canvas(series: &BfiSeries) -> Canvas {
    let t_end = series.time_s(series.len().saturating_sub(1));
    let mut c = Canvas::new((series.time_s(0), t_end), (0.0, 1.0));
    c.line(&series_points(series), "series");
    c
}

/// (svg, csv) of a series; gaps break the line.
pub fn plot_series(series: &BfiSeries) -> (String, String) {
    let svg = series_canvas(series).finish("BFI series", "time (s)", "value");
    (svg, bfiki::series::series_to_csv(series))
}

/// (svg, csv) of a series with one dashed vertical per segment peak.
pub fn plot_segments(series: &BfiSeries, segments: &[KeystrokeSegment]) -> (String, String) {
    let mut c = series_canvas(series);
    let mut csv = String::from("segment,peak_index,peak_t_s,left,right,key\n");
    for (i, s) in segments.iter().enumerate() {
        let t = series.time_s(s.peak_index);
        c.vline(t, "peak");
        let key = s.key_label.map(String::from).unwrap_or_default();
        let _ = writeln!(csv, "{i},{},{t:.6},{},{},{key}", s.peak_index, s.left, s.right);
    }
    (c.finish("Keystroke segments", "time (s)", "value"), csv)
}

/// Top-n accuracy for every n from 1 to the longest candidate list.
pub fn topn_curve(trials: &[(Vec<PasswordCandidate>, String)]) -> Vec<(usize, f64)> {
    let max_n = trials.iter().map(|(c, _)| c.len()).max().unwrap_or(0);
    (1..=max_n)
        .map(|n| (n, bfiki::inference::top_n_accuracy(trials, n)))
        .collect()
}

pub fn plot_topn(curve: &[(usize, f64)]) -> (String, String) {
    let max_n = curve.last().map_or(1, |p| p.0) as f64;
    let mut c = Canvas::new((1.0, max_n), (0.0, 1.0));
    let points: Vec<Option<(f64, f64)>> = curve.iter().map(|&(n, a)| Some((n as f64, a))).collect();
    c.line(&points, "topn");
    let mut csv = String::from("n,accuracy\n");
    for (n, a) in curve {
        let _ = writeln!(csv, "{n},{a:.6}");
    }
    (c.finish("Top-n accuracy", "n", "accuracy"), csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_split_the_polyline() {
        let mut s = BfiSeries::dense(40.0, 0, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
        s.values[2] = -1.0;
        s.gap_mask[2] = true;
        let (svg, csv) = plot_series(&s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn topn_curve_is_cumulative() {
        let c = |p: &str| PasswordCandidate {
            password: p.into(),
            probability: 0.1,
        };
        let trials = vec![
            (vec![c("1"), c("2"), c("3")], "2".to_string()),
            (vec![c("1"), c("2"), c("3")], "1".to_string()),
            (vec![c("1"), c("2"), c("3")], "9".to_string()),
        ];
        let curve = topn_curve(&trials);
        let acc: Vec<f64> = curve.iter().map(|p| p.1).collect();
        assert_eq!(acc.len(), 3);
        assert!((acc[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((acc[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((acc[2] - 2.0 / 3.0).abs() < 1e-12);
    }
}
