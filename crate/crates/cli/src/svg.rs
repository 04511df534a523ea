//! Line charts emitted as SVG text: one polyline per series in a fixed
//! 800x400 viewport, axis ticks at the data extremes.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn line_chart(title: &str, series: &[(&str, &[f64])]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_len = 0usize;
    for (_, ys) in series {
        for &y in *ys {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        max_len = max_len.max(ys.len());
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi == lo {
        hi = lo + 1.0;
    }
    let (px, py) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x_at = |i: usize| {
        if max_len <= 1 {
            MARGIN
        } else {
            MARGIN + px * i as f64 / (max_len - 1) as f64
        }
    };
    let y_at = |v: f64| MARGIN + py * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));
    // Axes with ticks at the data extremes.
    out.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        lo
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
        MARGIN - 4.0,
        MARGIN + 4.0,
        hi
    ));
    out.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"11\">1</text>\n",
        HEIGHT - MARGIN + 14.0
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{max_len}</text>\n",
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 14.0
    ));

    for (si, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_at(i), y_at(v)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            WIDTH - MARGIN - 120.0,
            MARGIN + 16.0 * (si as f64 + 1.0)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_polyline_per_series_and_extreme_ticks() {
        let a = [0.1, 0.5, 0.9];
        let b = [0.9, 0.3, 0.2];
        let svg = line_chart("history", &[("train", &a), ("val", &b)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("0.1000"));
        assert!(svg.contains("0.9000"));
        assert!(svg.contains("viewBox=\"0 0 800 400\""));
    }

    #[test]
    fn constant_series_still_renders() {
        let a = [0.5, 0.5];
        let svg = line_chart("flat", &[("x", &a)]);
        assert!(svg.contains("<polyline"));
    }
}
