//! Deterministic SVG timeline plots: one horizontal bar per method with
//! filled blocks for the selected shots, plus an optional score curve
//! with keyframe tick marks.

use okfem_core::summarize::Summary;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 80.0;
const BAR_H: f64 = 18.0;
const GAP: f64 = 14.0;
const CURVE_H: f64 = 90.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the timeline plot. All summaries must share the frame count.
pub fn render_timelines(
    bars: &[(String, Summary)],
    scores: Option<&[f32]>,
    keyframes: Option<&[usize]>,
    num_frames: usize,
) -> String {
    let plot_w = WIDTH - MARGIN - 20.0;
    let curve_block = if scores.is_some() || keyframes.is_some() {
        CURVE_H + GAP
    } else {
        0.0
    };
    let height = 20.0 + curve_block + bars.len() as f64 * (BAR_H + GAP) + 20.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg version="1.1" width="{WIDTH}" height="{height}" xmlns="http://www.w3.org/2000/svg">"#
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"#
    ));
    svg.push('\n');

    let x_of = |frame: f64| MARGIN + plot_w * frame / num_frames as f64;
    let mut y = 20.0;

    if let Some(sc) = scores {
        let lo = sc.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = sc.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let span = (hi - lo).max(1e-9);
        let y_of = |v: f64| y + CURVE_H - CURVE_H * (v - lo) / span;
        let mut d = String::new();
        for (i, &v) in sc.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            d.push_str(&format!(
                "{cmd}{} {} ",
                fmt(x_of(i as f64 + 0.5)),
                fmt(y_of(v as f64))
            ));
        }
        svg.push_str(&format!(
            r#"<path d="{}" stroke="steelblue" stroke-width="1.5" fill="none"/>"#,
            d.trim_end()
        ));
        svg.push('\n');
    }
    if let Some(kfs) = keyframes {
        for &k in kfs {
            let x = fmt(x_of(k as f64 + 0.5));
            svg.push_str(&format!(
                r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="crimson" stroke-width="1"/>"#,
                fmt(y),
                fmt(y + CURVE_H)
            ));
            svg.push('\n');
        }
    }
    if scores.is_some() || keyframes.is_some() {
        y += CURVE_H + GAP;
    }

    for (label, summary) in bars {
        svg.push_str(&format!(
            r#"<text x="8" y="{}" font-family="monospace" font-size="12">{}</text>"#,
            fmt(y + BAR_H - 5.0),
            escape(label)
        ));
        svg.push('\n');
        svg.push_str(&format!(
            r#"<rect x="{}" y="{}" width="{}" height="{BAR_H}" fill="none" stroke="black" stroke-width="0.8"/>"#,
            fmt(MARGIN),
            fmt(y),
            fmt(plot_w)
        ));
        svg.push('\n');
        for &(s, e) in &summary.shots {
            svg.push_str(&format!(
                r#"<rect x="{}" y="{}" width="{}" height="{BAR_H}" fill="black"/>"#,
                fmt(x_of(s as f64)),
                fmt(y),
                fmt(plot_w * (e - s) as f64 / num_frames as f64)
            ));
            svg.push('\n');
        }
        y += BAR_H + GAP;
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_summary_has_only_the_outline_rect() {
        let bars = vec![("empty".to_string(), Summary::empty(50))];
        let svg = render_timelines(&bars, None, None, 50);
        // One background rect + one outline rect, no filled blocks.
        assert_eq!(svg.matches("<rect").count(), 2);
    }

    #[test]
    fn identical_input_gives_identical_bytes() {
        let bars = vec![(
            "m".to_string(),
            Summary::new(100, vec![(10, 20), (40, 55)]).unwrap(),
        )];
        let scores: Vec<f32> = (0..100).map(|i| (i as f32 * 0.1).sin()).collect();
        let a = render_timelines(&bars, Some(&scores), Some(&[10, 41]), 100);
        let b = render_timelines(&bars, Some(&scores), Some(&[10, 41]), 100);
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn block_extents_are_proportional_to_shots() {
        let bars = vec![
            (
                "a".to_string(),
                Summary::new(100, vec![(0, 25)]).unwrap(),
            ),
            (
                "b".to_string(),
                Summary::new(100, vec![(50, 100)]).unwrap(),
            ),
        ];
        let svg = render_timelines(&bars, None, None, 100);
        let fills: Vec<(f64, f64)> = svg
            .lines()
            .filter(|l| l.contains(r#"fill="black""#))
            .map(|l| {
                let grab = |key: &str| -> f64 {
                    let at = l.find(key).unwrap() + key.len();
                    let rest = &l[at..];
                    let end = rest.find('"').unwrap();
                    rest[..end].parse().unwrap()
                };
                (grab(r#"x=""#), grab(r#"width=""#))
            })
            .collect();
        assert_eq!(fills.len(), 2);
        // Widths proportional to 25 and 50 frames out of 100.
        assert!((fills[0].1 * 2.0 - fills[1].1).abs() < 0.05);
        // Second block starts at the halfway mark.
        let plot_w = fills[1].1 * 2.0;
        assert!((fills[1].0 - (80.0 + plot_w / 2.0)).abs() < 0.05);
    }
}
