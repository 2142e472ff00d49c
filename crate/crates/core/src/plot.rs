//! SVG timeline of a session: one lane per performer, coloured by gesture,
//! with a flux trace underneath and a red vertical line at each new idea.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::gesture::{GestureClass, GESTURE_COUNT};
use crate::session::EnsembleTick;

const LEFT: f64 = 90.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const LANE: f64 = 22.0;
const LANE_GAP: f64 = 4.0;
const FLUX_HEIGHT: f64 = 60.0;
const LEGEND: f64 = 40.0;
const PX_PER_SEC: f64 = 4.0;

const PALETTE: [&str; GESTURE_COUNT] = [
    "#f0f0f0", "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#9467bd",
    "#8c564b",
];

pub fn gesture_color(g: GestureClass) -> &'static str {
    PALETTE[g.index()]
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

pub fn render_svg(ticks: &[EnsembleTick]) -> String {
    let mut lanes: BTreeMap<&str, Vec<(f64, GestureClass)>> = BTreeMap::new();
    for t in ticks {
        for (id, g) in &t.per_performer {
            lanes
                .entry(id.as_str())
                .or_default()
                .push((t.time, g.gesture));
        }
    }
    let t0 = ticks.first().map(|t| t.time - 1.0).unwrap_or(0.0);
    let t1 = ticks.last().map(|t| t.time).unwrap_or(1.0).max(t0 + 1.0);
    let x = |t: f64| LEFT + (t - t0) * PX_PER_SEC;
    let width = x(t1) + RIGHT;
    let lanes_bottom = TOP + lanes.len() as f64 * (LANE + LANE_GAP);
    let flux_top = lanes_bottom + 10.0;
    let flux_bottom = flux_top + FLUX_HEIGHT;
    let height = flux_bottom + 20.0 + LEGEND;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="13">Ensemble gestures</text>"#
    );

    for (row, (id, samples)) in lanes.iter().enumerate() {
        let y = TOP + row as f64 * (LANE + LANE_GAP);
        let _ = writeln!(
            s,
            r#"<g class="lane" data-performer="{id}"><text x="{lx}" y="{ty:.1}" text-anchor="end">{id}</text>"#,
            id = escape(id),
            lx = LEFT - 6.0,
            ty = y + LANE * 0.7
        );
        for &(t, g) in samples {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{PX_PER_SEC}" height="{LANE}" fill="{}"><title>{} at {t}s</title></rect>"#,
                x(t - 1.0),
                gesture_color(g),
                g.code()
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">flux</text>"#,
        LEFT - 6.0,
        flux_top + 12.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{flux_top:.1}" width="{:.1}" height="{FLUX_HEIGHT}" fill="none" stroke="#ccc"/>"##,
        x(t1) - LEFT
    );
    if !ticks.is_empty() {
        let pts: Vec<String> = ticks
            .iter()
            .map(|t| {
                format!(
                    "{:.1},{:.1}",
                    x(t.time),
                    flux_bottom - t.flux_now.clamp(0.0, 1.0) * FLUX_HEIGHT
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="flux" fill="none" stroke="#333" points="{}"/>"##,
            pts.join(" ")
        );
    }

    for t in ticks.iter().filter(|t| t.new_idea) {
        let _ = writeln!(
            s,
            r#"<line class="new-idea" x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{flux_bottom:.1}" stroke="red" stroke-width="2"><title>new idea at {t}s</title></line>"#,
            x = x(t.time),
            t = t.time
        );
    }

    let axis_y = flux_bottom + 14.0;
    let step = if t1 - t0 > 300.0 { 60.0 } else { 10.0 };
    let mut tick = (t0 / step).ceil() * step;
    while tick <= t1 {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{axis_y:.1}" text-anchor="middle">{tick}</text>"#,
            x(tick)
        );
        tick += step;
    }

    let legend_y = axis_y + 16.0;
    for (i, g) in GestureClass::ALL.iter().enumerate() {
        let lx = LEFT + i as f64 * 48.0;
        let _ = writeln!(
            s,
            r##"<rect x="{lx:.1}" y="{legend_y:.1}" width="12" height="12" fill="{}" stroke="#999"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            gesture_color(*g),
            lx + 16.0,
            legend_y + 10.0,
            g.code()
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TransitionMatrix;
    use crate::session::PerformerGesture;

    fn tick(time: f64, new_idea: bool, ids: &[&str]) -> EnsembleTick {
        EnsembleTick {
            time,
            per_performer: ids
                .iter()
                .map(|id| {
                    (
                        id.to_string(),
                        PerformerGesture {
                            gesture: GestureClass::FastTapping,
                            probability: 1.0,
                        },
                    )
                })
                .collect(),
            ensemble_matrix: TransitionMatrix::zero(),
            flux_now: 0.5,
            flux_prev: 0.0,
            new_idea,
            suppressed: false,
            tick_duration: 0.0,
            lag: 0.0,
        }
    }

    #[test]
    fn one_lane_per_performer_and_one_marker_per_idea() {
        let ticks = vec![
            tick(1.0, false, &["a", "b"]),
            tick(2.0, true, &["a", "b", "c"]),
            tick(3.0, true, &["a"]),
        ];
        let svg = render_svg(&ticks);
        assert_eq!(svg.matches(r#"class="lane""#).count(), 3);
        assert_eq!(svg.matches(r#"class="new-idea""#).count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn ids_are_escaped() {
        let svg = render_svg(&[tick(1.0, false, &["<b&>"])]);
        assert!(svg.contains("&lt;b&amp;&gt;") && !svg.contains("<b&>"));
    }

    #[test]
    fn empty_input_is_still_a_document() {
        let svg = render_svg(&[]);
        assert!(svg.starts_with("<svg") && !svg.contains("new-idea"));
    }
}
