use std::fmt::Write as _;
use std::str::FromStr;

use super::{Phase, SimResult};
use crate::error::{Error, Result};
use crate::ingest::{from_versioned_str, to_versioned_string};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineFormat {
    Json,
    Svg,
}

impl FromStr for TimelineFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            _ => Err(Error::Unknown {
                kind: "timeline format",
                name: s.to_owned(),
            }),
        }
    }
}

/// Renders a simulation result. JSON is the full result document (events
/// included); SVG is a per-stage Gantt chart.
pub fn export_timeline(result: &SimResult, format: TimelineFormat) -> Result<String> {
    match format {
        TimelineFormat::Json => to_versioned_string(result),
        TimelineFormat::Svg => Ok(render_svg(result)),
    }
}

pub fn parse_timeline(json: &str) -> Result<SimResult> {
    from_versioned_str(json)
}

const LANE_H: f64 = 28.0;
const LANE_GAP: f64 = 8.0;
const LEFT: f64 = 72.0;
const TOP: f64 = 24.0;
const PLOT_W: f64 = 960.0;

fn colour(phase: Phase) -> &'static str {
    match phase {
        Phase::Fwd => "#4c78a8",
        Phase::Bwd => "#f58518",
        Phase::Recompute => "#e45756",
        Phase::Send => "#9d9d9d",
        Phase::Recv => "#bab0ac",
    }
}

fn label(phase: Phase) -> &'static str {
    match phase {
        Phase::Fwd => "fwd",
        Phase::Bwd => "bwd",
        Phase::Recompute => "recompute",
        Phase::Send => "send",
        Phase::Recv => "recv",
    }
}

fn render_svg(result: &SimResult) -> String {
    let lanes = result.n_stages().max(
        result
            .timeline
            .iter()
            .map(|e| e.stage + 1)
            .max()
            .unwrap_or(0),
    );
    let height = TOP + lanes as f64 * (LANE_H + LANE_GAP) + 40.0;
    let width = LEFT + PLOT_W + 24.0;
    let scale = if result.iteration_time > 0.0 {
        PLOT_W / result.iteration_time
    } else {
        0.0
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for k in 0..lanes {
        let y = TOP + k as f64 * (LANE_H + LANE_GAP);
        let _ = writeln!(
            s,
            r#"<text x="8" y="{:.1}">stage {k}</text>"#,
            y + LANE_H * 0.65
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT:.1}" y="{y:.1}" width="{PLOT_W:.1}" height="{LANE_H:.1}" fill="#f4f4f4"/>"##
        );
    }
    for e in &result.timeline {
        let y = TOP + e.stage as f64 * (LANE_H + LANE_GAP);
        let x = LEFT + e.start * scale;
        let w = ((e.end - e.start) * scale).max(0.5);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.3}" y="{y:.1}" width="{w:.3}" height="{LANE_H:.1}" fill="{}" stroke="white" stroke-width="0.5"><title>{} mb{} {:.6}-{:.6}s</title></rect>"#,
            colour(e.phase),
            label(e.phase),
            e.micro_batch,
            e.start,
            e.end
        );
    }
    let axis_y = TOP + lanes as f64 * (LANE_H + LANE_GAP) + 16.0;
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.1}" y="{axis_y:.1}">0 s</text><text x="{:.1}" y="{axis_y:.1}" text-anchor="end">{:.6} s, bubble {:.4}</text>"#,
        LEFT + PLOT_W,
        result.iteration_time,
        result.bubble_ratio
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipesim::{run_timings, PipelineTimings, StageWork};

    fn result() -> SimResult {
        let t = PipelineTimings {
            stages: vec![
                vec![
                    StageWork {
                        fwd: 1.0,
                        bwd: 2.0,
                        recompute: 0.5
                    };
                    3
                ];
                2
            ],
            comm: vec![vec![0.25; 3]],
        };
        run_timings(&t, false).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let r = result();
        let doc = export_timeline(&r, TimelineFormat::Json).unwrap();
        assert_eq!(parse_timeline(&doc).unwrap(), r);
    }

    #[test]
    fn svg_has_one_bar_per_event() {
        let r = result();
        let svg = export_timeline(&r, TimelineFormat::Svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<title>").count(), r.timeline.len());
    }

    #[test]
    fn empty_timeline() {
        let r = SimResult {
            iteration_time: 0.0,
            bubble_ratio: 0.0,
            per_stage_busy: vec![],
            per_stage_peak_mem: vec![],
            timeline: vec![],
        };
        let svg = export_timeline(&r, TimelineFormat::Svg).unwrap();
        assert!(svg.contains("</svg>"));
        let json = export_timeline(&r, TimelineFormat::Json).unwrap();
        assert_eq!(parse_timeline(&json).unwrap(), r);
    }

    #[test]
    fn unknown_format() {
        assert!("png".parse::<TimelineFormat>().is_err());
        assert_eq!(
            "SVG".parse::<TimelineFormat>().unwrap(),
            TimelineFormat::Svg
        );
    }
}
