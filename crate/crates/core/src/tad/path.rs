use std::io::Write;

use crate::dynamics::Side;
use crate::error::{Error, Result};
use crate::potential::BasinTopology;
use crate::qsd::csv_err;

/// How a path segment ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEnd {
    /// Transition into the neighbouring basin through `side`.
    Exit(Side),
    /// Exit through an outer wall; the path stops here.
    Absorbed(Side),
    /// The time budget ran out.
    Horizon,
    /// A high-temperature search hit its step limit; the path is partial.
    Timeout,
}

impl SegmentEnd {
    pub fn label(&self) -> &'static str {
        match self {
            SegmentEnd::Exit(Side::Left) => "left",
            SegmentEnd::Exit(Side::Right) => "right",
            SegmentEnd::Absorbed(Side::Left) => "terminal_left",
            SegmentEnd::Absorbed(Side::Right) => "terminal_right",
            SegmentEnd::Horizon => "horizon",
            SegmentEnd::Timeout => "timeout",
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, SegmentEnd::Exit(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSegment {
    pub label: usize,
    pub duration: f64,
    pub end: SegmentEnd,
}

/// Piecewise-constant basin-label trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetastablePath {
    pub segments: Vec<PathSegment>,
    pub total_time: f64,
}

impl MetastablePath {
    /// Number of basin-to-basin transitions.
    pub fn transitions(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s.end, SegmentEnd::Exit(_)))
            .count()
    }

    pub fn last_end(&self) -> Option<SegmentEnd> {
        self.segments.last().map(|s| s.end)
    }

    pub fn is_truncated(&self) -> bool {
        self.last_end() == Some(SegmentEnd::Timeout)
    }

    /// Completed sojourns in `label`, i.e. segments that ended in an exit.
    pub fn sojourns(&self, label: usize) -> Vec<f64> {
        self.segments
            .iter()
            .filter(|s| {
                s.label == label && matches!(s.end, SegmentEnd::Exit(_) | SegmentEnd::Absorbed(_))
            })
            .map(|s| s.duration)
            .collect()
    }

    /// `(left exits, right exits)` out of `label`.
    pub fn exit_counts(&self, label: usize) -> (usize, usize) {
        let mut c = (0, 0);
        for s in self.segments.iter().filter(|s| s.label == label) {
            match s.end {
                SegmentEnd::Exit(Side::Left) | SegmentEnd::Absorbed(Side::Left) => c.0 += 1,
                SegmentEnd::Exit(Side::Right) | SegmentEnd::Absorbed(Side::Right) => c.1 += 1,
                _ => {}
            }
        }
        c
    }

    /// Checks the structural invariants: positive durations (a lone
    /// zero-length horizon segment is allowed), consecutive labels differ,
    /// exits land in the adjacent basin, only the last segment is terminal.
    pub fn validate(&self, top: &BasinTopology) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::InvalidTopology(format!(
                "path invariant violated: {msg}"
            )))
        };
        let n = self.segments.len();
        for (k, s) in self.segments.iter().enumerate() {
            if s.label >= top.len() {
                return bad(format!("segment {k} has unknown label {}", s.label));
            }
            let lone_empty = n == 1 && s.duration == 0.0 && s.end == SegmentEnd::Horizon;
            if !(s.duration > 0.0 || lone_empty) {
                return bad(format!("segment {k} has duration {}", s.duration));
            }
            if k + 1 < n {
                let next = self.segments[k + 1].label;
                match s.end {
                    SegmentEnd::Exit(side) => {
                        if top.neighbor(s.label, side) != Some(next) {
                            return bad(format!(
                                "segment {k}: {side} exit from {} lands in {next}",
                                s.label
                            ));
                        }
                    }
                    _ => return bad(format!("terminal segment {k} is not last")),
                }
            } else if !s.end.is_terminal() {
                return bad("last segment ends in a transition".into());
            }
        }
        let sum: f64 = self.segments.iter().map(|s| s.duration).sum();
        if (sum - self.total_time).abs() > 1e-9 * sum.max(1.0) {
            return bad(format!(
                "durations sum to {sum}, total_time is {}",
                self.total_time
            ));
        }
        Ok(())
    }

    /// CSV with columns `segment_index,basin_label,duration,exit_side`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["segment_index", "basin_label", "duration", "exit_side"])
            .map_err(csv_err)?;
        for (k, s) in self.segments.iter().enumerate() {
            w.write_record([
                k.to_string(),
                s.label.to_string(),
                format!("{:.12e}", s.duration),
                s.end.label().to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accumulates time in the current basin and closes segments on exits, so
/// that consecutive segments always carry different labels.
#[derive(Debug, Clone)]
pub(crate) struct PathBuilder {
    segments: Vec<PathSegment>,
    label: usize,
    duration: f64,
    total: f64,
}

impl PathBuilder {
    pub fn new(label: usize) -> Self {
        Self {
            segments: Vec::new(),
            label,
            duration: 0.0,
            total: 0.0,
        }
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn stay(&mut self, t: f64) {
        self.duration += t;
        self.total += t;
    }

    /// Closes the current segment with an exit through `side`. Returns the
    /// new label, or `None` if the exit went through an outer wall (the
    /// segment is then closed as absorbed).
    pub fn leave(&mut self, top: &BasinTopology, side: Side) -> Option<usize> {
        let next = top.neighbor(self.label, side);
        let end = match next {
            Some(_) => SegmentEnd::Exit(side),
            None => SegmentEnd::Absorbed(side),
        };
        self.segments.push(PathSegment {
            label: self.label,
            duration: self.duration,
            end,
        });
        self.duration = 0.0;
        if let Some(l) = next {
            self.label = l;
        }
        next
    }

    pub fn finish(mut self, end: SegmentEnd) -> MetastablePath {
        if !matches!(self.segments.last(), Some(s) if matches!(s.end, SegmentEnd::Absorbed(_))) {
            self.segments.push(PathSegment {
                label: self.label,
                duration: self.duration,
                end,
            });
        }
        MetastablePath {
            segments: self.segments,
            total_time: self.total,
        }
    }
}
