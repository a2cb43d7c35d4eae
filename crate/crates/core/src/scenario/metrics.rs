use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::critical_area::ConsistencyMode;
use crate::geom::Vec2;
use crate::overlay::LinkKind;
use crate::{ClientId, EntityId};

pub const METRICS_HEADER: &str = "tick_ms,entity,owner,viewer,truth_x,truth_y,shown_x,shown_y,divergence_m,mode,route";
pub const EVENTS_HEADER: &str = "event_seq,owner,viewer,local_playout_ms,remote_playout_ms,diff_ms";

/// One entity as seen by one remote viewer at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub tick_ms: u64,
    pub entity: EntityId,
    pub owner: ClientId,
    pub viewer: ClientId,
    pub truth: Vec2,
    pub shown: Vec2,
    pub divergence_m: f64,
    /// The viewer's mode for the entity.
    pub mode: ConsistencyMode,
    /// Route the owner currently uses toward the viewer.
    pub route: Option<LinkKind>,
    /// The viewer is still blending toward a correction.
    pub converging: bool,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.tick_ms,
            self.entity,
            self.owner,
            self.viewer,
            self.truth.x,
            self.truth.y,
            self.shown.x,
            self.shown.y,
            self.divergence_m,
            self.mode.as_str(),
            self.route.map_or("none", LinkKind::as_str),
        )
    }
}

/// Playout times of one event at its owner and at one viewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRow {
    pub event_seq: u32,
    pub owner: ClientId,
    pub viewer: ClientId,
    pub local_playout_ms: u64,
    pub remote_playout_ms: u64,
}

impl EventRow {
    pub fn diff_ms(&self) -> i64 {
        self.remote_playout_ms as i64 - self.local_playout_ms as i64
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.event_seq,
            self.owner,
            self.viewer,
            self.local_playout_ms,
            self.remote_playout_ms,
            self.diff_ms()
        )
    }
}

/// Running count, sum and maximum, accumulated in row order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub n: u64,
    pub sum: f64,
    pub max: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        if self.n == 1 || x > self.max {
            self.max = x;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub rows: u64,
    pub mean_divergence_m: f64,
    pub max_divergence_m: f64,
    pub events: u64,
    pub mean_abs_display_diff_ms: f64,
    pub max_abs_display_diff_ms: f64,
    pub events_unplayed: u64,
    pub received: u64,
    pub received_playable: u64,
    pub late: u64,
    pub late_fraction: f64,
    pub rollbacks: u64,
    pub duplicates: u64,
    pub beyond_window: u64,
    pub decode_errors: u64,
    pub callback_failures: u64,
    pub state_sends: u64,
    pub event_sends: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub no_route_drops: u64,
    pub route_switches: u64,
    pub mean_state_delay_ms: f64,
    pub processing_samples: u64,
    pub processing_p50_us: f64,
    pub processing_p99_us: f64,
    pub wall_ms: f64,
}

impl Summary {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn write_to(&self, out: &mut dyn Write) -> io::Result<()> {
        out.write_all(self.to_string().as_bytes())
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        macro_rules! kv {
            ($($field:ident),*) => {
                $( writeln!(f, "{}={}", stringify!($field), self.$field)?; )*
            };
        }
        kv!(
            scenario,
            seed,
            duration_ms,
            rows,
            mean_divergence_m,
            max_divergence_m,
            events,
            mean_abs_display_diff_ms,
            max_abs_display_diff_ms,
            events_unplayed,
            received,
            received_playable,
            late,
            late_fraction,
            rollbacks,
            duplicates,
            beyond_window,
            decode_errors,
            callback_failures,
            state_sends,
            event_sends,
            sent,
            delivered,
            dropped,
            no_route_drops,
            route_switches,
            mean_state_delay_ms,
            processing_samples,
            processing_p50_us,
            processing_p99_us,
            wall_ms
        );
        Ok(())
    }
}

/// Parses `key=value` lines; blank lines are skipped.
pub fn parse_summary(text: &str) -> Result<BTreeMap<String, String>, CompareError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| CompareError::Malformed { line: i + 1, message: "expected key=value".into() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// A metrics CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub tick_ms: u64,
    pub entity: EntityId,
    pub viewer: ClientId,
    pub divergence_m: f64,
    pub mode: String,
    pub route: String,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<ParsedRow>, CompareError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(CompareError::SchemaMismatch(format!(
                "expected metrics header, found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: &str| CompareError::Malformed { line: i + 2, message: m.to_owned() };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 11 {
                return Err(bad("expected 11 columns"));
            }
            Ok(ParsedRow {
                tick_ms: cols[0].parse().map_err(|_| bad("tick_ms"))?,
                entity: cols[1].parse().map_err(|_| bad("entity"))?,
                viewer: cols[3].parse().map_err(|_| bad("viewer"))?,
                divergence_m: cols[8].parse().map_err(|_| bad("divergence_m"))?,
                mode: cols[9].to_owned(),
                route: cols[10].to_owned(),
            })
        })
        .collect()
}

/// Recomputes divergence statistics from a metrics CSV.
pub fn divergence_from_csv(text: &str) -> Result<Accumulator, CompareError> {
    let mut acc = Accumulator::default();
    for row in parse_metrics_csv(text)? {
        acc.push(row.divergence_m);
    }
    Ok(acc)
}

/// Recomputes |display-time difference| statistics from an event CSV.
pub fn display_diff_from_csv(text: &str) -> Result<Accumulator, CompareError> {
    let mut lines = text.lines();
    if lines.next() != Some(EVENTS_HEADER) {
        return Err(CompareError::SchemaMismatch("expected event header".into()));
    }
    let mut acc = Accumulator::default();
    for (i, line) in lines.enumerate() {
        let diff: i64 = line
            .rsplit(',')
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or(CompareError::Malformed { line: i + 2, message: "diff_ms".into() })?;
        acc.push(diff.unsigned_abs() as f64);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDelta {
    pub label: String,
    pub rows: u64,
    pub baseline_mean: f64,
    pub variant_mean: f64,
}

impl WindowDelta {
    pub fn delta(&self) -> f64 {
        self.variant_mean - self.baseline_mean
    }

    /// Lower mean divergence wins.
    pub fn winner(&self) -> &'static str {
        match self.variant_mean.partial_cmp(&self.baseline_mean) {
            Some(std::cmp::Ordering::Less) => "variant",
            Some(std::cmp::Ordering::Greater) => "baseline",
            _ => "tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    Metrics {
        overall: WindowDelta,
        /// Rows where either run had the entity in strong mode.
        strong: Option<WindowDelta>,
        windows: Vec<WindowDelta>,
        max_delta: f64,
    },
    Summary(Vec<(String, f64, f64)>),
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Comparison::Metrics { overall, strong, windows, max_delta } => {
                writeln!(f, "window\trows\tbaseline_mean_m\tvariant_mean_m\tdelta_m\twinner")?;
                for w in std::iter::once(overall).chain(strong).chain(windows) {
                    writeln!(
                        f,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        w.label,
                        w.rows,
                        w.baseline_mean,
                        w.variant_mean,
                        w.delta(),
                        w.winner()
                    )?;
                }
                writeln!(f, "max_divergence_delta_m\t{max_delta}")
            }
            Comparison::Summary(rows) => {
                writeln!(f, "key\tbaseline\tvariant\tdelta")?;
                for (k, a, b) in rows {
                    writeln!(f, "{k}\t{a}\t{b}\t{}", b - a)?;
                }
                Ok(())
            }
        }
    }
}

/// Compares two metrics CSVs on the same tick grid (deltas are variant
/// minus baseline, per `window_ms` slice), or two summaries key by key.
pub fn compare(baseline: &str, variant: &str, window_ms: u64) -> Result<Comparison, CompareError> {
    let is_csv = |t: &str| t.lines().next() == Some(METRICS_HEADER);
    match (is_csv(baseline), is_csv(variant)) {
        (true, true) => compare_metrics(baseline, variant, window_ms.max(1)),
        (false, false) => compare_summaries(baseline, variant),
        _ => Err(CompareError::SchemaMismatch("one metrics CSV and one other file".into())),
    }
}

fn compare_metrics(baseline: &str, variant: &str, window_ms: u64) -> Result<Comparison, CompareError> {
    let a = parse_metrics_csv(baseline)?;
    let b = parse_metrics_csv(variant)?;
    let key = |r: &ParsedRow| (r.tick_ms, r.entity, r.viewer);
    let a_map: BTreeMap<_, &ParsedRow> = a.iter().map(|r| (key(r), r)).collect();
    let b_map: BTreeMap<_, &ParsedRow> = b.iter().map(|r| (key(r), r)).collect();
    if a_map.len() != a.len() || b_map.len() != b.len() {
        return Err(CompareError::SchemaMismatch("duplicate (tick, entity, viewer) rows".into()));
    }
    if !a_map.keys().eq(b_map.keys()) {
        return Err(CompareError::SchemaMismatch("runs are not on the same tick grid".into()));
    }

    let mut overall = (Accumulator::default(), Accumulator::default());
    let mut strong = (Accumulator::default(), Accumulator::default());
    let mut windows: BTreeMap<u64, (Accumulator, Accumulator)> = BTreeMap::new();
    for (k, ra) in &a_map {
        let rb = b_map[k];
        overall.0.push(ra.divergence_m);
        overall.1.push(rb.divergence_m);
        if ra.mode == "strong" || rb.mode == "strong" {
            strong.0.push(ra.divergence_m);
            strong.1.push(rb.divergence_m);
        }
        let w = windows.entry(k.0 / window_ms).or_default();
        w.0.push(ra.divergence_m);
        w.1.push(rb.divergence_m);
    }
    let delta = |label: String, (x, y): (Accumulator, Accumulator)| WindowDelta {
        label,
        rows: x.n,
        baseline_mean: x.mean(),
        variant_mean: y.mean(),
    };
    Ok(Comparison::Metrics {
        max_delta: overall.1.max - overall.0.max,
        overall: delta("all".into(), overall),
        strong: (strong.0.n > 0).then(|| delta("strong".into(), strong)),
        windows: windows
            .into_iter()
            .map(|(i, acc)| delta(format!("{}-{}", i * window_ms, (i + 1) * window_ms), acc))
            .collect(),
    })
}

fn compare_summaries(baseline: &str, variant: &str) -> Result<Comparison, CompareError> {
    let a = parse_summary(baseline)?;
    let b = parse_summary(variant)?;
    if !a.keys().eq(b.keys()) {
        return Err(CompareError::SchemaMismatch("summaries have different keys".into()));
    }
    let rows = a
        .iter()
        .filter_map(|(k, va)| {
            let x: f64 = va.parse().ok()?;
            let y: f64 = b[k].parse().ok()?;
            Some((k.clone(), x, y))
        })
        .collect();
    Ok(Comparison::Summary(rows))
}
