//! Binarization of recorded point events and volume series into spin
//! configurations.
//!
//! Two adapters turn raw recordings into [`SampleTable`] snapshots on a
//! regular grid:
//!
//! * point events (e.g. discrete firing or transaction times): after each
//!   event a unit is *active* for an exponentially distributed duration
//!   (mean `1/γ`), truncated by the unit's next event, so the on/off
//!   process has the same memoryless switching statistics the kinetic
//!   models assume;
//! * volume series: a unit is *active* in a window when its summed volume
//!   reaches a threshold relative to its long-run average rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::table::SampleTable;

/// Sorted event times for a set of named units.
#[derive(Debug, Clone)]
pub struct EventSeries {
    /// Unit names, in order of first appearance in the source.
    pub ids: Vec<String>,
    /// Event times per unit, ascending.
    pub times: Vec<Vec<f64>>,
}

impl EventSeries {
    pub fn new(ids: Vec<String>, mut times: Vec<Vec<f64>>) -> Result<Self> {
        if ids.is_empty() || ids.len() != times.len() {
            return Err(Error::Parameter(
                "event series needs matching, non-empty ids and times".into(),
            ));
        }
        for (id, t) in ids.iter().zip(times.iter_mut()) {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("unit {id} has non-finite times")));
            }
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        Ok(EventSeries { ids, times })
    }

    pub fn n_units(&self) -> usize {
        self.ids.len()
    }
}

/// Parse `unit_id,time_s` CSV (with exactly that header). Units are indexed
/// by first appearance; times may arrive unsorted.
pub fn read_event_csv(text: &str) -> Result<EventSeries> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "unit_id,time_s" => {}
        other => {
            return Err(Error::Format(format!(
                "expected header 'unit_id,time_s', got {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut times: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, t_str) = line.split_once(',').ok_or_else(|| {
            Error::Format(format!("line {}: expected 'unit_id,time_s'", lineno + 2))
        })?;
        let t: f64 = t_str.trim().parse().map_err(|_| {
            Error::Format(format!("line {}: bad time '{t_str}'", lineno + 2))
        })?;
        let idx = *index.entry(id.trim().to_string()).or_insert_with(|| {
            ids.push(id.trim().to_string());
            times.push(Vec::new());
            ids.len() - 1
        });
        times[idx].push(t);
    }
    EventSeries::new(ids, times)
}

/// Binarize point events onto a regular grid of `n` cell-start times
/// `t0 + k δt`, `k = 0..n-1`, with `n = floor((t1 - t0)/δt)`.
///
/// For each event at `t_f` one exponential lifetime `X_f` with rate `γ` is
/// drawn (`ChaCha8` stream seeded with `seed`; units in index order, events
/// in time order within a unit), and the unit is active on
/// `[t_f, min(t_f + X_f, t_{f+1}))`. A grid time inside an active interval
/// yields `+1`, otherwise `-1`.
pub fn binarize_events(
    series: &EventSeries,
    gamma: f64,
    dt: f64,
    t0: f64,
    t1: f64,
    seed: u64,
) -> Result<SampleTable> {
    if !(gamma > 0.0) || !(dt > 0.0) {
        return Err(Error::Parameter("gamma and dt must be positive".into()));
    }
    if !(t1 > t0) {
        return Err(Error::Parameter(format!(
            "need t1 > t0, got [{t0}, {t1}]"
        )));
    }
    let n_cells = ((t1 - t0) / dt).floor() as usize;
    if n_cells == 0 {
        return Err(Error::Parameter("window shorter than one grid cell".into()));
    }
    let l = series.n_units();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lifetime = Exp::new(gamma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rows = vec![-1i8; n_cells * l];
    for (u, events) in series.times.iter().enumerate() {
        // Active intervals in time order; the RNG is advanced once per
        // event even when the interval misses the grid, keeping the draw
        // order independent of the grid placement.
        let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(events.len());
        for (f, &tf) in events.iter().enumerate() {
            let x = lifetime.sample(&mut rng);
            let mut end = tf + x;
            if let Some(&next) = events.get(f + 1) {
                end = end.min(next);
            }
            intervals.push((tf, end));
        }
        let mut iv = 0usize;
        for k in 0..n_cells {
            let t = t0 + k as f64 * dt;
            while iv < intervals.len() && intervals[iv].1 <= t {
                iv += 1;
            }
            if iv < intervals.len() && intervals[iv].0 <= t {
                rows[k * l + u] = 1;
            }
        }
    }
    let mut table = SampleTable::new(l, rows)?;
    table.meta.insert("source".into(), "events".into());
    table.meta.insert("gamma".into(), gamma.into());
    table.meta.insert("dt".into(), dt.into());
    table.meta.insert("seed".into(), seed.into());
    table.meta.insert(
        "unit_ids".into(),
        serde_json::Value::Array(series.ids.iter().map(|s| s.clone().into()).collect()),
    );
    Ok(table)
}

/// Time-stamped volumes for a set of named units.
#[derive(Debug, Clone)]
pub struct VolumeSeries {
    pub ids: Vec<String>,
    /// `(time, volume)` per unit, ascending in time.
    pub samples: Vec<Vec<(f64, f64)>>,
}

impl VolumeSeries {
    pub fn new(ids: Vec<String>, mut samples: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if ids.is_empty() || ids.len() != samples.len() {
            return Err(Error::Parameter(
                "volume series needs matching, non-empty ids and samples".into(),
            ));
        }
        for (id, s) in ids.iter().zip(samples.iter_mut()) {
            if s.iter().any(|(t, v)| !t.is_finite() || !v.is_finite() || *v < 0.0) {
                return Err(Error::Parameter(format!(
                    "unit {id} has non-finite times or negative volumes"
                )));
            }
            s.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        }
        Ok(VolumeSeries { ids, samples })
    }
}

/// Parse `instrument_id,time_s,volume` CSV (with exactly that header).
pub fn read_volume_csv(text: &str) -> Result<VolumeSeries> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "instrument_id,time_s,volume" => {}
        other => {
            return Err(Error::Format(format!(
                "expected header 'instrument_id,time_s,volume', got {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut samples: Vec<Vec<(f64, f64)>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let id = parts
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: missing id", lineno + 2)))?;
        let t: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad time", lineno + 2)))?;
        let v: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad volume", lineno + 2)))?;
        let idx = *index.entry(id.trim().to_string()).or_insert_with(|| {
            ids.push(id.trim().to_string());
            samples.push(Vec::new());
            ids.len() - 1
        });
        samples[idx].push((t, v));
    }
    VolumeSeries::new(ids, samples)
}

#[derive(Debug, Clone)]
pub struct VolumeBinarizeOptions {
    /// Window length over which volume is summed.
    pub window: f64,
    /// Spacing between consecutive window starts (overlap allowed).
    pub shift: f64,
    /// Activity threshold in units of the long-run average volume per
    /// window: active iff `Σ volume ≥ chi · V_av · window`.
    pub chi: f64,
}

impl Default for VolumeBinarizeOptions {
    fn default() -> Self {
        VolumeBinarizeOptions {
            window: 1.0,
            shift: 1.0,
            chi: 1.0,
        }
    }
}

/// Binarize volume series on sliding windows over `[t0, t1]`.
///
/// Windows start at `t0 + k·shift` and only windows fully inside the span
/// are kept; the number of discarded trailing windows is recorded in the
/// table metadata. Each unit's average rate `V_av` is its total volume in
/// the span divided by the span length; the threshold comparison is `≥`.
pub fn binarize_volumes(
    series: &VolumeSeries,
    opts: &VolumeBinarizeOptions,
    t0: f64,
    t1: f64,
) -> Result<SampleTable> {
    if !(opts.window > 0.0) || !(opts.shift > 0.0) || !(opts.chi > 0.0) {
        return Err(Error::Parameter(
            "window, shift and chi must all be positive".into(),
        ));
    }
    if !(t1 - t0 >= opts.window) {
        return Err(Error::Parameter(format!(
            "span [{t0}, {t1}] is shorter than one window of {}",
            opts.window
        )));
    }
    let span = t1 - t0;
    let n_windows = ((span - opts.window) / opts.shift).floor() as usize + 1;
    let n_dropped = ((span / opts.shift).floor() as usize + 1).saturating_sub(n_windows);
    let l = series.ids.len();
    let mut rows = vec![-1i8; n_windows * l];
    for (u, samples) in series.samples.iter().enumerate() {
        let total: f64 = samples
            .iter()
            .filter(|(t, _)| *t >= t0 && *t < t1)
            .map(|(_, v)| v)
            .sum();
        let v_av = total / span;
        let threshold = opts.chi * v_av * opts.window;
        // Prefix sums over the in-span samples for O(log n) window sums.
        let in_span: Vec<(f64, f64)> = samples
            .iter()
            .copied()
            .filter(|(t, _)| *t >= t0 && *t < t1)
            .collect();
        let mut prefix = Vec::with_capacity(in_span.len() + 1);
        prefix.push(0.0f64);
        for (_, v) in &in_span {
            prefix.push(prefix.last().unwrap() + v);
        }
        for k in 0..n_windows {
            let lo = t0 + k as f64 * opts.shift;
            let hi = lo + opts.window;
            let a = in_span.partition_point(|(t, _)| *t < lo);
            let b = in_span.partition_point(|(t, _)| *t < hi);
            let sum = prefix[b] - prefix[a];
            if sum >= threshold && total > 0.0 {
                rows[k * l + u] = 1;
            }
        }
    }
    let mut table = SampleTable::new(l, rows)?;
    table.meta.insert("source".into(), "volumes".into());
    table.meta.insert("window".into(), opts.window.into());
    table.meta.insert("shift".into(), opts.shift.into());
    table.meta.insert("chi".into(), opts.chi.into());
    table.meta.insert("windows_dropped".into(), (n_dropped as u64).into());
    table.meta.insert(
        "unit_ids".into(),
        serde_json::Value::Array(series.ids.iter().map(|s| s.clone().into()).collect()),
    );
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_csv_parses_with_first_appearance_order() {
        let text = "unit_id,time_s\nb,2.0\na,1.5\nb,0.5\na,3.0\n";
        let ev = read_event_csv(text).unwrap();
        assert_eq!(ev.ids, vec!["b", "a"]);
        assert_eq!(ev.times[0], vec![0.5, 2.0]); // sorted within unit
        assert_eq!(ev.times[1], vec![1.5, 3.0]);
    }

    #[test]
    fn event_csv_rejects_bad_header_and_bad_rows() {
        assert!(read_event_csv("time,unit\n").is_err());
        assert!(read_event_csv("unit_id,time_s\nno_comma_here\n").is_err());
        assert!(read_event_csv("unit_id,time_s\na,not_a_number\n").is_err());
    }

    #[test]
    fn binarization_replays_the_documented_rng_order() {
        // Reproduce the exponential draws independently and check the rows.
        let ev = EventSeries::new(
            vec!["u0".into(), "u1".into()],
            vec![vec![1.0, 4.0], vec![2.5]],
        )
        .unwrap();
        let (gamma, dt, seed) = (0.8, 0.5, 42u64);
        let table = binarize_events(&ev, gamma, dt, 0.0, 6.0, seed).unwrap();
        assert_eq!(table.n_rows(), 12);
        assert_eq!(table.l(), 2);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let exp = Exp::new(gamma).unwrap();
        let x: Vec<f64> = (0..3).map(|_| exp.sample(&mut rng)).collect();
        // Unit 0 intervals: [1, min(1+x0, 4)), [4, 4+x1); unit 1: [2.5, 2.5+x2).
        let active = |u: usize, t: f64| -> bool {
            match u {
                0 => {
                    (t >= 1.0 && t < (1.0 + x[0]).min(4.0)) || (t >= 4.0 && t < 4.0 + x[1])
                }
                _ => t >= 2.5 && t < 2.5 + x[2],
            }
        };
        for k in 0..12 {
            let t = k as f64 * 0.5;
            for u in 0..2 {
                let expect = if active(u, t) { 1 } else { -1 };
                assert_eq!(
                    table.row(k)[u],
                    expect,
                    "cell {k} (t = {t}) unit {u}"
                );
            }
        }
    }

    #[test]
    fn event_at_grid_time_is_active_immediately() {
        let ev = EventSeries::new(vec!["u".into()], vec![vec![1.0]]).unwrap();
        // Large mean lifetime: the unit stays on for a long time.
        let table = binarize_events(&ev, 1e-6, 1.0, 0.0, 4.0, 1).unwrap();
        assert_eq!(table.row(0)[0], -1); // t = 0 before the event
        assert_eq!(table.row(1)[0], 1); // t = 1 exactly at the event
        assert_eq!(table.row(3)[0], 1);
    }

    #[test]
    fn unit_without_events_stays_down() {
        let ev = EventSeries::new(
            vec!["silent".into(), "busy".into()],
            vec![vec![], vec![0.1, 0.2, 0.3]],
        )
        .unwrap();
        let table = binarize_events(&ev, 1.0, 0.5, 0.0, 2.0, 3).unwrap();
        for k in 0..table.n_rows() {
            assert_eq!(table.row(k)[0], -1);
        }
    }

    #[test]
    fn volume_threshold_is_inclusive_and_uses_the_average_rate() {
        // Span 10 s, unit volume total 100 → V_av = 10/s. Window 2 s,
        // chi = 1 → threshold 20.
        let vs = VolumeSeries::new(
            vec!["x".into()],
            vec![vec![
                (0.5, 25.0), // window [0,2): 25 ≥ 20 → +1
                (2.5, 15.0), // window [2,4): 15 < 20 → -1
                (4.5, 20.0), // window [4,6): exactly 20 → +1 (inclusive)
                (6.5, 15.0),
                (8.5, 25.0),
            ]],
        )
        .unwrap();
        let opts = VolumeBinarizeOptions {
            window: 2.0,
            shift: 2.0,
            chi: 1.0,
        };
        let table = binarize_volumes(&vs, &opts, 0.0, 10.0).unwrap();
        assert_eq!(table.n_rows(), 5);
        let got: Vec<i8> = (0..5).map(|k| table.row(k)[0]).collect();
        assert_eq!(got, vec![1, -1, 1, -1, 1]);
    }

    #[test]
    fn overlapping_windows_and_truncation_accounting() {
        let vs = VolumeSeries::new(vec!["x".into()], vec![vec![(0.5, 1.0), (5.0, 1.0)]])
            .unwrap();
        let opts = VolumeBinarizeOptions {
            window: 2.0,
            shift: 1.0,
            chi: 1.0,
        };
        // Span 7: starts 0..=5 fit a 2-length window → 6 rows; starts 6,7
        // would run past the end.
        let table = binarize_volumes(&vs, &opts, 0.0, 7.0).unwrap();
        assert_eq!(table.n_rows(), 6);
        assert_eq!(table.meta["windows_dropped"], 2u64);
    }

    #[test]
    fn volume_csv_round_trip_and_validation() {
        let text = "instrument_id,time_s,volume\nA,1.0,10.0\nB,0.5,3.5\nA,0.2,1.0\n";
        let vs = read_volume_csv(text).unwrap();
        assert_eq!(vs.ids, vec!["A", "B"]);
        assert_eq!(vs.samples[0], vec![(0.2, 1.0), (1.0, 10.0)]);
        assert!(read_volume_csv("bad_header\n").is_err());
        assert!(read_volume_csv("instrument_id,time_s,volume\nA,1.0\n").is_err());
        assert!(
            VolumeSeries::new(vec!["x".into()], vec![vec![(0.0, -1.0)]]).is_err(),
            "negative volumes must be rejected"
        );
    }

    #[test]
    fn binarized_tables_feed_the_inference_pipeline() {
        // End-to-end smoke: correlated activity of two units that fire
        // together should yield a positive inferred coupling.
        let mut t_a = Vec::new();
        let mut t_b = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut t = 0.0;
        use rand::Rng;
        while t < 2000.0 {
            t += rng.gen_range(1.0..3.0);
            t_a.push(t);
            if rng.gen::<f64>() < 0.8 {
                t_b.push(t + 0.05);
            }
        }
        let ev = EventSeries::new(vec!["a".into(), "b".into()], vec![t_a, t_b]).unwrap();
        let table = binarize_events(&ev, 1.0, 0.5, 0.0, 2000.0, 9).unwrap();
        let ms = crate::stats::sample_moments(&table, 0.01).unwrap();
        let res = crate::equilibrium::infer_nmf(&ms).unwrap();
        assert!(
            res.j_star[(0, 1)] > 0.1,
            "coupled units should infer positive J, got {}",
            res.j_star[(0, 1)]
        );
    }
}
