//! Discrete-event simulation of a stage plan over a chunk of frames.
//!
//! Every stage serves one frame at a time, FIFO. Frame `f` starts stage `k`
//! at `max(end(f, k - 1), end(f - 1, k))`. With integer-nanosecond latencies
//! the measured completion is exact and can be compared with the analytic
//! model by equality.

use std::io::Write;

use serde::Serialize;

use crate::cost::{chunk_completion, StagePlan};
use crate::scalar::{Nanos, TimeScalar};

/// One frame's visit to one stage. Frames count from 1, stages from 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent<T = Nanos> {
    pub frame: u64,
    pub stage: usize,
    pub start: T,
    pub end: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult<T = Nanos> {
    pub completion: T,
    /// Frame-major: all stages of frame 1, then frame 2, ...
    pub events: Vec<SimEvent<T>>,
    /// Busy time over completion time, per stage.
    pub per_stage_busy: Vec<f64>,
}

impl<T: TimeScalar> SimResult<T> {
    pub fn events_for_stage(&self, stage: usize) -> impl Iterator<Item = &SimEvent<T>> {
        self.events.iter().filter(move |e| e.stage == stage)
    }
}

/// Simulates a closed chunk: all frames are available at time zero.
pub fn simulate<T: TimeScalar>(plan: &StagePlan<T>, frames: u64) -> SimResult<T> {
    simulate_with_arrivals(plan, frames, T::zero())
}

/// Frame `f` becomes available at `(f - 1) * period`.
pub fn simulate_with_arrivals<T: TimeScalar>(plan: &StagePlan<T>, frames: u64, period: T) -> SimResult<T> {
    let stages = plan.stages.len();
    let mut stage_free = vec![T::zero(); stages];
    let mut busy = vec![T::zero(); stages];
    let mut events = Vec::with_capacity(stages * frames as usize);
    let mut completion = T::zero();

    for frame in 1..=frames {
        let mut ready = T::from_count(frame - 1) * period;
        for (k, stage) in plan.stages.iter().enumerate() {
            let start = ready.max_of(stage_free[k]);
            let end = start + stage.latency;
            stage_free[k] = end;
            busy[k] = busy[k] + stage.latency;
            events.push(SimEvent {
                frame,
                stage: k,
                start,
                end,
            });
            ready = end;
        }
        completion = completion.max_of(ready);
    }

    let total = completion.to_seconds();
    let per_stage_busy = busy
        .into_iter()
        .map(|b| if total > 0.0 { b.to_seconds() / total } else { 0.0 })
        .collect();
    SimResult {
        completion,
        events,
        per_stage_busy,
    }
}

/// `|simulated - analytic| / simulated`; zero when both are zero.
pub fn validate_against_model<T: TimeScalar>(plan: &StagePlan<T>, frames: u64) -> f64 {
    let measured = simulate(plan, frames).completion.to_seconds();
    let predicted = chunk_completion(plan, frames).to_seconds();
    if measured == 0.0 {
        return if predicted == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (measured - predicted).abs() / measured
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    frame: u64,
    stage: usize,
    kind: &'a str,
    device: String,
    start_ns: Nanos,
    end_ns: Nanos,
}

/// Writes one CSV row per event: `frame,stage,kind,device,start_ns,end_ns`.
pub fn write_trace<T: TimeScalar, W: Write>(
    plan: &StagePlan<T>,
    result: &SimResult<T>,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for e in &result.events {
        let stage = &plan.stages[e.stage];
        w.serialize(TraceRow {
            frame: e.frame,
            stage: e.stage,
            kind: stage.kind_name(),
            device: stage.label(),
            start_ns: e.start.to_nanos(),
            end_ns: e.end.to_nanos(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{bottleneck, single_frame_latency};
    use proptest::prelude::*;

    const MS: Nanos = 1_000_000;

    #[test]
    fn three_frames_overlap() {
        let plan = StagePlan::from_latencies(&[500 * MS, 100 * MS, 50 * MS]);
        let r = simulate(&plan, 3);
        assert_eq!(r.completion, 1650 * MS);
        let at = |frame, stage| r.events.iter().find(|e| e.frame == frame && e.stage == stage).unwrap();
        // frame 2 computes on stage 0 while frame 1 is downstream
        let f2 = at(2, 0);
        let f1 = at(1, 2);
        assert!(f2.start <= f1.start && f1.end <= f2.end);
        assert_eq!((f1.start, f1.end), (600 * MS, 650 * MS));
    }

    #[test]
    fn single_stage_is_serial() {
        let plan = StagePlan::from_latencies(&[7 * MS]);
        assert_eq!(simulate(&plan, 9).completion, 63 * MS);
    }

    #[test]
    fn one_frame_is_the_sum() {
        let plan = StagePlan::from_latencies(&[3u64, 9, 4, 1]);
        assert_eq!(simulate(&plan, 1).completion, single_frame_latency(&plan));
    }

    #[test]
    fn model_agreement_examples() {
        assert_eq!(
            validate_against_model(&StagePlan::from_latencies(&[2u64, 3, 1]), 4),
            0.0
        );
        assert_eq!(simulate(&StagePlan::from_latencies(&[2u64, 3, 1]), 4).completion, 15);
        assert_eq!(validate_against_model(&StagePlan::from_latencies(&[1u64]), 7), 0.0);
    }

    #[test]
    fn arrivals_slower_than_pipeline() {
        let plan = StagePlan::from_latencies(&[2u64, 3]);
        // period 10 leaves the pipeline idle between frames
        let r = simulate_with_arrivals(&plan, 3, 10);
        assert_eq!(r.completion, 25);
    }

    #[test]
    fn bottleneck_saturates() {
        let plan = StagePlan::from_latencies(&[40 * MS, 100 * MS, 30 * MS, 5 * MS]);
        let r = simulate(&plan, 100 * 4);
        let (k, _) = bottleneck(&plan);
        assert!(r.per_stage_busy[k] >= 0.95, "{}", r.per_stage_busy[k]);
    }

    #[test]
    fn trace_csv_rows() {
        let plan = StagePlan::from_latencies(&[2u64, 3]);
        let r = simulate(&plan, 3);
        let mut buf = Vec::new();
        write_trace(&plan, &r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("frame,stage,kind,device,start_ns,end_ns"));
        assert_eq!(lines.next(), Some("1,0,compute,S1,0,2"));
        assert_eq!(lines.next(), Some("1,1,compute,S2,2,5"));
        assert_eq!(text.lines().count(), 1 + 3 * 2);
    }

    proptest! {
        #[test]
        fn equivalent_to_formula(lat in proptest::collection::vec(0u64..5_000_000_000, 1..10), n in 1u64..64) {
            let plan = StagePlan::from_latencies(&lat);
            prop_assert_eq!(simulate(&plan, n).completion, chunk_completion(&plan, n));
        }

        #[test]
        fn conservation_and_ordering(lat in proptest::collection::vec(0u64..1000, 1..8), n in 1u64..20) {
            let plan = StagePlan::from_latencies(&lat);
            let r = simulate(&plan, n);
            prop_assert_eq!(r.events.len() as u64, n * lat.len() as u64);
            for (k, &latency) in lat.iter().enumerate() {
                let evs: Vec<_> = r.events_for_stage(k).collect();
                prop_assert_eq!(evs.len() as u64, n);
                for e in &evs {
                    prop_assert_eq!(e.end - e.start, latency);
                }
                for w in evs.windows(2) {
                    prop_assert!(w[0].end <= w[1].start);
                    prop_assert!(w[0].frame < w[1].frame);
                }
            }
            let max_end = r.events.iter().map(|e| e.end).max().unwrap();
            prop_assert_eq!(r.completion, max_end);
            prop_assert_eq!(&r, &simulate(&plan, n));
        }
    }
}
