//! Prints the two-worker timeline for a recorded and a live stream.

use evs::pipeline::{operating_point, schedule_concurrency, StreamMode, TaskKind};

fn main() -> evs::Result<()> {
    let op = operating_point("EVS-07")?;
    for mode in [StreamMode::Recorded, StreamMode::Live { frame_interval_ms: 33.3 }] {
        let plan = schedule_concurrency(&op, 60.0, 8.0, mode, 11)?;
        println!("{mode:?}");
        for t in &plan.tasks {
            let kind = if t.kind == TaskKind::Segment { "segment" } else { "flow" };
            println!("  {kind:<8} frame {:>2}  {:>7.1} .. {:>7.1} ms", t.position, t.start_ms, t.end_ms);
        }
        println!(
            "  makespan {:.1} ms, sequential {:.1} ms, saved {:.1} ms",
            plan.makespan_ms, plan.sequential_ms, plan.overlap_benefit_ms
        );
    }
    Ok(())
}
