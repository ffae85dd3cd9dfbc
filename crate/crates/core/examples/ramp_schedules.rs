//! The tabulated ramps, sampled over time.
//!
//! `cargo run --release --example ramp_schedules`

use rydsim::schedule::{build_ramp, RampParams};
use rydsim::units::angular_to_mhz;

fn main() -> rydsim::Result<()> {
    let ramps = [
        ("detuning scan, delta_final = 2 MHz", RampParams::detuning_scan(2.0)),
        ("duration scan, t_sweep = 1.3 us", RampParams::duration_scan(1.3)),
        ("time trace", RampParams::time_trace()),
    ];
    for (name, params) in ramps {
        let s = build_ramp(&params)?;
        println!("{name}: t_tot = {:.2} us", s.total_duration());
        println!("   t(us)  Omega/2pi(MHz)  delta/2pi(MHz)");
        let n = 8;
        for i in 0..=n {
            let t = s.total_duration() * i as f64 / n as f64;
            let d = s.evaluate(t)?;
            println!("  {t:6.3}  {:>14.3}  {:>14.3}", angular_to_mhz(d.omega), angular_to_mhz(d.delta));
        }
        println!();
    }

    // Stopping a ramp early ends the schedule at the stop time.
    let stopped = build_ramp(&RampParams::time_trace())?.stopped_at(0.6)?;
    let last = stopped.evaluate(stopped.duration())?;
    println!(
        "time trace stopped at {} us (full ramp {:.2} us): last Omega/2pi = {:.3} MHz, delta/2pi = {:.3} MHz",
        stopped.duration(),
        stopped.total_duration(),
        angular_to_mhz(last.omega),
        angular_to_mhz(last.delta)
    );
    Ok(())
}
