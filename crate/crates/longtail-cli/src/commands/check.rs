use std::path::Path;

use longtail::bench::{format_table, run_benchmark, BenchConfig};
use longtail::check::{gradcheck_suite, GRADCHECK_TOLERANCE};
use longtail::manifest::write_json_pretty;
use longtail::{Error, Result};
use serde_json::json;

use super::{emit_event, parse_list};

pub fn gradcheck(seed: u64, instances: usize) -> Result<()> {
    let results = gradcheck_suite(seed, instances)?;
    let mut all_passed = true;
    for r in &results {
        println!(
            "{:24} max relative error {:.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
        all_passed &= r.passed();
    }
    emit_event(
        "gradcheck_summary",
        json!({
            "seed": seed,
            "instances": instances,
            "tolerance": GRADCHECK_TOLERANCE,
            "results": results,
        }),
    );
    if all_passed {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gradient check exceeded tolerance {GRADCHECK_TOLERANCE}"
        )))
    }
}

pub fn bench_synthetic(seeds: &str, out: Option<&Path>) -> Result<()> {
    let cfg = BenchConfig {
        seeds: parse_list::<u64>(seeds, "seed")?,
        ..Default::default()
    };
    eprintln!(
        "bench-synthetic: {} classes, imbalance {}:1, seeds {:?}",
        cfg.num_classes, cfg.imbalance, cfg.seeds
    );
    let started = std::time::Instant::now();
    let report = run_benchmark(&cfg)?;
    let elapsed = started.elapsed();
    print!("{}", format_table(&report));
    if let Some(gap) = report.headline_gap_points() {
        println!();
        println!(
            "tail macro gap, scheduled ldam + adamw over cross-entropy + adam: {gap:+.2} points"
        );
        for (name, delta) in report.scheduler_gaps_points() {
            println!("scheduler effect on {name}: {delta:+.2} points overall");
        }
    }
    if let Some(path) = out {
        write_json_pretty(path, &report)?;
    }
    emit_event(
        "bench_summary",
        json!({
            "elapsed_secs": elapsed.as_secs_f64(),
            "rows": report.rows,
        }),
    );
    eprintln!("bench-synthetic: finished in {:.1}s", elapsed.as_secs_f64());
    Ok(())
}
