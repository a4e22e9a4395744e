//! The experimental protocol around the pipeline: synthetic datasets,
//! held-out evaluation, the zero-shot baseline and reporting.

mod evaluate;
mod report;
mod synth;
mod zero_shot;

pub use evaluate::{evaluate_on_test, TEST_INPUT_PATH, TEST_OUTPUT_PATH};
pub use report::{
    build_tables, collect_runs, compare_methods, format_metric, format_percent, write_report,
    ReportTable, RunSummary, TableKind, NOT_AVAILABLE,
};
pub use synth::{
    generate_synthetic, positive_count, reverse_complement, SynthError, SyntheticKind,
    SyntheticOutput, SyntheticSpec, LABEL_COLUMN, MAX_REJECTION_TRIES, NEGATIVE, POSITIVE,
};
pub use zero_shot::{
    extract_code_block, zero_shot_prompt, zero_shot_run, INFERENCE_PATH, SOLUTION_PATH,
};

/// Runs `job(0..n)` on `n` threads and returns the results in index order.
pub fn run_parallel<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|i| {
                let job = &job;
                scope.spawn(move || job(i))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|panic| std::panic::resume_unwind(panic))
            })
            .collect()
    })
}
