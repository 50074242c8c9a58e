//! Multi-threaded rejection sampling.
//!
//! Workers claim block indices from a shared counter and send finished
//! blocks back; the caller merges them strictly in block order, so the
//! result is identical to `rejection_sample` for any thread count.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc;
use std::thread;

use mentalese_core::eval::EvalConfig;
use mentalese_core::infer::{BlockResult, InferenceError, Merger, PosteriorSamples, Program, Sampler, SamplingBudget};

/// Stack size for threads that run the interpreter.
pub const EVAL_STACK_BYTES: usize = 256 << 20;

/// Runs `f` on a scoped thread with an interpreter-sized stack.
pub fn on_eval_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    thread::scope(|s| {
        thread::Builder::new()
            .name("mentalese-eval".into())
            .stack_size(EVAL_STACK_BYTES)
            .spawn_scoped(s, f)
            .expect("spawn evaluation thread")
            .join()
            .unwrap_or_else(|p| std::panic::resume_unwind(p))
    })
}

/// Worker count when the budget does not set one.
pub fn default_threads() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Blocks a worker may run ahead of the merge point.
const LOOKAHEAD_PER_THREAD: u32 = 4;

pub fn parallel_rejection_sample(program: &Program, budget: &SamplingBudget, seed: u64, config: EvalConfig) -> Result<PosteriorSamples, InferenceError> {
    budget.validate()?;
    let threads = budget.parallel_chains.unwrap_or_else(default_threads).max(1);
    let blocks = u32::try_from(budget.block_count()).unwrap_or(u32::MAX);
    // Compile once up front so compile errors surface the same way as in
    // the sequential path.
    let condition_count = Sampler::new(program, config).map_err(InferenceError::Evaluation)?.condition_count();

    let next = AtomicU32::new(0);
    let merged = AtomicU32::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<BlockResult>();
    let mut merger = Merger::new(*budget, condition_count);

    thread::scope(|scope| {
        for _ in 0..threads {
            let tx = tx.clone();
            let (next, merged, stop) = (&next, &merged, &stop);
            thread::Builder::new()
                .stack_size(EVAL_STACK_BYTES)
                .spawn_scoped(scope, move || {
                    let Ok(mut sampler) = Sampler::new(program, config) else { return };
                    let window = LOOKAHEAD_PER_THREAD * threads as u32;
                    loop {
                        if stop.load(Ordering::Relaxed) {
                            return;
                        }
                        // Claim a block only within the lookahead window.
                        let block = next.load(Ordering::Acquire);
                        if block >= blocks {
                            return;
                        }
                        if block >= merged.load(Ordering::Acquire).saturating_add(window) {
                            thread::yield_now();
                            continue;
                        }
                        if next.compare_exchange(block, block + 1, Ordering::AcqRel, Ordering::Relaxed).is_err() {
                            continue;
                        }
                        if tx.send(sampler.run_block(seed, block, budget)).is_err() {
                            return;
                        }
                    }
                })
                .expect("spawn sampling thread");
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        while !merger.is_done() && merger.next_block() < blocks {
            let want = merger.next_block();
            let result = match pending.remove(&want) {
                Some(r) => r,
                None => match rx.recv() {
                    Ok(r) => {
                        pending.insert(r.block, r);
                        continue;
                    }
                    Err(_) => break,
                },
            };
            merger.push(result);
            merged.store(merger.next_block(), Ordering::Release);
        }
        stop.store(true, Ordering::Relaxed);
    });
    merger.finish(program, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mentalese_core::infer::rejection_sample;
    use mentalese_core::sexpr::parse_one;
    use mentalese_core::worlds::load_world;

    fn rematch_program() -> Program {
        let world = load_world("tug-of-war").unwrap();
        let mut p = world.program();
        p.conditions = ["(won-against '(josh) '(lio))", "(won-against '(josh) '(alex))", "(not (won-against '(lio alex) '(josh)))"]
            .iter()
            .map(|c| parse_one(c).unwrap())
            .collect();
        p.query = Some(parse_one("(won-against '(gabe) '(josh))").unwrap());
        p
    }

    #[test]
    fn matches_sequential_for_any_thread_count() {
        let program = rematch_program();
        let mut budget = SamplingBudget::new(300, 100_000);
        let reference = rejection_sample(&program, &budget, 9, EvalConfig::default()).unwrap();
        for threads in [1, 2, 3, 8] {
            budget.parallel_chains = Some(threads);
            let got = parallel_rejection_sample(&program, &budget, 9, EvalConfig::default()).unwrap();
            assert_eq!(got, reference, "threads = {}", threads);
        }
    }

    #[test]
    fn zero_acceptance_and_errors_match_sequential() {
        let mut program = rematch_program();
        program.conditions = vec![parse_one("(> (strength 'josh) 1000)").unwrap()];
        let budget = SamplingBudget { target_accepted: 5, max_attempts: 5000, parallel_chains: Some(3) };
        let seq = rejection_sample(&program, &budget, 1, EvalConfig::default());
        assert!(matches!(seq, Err(InferenceError::ZeroAcceptance(_))));
        assert_eq!(parallel_rejection_sample(&program, &budget, 1, EvalConfig::default()), seq);

        program.conditions = vec![parse_one("(car '())").unwrap()];
        let seq = rejection_sample(&program, &budget, 1, EvalConfig::default());
        assert!(matches!(seq, Err(InferenceError::Evaluation(_))));
        assert_eq!(parallel_rejection_sample(&program, &budget, 1, EvalConfig::default()), seq);
    }
}
