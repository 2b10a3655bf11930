use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use crate::arch::BlockArch;

use super::{EvalError, Evaluator};

/// Evaluates `archs` with at most `window` evaluations in flight and hands
/// each `(index, result)` to `on_result` in completion order. With
/// `window == 1` everything runs on the calling thread, in input order.
pub fn parallel_window_with<E, F>(evaluator: &E, archs: &[BlockArch], window: usize, mut on_result: F)
where
    E: Evaluator + ?Sized,
    F: FnMut(usize, Result<f64, EvalError>),
{
    assert!(window >= 1, "evaluation window must be at least 1");
    if window == 1 || archs.len() <= 1 {
        for (i, arch) in archs.iter().enumerate() {
            on_result(i, evaluator.evaluate(arch));
        }
        return;
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|scope| {
        for _ in 0..window.min(archs.len()) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= archs.len() {
                    break;
                }
                if tx.send((i, evaluator.evaluate(&archs[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            on_result(i, result);
        }
    });
}

/// Collecting form of [`parallel_window_with`].
pub fn parallel_window<E: Evaluator + ?Sized>(
    evaluator: &E,
    archs: &[BlockArch],
    window: usize,
) -> Vec<(usize, Result<f64, EvalError>)> {
    let mut out = Vec::with_capacity(archs.len());
    parallel_window_with(evaluator, archs, window, |i, r| out.push((i, r)));
    out
}
