use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::arch::{canonical_serialize, BlockArch};

use super::{EvalError, Evaluator};

type Slot = Arc<Mutex<Option<f64>>>;

/// Memoizes an evaluator by canonical serialization. Concurrent requests for
/// the same key wait for the first one, so each key is evaluated at most once
/// unless the evaluation fails (failures are never cached).
pub struct Cached<E> {
    inner: E,
    slots: Mutex<HashMap<String, Slot>>,
    calls: AtomicUsize,
}

impl<E: Evaluator> Cached<E> {
    pub fn new(inner: E) -> Self {
        Cached { inner, slots: Mutex::new(HashMap::new()), calls: AtomicUsize::new(0) }
    }

    /// Number of evaluations forwarded to the wrapped evaluator.
    pub fn underlying_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Evaluator> Evaluator for Cached<E> {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        let key = canonical_serialize(arch);
        let slot = self.slots.lock().expect("cache lock").entry(key).or_default().clone();
        let mut value = slot.lock().expect("slot lock");
        if let Some(v) = *value {
            return Ok(v);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let v = self.inner.evaluate(arch)?;
        *value = Some(v);
        Ok(v)
    }
}
