//! Wire-protocol behaviour against small shell plugins.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use mirror_nas::arch::{enumerate_blocks, BlockArch, LayerCode, OpKind};
use mirror_nas::eval::{external_evaluate, parallel_window, Cached, EvalError, Evaluator, ExternalEvaluator};

const ID: &str = r#"id=$(printf '%s' "$line" | sed 's/^{"id":\([0-9]*\),.*/\1/')"#;

fn sh(body: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), format!("while read -r line; do {ID}; {body}; done")]
}

fn block() -> BlockArch {
    BlockArch::from_codes([LayerCode::unary(OpKind::DWCONV3, 1)], 24).unwrap()
}

const SHORT: Duration = Duration::from_secs(5);

#[test]
fn echo_plugin_answers() {
    let cmd = sh(r#"printf '{"id":%s,"accuracy":42.5}\n' "$id""#);
    assert_eq!(external_evaluate(&block(), &cmd, SHORT).unwrap(), 42.5);
    let ev = ExternalEvaluator::new(cmd, SHORT);
    ev.check().unwrap();
    for _ in 0..5 {
        assert_eq!(ev.evaluate(&block()).unwrap(), 42.5);
    }
}

#[test]
fn request_line_reaches_plugin_verbatim() {
    // The plugin reports 1 when it sees the exact expected line, else 0.
    let expected = r#"{"id":1,"arch":{"layers":[{"op":"dwconv","k":3,"p":[1,0]}]}}"#;
    let cmd = sh(&format!(
        r#"if [ "$line" = '{expected}' ]; then a=1; else a=0; fi; printf '{{"id":%s,"accuracy":%s}}\n' "$id" "$a""#
    ));
    assert_eq!(external_evaluate(&block(), &cmd, SHORT).unwrap(), 1.0);
}

#[test]
fn foreign_ids_are_skipped() {
    let cmd = sh(r#"printf '{"id":999,"accuracy":1}\n'; printf '{"id":%s,"accuracy":77}\n' "$id""#);
    assert_eq!(external_evaluate(&block(), &cmd, SHORT).unwrap(), 77.0);
}

#[test]
fn error_response_is_rejection_and_process_survives() {
    let cmd = sh(r#"printf '{"id":%s,"error":"shape mismatch"}\n' "$id""#);
    let ev = ExternalEvaluator::new(cmd, SHORT);
    for _ in 0..3 {
        match ev.evaluate(&block()) {
            Err(EvalError::Rejected(msg)) => assert_eq!(msg, "shape mismatch"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn silent_plugin_times_out() {
    let cmd = vec!["sh".into(), "-c".into(), "sleep 30".into()];
    let err = external_evaluate(&block(), &cmd, Duration::from_millis(200)).unwrap_err();
    assert_eq!(err, EvalError::Timeout(Duration::from_millis(200)));
}

#[test]
fn crashing_plugin_is_transport_error() {
    let cmd = vec!["sh".into(), "-c".into(), "read -r line; exit 3".into()];
    match external_evaluate(&block(), &cmd, SHORT) {
        Err(EvalError::Transport(msg)) => assert!(msg.contains('3'), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_line_is_protocol_error_with_raw_text() {
    let cmd = sh("echo 'not json'");
    match external_evaluate(&block(), &cmd, SHORT) {
        Err(EvalError::Protocol { line, .. }) => assert_eq!(line, "not json"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn broken_process_is_replaced() {
    // Every process answers exactly once, then exits.
    let cmd =
        vec!["sh".into(), "-c".into(), format!(r#"read -r line; {ID}; printf '{{"id":%s,"accuracy":12}}\n' "$id""#)];
    let ev = ExternalEvaluator::new(cmd, SHORT);
    assert_eq!(ev.evaluate(&block()).unwrap(), 12.0);
    // The pooled process has exited; the failure discards it ...
    assert!(ev.evaluate(&block()).is_err());
    // ... and the next request gets a fresh one.
    assert_eq!(ev.evaluate(&block()).unwrap(), 12.0);
}

struct Counting {
    calls: AtomicUsize,
}

impl Evaluator for Counting {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(2));
        Ok(arch.len() as f64)
    }
}

#[test]
fn cache_evaluates_each_block_once_even_concurrently() {
    let pool = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];
    let blocks: Vec<BlockArch> = enumerate_blocks(2, &pool).collect();
    let mut requests = blocks.clone();
    requests.extend(blocks.iter().cloned());
    requests.extend(blocks.iter().rev().cloned());
    let cached = Cached::new(Counting { calls: AtomicUsize::new(0) });
    let results = parallel_window(&cached, &requests, 4);
    assert_eq!(results.len(), requests.len());
    for (i, r) in &results {
        assert_eq!(*r, Ok(requests[*i].len() as f64));
    }
    assert_eq!(cached.underlying_calls(), blocks.len());
    assert_eq!(cached.inner().calls.load(Ordering::SeqCst), blocks.len());
}

#[test]
fn window_of_one_is_in_order_and_wider_windows_cover_everything() {
    let pool = [OpKind::DWCONV3, OpKind::IDENTITY];
    let blocks: Vec<BlockArch> = enumerate_blocks(3, &pool).collect();
    let ev = Counting { calls: AtomicUsize::new(0) };
    let serial = parallel_window(&ev, &blocks, 1);
    assert_eq!(serial.iter().map(|(i, _)| *i).collect::<Vec<_>>(), (0..blocks.len()).collect::<Vec<_>>());
    for window in [2, 3, 64] {
        let mut idx: Vec<usize> = parallel_window(&ev, &blocks, window).into_iter().map(|(i, _)| i).collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..blocks.len()).collect::<Vec<_>>());
    }
}
