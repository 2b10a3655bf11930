use std::fmt::Write;

use super::{BlockArch, PRED_INPUT};

fn node_name(code: usize) -> String {
    if code == PRED_INPUT {
        "input".to_string()
    } else {
        format!("l{}", code - 1)
    }
}

/// Graphviz digraph of a block: the input node, one node per layer, and the
/// implicit output concat fed by every successor-less layer.
pub fn to_dot(arch: &BlockArch) -> String {
    let mut out = String::from("digraph block {\n  rankdir=TB;\n  input [label=\"input\"];\n");
    for layer in arch.layers() {
        let label = match layer.op.kernel() {
            0 => layer.op.category().name().to_string(),
            k => format!("{} {}", layer.op.category().name(), k),
        };
        let _ = writeln!(out, "  l{} [label=\"{}\"];", layer.position, label);
    }
    out.push_str("  output [label=\"output concat\"];\n");
    for layer in arch.layers() {
        for p in layer.preds() {
            let _ = writeln!(out, "  {} -> l{};", node_name(p), layer.position);
        }
    }
    for pos in arch.output_layers() {
        let _ = writeln!(out, "  l{} -> output;", pos);
    }
    out.push_str("}\n");
    out
}
