use std::fmt::Write;

use super::graph::SceneGraph;
use super::rules::RuleSet;

const EXISTING_COLOR: &str = "palegreen";
const EXISTING_EDGE_COLOR: &str = "forestgreen";
const GENERATED_COLOR: &str = "lightblue";

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Graphviz text for a scene graph. Nodes below `existing_count` and the
/// edges between them are drawn green.
pub fn graph_to_dot(graph: &SceneGraph, rules: &RuleSet, existing_count: usize) -> String {
    let mut out = String::from("digraph scene {\n  node [shape=box, style=filled];\n");
    for (i, &label) in graph.labels().iter().enumerate() {
        let name = rules.document().object_classes.get(label).map_or("?", String::as_str);
        let color = if i < existing_count { EXISTING_COLOR } else { GENERATED_COLOR };
        let _ = writeln!(out, "  n{i} [label={}, fillcolor={color}];", quote(name));
    }
    for (i, j, r) in graph.edges() {
        let name = rules.document().relation_classes.get(r).map_or("?", String::as_str);
        let color = if i < existing_count && j < existing_count {
            format!(", color={EXISTING_EDGE_COLOR}, fontcolor={EXISTING_EDGE_COLOR}")
        } else {
            String::new()
        };
        let _ = writeln!(out, "  n{i} -> n{j} [label={}{color}];", quote(name));
    }
    out.push_str("}\n");
    out
}
