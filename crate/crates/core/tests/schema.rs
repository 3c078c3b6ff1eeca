use std::collections::BTreeSet;

use plkg_core::ontology::{
    diff_schemas, load_schema, validate_schema, CulturalOrigin, NodeKind, Schema, CANONICAL_SCHEMA_JSON,
};
use proptest::prelude::*;

fn node_by_name<'a>(schema: &'a Schema, name_zh: &str) -> &'a plkg_core::SchemaNode {
    let hits = schema.find_nodes(|n| n.name_zh == name_zh);
    assert_eq!(hits.len(), 1, "{name_zh}");
    hits[0]
}

fn child_names(schema: &Schema, parent: &plkg_core::SchemaNode) -> Vec<String> {
    schema.children(&parent.id).iter().map(|n| n.name_zh.clone()).collect()
}

#[test]
fn census_counts() {
    let schema = Schema::canonical();
    assert!(validate_schema(&schema).is_empty());
    assert_eq!(schema.dimensions().len(), 7);

    let comp = node_by_name(&schema, "构图生成");
    assert_eq!(schema.children(&comp.id).len(), 7);

    let balance = schema.get("comp.balance").unwrap();
    assert_eq!(child_names(&schema, balance), ["色彩平衡", "明暗平衡", "大小平衡", "动态平衡", "位置平衡"]);
    assert_eq!(child_names(&schema, node_by_name(&schema, "边缘清晰度")), ["硬边缘", "碎边缘", "虚边缘", "软边缘"]);
    assert_eq!(
        child_names(&schema, node_by_name(&schema, "笔触形态")),
        ["书写性笔触", "块面笔触", "点状笔触", "线性笔触"]
    );
    assert_eq!(child_names(&schema, node_by_name(&schema, "构成核心目标")), ["主题传递", "视觉平衡", "动线引导"]);
    assert_eq!(child_names(&schema, node_by_name(&schema, "主题传递")), ["叙事性", "抒情性"]);
    assert_eq!(child_names(&schema, node_by_name(&schema, "三大面")), ["亮部", "灰部", "暗部"]);
    assert_eq!(child_names(&schema, node_by_name(&schema, "五调子")), ["高光", "中间调", "明暗交界线", "反光", "投影"]);
}

#[test]
fn aerial_perspective_has_three_axes() {
    let schema = Schema::canonical();
    let keys: BTreeSet<String> =
        node_by_name(&schema, "空气透视").criteria.iter().map(|c| c.feature_key.to_string()).collect();
    assert_eq!(
        keys,
        BTreeSet::from(["hard_edge_fraction".into(), "mean_saturation".into(), "warm_cold_gradient".into()])
    );
}

#[test]
fn two_visual_balance_nodes() {
    let schema = Schema::canonical();
    let hits = schema.find_nodes(|n| n.name_zh == "视觉平衡");
    let ids: Vec<&str> = hits.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids, ["comp.balance", "comp.goal.balance"]);
}

#[test]
fn perspective_table_nodes() {
    let schema = Schema::canonical();
    let three = node_by_name(&schema, "三远法");
    assert_eq!(child_names(&schema, three), ["高远", "深远", "平远"]);
    assert_eq!(three.cultural_origin, CulturalOrigin::Chinese);
    assert_eq!(node_by_name(&schema, "一点透视").cultural_origin, CulturalOrigin::Western);
}

#[test]
fn canonical_file_round_trips() {
    let schema = load_schema(CANONICAL_SCHEMA_JSON.as_bytes()).unwrap();
    let text = schema.to_json_pretty();
    let back = load_schema(text.as_bytes()).unwrap();
    assert_eq!(back, schema);
    assert_eq!(
        serde_json::to_value(&back).unwrap(),
        serde_json::from_str::<serde_json::Value>(CANONICAL_SCHEMA_JSON).unwrap()
    );
}

#[test]
fn every_label_is_a_leaf_and_every_category_has_children() {
    let schema = Schema::canonical();
    for node in schema.nodes() {
        match node.kind {
            NodeKind::Label => assert!(schema.is_leaf(&node.id), "{}", node.id),
            NodeKind::Category | NodeKind::Dimension => assert!(!schema.is_leaf(&node.id), "{}", node.id),
        }
    }
}

proptest! {
    #[test]
    fn path_length_is_level(index in 0usize..199) {
        let schema = Schema::canonical();
        let node = &schema.nodes()[index % schema.nodes().len()];
        let path = schema.path_to_root(&node.id).unwrap();
        prop_assert_eq!(path.len(), node.level as usize);
        prop_assert_eq!(path.last().unwrap().kind, NodeKind::Dimension);
    }

    #[test]
    fn removing_a_leaf_is_a_single_removal(index in 0usize..199) {
        let old = Schema::canonical();
        let leaves: Vec<String> = old.nodes().iter().filter(|n| old.is_leaf(&n.id)).map(|n| n.id.clone()).collect();
        let victim = leaves[index % leaves.len()].clone();
        let (version, nodes, rules) = old.clone().into_parts();
        let nodes = nodes.into_iter().filter(|n| n.id != victim).collect();
        let new = Schema::from_parts(version, nodes, rules);
        let diff = diff_schemas(&old, &new);
        prop_assert_eq!(diff.removed, vec![victim]);
        prop_assert!(diff.added.is_empty() && diff.modified.is_empty());
    }

    #[test]
    fn descendants_are_exactly_nodes_with_ancestor(index in 0usize..199) {
        let schema = Schema::canonical();
        let node = &schema.nodes()[index % schema.nodes().len()];
        let desc: BTreeSet<&str> = schema.descendants(&node.id).unwrap().iter().map(|n| n.id.as_str()).collect();
        let brute: BTreeSet<&str> = schema
            .nodes()
            .iter()
            .filter(|n| schema.is_ancestor(&node.id, &n.id))
            .map(|n| n.id.as_str())
            .collect();
        prop_assert_eq!(desc, brute);
    }
}
