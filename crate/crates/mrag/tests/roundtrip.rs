//! Serialization round trips for the on-disk formats.

use std::collections::BTreeMap;

use mrag::pipeline::Manifest;
use mrag::records::RunLine;
use mrag_core::modality::ModalityConfig;
use mrag_core::rank::RankedEntry;
use proptest::prelude::*;

proptest! {
    #[test]
    fn manifest_render_parse(
        config in proptest::collection::btree_map("[a-z_.]{1,12}", "[ -~]{0,20}", 0..8),
        artifacts in proptest::collection::btree_map("[a-z_]{1,10}\\.jsonl", "[0-9a-f]{64}", 0..8),
    ) {
        let config: String = config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let m = Manifest { config, artifacts };
        prop_assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    }

    #[test]
    fn run_lines_survive_jsonl(
        runs in proptest::collection::vec(
            ("q[0-9]{1,4}", proptest::collection::vec(("[a-z0-9\"\\\\ ]{1,8}", -1e6f64..1e6), 0..6)),
            0..6,
        ),
    ) {
        let runs: Vec<RunLine> = runs
            .into_iter()
            .map(|(q, es)| RunLine {
                query_id: q,
                config: ModalityConfig::default(),
                entries: es.into_iter().map(|(a, s)| RankedEntry { article_id: a, score: s }).collect(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        mrag::jsonl::write(&path, &runs).unwrap();
        let back: Vec<RunLine> = mrag::jsonl::read(&path).unwrap();
        prop_assert_eq!(back, runs);
    }
}

#[test]
fn manifest_rejects_other_text() {
    assert!(Manifest::parse("").is_err());
    assert!(Manifest::parse("[config]\na = 1\n").is_err());
    assert!(Manifest::parse("[config]\n[artifacts]\nnohash\n").is_err());
    let empty = Manifest {
        config: String::new(),
        artifacts: BTreeMap::new(),
    };
    assert_eq!(Manifest::parse(&empty.render()).unwrap(), empty);
}
