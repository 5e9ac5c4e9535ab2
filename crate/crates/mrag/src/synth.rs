//! Synthetic evaluation suites with planted answers and a matching mock
//! script.
//!
//! Every query owns a group of `group` articles that share the query's
//! image, so all of them land near the top of the ranking in an order set by
//! the text embeddings. Exactly one article per group is gold; it alone
//! carries the planted answer and is marked relevant in the script. Extra
//! distractor articles have their own images, and a few have none.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mrag_core::corpus::{Article, QueryCase, Section};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::mock::MockScript;

const WORDS: &[&str] = &[
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "granite", "harbor", "iris", "juniper", "kestrel",
    "lagoon", "meadow", "nectar", "obsidian", "prairie", "quartz", "ravine", "sorrel", "tundra", "umber",
    "valley", "willow", "yarrow", "zephyr", "lantern", "bridge", "tower", "mosaic", "orchard", "canyon", "glacier",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthParams {
    pub queries: usize,
    /// Articles sharing each query's image, gold included.
    pub group: usize,
    pub distractors: usize,
    /// Distractors without any image.
    pub imageless: usize,
    pub categories: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            queries: 50,
            group: 5,
            distractors: 40,
            imageless: 3,
            categories: 4,
            embed_dim: 64,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub articles: Vec<Article>,
    pub queries: Vec<QueryCase>,
    pub script: MockScript,
    /// Article ids of each query's group, in generation order.
    pub groups: BTreeMap<String, Vec<String>>,
}

fn words(rng: &mut Xoshiro256PlusPlus, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn article(rng: &mut Xoshiro256PlusPlus, id: String, images: Vec<String>, category: String) -> Article {
    Article {
        title: format!("Article {id}"),
        sections: vec![
            Section {
                heading: "Overview".into(),
                text: words(rng, 24),
            },
            Section {
                heading: "History".into(),
                text: words(rng, 16),
            },
        ],
        image_refs: images,
        category,
        id,
    }
}

pub fn generate(p: &SynthParams) -> Suite {
    assert!(p.group >= 1 && p.categories >= 1 && p.imageless <= p.distractors);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(p.seed);
    let mut articles = Vec::new();
    let mut queries = Vec::new();
    let mut groups = BTreeMap::new();
    let mut script = MockScript {
        embed_seed: p.seed,
        embed_dim: p.embed_dim,
        ..MockScript::default()
    };
    let category = |rng: &mut Xoshiro256PlusPlus| format!("cat{}", rng.gen_range(0..p.categories));
    for i in 0..p.queries {
        let qid = format!("q{i:04}");
        let image = format!("img/q{i:04}.jpg");
        let gold_slot = rng.gen_range(0..p.group);
        let mut members = Vec::new();
        for j in 0..p.group {
            let id = format!("g{i:04}-{j}");
            let cat = category(&mut rng);
            articles.push(article(&mut rng, id.clone(), vec![image.clone()], cat));
            members.push(id);
        }
        let gold = members[gold_slot].clone();
        let answer = format!("{} {} {i}", WORDS.choose(&mut rng).unwrap(), WORDS.choose(&mut rng).unwrap());
        script.relevance.entry(qid.clone()).or_default().insert(gold.clone(), true);
        script.answers.insert(gold.clone(), answer.clone());
        let cat = articles.iter().find(|a| a.id == gold).unwrap().category.clone();
        queries.push(QueryCase {
            id: qid.clone(),
            image_ref: image,
            question: format!("What is the {} shown in picture {i}?", WORDS.choose(&mut rng).unwrap()),
            reference_answers: vec![answer],
            gold_article_ids: vec![gold],
            category: cat,
        });
        groups.insert(qid, members);
    }
    for j in 0..p.distractors {
        let images = if j < p.imageless {
            vec![]
        } else {
            vec![format!("img/x{j:04}.jpg")]
        };
        let cat = category(&mut rng);
        articles.push(article(&mut rng, format!("x{j:04}"), images, cat));
    }
    Suite {
        articles,
        queries,
        script,
        groups,
    }
}

impl Suite {
    /// Write `articles.jsonl`, `queries.jsonl`, `script.json` and a recipe
    /// `pipeline.cfg` (listwise re-ranking, top-1 re-ranked context, agent,
    /// one judge) into `dir`. Returns the config path.
    pub fn write(&self, dir: &Path, gateway_url: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        crate::jsonl::write(&dir.join("articles.jsonl"), &self.articles).map_err(std::io::Error::other)?;
        crate::jsonl::write(&dir.join("queries.jsonl"), &self.queries).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("script.json"), serde_json::to_string_pretty(&self.script)? + "\n")?;
        let mut cfg = String::new();
        let _ = writeln!(cfg, "articles = articles.jsonl");
        let _ = writeln!(cfg, "queries = queries.jsonl");
        let _ = writeln!(cfg, "output_dir = run");
        let _ = writeln!(cfg, "modality = IQ:IT");
        let _ = writeln!(cfg, "k = 10");
        let _ = writeln!(cfg, "rerank = listwise");
        let _ = writeln!(cfg, "window = 5");
        let _ = writeln!(cfg, "condition = retrieved:k=1,reranked");
        let _ = writeln!(cfg, "agent = true");
        let _ = writeln!(cfg, "judges = judge");
        let _ = writeln!(cfg, "markers = true");
        let _ = writeln!(cfg, "gateway.url = {gateway_url}");
        let path = dir.join("pipeline.cfg");
        std::fs::write(&path, cfg)?;
        Ok(path)
    }
}
