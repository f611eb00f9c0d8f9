//! Writes the synthetic overlap-labelled corpus as a JSONL dataset.
//!
//! cargo run -p grader-llm --example synthetic -- data.jsonl [items] [seed]

use grader_core::dataset::write_dataset;
use grader_llm::synthetic::{synthetic_corpus, SyntheticConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first() else {
        eprintln!("usage: synthetic OUT.jsonl [items] [seed]");
        std::process::exit(1);
    };
    let mut cfg = SyntheticConfig::default();
    if let Some(n) = args.get(1) {
        cfg.items = n.parse().expect("items must be a number");
    }
    if let Some(s) = args.get(2) {
        cfg.seed = s.parse().expect("seed must be a number");
    }
    let items = synthetic_corpus(&cfg);
    write_dataset(&items, out).expect("write dataset");
    println!("{} items -> {out}", items.len());
}
