//! Parse assorted free-form answers into ranked class lists, showing the
//! full / partial / fallback grades and the padding used for short lists.
//!
//! ```bash
//! cargo run --example parse_answers
//! ```

use tape::graph::LabelSpace;
use tape::parse::{pad_ranked, parse_answer, PadStrategy};

fn main() {
    let arxiv = LabelSpace::arxiv_cs();
    let pubmed = LabelSpace::pubmed();

    let samples: Vec<(&str, &LabelSpace, usize)> = vec![
        (
            "cs.CV, cs.LG, cs.AI, cs.IR, cs.CL\n\nThe paper describes a convolutional model for scene text.",
            &arxiv,
            5,
        ),
        (
            "Type 2 diabetes, Type 1 diabetes\n\nThe study uses db/db mice, a common model of type 2 diabetes.",
            &pubmed,
            3,
        ),
        (
            "This is tricky.\nOn balance the work belongs to cs.RO with some cs.AI flavor.",
            &arxiv,
            5,
        ),
        ("I cannot determine the category from this text.", &arxiv, 5),
    ];

    for (raw, space, k) in samples {
        let record = parse_answer(0, raw, space, k);
        let names: Vec<&str> = record.ranked.iter().map(|&c| space.name(c)).collect();
        println!("--- raw ---\n{raw}");
        println!("status: {:?}", record.parse_status);
        println!("ranked: {names:?}");
        let padded = pad_ranked(
            &record,
            k,
            PadStrategy::Absent {
                index: space.num_classes(),
            },
        );
        println!("padded to k={k}: {padded:?} (index {} = absent)\n", space.num_classes());
    }
}
