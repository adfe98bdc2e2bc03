//! Generate a synthetic text-attributed graph and save it as a dataset
//! directory in the standard on-disk formats.
//!
//! ```bash
//! cargo run --example make_synthetic
//! ```

use tape::graph::save_tag_dataset;
use tape::synth::make_synthetic_tag;

fn main() {
    let graph = make_synthetic_tag(600, 4, 0.8, 6, 1).expect("valid parameters");
    println!(
        "generated {} nodes, {} classes, {} undirected edges",
        graph.num_nodes(),
        graph.num_classes(),
        graph.adjacency().nnz() / 2
    );
    println!("measured edge homophily: {:.3}", graph.edge_homophily());
    println!(
        "splits: {} train / {} val / {} test",
        graph.splits().train.len(),
        graph.splits().val.len(),
        graph.splits().test.len()
    );
    let node = graph.text(0);
    println!("sample node 0 title: {:?}", node.title);
    println!("sample node 0 abstract: {:?}", node.abstract_text);

    let out = std::env::temp_dir().join("tape-examples/synth");
    save_tag_dataset(&graph, &out).expect("writable temp dir");
    println!("dataset written to {}", out.display());
}
