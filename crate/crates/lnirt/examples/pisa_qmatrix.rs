//! Inspect the shipped PISA 2012 computer-based mathematics Q-matrix and the
//! effective loading matrices each structure derives from it.
//!
//!     cargo run --example pisa_qmatrix

use lnirt::model::{effective_q, ModelStructure};

fn main() {
    let q = lnirt::io::pisa_qmatrix();
    println!(
        "{} items x {} dimensions ({})",
        q.n_items(),
        q.n_dims(),
        q.dim_labels().join(", ")
    );
    for (i, id) in q.item_ids().iter().enumerate() {
        let row: Vec<&str> = (0..q.n_dims())
            .map(|k| if q.entries()[(i, k)] == 1.0 { "1" } else { "." })
            .collect();
        println!("{id:<10} {}", row.join(" "));
    }
    for structure in [
        ModelStructure::UaUs,
        ModelStructure::MaUs,
        ModelStructure::MaMs,
    ] {
        let (qa, qs) = effective_q(structure, &q);
        println!(
            "{}: ability loads {} dimension(s), speed loads {}",
            structure,
            qa.ncols(),
            qs.ncols()
        );
    }
}
