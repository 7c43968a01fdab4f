//! Computes the three topology profiles used for template comparison —
//! node strength, Laplacian centrality, and information centrality — on a
//! weighted graph small enough to sanity-check by hand.
//!
//! Run with: cargo run --example graph_centralities

use cbtlearn::dgn::Cbt;
use cbtlearn::eval::{
    information_centrality, laplacian_centrality, node_strength, topology_vectors,
};
use cbtlearn::linalg::Matrix;
use cbtlearn::Result;

fn main() -> Result<()> {
    // A weighted path 0 - 1 - 2 - 3 with a heavier middle edge; the middle
    // nodes should dominate every centrality.
    let mut w = Matrix::zeros(4, 4);
    for (i, j, v) in [(0usize, 1usize, 1.0f64), (1, 2, 2.0), (2, 3, 1.0)] {
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    let cbt = Cbt::new(w)?;

    println!("node strength:          {:?}", node_strength(&cbt));
    println!("laplacian centrality:   {:?}", laplacian_centrality(&cbt)?);
    println!(
        "information centrality: {:?}",
        information_centrality(&cbt)?
    );

    // The unit 3-path has closed-form information centralities (1, 1.5, 1).
    let mut path3 = Matrix::zeros(3, 3);
    for (i, j) in [(0usize, 1usize), (1, 2)] {
        path3[(i, j)] = 1.0;
        path3[(j, i)] = 1.0;
    }
    let info = information_centrality(&Cbt::new(path3)?)?;
    println!("\nunit 3-path information centrality: {info:?} (exactly 1, 1.5, 1)");
    assert!((info[0] - 1.0).abs() < 1e-12 && (info[1] - 1.5).abs() < 1e-12);

    // The same profiles as one bundle-ready vector set for a template.
    let topo = topology_vectors(&cbt)?;
    println!(
        "\ntemplate profile lengths: strength {}, laplacian {}, information {}",
        topo.node_strength.len(),
        topo.laplacian_centrality.len(),
        topo.information_centrality.len()
    );
    Ok(())
}
