//! Activation patterns of a small ReLU network, the affine map of a region,
//! and numerical checks of the region lemmas.

use bbas::boxes::BoundingBox;
use bbas::geometry::{
    activation_pattern, first_layer_boundedness_check, hamming, mlp_forward, pattern_linear_map, verify_rank_one_lemma,
    DenseLayer, MlpSpec,
};
use nalgebra::DVector;

pub fn run_example() -> bbas::Result<()> {
    let net = MlpSpec::random(3, &[8, 8], Some(2), 42);
    let x = [0.2, -0.4, 1.0];
    let f = mlp_forward(&net, &x)?;
    let p = activation_pattern(&f.preactivations);
    let bits: String = p.bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
    println!("pattern {bits}");

    // Inside its region the network is x -> Ax + b.
    let (a, b) = pattern_linear_map(&net, &p)?;
    let y = a * DVector::from_column_slice(&x) + b;
    println!("network {:?}, affine map {:?}", f.output, y.as_slice());

    // Neighbouring regions differ by a rank-one update.
    let q = p.flipped(3);
    let r = verify_rank_one_lemma(&net, &p, &q)?;
    println!(
        "hamming {}, singular values of A'-A: {:?}",
        hamming(&p, &q),
        r.singular_values
    );

    // A box over first-layer preactivations has a bounded preimage iff W has full column rank.
    let square = MlpSpec {
        hidden: vec![DenseLayer {
            weights: vec![vec![1.0, 0.5], vec![-0.5, 1.0]],
            bias: vec![0.0, 0.0],
        }],
        head: None,
        seed: 0,
    };
    let unit = BoundingBox {
        lower: vec![-1.0, -1.0],
        upper: vec![1.0, 1.0],
        size: 1,
    };
    let bounded = first_layer_boundedness_check(&square, &unit, &[])?;
    println!(
        "full rank: bounded within radius {:.3}: {}",
        bounded.radius.unwrap(),
        bounded.passed
    );
    let mut flat = square.clone();
    flat.hidden[0].weights[1] = vec![2.0, 1.0];
    flat.hidden[0].weights[0] = vec![1.0, 0.5];
    let unbounded = first_layer_boundedness_check(&flat, &unit, &[])?;
    println!(
        "rank {}: region contains kernel points at radius 1000: {}",
        unbounded.rank, unbounded.passed
    );
    assert!(r.passed && bounded.passed && unbounded.passed);
    Ok(())
}

fn main() -> bbas::Result<()> {
    run_example()
}
