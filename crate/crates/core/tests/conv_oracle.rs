//! conv2d_forward against a direct nested-loop convolution.

mod oracles;

#[test]
fn conv_matches_direct_loops() {
    let check = oracles::conv_oracle(50, 7);
    println!("{check}");
    assert!(check.passed(), "{check}");
}

#[test]
fn direct_conv_hand_example() {
    // 3x3 single channel, 2x2 all-ones kernel, stride 1: window sums.
    let x: Vec<f64> = (1..=9).map(f64::from).collect();
    let out = oracles::direct_conv(&x, [1, 3, 3, 1], &[1.0; 4], [2, 2, 1, 1], &[0.5], 1);
    assert_eq!(out, vec![12.5, 16.5, 24.5, 28.5]);
}
