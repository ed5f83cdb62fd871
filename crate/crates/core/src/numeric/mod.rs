//! Dense tensors, reverse-mode differentiation and Adam.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{BnMode, Gradients, Tape, Var};
pub use tensor::{argmax, log_softmax_rows, matmul, softmax_rows, Tensor};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-3;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::uniform(&[r, c], 1.0, rng)
    }

    #[test]
    fn every_op_passes_gradcheck() {
        for (name, report) in crate::selfcheck::op_gradients(24).unwrap() {
            assert!(report.probes.len() >= 20, "{name}");
            assert!(report.passes(TOL), "{name}: {:e}", report.max_rel_error());
        }
    }

    #[test]
    fn segment_max_sum_gradient_marks_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_matrix(&mut rng, 9, 2);
        let ind = [0, 0, 1, 1, 1, 2, 2, 2, 2];
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let y = t.segment_max(xv, &ind, 3).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap().wrt(xv);
        // oracle: central differences of the plain per-segment max
        let f = |m: &Tensor| -> f64 {
            (0..3)
                .map(|k| {
                    (0..2)
                        .map(|j| {
                            (0..9).filter(|&i| ind[i] == k).map(|i| m.at(i, j)).fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum::<f64>()
                })
                .sum()
        };
        for p in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[p] += H;
            let mut minus = x.clone();
            minus.data_mut()[p] -= H;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
            assert!((numeric - g.data()[p]).abs() < 1e-6);
            assert!(g.data()[p] == 0.0 || g.data()[p] == 1.0);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(values in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let x = Tensor::matrix(3, 4, values).unwrap();
            let s = softmax_rows(&x).unwrap();
            for r in 0..3 {
                let row = s.row_slice(r);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn segment_max_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let x = rand_matrix(&mut rng, n, 3);
            let mut ind: Vec<usize> = (0..n).map(|i| i % 4).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let mut t = Tape::inference();
            let xv = t.constant(x.clone());
            let a = t.segment_max(xv, &ind, 4).unwrap();
            let rows: Vec<Vec<f64>> = perm.iter().map(|&p| x.row_slice(p).to_vec()).collect();
            let shuffled = Tensor::from_rows(&rows).unwrap();
            ind = perm.iter().map(|&p| ind[p]).collect();
            let sv = t.constant(shuffled);
            let b = t.segment_max(sv, &ind, 4).unwrap();
            prop_assert_eq!(t.value(a), t.value(b));
        }
    }
}
