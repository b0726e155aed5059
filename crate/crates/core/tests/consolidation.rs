use proptest::prelude::*;
use relocl_core::clcore::{
    consolidation_gradient, consolidation_loss, consolidation_on_tape, ConsolidationAnchor,
    FisherDiagonal,
};
use relocl_core::numcore::{Tape, Tensor};

fn anchor(theta: Vec<f64>, fisher: Vec<f64>) -> ConsolidationAnchor<f64> {
    ConsolidationAnchor::new(theta, FisherDiagonal { values: fisher }).unwrap()
}

fn triples() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.0..3.0f64, n),
            0.0..500.0f64,
        )
    })
}

proptest! {
    #[test]
    fn closed_form_gradient_matches_reverse_mode((theta, prev, fisher, lambda) in triples()) {
        let a = anchor(prev, fisher);
        let closed = consolidation_gradient(&theta, &a, lambda).unwrap();
        let mut tape = Tape::<f64>::new();
        // split the parameters into two tensors to exercise the per-tensor layout
        let cut = theta.len() / 2;
        let vars = [&theta[..cut], &theta[cut..]]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| tape.param(Tensor::new(vec![s.len()], s.to_vec()).unwrap()).unwrap())
            .collect::<Vec<_>>();
        let loss = consolidation_on_tape(&mut tape, &vars, &a, lambda).unwrap();
        let grads = tape.gradient(loss, &vars).unwrap();
        let auto: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        for (c, g) in closed.iter().zip(&auto) {
            prop_assert!((c - g).abs() < 1e-10, "{c} vs {g}");
        }
        let direct = consolidation_loss(&theta, &a, lambda).unwrap();
        prop_assert!((tape.value(loss).item() - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn loss_is_non_negative_and_zero_at_the_anchor((theta, prev, fisher, lambda) in triples()) {
        let a = anchor(prev.clone(), fisher);
        prop_assert!(consolidation_loss(&theta, &a, lambda).unwrap() >= 0.0);
        prop_assert_eq!(consolidation_loss(&prev, &a, lambda).unwrap(), 0.0);
        prop_assert_eq!(consolidation_loss(&theta, &a, 0.0).unwrap(), 0.0);
    }
}

#[test]
fn length_mismatch_is_an_error() {
    let a = anchor(vec![0.0; 3], vec![1.0; 3]);
    assert!(consolidation_loss(&[0.0; 2], &a, 1.0).is_err());
    assert!(consolidation_gradient(&[0.0; 4], &a, 1.0).is_err());
}
