use abp::{parse_uai, serialize_uai};
use abp_core::model::generate_grid;
use abp_core::FactorGraph;
use proptest::prelude::*;

fn graph() -> impl Strategy<Value = FactorGraph> {
    (1usize..5, prop::collection::vec(1usize..4, 5)).prop_flat_map(|(n, sizes)| {
        let sizes: Vec<usize> = sizes[..n].to_vec();
        let scope = prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(3)).prop_shuffle();
        let factor = scope.prop_flat_map({
            let sizes = sizes.clone();
            move |s: Vec<usize>| {
                let len: usize = s.iter().map(|&v| sizes[v]).product();
                (Just(s), prop::collection::vec(-30.0f64..30.0, len))
            }
        });
        (Just(sizes), prop::collection::vec(factor, 0..5))
    })
    .prop_filter_map("every variable needs a factor", |(sizes, mut factors)| {
        for i in 0..sizes.len() {
            factors.push((vec![i], vec![0.5; sizes[i]]));
        }
        FactorGraph::new(sizes, factors).ok()
    })
}

fn assert_same(a: &FactorGraph, b: &FactorGraph) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.domain_sizes(), b.domain_sizes());
    prop_assert_eq!(a.num_factors(), b.num_factors());
    for (f, g) in a.factors().iter().zip(b.factors()) {
        prop_assert_eq!(f.neighbors(), g.neighbors());
        for (x, y) in f.log_potentials().iter().zip(g.log_potentials()) {
            let (ex, ey) = (x.exp(), y.exp());
            prop_assert!((ex - ey).abs() <= 1e-12 * ex, "{} vs {}", ex, ey);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(g in graph()) {
        let back = parse_uai(&serialize_uai(&g)).unwrap();
        assert_same(&g, &back)?;
    }
}

#[test]
fn grids_round_trip() {
    let g = generate_grid(3, 4, 6, 1.5, 9).unwrap();
    let text = serialize_uai(&g);
    assert!(text.starts_with("MARKOV\n12\n"));
    let back = parse_uai(&text).unwrap();
    for (f, h) in g.factors().iter().zip(back.factors()) {
        for (x, y) in f.log_potentials().iter().zip(h.log_potentials()) {
            assert!((x.exp() - y.exp()).abs() <= 1e-12 * x.exp());
        }
    }
}

#[test]
fn tables_may_span_lines_and_trailing_data_is_rejected() {
    let g = parse_uai("MARKOV 2\n2 3\n2\n1 0\n2 0 1\n2 1.0\n2.0\n6\n1 1 1\n1 1 1\n").unwrap();
    assert_eq!(g.num_factors(), 2);
    assert!(parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n1 1\nextra\n").is_err());
}
