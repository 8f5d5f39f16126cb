use genfil_core::binomial_filtration::{fiber_i, xi, xi_counting_formula};
use genfil_core::{
    arrow, conditional_expectation, expectation, make_drop_filtration, make_full_filtration, BernoulliParams,
    BinomialFiltration, Filtration, GridTime, Path, RandomVariable, EPS_MASS,
};
use proptest::prelude::*;

fn grid(step: u64, res: u32) -> GridTime {
    GridTime::new(step, res).unwrap()
}

fn filtration(res: u32, p: f64, window: Option<(u64, u64)>) -> BinomialFiltration {
    let params = BernoulliParams::constant(p).unwrap();
    match window {
        None => make_full_filtration(res, params),
        Some((a, b)) => make_drop_filtration(res, params, grid(a, res), grid(b, res)).unwrap(),
    }
}

fn scenario() -> impl Strategy<Value = (BinomialFiltration, u32)> {
    (1u32..=3, 0.05f64..0.95, any::<bool>(), 0u64..8, 0u64..8).prop_map(|(res, p, drop, a, b)| {
        let top = 1u64 << res;
        let (a, b) = ((a % top).min(b % top), (a % top).max(b % top));
        (filtration(res, p, drop.then_some((a, b))), res)
    })
}

fn rv(f: &BinomialFiltration, t: GridTime, values: &[f64]) -> RandomVariable<Path> {
    let space = f.space(t).unwrap();
    RandomVariable::from_fn(space, |p| values[p.index() % values.len()])
}

proptest! {
    #[test]
    fn tower_property(
        (f, res) in scenario(),
        values in prop::collection::vec(-50.0f64..50.0, 8),
        idx in prop::collection::vec(0u64..=8, 3),
    ) {
        let top = 1u64 << res;
        let mut idx: Vec<u64> = idx.into_iter().map(|i| i % (top + 1)).collect();
        idx.sort();
        let (s, u, t) = (grid(idx[0], res), grid(idx[1], res), grid(idx[2], res));
        let x = rv(&f, t, &values);
        let direct = conditional_expectation(&x, &f.morphism(arrow(s, t).unwrap()).unwrap()).unwrap();
        let inner = conditional_expectation(&x, &f.morphism(arrow(u, t).unwrap()).unwrap()).unwrap();
        let nested = conditional_expectation(&inner, &f.morphism(arrow(s, u).unwrap()).unwrap()).unwrap();
        for (a, b) in direct.values().iter().zip(nested.values()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!((expectation(&direct) - expectation(&x)).abs() < 1e-10);
    }

    #[test]
    fn linearity_and_constants(
        (f, res) in scenario(),
        xs in prop::collection::vec(-10.0f64..10.0, 8),
        ys in prop::collection::vec(-10.0f64..10.0, 8),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        c in -5.0f64..5.0,
    ) {
        let t = grid(1 << res, res);
        let s = grid((1 << res) / 2, res);
        let m = f.morphism(arrow(s, t).unwrap()).unwrap();
        let (x, y) = (rv(&f, t, &xs), rv(&f, t, &ys));
        let combined = conditional_expectation(&x.linear_combination(a, &y, b).unwrap(), &m).unwrap();
        let ex = conditional_expectation(&x, &m).unwrap();
        let ey = conditional_expectation(&y, &m).unwrap();
        for i in 0..combined.values().len() {
            prop_assert!((combined.values()[i] - a * ex.values()[i] - b * ey.values()[i]).abs() < 1e-10);
        }
        let constant = conditional_expectation(&RandomVariable::constant(m.source().clone(), c), &m).unwrap();
        let pushed = m.pushforward();
        for (i, w) in m.target().weights().iter().enumerate() {
            // E(c) = c times the fiber mass ratio
            prop_assert!((constant.values()[i] - c * pushed[i] / w).abs() < 1e-10);
        }
    }

    #[test]
    fn defining_identity_on_random_subsets(
        (f, res) in scenario(),
        values in prop::collection::vec(-10.0f64..10.0, 8),
        mask in any::<u64>(),
    ) {
        let t = grid(1 << res, res);
        let s = grid(1, res);
        let m = f.morphism(arrow(s, t).unwrap()).unwrap();
        let x = rv(&f, t, &values);
        let y = conditional_expectation(&x, &m).unwrap();
        let inside = |j: usize| mask >> j & 1 == 1;
        let lhs: f64 = (0..m.target().len()).filter(|&j| inside(j)).map(|j| y.values()[j] * m.target().weights()[j]).sum();
        let rhs: f64 = (0..m.source().len())
            .filter(|&i| inside(m.image_index(i)))
            .map(|i| x.values()[i] * m.source().weights()[i])
            .sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn xi_formula_on_fair_dropped_coins() {
    for res in 1..=3u32 {
        for p in [0.3, 0.5] {
            let top = 1u64 << res;
            let window = (top / 2, top / 2);
            let mut params = BernoulliParams::constant(p).unwrap();
            params = params.with_override(grid(window.0, res), 0.5).unwrap();
            let full = make_full_filtration(res, params.clone());
            let drop = make_drop_filtration(res, params, grid(window.0, res), grid(window.1, res)).unwrap();
            for f in [&full, &drop] {
                for k in 0..top {
                    let (t, next) = (grid(k, res), grid(k + 1, res));
                    let step = f.morphism(arrow(t, next).unwrap()).unwrap();
                    let e = conditional_expectation(&xi(f, next).unwrap(), &step).unwrap();
                    for (j, (w, mass)) in step.target().iter().enumerate() {
                        if mass <= EPS_MASS {
                            continue;
                        }
                        let formula = xi_counting_formula(w, &step, f.params().p_at(next));
                        assert!((formula - e.values()[j]).abs() < 1e-12, "{res} {p} {t} {w}");
                    }
                }
            }
        }
    }
}

#[test]
fn xi_formula_misses_biased_dropped_coin() {
    let res = 2;
    let f = make_drop_filtration(res, BernoulliParams::constant(0.3).unwrap(), grid(1, res), grid(1, res)).unwrap();
    let step = f.morphism(arrow(grid(1, res), grid(2, res)).unwrap()).unwrap();
    let e = conditional_expectation(&xi(&f, grid(2, res)).unwrap(), &step).unwrap();
    let zero: Path = "0".parse().unwrap();
    assert_eq!(fiber_i(0, &zero, &step).len(), 2);
    let formula = xi_counting_formula(&zero, &step, 0.3);
    assert!((formula - (4.0 * 0.3 - 2.0)).abs() < 1e-12);
    assert!((e.values()[0] - (2.0 * 0.3 - 1.0) / 0.7).abs() < 1e-12);
    assert!((formula - e.values()[0]).abs() > 0.1);
}
