use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqr_core::expr::{format_expr, parse, parsimony, random_expr, simplify, ComplexityTable};

fn rows(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

#[test]
fn format_then_parse_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let table = ComplexityTable::default();
    let points = rows(&mut rng, 3, 8);
    for _ in 0..1000 {
        let e = random_expr(3, 25, &mut rng);
        let text = format_expr(&e, None);
        let back = parse(&text).unwrap_or_else(|err| panic!("{text}: {err}"));
        assert_eq!(format_expr(&back, None), text);
        assert_eq!(parsimony(&back, &table), parsimony(&e, &table), "{text}");
        for row in &points {
            assert!(same(e.eval_row(row), back.eval_row(row)), "{text}");
        }
    }
}

#[test]
fn simplify_preserves_finite_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let table = ComplexityTable::default();
    let points = rows(&mut rng, 2, 16);
    for _ in 0..1000 {
        let e = random_expr(2, 20, &mut rng);
        let s = simplify(&e);
        assert!(parsimony(&s, &table) <= parsimony(&e, &table));
        assert_eq!(simplify(&s), s, "{}", format_expr(&e, None));
        for row in &points {
            let (a, b) = (e.eval_row(row), s.eval_row(row));
            if a.is_finite() {
                let scale = a.abs().max(1.0);
                assert!((a - b).abs() <= 1e-9 * scale, "{} -> {}: {a} vs {b}", format_expr(&e, None), format_expr(&s, None));
            }
        }
    }
}
