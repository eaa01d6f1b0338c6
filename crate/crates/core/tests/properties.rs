use proptest::prelude::*;

use circle_entropy::ball::{Ball, FingerprintSpec};
use circle_entropy::circle::{circle_dist, PrimitiveMap};
use circle_entropy::group::{GeneratingSystem, Word};
use circle_entropy::separation::{max_separated_exact, max_separated_greedy, SeparationTable};
use circle_entropy::wandering::approximate_nonwandering;

/// A rotation of order 5 next to a hyperbolic map, so the ball has relations.
fn mixed_system() -> GeneratingSystem {
    GeneratingSystem::from_pairs(&[
        ("a", "A", PrimitiveMap::rotation(0.2)),
        ("b", "B", PrimitiveMap::hyperbolic(1.5).unwrap()),
    ])
    .unwrap()
}

fn schottky_system() -> GeneratingSystem {
    let s6 = 6f64.sqrt();
    GeneratingSystem::from_pairs(&[
        ("a", "A", PrimitiveMap::mobius(s6, 0.0, 0.0, 1.0 / s6).unwrap()),
        (
            "b",
            "B",
            PrimitiveMap::mobius(
                1.4288690166235205,
                -1.0206207261596574,
                -1.0206207261596574,
                1.4288690166235205,
            )
            .unwrap(),
        ),
    ])
    .unwrap()
}

fn word(letters: &[usize], system: &GeneratingSystem) -> Word {
    Word::new(letters.to_vec()).reduced(system)
}

fn mixed_ball() -> &'static Ball {
    static BALL: std::sync::OnceLock<Ball> = std::sync::OnceLock::new();
    BALL.get_or_init(|| Ball::enumerate(&mixed_system(), 6, FingerprintSpec::default(), 100_000).unwrap())
}

fn schottky_ball() -> &'static Ball {
    static BALL: std::sync::OnceLock<Ball> = std::sync::OnceLock::new();
    BALL.get_or_init(|| Ball::enumerate(&schottky_system(), 5, FingerprintSpec::default(), 100_000).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norm_is_symmetric(letters in prop::collection::vec(0usize..4, 0..=6)) {
        let ball = mixed_ball();
        let w = word(&letters, ball.system());
        let n = ball.norm_of(&w).unwrap();
        prop_assert!(n <= w.len());
        prop_assert_eq!(ball.norm_of(&w.inverse(ball.system())), Some(n));
    }

    #[test]
    fn norm_is_subadditive(
        u in prop::collection::vec(0usize..4, 0..=3),
        v in prop::collection::vec(0usize..4, 0..=3),
    ) {
        let ball = mixed_ball();
        let system = ball.system();
        let (u, v) = (word(&u, system), word(&v, system));
        let uv = u.after(&v).reduced(system);
        let n = ball.norm_of(&uv).unwrap();
        prop_assert!(n <= ball.norm_of(&u).unwrap() + ball.norm_of(&v).unwrap());
    }

    #[test]
    fn greedy_never_beats_exact(
        raw in prop::collection::btree_set(0u32..10_000, 2..=20),
        n in 0usize..=4,
        eps in 0.05f64..0.3,
    ) {
        let ball = mixed_ball();
        let pts: Vec<f64> = raw.iter().map(|&k| k as f64 / 10_000.0).collect();
        let table = SeparationTable::build(ball, pts.clone(), eps, n).unwrap();
        let greedy = max_separated_greedy(&table, n);
        let exact = max_separated_exact(&table, n, 24).unwrap();
        prop_assert!(greedy.len() <= exact.len());
        prop_assert!(exact.len() as f64 <= ball.size_at(n) as f64 / eps);
        // every admitted pair is separated by some element of B(n)
        for (a, &x) in exact.points.iter().enumerate() {
            for &y in &exact.points[a + 1..] {
                prop_assert!((0..ball.size_at(n))
                    .any(|f| circle_dist(ball.apply(f, x), ball.apply(f, y)) >= eps * (1.0 - 1e-12)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn deeper_certification_never_shrinks_the_approximation(n in 1usize..5, k in 6u32..9) {
        let ball = schottky_ball();
        let delta = 0.5f64.powi(k as i32);
        let shallow = approximate_nonwandering(ball, n, delta).unwrap();
        let deep = approximate_nonwandering(ball, n + 1, delta).unwrap();
        prop_assert!(shallow.kept.iter().zip(&deep.kept).all(|(&s, &d)| !s || d));
    }

    #[test]
    fn dyadic_refinement_never_grows_the_approximation(n in 1usize..=5, k in 6u32..9) {
        let ball = schottky_ball();
        let coarse = approximate_nonwandering(ball, n, 0.5f64.powi(k as i32)).unwrap();
        let fine = approximate_nonwandering(ball, n, 0.5f64.powi(k as i32 + 1)).unwrap();
        for t in fine.kept_points() {
            prop_assert!(coarse.contains(t), "t = {}", t);
        }
    }
}

#[test]
fn schottky_certification_grows_strictly_with_depth() {
    let ball = schottky_ball();
    let count = |n| {
        approximate_nonwandering(ball, n, 1.0 / 256.0)
            .unwrap()
            .kept
            .iter()
            .filter(|&&k| k)
            .count()
    };
    assert!(count(2) < count(5));
}
