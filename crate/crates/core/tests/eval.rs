use drumscribe::eval::{
    f_measure, f_measure_onsets, match_onsets, match_times, velocity_f_measure_onsets, EvalConfig, Onset, Scores, ONSET_TOLERANCE,
};
use drumscribe::midi::HitLevel;
use drumscribe::{DrumEvent, DrumTrack};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest matching by exhaustive search over which estimates the first
/// `i` references used (memoised on the used set).
fn brute_force_max(edges: &[Vec<bool>], n_est: usize) -> usize {
    fn go(i: usize, used: u32, edges: &[Vec<bool>], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == edges.len() {
            return 0;
        }
        if let Some(v) = memo[i][used as usize] {
            return v;
        }
        let mut best = go(i + 1, used, edges, memo);
        for (j, &ok) in edges[i].iter().enumerate() {
            if ok && used & (1 << j) == 0 {
                best = best.max(1 + go(i + 1, used | (1 << j), edges, memo));
            }
        }
        memo[i][used as usize] = Some(best);
        best
    }
    let mut memo = vec![vec![None; 1 << n_est]; edges.len()];
    go(0, 0, edges, &mut memo)
}

fn times(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.gen_range(0.0..span) * 1000.0_f64).round() / 1000.0).collect()
}

#[test]
fn matching_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let mut reference = Vec::new();
        let mut estimate = Vec::new();
        for hit in 0..7u16 {
            // short spans make dense conflict graphs
            let span = [0.1, 0.3, 1.0][rng.gen_range(0..3)];
            let (nr, ne) = (rng.gen_range(0..=8), rng.gen_range(0..=8));
            let r = times(&mut rng, nr, span);
            let e = times(&mut rng, ne, span);
            let edges: Vec<Vec<bool>> = r.iter().map(|a| e.iter().map(|b| (a - b).abs() <= ONSET_TOLERANCE).collect()).collect();
            let m = match_times(&r, &e, ONSET_TOLERANCE);
            assert_eq!(m.len(), brute_force_max(&edges, e.len()));
            // valid and one-to-one
            assert!(m.iter().all(|&(i, j)| edges[i][j]));
            let mut rs: Vec<usize> = m.iter().map(|p| p.0).collect();
            let mut es: Vec<usize> = m.iter().map(|p| p.1).collect();
            rs.dedup();
            es.sort();
            es.dedup();
            assert_eq!((rs.len(), es.len()), (m.len(), m.len()));
            reference.extend(r.iter().map(|&t| DrumEvent::new(t, hit, 100)));
            estimate.extend(e.iter().map(|&t| DrumEvent::new(t, hit, 100)));
        }
        let r = DrumTrack::new(HitLevel::Group7, reference, 0.0).unwrap();
        let e = DrumTrack::new(HitLevel::Group7, estimate, 0.0).unwrap();
        let matches = match_onsets(&r, &e, ONSET_TOLERANCE).unwrap();
        assert!(matches.iter().all(|m| r.events()[m.ref_index].hit == m.hit && e.events()[m.est_index].hit == m.hit));
    }
}

#[derive(serde::Deserialize)]
struct Fixture {
    tolerance: f64,
    cases: Vec<Case>,
}

#[derive(serde::Deserialize)]
struct Case {
    #[serde(rename = "ref")]
    reference: Vec<(f64, u16)>,
    est: Vec<(f64, u16)>,
    per_class: Vec<ClassRef>,
}

#[derive(serde::Deserialize)]
struct ClassRef {
    hit: u16,
    tp: usize,
    f: f64,
}

#[test]
fn agrees_with_reference_implementation() {
    // produced by tests/data/make_onset_fixture.py with mir_eval
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/onset_fmeasure_reference.json")).unwrap();
    let fixture: Fixture = serde_json::from_str(&text).unwrap();
    assert_eq!(fixture.cases.len(), 500);
    let onsets = |v: &[(f64, u16)]| v.iter().map(|&(t, h)| Onset::new(t, h, 100.0)).collect::<Vec<_>>();
    for case in &fixture.cases {
        let res = f_measure_onsets(HitLevel::Group7, &onsets(&case.reference), &onsets(&case.est), fixture.tolerance).unwrap();
        let (mut tp, mut n_ref, mut n_est) = (0, 0, 0);
        for c in &case.per_class {
            let got = res.class(c.hit).unwrap();
            assert_eq!(got.tp, c.tp, "hit {}", c.hit);
            assert!((got.scores.f - c.f).abs() <= 1e-9, "hit {}: {} vs {}", c.hit, got.scores.f, c.f);
            tp += c.tp;
            n_ref += case.reference.iter().filter(|e| e.1 == c.hit).count();
            n_est += case.est.iter().filter(|e| e.1 == c.hit).count();
        }
        let pooled = Scores::from_counts(tp, n_est - tp, n_ref - tp);
        assert!((res.micro.f - pooled.f).abs() <= 1e-12);
    }
}

fn onset_list(max_per_class: usize) -> impl Strategy<Value = Vec<Onset>> {
    prop::collection::vec((0.0f64..2.0, 0u16..7, 1u8..=127), 0..max_per_class * 7)
        .prop_map(|v| v.into_iter().map(|(t, h, vel)| Onset::new(t, h, f64::from(vel))).collect())
}

proptest! {
    #[test]
    fn swapping_reference_and_estimate_swaps_precision_and_recall(r in onset_list(6), e in onset_list(6)) {
        let a = f_measure_onsets(HitLevel::Group7, &r, &e, 0.05).unwrap();
        let b = f_measure_onsets(HitLevel::Group7, &e, &r, 0.05).unwrap();
        prop_assert_eq!(a.micro.precision, b.micro.recall);
        prop_assert_eq!(a.micro.recall, b.micro.precision);
        prop_assert_eq!(a.micro.f, b.micro.f);
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            prop_assert_eq!((x.tp, x.fp, x.fn_), (y.tp, y.fn_, y.fp));
        }
    }

    #[test]
    fn widening_the_window_never_lowers_f(r in onset_list(6), e in onset_list(6), t1 in 0.0f64..0.2, t2 in 0.0f64..0.2) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = f_measure_onsets(HitLevel::Group7, &r, &e, lo).unwrap();
        let b = f_measure_onsets(HitLevel::Group7, &r, &e, hi).unwrap();
        prop_assert!(b.micro.f >= a.micro.f);
        prop_assert!(b.tp() >= a.tp());
    }

    #[test]
    fn overall_scores_come_from_pooled_counts(r in onset_list(6), e in onset_list(6)) {
        let a = f_measure_onsets(HitLevel::Group7, &r, &e, 0.05).unwrap();
        let (tp, fp, fn_) = a.per_class.iter().fold((0, 0, 0), |(x, y, z), c| (x + c.tp, y + c.fp, z + c.fn_));
        prop_assert_eq!(a.micro, Scores::from_counts(tp, fp, fn_));
        prop_assert_eq!(tp + fp, e.len());
        prop_assert_eq!(tp + fn_, r.len());
        for c in &a.per_class {
            let n_ref = r.iter().filter(|o| o.hit == c.hit).count();
            let n_est = e.iter().filter(|o| o.hit == c.hit).count();
            prop_assert!(c.tp <= n_ref.min(n_est));
        }
    }

    #[test]
    fn velocity_f_ignores_a_global_velocity_gain(r in onset_list(6), e in onset_list(6), jitter in prop::collection::vec(-0.03f64..0.03, 42)) {
        // estimates near the references so that some pairs qualify
        let mut est: Vec<Onset> = r.iter().zip(jitter.iter().cycle()).map(|(o, j)| Onset::new((o.time + j).max(0.0), o.hit, (o.velocity * (1.0 + 4.0 * j)).max(1.0))).collect();
        est.extend(e);
        let cfg = EvalConfig::default();
        let base = velocity_f_measure_onsets(HitLevel::Group7, &r, &est, &cfg).unwrap();
        for g in [0.5, 2.0, 10.0] {
            let scaled: Vec<Onset> = est.iter().map(|o| Onset { velocity: o.velocity * g, ..*o }).collect();
            let res = velocity_f_measure_onsets(HitLevel::Group7, &r, &scaled, &cfg).unwrap();
            prop_assert_eq!(res.micro.f - base.micro.f, 0.0);
            prop_assert_eq!(res.tp(), base.tp());
        }
    }
}

#[test]
fn velocity_f_with_one_pair_off_by_about_a_third() {
    // references normalise to 1.0, 0.5, 0.8
    let r = [Onset::new(0.1, 0, 100.0), Onset::new(0.3, 1, 50.0), Onset::new(0.5, 3, 80.0)];
    let e = [Onset::new(0.11, 0, 0.95), Onset::new(0.29, 1, 0.5), Onset::new(0.5, 3, 0.45)];
    let res = velocity_f_measure_onsets(HitLevel::Group7, &r, &e, &EvalConfig::default()).unwrap();
    let s = res.velocity_scale.unwrap();
    let expected_scale = (1.0 * 0.95 + 0.5 * 0.5 + 0.8 * 0.45) / (0.95 * 0.95 + 0.25 + 0.45 * 0.45);
    assert!((s - expected_scale).abs() < 1e-12);
    // scaled errors ≈ 0.094, 0.076 and 0.282
    let ref_v = [1.0, 0.5, 0.8];
    let errors: Vec<f64> = (0..3).map(|i| (ref_v[i] - s * e[i].velocity).abs()).collect();
    assert!(errors[0] < 0.1 && errors[1] < 0.1 && (errors[2] - 0.28).abs() < 0.01);
    let edges: Vec<Vec<bool>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| r[i].hit == e[j].hit && (r[i].time - e[j].time).abs() <= 0.05 && (ref_v[i] - s * e[j].velocity).abs() <= 0.1)
                .collect()
        })
        .collect();
    assert_eq!(brute_force_max(&edges, 3), 2);
    assert_eq!(res.tp(), 2);
    assert!((res.micro.f - 2.0 / 3.0).abs() < 1e-12);
    // plain onset F still counts all three
    let plain = f_measure_onsets(HitLevel::Group7, &r, &e, 0.05).unwrap();
    assert_eq!(plain.tp(), 3);
}

#[test]
fn identical_tracks_score_one() {
    let r = DrumTrack::new(HitLevel::Group3, vec![DrumEvent::new(0.5, 0, 90), DrumEvent::new(0.5, 2, 30)], 1.0).unwrap();
    let res = f_measure(&r, &r, ONSET_TOLERANCE).unwrap();
    assert_eq!(res.micro.f, 1.0);
    assert_eq!(res.per_class.len(), 3);
    assert_eq!(res.macro_avg.f, 1.0);
}
