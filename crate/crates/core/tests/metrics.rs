//! Caption and ranking metrics against hand-worked values and an
//! independent CIDEr implementation.

mod common;

use audiotext::evalsuite::{bleu4_text, cider, cider_text, rouge_l_text, round_robin_eval};
use common::{cider_fixture, cider_oracle, hand_fixtures};

#[test]
fn hand_worked_fixtures() {
    for e in hand_fixtures() {
        assert!((e.got - e.want).abs() <= 1e-6, "{}: got {} want {}", e.name, e.got, e.want);
    }
}

#[test]
fn cider_matches_the_oracle() {
    let (cands, refs) = cider_fixture();
    let got = cider(&cands, &refs).unwrap();
    let want = cider_oracle(&cands, &refs);
    for (g, w) in got.per_item.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
    }
    assert!((got.mean - want.iter().sum::<f64>() / 5.0).abs() <= 1e-6);
    // the disjoint last item scores nothing, the exact match scores most
    assert_eq!(got.per_item[4], 0.0);
    assert!(got.per_item.iter().all(|&v| v <= got.per_item[1]));
}

#[test]
fn cider_ignores_item_order() {
    let (mut cands, mut refs) = cider_fixture();
    let before = cider(&cands, &refs).unwrap();
    cands.reverse();
    refs.reverse();
    let after = cider(&cands, &refs).unwrap();
    assert!((before.mean - after.mean).abs() < 1e-12);
}

#[test]
fn round_robin_protocol() {
    let same: Vec<Vec<String>> = (0..4).map(|i| vec![format!("a low tone hums then rain falls number {i}"); 5]).collect();
    assert_eq!(round_robin_eval(&same, &bleu4_text).unwrap(), 1.0);
    assert_eq!(round_robin_eval(&same, &rouge_l_text).unwrap(), 1.0);

    let pair = vec![vec!["a b c d e".to_string(), "a b c d f".to_string()], vec!["x y z w v".to_string(), "x y z w v".to_string()]];
    let swapped = |i: usize| {
        let cands: Vec<String> = pair.iter().map(|p| p[i].clone()).collect();
        let refs: Vec<Vec<String>> = pair.iter().map(|p| vec![p[1 - i].clone()]).collect();
        cider_text(&cands, &refs).unwrap()
    };
    let rr = round_robin_eval(&pair, &cider_text).unwrap();
    assert!((rr - (swapped(0) + swapped(1)) / 2.0).abs() < 1e-12);

    let mut odd = same.clone();
    odd[0][2] = "completely different words here".into();
    assert!(round_robin_eval(&odd, &bleu4_text).unwrap() < 1.0);

    let ragged = vec![vec!["a".to_string(); 5], vec!["a".to_string(); 4]];
    assert!(round_robin_eval(&ragged, &bleu4_text).is_err());
}
