use std::collections::{BTreeMap, BTreeSet};

use dstd_core::distill::token_distill_loss;
use dstd_core::dst::{joint_goal_accuracy, select_candidates, turn_request_accuracy, update_state, Candidate, DialogState, Prediction};
use dstd_core::encoder::{forward_traced, init_params, Batch, EncoderConfig, Mode, ModelParams};
use dstd_core::tokenizer::{basic_split, build_vocab, pack_pair, tokenize, PackedInput, CLS_ID, PAD_ID, SEP_ID};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLOTS: [(&str, &[&str]); 3] = [
    ("food", &["chinese", "korean", "thai"]),
    ("area", &["north", "south"]),
    ("price", &["cheap", "dear"]),
];
const REQUESTABLE: [&str; 3] = ["phone", "address", "postcode"];

fn word() -> impl Strategy<Value = String> {
    "[a-h]{1,8}"
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..12).prop_map(|w| w.join(" "))
}

fn state() -> impl Strategy<Value = DialogState> {
    let goals = SLOTS.map(|(slot, values)| prop::option::of(prop::sample::select(values)).prop_map(move |v| (slot, v)));
    (goals, prop::collection::btree_set(prop::sample::select(&REQUESTABLE[..]), 0..=3)).prop_map(|(goals, requests)| DialogState {
        goals: goals
            .into_iter()
            .filter_map(|(s, v)| v.map(|v| (s.to_string(), v.to_string())))
            .collect(),
        requests: requests.into_iter().map(String::from).collect(),
    })
}

fn all_candidates() -> Vec<Candidate> {
    SLOTS
        .iter()
        .flat_map(|(s, vs)| vs.iter().map(move |v| Candidate::inform(*s, *v)))
        .chain(REQUESTABLE.iter().map(|r| Candidate::request(*r)))
        .collect()
}

fn predictions() -> impl Strategy<Value = Vec<Prediction>> {
    let n = all_candidates().len();
    prop::collection::vec(prop_oneof![Just(0.5), 0.0..1.0f64], n).prop_map(|ps| {
        all_candidates()
            .into_iter()
            .zip(ps)
            .map(|(candidate, probability)| Prediction { candidate, probability })
            .collect()
    })
}

fn tiny_f64(seed: u64, layers: usize) -> ModelParams<f64> {
    let config = EncoderConfig::new(layers, 8, 16, 2, 24, 12);
    let mut params = init_params(&config, seed).unwrap().cast::<f64>();
    // Spread weights beyond the 0.02 init so attention is far from uniform.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in params.tensors_mut() {
        for x in t.data.iter_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
    }
    params
}

fn padded(ids: &[u32], segs: &[u8], len: usize) -> PackedInput {
    let mut p = PackedInput {
        ids: ids.to_vec(),
        segment_ids: segs.to_vec(),
        attention_mask: vec![1; ids.len()],
    };
    p.ids.resize(len, PAD_ID);
    p.segment_ids.resize(len, 0);
    p.attention_mask.resize(len, 0);
    p
}

fn random_input(rng: &mut ChaCha8Rng, len: usize) -> PackedInput {
    let real = rng.random_range(2..=len);
    let ids: Vec<u32> = (0..real).map(|_| rng.random_range(5..24)).collect();
    let split = rng.random_range(1..=real);
    let segs: Vec<u8> = (0..real).map(|i| (i >= split) as u8).collect();
    padded(&ids, &segs, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tokenize_round_trips_over_known_characters(corpus in prop::collection::vec(text(), 1..6), probe in text()) {
        let mut corpus = corpus;
        corpus.push("a b c d e f g h aa bb cc dd ee ff gg hh".into());
        let vocab = build_vocab(&corpus, 60).unwrap();
        let seq = tokenize(&probe, &vocab);
        prop_assert_eq!(seq.detokenize(), basic_split(&probe).join(" "));
        prop_assert!(seq.ids.iter().all(|&id| id != 1));
    }

    #[test]
    fn pair_packing_invariants(ctx in text(), cand in prop::collection::vec(word(), 1..4), max_len in 8usize..40) {
        let vocab = build_vocab(&["a b c d e f g h aa bb cc dd ee ff gg hh"], 40).unwrap();
        let context = tokenize(&ctx, &vocab);
        let candidate = tokenize(&cand.join(" "), &vocab);
        match pack_pair(&context, &candidate, max_len) {
            Err(_) => prop_assert!(candidate.len() + 3 > max_len),
            Ok(p) => {
                prop_assert_eq!(p.len(), max_len);
                prop_assert_eq!(p.segment_ids.len(), max_len);
                prop_assert_eq!(p.attention_mask.len(), max_len);
                let real = p.real_len();
                prop_assert!(p.attention_mask[real..].iter().all(|&m| m == 0));
                prop_assert!(p.ids[real..].iter().all(|&id| id == PAD_ID));
                prop_assert_eq!(p.ids[0], CLS_ID);
                prop_assert_eq!(p.ids[real - 1], SEP_ID);
                let first = real - 1 - candidate.len();
                prop_assert_eq!(&p.ids[first..real - 1], &candidate.ids[..]);
                prop_assert_eq!(p.ids[first - 1], SEP_ID);
                // context keeps its newest tokens
                let kept = &p.ids[1..first - 1];
                prop_assert!(context.ids.ends_with(kept));
                prop_assert_eq!(kept.len(), context.len().min(max_len - 3 - candidate.len()));
                prop_assert!(p.segment_ids[..first].iter().all(|&s| s == 0));
                prop_assert!(p.segment_ids[first..real].iter().all(|&s| s == 1));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), len in 3usize..12) {
        let params = tiny_f64(seed, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<PackedInput> = (0..3).map(|_| random_input(&mut rng, len)).collect();
        let refs: Vec<&PackedInput> = inputs.iter().collect();
        let batch = Batch::new(&refs);
        let (_, trace) = forward_traced(&params, &batch, Mode::Eval).unwrap();
        for layer in &trace.layers {
            for (b, input) in inputs.iter().enumerate() {
                for h in 0..2 {
                    for i in 0..input.real_len() {
                        let row = layer.attention_row(2, len, b, h, i);
                        let (real, pad) = row.split_at(input.real_len());
                        prop_assert!((real.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                        prop_assert!(pad.iter().sum::<f64>() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn outputs_ignore_padding_ids(seed in any::<u64>(), len in 4usize..12) {
        let params = tiny_f64(seed, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let input = random_input(&mut rng, len);
        let mut noisy = input.clone();
        for i in input.real_len()..len {
            noisy.ids[i] = rng.random_range(0..24);
            noisy.segment_ids[i] = rng.random_range(0..2);
        }
        let (a, _) = forward_traced(&params, &Batch::single(&input), Mode::Eval).unwrap();
        let (b, _) = forward_traced(&params, &Batch::single(&noisy), Mode::Eval).unwrap();
        for r in 0..input.real_len() {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(seed in any::<u64>(), len in 2usize..12) {
        let params = tiny_f64(seed, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let input = random_input(&mut rng, len);
        let (_, trace) = forward_traced(&params, &Batch::single(&input), Mode::Eval).unwrap();
        for layer in &trace.layers {
            for norm in [&layer.attn_norm, &layer.ff_norm] {
                for r in 0..len {
                    let row = norm.normalized.row(r);
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
                    prop_assert!(mean.abs() <= 1e-6, "mean {}", mean);
                    prop_assert!((var - 1.0).abs() <= 1e-4, "var {}", var);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn selection_keeps_one_best_value_per_slot(preds in predictions(), threshold in 0.05..0.95f64) {
        let selected = select_candidates(&preds, threshold);
        let mut per_slot: BTreeMap<&str, usize> = BTreeMap::new();
        for c in selected.iter().filter(|c| !c.is_request()) {
            *per_slot.entry(&c.slot).or_default() += 1;
        }
        prop_assert!(per_slot.values().all(|&n| n == 1));
        for p in &preds {
            let above = p.probability >= threshold;
            if p.candidate.is_request() {
                prop_assert_eq!(selected.contains(&p.candidate), above);
            } else if selected.contains(&p.candidate) {
                prop_assert!(above);
                let best = preds
                    .iter()
                    .filter(|q| q.candidate.slot == p.candidate.slot)
                    .map(|q| q.probability)
                    .fold(f64::MIN, f64::max);
                prop_assert_eq!(p.probability, best);
            }
        }
    }

    #[test]
    fn update_semantics(prev in state(), preds in predictions()) {
        let selected = select_candidates(&preds, 0.5);
        let next = update_state(&prev, &selected).unwrap();
        // per-slot uniqueness and assignment
        for c in selected.iter().filter(|c| !c.is_request()) {
            prop_assert_eq!(next.goals.get(&c.slot), Some(&c.value));
        }
        // carry-over of unmentioned slots
        for (slot, value) in &prev.goals {
            if !selected.iter().any(|c| !c.is_request() && &c.slot == slot) {
                prop_assert_eq!(next.goals.get(slot), Some(value));
            }
        }
        prop_assert!(next.goals.keys().all(|s| prev.goals.contains_key(s) || selected.iter().any(|c| &c.slot == s)));
        // requests are reset to exactly this turn's
        let requested: BTreeSet<String> = selected.iter().filter(|c| c.is_request()).map(|c| c.value.clone()).collect();
        prop_assert_eq!(&next.requests, &requested);
        // idempotence
        prop_assert_eq!(update_state(&next, &selected).unwrap(), next);
    }
}

fn brute_joint(p: &[DialogState], g: &[DialogState]) -> f64 {
    let mut hits = 0;
    for (a, b) in p.iter().zip(g) {
        let slots: BTreeSet<&String> = a.goals.keys().chain(b.goals.keys()).collect();
        hits += slots.iter().all(|s| a.goals.get(*s) == b.goals.get(*s)) as usize;
    }
    if g.is_empty() {
        0.0
    } else {
        hits as f64 / g.len() as f64
    }
}

fn brute_requests(p: &[DialogState], g: &[DialogState]) -> f64 {
    let mut hits = 0;
    for (a, b) in p.iter().zip(g) {
        let mut x: Vec<&String> = a.requests.iter().collect();
        let mut y: Vec<&String> = b.requests.iter().collect();
        x.sort();
        y.sort();
        hits += (x == y) as usize;
    }
    if g.is_empty() {
        0.0
    } else {
        hits as f64 / g.len() as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((state(), state()), 1..12)) {
        let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assert_eq!(joint_goal_accuracy(&p, &g).unwrap(), brute_joint(&p, &g));
        prop_assert_eq!(turn_request_accuracy(&p, &g).unwrap(), brute_requests(&p, &g));
        prop_assert_eq!(joint_goal_accuracy(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn distill_loss_is_bounded_below_by_teacher_entropy(
        t in prop::collection::vec(-20.0..20.0f64, 2..16),
        noise in prop::collection::vec(-20.0..20.0f64, 16),
        tau in 0.5..20.0f64,
    ) {
        let s: Vec<f64> = noise[..t.len()].to_vec();
        let floor = token_distill_loss(&t, &t, tau).unwrap();
        prop_assert!(token_distill_loss(&t, &s, tau).unwrap() >= floor - 1e-12);
    }

    #[test]
    fn distill_loss_ignores_logit_shifts(
        t in prop::collection::vec(-20.0..20.0f64, 2..16),
        noise in prop::collection::vec(-20.0..20.0f64, 16),
        shift_t in -50.0..50.0f64,
        shift_s in -50.0..50.0f64,
        tau in 0.5..20.0f64,
    ) {
        let s: Vec<f64> = noise[..t.len()].to_vec();
        let base = token_distill_loss(&t, &s, tau).unwrap();
        let t2: Vec<f64> = t.iter().map(|x| x + shift_t).collect();
        let s2: Vec<f64> = s.iter().map(|x| x + shift_s).collect();
        prop_assert!((token_distill_loss(&t2, &s2, tau).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn distill_loss_tends_to_log_vocab(
        t in prop::collection::vec(-20.0..20.0f64, 2..64),
        noise in prop::collection::vec(-20.0..20.0f64, 64),
    ) {
        let s: Vec<f64> = noise[..t.len()].to_vec();
        let ln_v = (t.len() as f64).ln();
        let near = (token_distill_loss(&t, &s, 1e6).unwrap() - ln_v).abs();
        prop_assert!(near <= 1e-3 * ln_v);
        let at_ten = (token_distill_loss(&t, &s, 10.0).unwrap() - ln_v).abs();
        prop_assert!(near <= at_ten + 1e-12);
    }
}
