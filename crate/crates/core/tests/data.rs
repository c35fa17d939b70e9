use std::collections::BTreeSet;

use dstd_core::data_io::{
    decode_checkpoint, encode_checkpoint, generate_synthetic_corpus, generate_synthetic_domain, parse_dialogs, parse_ontology,
    parse_states, DataError, SaveOptions, SyntheticDomainSpec,
};
use dstd_core::dst::enumerate_candidates;
use dstd_core::encoder::{init_params, EncoderConfig};
use dstd_core::tokenizer::{basic_split, build_vocab};
use proptest::prelude::*;

const WOZ_ONTOLOGY: &str = r#"{
  "informable": {
    "food": ["chinese", "korean", "italian", "indian", "thai", "french", "british"],
    "pricerange": ["cheap", "moderate", "expensive"],
    "area": ["north", "south", "east", "west", "centre"]
  },
  "requestable": ["address", "area", "food", "phone", "pricerange", "postcode", "signature", "name"]
}"#;

const DIALOG: &str = r#"[{"id": "d0", "turns": [
  {"system": "", "user": "i want cheap chinese food", "turn_label": [["food", "chinese"], ["pricerange", "cheap"]],
   "goals": {"food": "chinese", "pricerange": "cheap"}, "requests": []},
  {"system": "golden house is nice", "user": "what is the phone", "turn_label": [["request", "phone"]],
   "goals": {"food": "chinese", "pricerange": "cheap"}, "requests": ["phone"]}]}]"#;

#[test]
fn woz_shaped_ontology() {
    let ontology = parse_ontology(WOZ_ONTOLOGY).unwrap();
    assert_eq!(ontology.informable().len(), 3);
    assert_eq!(ontology.requestable().len(), 8);
    assert_eq!(enumerate_candidates(&ontology).len(), 7 + 3 + 5 + 8);
    let dialogs = parse_dialogs(DIALOG, &ontology).unwrap();
    assert_eq!(dialogs[0].turns.len(), 2);
    assert_eq!(dialogs[0].gold_states[1].requests, BTreeSet::from(["phone".to_string()]));
}

#[test]
fn synthetic_split_sizes() {
    let domain = generate_synthetic_domain(&SyntheticDomainSpec::restaurant(600, 200, 400, 3)).unwrap();
    assert_eq!((domain.train.len(), domain.dev.len(), domain.test.len()), (600, 200, 400));
    let ids: BTreeSet<&String> = domain.train.iter().chain(&domain.dev).chain(&domain.test).map(|d| &d.id).collect();
    assert_eq!(ids.len(), 1200);
    for d in domain.train.iter().chain(&domain.dev).chain(&domain.test) {
        assert!((2..=6).contains(&d.turns.len()));
        for state in &d.gold_states {
            domain.ontology.check_state(state).unwrap();
        }
    }
}

#[test]
fn synthetic_corpus_size_and_lexicon() {
    let corpus = generate_synthetic_corpus(17, 10_000);
    assert_eq!(corpus.len(), 10_000);
    let words: BTreeSet<String> = corpus.iter().flat_map(|s| basic_split(s)).collect();
    assert!((300..=700).contains(&words.len()), "{} distinct words", words.len());
}

fn checkpoint_bytes() -> Vec<u8> {
    let vocab = build_vocab(&["the cat sat on the mat"], 40).unwrap();
    let params = init_params(&EncoderConfig::new(1, 8, 16, 2, vocab.len(), 8), 1).unwrap();
    encode_checkpoint(&params, &vocab, SaveOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn loaders_reject_garbage_without_panicking(text in ".{0,200}") {
        let ontology = parse_ontology(WOZ_ONTOLOGY).unwrap();
        let _ = parse_ontology(&text);
        let _ = parse_dialogs(&text, &ontology);
        let _ = parse_states(&text, Some(&ontology));
        prop_assert!(decode_checkpoint(text.as_bytes()).is_err());
    }

    #[test]
    fn mutated_json_never_panics(pos in any::<prop::sample::Index>(), byte in any::<u8>(), cut in any::<prop::sample::Index>()) {
        let ontology = parse_ontology(WOZ_ONTOLOGY).unwrap();
        for source in [WOZ_ONTOLOGY, DIALOG] {
            let mut bytes = source.as_bytes().to_vec();
            let at = pos.index(bytes.len());
            bytes[at] = byte;
            let keep = cut.index(bytes.len() + 1);
            bytes.truncate(keep);
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_ontology(&text);
            let _ = parse_dialogs(&text, &ontology);
        }
    }

    #[test]
    fn damaged_checkpoints_are_errors(pos in any::<prop::sample::Index>(), flip in 1u8..=255, cut in any::<prop::sample::Index>()) {
        let good = checkpoint_bytes();
        let mut flipped = good.clone();
        flipped[pos.index(good.len())] ^= flip;
        prop_assert!(decode_checkpoint(&flipped).is_err());
        let n = cut.index(good.len());
        prop_assert!(decode_checkpoint(&good[..n]).is_err());
    }
}

#[test]
fn payload_damage_is_a_checksum_error() {
    let mut bytes = checkpoint_bytes();
    let n = bytes.len();
    bytes[n - 10] ^= 0x40;
    assert!(matches!(decode_checkpoint(&bytes), Err(DataError::ChecksumMismatch { .. })));
}
