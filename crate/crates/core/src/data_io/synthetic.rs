use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::dst::{update_state, Candidate, Dialog, DialogState, DialogTurn, Ontology};

/// Template-driven restaurant-style dialog domain.
///
/// Placeholders: inform templates use `{value}`, request templates `{slot}`,
/// change templates `{inform}` (an inform phrase), and system templates
/// `{slot}` (an informable slot name). Every key of `inform_templates` must
/// be a declared informable slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub informable: Vec<(String, Vec<String>)>,
    pub requestable: Vec<String>,
    pub inform_templates: BTreeMap<String, Vec<String>>,
    pub request_templates: Vec<String>,
    pub change_templates: Vec<String>,
    pub system_templates: Vec<String>,
    /// User turns that carry no label.
    pub chitchat_templates: Vec<String>,
    pub train_dialogs: usize,
    pub dev_dialogs: usize,
    pub test_dialogs: usize,
    /// Inclusive range of turns per dialog.
    pub turns: (usize, usize),
    pub seed: u64,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SyntheticDomainSpec {
    /// Three informable slots (food, pricerange, area) and four requestable
    /// slots (address, phone, postcode, name).
    pub fn restaurant(train: usize, dev: usize, test: usize, seed: u64) -> Self {
        let informable = vec![
            (
                "food".to_string(),
                strings(&["chinese", "korean", "italian", "indian", "thai", "french"]),
            ),
            ("pricerange".to_string(), strings(&["cheap", "moderate", "expensive"])),
            ("area".to_string(), strings(&["north", "south", "east", "west", "centre"])),
        ];
        let mut inform_templates = BTreeMap::new();
        inform_templates.insert(
            "food".to_string(),
            strings(&[
                "i want {value} food",
                "{value} food please",
                "somewhere that serves {value} food",
                "i am looking for {value} cuisine",
            ]),
        );
        inform_templates.insert(
            "pricerange".to_string(),
            strings(&[
                "something {value}",
                "in the {value} price range",
                "it should be {value}",
                "a {value} place",
            ]),
        );
        inform_templates.insert(
            "area".to_string(),
            strings(&[
                "in the {value}",
                "in the {value} part of town",
                "located in the {value}",
                "near the {value}",
            ]),
        );
        Self {
            informable,
            requestable: strings(&["address", "phone", "postcode", "name"]),
            inform_templates,
            request_templates: strings(&[
                "what is the {slot}",
                "can i get the {slot}",
                "could you tell me the {slot}",
                "i need the {slot}",
            ]),
            change_templates: strings(&[
                "actually i changed my mind , {inform}",
                "sorry , {inform} instead",
                "how about {inform}",
            ]),
            system_templates: strings(&[
                "what kind of {slot} would you like ?",
                "do you have a preference for the {slot} ?",
                "there are several places that match . any {slot} in mind ?",
                "i found a restaurant for you .",
                "is there anything else i can help with ?",
            ]),
            chitchat_templates: strings(&["thank you", "that is all , thanks", "ok great", "hmm let me think"]),
            train_dialogs: train,
            dev_dialogs: dev,
            test_dialogs: test,
            turns: (2, 6),
            seed,
        }
    }

    pub fn validate(&self) -> Result<Ontology, DataError> {
        let err = |m: String| Err(DataError::InvalidSpec(m));
        let ontology =
            Ontology::new(self.informable.clone(), self.requestable.clone()).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        if self.informable.is_empty() {
            return err("at least one informable slot is required".into());
        }
        let (lo, hi) = self.turns;
        if lo == 0 || lo > hi {
            return err(format!("turn range {lo}..={hi} is empty or starts at zero"));
        }
        for (slot, templates) in &self.inform_templates {
            if !ontology.is_informable(slot) {
                return err(format!("inform templates reference undeclared slot {slot:?}"));
            }
            check_templates(templates, "{value}", &format!("inform templates for {slot}"))?;
        }
        for (slot, _) in &self.informable {
            if self.inform_templates.get(slot).is_none_or(|t| t.is_empty()) {
                return err(format!("slot {slot:?} has no inform template"));
            }
        }
        if !self.requestable.is_empty() {
            if self.request_templates.is_empty() {
                return err("requestable slots need at least one request template".into());
            }
            check_templates(&self.request_templates, "{slot}", "request templates")?;
        }
        check_templates(&self.change_templates, "{inform}", "change templates")?;
        for t in self.system_templates.iter().chain(&self.chitchat_templates) {
            check_placeholders(t, &["{slot}"])?;
        }
        for t in &self.chitchat_templates {
            if t.contains('{') {
                return err(format!("chitchat template {t:?} has a placeholder"));
            }
        }
        Ok(ontology)
    }
}

fn check_placeholders(template: &str, allowed: &[&str]) -> Result<(), DataError> {
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| DataError::InvalidSpec(format!("unclosed placeholder in {template:?}")))?;
        let name = &rest[start..start + end + 1];
        if !allowed.contains(&name) {
            return Err(DataError::InvalidSpec(format!("unknown placeholder {name} in {template:?}")));
        }
        rest = &rest[start + end + 1..];
    }
    Ok(())
}

fn check_templates(templates: &[String], required: &str, what: &str) -> Result<(), DataError> {
    for t in templates {
        check_placeholders(t, &[required])?;
        if !t.contains(required) {
            return Err(DataError::InvalidSpec(format!("{what}: {t:?} lacks {required}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub ontology: Ontology,
    pub train: Vec<Dialog>,
    pub dev: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

struct DialogWriter<'a> {
    spec: &'a SyntheticDomainSpec,
    ontology: &'a Ontology,
    rng: ChaCha8Rng,
}

impl DialogWriter<'_> {
    fn pick<'b>(&mut self, xs: &'b [String]) -> &'b str {
        xs.choose(&mut self.rng).map(String::as_str).unwrap_or("")
    }

    fn inform_phrase(&mut self, slot: &str, value: &str) -> String {
        self.pick(&self.spec.inform_templates[slot]).replace("{value}", value)
    }

    fn turn(&mut self, state: &DialogState) -> (String, BTreeSet<Candidate>) {
        let slots: Vec<&String> = self.ontology.informable().keys().collect();
        let unset: Vec<&String> = slots.iter().copied().filter(|s| !state.goals.contains_key(*s)).collect();
        let mut phrases = Vec::new();
        let mut label = BTreeSet::new();

        let roll: f64 = self.rng.random();
        let want_change = !state.goals.is_empty() && roll < 0.2;
        let want_inform = !want_change && !unset.is_empty() && roll < 0.75;
        if want_change {
            let set: Vec<&String> = state.goals.keys().collect();
            let slot = set.choose(&mut self.rng).unwrap().to_string();
            let current = &state.goals[&slot];
            let others: Vec<&String> = self.ontology.informable()[&slot].iter().filter(|v| *v != current).collect();
            if let Some(value) = others.choose(&mut self.rng) {
                let inform = self.inform_phrase(&slot, value);
                phrases.push(self.pick(&self.spec.change_templates).replace("{inform}", &inform));
                label.insert(Candidate::inform(&slot, *value));
            }
        } else if want_inform {
            let n = self.rng.random_range(1..=unset.len().min(2));
            let mut chosen: Vec<&String> = unset.choose_multiple(&mut self.rng, n).copied().collect();
            chosen.shuffle(&mut self.rng);
            for slot in chosen {
                let value = self.ontology.informable()[slot].choose(&mut self.rng).unwrap().clone();
                phrases.push(self.inform_phrase(slot, &value));
                label.insert(Candidate::inform(slot, value));
            }
        }
        let requestable = self.ontology.requestable();
        let request_chance = if state.goals.is_empty() && label.is_empty() { 0.5 } else { 0.35 };
        if !requestable.is_empty() && (self.rng.random::<f64>() < request_chance || (label.is_empty() && self.rng.random::<f64>() < 0.5)) {
            let n = self.rng.random_range(1..=requestable.len().min(2));
            for slot in requestable.choose_multiple(&mut self.rng, n) {
                phrases.push(self.pick(&self.spec.request_templates).replace("{slot}", slot));
                label.insert(Candidate::request(slot));
            }
        }
        if phrases.is_empty() {
            phrases.push(self.pick(&self.spec.chitchat_templates).to_string());
        }
        (phrases.join(" and "), label)
    }

    fn system(&mut self, first: bool) -> String {
        if first {
            return String::new();
        }
        let template = self.pick(&self.spec.system_templates).to_string();
        let slot = self
            .ontology
            .informable()
            .keys()
            .collect::<Vec<_>>()
            .choose(&mut self.rng)
            .unwrap()
            .to_string();
        template.replace("{slot}", &slot)
    }

    fn dialog(&mut self, id: String) -> Dialog {
        let (lo, hi) = self.spec.turns;
        let n = self.rng.random_range(lo..=hi);
        let mut state = DialogState::default();
        let mut turns = Vec::with_capacity(n);
        let mut gold_states = Vec::with_capacity(n);
        for t in 0..n {
            let system = self.system(t == 0);
            let (user, label) = self.turn(&state);
            state = update_state(&state, &label).expect("one value per slot per turn");
            turns.push(DialogTurn {
                system_utterance: system,
                user_utterance: user,
                gold_turn_label: label,
            });
            gold_states.push(state.clone());
        }
        Dialog { id, turns, gold_states }
    }
}

/// Deterministic train/dev/test dialogs whose user turns mention slot values
/// verbatim. Gold states are the fold of the turn labels through
/// [`update_state`].
pub fn generate_synthetic_domain(spec: &SyntheticDomainSpec) -> Result<SyntheticDomain, DataError> {
    let ontology = spec.validate()?;
    let mut writer = DialogWriter {
        spec,
        ontology: &ontology,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let mut split = |name: &str, count: usize| -> Vec<Dialog> { (0..count).map(|i| writer.dialog(format!("{name}-{i:04}"))).collect() };
    let train = split("train", spec.train_dialogs);
    let dev = split("dev", spec.dev_dialogs);
    let test = split("test", spec.test_dialogs);
    Ok(SyntheticDomain {
        ontology,
        train,
        dev,
        test,
    })
}

/// One topic of the corpus grammar. Words of a topic co-occur, so masked
/// words are predictable from their sentence.
struct Topic {
    nouns: &'static [&'static str],
    verbs: &'static [&'static str],
    adjectives: &'static [&'static str],
    places: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        nouns: &[
            "soup",
            "bread",
            "noodles",
            "rice",
            "cake",
            "salad",
            "curry",
            "dumplings",
            "pie",
            "cheese",
            "tea",
            "coffee",
        ],
        verbs: &["cooked", "tasted", "served", "baked", "ordered", "shared"],
        adjectives: &["spicy", "sweet", "salty", "warm", "fresh", "crispy", "bitter", "tender"],
        places: &["kitchen", "cafe", "bakery", "market", "diner"],
    },
    Topic {
        nouns: &[
            "train", "ticket", "suitcase", "map", "passport", "bus", "ferry", "taxi", "bicycle", "flight", "hotel", "guide",
        ],
        verbs: &["booked", "missed", "boarded", "packed", "caught", "rode"],
        adjectives: &["early", "late", "crowded", "delayed", "comfortable", "foreign", "long", "direct"],
        places: &["station", "airport", "harbour", "border", "terminal"],
    },
    Topic {
        nouns: &[
            "rain", "storm", "wind", "snow", "cloud", "fog", "thunder", "sunshine", "frost", "breeze", "hail", "rainbow",
        ],
        verbs: &["watched", "feared", "expected", "measured", "predicted", "survived"],
        adjectives: &["heavy", "cold", "bright", "gentle", "grey", "sudden", "icy", "humid"],
        places: &["valley", "coast", "hills", "plains", "mountains"],
    },
    Topic {
        nouns: &[
            "song", "guitar", "piano", "drum", "melody", "choir", "violin", "album", "concert", "chord", "band", "lyric",
        ],
        verbs: &["played", "sang", "composed", "recorded", "tuned", "practised"],
        adjectives: &["loud", "quiet", "catchy", "slow", "joyful", "haunting", "rhythmic", "acoustic"],
        places: &["studio", "theatre", "club", "hall", "festival"],
    },
    Topic {
        nouns: &[
            "ball", "goal", "match", "team", "coach", "referee", "race", "medal", "racket", "helmet", "trophy", "whistle",
        ],
        verbs: &["kicked", "won", "lost", "trained", "scored", "defended"],
        adjectives: &["fast", "strong", "tired", "fierce", "skilled", "final", "tense", "winning"],
        places: &["stadium", "field", "court", "track", "gym"],
    },
    Topic {
        nouns: &[
            "lesson", "teacher", "book", "exam", "pencil", "homework", "lecture", "essay", "notebook", "library", "chalk", "grade",
        ],
        verbs: &["studied", "graded", "read", "wrote", "explained", "revised"],
        adjectives: &["difficult", "easy", "boring", "clever", "careful", "curious", "advanced", "basic"],
        places: &["classroom", "campus", "school", "college", "academy"],
    },
    Topic {
        nouns: &[
            "rose", "tulip", "seed", "shovel", "hedge", "lawn", "tomato", "pumpkin", "ivy", "fence", "soil", "daisy",
        ],
        verbs: &["planted", "watered", "trimmed", "grew", "picked", "dug"],
        adjectives: &["green", "wild", "blooming", "tall", "muddy", "leafy", "ripe", "thorny"],
        places: &["garden", "greenhouse", "orchard", "meadow", "allotment"],
    },
    Topic {
        nouns: &[
            "street", "tower", "bridge", "tram", "crowd", "square", "shop", "traffic", "alley", "statue", "fountain", "office",
        ],
        verbs: &["crossed", "visited", "built", "painted", "explored", "cleaned"],
        adjectives: &["busy", "narrow", "modern", "ancient", "noisy", "empty", "famous", "urban"],
        places: &["downtown", "suburb", "district", "quarter", "plaza"],
    },
    Topic {
        nouns: &[
            "whale",
            "boat",
            "wave",
            "shell",
            "anchor",
            "sailor",
            "dolphin",
            "net",
            "reef",
            "tide",
            "lighthouse",
            "crab",
        ],
        verbs: &["sailed", "fished", "spotted", "dived", "anchored", "swam"],
        adjectives: &["deep", "blue", "stormy", "calm", "salty", "endless", "rough", "tropical"],
        places: &["ocean", "bay", "island", "beach", "lagoon"],
    },
    Topic {
        nouns: &[
            "report", "meeting", "email", "manager", "deadline", "contract", "budget", "client", "printer", "laptop", "project", "invoice",
        ],
        verbs: &["signed", "approved", "scheduled", "reviewed", "cancelled", "finished"],
        adjectives: &[
            "urgent",
            "annual",
            "detailed",
            "formal",
            "quarterly",
            "confidential",
            "weekly",
            "overdue",
        ],
        places: &["headquarters", "boardroom", "warehouse", "factory", "branch"],
    },
    Topic {
        nouns: &[
            "dog", "cat", "horse", "rabbit", "parrot", "puppy", "kitten", "pony", "hamster", "goat", "lamb", "duck",
        ],
        verbs: &["fed", "walked", "groomed", "chased", "adopted", "brushed"],
        adjectives: &["fluffy", "playful", "sleepy", "hungry", "loyal", "tiny", "noisy", "friendly"],
        places: &["farm", "barn", "kennel", "stable", "park"],
    },
    Topic {
        nouns: &[
            "computer", "robot", "screen", "battery", "keyboard", "camera", "phone", "signal", "server", "cable", "sensor", "chip",
        ],
        verbs: &["repaired", "charged", "installed", "tested", "upgraded", "connected"],
        adjectives: &["digital", "broken", "wireless", "powerful", "portable", "smart", "electric", "new"],
        places: &["lab", "workshop", "store", "datacenter", "garage"],
    },
];

const NAMES: &[&str] = &[
    "anna", "ben", "clara", "david", "emma", "felix", "grace", "henry", "iris", "jack", "kate", "leo", "maria", "nina", "oscar", "paul",
    "rosa", "sam", "tara", "victor",
];
const TIMES: &[&str] = &[
    "yesterday",
    "today",
    "tomorrow",
    "tonight",
    "recently",
    "again",
    "often",
    "sometimes",
    "once",
    "twice",
    "quickly",
    "slowly",
    "finally",
    "suddenly",
    "carefully",
    "happily",
];
const NUMBERS: &[&str] = &["two", "three", "four", "five", "six", "seven", "eight", "many", "several", "few"];
const FEELINGS: &[&str] = &["liked", "loved", "hated", "remembered", "noticed", "admired", "missed", "enjoyed"];

/// Deterministic sentences from a topic grammar of roughly 450 words.
pub fn generate_synthetic_corpus(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| corpus_sentence(&mut rng)).collect()
}

fn corpus_sentence(rng: &mut ChaCha8Rng) -> String {
    let t = &TOPICS[rng.random_range(0..TOPICS.len())];
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| -> &'static str { xs[rng.random_range(0..xs.len())] };
    let name = pick(rng, NAMES);
    let noun = pick(rng, t.nouns);
    let noun2 = pick(rng, t.nouns);
    let verb = pick(rng, t.verbs);
    let adj = pick(rng, t.adjectives);
    let place = pick(rng, t.places);
    let time = pick(rng, TIMES);
    match rng.random_range(0..8) {
        0 => format!("{name} {verb} the {adj} {noun} at the {place} {time} ."),
        1 => format!("the {adj} {noun} was {verb} near the {place} ."),
        2 => format!("{name} {} the {noun} and the {noun2} .", pick(rng, FEELINGS)),
        3 => format!("{} {adj} {noun}s were {verb} {time} .", pick(rng, NUMBERS)),
        4 => format!("at the {place} , {name} {verb} a {adj} {noun} ."),
        5 => format!("did {name} see the {noun} in the {place} ?"),
        6 => format!("{name} and {} {verb} the {noun} {time} .", pick(rng, NAMES)),
        _ => format!("the {place} had a {adj} {noun} and a {noun2} ."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_value_spec() -> SyntheticDomainSpec {
        let mut spec = SyntheticDomainSpec::restaurant(1, 0, 0, 3);
        spec.informable = vec![("food".into(), vec!["chinese".into()])];
        spec.requestable.clear();
        spec.inform_templates.retain(|k, _| k == "food");
        spec.turns = (1, 1);
        spec
    }

    #[test]
    fn single_inform_turn() {
        let domain = generate_synthetic_domain(&one_value_spec()).unwrap();
        let d = &domain.train[0];
        assert_eq!(d.turns.len(), 1);
        assert_eq!(
            d.turns[0].gold_turn_label,
            [Candidate::inform("food", "chinese")].into_iter().collect()
        );
        assert_eq!(
            d.gold_states[0].goals,
            [("food".to_string(), "chinese".to_string())].into_iter().collect()
        );
        assert!(d.turns[0].user_utterance.contains("chinese"));
        assert_eq!(d.turns[0].system_utterance, "");
    }

    #[test]
    fn invalid_specs() {
        let mut spec = one_value_spec();
        spec.inform_templates.insert("colour".into(), vec!["{value}".into()]);
        assert!(matches!(generate_synthetic_domain(&spec), Err(DataError::InvalidSpec(_))));
        let mut spec = one_value_spec();
        spec.turns = (3, 2);
        assert!(matches!(generate_synthetic_domain(&spec), Err(DataError::InvalidSpec(_))));
        let mut spec = one_value_spec();
        spec.inform_templates.insert("food".into(), vec!["i want food".into()]);
        assert!(matches!(generate_synthetic_domain(&spec), Err(DataError::InvalidSpec(_))));
        let mut spec = one_value_spec();
        spec.change_templates.push("{value} now".into());
        assert!(matches!(generate_synthetic_domain(&spec), Err(DataError::InvalidSpec(_))));
    }

    #[test]
    fn domain_covers_every_intent() {
        let domain = generate_synthetic_domain(&SyntheticDomainSpec::restaurant(100, 0, 0, 7)).unwrap();
        let mut changes = 0;
        let mut requests = 0;
        let mut empty = 0;
        for d in &domain.train {
            let mut prev = DialogState::default();
            for (turn, state) in d.turns.iter().zip(&d.gold_states) {
                changes += turn
                    .gold_turn_label
                    .iter()
                    .any(|c| !c.is_request() && prev.goals.contains_key(&c.slot)) as usize;
                requests += turn.gold_turn_label.iter().any(Candidate::is_request) as usize;
                empty += turn.gold_turn_label.is_empty() as usize;
                for c in &turn.gold_turn_label {
                    assert!(turn.user_utterance.contains(&c.value), "{c} not in {:?}", turn.user_utterance);
                }
                prev = state.clone();
            }
        }
        assert!(changes > 10 && requests > 50 && empty > 5, "{changes} {requests} {empty}");
    }

    #[test]
    fn corpus_shape() {
        assert_eq!(generate_synthetic_corpus(1, 1).len(), 1);
        assert_eq!(generate_synthetic_corpus(4, 50), generate_synthetic_corpus(4, 50));
        assert_ne!(generate_synthetic_corpus(4, 50), generate_synthetic_corpus(5, 50));
    }
}
