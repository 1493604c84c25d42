//! Deterministic synthetic data: a seed lexicon, a small demo corpus with
//! known ground truth, and cohorts with an injected side-effect signal.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{GoldSet, TruthItem};
use crate::classifier::{Label, LabeledPost};
use crate::corpus::{keyword_filter, KeywordFilterConfig, Post, PostCollection, UserProfile};
use crate::lexicon::{Category, FunctionalClass, LexiconEntry, LexiconVersion, Provenance};

use FunctionalClass::*;

const MEDICATIONS: [(&str, FunctionalClass, &[&str]); 16] = [
    ("tamoxifen", HormoneTherapy, &["nolvadex"]),
    ("letrozole", HormoneTherapy, &["femara"]),
    ("anastrozole", HormoneTherapy, &["arimidex"]),
    ("exemestane", HormoneTherapy, &["aromasin"]),
    ("capecitabine", Chemotherapy, &["xeloda"]),
    ("paclitaxel", Chemotherapy, &["taxol"]),
    ("docetaxel", Chemotherapy, &["taxotere"]),
    ("doxorubicin", Chemotherapy, &["adriamycin"]),
    ("cyclophosphamide", Chemotherapy, &["cytoxan"]),
    ("pembrolizumab", ImmuneCheckpointInhibitor, &["keytruda"]),
    ("atezolizumab", ImmuneCheckpointInhibitor, &["tecentriq"]),
    ("palbociclib", KinaseInhibitor, &["ibrance"]),
    ("ribociclib", KinaseInhibitor, &["kisqali"]),
    ("abemaciclib", KinaseInhibitor, &["verzenio"]),
    ("lapatinib", KinaseInhibitor, &["tykerb"]),
    ("neratinib", KinaseInhibitor, &["nerlynx"]),
];

const SIDE_EFFECTS: [(&str, &str, &[&str]); 31] = [
    ("hot_flashes", "hot flashes", &["hot flushes"]),
    ("night_sweats", "night sweats", &[]),
    ("nausea", "nausea", &["nauseous"]),
    ("vomiting", "vomiting", &["throwing up"]),
    ("fatigue", "fatigue", &["exhaustion", "tiredness"]),
    ("hair_loss", "hair loss", &[]),
    ("joint_pain", "joint pain", &["achy joints", "joint aches"]),
    ("body_ache", "body ache", &["body aches"]),
    ("bone_pain", "bone pain", &[]),
    ("muscle_pain", "muscle pain", &[]),
    ("headache", "headache", &["headaches", "migraine"]),
    ("insomnia", "insomnia", &["trouble sleeping"]),
    ("neuropathy", "neuropathy", &["numbness", "tingling"]),
    ("weight_gain", "weight gain", &[]),
    ("mood_swings", "mood swings", &[]),
    ("depression", "depression", &[]),
    ("anxiety", "anxiety", &[]),
    ("diarrhea", "diarrhea", &[]),
    ("constipation", "constipation", &[]),
    ("rash", "rash", &["skin rash"]),
    ("mouth_sores", "mouth sores", &["mouth ulcers"]),
    ("dizziness", "dizziness", &["dizzy"]),
    ("shortness_of_breath", "shortness of breath", &[]),
    ("fever", "fever", &[]),
    ("cough", "cough", &[]),
    ("loss_of_appetite", "loss of appetite", &[]),
    ("dry_skin", "dry skin", &[]),
    ("swelling", "swelling", &["lymphedema"]),
    ("blurred_vision", "blurred vision", &[]),
    ("memory_loss", "memory loss", &[]),
    ("hand_foot_syndrome", "hand foot syndrome", &[]),
];

/// Sixteen medications over the four functional classes and 31 side
/// effects, as version 1.
pub fn seed_lexicon() -> LexiconVersion {
    let meds = MEDICATIONS.iter().map(|(id, class, syn)| {
        LexiconEntry::medication(id, id, *class, Provenance::NciMedicationLibrary).with_synonyms(syn.iter().copied())
    });
    let ses = SIDE_EFFECTS.iter().map(|(id, canonical, syn)| {
        LexiconEntry::side_effect(id, canonical, Provenance::NciSideEffects).with_synonyms(syn.iter().copied())
    });
    LexiconVersion::seed(1, meds.chain(ses)).expect("seed lexicon is valid")
}

fn meds_of(class: FunctionalClass) -> Vec<&'static str> {
    MEDICATIONS.iter().filter(|m| m.1 == class).map(|m| m.0).collect()
}

fn side_effect_term(id: &str) -> &'static str {
    SIDE_EFFECTS.iter().find(|s| s.0 == id).map(|s| s.1).expect("known side effect")
}

fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 4, 8, 0, 0).unwrap()
}

/// Demo corpus with the truth the generator planted in it.
#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub posts: Vec<Post>,
    /// Labels for every post that passes the default keyword filter.
    pub labels: Vec<LabeledPost>,
    pub lexicon: LexiconVersion,
    /// Planted concepts per cohort user. Terms outside the lexicon (such
    /// as "brain fog") are kept as free text.
    pub truth: BTreeMap<String, BTreeSet<TruthItem>>,
}

impl DemoCorpus {
    /// Gold set over the first `n` cohort users in id order.
    pub fn gold(&self, n: usize) -> GoldSet {
        let profiles: Vec<String> = self.truth.keys().take(n).cloned().collect();
        let truth = profiles.iter().map(|u| (u.clone(), self.truth[u].clone())).collect();
        GoldSet {
            name: "demo".into(),
            profiles,
            truth,
        }
    }
}

const PATTERNS: [(&[FunctionalClass], u32); 6] = [
    (&[HormoneTherapy], 40),
    (&[Chemotherapy], 20),
    (&[HormoneTherapy, KinaseInhibitor], 15),
    (&[HormoneTherapy, Chemotherapy], 10),
    (&[Chemotherapy, ImmuneCheckpointInhibitor], 8),
    (&[KinaseInhibitor], 7),
];

const FILLER: [&str; 12] = [
    "Lovely weather for a walk today.",
    "Coffee with my sister this morning.",
    "Finished a great book last night.",
    "The garden is finally blooming.",
    "Watching the game with friends tonight.",
    "Made soup for the whole week.",
    "Our dog learned a new trick!",
    "Long drive to visit family this weekend.",
    "Trying a new recipe for dinner.",
    "Rainy day, staying in with a movie.",
    "Picked up some flowers at the market.",
    "Early morning yoga class was great.",
];

const AWARENESS: [&str; 5] = [
    "Pink ribbon run for breast cancer awareness this Sunday!",
    "New research on cancer screening shared today.",
    "Proud to support my friend at the #breastcancer fundraiser.",
    "Donate to the cancer center charity drive this month.",
    "Great talk about survivor stories at the library.",
];

/// Probability that a user with `classes` reports side effect `id`.
fn side_effect_rate(id: &str, classes: &[FunctionalClass]) -> f64 {
    let has = |c| classes.contains(&c);
    match id {
        "hot_flashes" => if has(HormoneTherapy) { 0.6 } else { 0.08 },
        "joint_pain" => if has(HormoneTherapy) { 0.45 } else { 0.1 },
        "hair_loss" => if has(Chemotherapy) { 0.7 } else { 0.08 },
        "neuropathy" => if has(Chemotherapy) { 0.5 } else { 0.05 },
        "rash" => if has(ImmuneCheckpointInhibitor) { 0.6 } else { 0.05 },
        "diarrhea" => if has(KinaseInhibitor) { 0.6 } else { 0.08 },
        "fatigue" => 0.5,
        "nausea" => if has(Chemotherapy) { 0.5 } else { 0.15 },
        _ => 0.05,
    }
}

/// Misspellings the matcher should still resolve at threshold 0.85.
fn misspell(med: &str) -> Option<&'static str> {
    match med {
        "tamoxifen" => Some("tamoxifin"),
        "letrozole" => Some("letrozol"),
        "anastrozole" => Some("anastrazole"),
        "capecitabine" => Some("capecitibine"),
        "palbociclib" => Some("palbocyclib"),
        _ => None,
    }
}

/// 500 posts from 75 users. Fifty-five users self-report treatment; the
/// rest post awareness messages and everyday chatter.
pub fn demo_corpus(seed: u64) -> DemoCorpus {
    const TOTAL: usize = 500;
    const USERS: usize = 75;
    const COHORT: usize = 55;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(TOTAL);
    let mut self_reports = BTreeSet::new();
    let mut truth = BTreeMap::new();
    let pattern_weights: u32 = PATTERNS.iter().map(|p| p.1).sum();

    for u in 0..USERS {
        let user_id = format!("user{u:03}");
        let n_posts = TOTAL / USERS + usize::from(u < TOTAL % USERS);
        // (sentence, is self-report)
        let mut sentences: Vec<(String, bool)> = Vec::new();
        if u < COHORT {
            let mut pick = rng.random_range(0..pattern_weights);
            let classes = PATTERNS
                .iter()
                .find(|(_, w)| {
                    if pick < *w {
                        true
                    } else {
                        pick -= w;
                        false
                    }
                })
                .map(|p| p.0)
                .unwrap();
            let mut items = BTreeSet::new();
            let mut meds = Vec::new();
            for &c in classes {
                let id = *meds_of(c).choose(&mut rng).unwrap();
                items.insert(TruthItem::new(Category::Medication, id, false));
                let entry = MEDICATIONS.iter().find(|m| m.0 == id).unwrap();
                let roll: f64 = rng.random();
                let surface = match misspell(id) {
                    Some(typo) if roll < 0.2 => typo,
                    _ if roll > 0.7 => entry.2[0],
                    _ => id,
                };
                meds.push(surface);
            }
            sentences.push((
                format!("Diagnosed with breast cancer this spring, starting {} next week.", meds[0]),
                true,
            ));
            for m in &meds[1..] {
                sentences.push((format!("My oncologist added {m} to the plan."), true));
            }
            let mut reported = Vec::new();
            for (id, _, syn) in SIDE_EFFECTS {
                if rng.random_bool(side_effect_rate(id, classes)) {
                    let surface = if !syn.is_empty() && rng.random_bool(0.3) {
                        syn[0]
                    } else {
                        side_effect_term(id)
                    };
                    items.insert(TruthItem::new(Category::SideEffect, id, false));
                    reported.push(id);
                    let template = [
                        "The {} has been rough this week.",
                        "Dealing with {} again today.",
                        "Anyone else get {} on {}?",
                    ]
                    .choose(&mut rng)
                    .unwrap();
                    let text = template.replacen("{}", surface, 1).replacen("{}", meds[0], 1);
                    sentences.push((text, rng.random_bool(0.3)));
                }
            }
            if rng.random_bool(0.35) {
                let absent: Vec<&str> = SIDE_EFFECTS
                    .iter()
                    .map(|s| s.0)
                    .filter(|id| !reported.contains(id))
                    .collect();
                let id = *absent.choose(&mut rng).unwrap();
                items.insert(TruthItem::new(Category::SideEffect, id, true));
                sentences.push((format!("Thankfully no {} so far.", side_effect_term(id)), false));
            }
            if rng.random_bool(0.15) {
                items.insert(TruthItem::new(Category::SideEffect, "brain fog", false));
                sentences.push(("The brain fog is real lately.".into(), false));
            }
            truth.insert(user_id.clone(), items);
        } else {
            for _ in 0..rng.random_range(1..=2) {
                sentences.push((AWARENESS.choose(&mut rng).unwrap().to_string(), false));
            }
        }
        if sentences.len() > 1 {
            sentences[1..].shuffle(&mut rng);
        }

        let mut bodies: Vec<(Vec<String>, bool)> = vec![(Vec::new(), false); n_posts];
        for (i, (s, sr)) in sentences.into_iter().enumerate() {
            let slot = &mut bodies[i % n_posts];
            slot.0.push(s);
            slot.1 |= sr;
        }
        let user_start = start_time() + Duration::days(rng.random_range(0..60));
        for (k, (parts, sr)) in bodies.into_iter().enumerate() {
            let mut text = if parts.is_empty() {
                FILLER.choose(&mut rng).unwrap().to_string()
            } else {
                parts.join(" ")
            };
            if sr && k > 0 && rng.random_bool(0.5) {
                text.push_str(" #breastcancer");
            }
            let id = format!("p{:04}", posts.len() + 1);
            if sr {
                self_reports.insert(id.clone());
            }
            posts.push(Post {
                id,
                user_id: user_id.clone(),
                timestamp: user_start + Duration::days(3 * k as i64) + Duration::minutes(rng.random_range(0..720)),
                text,
            });
        }
    }
    posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));

    let filtered = keyword_filter(&PostCollection::new(posts.clone()), &KeywordFilterConfig::default());
    let labels = filtered
        .posts()
        .iter()
        .map(|p| {
            let label = if self_reports.contains(&p.id) { Label::S } else { Label::Nr };
            let score = match label {
                Label::S => rng.random_range(0.7..1.0),
                Label::Nr => rng.random_range(0.0..0.3),
            };
            LabeledPost {
                post_id: p.id.clone(),
                label,
                score: Some((score * 1000.0f64).round() / 1000.0),
            }
        })
        .collect();
    DemoCorpus {
        posts,
        labels,
        lexicon: seed_lexicon(),
        truth,
    }
}

/// Two single-medication groups with one side effect planted at unequal
/// rates and the rest at a shared rate.
#[derive(Debug, Clone)]
pub struct InjectedCohort {
    pub profiles: Vec<UserProfile>,
    pub lexicon: LexiconVersion,
    pub injected: String,
    pub nulls: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct InjectionSpec {
    pub per_group: usize,
    pub high_rate: f64,
    pub low_rate: f64,
    pub null_effects: usize,
    pub null_rate: f64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        Self {
            per_group: 40,
            high_rate: 0.9,
            low_rate: 0.05,
            null_effects: 10,
            null_rate: 0.3,
        }
    }
}

/// Group A takes tamoxifen, group B capecitabine. Hot flashes are planted
/// at `high_rate` in A and `low_rate` in B.
pub fn injected_cohort(seed: u64, spec: InjectionSpec) -> InjectedCohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = "hot_flashes";
    let nulls: Vec<&str> = SIDE_EFFECTS
        .iter()
        .map(|s| s.0)
        .filter(|id| *id != injected)
        .take(spec.null_effects)
        .collect();
    let mut profiles = Vec::new();
    for (g, (med, rate)) in [("tamoxifen", spec.high_rate), ("capecitabine", spec.low_rate)]
        .into_iter()
        .enumerate()
    {
        for i in 0..spec.per_group {
            let user_id = format!("g{g}u{i:03}");
            let mut texts = vec![format!("Started {med} this month.")];
            if rng.random_bool(rate) {
                texts.push(format!("The {} are constant.", side_effect_term(injected)));
            }
            for id in &nulls {
                if rng.random_bool(spec.null_rate) {
                    texts.push(format!("Dealing with {} today.", side_effect_term(id)));
                }
            }
            let posts = texts
                .into_iter()
                .enumerate()
                .map(|(k, text)| Post {
                    id: format!("{user_id}p{k}"),
                    user_id: user_id.clone(),
                    timestamp: start_time() + Duration::hours(k as i64),
                    text,
                })
                .collect();
            profiles.extend(UserProfile::from_posts(posts));
        }
    }
    InjectedCohort {
        profiles,
        lexicon: seed_lexicon(),
        injected: injected.to_string(),
        nulls: nulls.into_iter().map(String::from).collect(),
    }
}
