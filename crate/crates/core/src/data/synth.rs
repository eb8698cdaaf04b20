//! Synthetic multimodal EHR data with planted label signal.
//!
//! Background codes come from latent disease clusters. Three independent
//! channels can switch a label on:
//!
//! * structure: a fixed pair of codes co-occurring in the visit (either code
//!   alone is also injected as a decoy and does not switch the label);
//! * concept semantics: one of a set of rarely used "risk" codes whose concept
//!   names share a marker word (decoy rare codes use a neutral marker);
//! * note semantics: a trigger phrase in the note text (a decoy phrase is
//!   injected at the same rate).
//!
//! Labels are a deterministic function of the emitted visit content, up to
//! optional label noise.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, MedicalCode, TaskKind, VisitRecord};
use crate::error::{Error, Result};

/// Per-channel injection rates. For the multi-label task each injected event
/// is assigned to one label drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub motif_rate: f64,
    pub concept_rate: f64,
    pub note_rate: f64,
    pub label_noise: f64,
}

impl SignalSpec {
    pub fn structure_only() -> Self {
        SignalSpec { motif_rate: 0.3, concept_rate: 0.0, note_rate: 0.0, label_noise: 0.0 }
    }

    pub fn semantics_only() -> Self {
        SignalSpec { motif_rate: 0.0, concept_rate: 0.0, note_rate: 0.3, label_noise: 0.0 }
    }

    pub fn mixed() -> Self {
        SignalSpec { motif_rate: 0.15, concept_rate: 0.15, note_rate: 0.15, label_noise: 0.0 }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "structure" | "structure-only" => Ok(Self::structure_only()),
            "semantics" | "semantics-only" => Ok(Self::semantics_only()),
            "mixed" => Ok(Self::mixed()),
            other => Err(Error::Config(format!("unknown signal preset '{other}'"))),
        }
    }

    /// Expected prevalence of each label.
    pub fn expected_base_rate(&self, task: TaskKind) -> f64 {
        let k = task.n_labels() as f64;
        let clean = 1.0
            - (1.0 - self.motif_rate / k) * (1.0 - self.concept_rate / k) * (1.0 - self.note_rate / k);
        clean * (1.0 - self.label_noise) + (1.0 - clean) * self.label_noise
    }

    fn validate(&self) -> Result<()> {
        let rates = [self.motif_rate, self.concept_rate, self.note_rate, self.label_noise];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("signal rates must lie in [0, 1]: {self:?}")));
        }
        if self.label_noise >= 0.5 {
            return Err(Error::Config("label noise must be below 0.5".into()));
        }
        Ok(())
    }
}

/// Ground truth for one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLabel {
    pub motif: Option<(String, String)>,
    pub risk_codes: Vec<String>,
    pub trigger_phrase: Option<String>,
}

/// What the generator planted, indexed by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub labels: Vec<PlantedLabel>,
}

impl PlantedSignal {
    /// Codes that switch label `k` on inside `visit` (motif pair when both
    /// present, plus any risk code).
    pub fn determining_codes(&self, k: usize, visit: &VisitRecord) -> Vec<String> {
        let planted = &self.labels[k];
        let has = |c: &String| visit.codes.contains(c);
        let mut out = Vec::new();
        if let Some((a, b)) = &planted.motif {
            if has(a) && has(b) {
                out.push(a.clone());
                out.push(b.clone());
            }
        }
        out.extend(planted.risk_codes.iter().filter(|c| has(c)).cloned());
        out
    }
}

const ADJECTIVES: &[&str] = &[
    "acute", "chronic", "primary", "secondary", "mild", "severe", "recurrent", "benign", "mixed",
    "unspecified", "persistent", "localized", "systemic", "early", "late",
];
const NOUNS: &[&str] = &[
    "anemia", "gastritis", "neuropathy", "dermatitis", "arthritis", "sinusitis", "migraine",
    "hyperlipidemia", "obesity", "insomnia", "gout", "asthma", "bronchitis", "cystitis", "colitis",
    "hypothyroidism", "osteopenia", "tendinitis", "vertigo", "reflux",
];
const MARKERS: &[&str] = &[
    "cardiac", "renal", "hepatic", "pulmonary", "cerebral", "septic", "pancreatic", "splenic",
    "vascular", "thyroid", "adrenal", "ocular", "biliary", "esophageal", "gastric", "colonic",
    "prostatic", "ovarian", "uterine", "spinal", "cranial", "lymphatic", "pleural", "pericardial",
    "aortic",
];
const DECOY_MARKER: &str = "dermal";
const FILLER: &[&str] = &[
    "patient", "reports", "denies", "noted", "stable", "overnight", "tolerated", "diet", "ambulating",
    "pain", "controlled", "medications", "reviewed", "family", "history", "exam", "unremarkable",
    "labs", "within", "normal", "limits", "follow", "up", "clinic", "weeks", "afebrile", "vitals",
    "discussed", "plan", "care", "team", "agreed", "discharged", "home", "instructions", "given",
    "chest", "xray", "clear", "abdomen", "soft", "nontender", "mild", "edema", "improved", "daily",
];
const SERVICES: &[&str] = &["MEDICINE", "SURGERY", "NEUROLOGY", "ORTHOPAEDICS", "OBSTETRICS"];

fn trigger_phrase(task: TaskKind, k: usize) -> String {
    match task {
        TaskKind::Binary => "rapid atrial fibrillation".into(),
        TaskKind::Multilabel25 => format!("new {} decompensation", MARKERS[k]),
    }
}

fn decoy_phrase(task: TaskKind, k: usize) -> String {
    match task {
        TaskKind::Binary => "stable sinus rhythm".into(),
        TaskKind::Multilabel25 => format!("prior {} evaluation unremarkable", MARKERS[k]),
    }
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Generates `n_visits` visits over `n_codes` codes.
pub fn generate_synthetic_dataset(
    n_visits: usize,
    n_codes: usize,
    task: TaskKind,
    spec: &SignalSpec,
    seed: u64,
) -> Result<(Dataset, PlantedSignal)> {
    if n_visits < 20 {
        return Err(Error::Config(format!("n_visits must be >= 20, got {n_visits}")));
    }
    if n_codes < 10 {
        return Err(Error::Config(format!("n_codes must be >= 10, got {n_codes}")));
    }
    spec.validate()?;
    let n_labels = task.n_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_motif = if spec.motif_rate > 0.0 { 2 * n_labels } else { 0 };
    let n_risk = if spec.concept_rate > 0.0 {
        (n_codes / 4).max(n_labels)
    } else {
        0
    };
    let n_background = n_codes.saturating_sub(n_motif + 2 * n_risk);
    if n_background < 6 {
        return Err(Error::Config(format!(
            "n_codes = {n_codes} is too small for {n_labels} label(s) under {spec:?}"
        )));
    }

    let code_id = |i: usize| format!("c{i:04}");
    let mut codes = Vec::with_capacity(n_codes);
    let push_code = |codes: &mut Vec<MedicalCode>, name: String| {
        let id = code_id(codes.len());
        codes.push(MedicalCode { code_id: id.clone(), system: "SYN".into(), concept_name: name });
        id
    };
    let plain_name = |rng: &mut ChaCha8Rng, i: usize| {
        format!("{} {} {i}", ADJECTIVES.choose(rng).unwrap(), NOUNS.choose(rng).unwrap())
    };

    let background: Vec<String> = (0..n_background)
        .map(|i| {
            let name = plain_name(&mut rng, i);
            push_code(&mut codes, name)
        })
        .collect();
    let mut labels: Vec<PlantedLabel> = (0..n_labels)
        .map(|k| PlantedLabel {
            motif: None,
            risk_codes: Vec::new(),
            trigger_phrase: (spec.note_rate > 0.0).then(|| trigger_phrase(task, k)),
        })
        .collect();
    for label in labels.iter_mut().take(if n_motif > 0 { n_labels } else { 0 }) {
        let a = {
            let name = plain_name(&mut rng, codes.len());
            push_code(&mut codes, name)
        };
        let b = {
            let name = plain_name(&mut rng, codes.len());
            push_code(&mut codes, name)
        };
        label.motif = Some((a, b));
    }
    let mut decoys = Vec::with_capacity(n_risk);
    for i in 0..n_risk {
        let k = i % n_labels;
        let noun = NOUNS.choose(&mut rng).unwrap();
        let id = push_code(&mut codes, format!("{} {noun} {i}", MARKERS[k]));
        labels[k].risk_codes.push(id);
        let noun = NOUNS.choose(&mut rng).unwrap();
        decoys.push(push_code(&mut codes, format!("{DECOY_MARKER} {noun} {i}")));
    }
    let n_clusters = (n_background / 12).clamp(2, 20);
    let mut shuffled = background.clone();
    shuffled.shuffle(&mut rng);
    let clusters: Vec<Vec<String>> = (0..n_clusters)
        .map(|c| shuffled.iter().skip(c).step_by(n_clusters).cloned().collect())
        .collect();

    let mut visits = Vec::with_capacity(n_visits);
    for vi in 0..n_visits {
        let cluster = rng.random_range(0..n_clusters);
        let pool = &clusters[cluster];
        let size = rng.random_range(3..=6).min(pool.len());
        let mut visit_codes: Vec<String> = pool.choose_multiple(&mut rng, size).cloned().collect();
        if rng.random_bool(0.15) {
            let other = &clusters[(cluster + 1 + rng.random_range(0..n_clusters - 1)) % n_clusters];
            visit_codes.push(other.choose(&mut rng).unwrap().clone());
        }

        if spec.motif_rate > 0.0 {
            let u: f64 = rng.random();
            let k = rng.random_range(0..n_labels);
            let (a, b) = labels[k].motif.clone().unwrap();
            if u < spec.motif_rate {
                visit_codes.push(a);
                visit_codes.push(b);
            } else if u < 1.5 * spec.motif_rate {
                visit_codes.push(if rng.random_bool(0.5) { a } else { b });
            }
        }
        if spec.concept_rate > 0.0 {
            let u: f64 = rng.random();
            if u < spec.concept_rate {
                let k = rng.random_range(0..n_labels);
                visit_codes.push(labels[k].risk_codes.choose(&mut rng).unwrap().clone());
            } else if u < 2.0 * spec.concept_rate && !decoys.is_empty() {
                visit_codes.push(decoys.choose(&mut rng).unwrap().clone());
            }
        }

        let n_course = rng.random_range(6..=10);
        let mut course = filler(&mut rng, n_course);
        if spec.note_rate > 0.0 {
            let u: f64 = rng.random();
            let k = rng.random_range(0..n_labels);
            if u < spec.note_rate {
                course = format!("{course}. {}", trigger_phrase(task, k));
            } else if u < 2.0 * spec.note_rate {
                course = format!("{course}. {}", decoy_phrase(task, k));
            }
        }
        let n_history = rng.random_range(8..=12);
        let note = format!(
            "Admission Date: 2101-{:02}-{:02}\nDischarge Date: 2101-{:02}-{:02}\nService: {}\n\
             History of Present Illness: {}.\nHospital Course: {}.\n",
            rng.random_range(1..=12),
            rng.random_range(1..=28),
            rng.random_range(1..=12),
            rng.random_range(1..=28),
            SERVICES.choose(&mut rng).unwrap(),
            filler(&mut rng, n_history),
            course,
        );

        visit_codes.shuffle(&mut rng);
        let mut visit = VisitRecord {
            visit_id: format!("v{vi:05}"),
            codes: visit_codes,
            note_text: note,
            label: vec![false; n_labels],
        };
        for k in 0..n_labels {
            let planted = &labels[k];
            let motif = planted
                .motif
                .as_ref()
                .is_some_and(|(a, b)| visit.codes.contains(a) && visit.codes.contains(b));
            let risk = planted.risk_codes.iter().any(|c| visit.codes.contains(c));
            let trigger = planted
                .trigger_phrase
                .as_ref()
                .is_some_and(|t| visit.note_text.contains(t.as_str()));
            let clean = motif || risk || trigger;
            let flip = spec.label_noise > 0.0 && rng.random_bool(spec.label_noise);
            visit.label[k] = clean != flip;
        }
        visits.push(visit);
    }

    let ds = Dataset::new(codes, visits, task)?;
    Ok((ds, PlantedSignal { labels }))
}
