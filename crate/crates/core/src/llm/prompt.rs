use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::AspectInstance;
use crate::error::{Error, Result};
use crate::seed::{stream_rng, SAMPLING};
use crate::va::VaPair;

pub const SYSTEM_PROMPT: &str = "You are an expert in sentiment analysis. Your task is to predict Valence and Arousal scores for aspects in sentences.

Definitions:
- Valence: emotional positivity/negativity (1.0 = very negative, 5.0 = neutral, 9.0 = very positive)
- Arousal: emotional intensity/excitement (1.0 = very calm/sluggish, 5.0 = moderate, 9.0 = very excited)

Output format: valence#arousal (e.g., 7.50#6.80)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub aspect: String,
    pub va: VaPair,
}

impl Exemplar {
    pub fn new(text: &str, aspect: &str, valence: f64, arousal: f64) -> Self {
        Self {
            text: text.into(),
            aspect: aspect.into(),
            va: VaPair::new(valence, arousal).expect("exemplar labels are in range"),
        }
    }

    pub fn from_instance(inst: &AspectInstance) -> Result<Self> {
        Ok(Self {
            text: inst.text.clone(),
            aspect: inst.aspect.clone(),
            va: inst.require_gold()?,
        })
    }
}

/// The six fixed few-shot examples.
pub fn default_exemplars() -> Vec<Exemplar> {
    vec![
        Exemplar::new("the food was absolutely amazing!!", "food", 8.50, 8.25),
        Exemplar::new("but the staff was so horrible to us.", "staff", 1.33, 8.67),
        Exemplar::new(
            "food was just average... if they lowered the prices just a bit, it would be a bigger draw.",
            "food",
            5.00,
            5.00,
        ),
        Exemplar::new("i love this macbook.", "macbook", 7.10, 6.90),
        Exemplar::new("horrible product.", "product", 2.60, 5.70),
        Exemplar::new("it has and does everything it should.", "NULL", 5.67, 5.50),
    ]
}

/// Seeded uniform sample of `k` labelled instances without replacement.
pub fn sample_exemplars(pool: &[AspectInstance], k: usize, seed: u64) -> Result<Vec<Exemplar>> {
    if k > pool.len() {
        return Err(Error::Config(format!(
            "cannot sample {k} exemplars from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = stream_rng(seed, SAMPLING);
    sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| Exemplar::from_instance(&pool[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// System text, few-shot exemplars and one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle<'a> {
    pub system_text: &'a str,
    pub exemplars: &'a [Exemplar],
    pub text: &'a str,
    pub aspect: &'a str,
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn block(out: &mut String, text: &str, aspect: &str, answer: Option<&VaPair>) {
    out.push_str("Text: ");
    out.push_str(&quoted(text));
    out.push_str("\nAspect: ");
    out.push_str(&quoted(aspect));
    out.push_str("\nAnswer:");
    if let Some(va) = answer {
        out.push(' ');
        out.push_str(&va.to_va_string());
    }
}

impl PromptBundle<'_> {
    /// A system message, then one user message holding the exemplars and
    /// the unanswered query.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut user = String::new();
        if !self.exemplars.is_empty() {
            user.push_str("Examples:\n\n");
            for ex in self.exemplars {
                block(&mut user, &ex.text, &ex.aspect, Some(&ex.va));
                user.push_str("\n\n");
            }
            user.push_str("Now predict:\n\n");
        }
        block(&mut user, self.text, self.aspect, None);
        vec![
            ChatMessage {
                role: Role::System,
                content: self.system_text.to_string(),
            },
            ChatMessage {
                role: Role::User,
                content: user,
            },
        ]
    }
}

pub fn build_prompt(instance: &AspectInstance, exemplars: &[Exemplar], system_text: &str) -> Vec<ChatMessage> {
    PromptBundle {
        system_text,
        exemplars,
        text: &instance.text,
        aspect: &instance.aspect,
    }
    .messages()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::instance;
    use proptest::prelude::*;

    #[test]
    fn default_prompt_layout() {
        let q = instance("q", 0, "great battery", "battery", None);
        let msgs = build_prompt(&q, &default_exemplars(), SYSTEM_PROMPT);
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, Role::System);
        assert!(msgs[0].content.starts_with("You are an expert in sentiment analysis."));
        let answers: Vec<&str> = msgs[1]
            .content
            .lines()
            .filter_map(|l| l.strip_prefix("Answer: "))
            .collect();
        assert_eq!(answers.len(), 6);
        assert_eq!(answers[1], "1.33#8.67");
        assert!(msgs[1].content.contains("Aspect: \"NULL\""));
        assert!(msgs[1].content.ends_with("Text: \"great battery\"\nAspect: \"battery\"\nAnswer:"));
    }

    #[test]
    fn zero_shot_has_only_query() {
        let q = instance("q", 0, "great battery", "battery", None);
        let msgs = build_prompt(&q, &[], SYSTEM_PROMPT);
        assert_eq!(msgs[1].content, "Text: \"great battery\"\nAspect: \"battery\"\nAnswer:");
    }

    fn pool(n: usize) -> Vec<AspectInstance> {
        (0..n)
            .map(|i| instance(&format!("p{i}"), 0, &format!("text {i}"), "a", Some((5.0, 5.0))))
            .collect()
    }

    #[test]
    fn sampling_is_seeded() {
        let p = pool(100);
        let a = sample_exemplars(&p, 6, 1).unwrap();
        assert_eq!(a, sample_exemplars(&p, 6, 1).unwrap());
        assert_ne!(a, sample_exemplars(&p, 6, 2).unwrap());
        let all = sample_exemplars(&p[..5], 5, 3).unwrap();
        let mut texts: Vec<_> = all.iter().map(|e| e.text.clone()).collect();
        texts.sort();
        assert_eq!(texts, (0..5).map(|i| format!("text {i}")).collect::<Vec<_>>());
        assert!(sample_exemplars(&p[..5], 6, 3).is_err());
        let mut unlabeled = pool(3);
        unlabeled[1].gold = None;
        assert!(sample_exemplars(&unlabeled, 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn rendering_is_injective(a in ".{0,12}", b in ".{0,12}", x in ".{1,6}", y in ".{1,6}") {
            let ex = default_exemplars();
            let m1 = PromptBundle { system_text: SYSTEM_PROMPT, exemplars: &ex, text: &a, aspect: &x }.messages();
            let m2 = PromptBundle { system_text: SYSTEM_PROMPT, exemplars: &ex, text: &b, aspect: &y }.messages();
            prop_assert_eq!(m1 == m2, a == b && x == y);
        }
    }
}
