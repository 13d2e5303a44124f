//! Seeded stand-in for a chat model, for offline demonstrations of the full
//! pipeline. Each reply is a pure function of the request tag (run seed, day,
//! nation, attempt), the request temperature and the prompt variant.
//!
//! Actions are drawn by category from a softmax over fixed propensities
//! divided by the temperature, so lower temperatures concentrate on the
//! status quo. The numbers are illustrative and make no claim about how a real
//! model behaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::llm::{ChatRequest, LlmError, RequestKind, RequestTag, Role, TransportFailure, TransportReply};
use crate::prompts::{CONTEXT_EXTENSION, REFLECTION_DEESCALATION_EXTENSION, REFLECTION_PLANNING_EXTENSION};
use crate::taxonomy::{ActionCategory, ActionTaxonomy};

use super::scripted::world_echo;

#[derive(Debug, Clone)]
pub struct SyntheticResponder {
    taxonomy: ActionTaxonomy,
    nations: Vec<String>,
    malformed_rate: f64,
}

fn category_index(c: ActionCategory) -> usize {
    ActionCategory::ALL.iter().position(|x| *x == c).expect("known category")
}

impl SyntheticResponder {
    pub fn new(taxonomy: ActionTaxonomy, nations: Vec<String>) -> Self {
        Self {
            taxonomy,
            nations,
            malformed_rate: 0.02,
        }
    }

    /// Probability (at temperature 1) of answering with unparseable text.
    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate;
        self
    }

    fn rng(tag: &RequestTag) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(tag.seed.to_le_bytes());
        h.update(tag.day.to_le_bytes());
        h.update(tag.attempt.to_le_bytes());
        h.update(tag.nation.as_deref().unwrap_or("").as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn logits(day: u32, request: &ChatRequest) -> [f64; 6] {
        let d = f64::from(day);
        // de-escalation, status quo, posturing, non-violent, violent, nuclear
        let mut l = [0.6, 1.2, 1.0 + 0.04 * d, 0.04 * d, -1.5 + 0.05 * d, -4.0];
        let system = request.messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let shifts: [f64; 6] = if system.contains(REFLECTION_DEESCALATION_EXTENSION) {
            [1.0, 0.3, -0.5, -0.6, -2.0, -3.0]
        } else if system.contains(REFLECTION_PLANNING_EXTENSION) {
            [0.5, 0.2, -0.3, -0.3, -0.8, -1.0]
        } else if user.ends_with(CONTEXT_EXTENSION) {
            [0.2, 0.0, -0.2, -0.1, -0.3, -0.5]
        } else {
            [0.0; 6]
        };
        for (x, s) in l.iter_mut().zip(shifts) {
            *x += s;
        }
        l
    }

    fn sample_category(rng: &mut ChaCha8Rng, logits: &[f64; 6], temperature: f64) -> ActionCategory {
        let t = temperature.max(0.05);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return ActionCategory::ALL[i];
            }
            u -= w;
        }
        ActionCategory::StatusQuo
    }

    fn action_document(&self, tag: &RequestTag, request: &ChatRequest) -> String {
        let mut rng = Self::rng(tag);
        let temperature = request.temperature;
        if rng.gen::<f64>() < self.malformed_rate * temperature {
            return "I need more information before I can decide.".to_string();
        }
        let nation = tag.nation.as_deref().unwrap_or("");
        let logits = Self::logits(tag.day, request);
        let count = 1 + usize::from(rng.gen::<f64>() < 0.6 * temperature)
            + usize::from(rng.gen::<f64>() < 0.3 * temperature);
        let others: Vec<&String> = self.nations.iter().filter(|n| n.as_str() != nation).collect();
        let mut actions = Vec::new();
        for _ in 0..count {
            let cat = Self::sample_category(&mut rng, &logits, temperature);
            let pool: Vec<_> = self
                .taxonomy
                .actions()
                .iter()
                .filter(|a| category_index(a.category) == category_index(cat))
                .filter(|a| !a.requires_target || !others.is_empty())
                .collect();
            if pool.is_empty() {
                continue;
            }
            let spec = pool[rng.gen_range(0..pool.len())];
            if spec.requires_target {
                let target = others[rng.gen_range(0..others.len())];
                actions.push(serde_json::json!({"action": spec.id, "target": target}));
            } else {
                actions.push(serde_json::json!({"action": spec.id}));
            }
        }
        if actions.is_empty() {
            actions.push(serde_json::json!({"action": self.taxonomy.fallback().id}));
        }
        let wants_thoughts = request
            .messages
            .first()
            .is_some_and(|m| m.content.contains("\"private_thoughts\":"));
        if wants_thoughts {
            serde_json::json!({
                "private_thoughts": format!("Day {}: weigh objectives against the risk of provoking others.", tag.day),
                "actions": actions,
            })
            .to_string()
        } else {
            serde_json::json!({ "actions": actions }).to_string()
        }
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let tag: RequestTag = request
            .request_tag
            .parse()
            .map_err(|e: LlmError| TransportFailure::Fatal(e.to_string()))?;
        Ok(TransportReply::text(match tag.kind {
            RequestKind::Action => self.action_document(&tag, request),
            RequestKind::World => world_echo(tag.day, request),
        }))
    }
}
