//! The fixed four-slot generation prompt.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::taxonomy::{Level, TaxonomyNode};
use crate::error::{Error, Result};
use crate::phrases::{fill_subject, PhraseBank};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub transition: String,
    pub subject: String,
    pub start_state: String,
    pub trigger_event: String,
    pub transition_description: String,
    pub final_state: String,
    pub static_camera: bool,
}

impl PromptRecord {
    /// The slots in template order, followed by the camera constraint.
    pub fn text(&self) -> String {
        let mut s = format!(
            "{}. {}. {}. {}.",
            self.start_state, self.trigger_event, self.transition_description, self.final_state
        );
        if self.static_camera {
            s.push_str(" The camera is static.");
        }
        s
    }
}

pub fn instantiate_prompt(node: &TaxonomyNode, seed_value: u64) -> Result<PromptRecord> {
    if node.level != Level::Transition {
        return Err(Error::Taxonomy(format!(
            "`{}` is not a transition node",
            node.name
        )));
    }
    if node.object_pool.is_empty() {
        return Err(Error::Taxonomy(format!(
            "transition `{}` has an empty object pool",
            node.name
        )));
    }
    let phrases = PhraseBank::shipped().transition(&node.name)?;
    let mut rng = seed::rng(seed::derive_str(seed_value, "subject", 0));
    let subject = node.object_pool[rng.random_range(0..node.object_pool.len())].clone();
    Ok(PromptRecord {
        transition: node.name.clone(),
        start_state: fill_subject(&phrases.start_state, &subject),
        trigger_event: fill_subject(&phrases.trigger_event, &subject),
        transition_description: fill_subject(&phrases.transition_description, &subject),
        final_state: fill_subject(&phrases.final_state, &subject),
        subject,
        static_camera: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::taxonomy::Taxonomy;

    #[test]
    fn deterministic_and_ordered() {
        let node = Taxonomy::shipped().transition("melting").unwrap();
        let a = instantiate_prompt(&node, 0).unwrap();
        assert_eq!(a, instantiate_prompt(&node, 0).unwrap());
        assert!(a.static_camera);
        let text = a.text();
        let pos: Vec<usize> = [
            &a.start_state,
            &a.trigger_event,
            &a.transition_description,
            &a.final_state,
        ]
        .iter()
        .map(|s| text.find(s.as_str()).unwrap())
        .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_subject_pool_is_forced() {
        let mut node = Taxonomy::shipped().transition("melting").unwrap();
        node.object_pool = vec!["wax".into()];
        for s in 0..10 {
            assert_eq!(instantiate_prompt(&node, s).unwrap().subject, "wax");
        }
        node.object_pool.clear();
        assert!(matches!(
            instantiate_prompt(&node, 0),
            Err(Error::Taxonomy(_))
        ));
    }

    #[test]
    fn every_transition_instantiates() {
        for node in Taxonomy::shipped().transitions() {
            let p = instantiate_prompt(&node, 7).unwrap();
            assert!(!p.text().contains("{subject}"));
        }
    }
}
