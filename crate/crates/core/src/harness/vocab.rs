// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixed harness vocabulary and residual-stream layout.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// The caption marker; present in every caption query and no other.
pub const MARKER: usize = 0;
pub const DESCRIBE: usize = 1;
pub const IMAGE: usize = 2;
pub const SCENE: usize = 3;
pub const WHAT: usize = 4;
pub const THE: usize = 5;
pub const IS: usize = 6;
pub const THERE: usize = 7;
pub const QMARK: usize = 8;

/// Plain words after the marker; object tokens follow them.
pub const NUM_WORDS: usize = 8;
const WORDS: [&str; NUM_WORDS + 1] = [
    "<cap>", "describe", "image", "scene", "what", "the", "is", "there", "?",
];

/// Nouns that refer to image content; routing heads key on them.
pub(crate) const CONTENT_WORDS: [usize; 2] = [IMAGE, SCENE];

/// Object inventory and per-scene object counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSpec {
    pub num_objects: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self {
            num_objects: 6,
            min_objects: 2,
            max_objects: 5,
        }
    }
}

impl VocabSpec {
    /// # Errors
    ///
    /// [`crate::Error::Config`] unless `1 <= min <= max < num_objects`, so
    /// that every scene leaves an object to ask about for a "no" answer.
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(config("need 1 <= min_objects <= max_objects"));
        }
        if self.max_objects >= self.num_objects {
            return Err(config(format!(
                "{} object ids cannot leave an absent object in a scene of {}",
                self.num_objects, self.max_objects
            )));
        }
        Ok(())
    }

    /// Marker, words and object tokens.
    pub fn vocab_size(&self) -> usize {
        1 + NUM_WORDS + self.num_objects
    }

    pub fn object_token(&self, object: usize) -> usize {
        1 + NUM_WORDS + object
    }

    /// Object id of a token, if it is an object token.
    pub fn token_object(&self, token: usize) -> Option<usize> {
        (token > NUM_WORDS && token < self.vocab_size()).then(|| token - 1 - NUM_WORDS)
    }

    pub fn token_label(&self, token: usize) -> String {
        match self.token_object(token) {
            Some(o) => format!("obj{o}"),
            None => WORDS
                .get(token)
                .map_or_else(|| format!("#{token}"), |w| (*w).to_string()),
        }
    }

    /// Space-joined token labels.
    pub fn render(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.token_label(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The object-presence question for `object`.
    pub fn presence_question(&self, object: usize) -> Vec<usize> {
        vec![IS, THERE, self.object_token(object), QMARK]
    }
}

/// Built-in caption query candidates with their labels; the first is the
/// default caption.
pub fn default_caption_candidates() -> Vec<Vec<usize>> {
    vec![
        vec![DESCRIBE, IMAGE, MARKER],
        vec![WHAT, SCENE, MARKER],
        vec![DESCRIBE, THE, IMAGE, MARKER],
        vec![MARKER],
        vec![WHAT, IS, THE, SCENE, MARKER],
    ]
}

/// Named coordinates of the residual stream used by the planted circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub num_objects: usize,
    pub vis: usize,
    pub sal: usize,
    pub mark: usize,
    pub look: usize,
    pub ans: usize,
    pub txt: usize,
    pub cont: usize,
    pub word_start: usize,
    pub noise_start: usize,
    pub model_dim: usize,
}

impl Layout {
    pub fn new(num_objects: usize, model_dim: usize) -> Result<Self> {
        let base = 3 * num_objects;
        let word_start = base + 7;
        let noise_start = word_start + NUM_WORDS;
        if noise_start > model_dim {
            return Err(config(format!(
                "model_dim {model_dim} is too small; the harness layout needs {noise_start}"
            )));
        }
        Ok(Self {
            num_objects,
            vis: base,
            sal: base + 1,
            mark: base + 2,
            look: base + 3,
            ans: base + 4,
            txt: base + 5,
            cont: base + 6,
            word_start,
            noise_start,
            model_dim,
        })
    }

    /// Visual identity of object `o`.
    pub fn obj(&self, o: usize) -> usize {
        o
    }

    /// Identity of object `o` as named in a question.
    pub fn qobj(&self, o: usize) -> usize {
        self.num_objects + o
    }

    /// Question object routed onto the last token.
    pub fn rqobj(&self, o: usize) -> usize {
        2 * self.num_objects + o
    }

    pub fn words(&self) -> std::ops::Range<usize> {
        self.word_start..self.noise_start
    }

    pub fn noise(&self) -> std::ops::Range<usize> {
        self.noise_start..self.model_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_mapping() {
        let v = VocabSpec::default();
        assert_eq!(v.vocab_size(), 15);
        assert_eq!(v.token_object(v.object_token(4)), Some(4));
        assert_eq!(v.token_object(QMARK), None);
        assert_eq!(v.render(&[DESCRIBE, IMAGE, MARKER]), "describe image <cap>");
        assert_eq!(v.render(&v.presence_question(2)), "is there obj2 ?");
    }

    #[test]
    fn spec_validation() {
        assert!(VocabSpec::default().validate().is_ok());
        let v = VocabSpec {
            num_objects: 3,
            min_objects: 1,
            max_objects: 3,
        };
        assert!(v.validate().is_err());
        assert!(VocabSpec {
            min_objects: 0,
            ..VocabSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn layout_fits() {
        assert!(Layout::new(6, 64).is_ok());
        assert!(Layout::new(6, 32).is_err());
        let l = Layout::new(6, 64).unwrap();
        assert_eq!(l.rqobj(5), 17);
        assert_eq!(l.noise().len(), 64 - 33);
    }
}
