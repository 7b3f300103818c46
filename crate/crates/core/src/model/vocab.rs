use serde::{Deserialize, Serialize};

use super::ModelError;

pub const BLANK: usize = 0;

/// Character vocabulary: blank, `a`..`z`, space, apostrophe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut tokens = vec!["<blank>".to_string()];
        tokens.extend(('a'..='z').map(String::from));
        tokens.push(" ".into());
        tokens.push("'".into());
        Self { tokens }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        BLANK
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize + 1),
            ' ' => Some(27),
            '\'' => Some(28),
            _ => None,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(ModelError::OutOfVocab(c)))
            .collect()
    }

    /// Maps token ids to characters; the blank maps to nothing.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BLANK)
            .map(|&i| self.tokens[i].as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let v = Vocab::default();
        assert_eq!(v.len(), 29);
        assert_eq!(v.blank_index(), 0);
        let mut seen = std::collections::HashSet::new();
        assert!(v.tokens().iter().all(|t| seen.insert(t.clone())));
        assert_eq!(v.encode("ab z'").unwrap(), vec![1, 2, 27, 26, 28]);
        assert_eq!(v.decode(&[0, 8, 9, 0]), "hi");
        assert!(matches!(v.encode("A"), Err(ModelError::OutOfVocab('A'))));
    }
}
